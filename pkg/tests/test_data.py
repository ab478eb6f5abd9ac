import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import naive_dft
from tslanet import data
from tslanet.data import ParseError, SeriesDataset


def write(tmp_path, text, name="f.txt"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLabeledTable:
    def test_basic(self, tmp_path):
        ds = data.load_labeled_table(write(tmp_path, "0,1.0,2.0\n1,3.0,4.0\n"))
        assert ds.series.shape == (2, 1, 2)
        np.testing.assert_array_equal(ds.labels, [0, 1])
        np.testing.assert_array_equal(ds.series[:, 0], [[1, 2], [3, 4]])

    def test_tab_and_remap(self, tmp_path):
        ds = data.load_labeled_table(write(tmp_path, "1\t0.5\n-1\t0.25\n1\t2\n"))
        np.testing.assert_array_equal(ds.labels, [1, 0, 1])

    def test_ragged(self, tmp_path):
        with pytest.raises(ParseError, match="line 2"):
            data.load_labeled_table(write(tmp_path, "0,1,2,3\n1,1,2\n"))

    @pytest.mark.parametrize("text,match", [
        ("", "empty"),
        ("0,1,x\n", "line 1"),
        ("0,1,nan\n", "non-finite"),
        ("0.5,1,2\n", "integer"),
    ])
    def test_errors(self, tmp_path, text, match):
        with pytest.raises(ParseError, match=match):
            data.load_labeled_table(write(tmp_path, text))

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 9)),
                  elements=st.floats(-1e300, 1e300, allow_nan=False)),
           st.data())
    def test_round_trip_bit_exact(self, tmp_path_factory, values, draw):
        labels = np.array(draw.draw(st.lists(st.integers(0, 3), min_size=len(values),
                                             max_size=len(values))))
        # Remapping is order-preserving, so use labels already in 0..K-1 form.
        labels = np.searchsorted(np.unique(labels), labels)
        ds = SeriesDataset(values[:, None, :], labels=labels)
        path = tmp_path_factory.mktemp("rt") / "t.csv"
        data.write_labeled_table(path, ds)
        back = data.load_labeled_table(path)
        assert back.series.tobytes() == ds.series.tobytes()
        np.testing.assert_array_equal(back.labels, labels)


class TestMultivariate:
    def test_shape(self, tmp_path, rng):
        x = rng.standard_normal((3, 100))
        path = tmp_path / "m.csv"
        data.write_multivariate_csv(path, x)
        ds = data.load_multivariate_csv(path)
        assert ds.series.shape == (1, 3, 100)
        assert ds.series[0].tobytes() == x.tobytes()

    def test_header_and_timestamp(self, tmp_path):
        text = "date,a,b\n2020-01-01,1,2\n2020-01-02,3,4\n"
        ds = data.load_multivariate_csv(write(tmp_path, text), has_header=True,
                                        timestamp_col="date")
        assert ds.n_channels == 2
        np.testing.assert_array_equal(ds.series[0], [[1, 3], [2, 4]])

    def test_timestamp_by_index(self, tmp_path):
        ds = data.load_multivariate_csv(write(tmp_path, "t0,1\nt1,2\n"), timestamp_col=0)
        np.testing.assert_array_equal(ds.series[0], [[1, 2]])

    def test_empty_body(self, tmp_path):
        with pytest.raises(ParseError):
            data.load_multivariate_csv(write(tmp_path, "a,b\n"), has_header=True)

    def test_bad_cell(self, tmp_path):
        with pytest.raises(ParseError, match="line 2, column 2"):
            data.load_multivariate_csv(write(tmp_path, "1,2\n3,?\n"))

    def test_labels_column(self, tmp_path):
        np.testing.assert_array_equal(data.load_labels_column(write(tmp_path, "0\n1\n0\n")),
                                      [0, 1, 0])
        with pytest.raises(ParseError):
            data.load_labels_column(write(tmp_path, "0\n2\n"))


class TestWindowing:
    @pytest.mark.parametrize("T,L,H,s,count", [(10, 4, 2, 1, 5), (10, 4, 2, 10, 1),
                                                (10, 6, 4, 1, 1), (100, 20, 5, 3, 26)])
    def test_count(self, T, L, H, s, count):
        ds = data.window_forecast(np.arange(T, dtype=float), L, H, s)
        assert len(ds) == count == (T - L - H) // s + 1
        np.testing.assert_array_equal(ds.series[0, 0], np.arange(L))
        np.testing.assert_array_equal(ds.targets[0, 0], np.arange(L, L + H))

    def test_too_long(self):
        with pytest.raises(ValueError):
            data.window_forecast(np.zeros(5), 4, 2)

    def test_sliding_windows_cover_tail(self):
        windows, starts = data.sliding_windows(np.arange(10.0), 4, 4)
        np.testing.assert_array_equal(starts, [0, 4, 6])
        np.testing.assert_array_equal(windows[-1, 0], [6, 7, 8, 9])


class TestSplit:
    def test_stratified_sizes(self):
        ds = SeriesDataset(np.zeros((100, 1, 4)), labels=np.arange(100) % 2)
        parts = data.split(ds, (0.6, 0.2, 0.2), seed=0)
        assert [len(p) for p in parts] == [60, 20, 20]
        for p in parts:
            assert abs(p.labels.mean() - 0.5) <= 0.05
        ids = np.concatenate([p.series[:, 0, 0] for p in parts])
        assert len(ids) == 100

    def test_stratified_is_a_partition(self):
        x = np.arange(30, dtype=float).reshape(30, 1, 1)
        parts = data.split(SeriesDataset(x, labels=np.arange(30) % 3), seed=4)
        ids = np.sort(np.concatenate([p.series[:, 0, 0] for p in parts]))
        np.testing.assert_array_equal(ids, np.arange(30))

    def test_chronological_boundaries(self):
        ds = SeriesDataset(np.arange(100, dtype=float)[None, None, :])
        train, val, test = data.split(ds, (0.7, 0.1, 0.2))
        assert (train.length, val.length, test.length) == (70, 10, 20)
        assert train.series[0, 0, -1] == 69 and val.series[0, 0, 0] == 70
        assert test.series[0, 0, 0] == 80

    @settings(max_examples=50)
    @given(st.integers(3, 500), st.floats(0.1, 0.8))
    def test_chronological_partition(self, T, r):
        ds = SeriesDataset(np.arange(T, dtype=float)[None, None, :])
        rest = 1.0 - r
        try:
            parts = data.split(ds, (r, rest / 2, rest / 2))
        except ValueError:
            return
        joined = np.concatenate([p.series[0, 0] for p in parts])
        np.testing.assert_array_equal(joined, np.arange(T))

    def test_singleton_class(self):
        ds = SeriesDataset(np.zeros((5, 1, 2)), labels=[0, 0, 0, 0, 1])
        with pytest.raises(ValueError, match="single example"):
            data.split(ds)

    def test_empty_split(self):
        with pytest.raises(ValueError, match="no examples"):
            data.split(SeriesDataset(np.zeros((2, 1, 3))), (0.6, 0.2, 0.2))

    def test_bad_ratios(self):
        with pytest.raises(ValueError):
            data.split(SeriesDataset(np.zeros((10, 1, 3))), (0.5, 0.2, 0.2))

    def test_deterministic(self):
        ds = SeriesDataset(np.arange(40.0).reshape(40, 1, 1), labels=np.arange(40) % 4)
        a = data.split(ds, seed=7)
        b = data.split(ds, seed=7)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.series, y.series)


class TestNormalize:
    def test_example(self):
        train = SeriesDataset(np.array([[[3.0, 7.0]]]))
        test = SeriesDataset(np.array([[[7.0]]]))
        _, out, stats = data.normalize(train, test)
        assert stats.mean[0] == 5 and stats.std[0] == 2
        assert out.series[0, 0, 0] == 1.0

    def test_constant_channel(self):
        train = SeriesDataset(np.full((2, 1, 5), 4.0))
        (out, stats) = data.normalize(train)
        assert np.all(out.series == 0) and stats.warnings

    def test_round_trip(self, rng):
        train = SeriesDataset(rng.standard_normal((4, 3, 20)) * 7 + 2)
        out, stats = data.normalize(train)
        assert np.max(np.abs(data.invert_normalizer(out.series, stats) - train.series)) <= 1e-9

    def test_no_leakage(self, rng):
        train = SeriesDataset(rng.standard_normal((5, 2, 10)))
        val = SeriesDataset(rng.standard_normal((3, 2, 10)))
        *_, stats_a = data.normalize(train, val)
        val.series[:] = 1e6
        *_, stats_b = data.normalize(train, val)
        assert stats_a.mean.tobytes() == stats_b.mean.tobytes()
        assert stats_a.std.tobytes() == stats_b.std.tobytes()

    def test_targets_use_train_stats(self):
        ds = data.window_forecast(np.arange(20.0), 4, 2)
        out, stats = data.normalize(ds)
        expected = (ds.targets - stats.mean[0]) / stats.std[0]
        np.testing.assert_allclose(out.targets, expected)


class TestGenerators:
    def test_balanced(self):
        ds = data.two_tone_classification(4, 32, 2, 5, 0.1, seed=0)
        assert np.bincount(ds.labels).tolist() == [2, 2]

    def test_deterministic(self):
        a = data.two_tone_classification(6, 16, 1, 3, 0.2, seed=9)
        b = data.two_tone_classification(6, 16, 1, 3, 0.2, seed=9)
        assert a.series.tobytes() == b.series.tobytes()

    def test_clean_power_in_one_bin(self):
        ds = data.two_tone_classification(6, 64, 2, 5, 0.0, seed=1)
        for x, lab in zip(ds.series[:, 0], ds.labels):
            power = np.abs(np.array(naive_dft(x)[: 33])) ** 2
            f = 2 if lab == 0 else 5
            assert power[f] / power.sum() > 0.99

    def test_invalid(self):
        with pytest.raises(ValueError):
            data.two_tone_classification(4, 32, 3, 3, 0.1)

    def test_spiked_labels(self):
        ds = data.spiked_anomaly(500, 7, 3.0, seed=2)
        assert ds.anomaly_labels.sum() == 7
        assert ds.series.shape == (1, 1, 500)
        clean = data.spiked_anomaly(500, 0, 3.0, seed=2)
        assert clean.anomaly_labels.sum() == 0

    def test_sinusoid(self):
        ds = data.sinusoid_forecast(100, 25, 0.0)
        np.testing.assert_allclose(ds.series[0, 0, :25], ds.series[0, 0, 25:50], atol=1e-12)
