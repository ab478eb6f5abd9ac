import dataclasses
from pathlib import Path

import numpy as np
import pytest

from tslanet import cli
from tslanet import training as tr
from tslanet.cli import ConfigError, RunConfig
from tslanet.model import ModelConfig, TSLANet, save_checkpoint

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

FAST = ["--model.seq_len", "32", "--model.patch_size", "8", "--model.embed_dim", "8",
        "--model.n_layers", "1", "--synthetic.n_train", "40", "--synthetic.n_test", "20",
        "--train.epochs", "3", "--train.pretrain_epochs", "1"]


class TestGoldenDefaults:
    def test_classification(self):
        t = RunConfig.defaults("classification").train
        assert (t.lr, t.weight_decay, t.pretrain_epochs, t.epochs) == (1e-3, 1e-4, 50, 100)

    @pytest.mark.parametrize("task", ["forecasting", "anomaly"])
    def test_forecasting_and_anomaly(self, task):
        t = RunConfig.defaults(task).train
        assert (t.lr, t.weight_decay, t.pretrain_epochs, t.epochs) == (1e-4, 1e-6, 10, 20)

    def test_stride_is_half_patch(self):
        cfg = RunConfig.defaults("classification")
        assert cfg.model_config(n_classes=2).stride == cfg.model.patch_size // 2

    def test_task_defaults_follow_config_task(self, tmp_path):
        path = tmp_path / "c.conf"
        path.write_text("[run]\ntask = anomaly\n")
        assert cli.load_run_config(str(path)).train.lr == 1e-4


class TestConfigParsing:
    def test_sections_and_dotted_keys(self):
        entries = cli.parse_config_text("[model]\npatch_size = 8  # comment\ntrain.lr = 0.5\n")
        assert entries == [("model.patch_size", "8", 2), ("train.lr", "0.5", 3)]

    def test_types(self, tmp_path):
        path = tmp_path / "c.conf"
        path.write_text("[model]\nstride = none\nrevin = false\n[sweep]\nsigmas = 0,0.5\n")
        cfg = cli.load_run_config(str(path), [("train.grad_clip", "1.5")])
        assert cfg.model.stride is None and cfg.model.revin is False
        assert cfg.sweep.sigmas == (0.0, 0.5) and cfg.train.grad_clip == 1.5

    def test_override_beats_file(self, tmp_path):
        path = tmp_path / "c.conf"
        path.write_text("[model]\npatch_size = 8\n")
        cfg = cli.load_run_config(str(path), [("model.patch_size", "4")])
        assert cfg.model.patch_size == 4

    def test_error_names_line_and_field(self, tmp_path):
        path = tmp_path / "c.conf"
        path.write_text("[model]\n\npatch_size = eight\n")
        with pytest.raises(ConfigError, match=r"c.conf:3.*model.patch_size"):
            cli.load_run_config(str(path))

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "c.conf"
        path.write_text("model.patchsize = 8\n")
        with pytest.raises(ConfigError, match="unknown config key"):
            cli.load_run_config(str(path))

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match=":1:"):
            cli.parse_config_text("patch_size 8")

    def test_snapshot_round_trip(self, tmp_path):
        cfg = cli.load_run_config(str(CONFIGS / "sinusoid.conf"))
        path = tmp_path / "snap.conf"
        path.write_text(cfg.to_text())
        assert cli.load_run_config(str(path)) == cfg

    def test_seed_range(self):
        cfg = RunConfig.defaults("classification")
        cfg.synthetic.kind = "two_tone"
        cfg.run.seed = 2**64
        with pytest.raises(ConfigError, match="64-bit"):
            cfg.validate()

    def test_missing_path(self):
        cfg = RunConfig.defaults("classification")
        cfg.data.train = "/nonexistent/train.csv"
        with pytest.raises(ConfigError, match="data.train"):
            cfg.validate()


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_selftest_passes(capsys):
    assert run("selftest") == 0
    assert "FAIL" not in capsys.readouterr().out


def test_selftest_detects_corrupt_fft(capsys):
    assert run("selftest", "--corrupt-fft") != 0
    captured = capsys.readouterr()
    assert "convolution theorem" in captured.err


def test_train_writes_run_directory(tmp_path):
    out = tmp_path / "run"
    assert run("train", CONFIGS / "two_tone.conf", "--run.output_dir", out, *FAST) == 0
    assert {p.name for p in out.iterdir()} == {"config.txt", "epochs.csv", "report.txt",
                                              "model.npz"}
    assert "test_accuracy=" in (out / "report.txt").read_text()
    # A second run into the same directory is refused without --force.
    assert run("train", CONFIGS / "two_tone.conf", "--run.output_dir", out, *FAST) == 1
    assert run("train", CONFIGS / "two_tone.conf", "--run.output_dir", out, *FAST,
               "--force") == 0


def test_reports_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run("train", CONFIGS / "two_tone.conf", "--run.output_dir", out, *FAST) == 0
    assert (a / "report.txt").read_bytes() == (b / "report.txt").read_bytes()


def test_eval_and_patch_size_mismatch(tmp_path, capsys):
    out = tmp_path / "run"
    assert run("train", CONFIGS / "two_tone.conf", "--run.output_dir", out, *FAST) == 0
    ckpt = out / "model.npz"
    assert run("eval", CONFIGS / "two_tone.conf", ckpt, "--run.output_dir", out, *FAST) == 0
    assert "test_accuracy" in (out / "eval_report.txt").read_text()
    capsys.readouterr()
    code = run("eval", CONFIGS / "two_tone.conf", ckpt, "--run.output_dir", tmp_path / "e2",
               *FAST, "--model.patch_size", "4")
    assert code == 1
    assert "patch_size" in capsys.readouterr().err


def test_forecast_constant_series(tmp_path):
    cfg = cli.load_run_config(str(CONFIGS / "sinusoid.conf"),
                              [("model.seq_len", "32"), ("model.patch_size", "8")])
    mcfg = cfg.model_config(channels=1)
    model = TSLANet(mcfg, seed=0)
    model.params["head.weight"].data[:] = 0
    ckpt = tmp_path / "m.npz"
    save_checkpoint(ckpt, model, extra={"norm_mean": np.array([0.3]),
                                        "norm_std": np.array([0.8])})
    series = tmp_path / "in.csv"
    series.write_text("".join("2.5\n" for _ in range(40)))
    out = tmp_path / "pred.csv"
    assert run("forecast", CONFIGS / "sinusoid.conf", ckpt, series, "--out", out,
               "--model.seq_len", "32", "--model.patch_size", "8") == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "c0" and len(lines) == 1 + mcfg.horizon
    np.testing.assert_allclose([float(v) for v in lines[1:]], 2.5, atol=1e-9)


def test_detect_writes_scores(tmp_path):
    out = tmp_path / "run"
    fast = ["--synthetic.length", "400", "--synthetic.n_spikes", "3", "--train.epochs", "2",
            "--train.pretrain_epochs", "1"]
    assert run("train", CONFIGS / "spiked.conf", "--run.output_dir", out, *fast) == 0
    report = (out / "report.txt").read_text()
    assert "test_pa_f1=" in report and "test_f1=" in report
    from tslanet.data import spiked_anomaly, write_multivariate_csv

    test = spiked_anomaly(400, 3, 3.5, seed=7)
    write_multivariate_csv(tmp_path / "test.csv", test.series[0])
    (tmp_path / "labels.csv").write_text("".join(f"{v}\n" for v in test.anomaly_labels[0]))
    det = tmp_path / "det"
    assert run("detect", CONFIGS / "spiked.conf", out / "model.npz", tmp_path / "test.csv",
               tmp_path / "labels.csv", "--run.output_dir", det, *fast) == 0
    rows = (det / "scores.csv").read_text().splitlines()
    assert rows[0] == "t,score,label,flagged" and len(rows) == 401
    metrics = (det / "detect_report.txt").read_text()
    assert "test_pa_f1" in metrics


def test_labeled_file_pipeline(tmp_path):
    from tslanet.data import two_tone_classification, write_labeled_table

    write_labeled_table(tmp_path / "train.csv", two_tone_classification(30, 32, 2, 5, 0.1, 0))
    write_labeled_table(tmp_path / "test.csv", two_tone_classification(10, 32, 2, 5, 0.1, 1))
    cfg = tmp_path / "c.conf"
    cfg.write_text(f"[run]\ntask = classification\noutput_dir = {tmp_path / 'run'}\n"
                   f"[data]\ntrain = {tmp_path / 'train.csv'}\ntest = {tmp_path / 'test.csv'}\n"
                   "[model]\nseq_len = 32\npatch_size = 8\nembed_dim = 8\nn_layers = 1\n"
                   "[train]\nepochs = 2\n[ablation]\npretrain = false\n")
    assert run("train", cfg) == 0
    assert "test_accuracy" in (tmp_path / "run" / "report.txt").read_text()


def test_sweep_row_count(tmp_path):
    out = tmp_path / "sweep"
    code = run("sweep-noise", CONFIGS / "two_tone.conf", "--sigmas", "0,0.5",
               "--run.output_dir", out, "--sweep.seeds", "0,1", *FAST,
               "--train.epochs", "1", "--ablation.pretrain", "false")
    assert code == 0
    rows = (out / "sweep.csv").read_text().splitlines()
    assert rows[0] == "sigma,variant,seed,accuracy"
    assert len(rows) - 1 == 2 * 3 * 2


@pytest.mark.parametrize("argv", [
    ["train", "/nonexistent.conf"],
    ["train", str(CONFIGS / "two_tone.conf"), "--model.patch_size", "256"],
    ["train", str(CONFIGS / "two_tone.conf"), "--bogus"],
    ["nosuchcommand"],
])
def test_validation_exit_code(argv, tmp_path):
    assert cli.main(argv + ["--run.output_dir", str(tmp_path / "x")]
                    if argv[0] == "train" and len(argv) > 2 else argv) == 1


def test_runtime_exit_code(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise tr.NonFiniteGradientError("non-finite gradient for parameter 'x'")

    monkeypatch.setattr(tr, "train_task", boom)
    code = run("train", CONFIGS / "two_tone.conf", "--run.output_dir", tmp_path / "r", *FAST)
    assert code == 2
