"""Dataset containers, loaders, splits, windowing and synthetic generators."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

NORM_EPS = 1e-8


class ParseError(ValueError):
    """Malformed input file; the message names the offending line."""


@dataclass
class NormStats:
    mean: np.ndarray  # [C]
    std: np.ndarray  # [C]
    warnings: list[str] = field(default_factory=list)


@dataclass
class SeriesDataset:
    """A stack of series ``[N, C, L]`` plus the supervision for one task.

    Long single recordings (forecasting and anomaly corpora) are stored with
    ``N = 1`` and the time axis as ``L``.
    """

    series: np.ndarray
    labels: np.ndarray | None = None
    targets: np.ndarray | None = None
    anomaly_labels: np.ndarray | None = None
    split_tag: str = "train"
    stats: NormStats | None = None

    def __post_init__(self):
        self.series = np.asarray(self.series, dtype=np.float64)
        if self.series.ndim != 3:
            raise ValueError(f"series must be [N, C, L], got shape {self.series.shape}")
        n = len(self.series)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if len(self.labels) != n:
                raise ValueError(f"{len(self.labels)} labels for {n} series")
        if self.targets is not None:
            self.targets = np.asarray(self.targets, dtype=np.float64)
            if self.targets.shape[:2] != self.series.shape[:2]:
                raise ValueError("targets must be [N, C, H] matching series")
        if self.anomaly_labels is not None:
            self.anomaly_labels = np.asarray(self.anomaly_labels, dtype=np.int64)
            if self.anomaly_labels.shape != (n, self.series.shape[2]):
                raise ValueError("anomaly_labels must be [N, L] matching series")

    def __len__(self) -> int:
        return len(self.series)

    @property
    def n_channels(self) -> int:
        return self.series.shape[1]

    @property
    def length(self) -> int:
        return self.series.shape[2]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels is not None and len(self.labels) else 0

    def subset(self, idx, split_tag: str | None = None) -> SeriesDataset:
        idx = np.asarray(idx)
        return replace(
            self,
            series=self.series[idx],
            labels=None if self.labels is None else self.labels[idx],
            targets=None if self.targets is None else self.targets[idx],
            anomaly_labels=None if self.anomaly_labels is None else self.anomaly_labels[idx],
            split_tag=split_tag or self.split_tag,
        )


# ---------------------------------------------------------------------------
# loaders


def _read_lines(path) -> list[tuple[int, str]]:
    text = Path(path).read_text()
    rows = [(i + 1, line.strip()) for i, line in enumerate(text.splitlines())]
    return [(i, line) for i, line in rows if line]


def _detect_delimiter(line: str) -> str:
    return "\t" if "\t" in line else ","


def _parse_float(cell: str, where: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise ParseError(f"{where}: non-numeric value {cell!r}") from None
    if not math.isfinite(v):
        raise ParseError(f"{where}: missing or non-finite value {cell!r}")
    return v


def load_labeled_table(path) -> SeriesDataset:
    """One series per row, integer class label first.

    Labels are remapped to ``0..K-1`` in sorted order of the original values.
    """
    rows = _read_lines(path)
    if not rows:
        raise ParseError(f"{path}: empty file")
    delim = _detect_delimiter(rows[0][1])
    width = None
    raw_labels, values = [], []
    for lineno, line in rows:
        cells = [c.strip() for c in line.split(delim)]
        if width is None:
            width = len(cells)
            if width < 2:
                raise ParseError(f"line {lineno}: need a label and at least one value")
        elif len(cells) != width:
            raise ParseError(f"line {lineno}: expected {width} fields, got {len(cells)}")
        lab = _parse_float(cells[0], f"line {lineno}, field 1")
        if lab != int(lab):
            raise ParseError(f"line {lineno}: class label {cells[0]!r} is not an integer")
        raw_labels.append(int(lab))
        values.append([_parse_float(c, f"line {lineno}, field {j + 2}")
                       for j, c in enumerate(cells[1:])])
    classes = sorted(set(raw_labels))
    remap = {c: i for i, c in enumerate(classes)}
    labels = np.array([remap[c] for c in raw_labels])
    return SeriesDataset(np.array(values)[:, None, :], labels=labels)


def write_labeled_table(path, ds: SeriesDataset, delimiter: str = ",") -> None:
    if ds.labels is None or ds.n_channels != 1:
        raise ValueError("labeled tables hold univariate labeled series")
    with open(path, "w") as fh:
        for lab, row in zip(ds.labels, ds.series[:, 0, :]):
            fh.write(delimiter.join([str(int(lab))] + [repr(float(v)) for v in row]) + "\n")


def load_multivariate_csv(path, has_header: bool = False,
                          timestamp_col: int | str | None = None) -> SeriesDataset:
    """Rows are timesteps and columns channels; returns one series ``[1, C, T]``."""
    rows = _read_lines(path)
    if not rows:
        raise ParseError(f"{path}: empty file")
    delim = _detect_delimiter(rows[0][1])
    header = None
    if has_header:
        header = [c.strip() for c in rows[0][1].split(delim)]
        rows = rows[1:]
    if not rows:
        raise ParseError(f"{path}: no data rows")
    skip = None
    if timestamp_col is not None:
        if isinstance(timestamp_col, str) and not timestamp_col.lstrip("-").isdigit():
            if header is None or timestamp_col not in header:
                raise ParseError(f"timestamp column {timestamp_col!r} not found in header")
            skip = header.index(timestamp_col)
        else:
            skip = int(timestamp_col)
    width = None
    data = []
    for lineno, line in rows:
        cells = [c.strip() for c in line.split(delim)]
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise ParseError(f"line {lineno}: expected {width} columns, got {len(cells)}")
        data.append([_parse_float(c, f"line {lineno}, column {j + 1}")
                     for j, c in enumerate(cells) if j != skip])
    arr = np.array(data)
    if arr.shape[1] == 0:
        raise ParseError(f"{path}: no value columns")
    return SeriesDataset(arr.T[None, :, :])


def write_multivariate_csv(path, series: np.ndarray, header: list[str] | None = None) -> None:
    """Write ``[C, T]`` as T rows of C columns."""
    series = np.atleast_2d(np.asarray(series, dtype=np.float64))
    with open(path, "w") as fh:
        if header is not None:
            fh.write(",".join(header) + "\n")
        for row in series.T:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_labels_column(path) -> np.ndarray:
    """One 0/1 label per non-empty line (first column if delimited)."""
    out = []
    for lineno, line in _read_lines(path):
        cell = line.split(_detect_delimiter(line))[0].strip()
        v = _parse_float(cell, f"line {lineno}")
        if v not in (0.0, 1.0):
            raise ParseError(f"line {lineno}: label must be 0 or 1, got {cell!r}")
        out.append(int(v))
    if not out:
        raise ParseError(f"{path}: empty file")
    return np.array(out, dtype=np.int64)


# ---------------------------------------------------------------------------
# windowing


def window_forecast(series, L: int, H: int, stride: int = 1) -> SeriesDataset:
    """Look-back/horizon pairs ``x = [t, t+L)``, ``y = [t+L, t+L+H)``."""
    series = _as_long(series)
    T = series.shape[1]
    if L + H > T:
        raise ValueError(f"look-back {L} + horizon {H} exceeds series length {T}")
    if stride < 1:
        raise ValueError("stride must be positive")
    starts = np.arange(0, T - L - H + 1, stride)
    x = np.stack([series[:, s : s + L] for s in starts])
    y = np.stack([series[:, s + L : s + L + H] for s in starts])
    return SeriesDataset(x, targets=y)


def sliding_windows(series, L: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Windows ``[N, C, L]`` and their start offsets.

    A final window flush with the end is appended when the stride would leave
    a tail uncovered.
    """
    series = _as_long(series)
    T = series.shape[1]
    if L > T:
        raise ValueError(f"window length {L} exceeds series length {T}")
    starts = list(range(0, T - L + 1, stride))
    if starts[-1] != T - L:
        starts.append(T - L)
    starts = np.array(starts)
    return np.stack([series[:, s : s + L] for s in starts]), starts


def _as_long(series) -> np.ndarray:
    if isinstance(series, SeriesDataset):
        if len(series) != 1:
            raise ValueError("expected a single long recording")
        return series.series[0]
    arr = np.asarray(series, dtype=np.float64)
    return arr[None, :] if arr.ndim == 1 else arr


# ---------------------------------------------------------------------------
# splits and normalization


def _check_ratios(ratios) -> tuple[float, ...]:
    ratios = tuple(float(r) for r in ratios)
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be positive and sum to 1, got {ratios}")
    return ratios


def _boundaries(n: int, ratios) -> list[int]:
    cuts, acc = [0], 0.0
    for r in ratios[:-1]:
        acc += r
        cuts.append(int(round(acc * n)))
    cuts.append(n)
    return cuts


def split(ds: SeriesDataset, ratios=(0.6, 0.2, 0.2), seed: int = 0,
          tags=("train", "val", "test")) -> tuple[SeriesDataset, ...]:
    """Stratified random split for labeled series, chronological otherwise.

    A single long recording is cut along its time axis; a stack of windows is
    cut in its stored order.
    """
    ratios = _check_ratios(ratios)
    if len(tags) != len(ratios):
        raise ValueError("need one tag per ratio")
    if ds.labels is not None:
        order = _stratified_order(ds.labels, np.random.default_rng(seed))
        cuts = _boundaries(len(ds), ratios)
        parts = [ds.subset(np.sort(order[a:b]), t) for a, b, t in zip(cuts, cuts[1:], tags)]
    elif len(ds) == 1:
        T = ds.length
        cuts = _boundaries(T, ratios)
        parts = []
        for a, b, t in zip(cuts, cuts[1:], tags):
            parts.append(replace(
                ds,
                series=ds.series[:, :, a:b],
                anomaly_labels=None if ds.anomaly_labels is None else ds.anomaly_labels[:, a:b],
                split_tag=t,
            ))
    else:
        cuts = _boundaries(len(ds), ratios)
        parts = [ds.subset(np.arange(a, b), t) for a, b, t in zip(cuts, cuts[1:], tags)]
    sizes = [p.length if (ds.labels is None and len(ds) == 1) else len(p) for p in parts]
    for t, n in zip(tags, sizes):
        if n == 0:
            raise ValueError(f"split {t!r} received no examples")
    return tuple(parts)


def _stratified_order(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # Interleave classes by their within-class rank so that contiguous cuts of
    # the order are stratified.
    keys = np.empty(len(labels))
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) < 2:
            raise ValueError(f"class {c} has a single example; cannot stratify")
        idx = rng.permutation(idx)
        keys[idx] = (np.arange(len(idx)) + rng.random()) / len(idx)
    return np.lexsort((rng.random(len(labels)), keys))


def fit_normalizer(train: SeriesDataset) -> NormStats:
    """Per-channel mean and std over every series and timestep of ``train``."""
    x = train.series
    mean = x.mean(axis=(0, 2))
    var = x.var(axis=(0, 2))
    warnings = []
    for c in np.flatnonzero(var < NORM_EPS):
        msg = f"channel {c} has near-zero variance; clamped to {NORM_EPS}"
        log.warning(msg)
        warnings.append(msg)
    return NormStats(mean, np.sqrt(np.maximum(var, NORM_EPS)), warnings)


def apply_normalizer(ds: SeriesDataset, stats: NormStats) -> SeriesDataset:
    m, s = stats.mean[None, :, None], stats.std[None, :, None]
    targets = None if ds.targets is None else (ds.targets - m) / s
    return replace(ds, series=(ds.series - m) / s, targets=targets, stats=stats)


def invert_normalizer(x: np.ndarray, stats: NormStats) -> np.ndarray:
    """Undo z-scoring on an array whose channel axis is second to last."""
    return x * stats.std[:, None] + stats.mean[:, None]


def normalize(train: SeriesDataset, *others: SeriesDataset, mode: str = "zscore"):
    """Fit z-score stats on ``train`` and apply them to every split given."""
    if mode != "zscore":
        raise ValueError(f"unsupported normalization mode {mode!r}")
    stats = fit_normalizer(train)
    return tuple(apply_normalizer(d, stats) for d in (train, *others)) + (stats,)


# ---------------------------------------------------------------------------
# synthetic corpora


def two_tone_classification(n: int, L: int, f1: float, f2: float, sigma: float,
                            seed: int = 0) -> SeriesDataset:
    """Unit sines at ``f1`` or ``f2`` cycles per window with random phase.

    Classes alternate so every prefix is balanced; label 0 is ``f1``.
    """
    if n < 1 or L < 1 or f1 <= 0 or f2 <= 0 or sigma < 0:
        raise ValueError("n, L, f1, f2 must be positive and sigma non-negative")
    if f1 == f2:
        raise ValueError("f1 and f2 must differ")
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    freqs = np.where(labels == 0, f1, f2)
    phase = rng.uniform(0, 2 * np.pi, size=n)
    t = np.arange(L) / L
    x = np.sin(2 * np.pi * freqs[:, None] * t[None, :] + phase[:, None])
    x += sigma * rng.standard_normal((n, L))
    return SeriesDataset(x[:, None, :], labels=labels)


def sinusoid_forecast(T: int, period: float, sigma: float, seed: int = 0) -> SeriesDataset:
    """One recording: a unit sine of the given period plus Gaussian noise."""
    if T < 1 or period <= 0 or sigma < 0:
        raise ValueError("T and period must be positive and sigma non-negative")
    rng = np.random.default_rng(seed)
    t = np.arange(T)
    x = np.sin(2 * np.pi * t / period) + sigma * rng.standard_normal(T)
    return SeriesDataset(x[None, None, :])


def spiked_anomaly(T: int, n_spikes: int, amplitude: float, seed: int = 0,
                   period: float = 32.0, noise: float = 0.05) -> SeriesDataset:
    """Noisy unit sine with ``n_spikes`` single-timestep spikes of +/- ``amplitude``.

    Spikes sit at distinct random positions at least one period from either
    end; ``anomaly_labels`` marks them.
    """
    if T < 1 or n_spikes < 0 or amplitude <= 0 or period <= 0 or noise < 0:
        raise ValueError("invalid spiked_anomaly parameters")
    margin = int(np.ceil(period))
    if n_spikes > max(0, T - 2 * margin):
        raise ValueError("too many spikes for the series length")
    rng = np.random.default_rng(seed)
    t = np.arange(T)
    x = np.sin(2 * np.pi * t / period) + noise * rng.standard_normal(T)
    labels = np.zeros(T, dtype=np.int64)
    if n_spikes:
        pos = rng.choice(np.arange(margin, T - margin), size=n_spikes, replace=False)
        x[pos] += amplitude * rng.choice([-1.0, 1.0], size=n_spikes)
        labels[pos] = 1
    return SeriesDataset(x[None, None, :], anomaly_labels=labels[None, :])
