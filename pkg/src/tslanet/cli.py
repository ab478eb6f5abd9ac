"""Command-line entry point: ``tslanet <command> [config] [--section.key value ...]``.

Config files are plain ``key = value`` text.  Keys are dotted
(``model.patch_size``); a ``[model]`` header line prefixes the keys that
follow it.  Every key can be overridden on the command line with a flag of the
same dotted name.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import training as tr
from .data import NormStats, ParseError, SeriesDataset
from .model import ModelConfig, TSLANet, load_checkpoint, save_checkpoint

log = logging.getLogger("tslanet")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class ConfigError(ValueError):
    """Invalid configuration, arguments, or incompatible artifacts."""


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunSection:
    task: str = "classification"
    seed: int = 0
    output_dir: str = "runs/default"


@dataclass
class DataSection:
    train: str | None = None
    val: str | None = None
    test: str | None = None
    test_labels: str | None = None
    has_header: bool = False
    timestamp_col: str | None = None
    val_ratio: float = 0.2
    split: tuple[float, ...] = (0.7, 0.1, 0.2)
    window_stride: int = 1
    normalize: bool = True


@dataclass
class SyntheticSection:
    kind: str = "none"
    seed: int = 0
    n_train: int = 200
    n_test: int = 100
    f1: float = 2.0
    f2: float = 5.0
    sigma: float = 0.1
    length: int = 2000
    period: float = 32.0
    n_spikes: int = 10
    amplitude: float = float(5.0 / np.sqrt(2.0))
    noise: float = 0.05


@dataclass
class ModelSection:
    seq_len: int = 128
    patch_size: int = 16
    stride: int | None = None
    embed_dim: int = 64
    n_layers: int = 2
    icb_kernel_small: int = 1
    icb_kernel_large: int = 3
    dropout: float = 0.0
    mask_ratio: float = 0.4
    n_classes: int | None = None
    horizon: int | None = None
    fft_axis: str = "patches"
    mask_temperature: float = 0.1
    mask_mode: str = "soft"
    revin: bool = True


@dataclass
class TrainSection:
    epochs: int = 100
    pretrain_epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    label_smoothing: float = 0.1
    grad_clip: float | None = None
    eval_batch_size: int = 256
    init: str | None = None


@dataclass
class AblationSection:
    asb: bool = True
    asb_local: bool = True
    icb: bool = True
    pretrain: bool = True


@dataclass
class AnomalySection:
    quantile: float = 0.99
    calibration: str = "test"
    score_stride: int | None = None


@dataclass
class SweepSection:
    sigmas: tuple[float, ...] = (0.0, 0.5, 1.0)
    seeds: tuple[int, ...] = (0, 1, 2)


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    synthetic: SyntheticSection = field(default_factory=SyntheticSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    ablation: AblationSection = field(default_factory=AblationSection)
    anomaly: AnomalySection = field(default_factory=AnomalySection)
    sweep: SweepSection = field(default_factory=SweepSection)

    @classmethod
    def defaults(cls, task: str) -> RunConfig:
        """Defaults for ``task``, including its optimizer protocol."""
        cfg = cls()
        cfg.run.task = task
        base = tr.default_train_config(task)
        for f in dataclasses.fields(TrainSection):
            if hasattr(base, f.name):
                setattr(cfg.train, f.name, getattr(base, f.name))
        return cfg

    def keys(self) -> list[str]:
        return [f"{s.name}.{f.name}" for s in dataclasses.fields(self)
                for f in dataclasses.fields(getattr(self, s.name))]

    def set(self, key: str, raw: str) -> None:
        section, _, name = key.partition(".")
        if key not in self.keys():
            raise ConfigError(f"unknown config key {key!r}")
        obj = getattr(self, section)
        hint = typing.get_type_hints(type(obj))[name]
        try:
            setattr(obj, name, _convert(raw, hint))
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None

    def get(self, key: str):
        section, _, name = key.partition(".")
        return getattr(getattr(self, section), name)

    def to_text(self) -> str:
        lines = []
        for s in dataclasses.fields(self):
            lines.append(f"[{s.name}]")
            for f in dataclasses.fields(getattr(self, s.name)):
                lines.append(f"{f.name} = {_format_value(getattr(getattr(self, s.name), f.name))}")
            lines.append("")
        return "\n".join(lines)

    def model_config(self, n_classes: int | None = None, channels: int = 1) -> ModelConfig:
        m = self.model
        kw = {f.name: getattr(m, f.name) for f in dataclasses.fields(ModelSection)}
        if self.run.task == "classification":
            kw["n_classes"] = m.n_classes or n_classes
        else:
            kw["n_classes"] = None
        if self.run.task != "forecasting":
            kw["horizon"] = None
        return ModelConfig(task=self.run.task, channels=channels,
                           asb_enabled=self.ablation.asb, asb_local_enabled=self.ablation.asb_local,
                           icb_enabled=self.ablation.icb, **kw)

    def train_config(self) -> tr.TrainConfig:
        t = self.train
        kw = {f.name: getattr(t, f.name) for f in dataclasses.fields(tr.TrainConfig)
              if hasattr(t, f.name)}
        return tr.TrainConfig(seed=self.run.seed, **kw)

    def validate(self, need_data: bool = True) -> None:
        if self.run.task not in ("classification", "forecasting", "anomaly"):
            raise ConfigError(f"run.task: unknown task {self.run.task!r}")
        if not 0 <= self.run.seed < 2**64:
            raise ConfigError("run.seed must be a 64-bit unsigned integer")
        kinds = {"classification": "two_tone", "forecasting": "sinusoid", "anomaly": "spiked"}
        if self.synthetic.kind not in ("none", kinds[self.run.task]):
            raise ConfigError(
                f"synthetic.kind {self.synthetic.kind!r} does not fit task {self.run.task!r}")
        for key in ("data.train", "data.val", "data.test", "data.test_labels", "train.init"):
            path = self.get(key)
            if path is not None and not Path(path).exists():
                raise ConfigError(f"{key}: path does not exist: {path}")
        if need_data and self.synthetic.kind == "none" and self.data.train is None:
            raise ConfigError("data.train is required unless synthetic.kind is set")
        if self.anomaly.calibration not in ("test", "train"):
            raise ConfigError("anomaly.calibration must be 'test' or 'train'")


def _convert(raw: str, hint):
    raw = raw.strip()
    args = typing.get_args(hint)
    if type(None) in args:
        if raw.lower() in ("", "none", "null"):
            return None
        hint = next(a for a in args if a is not type(None))
        args = typing.get_args(hint)
    if typing.get_origin(hint) is tuple:
        inner = args[0]
        return tuple(_convert(p, inner) for p in raw.strip("()[]").split(",") if p.strip())
    if hint is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if hint is int:
        return int(raw)
    if hint is float:
        return float(raw)
    return raw


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config_text(text: str, source: str = "<config>") -> list[tuple[str, str, int]]:
    """``(dotted key, raw value, line number)`` triples from config text."""
    out = []
    section = ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise ConfigError(f"{source}:{lineno}: malformed section header {line!r}")
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if section and "." not in key:
            key = f"{section}.{key}"
        out.append((key, value, lineno))
    return out


def load_run_config(path: str | None, overrides: list[tuple[str, str]] = ()) -> RunConfig:
    entries: list[tuple[str, str, str]] = []
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {path}")
        entries += [(k, v, f"{path}:{n}") for k, v, n in parse_config_text(p.read_text(), path)]
    entries += [(k, v, f"--{k}") for k, v in overrides]
    task = "classification"
    for k, v, _ in entries:
        if k == "run.task":
            task = v
    if task not in ("classification", "forecasting", "anomaly"):
        raise ConfigError(f"run.task: unknown task {task!r}")
    cfg = RunConfig.defaults(task)
    for k, v, where in entries:
        try:
            cfg.set(k, v)
        except ConfigError as exc:
            raise ConfigError(f"{where}: {exc}") from None
    return cfg


# ---------------------------------------------------------------------------
# data assembly


@dataclass
class Splits:
    train: SeriesDataset
    val: SeriesDataset | None
    test: SeriesDataset | None
    stats: NormStats | None = None
    test_long: SeriesDataset | None = None
    train_long: SeriesDataset | None = None


def _norm(cfg: RunConfig, train: SeriesDataset, *others):
    if not cfg.data.normalize:
        return (train, *others, None)
    present = [o for o in others if o is not None]
    out = data_mod.normalize(train, *present)
    it = iter(out[1:-1])
    return (out[0], *[next(it) if o is not None else None for o in others], out[-1])


def _classification_data(cfg: RunConfig) -> Splits:
    s = cfg.synthetic
    if s.kind == "two_tone":
        train = data_mod.two_tone_classification(s.n_train, cfg.model.seq_len, s.f1, s.f2,
                                                 s.sigma, seed=s.seed)
        test = data_mod.two_tone_classification(s.n_test, cfg.model.seq_len, s.f1, s.f2,
                                                s.sigma, seed=s.seed + 1)
        val = None
    else:
        train = data_mod.load_labeled_table(cfg.data.train)
        val = data_mod.load_labeled_table(cfg.data.val) if cfg.data.val else None
        test = data_mod.load_labeled_table(cfg.data.test) if cfg.data.test else None
    if val is None:
        r = cfg.data.val_ratio
        train, val = data_mod.split(train, (1 - r, r), seed=cfg.run.seed, tags=("train", "val"))
    val = dataclasses.replace(val, split_tag="val")
    if test is not None:
        test = dataclasses.replace(test, split_tag="test")
    train, val, test, stats = _norm(cfg, train, val, test)
    return Splits(train, val, test, stats)


def _long_series(cfg: RunConfig, path: str) -> SeriesDataset:
    ts = cfg.data.timestamp_col
    return data_mod.load_multivariate_csv(path, cfg.data.has_header, ts)


def _forecasting_data(cfg: RunConfig) -> Splits:
    s = cfg.synthetic
    if s.kind == "sinusoid":
        long = data_mod.sinusoid_forecast(s.length, s.period, s.sigma, seed=s.seed)
    else:
        long = _long_series(cfg, cfg.data.train)
    tr_long, va_long, te_long = data_mod.split(long, cfg.data.split)
    tr_long, va_long, te_long, stats = _norm(cfg, tr_long, va_long, te_long)
    L, H, st = cfg.model.seq_len, cfg.model.horizon or 0, cfg.data.window_stride
    return Splits(*(data_mod.window_forecast(d, L, H, st) for d in (tr_long, va_long, te_long)),
                  stats)


def _anomaly_data(cfg: RunConfig, need_test: bool = True) -> Splits:
    s = cfg.synthetic
    if s.kind == "spiked":
        long = data_mod.spiked_anomaly(s.length, s.n_spikes, s.amplitude, seed=s.seed,
                                       period=s.period, noise=s.noise)
        test = data_mod.spiked_anomaly(s.length, s.n_spikes, s.amplitude, seed=s.seed + 1,
                                       period=s.period, noise=s.noise)
    else:
        long = _long_series(cfg, cfg.data.train)
        test = None
        if cfg.data.test:
            test = _long_series(cfg, cfg.data.test)
            if cfg.data.test_labels:
                labels = data_mod.load_labels_column(cfg.data.test_labels)
                if len(labels) != test.length:
                    raise ConfigError(
                        f"data.test_labels has {len(labels)} rows, test series has {test.length}")
                test = dataclasses.replace(test, anomaly_labels=labels[None, :])
    r = cfg.data.val_ratio
    tr_long, va_long = data_mod.split(dataclasses.replace(long, anomaly_labels=None),
                                      (1 - r, r), tags=("train", "val"))
    tr_long, va_long, test, stats = _norm(cfg, tr_long, va_long, test)
    L, st = cfg.model.seq_len, cfg.data.window_stride
    windows = [SeriesDataset(data_mod.sliding_windows(d, L, st)[0]) for d in (tr_long, va_long)]
    return Splits(windows[0], windows[1], None, stats, test_long=test, train_long=tr_long)


def build_splits(cfg: RunConfig) -> Splits:
    return {"classification": _classification_data, "forecasting": _forecasting_data,
            "anomaly": _anomaly_data}[cfg.run.task](cfg)


# ---------------------------------------------------------------------------
# run directory


class RunDir:
    def __init__(self, path: str, force: bool):
        self.path = Path(path)
        self.force = force

    def claim(self, *names: str) -> None:
        existing = [n for n in names if (self.path / n).exists()]
        if existing and not self.force:
            raise ConfigError(
                f"{self.path} already holds {', '.join(existing)}; pass --force to overwrite")
        self.path.mkdir(parents=True, exist_ok=True)

    def __truediv__(self, name: str) -> Path:
        return self.path / name


def _stats_extra(stats: NormStats | None) -> dict[str, np.ndarray]:
    if stats is None:
        return {}
    return {"norm_mean": stats.mean, "norm_std": stats.std}


def _stats_from_extra(extra: dict[str, np.ndarray]) -> NormStats | None:
    if "norm_mean" not in extra:
        return None
    return NormStats(extra["norm_mean"], extra["norm_std"])


def _check_compatible(expected: ModelConfig, found: ModelConfig) -> None:
    for f in dataclasses.fields(ModelConfig):
        a, b = getattr(expected, f.name), getattr(found, f.name)
        if a != b:
            raise ConfigError(
                f"checkpoint/config mismatch on {f.name}: config has {a!r}, checkpoint has {b!r}")


def _snapshot(cfg: RunConfig, rd: RunDir) -> None:
    (rd / "config.txt").write_text(cfg.to_text())


def _detect_metrics(model: TSLANet, cfg: RunConfig, splits: Splits) -> tuple[dict, np.ndarray]:
    test = splits.test_long
    L = cfg.model.seq_len
    stride = cfg.anomaly.score_stride or model.cfg.stride
    scores = tr.anomaly_score(model, test, L, stride)
    labels = test.anomaly_labels[0]
    calib = None
    if cfg.anomaly.calibration == "train":
        calib = tr.anomaly_score(model, splits.train_long, L, stride)
    raw = tr.threshold_and_f1(scores, labels, cfg.anomaly.quantile, False, calib)
    adj = tr.threshold_and_f1(scores, labels, cfg.anomaly.quantile, True, calib)
    metrics = {
        "test_threshold": raw.threshold,
        "test_precision": raw.precision, "test_recall": raw.recall, "test_f1": raw.f1,
        "test_pa_precision": adj.precision, "test_pa_recall": adj.recall, "test_pa_f1": adj.f1,
    }
    return metrics, scores


def _write_scores(path: Path, scores: np.ndarray, labels: np.ndarray, threshold: float) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "score", "label", "flagged"])
        for t, (s, lab) in enumerate(zip(scores, labels)):
            w.writerow([t, repr(float(s)), int(lab), int(s > threshold)])


# ---------------------------------------------------------------------------
# commands


def cmd_selftest(args) -> int:
    from .selftest import format_table, run_selftest

    results = run_selftest(corrupt_fft=args.corrupt_fft)
    print(format_table(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _fit(cfg: RunConfig, rd: RunDir, pretrain_only: bool = False) -> dict:
    splits = build_splits(cfg)
    mcfg = cfg.model_config(n_classes=splits.train.n_classes,
                            channels=splits.train.n_channels)
    tcfg = cfg.train_config()
    model = TSLANet(mcfg, seed=cfg.run.seed)
    report: dict = {"task": cfg.run.task, "seed": cfg.run.seed, "n_params": model.n_params()}
    if cfg.train.init:
        src, _, _ = load_checkpoint(cfg.train.init)
        model.load_backbone(src)
        report["init"] = cfg.train.init
    if cfg.ablation.pretrain or pretrain_only:
        pre = tr.pretrain(model, splits.train, tcfg)
        if pre:
            report["pretrain_final_loss"] = pre[-1].train_loss
        if pretrain_only:
            tr.write_epoch_log(rd / "epochs.csv", pre, "pretrain")
            return {"model": model, "report": report, "stats": splits.stats}
    records = tr.train_task(model, splits.train, splits.val, tcfg)
    tr.write_epoch_log(rd / "epochs.csv", records, cfg.run.task)
    report["epochs"] = len(records)
    if records:
        report["final_train_loss"] = records[-1].train_loss
    if splits.val is not None:
        for k, v in tr.evaluate(model, splits.val, tcfg).items():
            report[f"val_{k}"] = v
    if splits.test is not None:
        for k, v in tr.evaluate(model, splits.test, tcfg).items():
            report[f"test_{k}"] = v
    if cfg.run.task == "anomaly" and splits.test_long is not None \
            and splits.test_long.anomaly_labels is not None:
        metrics, scores = _detect_metrics(model, cfg, splits)
        report.update(metrics)
        _write_scores(rd / "scores.csv", scores, splits.test_long.anomaly_labels[0],
                      metrics["test_threshold"])
    return {"model": model, "report": report, "stats": splits.stats}


def cmd_train(cfg: RunConfig, args, pretrain_only: bool = False) -> int:
    cfg.validate()
    rd = RunDir(cfg.run.output_dir, args.force)
    rd.claim("config.txt", "epochs.csv", "report.txt", "model.npz")
    _snapshot(cfg, rd)
    out = _fit(cfg, rd, pretrain_only)
    save_checkpoint(rd / "model.npz", out["model"], extra=_stats_extra(out["stats"]),
                    meta={"task": cfg.run.task, "seed": cfg.run.seed,
                          "stage": "pretrain" if pretrain_only else "train"})
    tr.write_report(rd / "report.txt", out["report"])
    print(tr.format_report(out["report"]), end="")
    return EXIT_OK


def _load_for(cfg: RunConfig, checkpoint: str, n_classes: int | None, channels: int):
    if not Path(checkpoint).exists():
        raise ConfigError(f"checkpoint not found: {checkpoint}")
    model, extra, _ = load_checkpoint(checkpoint)
    _check_compatible(cfg.model_config(n_classes=n_classes, channels=channels), model.cfg)
    return model, _stats_from_extra(extra)


def cmd_eval(cfg: RunConfig, args) -> int:
    cfg.validate()
    splits = build_splits(cfg)
    model, _ = _load_for(cfg, args.checkpoint, splits.train.n_classes, splits.train.n_channels)
    target = splits.test if splits.test is not None else splits.val
    report = {"task": cfg.run.task, "seed": cfg.run.seed}
    if target is not None:
        for k, v in tr.evaluate(model, target, cfg.train_config()).items():
            report[f"{target.split_tag}_{k}"] = v
    if cfg.run.task == "anomaly" and splits.test_long is not None \
            and splits.test_long.anomaly_labels is not None:
        report.update(_detect_metrics(model, cfg, splits)[0])
    rd = RunDir(cfg.run.output_dir, args.force)
    rd.claim("eval_report.txt")
    tr.write_report(rd / "eval_report.txt", report)
    print(tr.format_report(report), end="")
    return EXIT_OK


def cmd_forecast(cfg: RunConfig, args) -> int:
    cfg.validate(need_data=False)
    series = data_mod.load_multivariate_csv(args.input, cfg.data.has_header,
                                            cfg.data.timestamp_col)
    model, stats = _load_for(cfg, args.checkpoint, None, series.n_channels)
    L = model.cfg.seq_len
    if series.length < L:
        raise ConfigError(f"input has {series.length} rows; the model needs {L}")
    x = series.series[:, :, -L:]
    if stats is not None:
        x = (x - stats.mean[None, :, None]) / stats.std[None, :, None]
    pred = tr.predict(model, x)[0]
    if stats is not None:
        pred = data_mod.invert_normalizer(pred, stats)
    out = Path(args.out) if args.out else Path(cfg.run.output_dir) / "predictions.csv"
    if out.exists() and not args.force:
        raise ConfigError(f"{out} exists; pass --force to overwrite")
    out.parent.mkdir(parents=True, exist_ok=True)
    header = [f"c{i}" for i in range(pred.shape[0])]
    data_mod.write_multivariate_csv(out, pred, header)
    print(out)
    return EXIT_OK


def cmd_detect(cfg: RunConfig, args) -> int:
    cfg.validate(need_data=False)
    test = data_mod.load_multivariate_csv(args.test, cfg.data.has_header, cfg.data.timestamp_col)
    labels = data_mod.load_labels_column(args.labels)
    if len(labels) != test.length:
        raise ConfigError(f"labels file has {len(labels)} rows, test series has {test.length}")
    model, stats = _load_for(cfg, args.checkpoint, None, test.n_channels)
    test = dataclasses.replace(test, anomaly_labels=labels[None, :])
    if stats is not None:
        test = data_mod.apply_normalizer(test, stats)
    train_long = None
    if cfg.anomaly.calibration == "train":
        if cfg.data.train is None:
            raise ConfigError("anomaly.calibration = train needs data.train")
        train_long = _long_series(cfg, cfg.data.train)
        if stats is not None:
            train_long = data_mod.apply_normalizer(train_long, stats)
    splits = Splits(test, None, None, stats, test_long=test, train_long=train_long)
    metrics, scores = _detect_metrics(model, cfg, splits)
    rd = RunDir(cfg.run.output_dir, args.force)
    rd.claim("scores.csv", "detect_report.txt")
    _write_scores(rd / "scores.csv", scores, labels, metrics["test_threshold"])
    tr.write_report(rd / "detect_report.txt", metrics)
    print(tr.format_report(metrics), end="")
    return EXIT_OK


SWEEP_VARIANTS = {
    "full": dict(asb=True, asb_local=True),
    "no_asb_local": dict(asb=True, asb_local=False),
    "no_asb": dict(asb=False, asb_local=False),
}


def sweep_noise(cfg: RunConfig, sigmas, seeds) -> list[tuple[float, str, int, float]]:
    rows = []
    for sigma in sigmas:
        for variant, switches in SWEEP_VARIANTS.items():
            for seed in seeds:
                cell = dataclasses.replace(
                    cfg,
                    run=dataclasses.replace(cfg.run, seed=int(seed)),
                    synthetic=dataclasses.replace(cfg.synthetic, sigma=float(sigma)),
                    ablation=dataclasses.replace(cfg.ablation, **switches),
                )
                splits = build_splits(cell)
                model = TSLANet(cell.model_config(n_classes=splits.train.n_classes),
                                seed=cell.run.seed)
                tcfg = cell.train_config()
                if cell.ablation.pretrain:
                    tr.pretrain(model, splits.train, tcfg)
                tr.train_task(model, splits.train, splits.val, tcfg)
                acc = tr.evaluate(model, splits.test, tcfg)["accuracy"]
                log.info("sigma=%s variant=%s seed=%s accuracy=%.4f", sigma, variant, seed, acc)
                rows.append((float(sigma), variant, int(seed), acc))
    return rows


def cmd_sweep_noise(cfg: RunConfig, args) -> int:
    if cfg.run.task != "classification":
        raise ConfigError("sweep-noise needs run.task = classification")
    if cfg.synthetic.kind != "two_tone":
        raise ConfigError("sweep-noise needs synthetic.kind = two_tone")
    cfg.validate()
    sigmas = _convert(args.sigmas, tuple[float, ...]) if args.sigmas else cfg.sweep.sigmas
    rd = RunDir(cfg.run.output_dir, args.force)
    rd.claim("config.txt", "sweep.csv")
    _snapshot(cfg, rd)
    rows = sweep_noise(cfg, sigmas, cfg.sweep.seeds)
    with open(rd / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sigma", "variant", "seed", "accuracy"])
        for sigma, variant, seed, acc in rows:
            w.writerow([repr(sigma), variant, seed, repr(acc)])
    print(rd / "sweep.csv")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument handling


def _split_overrides(extra: list[str]) -> list[tuple[str, str]]:
    out, i = [], 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) < 3:
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"missing value for {tok}")
            value = extra[i + 1]
            i += 2
        if "." not in key:
            raise ConfigError(f"override {tok!r} must use a dotted key such as --model.patch_size")
        out.append((key, value))
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tslanet",
        description="Train and evaluate spectral/convolutional time-series models.",
        epilog="Any config key can be overridden with --section.key VALUE.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("selftest", help="run the built-in oracle checks")
    p.add_argument("--corrupt-fft", action="store_true", help=argparse.SUPPRESS)

    for name, text in (("pretrain", "masked-patch pretraining only"),
                       ("train", "(optionally pretrain and) train, then evaluate")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config", nargs="?")
        p.add_argument("--force", action="store_true", help="overwrite an existing run")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the configured data")
    p.add_argument("config")
    p.add_argument("checkpoint")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("forecast", help="forecast the horizon after an input CSV")
    p.add_argument("config")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("detect", help="score a test CSV for anomalies")
    p.add_argument("config")
    p.add_argument("checkpoint")
    p.add_argument("test")
    p.add_argument("labels")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("sweep-noise", help="accuracy of ablation variants across noise levels")
    p.add_argument("config")
    p.add_argument("--sigmas", help="comma-separated noise levels (default: sweep.sigmas)")
    p.add_argument("--force", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "selftest":
            if extra:
                raise ConfigError(f"selftest takes no overrides: {extra}")
            return cmd_selftest(args)
        cfg = load_run_config(getattr(args, "config", None), _split_overrides(extra))
        if args.command == "pretrain":
            return cmd_train(cfg, args, pretrain_only=True)
        if args.command == "train":
            return cmd_train(cfg, args)
        if args.command == "eval":
            return cmd_eval(cfg, args)
        if args.command == "forecast":
            return cmd_forecast(cfg, args)
        if args.command == "detect":
            return cmd_detect(cfg, args)
        return cmd_sweep_noise(cfg, args)
    except (ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
