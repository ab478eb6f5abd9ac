"""Losses, AdamW, training loops, metrics and anomaly scoring."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import SeriesDataset, sliding_windows
from .model import TSLANet, pretrain_forward

log = logging.getLogger(__name__)

TASK_METRICS = {
    "classification": ("accuracy",),
    "forecasting": ("mse", "mae"),
    "anomaly": ("mse", "mae"),
    "pretrain": (),
}


class NonFiniteGradientError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# losses


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros(labels.shape + (n_classes,))
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


def smooth_labels(y, eps: float) -> np.ndarray:
    """(1 - eps) * y + eps / C for one-hot ``y`` over the last axis."""
    y = np.asarray(y, dtype=np.float64)
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"smoothing eps must be in [0, 1), got {eps}")
    if not (np.isin(y, (0.0, 1.0)).all() and (y.sum(axis=-1) == 1.0).all()):
        raise ValueError("labels must be one-hot")
    return (1.0 - eps) * y + eps / y.shape[-1]


def ce_loss(logits, y_smooth) -> Tensor:
    """Cross-entropy against soft targets, averaged over leading axes."""
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    y = np.asarray(y_smooth, dtype=np.float64)
    if y.shape != logits.shape:
        raise ad.ShapeError(f"targets {y.shape} vs logits {logits.shape}")
    per = -ad.tensor_sum(ad.log_softmax(logits, -1) * y, axis=-1)
    return ad.mean(per)


def _pair(pred, target) -> tuple[Tensor, Tensor]:
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise ad.ShapeError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return pred, target


def mse_loss(pred, target) -> Tensor:
    pred, target = _pair(pred, target)
    return ad.mean(ad.square(pred - target))


def mae(pred, target) -> Tensor:
    pred, target = _pair(pred, target)
    return ad.mean(ad.absolute(pred - target))


def masked_mse(pred, target, mask) -> Tensor:
    """MSE over the elements of masked patches only.

    ``pred``/``target`` are ``[..., C, M, p]`` and ``mask`` is boolean
    ``[..., M]``.  Unmasked positions contribute exact zeros, so perturbing
    them leaves the value unchanged bit for bit.
    """
    pred, target = _pair(pred, target)
    mask = np.asarray(mask, dtype=bool)
    mf = np.broadcast_to(mask[..., None, :, None], pred.shape).astype(np.float64)
    n = mf.sum()
    if n == 0:
        raise ValueError("mask selects no patches")
    diff = (pred - target) * mf
    return ad.scalar_mul(ad.tensor_sum(ad.square(diff)), 1.0 / n)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4


def init_optim(params: dict[str, Tensor], lr: float = 1e-3, weight_decay: float = 1e-4,
               beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> OptimState:
    return OptimState(
        m={k: np.zeros_like(p.data) for k, p in params.items()},
        v={k: np.zeros_like(p.data) for k, p in params.items()},
        lr=lr, beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay,
    )


def adamw_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: OptimState) -> None:
    """One AdamW update with weight decay decoupled from the moment estimates."""
    for k, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteGradientError(f"non-finite gradient for parameter {k!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            g = np.zeros_like(p.data)
        if state.weight_decay:
            p.data = p.data - state.lr * state.weight_decay * p.data
        m = state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        v = state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if total > max_norm > 0:
        scale = max_norm / (total + 1e-12)
        for k in grads:
            grads[k] = grads[k] * scale
    return total


# ---------------------------------------------------------------------------
# metrics


def accuracy(preds, labels) -> float:
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError(f"shape mismatch: {preds.shape} vs {labels.shape}")
    if preds.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float((preds == labels).mean())


def apply_point_adjustment(preds, labels) -> np.ndarray:
    """Flag a whole true anomaly segment when any timestep in it is flagged."""
    preds = np.asarray(preds).astype(bool).copy()
    labels = np.asarray(labels).astype(bool)
    n = len(labels)
    i = 0
    while i < n:
        if labels[i]:
            j = i
            while j < n and labels[j]:
                j += 1
            if preds[i:j].any():
                preds[i:j] = True
            i = j
        else:
            i += 1
    return preds


def precision_recall_f1(preds, labels) -> tuple[float, float, float]:
    """Binary scores with the convention 0/0 -> 0."""
    preds = np.asarray(preds).astype(bool)
    labels = np.asarray(labels).astype(bool)
    tp = float((preds & labels).sum())
    fp = float((preds & ~labels).sum())
    fn = float((~preds & labels).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


class DetectionResult(NamedTuple):
    precision: float
    recall: float
    f1: float
    threshold: float


def threshold_and_f1(scores, labels, q: float = 0.99, point_adjust: bool = False,
                     calibration=None) -> DetectionResult:
    """Threshold at the ``q``-quantile of ``calibration`` (default: ``scores``)
    and score ``scores > threshold`` against ``labels``."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must align")
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    ref = scores if calibration is None else np.asarray(calibration, dtype=np.float64)
    thr = float(np.quantile(ref, q))
    preds = scores > thr
    if point_adjust:
        preds = apply_point_adjustment(preds, labels)
    return DetectionResult(*precision_recall_f1(preds, labels), thr)


# ---------------------------------------------------------------------------
# training loops


@dataclass
class TrainConfig:
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
    seed: int = 0
    eval_batch_size: int = 256


def default_train_config(task: str, **overrides) -> TrainConfig:
    """Protocol defaults: classification 1e-3/1e-4 for 50+100 epochs,
    forecasting and anomaly 1e-4/1e-6 for 10+20 epochs."""
    if task == "classification":
        base = TrainConfig(epochs=100, pretrain_epochs=50, lr=1e-3, weight_decay=1e-4)
    elif task in ("forecasting", "anomaly"):
        base = TrainConfig(epochs=20, pretrain_epochs=10, lr=1e-4, weight_decay=1e-6)
    else:
        raise ValueError(f"unknown task {task!r}")
    for k, v in overrides.items():
        if not hasattr(base, k):
            raise AttributeError(f"TrainConfig has no field {k!r}")
        setattr(base, k, v)
    return base


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float | None = None
    metrics: dict[str, float] = field(default_factory=dict)
    seconds: float = 0.0


def _inputs_and_targets(model: TSLANet, ds: SeriesDataset) -> tuple[np.ndarray, np.ndarray]:
    task = model.cfg.task
    if task == "classification":
        if ds.labels is None:
            raise ValueError("classification needs labels")
        return ds.series, ds.labels
    if task == "forecasting":
        if ds.targets is None:
            raise ValueError("forecasting needs targets")
        return ds.series, ds.targets
    return ds.series, ds.series


def _task_loss(model: TSLANet, out: Tensor, y: np.ndarray, tcfg: TrainConfig) -> Tensor:
    if model.cfg.task == "classification":
        target = smooth_labels(one_hot(y, model.cfg.n_classes), tcfg.label_smoothing)
        return ce_loss(out, target)
    return mse_loss(out, y)


def _collect_grads(model: TSLANet) -> dict[str, np.ndarray]:
    return {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for k, p in model.params.items()}


def _step(model: TSLANet, loss: Tensor, opt: OptimState, tcfg: TrainConfig) -> None:
    model.zero_grad()
    loss.backward()
    grads = _collect_grads(model)
    if tcfg.grad_clip:
        clip_grad_norm(grads, tcfg.grad_clip)
    adamw_step(model.params, grads, opt)


def predict(model: TSLANet, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    outs = []
    with ad.no_grad():
        for i in range(0, len(x), batch_size):
            outs.append(model(x[i : i + batch_size], train=False).data)
    return np.concatenate(outs, axis=0)


def evaluate(model: TSLANet, ds: SeriesDataset, tcfg: TrainConfig | None = None) -> dict[str, float]:
    """Loss plus task metrics on ``ds``."""
    tcfg = tcfg or TrainConfig()
    if len(ds) == 0:
        raise ValueError("cannot evaluate an empty split")
    x, y = _inputs_and_targets(model, ds)
    out = predict(model, x, tcfg.eval_batch_size)
    with ad.no_grad():
        loss = _task_loss(model, Tensor(out), y, tcfg).item()
    res = {"loss": loss}
    if model.cfg.task == "classification":
        res["accuracy"] = accuracy(out.argmax(axis=-1), y)
    else:
        diff = out - y
        res["mse"] = float((diff * diff).mean())
        res["mae"] = float(np.abs(diff).mean())
    return res


def _better(task: str, cand: dict, best: dict | None) -> bool:
    if best is None:
        return True
    if task == "classification":
        return (cand["accuracy"], -cand["loss"]) > (best["accuracy"], -best["loss"])
    return cand["loss"] < best["loss"]


def train_task(model: TSLANet, train: SeriesDataset, val: SeriesDataset | None = None,
               tcfg: TrainConfig | None = None) -> list[EpochRecord]:
    """Supervised training.  Keeps the parameters of the best validation epoch."""
    tcfg = tcfg or default_train_config(model.cfg.task)
    if len(train) == 0:
        raise ValueError("training split is empty")
    if val is not None and len(val) == 0:
        raise ValueError("validation split is empty")
    x, y = _inputs_and_targets(model, train)
    rng = np.random.default_rng(tcfg.seed)
    opt = init_optim(model.params, tcfg.lr, tcfg.weight_decay, tcfg.beta1, tcfg.beta2, tcfg.eps)
    records: list[EpochRecord] = []
    best, best_state = None, None
    for epoch in range(tcfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(x))
        total = 0.0
        for i in range(0, len(order), tcfg.batch_size):
            idx = order[i : i + tcfg.batch_size]
            out = model(x[idx], train=True, rng=rng)
            loss = _task_loss(model, out, y[idx], tcfg)
            _step(model, loss, opt, tcfg)
            total += loss.item() * len(idx)
        rec = EpochRecord(epoch=epoch, train_loss=total / len(x))
        if val is not None:
            res = evaluate(model, val, tcfg)
            rec.val_loss = res.pop("loss")
            rec.metrics = res
            if _better(model.cfg.task, {"loss": rec.val_loss, **res}, best):
                best = {"loss": rec.val_loss, **res}
                best_state = model.state_dict()
        rec.seconds = time.perf_counter() - t0
        records.append(rec)
        log.debug("epoch %d train %.5f val %s", epoch, rec.train_loss, rec.val_loss)
    if best_state is not None:
        model.load_state_dict(best_state)
    return records


def pretrain(model: TSLANet, dataset: SeriesDataset, tcfg: TrainConfig | None = None,
             epochs: int | None = None) -> list[EpochRecord]:
    """Masked-patch reconstruction pretraining on unlabeled series."""
    tcfg = tcfg or default_train_config(model.cfg.task)
    if len(dataset) == 0:
        raise ValueError("pretraining dataset is empty")
    epochs = tcfg.pretrain_epochs if epochs is None else epochs
    x = dataset.series
    rng = np.random.default_rng(tcfg.seed)
    opt = init_optim(model.params, tcfg.lr, tcfg.weight_decay, tcfg.beta1, tcfg.beta2, tcfg.eps)
    records = []
    for epoch in range(epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(x))
        total = 0.0
        for i in range(0, len(order), tcfg.batch_size):
            idx = order[i : i + tcfg.batch_size]
            pred, target, mask = pretrain_forward(x[idx], model.params, model.cfg, rng)
            loss = masked_mse(pred, target, mask)
            _step(model, loss, opt, tcfg)
            total += loss.item() * len(idx)
        records.append(EpochRecord(epoch=epoch, train_loss=total / len(x),
                                   seconds=time.perf_counter() - t0))
    return records


# ---------------------------------------------------------------------------
# anomaly scoring


def anomaly_score(model: TSLANet, series, window_len: int, stride: int,
                  batch_size: int = 256) -> np.ndarray:
    """Per-timestep squared reconstruction error, averaged over channels and
    over every window covering the timestep."""
    if model.cfg.task != "anomaly":
        raise ValueError("anomaly_score needs a reconstruction (anomaly) model")
    if window_len != model.cfg.seq_len:
        raise ValueError(f"window_len {window_len} != model seq_len {model.cfg.seq_len}")
    windows, starts = sliding_windows(series, window_len, stride)
    T = starts[-1] + window_len
    recon = predict(model, windows, batch_size)
    err = ((recon - windows) ** 2).mean(axis=1)  # [N, L]
    total = np.zeros(T)
    count = np.zeros(T)
    for e, s in zip(err, starts):
        total[s : s + window_len] += e
        count[s : s + window_len] += 1.0
    return total / count


# ---------------------------------------------------------------------------
# logs and reports


def write_epoch_log(path, records: list[EpochRecord], task: str) -> None:
    """CSV with columns epoch, split, loss and the task's metric names."""
    names = TASK_METRICS[task]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "split", "loss", *names])
        for r in records:
            w.writerow([r.epoch, "train", repr(r.train_loss), *([""] * len(names))])
            if r.val_loss is not None:
                w.writerow([r.epoch, "val", repr(r.val_loss),
                             *[repr(r.metrics.get(n, float("nan"))) for n in names]])


def format_report(values: dict) -> str:
    lines = []
    for k in sorted(values):
        v = values[k]
        lines.append(f"{k}={repr(float(v)) if isinstance(v, (float, np.floating)) else v}")
    return "\n".join(lines) + "\n"


def write_report(path, values: dict) -> None:
    with open(path, "w") as fh:
        fh.write(format_report(values))
