"""TSLANet: patch embedding, adaptive spectral blocks, interactive convolutions.

Shapes follow ``[batch, channels, ...]``.  Channels are processed
independently with shared weights; every block sees ``[B, C, M, D]`` where
``M`` is the number of patches and ``D`` the embedding width.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

TASKS = ("classification", "forecasting", "anomaly")
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    seq_len: int
    channels: int = 1
    patch_size: int = 16
    stride: int | None = None
    embed_dim: int = 64
    n_layers: int = 2
    icb_kernel_small: int = 1
    icb_kernel_large: int = 3
    dropout: float = 0.0
    asb_enabled: bool = True
    asb_local_enabled: bool = True
    icb_enabled: bool = True
    mask_ratio: float = 0.4
    task: str = "classification"
    n_classes: int | None = None
    horizon: int | None = None
    fft_axis: str = "patches"
    mask_temperature: float = 0.1
    mask_mode: str = "soft"
    revin: bool = True
    revin_eps: float = 1e-5
    norm_eps: float = 1e-5

    def __post_init__(self):
        if self.stride is None:
            self.stride = max(1, self.patch_size // 2)
        self.validate()

    def validate(self) -> None:
        for name in ("seq_len", "channels", "patch_size", "stride", "embed_dim", "n_layers",
                     "icb_kernel_small", "icb_kernel_large"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.patch_size > self.seq_len:
            raise ValueError(f"patch_size {self.patch_size} exceeds seq_len {self.seq_len}")
        if not (self.asb_enabled or self.icb_enabled):
            raise ValueError("at least one of asb_enabled, icb_enabled must be true")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError("mask_ratio must be in (0, 1)")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.task == "classification" and (self.n_classes or 0) < 2:
            raise ValueError("classification needs n_classes >= 2")
        if self.task == "forecasting" and (self.horizon or 0) < 1:
            raise ValueError("forecasting needs horizon >= 1")
        if self.task == "anomaly" and self.covered_len != self.seq_len:
            raise ValueError(
                f"anomaly reconstruction needs patches to cover seq_len={self.seq_len} "
                f"exactly; (seq_len - patch_size) must be a multiple of stride"
            )
        if self.fft_axis not in ("patches", "embedding"):
            raise ValueError("fft_axis must be 'patches' or 'embedding'")
        if self.mask_mode not in ("soft", "hard"):
            raise ValueError("mask_mode must be 'soft' or 'hard'")
        if self.mask_temperature <= 0:
            raise ValueError("mask_temperature must be positive")

    @property
    def n_patches(self) -> int:
        return (self.seq_len - self.patch_size) // self.stride + 1

    @property
    def n_bins(self) -> int:
        """Half-spectrum bins along the transformed axis."""
        n = self.n_patches if self.fft_axis == "patches" else self.embed_dim
        return n // 2 + 1

    @property
    def covered_len(self) -> int:
        return (self.n_patches - 1) * self.stride + self.patch_size


# ---------------------------------------------------------------------------
# parameters


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def filter_shape(cfg: ModelConfig) -> tuple[int, int]:
    if cfg.fft_axis == "patches":
        return cfg.n_bins, cfg.embed_dim
    return cfg.n_patches, cfg.n_bins


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """Fresh parameters.  Only enabled blocks get weights."""
    p, d, m = cfg.patch_size, cfg.embed_dim, cfg.n_patches
    raw: dict[str, np.ndarray] = {
        "patch_proj.weight": _uniform(rng, (p, d), p),
        "patch_proj.bias": _uniform(rng, (d,), p),
        "pos_embed": 0.02 * rng.standard_normal((m, d)),
        "mask_token": np.zeros(d),
    }
    fshape = filter_shape(cfg)
    for i in range(cfg.n_layers):
        pre = f"layers.{i}."
        if cfg.asb_enabled:
            raw[pre + "asb_norm.gain"] = np.ones(d)
            raw[pre + "asb_norm.bias"] = np.zeros(d)
            raw[pre + "asb.wg_re"] = 0.01 * rng.standard_normal(fshape)
            raw[pre + "asb.wg_im"] = 0.01 * rng.standard_normal(fshape)
            if cfg.asb_local_enabled:
                raw[pre + "asb.wl_re"] = np.zeros(fshape)
                raw[pre + "asb.wl_im"] = np.zeros(fshape)
                raw[pre + "asb.theta_raw"] = np.zeros(())
        if cfg.icb_enabled:
            raw[pre + "icb_norm.gain"] = np.ones(d)
            raw[pre + "icb_norm.bias"] = np.zeros(d)
            for name, k in (("conv1", cfg.icb_kernel_small), ("conv2", cfg.icb_kernel_large),
                            ("conv3", 1)):
                raw[pre + f"icb.{name}.weight"] = _uniform(rng, (d, d, k), d * k)
                raw[pre + f"icb.{name}.bias"] = _uniform(rng, (d,), d * k)
    raw["recon_head.weight"] = _uniform(rng, (d, p), d)
    raw["recon_head.bias"] = np.zeros(p)
    if cfg.task == "classification":
        raw["head.weight"] = _uniform(rng, (d, cfg.n_classes), d)
        raw["head.bias"] = np.zeros(cfg.n_classes)
    elif cfg.task == "forecasting":
        raw["head.weight"] = _uniform(rng, (m * d, cfg.horizon), m * d)
        raw["head.bias"] = np.zeros(cfg.horizon)
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in raw.items()}


def expected_param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count for ``cfg``."""
    p, d, m = cfg.patch_size, cfg.embed_dim, cfg.n_patches
    fsize = filter_shape(cfg)[0] * filter_shape(cfg)[1]
    total = p * d + d + m * d + d + d * p + p
    per_layer = 0
    if cfg.asb_enabled:
        per_layer += 2 * d + 2 * fsize
        if cfg.asb_local_enabled:
            per_layer += 2 * fsize + 1
    if cfg.icb_enabled:
        per_layer += 2 * d
        per_layer += sum(d * d * k + d for k in (cfg.icb_kernel_small, cfg.icb_kernel_large, 1))
    total += cfg.n_layers * per_layer
    if cfg.task == "classification":
        total += d * cfg.n_classes + cfg.n_classes
    elif cfg.task == "forecasting":
        total += m * d * cfg.horizon + cfg.horizon
    return total


def layer_params(params: dict[str, Tensor], i: int) -> dict[str, Tensor]:
    pre = f"layers.{i}."
    return {k[len(pre):]: v for k, v in params.items() if k.startswith(pre)}


# ---------------------------------------------------------------------------
# building blocks


def patchify(S, cfg: ModelConfig) -> Tensor:
    """``[..., C, L] -> [..., C, M, p]``; patch i spans ``[i*s, i*s + p)``."""
    S = S if isinstance(S, Tensor) else Tensor(S)
    if cfg.patch_size > S.shape[-1]:
        raise ValueError(f"patch_size {cfg.patch_size} exceeds series length {S.shape[-1]}")
    return ad.unfold(S, cfg.patch_size, cfg.stride)


def embed(patches: Tensor, params: dict[str, Tensor]) -> Tensor:
    proj = ad.matmul(patches, params["patch_proj.weight"]) + params["patch_proj.bias"]
    return proj + params["pos_embed"]


def _theta(lp: dict[str, Tensor]) -> Tensor:
    return ad.sigmoid(lp["asb.theta_raw"])


def spectral_mask(power: Tensor, theta: Tensor, cfg: ModelConfig, hard: bool) -> Tensor:
    """Mask over frequency bins (last axis) from the max-normalized power."""
    pn = ad.normalize_by_max(power, axis=-1)
    if hard:
        return Tensor((pn.data > theta.data).astype(np.float64))
    return ad.sigmoid(ad.scalar_mul(pn - theta, 1.0 / cfg.mask_temperature))


def asb_forward(x: Tensor, lp: dict[str, Tensor], cfg: ModelConfig, train: bool = False) -> Tensor:
    """Adaptive spectral block on ``[..., M, D]``."""
    if not cfg.asb_enabled:
        return x
    wg = (lp["asb.wg_re"], lp["asb.wg_im"])
    if cfg.fft_axis == "patches":
        nd = x.ndim
        swap = tuple(range(nd - 2)) + (nd - 1, nd - 2)
        xt = ad.permute(x, swap)  # [..., D, M]
        n = xt.shape[-1]
        wg = tuple(ad.permute(w, (1, 0)) for w in wg)  # [D, K]
    else:
        xt = x
        n = xt.shape[-1]
    F = ad.rdft(xt)
    fr, fi = ad.complex_mul(wg, F)
    if cfg.asb_local_enabled:
        wl = (lp["asb.wl_re"], lp["asb.wl_im"])
        if cfg.fft_axis == "patches":
            wl = tuple(ad.permute(w, (1, 0)) for w in wl)
        power = ad.square(F[0]) + ad.square(F[1])
        hard = (not train) and cfg.mask_mode == "hard"
        mask = spectral_mask(power, _theta(lp), cfg, hard)
        lr, li = ad.complex_mul(wl, (F[0] * mask, F[1] * mask))
        fr, fi = fr + lr, fi + li
    out = ad.irdft(fr, fi, n)
    if cfg.fft_axis == "patches":
        out = ad.permute(out, swap)
    return out


def icb_forward(x: Tensor, lp: dict[str, Tensor], cfg: ModelConfig, train: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
    """Interactive convolution block on ``[..., M, D]``, convolving along M."""
    if not cfg.icb_enabled:
        return x
    lead = x.shape[:-2]
    m, d = x.shape[-2:]
    h = ad.reshape(x, (-1, m, d)).permute(0, 2, 1)  # [B', D, M]

    def conv(name, inp):
        return ad.conv1d(inp, lp[f"icb.{name}.weight"], lp[f"icb.{name}.bias"], "same")

    c1 = conv("conv1", h)
    c2 = conv("conv2", h)
    a1 = ad.gelu(c1) * c2
    a2 = ad.gelu(c2) * c1
    mixed = ad.dropout(a1 + a2, cfg.dropout, rng, train)
    out = conv("conv3", mixed)
    return ad.reshape(out.permute(0, 2, 1), lead + (m, d))


def backbone(h: Tensor, params: dict[str, Tensor], cfg: ModelConfig, train: bool = False,
             rng: np.random.Generator | None = None) -> Tensor:
    """Stacked pre-norm residual ASB and ICB layers."""
    for i in range(cfg.n_layers):
        lp = layer_params(params, i)
        if cfg.asb_enabled:
            z = ad.layer_norm(h, lp["asb_norm.gain"], lp["asb_norm.bias"], cfg.norm_eps)
            h = h + ad.dropout(asb_forward(z, lp, cfg, train), cfg.dropout, rng, train)
        if cfg.icb_enabled:
            z = ad.layer_norm(h, lp["icb_norm.gain"], lp["icb_norm.bias"], cfg.norm_eps)
            h = h + icb_forward(z, lp, cfg, train, rng)
    return h


@dataclass
class RevINState:
    mean: np.ndarray
    std: np.ndarray
    eps: float


def revin_normalize(x, eps: float = 1e-5) -> tuple[Tensor, RevINState]:
    """Per-(batch, channel) standardization over the time axis."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    std = np.sqrt(x.data.var(axis=-1, keepdims=True) + eps)
    return (x - mu) / std, RevINState(mu, std, eps)


def revin_denormalize(y, state: RevINState) -> Tensor:
    y = y if isinstance(y, Tensor) else Tensor(y)
    return y * state.std + state.mean


def apply_patch_mask(S_PE: Tensor, mask_ratio: float, rng: np.random.Generator,
                     mask_token: Tensor | None = None) -> tuple[Tensor, np.ndarray]:
    """Replace a random subset of patches with the mask token.

    ``S_PE`` is ``[C, M, D]`` or ``[B, C, M, D]``; one mask is drawn per series
    and shared across its channels.  ``floor(mask_ratio * M)`` patches are
    masked, raised to one when that floor is zero and ``M > 1``.
    """
    if not 0.0 < mask_ratio < 1.0:
        raise ValueError("mask_ratio must be in (0, 1)")
    m, d = S_PE.shape[-2:]
    count = int(np.floor(mask_ratio * m))
    if count == 0 and m > 1:
        count = 1
    batch = S_PE.shape[:-3]
    n_series = int(np.prod(batch)) if batch else 1
    mask = np.zeros((n_series, m), dtype=bool)
    for b in range(n_series):
        mask[b, rng.choice(m, size=count, replace=False)] = True
    mask = mask.reshape(batch + (m,))
    mf = mask.astype(np.float64)[..., None, :, None]  # broadcast over C and D
    token = mask_token if mask_token is not None else Tensor(np.zeros(d))
    return S_PE * (1.0 - mf) + token * mf, mask


# ---------------------------------------------------------------------------
# full network


def _prepare(S, cfg: ModelConfig) -> Tensor:
    S = S if isinstance(S, Tensor) else Tensor(S)
    if S.ndim == 2:
        S = ad.reshape(S, (1,) + S.shape)
    if S.ndim != 3 or S.shape[1] != cfg.channels or S.shape[2] != cfg.seq_len:
        raise ValueError(
            f"expected input [B, {cfg.channels}, {cfg.seq_len}], got {list(S.shape)}"
        )
    return S


def reconstruct_patches(h: Tensor, params: dict[str, Tensor]) -> Tensor:
    return ad.matmul(h, params["recon_head.weight"]) + params["recon_head.bias"]


def tslanet_forward(S, params: dict[str, Tensor], cfg: ModelConfig, train: bool = False,
                    rng: np.random.Generator | None = None) -> Tensor:
    """Task output for a batch ``[B, C, L]``.

    classification -> logits ``[B, n_classes]``; forecasting -> ``[B, C, H]``;
    anomaly -> reconstruction ``[B, C, L]``.
    """
    S = _prepare(S, cfg)
    state = None
    if cfg.task == "forecasting" and cfg.revin:
        S, state = revin_normalize(S, cfg.revin_eps)
    h = embed(patchify(S, cfg), params)
    h = backbone(h, params, cfg, train, rng)
    if cfg.task == "classification":
        pooled = ad.mean(h, axis=(1, 2))
        return ad.matmul(pooled, params["head.weight"]) + params["head.bias"]
    if cfg.task == "forecasting":
        b, c, m, d = h.shape
        y = ad.matmul(ad.reshape(h, (b, c, m * d)), params["head.weight"]) + params["head.bias"]
        return revin_denormalize(y, state) if state is not None else y
    patches = reconstruct_patches(h, params)
    return ad.fold_mean(patches, cfg.seq_len, cfg.stride)


def pretrain_forward(S, params: dict[str, Tensor], cfg: ModelConfig, rng: np.random.Generator,
                     train: bool = True) -> tuple[Tensor, Tensor, np.ndarray]:
    """Masked-patch reconstruction.  Returns (predicted patches, target patches, mask)."""
    S = _prepare(S, cfg)
    if cfg.task == "forecasting" and cfg.revin:
        S, _ = revin_normalize(S, cfg.revin_eps)
    target = patchify(S, cfg)
    h = embed(target, params)
    h, mask = apply_patch_mask(h, cfg.mask_ratio, rng, params["mask_token"])
    h = backbone(h, params, cfg, train, rng)
    return reconstruct_patches(h, params), target, mask


class TSLANet:
    """Config plus named parameters, with convenience forward methods."""

    def __init__(self, cfg: ModelConfig, seed: int | np.random.Generator = 0):
        self.cfg = cfg
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.params = init_params(cfg, rng)

    def __call__(self, S, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        return tslanet_forward(S, self.params, self.cfg, train, rng)

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        for k, v in state.items():
            if k not in self.params:
                if strict:
                    raise KeyError(f"unexpected parameter {k!r}")
                continue
            if self.params[k].shape != v.shape:
                raise ValueError(f"shape mismatch for {k}: {self.params[k].shape} vs {v.shape}")
            self.params[k].data = np.array(v, dtype=np.float64)
        if strict:
            missing = set(self.params) - set(state)
            if missing:
                raise KeyError(f"missing parameters: {sorted(missing)}")

    def load_backbone(self, other: TSLANet) -> None:
        """Copy every non-head parameter of matching shape from ``other``."""
        for k, v in other.params.items():
            if k.startswith("head.") or k not in self.params:
                continue
            if self.params[k].shape == v.shape:
                self.params[k].data = v.data.copy()


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: TSLANet, extra: dict[str, np.ndarray] | None = None,
                    meta: dict | None = None) -> None:
    """npz container: config JSON, format version, named little-endian float64 arrays."""
    arrays = {f"param/{k}": v.data.astype("<f8") for k, v in model.params.items()}
    for k, v in (extra or {}).items():
        arrays[f"extra/{k}"] = np.asarray(v, dtype="<f8")
    header = {"format_version": CHECKPOINT_VERSION, "config": asdict(model.cfg), "meta": meta or {}}
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[TSLANet, dict[str, np.ndarray], dict]:
    with np.load(Path(path), allow_pickle=False) as z:
        header = json.loads(bytes(z["header"]).decode())
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
        known = {f.name for f in fields(ModelConfig)}
        cfg = ModelConfig(**{k: v for k, v in header["config"].items() if k in known})
        params = {k[6:]: z[k].astype(np.float64) for k in z.files if k.startswith("param/")}
        extra = {k[6:]: z[k].astype(np.float64) for k in z.files if k.startswith("extra/")}
    model = TSLANet(cfg, seed=0)
    model.load_state_dict(params)
    return model, extra, header.get("meta", {})
