"""Built-in oracle checks run by ``tslanet selftest``."""

from __future__ import annotations

import cmath
import contextlib
import time
from collections.abc import Callable, Iterator
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import model as mdl
from . import spectral
from .autodiff import Tensor


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _naive_dft(x: np.ndarray) -> np.ndarray:
    n = len(x)
    return np.array([
        sum(complex(x[m]) * cmath.exp(-2j * cmath.pi * ((k * m) % n) / n) for m in range(n))
        for k in range(n)
    ])


def check_dft_oracle() -> tuple[bool, str]:
    rng = np.random.default_rng(0)
    worst = 0.0
    for n in list(range(1, 33)) + [64, 128]:
        x = rng.standard_normal(n)
        ref = _naive_dft(x)
        err = np.max(np.abs(spectral.dft(x).values - ref)) / max(1.0, np.max(np.abs(ref)))
        worst = max(worst, err)
    return worst <= 1e-9, f"max rel err {worst:.2e}"


def check_round_trip() -> tuple[bool, str]:
    rng = np.random.default_rng(1)
    worst = 0.0
    for n in (1, 2, 7, 64, 97, 256):
        x = rng.standard_normal(n)
        worst = max(worst, np.max(np.abs(spectral.idft(spectral.dft(x), real=True) - x)))
        worst = max(worst, np.max(np.abs(spectral.irdft(spectral.rdft(x), n) - x)))
    return worst <= 1e-9, f"max abs err {worst:.2e}"


def check_convolution_theorem() -> tuple[bool, str]:
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 257))
        x, h = rng.standard_normal(n), rng.standard_normal(n)
        y = spectral.ifft(spectral.dft(x).values * spectral.dft(h).values).real
        worst = max(worst, np.max(np.abs(y - spectral.circular_convolve_direct(x, h))))
    return worst <= 1e-8, f"max abs err {worst:.2e}"


def check_op_gradients() -> tuple[bool, str]:
    rng = np.random.default_rng(3)
    worst = 0.0

    def leaf(*shape, positive=False):
        v = rng.standard_normal(shape)
        return Tensor(np.abs(v) + 0.5 if positive else v, requires_grad=True)

    for _ in range(3):
        a, b, c = leaf(3, 4), leaf(3, 4, positive=True), leaf(4, 2)
        x, k = leaf(2, 3, 8), leaf(2, 3, 3)
        g, bias = leaf(4), leaf(4)
        w = rng.standard_normal((3, 2))
        cases = [
            (lambda: ad.tensor_sum(ad.div(ad.gelu(a) * ad.sigmoid(a), b)), [a, b]),
            (lambda: ad.tensor_sum(ad.matmul(ad.log(b) + ad.exp(a), c) * w), [a, b, c]),
            (lambda: ad.tensor_sum(ad.square(ad.conv1d(x, k))), [x, k]),
            (lambda: ad.tensor_sum(ad.square(ad.layer_norm(a, g, bias))), [a, g, bias]),
            (lambda: ad.tensor_sum(ad.log_softmax(a) * b), [a]),
            (lambda: ad.tensor_sum(ad.square(ad.irdft(*ad.rdft(x), 8))), [x]),
        ]
        for f, inputs in cases:
            worst = max(worst, *ad.gradcheck(f, inputs).values())
    return worst <= 1e-4, f"max rel err {worst:.2e}"


def check_model_gradients() -> tuple[bool, str]:
    rng = np.random.default_rng(4)
    cfg = mdl.ModelConfig(seq_len=16, patch_size=4, embed_dim=8, n_layers=1, n_classes=2)
    model = mdl.TSLANet(cfg, seed=0)
    for k in ("layers.0.asb.wl_re", "layers.0.asb.wl_im"):
        model.params[k].data = 0.3 * rng.standard_normal(model.params[k].shape)
    x = rng.standard_normal((2, 1, 16))
    w = rng.standard_normal((2, 2))
    errs = ad.gradcheck(lambda: ad.tensor_sum(model(x) * w), list(model.params.values()))
    worst = max(errs.values())
    return worst <= 1e-3, f"max rel err {worst:.2e}"


def check_asb_identity() -> tuple[bool, str]:
    rng = np.random.default_rng(5)
    cfg = mdl.ModelConfig(seq_len=64, patch_size=8, embed_dim=6, n_layers=1, n_classes=2,
                          asb_local_enabled=False)
    lp = mdl.layer_params(mdl.init_params(cfg, rng), 0)
    lp["asb.wg_re"].data = np.ones_like(lp["asb.wg_re"].data)
    lp["asb.wg_im"].data = np.zeros_like(lp["asb.wg_im"].data)
    worst = 0.0
    for _ in range(50):
        x = rng.standard_normal((2, cfg.n_patches, 6))
        worst = max(worst, np.max(np.abs(mdl.asb_forward(Tensor(x), lp, cfg).data - x)))
    return worst <= 1e-9, f"max abs err {worst:.2e}"


CHECKS: list[tuple[str, Callable[[], tuple[bool, str]]]] = [
    ("dft oracle", check_dft_oracle),
    ("round trip", check_round_trip),
    ("convolution theorem", check_convolution_theorem),
    ("op gradients", check_op_gradients),
    ("model gradients", check_model_gradients),
    ("asb identity", check_asb_identity),
]


@contextlib.contextmanager
def corrupted_fft(scale: float = 1.001) -> Iterator[None]:
    """Test hook: perturb bin 1 of every forward transform."""
    original = spectral._transform

    def broken(a, inverse):
        out = original(a, inverse)
        if not inverse and out.shape[-1] > 1:
            out = out.copy()
            out[..., 1] *= scale
        return out

    spectral._transform = broken
    try:
        yield
    finally:
        spectral._transform = original


def run_selftest(corrupt_fft: bool = False) -> list[CheckResult]:
    results = []
    ctx = corrupted_fft() if corrupt_fft else contextlib.nullcontext()
    with ctx:
        for name, fn in CHECKS:
            t0 = time.perf_counter()
            try:
                ok, detail = fn()
            except Exception as exc:  # a crashing check is a failing check
                ok, detail = False, f"{type(exc).__name__}: {exc}"
            results.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    return results


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check'.ljust(width)}  status  detail"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.name.ljust(width)}  {status:6}  {r.detail} ({r.seconds:.2f}s)")
    return "\n".join(lines)
