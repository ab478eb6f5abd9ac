"""Discrete Fourier machinery.

All transforms act on the last axis of their input, so a batch of series can
be transformed in one call.  The forward transform is unnormalized and the
inverse carries the 1/N factor.  Power-of-two lengths go through an iterative
radix-2 FFT; every other length falls back to direct O(N^2) summation.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "Spectrum",
    "fft",
    "ifft",
    "dft",
    "idft",
    "rdft",
    "irdft",
    "expand_half",
    "power_spectrum",
    "circular_convolve_direct",
    "direct_dft",
]


@dataclass(frozen=True)
class Spectrum:
    """Frequency-domain values with the length of the series they came from.

    ``values`` is a complex array whose last axis indexes frequency bins.  When
    ``half`` is true only bins ``0..n_time // 2`` are stored and the rest are
    implied by conjugate symmetry.
    """

    values: np.ndarray
    n_time: int
    half: bool = False

    def __post_init__(self):
        k = self.values.shape[-1] if self.values.ndim else 0
        expected = self.n_time // 2 + 1 if self.half else self.n_time
        if self.n_time < 1 or k != expected:
            raise ValueError(
                f"spectrum with n_time={self.n_time}, half={self.half} "
                f"needs {expected} bins, got {k}"
            )

    @property
    def n_bins(self) -> int:
        return self.values.shape[-1]

    @property
    def re(self) -> np.ndarray:
        return self.values.real

    @property
    def im(self) -> np.ndarray:
        return self.values.imag


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@lru_cache(maxsize=64)
def _twiddle_matrix(n: int, inverse: bool) -> np.ndarray:
    # Reduce k*n modulo N before scaling so large indices keep full precision.
    idx = np.arange(n)
    kn = np.outer(idx, idx) % n
    sign = 1.0 if inverse else -1.0
    w = np.exp(sign * 2j * np.pi * kn / n)
    w.setflags(write=False)
    return w


@lru_cache(maxsize=32)
def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    rev.setflags(write=False)
    return rev


def _fft_pow2(a: np.ndarray, inverse: bool) -> np.ndarray:
    n = a.shape[-1]
    lead = a.shape[:-1]
    out = a[..., _bit_reverse(n)]
    sign = 1.0 if inverse else -1.0
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / size)
        blocks = out.reshape(*lead, n // size, size)
        even = blocks[..., :half]
        odd = blocks[..., half:] * tw
        out = np.concatenate([even + odd, even - odd], axis=-1).reshape(*lead, n)
        size *= 2
    return out


def direct_dft(a, inverse: bool = False) -> np.ndarray:
    """Unnormalized transform by direct summation over the last axis."""
    a = np.asarray(a, dtype=np.complex128)
    n = a.shape[-1]
    return a @ _twiddle_matrix(n, inverse).T


def _transform(a: np.ndarray, inverse: bool) -> np.ndarray:
    n = a.shape[-1]
    if n == 0:
        raise ValueError("cannot transform an empty array")
    if _is_pow2(n):
        return _fft_pow2(a, inverse)
    return direct_dft(a, inverse)


def fft(a) -> np.ndarray:
    """Unnormalized forward transform of complex or real data (last axis)."""
    return _transform(np.asarray(a, dtype=np.complex128), inverse=False)


def ifft(a) -> np.ndarray:
    """Inverse transform including the 1/N factor (last axis)."""
    a = np.asarray(a, dtype=np.complex128)
    return _transform(a, inverse=True) / a.shape[-1]


def _as_real(x) -> np.ndarray:
    x = np.asarray(x)
    if np.iscomplexobj(x):
        raise ValueError("expected a real-valued array")
    x = x.astype(np.float64, copy=False)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ValueError("cannot transform an empty array")
    return x


def dft(x) -> Spectrum:
    """Full spectrum of a real signal, conjugate-symmetric bit for bit."""
    return expand_half(rdft(x))


def idft(X: Spectrum, real: bool = False, tol: float = 1e-10) -> np.ndarray:
    """Inverse of :func:`dft`.

    With ``real=True`` the imaginary residue is dropped after checking it is
    below ``tol`` relative to the output scale; a spectrum that is not
    conjugate-symmetric then raises ``ValueError``.
    """
    X = expand_half(X)
    x = ifft(X.values)
    if not real:
        return x
    scale = max(1.0, float(np.max(np.abs(x.real), initial=0.0)))
    resid = float(np.max(np.abs(x.imag), initial=0.0))
    if resid > tol * scale:
        raise ValueError(f"spectrum is not conjugate-symmetric (imag residue {resid:.3e})")
    return x.real.copy()


def rdft(x) -> Spectrum:
    x = _as_real(x)
    n = x.shape[-1]
    full = fft(x)
    return Spectrum(full[..., : n // 2 + 1].copy(), n_time=n, half=True)


def expand_half(X: Spectrum) -> Spectrum:
    """Rebuild the full spectrum from a half spectrum via X[N-k] = conj(X[k])."""
    if not X.half:
        return X
    n = X.n_time
    half = X.values
    full = np.empty(half.shape[:-1] + (n,), dtype=np.complex128)
    full[..., : half.shape[-1]] = half
    k = np.arange(half.shape[-1], n)
    full[..., k] = np.conj(half[..., n - k])
    # Self-conjugate bins must be real for a real signal.
    full[..., 0] = full[..., 0].real
    if n % 2 == 0:
        full[..., n // 2] = full[..., n // 2].real
    return Spectrum(full, n_time=n, half=False)


def irdft(X, n_time: int | None = None) -> np.ndarray:
    """Real signal of length ``n_time`` from a half spectrum.

    ``X`` may be a half :class:`Spectrum` or a bare complex array of bins, in
    which case ``n_time`` is required.  The imaginary parts of the DC bin and
    (for even lengths) the Nyquist bin are ignored.
    """
    if isinstance(X, Spectrum):
        if not X.half:
            raise ValueError("irdft expects a half spectrum")
        if n_time is not None and n_time != X.n_time:
            raise ValueError(f"n_time={n_time} does not match spectrum n_time={X.n_time}")
        values, n = X.values, X.n_time
    else:
        if n_time is None:
            raise ValueError("n_time is required for a bare bin array")
        values, n = np.asarray(X, dtype=np.complex128), int(n_time)
        if n < 1 or values.shape[-1] != n // 2 + 1:
            raise ValueError(
                f"{values.shape[-1]} bins inconsistent with n_time={n} "
                f"(expected {n // 2 + 1})"
            )
    full = expand_half(Spectrum(values, n_time=n, half=True)).values
    return ifft(full).real.copy()


def power_spectrum(X: Spectrum | np.ndarray) -> np.ndarray:
    v = X.values if isinstance(X, Spectrum) else np.asarray(X, dtype=np.complex128)
    return v.real * v.real + v.imag * v.imag


def circular_convolve_direct(x, h) -> np.ndarray:
    """y[n] = sum_m x[m] h[(n - m) mod N], by explicit summation."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if x.ndim != 1 or h.ndim != 1 or x.shape != h.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {h.shape}")
    n = x.shape[0]
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return (h[idx] * x[None, :]).sum(axis=1)
