import cmath

import numpy as np
import pytest


def naive_dft(x, inverse=False):
    """Textbook O(N^2) sum in pure Python; independent of tslanet.spectral."""
    n = len(x)
    sign = 1 if inverse else -1
    return [
        sum(complex(x[m]) * cmath.exp(sign * 2j * cmath.pi * ((k * m) % n) / n) for m in range(n))
        for k in range(n)
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
