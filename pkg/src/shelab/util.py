"""Shared numerics: deterministic RNG streams, log-log fits, compensated sums."""

from __future__ import annotations

import hashlib

import numpy as np
import scipy.fft

from .errors import RegressionError

_MASK64 = 0xFFFFFFFFFFFFFFFF
_STREAM_SALT = 0x9E3779B97F4A7C15


def rng_for(seed_root: int, a: int = 0, b: int = 0) -> np.random.Generator:
    """Counter-keyed generator: a pure function of (seed_root, a, b).

    Streams with distinct (a, b) never overlap, so any worker may produce
    the draws for any (step, block) independently and identically.
    """
    key = np.array([int(seed_root) & _MASK64, _STREAM_SALT], dtype=np.uint64)
    counter = np.array([0, 0, int(a) & _MASK64, int(b) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def fit_loglog(x, y):
    """Least-squares fit of log y against log x.

    Returns (slope, intercept, r_squared). Points with y <= 0 are rejected.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise RegressionError("fit_loglog needs two equal-length 1-d arrays")
    if x.size < 2:
        raise RegressionError("fit_loglog needs at least 2 points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise RegressionError("fit_loglog needs strictly positive data")
    lx = np.log(x)
    ly = np.log(y)
    if np.ptp(lx) < 1e-12:
        raise RegressionError("fit_loglog abscissae are degenerate")
    design = np.column_stack([lx, np.ones_like(lx)])
    coef, _, _, _ = np.linalg.lstsq(design, ly, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    resid = ly - design @ coef
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return slope, intercept, r2


class KahanSum:
    """Compensated accumulator; totals are independent of chunking order."""

    def __init__(self, shape=()):
        self.total = np.zeros(shape, dtype=float)
        self._comp = np.zeros(shape, dtype=float)
        self.count = 0

    def add(self, values, n=1):
        values = np.asarray(values, dtype=float)
        y = values - self._comp
        t = self.total + y
        self._comp = (t - self.total) - y
        self.total = t
        self.count += n

    @property
    def mean(self):
        return self.total / max(self.count, 1)


def next_odd_fast_len(n: int) -> int:
    """Smallest odd FFT-friendly length >= n."""
    k = scipy.fft.next_fast_len(max(int(n), 3), real=True)
    while k % 2 == 0:
        k = scipy.fft.next_fast_len(k + 1, real=True)
    return k


def gauss_legendre(order: int, a: float, b: float):
    """Gauss-Legendre nodes and weights on [a, b]."""
    x, w = np.polynomial.legendre.leggauss(order)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
