"""Empirical probability measures on the real line.

Every measure is a uniform-weight sample kept sorted, so the quantile
function is a lookup into the order statistics and Wasserstein distances
reduce to integrals of quantile differences.
"""

from __future__ import annotations

from functools import cached_property
from typing import Callable

import numpy as np

__all__ = ["EmpiricalMeasure1D", "quantile", "wasserstein", "integrate"]


class EmpiricalMeasure1D:
    """Uniform empirical measure ``n^-1 sum_i delta_{x_i}``.

    Samples are sorted once at construction and the array is made
    read-only, so instances can be shared freely.
    """

    __slots__ = ("samples", "__dict__")

    def __init__(self, samples, *, presorted: bool = False):
        arr = np.array(samples, dtype=float).ravel()
        if arr.size == 0:
            raise ValueError("empirical measure needs at least one sample")
        if np.isnan(arr).any():
            raise ValueError("NaN sample in empirical measure")
        if not presorted:
            arr.sort()
        arr.flags.writeable = False
        self.samples = arr

    @classmethod
    def dirac(cls, x: float) -> "EmpiricalMeasure1D":
        return cls([x], presorted=True)

    @property
    def n(self) -> int:
        return self.samples.size

    def __len__(self) -> int:
        return self.samples.size

    def __repr__(self) -> str:
        return f"EmpiricalMeasure1D(n={self.n}, mean={self.mean:.6g})"

    @cached_property
    def mean(self) -> float:
        return float(self.samples.mean())

    @cached_property
    def abs_mean(self) -> float:
        return float(np.abs(self.samples).mean())

    @cached_property
    def second_moment(self) -> float:
        return float(np.mean(self.samples**2))

    def quantile(self, p):
        return quantile(self, p)

    def integrate(self, g: Callable) -> float:
        return integrate(self, g)

    def cdf(self, x):
        return np.searchsorted(self.samples, x, side="right") / self.n


def _quantile_index(n: int, p: np.ndarray) -> np.ndarray:
    idx = np.ceil(p * n).astype(np.int64) - 1
    return np.clip(idx, 0, n - 1)


def quantile(m: EmpiricalMeasure1D, p):
    """Generalized inverse of the distribution function of ``m``.

    ``quantile(p) = samples[ceil(p n) - 1]`` for ``p`` in (0, 1] and the
    smallest sample at ``p = 0``. Accepts scalars or arrays.
    """
    p_arr = np.asarray(p, dtype=float)
    if np.any((p_arr < 0.0) | (p_arr > 1.0)) or np.isnan(p_arr).any():
        raise ValueError("quantile level must lie in [0, 1]")
    out = m.samples[_quantile_index(m.n, p_arr)]
    if out.ndim == 0:
        return float(out)
    return out


def integrate(m: EmpiricalMeasure1D, g: Callable) -> float:
    """Mean of ``g`` over the samples; ``g`` is called once on the array."""
    vals = np.asarray(g(m.samples), dtype=float)
    if vals.ndim == 0:
        return float(vals)
    return float(vals.mean())


def wasserstein(m1: EmpiricalMeasure1D, m2: EmpiricalMeasure1D, order: int = 2) -> float:
    """Exact W_1 or W_2 between two empirical measures.

    The two quantile functions are piecewise constant on the grids
    ``k/n`` and ``k/m``; the L^p norm of their difference is summed
    exactly over the merged grid.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    a, b = m1.samples, m2.samples
    if a.size == b.size:
        diff = np.abs(a - b)
        weights = None
    else:
        breaks = np.union1d(np.arange(1, a.size + 1) / a.size, np.arange(1, b.size + 1) / b.size)
        breaks[-1] = 1.0
        lengths = np.diff(breaks, prepend=0.0)
        # each merged interval (lo, hi] sits inside one step of each quantile function
        ia = np.searchsorted(np.arange(1, a.size + 1) / a.size, breaks, side="left")
        ib = np.searchsorted(np.arange(1, b.size + 1) / b.size, breaks, side="left")
        ia = np.minimum(ia, a.size - 1)
        ib = np.minimum(ib, b.size - 1)
        diff = np.abs(a[ia] - b[ib])
        weights = lengths
    if order == 1:
        val = diff.mean() if weights is None else float(np.dot(weights, diff))
        return float(val)
    sq = (diff**2).mean() if weights is None else float(np.dot(weights, diff**2))
    return float(np.sqrt(sq))
