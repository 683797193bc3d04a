import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linear_sum_assignment

from cmkv.measure import EmpiricalMeasure1D, integrate, quantile, wasserstein


def brute_force_w(a, b, order):
    """Optimal transport cost between two uniform empirical laws.

    Both laws are replicated to the least common multiple of their sizes,
    which turns every coupling into a convex combination of permutations
    (Birkhoff), so the assignment problem gives the exact minimum.
    """
    a, b = np.asarray(a, float), np.asarray(b, float)
    L = np.lcm(a.size, b.size)
    A, B = np.repeat(a, L // a.size), np.repeat(b, L // b.size)
    cost = np.abs(A[:, None] - B[None, :]) ** order
    r, c = linear_sum_assignment(cost)
    return cost[r, c].mean() ** (1.0 / order)


def test_construction_sorts_and_freezes():
    m = EmpiricalMeasure1D([3.0, 1.0, 2.0])
    assert m.samples.tolist() == [1.0, 2.0, 3.0]
    with pytest.raises(ValueError):
        m.samples[0] = 7.0


@pytest.mark.parametrize("bad", [[], [1.0, np.nan]])
def test_construction_rejects(bad):
    with pytest.raises(ValueError):
        EmpiricalMeasure1D(bad)


def test_quantile_examples():
    m = EmpiricalMeasure1D([1, 2, 3])
    assert quantile(m, 0.5) == 2
    assert quantile(EmpiricalMeasure1D([4.2]), 0.37) == 4.2
    two = EmpiricalMeasure1D([0.0, 10.0])
    assert quantile(two, 0.5) == 0.0
    assert quantile(two, 0.5 + 1e-9) == 10.0


def test_quantile_matches_cdf_enumeration():
    rng = np.random.default_rng(1)
    m = EmpiricalMeasure1D(rng.normal(size=7))
    for p in np.linspace(0.01, 1.0, 57):
        q = quantile(m, p)
        # generalized inverse: smallest sample whose CDF reaches p
        ok = [x for x in m.samples if np.mean(m.samples <= x) >= p - 1e-15]
        assert q == min(ok)


def test_quantile_rejects_out_of_range():
    with pytest.raises(ValueError):
        quantile(EmpiricalMeasure1D([1.0]), 1.5)


def test_integrate_examples():
    assert integrate(EmpiricalMeasure1D([1, 2, 3]), lambda x: x) == 2
    assert integrate(EmpiricalMeasure1D([-1, 1]), lambda x: x**2) == 1
    m = EmpiricalMeasure1D(np.random.default_rng(0).normal(size=11))
    assert integrate(m, lambda x: np.ones_like(x)) == 1.0


def test_wasserstein_examples():
    d0, d1 = EmpiricalMeasure1D.dirac(0.0), EmpiricalMeasure1D.dirac(1.0)
    assert wasserstein(d0, d1, 1) == 1.0
    assert wasserstein(d0, d1, 2) == 1.0
    m = EmpiricalMeasure1D([0.3, -2.0, 5.0])
    assert wasserstein(m, m, 2) == 0.0
    a, b = EmpiricalMeasure1D([0, 1]), EmpiricalMeasure1D([0, 0, 1, 1])
    assert wasserstein(a, b, 1) == 0.0 and wasserstein(a, b, 2) == 0.0


def test_wasserstein_rejects_order():
    with pytest.raises(ValueError):
        wasserstein(EmpiricalMeasure1D([0.0]), EmpiricalMeasure1D([1.0]), 3)


def test_brute_force_oracle_on_hand_example():
    # {0, 3} vs {1}: every coupling sends both atoms to 1 -> W2^2 = (1 + 4)/2
    assert brute_force_w([0, 3], [1], 2) ** 2 == pytest.approx(2.5)


small = st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=4)


@settings(max_examples=200, deadline=None)
@given(small, small)
def test_w2_equals_exhaustive_coupling(a, b):
    w = wasserstein(EmpiricalMeasure1D(a), EmpiricalMeasure1D(b), 2)
    assert w**2 == pytest.approx(brute_force_w(a, b, 2) ** 2, abs=1e-10)


@settings(max_examples=200, deadline=None)
@given(small, small, small)
def test_triangle_and_order(a, b, c):
    A, B, C = (EmpiricalMeasure1D(v) for v in (a, b, c))
    for p in (1, 2):
        assert wasserstein(A, C, p) <= wasserstein(A, B, p) + wasserstein(B, C, p) + 1e-9
    assert wasserstein(A, B, 1) <= wasserstein(A, B, 2) + 1e-12


def test_wasserstein_symmetric_unequal_sizes():
    rng = np.random.default_rng(3)
    a, b = EmpiricalMeasure1D(rng.normal(size=6)), EmpiricalMeasure1D(rng.normal(size=9))
    assert wasserstein(a, b, 2) == pytest.approx(wasserstein(b, a, 2), abs=1e-14)
    assert wasserstein(a, b, 2) == pytest.approx(brute_force_w(a.samples, b.samples, 2), abs=1e-12)
