import numpy as np
import pytest

from cmkv.diagnostics import (
    aggregate_covariation,
    convergence_study,
    covariation_study,
    estimate_covariation,
    exchangeability_ks,
    moment_audit,
    moment_audit_samples,
)
from cmkv.finite_system import FiniteSimConfig, simulate_finite
from cmkv.measure import EmpiricalMeasure1D, wasserstein
from cmkv.model import NumericalAbort, build_model


def test_requires_jump_log():
    m = build_model("example1")
    b = simulate_finite(FiniteSimConfig(m, 5, 0.1, 0.01))
    with pytest.raises(ValueError):
        estimate_covariation(b, (0, 1), m)


def test_self_covariation_starts_at_zero_and_grows():
    m = build_model("example3")
    b = simulate_finite(FiniteSimConfig(m, 20, 1.0, 0.01, seed=3, record_jump_log=True))
    est = estimate_covariation(b, (4, 4), m)
    assert est.realized[0] == 0.0 and est.theoretical[0] == 0.0
    assert np.all(np.diff(est.realized) >= 0)
    assert est.theoretical[-1] == pytest.approx(2.0)


def test_example1_cross_covariation_ratio():
    est = covariation_study(build_model("example1"), 100, 1.0, 0.01, seed=1, reps=60)
    assert 0.9 <= est.endpoint_ratio <= 1.1


def test_example2_cross_covariation_vanishes():
    est = covariation_study(build_model("example2"), 100, 1.0, 0.01, seed=1, reps=60)
    assert est.theoretical[-1] == 0.0
    assert abs(est.realized[-1]) <= 4 * est.stderr[-1]


def test_example1_all_pairs_share_one_noise():
    m = build_model("example1")
    N = 40
    pairs = [(0, 1), (2, 7), (10, 33), (5, 5), (21, 21)]
    ests = {p: [] for p in pairs}
    for r in range(40):
        b = simulate_finite(FiniteSimConfig(m, N, 1.0, 0.01, seed=2, record_jump_log=True, replication=r))
        for p in pairs:
            ests[p].append(estimate_covariation(b, p, m))
    agg = {p: aggregate_covariation(v) for p, v in ests.items()}
    ends = np.array([agg[p].realized[-1] for p in pairs])
    se = max(agg[p].stderr[-1] for p in pairs)
    # the self-pair misses its own events: relative correction 1/N
    assert np.ptp(ends) <= 5 * se + 2.0 / N


def test_convergence_identical_seed_zero_dynamics():
    rows = convergence_study(build_model("zero"), [30], 30, 0.1, 0.01, reps=3, seed=5, limit_seed=5)
    assert rows[0].median_w2 == 0.0


def test_convergence_baseline_scaling():
    m = build_model({"model": "custom", "b": "0", "sigma": "0", "f": "1e-12", "psi": "0 * u", "f_max": 1e-12})
    N_list = [25, 100, 400]
    rows = convergence_study(m, N_list, 4000, 0.01, 0.01, reps=20, seed=1)
    scaled = np.array([r.median_w2 * np.sqrt(r.N) for r in rows])
    assert np.all(scaled / scaled[0] <= 2.0) and np.all(scaled / scaled[0] >= 0.5)


def test_convergence_validates_inputs():
    m = build_model("zero")
    with pytest.raises(ValueError):
        convergence_study(m, [50, 25], 100, 0.1, 0.01, 1)
    with pytest.raises(ValueError):
        convergence_study(m, [25, 50], 30, 0.1, 0.01, 1)


def test_statistic_invariant_under_relabeling():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=50), rng.normal(size=80)
    perm = rng.permutation(50)
    assert wasserstein(EmpiricalMeasure1D(x), EmpiricalMeasure1D(y)) == \
        wasserstein(EmpiricalMeasure1D(x[perm]), EmpiricalMeasure1D(y))


def test_moment_audit_zero_dynamics_constant():
    m = build_model("zero")
    bundles = [simulate_finite(FiniteSimConfig(m, n, 0.1, 0.01, seed=1, replication=r))
               for n in (25, 50, 100) for r in range(5)]
    rep = moment_audit(bundles)
    # particle 0 of replication r reads the same initial stream position for every N
    assert np.ptp(rep.estimates) == 0.0 and rep.passed


def test_moment_audit_flags_trend():
    samples = [(n, n / 10 + k * 1e-3) for n in (10, 20, 40, 80, 160) for k in range(3)]
    rep = moment_audit_samples(samples)
    assert not rep.passed and rep.spearman_rho == pytest.approx(1.0)


def test_moment_audit_needs_correct_bound():
    m = build_model({"model": "example3", "params": {"rate_mod": 0.9, "f_max": 1.0}})
    with pytest.raises(NumericalAbort):
        simulate_finite(FiniteSimConfig(m, 25, 1.0, 0.01))


def test_exchangeability_helper():
    rng = np.random.default_rng(0)
    assert exchangeability_ks(rng.normal(size=500), rng.normal(size=500)) > 0.001
    assert exchangeability_ks(rng.normal(size=500), rng.normal(3, size=500)) < 0.001
