import numpy as np
import pytest
from scipy import stats

from cmkv.finite_system import FiniteSimConfig, empirical_path, simulate_finite, time_grid
from cmkv.measure import integrate
from cmkv.model import ModelError, NumericalAbort, build_model
from cmkv.noise import NoiseStream


def test_zero_dynamics_keeps_initial_draws():
    b = simulate_finite(FiniteSimConfig(build_model("zero"), 7, 1.0, 0.1, seed=3))
    assert np.all(b.states == b.states[0])


def test_same_seed_bit_identical_and_seed_sensitive():
    m = build_model("example3")
    a = simulate_finite(FiniteSimConfig(m, 20, 0.5, 0.01, seed=11, record_jump_log=True))
    b = simulate_finite(FiniteSimConfig(m, 20, 0.5, 0.01, seed=11, record_jump_log=True))
    c = simulate_finite(FiniteSimConfig(m, 20, 0.5, 0.01, seed=12))
    np.testing.assert_array_equal(a.states, b.states)
    assert len(a.jump_log) == len(b.jump_log)
    assert not np.array_equal(a.states, c.states)


def test_output_grid_subsamples_full_run():
    m = build_model("example3")
    full = simulate_finite(FiniteSimConfig(m, 10, 1.0, 0.01, seed=1))
    part = simulate_finite(FiniteSimConfig(m, 10, 1.0, 0.01, seed=1, output_grid=[0.0, 0.5, 1.0]))
    np.testing.assert_array_equal(part.states, full.states[[0, 50, 100]])
    np.testing.assert_allclose(part.times, [0.0, 0.5, 1.0])


def test_config_validation():
    m = build_model("example1")
    with pytest.raises(ModelError):
        FiniteSimConfig(m, 1, 1.0)
    with pytest.raises(ModelError):
        time_grid(1.0, 0.3)
    with pytest.raises(ModelError):
        time_grid(1.0, 0.1, [0.25])
    assert time_grid(2.0, None)[0] == 1000


def test_uncentered_kernel_rejected():
    m = build_model({"model": "custom", "b": "0", "sigma": "1", "f": "1", "psi": "1 + 0*u", "f_max": 1})
    with pytest.raises(ModelError, match="not centered"):
        simulate_finite(FiniteSimConfig(m, 5, 0.1, 0.01))


def test_misdeclared_rate_bound_aborts():
    m = build_model({"model": "example3", "params": {"rate_mod": 0.5, "f_max": 1.0}})
    with pytest.raises(NumericalAbort, match="rate bound"):
        simulate_finite(FiniteSimConfig(m, 50, 1.0, 0.01))


def test_nonfinite_state_aborts_with_step():
    m = build_model({"model": "custom", "b": "exp(x * x * x)", "sigma": "1", "f": "1", "psi": "u", "f_max": 1})
    with np.errstate(over="ignore"), pytest.raises(NumericalAbort) as info:
        simulate_finite(FiniteSimConfig(m, 5, 1.0, 0.1))
    assert info.value.step is not None and info.value.step > 0


def test_pure_brownian_variance():
    m = build_model({"model": "custom", "b": "0", "sigma": "1", "f": "1e-12", "psi": "u", "f_max": 1e-12})
    b = simulate_finite(FiniteSimConfig(m, 10_000, 1.0, 0.01, seed=5, output_grid=[0.0, 1.0]))
    inc = b.states[1] - b.states[0]
    assert inc.var(ddof=1) == pytest.approx(1.0, rel=0.05)


def test_jump_log_matches_kernel_and_excludes_sender():
    m = build_model("example3")
    N = 30
    b = simulate_finite(FiniteSimConfig(m, N, 1.0, 0.01, seed=2, record_jump_log=True))
    assert b.jump_log
    for ev in b.jump_log:
        assert ev.increments[ev.sender] == 0.0
        others = np.delete(ev.increments, ev.sender)
        # psi = u (1 + v) with Rademacher marks takes values in {0, +-2}
        assert set(np.round(np.abs(others) * np.sqrt(N), 12)) <= {0.0, 2.0}
        assert np.max(np.abs(ev.increments)) <= 2.0 / np.sqrt(N) + 1e-15


def test_full_acceptance_when_rate_equals_bound():
    m = build_model("example1")  # f == f_max == 1
    N, dt = 25, 0.01
    b = simulate_finite(FiniteSimConfig(m, N, 1.0, dt, seed=8, record_jump_log=True))
    stream = NoiseStream(8, "poisson_events")
    proposed = sum(int(stream.generator(s).poisson(1.0 * dt, N).sum()) for s in range(100))
    assert len(b.jump_log) == proposed


def test_thinning_matches_poisson_law():
    # two-state toy: rates 0.5 (x < 0) and 1.5 (x > 0), frozen since nothing moves
    m = build_model({"model": "custom", "b": "0", "sigma": "0", "f": "1 + 0.5 * tanh(1e6 * x)",
                     "psi": "0 * u", "f_max": 1.5})
    N, T = 400, 2.0
    counts = {0.5: [], 1.5: []}
    for rep in range(10):
        b = simulate_finite(FiniteSimConfig(m, N, T, 0.05, seed=1, record_jump_log=True, replication=rep))
        c = np.bincount([ev.sender for ev in b.jump_log], minlength=N)
        x0 = b.states[0]
        counts[0.5] += c[x0 < 0].tolist()
        counts[1.5] += c[x0 > 0].tolist()
    for rate, obs in counts.items():
        obs = np.asarray(obs)
        lam = rate * T
        edges = [0, 1, 2, 3, 4, 5]
        p = np.append(stats.poisson.pmf(edges, lam), stats.poisson.sf(edges[-1], lam))
        hist = np.array([np.sum(obs == k) for k in edges] + [np.sum(obs > edges[-1])])
        assert stats.chisquare(hist, p * obs.size).pvalue > 0.001


def test_jump_term_is_centered():
    m = build_model("example1")
    d = np.array([np.diff(simulate_finite(FiniteSimConfig(m, 200, 1.0, 0.01, seed=4, output_grid=[0.0, 1.0],
                                                            replication=r)).states[:, 0])[0] for r in range(200)])
    # drift -tanh(x - mean) is odd around the mean, so particle 1 stays centred on E X_0 = 0
    assert stats.ttest_1samp(d, 0.0).pvalue > 0.001


def test_exchangeability_ks():
    m = build_model("example3")
    ends = np.array([simulate_finite(FiniteSimConfig(m, 10, 1.0, 0.02, seed=6, output_grid=[1.0],
                                                     replication=r)).states[-1, :2] for r in range(300)])
    assert stats.ks_2samp(ends[:, 0], ends[:, 1]).pvalue > 0.001


def test_empirical_path():
    b = simulate_finite(FiniteSimConfig(build_model("example3"), 2, 0.1, 0.01, seed=0))
    mu = empirical_path(b, 0.05)
    assert mu.n == 2
    assert integrate(mu, lambda x: np.ones_like(x)) == 1.0
    with pytest.raises(ValueError):
        empirical_path(b, 0.055)


def test_initial_mean_matches_law():
    m = build_model({"model": "example3", "params": {"init_mean": 1.5, "init_std": 1.0}})
    means = [simulate_finite(FiniteSimConfig(m, 50, 0.01, 0.01, seed=9, replication=r)).empirical(0.0).mean
             for r in range(200)]
    assert abs(np.mean(means) - 1.5) <= 4 * (1.0 / np.sqrt(50 * 200))
