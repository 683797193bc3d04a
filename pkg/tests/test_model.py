import itertools
import math

import numpy as np
import pytest

from cmkv.measure import EmpiricalMeasure1D
from cmkv.model import (
    BUILTIN_MODELS,
    Discrete,
    ModelError,
    ModelSpec,
    NumericalAbort,
    build_model,
    check_centering,
    gaussian_marks,
    kappa_sq,
    kappa_sq_mc,
    psi_tilde,
    rademacher,
    sigma_xi_pair,
)

SIGNS = (-1.0, 1.0)
D0 = EmpiricalMeasure1D.dirac(0.0)


def triple_moments(psi):
    """(varsigma^2, xi^2) by enumerating the 8 equally likely sign triples."""
    s2 = np.mean([psi(u1, u2) ** 2 for u1, u2, u3 in itertools.product(SIGNS, repeat=3)])
    x2 = np.mean([psi(u1, u2) * psi(u1, u3) for u1, u2, u3 in itertools.product(SIGNS, repeat=3)])
    return s2, x2


def custom(psi, atoms=((-1, 0.5), (1, 0.5)), **extra):
    cfg = {"model": "custom", "b": "0", "sigma": "1", "f": "1", "psi": psi, "f_max": 1,
           "nu1": {"atoms": [list(a) for a in atoms]}}
    cfg.update(extra)
    return build_model(cfg)


def test_discrete_validation():
    with pytest.raises(ModelError):
        Discrete([0.0, 1.0], [0.5, 0.6])
    with pytest.raises(ModelError):
        Discrete([0.0, 1.0], [1.0, 0.0])


def test_arctan_builtin_has_rademacher_marks():
    m = build_model({"model": "arctan_rademacher", "params": {"epsilon": 0.5}})
    assert m.mark_law.values.tolist() == [-1.0, 1.0]
    assert m.mark_law.weights.tolist() == [0.5, 0.5]


def test_negative_rate_rejected():
    with pytest.raises(ModelError, match="rate must be strictly positive"):
        build_model({"model": "custom", "b": "0", "sigma": "1", "f": "-1", "psi": "u", "f_max": 1})


def test_malformed_config():
    with pytest.raises(ModelError):
        build_model({"model": "custom", "b": "0 +", "sigma": "1", "f": "1", "psi": "u", "f_max": 1})
    with pytest.raises(ModelError):
        build_model({"model": "nope"})


def test_centering_examples():
    assert check_centering(build_model("example2"), [(0.0, 0.0, D0)]).values == [0.0]
    rep = check_centering(build_model("arctan_rademacher"), [(0.0, 0.0, D0)])
    assert rep.passed and rep.method == "exact" and abs(rep.values[0]) <= 1e-12
    bad = check_centering(custom("1 + 0 * u"), [(0.0, 0.0, D0)])
    assert not bad.passed and bad.values[0] == 1.0
    assert check_centering(custom("u + u * v"), [(0.3, -1.0, D0)]).passed


def test_centering_monte_carlo_path():
    m = build_model({"model": "example1", "params": {"marks": "gaussian"}})
    rep = check_centering(m, [(0.0, 0.0, D0)], n_mc=20_000)
    assert rep.method == "monte_carlo" and rep.passed and "64" in rep.note


def test_kappa_arctan_closed_form():
    m = build_model({"model": "arctan_rademacher", "params": {"epsilon": 0.5}})
    assert kappa_sq(m, 0.0, 0.0, D0) == pytest.approx((0.5 + math.pi / 2) ** 2, abs=1e-12)


def test_kappa_example1_is_zero():
    assert kappa_sq(build_model("example1"), 0.3, -0.2, D0) == 0.0


def test_example3_triple_oracle():
    m = build_model("example3")
    s2, x2 = triple_moments(lambda u, v: u * (1 + v))
    assert (s2, x2) == (2.0, 1.0)
    got = sigma_xi_pair(m)
    assert abs(got[0] - s2) <= 1e-12 and abs(got[1] - x2) <= 1e-12
    assert abs(kappa_sq(m, 0.0, 0.0, D0) - (s2 - x2)) <= 1e-12


@pytest.mark.parametrize("name,expected", [("example1", (1.0, 1.0)), ("example2", (1.0, 0.0))])
def test_sigma_xi_examples(name, expected):
    assert sigma_xi_pair(build_model(name)) == pytest.approx(expected, abs=1e-12)


def test_sigma_xi_requires_constant_kernel():
    with pytest.raises(ModelError):
        sigma_xi_pair(build_model("arctan_rademacher"))


def test_psi_tilde_example2_vanishes():
    m = build_model("example2")
    rng = np.random.default_rng(0)
    for _ in range(20):
        x, y, v = rng.normal(size=3)
        assert psi_tilde(m, x, y, EmpiricalMeasure1D(rng.normal(size=5)), v) == 0.0


@pytest.mark.parametrize("name", BUILTIN_MODELS)
def test_kappa_nonnegative_random_probes(name):
    m = build_model(name)
    rng = np.random.default_rng(7)
    x, y = rng.normal(scale=3, size=(2, 100))
    k2 = m.derived.kappa_sq(x, y, EmpiricalMeasure1D(rng.normal(size=10)))
    assert np.all(k2 >= 0)


@pytest.mark.parametrize("x,y,c", [(0.0, 0.0, 0.0), (1.2, -0.7, 0.4), (-2.0, 3.0, -1.0)])
def test_kappa_enumeration_matches_monte_carlo(x, y, c):
    m = build_model("arctan_rademacher")
    mu = EmpiricalMeasure1D.dirac(c)
    est, se = kappa_sq_mc(m, x, y, mu, n_mc=200_000, seed=11)
    assert abs(est - kappa_sq(m, x, y, mu)) <= 4 * se


def test_varsigma_dominates_xi_on_random_centered_kernels():
    rng = np.random.default_rng(5)
    for _ in range(100):
        k = rng.integers(2, 5)
        vals = rng.normal(size=k)
        w = rng.dirichlet(np.ones(k))
        vals -= vals @ w  # centred mark law
        table = rng.normal(size=(k, k))
        table -= (table @ w) @ w  # centre the kernel under the product law
        idx = {float(v): i for i, v in enumerate(vals)}

        def psi(x, y, m, u, v, table=table, idx=idx):
            u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
            return np.vectorize(lambda a, b: table[idx[float(a)], idx[float(b)]])(u, v)

        model = ModelSpec(lambda x, m: 0.0, lambda x, m: 1.0, lambda x, m: 1.0, psi,
                          Discrete(vals, w), lambda rng, n: np.zeros(n), 1.0, True)
        s2, x2 = sigma_xi_pair(model)
        assert s2 >= x2 - 1e-12 and x2 >= 0


def test_cauchy_schwarz_violation_raises():
    from cmkv.model import kappa_from_moments

    with pytest.raises(ArithmeticError, match="Cauchy-Schwarz"):
        kappa_from_moments(np.array([[2.0, 2.0]]), np.array([1.0]), rademacher())


def test_rate_abort_messages():
    m = custom("u", f="1 + 0.5 * tanh(x)", f_max=1.0)
    with pytest.raises(NumericalAbort, match="rate bound violated"):
        m.f(np.array([5.0]), D0, step=3)


def test_gaussian_quantization_preserves_mean_and_mass():
    q = gaussian_marks().quantize(64)
    assert q.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert q.size == 64
    assert abs(q.mean) < 1e-2


def test_model_is_shareable_value():
    a, b = build_model("example3"), build_model("example3")
    assert a.config == b.config and a.name == "example3"
