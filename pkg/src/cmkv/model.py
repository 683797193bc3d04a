"""Model definitions: coefficients, jump kernel, mark law, initial law.

Coefficient callables are vectorized: ``b(x, m)``, ``sigma(x, m)`` and
``f(x, m)`` take an array of states and an :class:`EmpiricalMeasure1D`;
the jump kernel ``psi(x, y, m, u, v)`` broadcasts over the sender state
``x``, receiver state ``y`` and the sender/receiver marks ``u``/``v``.

The derived coefficients of the limit dynamics are

* ``psi_tilde(x, y, m, v) = int psi(x, y, m, v, w) nu1(dw)``
* ``kappa^2(x, y, m) = int psi^2 dnu - int psi_tilde^2 dnu1``

and, for kernels depending on the marks only, the constants
``varsigma^2 = int psi(u1, u2)^2`` and ``xi^2 = int psi(u1, u2) psi(u1, u3)``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Union

import numpy as np

from .expr import ExpressionError, parse_expression
from .measure import EmpiricalMeasure1D

__all__ = [
    "ModelError",
    "NumericalAbort",
    "Discrete",
    "Continuous",
    "NuSpec",
    "rademacher",
    "gaussian_marks",
    "ModelSpec",
    "DerivedCoefficients",
    "CheckReport",
    "BUILTIN_MODELS",
    "build_model",
    "check_centering",
    "kappa_sq",
    "kappa_sq_mc",
    "psi_tilde",
    "sigma_xi_pair",
    "mark_moments",
]

QUADRATURE_ATOMS = 64
KAPPA_TOL = 1e-12
QUANTIZER_SAMPLES = 10**6


class ModelError(ValueError):
    """Invalid model configuration."""


class NumericalAbort(RuntimeError):
    """Simulation aborted on a non-finite state or a violated rate bound."""

    def __init__(self, message: str, step: int | None = None):
        self.step = step
        super().__init__(message if step is None else f"{message} (step {step})")


# --------------------------------------------------------------------- marks


@dataclass(frozen=True)
class Discrete:
    """Finitely supported mark law."""

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if vals.size == 0 or vals.size != w.size:
            raise ModelError("mark atoms need matching, nonempty values and weights")
        if not np.all(np.isfinite(vals)) or np.any(w <= 0):
            raise ModelError("mark weights must be strictly positive and values finite")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ModelError(f"mark weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_pairs(cls, pairs) -> "Discrete":
        arr = np.asarray(pairs, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ModelError("atoms must be a list of [value, weight] pairs")
        return cls(arr[:, 0], arr[:, 1])

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def mean(self) -> float:
        return float(np.dot(self.values, self.weights))

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.size == 2 and self.weights[0] == 0.5:
            return np.where(rng.random(size) < 0.5, self.values[0], self.values[1])
        return self.values[rng.choice(self.size, size=size, p=self.weights)]

    def quadrature(self, resolution: int = QUADRATURE_ATOMS) -> "Discrete":
        """Itself when small enough, else a mass- and mean-preserving merge."""
        if self.size <= resolution:
            return self
        order = np.argsort(self.values, kind="stable")
        vals, w = self.values[order], self.weights[order]
        edges = np.searchsorted(np.cumsum(w), np.arange(1, resolution) / resolution)
        groups = np.split(np.arange(vals.size), np.unique(edges))
        gw = np.array([w[g].sum() for g in groups if g.size])
        gv = np.array([np.dot(vals[g], w[g]) for g in groups if g.size]) / gw
        return Discrete(gv, gw / gw.sum())

    def to_config(self):
        return {"atoms": [[float(v), float(w)] for v, w in zip(self.values, self.weights)]}


@dataclass(frozen=True)
class Continuous:
    """Mark law given by a sampler; quantized for quadrature and panels."""

    sampler: Callable[[np.random.Generator, object], np.ndarray]
    name: str = "continuous"
    quantizer_seed: int = 20240601

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return np.asarray(self.sampler(rng, size), dtype=float)

    def quantize(self, resolution: int = QUADRATURE_ATOMS) -> Discrete:
        """Equal-count groups of a fixed 10^6-sample draw; atoms are group means.

        The atom mean therefore equals the Monte-Carlo mean of that draw.
        """
        return _quantize_cached(self, resolution)

    def quadrature(self, resolution: int = QUADRATURE_ATOMS) -> Discrete:
        return self.quantize(resolution)

    def to_config(self):
        return {"law": self.name}


_QUANT_CACHE: dict = {}


def _quantize_cached(law: Continuous, resolution: int) -> Discrete:
    key = (id(law.sampler), law.name, law.quantizer_seed, resolution)
    hit = _QUANT_CACHE.get(key)
    if hit is not None:
        return hit
    rng = np.random.Generator(np.random.Philox(law.quantizer_seed))
    draws = np.sort(law.sample(rng, QUANTIZER_SAMPLES))
    groups = np.array_split(draws, resolution)
    sizes = np.array([g.size for g in groups], dtype=float)
    atoms = Discrete(np.array([g.mean() for g in groups]), sizes / sizes.sum())
    _QUANT_CACHE[key] = atoms
    return atoms


NuSpec = Union[Discrete, Continuous]


def rademacher() -> Discrete:
    return Discrete(np.array([-1.0, 1.0]), np.array([0.5, 0.5]))


def _standard_normal(rng, size):
    return rng.standard_normal(size)


_GAUSSIAN = Continuous(_standard_normal, name="gaussian")


def gaussian_marks() -> Continuous:
    return _GAUSSIAN


def _mark_law_from_config(cfg) -> NuSpec:
    if cfg is None:
        return rademacher()
    if isinstance(cfg, str):
        cfg = {"law": cfg}
    if "atoms" in cfg:
        return Discrete.from_pairs(cfg["atoms"])
    law = cfg.get("law")
    if law == "rademacher":
        return rademacher()
    if law == "gaussian":
        return gaussian_marks()
    raise ModelError(f"unknown mark law {cfg!r}")


# --------------------------------------------------------------- initial law


def _initial_law_from_config(cfg) -> Callable[[np.random.Generator, int], np.ndarray]:
    cfg = dict(cfg or {"law": "normal"})
    law = cfg.get("law", "normal")
    if law == "normal":
        mean, std = float(cfg.get("mean", 0.0)), float(cfg.get("std", 1.0))
        if std < 0:
            raise ModelError("initial std must be nonnegative")
        return lambda rng, n: mean + std * rng.standard_normal(n)
    if law == "uniform":
        lo, hi = float(cfg.get("low", 0.0)), float(cfg.get("high", 1.0))
        if hi < lo:
            raise ModelError("uniform initial law needs low <= high")
        return lambda rng, n: lo + (hi - lo) * rng.random(n)
    if law == "dirac":
        val = float(cfg.get("value", 0.0))
        return lambda rng, n: np.full(n, val)
    raise ModelError(f"unknown initial law {law!r}")


# --------------------------------------------------------------------- model


@dataclass(frozen=True)
class ModelSpec:
    """A simulatable model. Immutable; safe to share between workers."""

    drift: Callable
    diffusion: Callable
    rate: Callable
    psi: Callable
    mark_law: NuSpec
    initial_law: Callable
    rate_bound: float
    constant_kernel: bool = False
    name: str = "custom"
    config: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not np.isfinite(self.rate_bound) or self.rate_bound <= 0:
            raise ModelError("rate_bound must be a positive number")

    @cached_property
    def atoms(self) -> Discrete:
        """Quadrature atoms for the mark law (exact when small and discrete)."""
        return self.mark_law.quadrature(QUADRATURE_ATOMS)

    @property
    def quadrature_is_exact(self) -> bool:
        return isinstance(self.mark_law, Discrete) and self.mark_law.size <= QUADRATURE_ATOMS

    @cached_property
    def derived(self) -> "DerivedCoefficients":
        return DerivedCoefficients(self)

    def sample_initial(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.asarray(self.initial_law(rng, n), dtype=float)

    def b(self, x, m):
        return np.broadcast_to(np.asarray(self.drift(x, m), dtype=float), np.shape(x))

    def sigma(self, x, m):
        return np.broadcast_to(np.asarray(self.diffusion(x, m), dtype=float), np.shape(x))

    def f(self, x, m, step: int | None = None):
        """Jump rates at states ``x``; aborts outside ``(0, rate_bound]``."""
        vals = np.broadcast_to(np.asarray(self.rate(x, m), dtype=float), np.shape(x))
        check_rates(vals, self.rate_bound, step)
        return vals

    @cached_property
    def centering(self) -> "CheckReport":
        """Centering check at a small fixed set of probes (cached)."""
        probes = [(x, y, EmpiricalMeasure1D.dirac(c)) for x in (-1.0, 0.0, 1.0) for y in (-1.0, 1.0) for c in (0.0, 0.5)]
        return check_centering(self, probes)

    def kernel(self, m: EmpiricalMeasure1D):
        """The jump kernel with the measure argument frozen: ``k(x, y, u, v)``."""
        psi = self.psi
        return lambda x, y, u, v: psi(x, y, m, u, v)


def check_rates(vals: np.ndarray, bound: float, step: int | None = None) -> None:
    if not np.all(vals > 0):
        raise NumericalAbort("rate must be strictly positive", step)
    if np.any(vals > bound * (1 + 1e-12)):
        raise NumericalAbort(f"rate bound violated: max rate {vals.max():.6g} > f_max {bound:.6g}", step)


# ------------------------------------------------------- derived coefficients


def mark_moments(kernel, x, y, send: Discrete, recv: Discrete):
    """Integrate a jump kernel against the mark laws by atom enumeration.

    ``kernel(x, y, u, v)`` takes sender mark ``u`` and receiver mark ``v``.
    Returns ``(psi_t, second)`` where ``psi_t[..., a]`` is the
    receiver-mark average at sender atom ``a`` and ``second`` is the full
    second moment, both on the broadcast shape of ``x`` and ``y``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    shape = np.broadcast_shapes(x.shape, y.shape)
    xe, ye = x[..., None], y[..., None]
    pv = recv.weights
    psi_t = np.empty(shape + (send.size,))
    second = np.zeros(shape)
    for a, (ua, pa) in enumerate(zip(send.values, send.weights)):
        vals = np.broadcast_to(np.asarray(kernel(xe, ye, ua, recv.values), dtype=float), shape + (recv.size,))
        psi_t[..., a] = vals @ pv
        second += pa * ((vals * vals) @ pv)
    return psi_t, second


def kappa_from_moments(psi_t, second, send: Discrete, strict: bool = True):
    """``second - int psi_t^2``, clamped at 0 within tolerance."""
    k2 = second - (psi_t * psi_t) @ send.weights
    tol = KAPPA_TOL * np.maximum(1.0, np.abs(second))
    if strict and np.any(k2 < -tol):
        worst = float(np.min(k2))
        raise ArithmeticError(f"Cauchy-Schwarz violation: kappa^2 = {worst:.3e} < 0")
    return np.maximum(k2, 0.0)


class DerivedCoefficients:
    """Derived limit coefficients of a model, by exact atom quadrature."""

    def __init__(self, model: ModelSpec):
        self.model = model
        self.atoms = model.atoms

    def grid(self, x, y, m: EmpiricalMeasure1D):
        """``(psi_t, kappa_sq)`` with ``psi_t[..., a] = psi_tilde(x, y, m, v_a)``."""
        psi_t, second = mark_moments(self.model.kernel(m), x, y, self.atoms, self.atoms)
        return psi_t, kappa_from_moments(psi_t, second, self.atoms)

    def psi_tilde(self, x, y, m, v):
        kern = self.model.kernel(m)
        x, y, v = (np.asarray(a, float) for a in (x, y, v))
        shape = np.broadcast_shapes(x.shape, y.shape, v.shape) + (self.atoms.size,)
        vals = np.asarray(kern(x[..., None], y[..., None], v[..., None], self.atoms.values), dtype=float)
        out = np.broadcast_to(vals, shape) @ self.atoms.weights
        return float(out) if np.ndim(out) == 0 else out

    def kappa_sq(self, x, y, m):
        _, k2 = self.grid(x, y, m)
        return float(k2) if np.ndim(k2) == 0 else k2

    @cached_property
    def constant(self):
        """``(psi_tilde over atoms, varsigma^2, xi^2)`` for mark-only kernels."""
        if not self.model.constant_kernel:
            raise ModelError("not a constant-kernel model")
        m0 = EmpiricalMeasure1D.dirac(0.0)
        psi_t, second = mark_moments(self.model.kernel(m0), 0.0, 0.0, self.atoms, self.atoms)
        xi2 = float((psi_t * psi_t) @ self.atoms.weights)
        return psi_t, float(second), xi2

    def varsigma_sq(self) -> float:
        return self.constant[1]

    def xi_sq(self) -> float:
        return self.constant[2]


def psi_tilde(model: ModelSpec, x, y, m, v):
    return model.derived.psi_tilde(x, y, m, v)


def kappa_sq(model: ModelSpec, x, y, m: EmpiricalMeasure1D) -> float:
    """kappa^2 by exact enumeration over mark atom pairs.

    Raises :class:`ArithmeticError` when the value is negative beyond
    rounding tolerance.
    """
    return model.derived.kappa_sq(x, y, m)


def kappa_sq_mc(model: ModelSpec, x, y, m, n_mc: int = 100_000, seed: int = 0):
    """Monte-Carlo estimate of kappa^2 and its standard error.

    Uses three independent mark coordinates per draw:
    ``psi(u1, u2)^2 - psi(u1, u2) psi(u1, u3)``.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    u1, u2, u3 = (model.mark_law.sample(rng, n_mc) for _ in range(3))
    a = np.asarray(model.psi(x, y, m, u1, u2), dtype=float)
    b = np.asarray(model.psi(x, y, m, u1, u3), dtype=float)
    terms = np.broadcast_to(a * a - a * b, (n_mc,))
    return float(terms.mean()), float(terms.std(ddof=1) / np.sqrt(n_mc))


def sigma_xi_pair(model: ModelSpec):
    """``(varsigma^2, xi^2)`` of a kernel that depends on the marks only."""
    if not model.constant_kernel:
        raise ModelError("not a constant-kernel model")
    _, s2, x2 = model.derived.constant
    if x2 < -KAPPA_TOL or s2 < x2 - KAPPA_TOL * max(1.0, s2):
        raise ArithmeticError(f"Cauchy-Schwarz violation: varsigma^2={s2}, xi^2={x2}")
    return s2, x2


# ------------------------------------------------------------- centering check


@dataclass
class CheckReport:
    passed: bool
    method: str
    values: list
    stderrs: list | None = None
    failures: list = field(default_factory=list)
    note: str = ""

    def __bool__(self):
        return self.passed


def check_centering(model: ModelSpec, probe_points, n_mc: int = 100_000, seed: int = 0) -> CheckReport:
    """Check ``int psi(x, y, m, u1, u2) dnu = 0`` at each ``(x, y, m)`` probe.

    Exact atom enumeration (tolerance 1e-12) for small discrete mark laws,
    otherwise a Monte-Carlo mean that must lie within 4 standard errors of 0.
    Never raises on failure; offending probes are listed in the report.
    """
    probes = list(probe_points)
    if not probes:
        raise ValueError("probe_points must be nonempty")
    values, failures = [], []
    if model.quadrature_is_exact:
        atoms = model.atoms
        for x, y, m in probes:
            psi_t, _ = mark_moments(model.kernel(m), x, y, atoms, atoms)
            val = float(psi_t @ atoms.weights)
            values.append(val)
            if abs(val) > 1e-12:
                failures.append(((x, y, m), val))
        return CheckReport(not failures, "exact", values, failures=failures)
    rng = np.random.Generator(np.random.Philox(seed))
    stderrs = []
    for x, y, m in probes:
        u, v = model.mark_law.sample(rng, n_mc), model.mark_law.sample(rng, n_mc)
        vals = np.broadcast_to(np.asarray(model.psi(x, y, m, u, v), dtype=float), (n_mc,))
        mean, se = float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n_mc))
        values.append(mean)
        stderrs.append(se)
        if abs(mean) > 4 * se + 1e-15:
            failures.append(((x, y, m), mean))
    note = "" if isinstance(model.mark_law, Continuous) else "discrete law with more than 64 atoms"
    note = (note + "; " if note else "") + "simulation quadrature uses 64 quantized atoms (bias not reflected here)"
    return CheckReport(not failures, "monte_carlo", values, stderrs, failures, note)


# --------------------------------------------------------------- model builder


BUILTIN_MODELS = ("example1", "example2", "example3", "arctan_rademacher", "zero")

_DEFAULT_PARAMS = {
    "drift": 1.0,
    "sigma": 1.0,
    "rate": 1.0,
    "rate_mod": 0.0,
    "scale": 1.0,
    "epsilon": 0.5,
    "init_mean": 0.0,
    "init_std": 1.0,
    "marks": "rademacher",
}


def _shared_coefficients(p):
    drift, sig, rate, mod = float(p["drift"]), float(p["sigma"]), float(p["rate"]), float(p["rate_mod"])
    if rate <= 0:
        raise ModelError("rate must be strictly positive")
    if not 0 <= abs(mod) < 1:
        raise ModelError("rate_mod must satisfy |rate_mod| < 1")

    def b(x, m):
        return -drift * np.tanh(np.asarray(x) - m.mean)

    def sigma(x, m):
        return np.full(np.shape(x), sig)

    if mod == 0.0:
        def f(x, m):
            return np.full(np.shape(x), rate)
    else:
        def f(x, m):
            return rate * (1.0 + mod * np.tanh(x))

    return b, sigma, f, rate * (1.0 + abs(mod))


def _builtin(name: str, params: dict) -> ModelSpec:
    unknown = set(params) - set(_DEFAULT_PARAMS) - {"f_max"}
    if unknown:
        raise ModelError(f"unknown parameters for {name}: {sorted(unknown)}")
    p = {**_DEFAULT_PARAMS, **params}
    if name == "zero":
        p["drift"], p["sigma"] = 0.0, 0.0
    b, sigma, f, f_max = _shared_coefficients(p)
    f_max = float(p.get("f_max", f_max))
    scale = float(p["scale"])
    eps = float(p["epsilon"])
    if name == "arctan_rademacher" and eps <= 0:
        raise ModelError("epsilon must be positive")

    if name == "example1":
        def psi(x, y, m, u, v):
            return scale * (u + 0.0 * v)
    elif name == "example2":
        def psi(x, y, m, u, v):
            return scale * (v + 0.0 * u)
    elif name == "example3":
        def psi(x, y, m, u, v):
            return scale * u * (1.0 + v)
    elif name == "arctan_rademacher":
        def psi(x, y, m, u, v):
            return u * v * (eps + np.pi / 2 + np.arctan(np.asarray(x) - y + m.mean))
    elif name == "zero":
        def psi(x, y, m, u, v):
            return 0.0 * (u * v)
    else:
        raise ModelError(f"unknown model {name!r}")

    marks = rademacher() if name == "arctan_rademacher" else _mark_law_from_config(p["marks"])
    init = _initial_law_from_config({"law": "normal", "mean": p["init_mean"], "std": p["init_std"]})
    return ModelSpec(
        drift=b,
        diffusion=sigma,
        rate=f,
        psi=psi,
        mark_law=marks,
        initial_law=init,
        rate_bound=f_max,
        constant_kernel=name != "arctan_rademacher",
        name=name,
        config={"model": name, "params": dict(params)},
    )


def _custom(cfg: dict) -> ModelSpec:
    missing = [k for k in ("b", "sigma", "f", "psi", "f_max") if k not in cfg]
    if missing:
        raise ModelError(f"custom model is missing {missing}")
    try:
        b_e = parse_expression(cfg["b"], allowed={"x", "m"})
        s_e = parse_expression(cfg["sigma"], allowed={"x", "m"})
        f_e = parse_expression(cfg["f"], allowed={"x", "m"})
        p_e = parse_expression(cfg["psi"], allowed={"x", "y", "u", "v", "m"})
    except ExpressionError as exc:
        raise ModelError(f"malformed expression tree: {exc}") from None
    f_max = cfg["f_max"]
    if not isinstance(f_max, (int, float)) or isinstance(f_max, bool) or not f_max > 0:
        raise ModelError("rate_bound f_max must be a positive number")
    if f_e.is_constant and not float(f_e()) > 0:
        raise ModelError("rate must be strictly positive")
    if f_e.is_constant and float(f_e()) > f_max:
        raise ModelError("constant rate exceeds f_max")

    def b(x, m):
        return b_e(x=x, m=m)

    def sigma(x, m):
        return s_e(x=x, m=m)

    def f(x, m):
        return f_e(x=x, m=m)

    def psi(x, y, m, u, v):
        return p_e(x=x, y=y, m=m, u=u, v=v)

    spec = ModelSpec(
        drift=b,
        diffusion=sigma,
        rate=f,
        psi=psi,
        mark_law=_mark_law_from_config(cfg.get("nu1")),
        initial_law=_initial_law_from_config(cfg.get("init")),
        rate_bound=float(f_max),
        constant_kernel=not (p_e.variables & {"x", "y", "m"}),
        name="custom",
        config=copy.deepcopy(cfg),
    )
    probe_m = EmpiricalMeasure1D.dirac(0.0)
    probe = np.array([-1.0, 0.0, 1.0])
    vals = np.broadcast_to(np.asarray(f(probe, probe_m), dtype=float), probe.shape)
    if not np.all(vals > 0):
        raise ModelError("rate must be strictly positive")
    return spec


def build_model(config) -> ModelSpec:
    """Build a validated :class:`ModelSpec` from a JSON-like config tree.

    ``{"model": name, "params": {...}}`` for builtins, or
    ``{"model": "custom", "b": ..., "sigma": ..., "f": ..., "psi": ...,
    "nu1": {"atoms": [[v, w], ...]}, "f_max": ...}``.
    """
    if isinstance(config, str):
        config = {"model": config}
    if not isinstance(config, dict) or "model" not in config:
        raise ModelError("config must be an object with a 'model' key")
    name = config["model"]
    if name == "custom":
        return _custom(config)
    if name not in BUILTIN_MODELS:
        raise ModelError(f"unknown model {name!r}; builtins are {', '.join(BUILTIN_MODELS)}")
    params = config.get("params", {}) or {}
    if not isinstance(params, dict):
        raise ModelError("params must be an object")
    return _builtin(name, params)
