"""Conditional McKean-Vlasov limit via M exchangeable copies.

The conditional law of one limit particle given the common noise is
approximated by the empirical law of M copies. The driving white noises
are discretized on quantile bins: bin ``j`` of step ``s`` carries the
quantile node ``q_j = F^-1((j + 1/2) / M)``, which for M copies is the
``j``-th order statistic. Per step each copy ``i`` receives

    b dt + sigma dB^i
    + sum_{j,a} sqrt(f(q_j)) psi_tilde(q_j, X^i, v_a) G[j, a]
    + sum_j     sqrt(f(q_j)) kappa(q_j, X^i)          H^i[j]

with one common panel ``G`` (shared by every copy) and an idiosyncratic
panel ``H^i`` per copy.

For kernels that depend on the marks only, ``kappa`` is constant and the
idiosyncratic term collapses to one Gaussian per copy with the same
conditional law; the bundle records which path was taken.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .finite_system import CrossKernel, TrajectoryBundle, time_grid
from .measure import EmpiricalMeasure1D, quantile
from .model import (
    Continuous,
    Discrete,
    ModelError,
    ModelSpec,
    NumericalAbort,
    QUADRATURE_ATOMS,
    kappa_from_moments,
    mark_moments,
)
from .noise import NoiseStream, sample_idio_block, sample_panel

__all__ = [
    "LimitSimConfig",
    "LimitEngine",
    "simulate_limit",
    "run_limit",
    "quantile_nodes",
    "conditional_noise_variance",
    "limit_covariance_check",
    "TERMS",
]

TERMS = ("drift", "diffusion", "common", "idio")
_DIRAC0 = EmpiricalMeasure1D.dirac(0.0)


@dataclass(frozen=True)
class LimitSimConfig:
    model: ModelSpec
    M: int
    T: float
    dt: float | None = None
    seed: int = 0
    output_grid: Sequence[float] | None = None
    v_atoms: int = QUADRATURE_ATOMS
    replication: int = 0
    record_increments: bool = False
    collapse_idio: bool | None = None

    def __post_init__(self):
        if int(self.M) < 2:
            raise ModelError("M must be at least 2")
        if int(self.v_atoms) < 1:
            raise ModelError("v_atoms must be at least 1")


def quantile_nodes(m: EmpiricalMeasure1D, bins: int) -> np.ndarray:
    """Quantiles at bin midpoints ``(j + 1/2) / bins``."""
    return quantile(m, (np.arange(bins) + 0.5) / bins)


def _atoms(law, v_atoms: int) -> Discrete:
    if isinstance(law, Continuous):
        return law.quantize(v_atoms)
    return law.quadrature(QUADRATURE_ATOMS)


class LimitEngine:
    """Per-step increments of the coupled limit populations.

    Noise is regenerated from counter-keyed streams on every call, so the
    same ``(step, states)`` always yields the same increments. The Picard
    iteration relies on this to freeze all noise across iterates.
    """

    def __init__(
        self,
        models: Sequence[ModelSpec],
        sizes: Sequence[int],
        inputs: Mapping[int, Sequence[int]],
        kernels: Mapping[tuple, CrossKernel],
        dt: float,
        seed: int,
        replication: int = 0,
        v_atoms: int = QUADRATURE_ATOMS,
        collapse_idio: bool | None = None,
    ):
        self.models = list(models)
        self.sizes = [int(s) for s in sizes]
        self.n_pop = len(self.models)
        self.inputs = {k: tuple(sorted(inputs.get(k, ()))) for k in range(self.n_pop)}
        self.kernels = dict(kernels)
        self.dt = float(dt)
        self.seed = seed
        self.replication = replication
        self.atoms = [_atoms(m.mark_law, v_atoms) for m in self.models]
        self.senders = sorted({l for k in range(self.n_pop) for l in self.inputs[k]})
        self.idio_path = {}
        self._const = {}
        for k in range(self.n_pop):
            for l in self.inputs[k]:
                ker = self.kernels[(l, k)]
                collapse = ker.constant if collapse_idio is None else bool(collapse_idio)
                self.idio_path[(l, k)] = "collapsed" if collapse else "panel"
                if ker.constant:
                    psi_t, second = mark_moments(ker.bind(_DIRAC0, _DIRAC0), 0.0, 0.0, self.atoms[l], self.atoms[k])
                    self._const[(l, k)] = (psi_t, float(kappa_from_moments(psi_t, second, self.atoms[l])))

    def stream(self, channel: str, population: int, source: int = 0) -> NoiseStream:
        return NoiseStream(self.seed, channel, self.replication, population=population, source=source)

    def initial_states(self) -> list:
        return [m.sample_initial(self.stream("initial", k).generator(0), n)
                for k, (m, n) in enumerate(zip(self.models, self.sizes))]

    def increments(self, X: Sequence[np.ndarray], step: int):
        """Increments of every population for one step from states ``X``.

        Returns ``(terms, mean_rates)`` where ``terms[k]`` maps each of
        :data:`TERMS` to an array over the copies of population ``k``.
        """
        dt = self.dt
        mus = [EmpiricalMeasure1D(x) for x in X]
        nodes = [quantile_nodes(mu, n) for mu, n in zip(mus, self.sizes)]
        node_rates = [m.f(q, mu, step=step) for m, q, mu in zip(self.models, nodes, mus)]
        mean_rates = [float(r.mean()) for r in node_rates]
        panels = {
            l: sample_panel(self.stream("common_W", l), step, self.sizes[l], self.atoms[l], dt).increments
            for l in self.senders
        }
        out = []
        for k, mk in enumerate(self.models):
            x, mu, n = X[k], mus[k], self.sizes[k]
            dB = self.stream("brownian", k).generator(step).standard_normal(n) * np.sqrt(dt)
            terms = {
                "drift": mk.b(x, mu) * dt,
                "diffusion": mk.sigma(x, mu) * dB,
                "common": np.zeros(n),
                "idio": np.zeros(n),
            }
            for l in self.inputs[k]:
                sqrtf = np.sqrt(node_rates[l])
                G = panels[l]
                idio_stream = self.stream("idio_W", k, source=l)
                collapsed = self.idio_path[(l, k)] == "collapsed"
                if (l, k) in self._const:
                    psi_t, k2 = self._const[(l, k)]
                    terms["common"] += float(psi_t @ (sqrtf @ G))
                    if k2 > 0:
                        if collapsed:
                            z = idio_stream.generator(step, 1).standard_normal(n)
                            terms["idio"] += np.sqrt(k2 * dt * mean_rates[l]) * z
                        else:
                            H = sample_idio_block(idio_stream, step, n, self.sizes[l], dt)
                            terms["idio"] += np.sqrt(k2) * (H @ sqrtf)
                    continue
                ker = self.kernels[(l, k)].bind(mus[l], mu)
                psi_t, second = mark_moments(ker, nodes[l][:, None], x[None, :], self.atoms[l], self.atoms[k])
                k2 = kappa_from_moments(psi_t, second, self.atoms[l])
                terms["common"] += np.einsum("j,jia,ja->i", sqrtf, psi_t, G)
                if collapsed:
                    z = idio_stream.generator(step, 1).standard_normal(n)
                    terms["idio"] += np.sqrt(dt / self.sizes[l] * (node_rates[l] @ k2)) * z
                else:
                    H = sample_idio_block(idio_stream, step, n, self.sizes[l], dt)
                    terms["idio"] += np.einsum("j,ji,ij->i", sqrtf, np.sqrt(k2), H)
            out.append(terms)
        return out, mean_rates

    def run(self, n_steps: int, out_steps: np.ndarray, record_increments: bool = False) -> list:
        X = self.initial_states()
        record = {int(s): i for i, s in enumerate(out_steps)}
        states = [np.empty((out_steps.size, n)) for n in self.sizes]
        rates = [np.empty(n_steps) for _ in self.sizes]
        incs = [{t: np.empty((n_steps, n)) for t in TERMS} if record_increments else None for n in self.sizes]
        for k in range(self.n_pop):
            if not np.all(np.isfinite(X[k])):
                raise NumericalAbort("non-finite initial state", 0)
            if 0 in record:
                states[k][record[0]] = X[k]
        for s in range(n_steps):
            terms, mean_rates = self.increments(X, s)
            for k in range(self.n_pop):
                tk = terms[k]
                X[k] = X[k] + (tk["drift"] + tk["diffusion"] + tk["common"] + tk["idio"])
                if not np.all(np.isfinite(X[k])):
                    raise NumericalAbort("non-finite state", s + 1)
                rates[k][s] = mean_rates[k]
                if incs[k] is not None:
                    for name in TERMS:
                        incs[k][name][s] = tk[name]
                if s + 1 in record:
                    states[k][record[s + 1]] = X[k]
        times = out_steps * self.dt
        bundles = []
        for k in range(self.n_pop):
            paths = {f"{l}->{k}": self.idio_path[(l, k)] for l in self.inputs[k]}
            bundles.append(TrajectoryBundle(
                times=times,
                states=states[k],
                dt=self.dt,
                mean_rate=rates[k],
                increments=incs[k],
                meta={"system": "limit", "seed": int(self.seed), "replication": int(self.replication),
                      "population": k, "n_steps": n_steps, "idio_path": paths},
            ))
        return bundles


def run_limit(
    models: Sequence[ModelSpec],
    sizes: Sequence[int],
    inputs: Mapping[int, Sequence[int]],
    kernels: Mapping[tuple, CrossKernel],
    T: float,
    dt: float | None,
    seed: int,
    *,
    replication: int = 0,
    v_atoms: int = QUADRATURE_ATOMS,
    output_grid=None,
    record_increments: bool = False,
    collapse_idio: bool | None = None,
) -> list:
    n_steps, dt, out_steps = time_grid(T, dt, output_grid)
    engine = LimitEngine(models, sizes, inputs, kernels, dt, seed, replication, v_atoms, collapse_idio)
    return engine.run(n_steps, out_steps, record_increments)


def _single_engine_args(config: LimitSimConfig):
    model = config.model
    return [model], [int(config.M)], {0: (0,)}, {(0, 0): CrossKernel.from_model(model)}


def simulate_limit(config: LimitSimConfig) -> TrajectoryBundle:
    """Simulate one replication of the M-copy limit system."""
    models, sizes, inputs, kernels = _single_engine_args(config)
    (bundle,) = run_limit(
        models, sizes, inputs, kernels, config.T, config.dt, config.seed,
        replication=config.replication,
        v_atoms=config.v_atoms,
        output_grid=config.output_grid,
        record_increments=config.record_increments,
        collapse_idio=config.collapse_idio,
    )
    return bundle


def single_engine(config: LimitSimConfig, dt: float) -> LimitEngine:
    models, sizes, inputs, kernels = _single_engine_args(config)
    return LimitEngine(models, sizes, inputs, kernels, dt, config.seed, config.replication,
                       config.v_atoms, config.collapse_idio)


def conditional_noise_variance(model: ModelSpec, states: np.ndarray, dt: float, v_atoms: int = QUADRATURE_ATOMS):
    """Per-copy variance of the two white-noise terms given the current states.

    Summed entry by entry over the panel scalings: ``dt / M`` per bin and
    ``weight(a)`` per mark atom.
    """
    mu = EmpiricalMeasure1D(states)
    M = mu.n
    atoms = _atoms(model.mark_law, v_atoms)
    q = quantile_nodes(mu, M)
    f = model.f(q, mu)
    psi_t, second = mark_moments(model.kernel(mu), q[:, None], np.asarray(states)[None, :], atoms, atoms)
    k2 = kappa_from_moments(psi_t, second, atoms)
    common = np.einsum("j,jia,a->i", f, psi_t**2, atoms.weights * dt / M)
    idio = (f * dt / M) @ k2
    return common + idio


def limit_covariance_check(config: LimitSimConfig, pair=(0, 1), reps: int = 1):
    """Realized covariation of two copies' jump-driven increments against the prediction.

    The jump-driven increment of a copy is its common plus idiosyncratic
    term. For copies ``i != j`` the prediction is ``xi^2 int_0^t int f dmu_hat ds``,
    for ``i == j`` it is ``varsigma^2 int_0^t int f dmu_hat ds``. Requires a
    constant kernel. Averages over ``reps`` replications starting at
    ``config.replication``.
    """
    from .diagnostics import CovariationEstimate, aggregate_covariation
    from .model import sigma_xi_pair

    varsigma2, xi2 = sigma_xi_pair(config.model)
    i, j = pair
    coef = varsigma2 if i == j else xi2
    ests = []
    for r in range(reps):
        b = simulate_limit(replace(config, output_grid=[config.T], record_increments=True,
                                   replication=config.replication + r))
        jump = b.increments["common"] + b.increments["idio"]
        realized = np.concatenate([[0.0], np.cumsum(jump[:, i] * jump[:, j])])
        theoretical = coef * np.concatenate([[0.0], np.cumsum(b.mean_rate * b.dt)])
        times = np.arange(realized.size) * b.dt
        ests.append(CovariationEstimate(times, (i, j), realized, theoretical))
    return aggregate_covariation(ests)
