"""The N-particle system with simultaneous, N^(-1/2)-scaled jumps.

Euler scheme with left-endpoint freezing: within a step ``[t, t + dt)``
the empirical measure, the jump rates and the states seen by the jump
kernel are those at ``t``. Jump events of every sender are generated at
the bound rate ``f_max`` and thinned with probability ``f / f_max``; an
accepted event of sender ``k`` moves every other particle ``i`` by
``N^(-1/2) psi(X^k, X^i, mu, u^k, u^i)``. The sender itself receives
nothing.

The engine :func:`run_finite` handles several populations coupled through
an input graph; :func:`simulate_finite` is its one-population case.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .measure import EmpiricalMeasure1D
from .model import ModelError, ModelSpec, NumericalAbort
from .noise import NoiseStream

__all__ = [
    "CrossKernel",
    "JumpEvent",
    "TrajectoryBundle",
    "FiniteSimConfig",
    "simulate_finite",
    "empirical_path",
    "run_finite",
    "time_grid",
]


@dataclass(frozen=True)
class CrossKernel:
    """Jump kernel ``psi(x, y, m_send, m_recv, u, v)`` from one population to another."""

    psi: Callable
    constant: bool = False

    def bind(self, m_send, m_recv):
        psi = self.psi
        return lambda x, y, u, v: psi(x, y, m_send, m_recv, u, v)

    @classmethod
    def from_model(cls, model: ModelSpec) -> "CrossKernel":
        psi = model.psi
        return cls(lambda x, y, ms, mr, u, v: psi(x, y, ms, u, v), model.constant_kernel)


@dataclass(frozen=True)
class JumpEvent:
    time: float
    sender: int
    increments: np.ndarray
    source: int = 0


@dataclass
class TrajectoryBundle:
    """States on an output grid (rows are times, columns particles or copies).

    ``mean_rate[s]`` is ``int f dmu`` at the start of step ``s``.
    ``increments`` (limit runs only, optional) maps a term name to a
    ``(steps, copies)`` array of per-step increments.
    """

    times: np.ndarray
    states: np.ndarray
    dt: float
    jump_log: list | None = None
    mean_rate: np.ndarray | None = None
    increments: dict | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_particles(self) -> int:
        return self.states.shape[1]

    def time_index(self, t: float) -> int:
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not on the output grid")
        return idx

    def empirical(self, t: float) -> EmpiricalMeasure1D:
        return EmpiricalMeasure1D(self.states[self.time_index(t)])


def empirical_path(bundle: TrajectoryBundle, t: float) -> EmpiricalMeasure1D:
    """Empirical measure of all particles at grid time ``t``."""
    return bundle.empirical(t)


def time_grid(T: float, dt: float | None, output_grid=None):
    """Number of steps, step size and sorted output step indices."""
    if dt is None:
        dt = 1e-3 * T
    if not dt > 0:
        raise ModelError("dt must be positive")
    if not T >= dt * (1 - 1e-12):
        raise ModelError("horizon T must be at least dt")
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * T:
        raise ModelError("T must be a multiple of dt")
    if output_grid is None:
        out = np.arange(n_steps + 1)
    else:
        ratios = np.asarray(output_grid, dtype=float) / dt
        out = np.rint(ratios).astype(np.int64)
        if np.any(np.abs(ratios - out) > 1e-6) or np.any(out < 0) or np.any(out > n_steps):
            raise ModelError("output grid must consist of multiples of dt within [0, T]")
        out = np.unique(out)
    return n_steps, float(dt), out


@dataclass(frozen=True)
class FiniteSimConfig:
    model: ModelSpec
    N: int
    T: float
    dt: float | None = None
    seed: int = 0
    record_jump_log: bool = False
    output_grid: Sequence[float] | None = None
    replication: int = 0

    def __post_init__(self):
        if int(self.N) < 2:
            raise ModelError("N must be at least 2")


def simulate_finite(config: FiniteSimConfig) -> TrajectoryBundle:
    """Simulate one replication of the N-particle system."""
    model = config.model
    report = model.centering
    if not report.passed:
        raise ModelError(f"jump kernel is not centered: {report.failures[:1]}")
    (bundle,) = run_finite(
        [model],
        [int(config.N)],
        {0: (0,)},
        {(0, 0): CrossKernel.from_model(model)},
        config.T,
        config.dt,
        config.seed,
        replication=config.replication,
        record_jump_log=config.record_jump_log,
        output_grid=config.output_grid,
    )
    return bundle


def run_finite(
    models: Sequence[ModelSpec],
    sizes: Sequence[int],
    inputs: Mapping[int, Sequence[int]],
    kernels: Mapping[tuple, CrossKernel],
    T: float,
    dt: float | None,
    seed: int,
    *,
    replication: int = 0,
    record_jump_log: bool = False,
    output_grid=None,
) -> list:
    """Simulate coupled finite populations; returns one bundle per population.

    ``inputs[k]`` lists the populations whose jumps reach population ``k``;
    ``kernels[(l, k)]`` is the kernel from sender population ``l`` to
    receiver population ``k``, scaled by ``sizes[l] ** -0.5``.
    """
    n_steps, dt, out_steps = time_grid(T, dt, output_grid)
    n_pop = len(models)
    receivers = {l: sorted(k for k in range(n_pop) if l in inputs.get(k, ())) for l in range(n_pop)}
    sqdt = np.sqrt(dt)

    def stream(channel, k):
        return NoiseStream(seed, channel, replication, population=k)

    brown = [stream("brownian", k) for k in range(n_pop)]
    events = [stream("poisson_events", k) for k in range(n_pop)]
    marks = [stream("poisson_marks", k) for k in range(n_pop)]

    X = [models[k].sample_initial(stream("initial", k).generator(0), sizes[k]) for k in range(n_pop)]
    record = {int(s): i for i, s in enumerate(out_steps)}
    states = [np.empty((out_steps.size, sizes[k])) for k in range(n_pop)]
    mean_rate = [np.empty(n_steps) for _ in range(n_pop)]
    logs = [[] if record_jump_log else None for _ in range(n_pop)]
    for k in range(n_pop):
        if not np.all(np.isfinite(X[k])):
            raise NumericalAbort("non-finite initial state", 0)
        if 0 in record:
            states[k][record[0]] = X[k]

    for s in range(n_steps):
        t = s * dt
        mus = [EmpiricalMeasure1D(x) for x in X]
        rates = []
        dX = []
        for k, mk in enumerate(models):
            r = mk.f(X[k], mus[k], step=s)
            rates.append(r)
            mean_rate[k][s] = r.mean()
            dB = brown[k].generator(s).standard_normal(sizes[k]) * sqdt
            dX.append(mk.b(X[k], mus[k]) * dt + mk.sigma(X[k], mus[k]) * dB)
        for l in range(n_pop):
            if not receivers[l]:
                continue
            fmax = models[l].rate_bound
            rng = events[l].generator(s)
            counts = rng.poisson(fmax * dt, sizes[l])
            total = int(counts.sum())
            if total == 0:
                continue
            who = np.repeat(np.arange(sizes[l]), counts)
            accept_u = rng.random(total)
            when = t + dt * rng.random(total)
            ok = accept_u * fmax < rates[l][who]
            who, when = who[ok], when[ok]
            order = np.argsort(when, kind="stable")
            scale = 1.0 / np.sqrt(sizes[l])
            law_l = models[l].mark_law
            for ordinal, e in enumerate(order):
                j = int(who[e])
                mrng = marks[l].generator(s, ordinal + 1)
                u_s = float(law_l.sample(mrng, 1)[0])
                for k in receivers[l]:
                    u_r = models[k].mark_law.sample(mrng, sizes[k])
                    kern = kernels[(l, k)].bind(mus[l], mus[k])
                    inc = np.array(np.broadcast_to(kern(X[l][j], X[k], u_s, u_r) * scale, (sizes[k],)), dtype=float)
                    if k == l:
                        inc[j] = 0.0
                    dX[k] += inc
                    if logs[k] is not None:
                        logs[k].append(JumpEvent(float(when[e]), j, inc, source=l))
        for k in range(n_pop):
            X[k] = X[k] + dX[k]
            if not np.all(np.isfinite(X[k])):
                raise NumericalAbort("non-finite state", s + 1)
            if s + 1 in record:
                states[k][record[s + 1]] = X[k]

    times = out_steps * dt
    return [
        TrajectoryBundle(
            times=times,
            states=states[k],
            dt=dt,
            jump_log=logs[k],
            mean_rate=mean_rate[k],
            meta={"system": "finite", "seed": int(seed), "replication": int(replication),
                  "population": k, "n_steps": n_steps},
        )
        for k in range(n_pop)
    ]
