"""Two-particle generator and the martingale-problem residual.

For a test function ``g(y1, y2)`` the generator is

    Lg(y, m, x, v) = sum_i b(y_i, m) d_i g + 1/2 sum_i sigma(y_i, m)^2 d_ii g
                   + 1/2 f(x, m) sum_i kappa(x, y_i, m)^2 d_ii g
                   + 1/2 f(x, m) sum_{i,j} psi_tilde(x, y_i, m, v) psi_tilde(x, y_j, m, v) d_ij g

and ``g(Y_t) - g(Y_0) - int_0^t int int Lg(Y_s, mu_s, x, v) nu1(dv) mu_s(dx) ds``
should be a martingale along a pair of limit copies.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .limit_system import LimitSimConfig, _atoms, simulate_limit
from .measure import EmpiricalMeasure1D
from .model import ModelSpec, kappa_from_moments, mark_moments

__all__ = [
    "TestFunction2D",
    "BUILTIN_TESTS",
    "generator_apply",
    "integrated_generator",
    "martingale_residuals",
    "residuals_from_bundle",
    "martingale_residual",
]


def _fd_step(y):
    return 1e-5 * (1.0 + np.abs(y))


@dataclass(frozen=True)
class TestFunction2D:
    """A C^2_b test function with optional closed-form derivatives.

    ``grad`` returns ``(g_1, g_2)``; ``hess`` returns ``(g_11, g_12, g_22)``.
    Missing derivatives fall back to central finite differences with step
    ``1e-5 (1 + |y|)``.
    """

    __test__ = False  # not a pytest class

    g: Callable
    grad: Callable | None = None
    hess: Callable | None = None
    name: str = "g"

    def __call__(self, y1, y2):
        return self.g(y1, y2)

    def gradient(self, y1, y2):
        if self.grad is not None:
            return self.grad(y1, y2)
        h1, h2 = _fd_step(y1), _fd_step(y2)
        g1 = (self.g(y1 + h1, y2) - self.g(y1 - h1, y2)) / (2 * h1)
        g2 = (self.g(y1, y2 + h2) - self.g(y1, y2 - h2)) / (2 * h2)
        return g1, g2

    def hessian(self, y1, y2):
        if self.hess is not None:
            return self.hess(y1, y2)
        g, h1, h2 = self.g, _fd_step(y1), _fd_step(y2)
        c = g(y1, y2)
        g11 = (g(y1 + h1, y2) - 2 * c + g(y1 - h1, y2)) / h1**2
        g22 = (g(y1, y2 + h2) - 2 * c + g(y1, y2 - h2)) / h2**2
        g12 = (g(y1 + h1, y2 + h2) - g(y1 + h1, y2 - h2) - g(y1 - h1, y2 + h2) + g(y1 - h1, y2 - h2)) / (4 * h1 * h2)
        return g11, g12, g22


BUILTIN_TESTS = {
    "const": TestFunction2D(lambda a, b: 1.0 + 0.0 * a, lambda a, b: (0.0, 0.0),
                            lambda a, b: (0.0, 0.0, 0.0), "const"),
    "y1": TestFunction2D(lambda a, b: a + 0.0 * b, lambda a, b: (1.0, 0.0),
                         lambda a, b: (0.0, 0.0, 0.0), "y1"),
    "y1y2": TestFunction2D(lambda a, b: a * b, lambda a, b: (b, a),
                           lambda a, b: (0.0, 1.0, 0.0), "y1y2"),
    "sin_cos": TestFunction2D(lambda a, b: np.sin(a) + np.cos(b), lambda a, b: (np.cos(a), -np.sin(b)),
                              lambda a, b: (-np.sin(a), 0.0, -np.cos(b)), "sin_cos"),
    "sin_prod": TestFunction2D(lambda a, b: np.sin(a) * np.sin(b),
                               lambda a, b: (np.cos(a) * np.sin(b), np.sin(a) * np.cos(b)),
                               lambda a, b: (-np.sin(a) * np.sin(b), np.cos(a) * np.cos(b), -np.sin(a) * np.sin(b)),
                               "sin_prod"),
}


def generator_apply(g: TestFunction2D, y, m: EmpiricalMeasure1D, x: float, v: float, model: ModelSpec) -> float:
    """``Lg(y, m, x, v)`` at one sender state ``x`` and one mark ``v``."""
    y1, y2 = float(y[0]), float(y[1])
    ys = np.array([y1, y2])
    g1, g2 = g.gradient(y1, y2)
    g11, g12, g22 = g.hessian(y1, y2)
    b = model.b(ys, m)
    s = model.sigma(ys, m)
    f = float(model.f(np.array([x]), m)[0])
    d = model.derived
    k2 = np.asarray(d.kappa_sq(x, ys, m))
    pt = np.asarray(d.psi_tilde(x, ys, m, v))
    out = b[0] * g1 + b[1] * g2
    out += 0.5 * s[0] ** 2 * g11 + 0.5 * s[1] ** 2 * g22
    out += 0.5 * f * (k2[0] * g11 + k2[1] * g22)
    out += 0.5 * f * (pt[0] ** 2 * g11 + 2 * pt[0] * pt[1] * g12 + pt[1] ** 2 * g22)
    return float(out)


def integrated_generator(g: TestFunction2D, y, m: EmpiricalMeasure1D, model: ModelSpec, atoms=None) -> float:
    """``int int Lg(y, m, x, v) nu1(dv) m(dx)``: copies of ``m`` and mark atoms."""
    atoms = atoms if atoms is not None else _atoms(model.mark_law, 64)
    y1, y2 = float(y[0]), float(y[1])
    ys = np.array([y1, y2])
    g1, g2 = g.gradient(y1, y2)
    g11, g12, g22 = g.hessian(y1, y2)
    b = model.b(ys, m)
    s = model.sigma(ys, m)
    out = b[0] * g1 + b[1] * g2 + 0.5 * (s[0] ** 2 * g11 + s[1] ** 2 * g22)
    if g11 == 0 and g12 == 0 and g22 == 0:
        return float(out)
    x = m.samples
    f = model.f(x, m)
    psi_t, second = mark_moments(model.kernel(m), x[:, None], ys[None, :], atoms, atoms)
    k2 = kappa_from_moments(psi_t, second, atoms)
    w = atoms.weights
    p1, p2 = psi_t[:, 0, :], psi_t[:, 1, :]
    cross = ((p1 * p1) @ w) * g11 + 2 * ((p1 * p2) @ w) * g12 + ((p2 * p2) @ w) * g22
    jump = k2[:, 0] * g11 + k2[:, 1] * g22 + cross
    out += 0.5 * float(np.mean(f * jump))
    return float(out)


def _residual_from_states(states: np.ndarray, dt: float, g: TestFunction2D, model: ModelSpec,
                          i0: int, i1: int, pair=(0, 1), atoms=None) -> float:
    a, b = pair
    integral = 0.0
    for l in range(i0, i1):
        row = states[l]
        integral += dt * integrated_generator(g, (row[a], row[b]), EmpiricalMeasure1D(row), model, atoms)
    end, start = states[i1], states[i0]
    return float(g(end[a], end[b]) - g(start[a], start[b]) - integral)


def residuals_from_bundle(bundle, model: ModelSpec, tests, s: float, t: float, pair=(0, 1), atoms=None) -> list:
    """``M^g_t - M^g_s`` along one limit run for each test function in ``tests``.

    ``bundle`` must be recorded on the full step grid.
    """
    atoms = atoms if atoms is not None else _atoms(model.mark_law, 64)
    i0, i1 = bundle.time_index(s), bundle.time_index(t)
    if bundle.times.size != bundle.meta.get("n_steps", bundle.times.size - 1) + 1:
        raise ValueError("bundle must be recorded on every step")
    return [_residual_from_states(bundle.states, bundle.dt, g, model, i0, i1, pair, atoms) for g in tests]


def martingale_residuals(model: ModelSpec, g: TestFunction2D, s: float, t: float, config: LimitSimConfig,
                         reps: int | None = None, pair=(0, 1), replications=None) -> np.ndarray:
    """``M^g_t - M^g_s`` for a pair of copies, one value per replication.

    Replications ``0 .. reps-1`` unless explicit ``replications`` are given.
    """
    if not s < t:
        raise ValueError("need s < t")
    if t > config.T + 1e-12:
        raise ValueError("t must not exceed the simulation horizon")
    reps_list = list(range(reps)) if replications is None else list(replications)
    cfg = replace(config, model=model, output_grid=None, record_increments=False)
    atoms = _atoms(model.mark_law, cfg.v_atoms)
    out = np.empty(len(reps_list))
    for a, r in enumerate(reps_list):
        bundle = simulate_limit(replace(cfg, replication=r))
        (out[a],) = residuals_from_bundle(bundle, model, [g], s, t, pair, atoms)
    return out


def martingale_residual(model: ModelSpec, g: TestFunction2D, s: float, t: float, config: LimitSimConfig,
                        reps: int, pair=(0, 1)):
    """Sample mean and standard error of ``M^g_t - M^g_s``.

    The martingale property holds when ``|mean| <= 4 * stderr``.
    """
    res = martingale_residuals(model, g, s, t, config, reps, pair)
    se = float(res.std(ddof=1) / np.sqrt(reps)) if reps > 1 else float("nan")
    return float(res.mean()), se
