"""Several populations coupled through an input graph.

Population ``k`` receives jumps from every population ``l`` in its input
set ``I(k)``; a sender in ``l`` moves each receiver in ``k`` by
``N_l^(-1/2) psi_lk(x, y, m_l, m_k, u, v)``. In the limit, population ``l``
owns one common panel shared by all its receivers, and each
``(l, k, copy)`` owns an idiosyncratic panel.

Config files number populations from 1, as in the usual figures; the
Python API numbers them from 0. Stream coordinates use the 0-based index,
so a one-population system with ``I = {0}`` consumes exactly the streams
of the single-population simulators.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .expr import ExpressionError, parse_expression
from .finite_system import CrossKernel, run_finite
from .limit_system import run_limit
from .measure import EmpiricalMeasure1D
from .model import CheckReport, ModelError, build_model, mark_moments

__all__ = [
    "MultiPopSpec",
    "build_multipop",
    "chain_inputs",
    "tree_inputs",
    "simulate_multipop_finite",
    "simulate_multipop_limit",
]


def chain_inputs(n: int = 8) -> dict:
    """Directed cycle 1 -> 2 -> ... -> n -> 1 (0-based: k receives from k - 1)."""
    return {k: ((k - 1) % n,) for k in range(n)}


def tree_inputs() -> dict:
    """Binary tree of seven populations: 1 <- {2, 3}, 2 <- {4, 5}, 3 <- {6, 7}."""
    return {0: (1, 2), 1: (3, 4), 2: (5, 6), 3: (), 4: (), 5: (), 6: ()}


@dataclass(frozen=True)
class MultiPopSpec:
    models: list
    sizes: list
    inputs: dict
    kernels: dict
    config: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        n = len(self.models)
        if n == 0 or len(self.sizes) != n:
            raise ModelError("need one size per population")
        if any(int(s) < 2 for s in self.sizes):
            raise ModelError("every population needs at least 2 particles")
        for k, srcs in self.inputs.items():
            if not 0 <= k < n or any(not 0 <= l < n for l in srcs):
                raise ModelError(f"input graph refers to unknown populations: {k}: {srcs}")
            for l in srcs:
                if (l, k) not in self.kernels:
                    raise ModelError(f"missing cross kernel {l + 1}->{k + 1}")

    @property
    def n_pop(self) -> int:
        return len(self.models)

    def check_centering(self, tol: float = 1e-12) -> dict:
        """Centering of every cross kernel under (sender marks) x (receiver marks).

        Integrates by enumeration over the quadrature atoms of both laws at a
        few probe states; exact for small discrete laws, and up to the
        64-atom quantization otherwise.
        """
        out = {}
        m0 = EmpiricalMeasure1D.dirac(0.0)
        xs = np.array([-1.0, 0.0, 1.0])[:, None]
        ys = np.array([-1.0, 1.0])[None, :]
        for (l, k), ker in self.kernels.items():
            send, recv = self.models[l].atoms, self.models[k].atoms
            psi_t, _ = mark_moments(ker.bind(m0, m0), xs, ys, send, recv)
            vals = (psi_t @ send.weights).ravel()
            bad = [float(v) for v in vals if abs(v) > tol]
            out[(l, k)] = CheckReport(not bad, "exact", vals.tolist(), failures=bad)
        return out


def _kernel_from_config(expr, models, l, k) -> CrossKernel:
    if expr is None:
        return CrossKernel.from_model(models[l])
    if isinstance(expr, dict) and "same_as" in expr:
        src = models[int(expr["same_as"]) - 1]
        return CrossKernel.from_model(src)
    try:
        e = parse_expression(expr, allowed={"x", "y", "u", "v", "m", "ml", "mk"})
    except ExpressionError as exc:
        raise ModelError(f"malformed cross kernel {l + 1}->{k + 1}: {exc}") from None

    def psi(x, y, ml, mk, u, v):
        return e(x=x, y=y, m=ml, ml=ml, mk=mk, u=u, v=v)

    return CrossKernel(psi, constant=not (e.variables & {"x", "y", "m", "ml", "mk"}))


def build_multipop(config: dict) -> MultiPopSpec:
    """Build from ``{"populations": [...], "inputs": {"k": [l, ...]}, "cross_kernels": {"l->k": expr}}``.

    Each population entry is a model config plus ``"size"``. Indices are
    1-based. A missing kernel ``l->k`` (and no ``"default"`` entry) falls
    back to the sender population's own jump kernel, evaluated at the
    sender's measure; ``{"same_as": j}`` reuses population ``j``'s kernel.
    ``"inputs"`` may also be the string ``"chain"`` or ``"tree"``.
    """
    pops = config.get("populations")
    if not pops:
        raise ModelError("multipop config needs a nonempty 'populations' list")
    models, sizes = [], []
    for p in pops:
        p = dict(p)
        size = p.pop("size", None)
        if size is None:
            raise ModelError("every population needs a 'size'")
        models.append(build_model(p))
        sizes.append(int(size))
    n = len(models)
    raw_inputs = config.get("inputs", {})
    if raw_inputs == "tree":
        inputs = tree_inputs()
    elif raw_inputs == "chain":
        inputs = chain_inputs(n)
    else:
        inputs = {k: () for k in range(n)}
        for key, srcs in raw_inputs.items():
            inputs[int(key) - 1] = tuple(int(s) - 1 for s in srcs)
    for k, srcs in inputs.items():
        if not 0 <= k < n or any(not 0 <= l < n for l in srcs):
            raise ModelError(f"input graph refers to unknown populations: {k + 1}: {[l + 1 for l in srcs]}")
    raw_kernels = config.get("cross_kernels", {})
    kernels = {}
    for k, srcs in inputs.items():
        for l in srcs:
            kernels[(l, k)] = _kernel_from_config(
                raw_kernels.get(f"{l + 1}->{k + 1}", raw_kernels.get("default")), models, l, k)
    spec = MultiPopSpec(models, sizes, inputs, kernels, config=config)
    for (l, k), rep in spec.check_centering().items():
        if not rep.passed:
            raise ModelError(f"cross kernel {l + 1}->{k + 1} is not centered: {rep.failures[:1]}")
    return spec


def simulate_multipop_finite(spec: MultiPopSpec, T: float, dt: float | None, seed: int, *,
                             replication: int = 0, record_jump_log: bool = False, output_grid=None) -> list:
    """One bundle per population (0-based order)."""
    return run_finite(spec.models, spec.sizes, spec.inputs, spec.kernels, T, dt, seed,
                      replication=replication, record_jump_log=record_jump_log, output_grid=output_grid)


def simulate_multipop_limit(spec: MultiPopSpec, T: float, dt: float | None, seed: int, *,
                            replication: int = 0, output_grid=None, record_increments: bool = False,
                            v_atoms: int = 64) -> list:
    return run_limit(spec.models, spec.sizes, spec.inputs, spec.kernels, T, dt, seed,
                     replication=replication, output_grid=output_grid,
                     record_increments=record_increments, v_atoms=v_atoms)
