"""Deterministic, coordinate-keyed randomness.

Every random quantity is addressed by ``(root_seed, replication,
population, particle, channel, source)`` plus a counter ``(step, sub)``.
The coordinates are hashed into a Philox key through
:class:`numpy.random.SeedSequence`; the counter sets the Philox block
counter, so any step of any stream can be regenerated without replaying
the ones before it.

Vectorized draws use block streams (``particle=-1``): row or entry ``i``
of the block belongs to particle ``i``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model import Discrete, NuSpec

__all__ = [
    "CHANNELS",
    "NoiseStream",
    "WhiteNoisePanel",
    "parse_seed",
    "gaussian_increment",
    "gaussian_increments",
    "poisson_events",
    "draw_marks",
    "sample_panel",
    "sample_idio_block",
]

CHANNELS = {
    "initial": 0,
    "brownian": 1,
    "poisson_events": 2,
    "poisson_marks": 3,
    "common_W": 4,
    "idio_W": 5,
}
_MASK64 = (1 << 64) - 1


def parse_seed(text) -> int:
    """Decimal or ``0x`` hex seed, reduced to 64 bits."""
    if isinstance(text, int):
        value = text
    else:
        s = str(text).strip().lower()
        value = int(s, 16) if s.startswith("0x") else int(s, 10)
    if value < 0:
        raise ValueError("seed must be nonnegative")
    return value & _MASK64


@dataclass(frozen=True)
class NoiseStream:
    root_seed: int
    channel: str = "brownian"
    replication: int = 0
    population: int = 0
    particle: int = -1
    source: int = 0

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise ValueError(f"unknown channel {self.channel!r}")

    @property
    def key(self) -> np.ndarray:
        return _key(self.root_seed, self.replication, self.population, self.particle,
                    CHANNELS[self.channel], self.source)

    def generator(self, step: int = 0, sub: int = 0) -> np.random.Generator:
        counter = np.array([0, 0, sub & _MASK64, step & _MASK64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(counter=counter, key=self.key))

    def with_(self, **changes) -> "NoiseStream":
        return replace(self, **changes)


_KEY_CACHE: dict = {}


def _key(*coords) -> np.ndarray:
    hit = _KEY_CACHE.get(coords)
    if hit is None:
        root, *rest = coords
        # particle may be -1 for block streams; shift to keep entropy nonnegative
        spawn = tuple(int(c) + 1 for c in rest)
        hit = np.random.SeedSequence(int(root), spawn_key=spawn).generate_state(2, np.uint64)
        hit.flags.writeable = False
        if len(_KEY_CACHE) > 100_000:
            _KEY_CACHE.clear()
        _KEY_CACHE[coords] = hit
    return hit


def gaussian_increment(stream: NoiseStream, step: int, dt: float) -> float:
    """One ``Normal(0, dt)`` draw addressed by ``(stream, step)``."""
    return float(stream.generator(step).standard_normal() * np.sqrt(dt))


def gaussian_increments(stream: NoiseStream, step: int, dt: float, size: int) -> np.ndarray:
    return stream.generator(step).standard_normal(size) * np.sqrt(dt)


def poisson_events(stream: NoiseStream, rate: float, horizon, step: int = 0) -> np.ndarray:
    """Sorted event times of a homogeneous Poisson process on ``(t0, t1]``.

    Callers thin each event with probability ``f(state) / rate``.
    """
    t0, t1 = horizon
    if not t1 > t0:
        raise ValueError("horizon must be nonempty")
    if rate <= 0:
        return np.empty(0)
    rng = stream.generator(step)
    n = rng.poisson(rate * (t1 - t0))
    return np.sort(t1 - (t1 - t0) * rng.random(n))


def draw_marks(stream: NoiseStream, event, n_receivers: int, law: NuSpec, receiver_law: NuSpec | None = None):
    """Marks consumed by one jump event: the sender's and one per receiver.

    ``event`` is a ``(step, ordinal)`` pair or a flat integer ordinal.
    """
    step, sub = event if isinstance(event, tuple) else (0, event)
    rng = stream.generator(step, sub + 1)
    u_sender = float(law.sample(rng, 1)[0])
    recv = (receiver_law or law).sample(rng, n_receivers) if n_receivers else np.empty(0)
    return u_sender, recv


@dataclass(frozen=True)
class WhiteNoisePanel:
    """Gaussian panel of one time step: ``bins_p`` quantile bins by ``V`` mark atoms.

    Entry ``(j, a)`` has variance ``dt * weight(a) / bins_p``.
    """

    bins_p: int
    atoms_v: Discrete
    dt: float
    increments: np.ndarray

    @property
    def total_variance(self) -> float:
        return self.dt


def sample_panel(stream: NoiseStream, step: int, M: int, atoms: Discrete, dt: float, sub: int = 0) -> WhiteNoisePanel:
    """One panel of the white noise with intensity ``dt dp dnu1(v)``."""
    if M < 1:
        raise ValueError("M must be >= 1")
    z = stream.generator(step, sub).standard_normal((M, atoms.size))
    incr = z * np.sqrt(dt / M * atoms.weights)[None, :]
    return WhiteNoisePanel(M, atoms, dt, incr)


def sample_idio_block(stream: NoiseStream, step: int, copies: int, M: int, dt: float) -> np.ndarray:
    """Idiosyncratic panels of all copies: row ``i`` is copy ``i``'s ``M`` bins."""
    return stream.generator(step).standard_normal((copies, M)) * np.sqrt(dt / M)
