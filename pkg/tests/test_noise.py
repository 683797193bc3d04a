import numpy as np
import pytest

from cmkv.model import rademacher
from cmkv.noise import (
    CHANNELS,
    NoiseStream,
    draw_marks,
    gaussian_increment,
    gaussian_increments,
    parse_seed,
    poisson_events,
    sample_idio_block,
    sample_panel,
)


def test_parse_seed():
    assert parse_seed("42") == 42
    assert parse_seed("0xFF") == 255
    assert parse_seed(str(2**64 + 3)) == 3
    with pytest.raises(ValueError):
        parse_seed("-1")


def test_gaussian_increment_deterministic():
    s = NoiseStream(7, "brownian", particle=3)
    assert gaussian_increment(s, 12, 0.01) == gaussian_increment(NoiseStream(7, "brownian", particle=3), 12, 0.01)
    assert gaussian_increment(s, 12, 0.01) != gaussian_increment(s, 13, 0.01)


def test_gaussian_moments():
    dt = 0.01
    z = gaussian_increments(NoiseStream(1), 0, dt, 10**6)
    assert abs(z.mean()) <= 4 * np.sqrt(dt / 10**6)
    assert z.var() == pytest.approx(dt, rel=0.01)


def test_gaussian_scalar_stream_matches_particle_walk():
    # one particle stream across steps is a normal sample of variance dt
    s = NoiseStream(3, "brownian", particle=0)
    z = np.array([gaussian_increment(s, k, 1.0) for k in range(20_000)])
    assert abs(z.mean()) < 4 / np.sqrt(z.size)
    assert z.var() == pytest.approx(1.0, rel=0.05)


def test_channels_are_uncorrelated():
    draws = {c: NoiseStream(5, c).generator(0).standard_normal(10**5) for c in CHANNELS}
    names = sorted(CHANNELS)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            r = np.corrcoef(draws[a], draws[b])[0, 1]
            assert abs(r) < 4 / np.sqrt(10**5)


def test_unknown_channel():
    with pytest.raises(ValueError):
        NoiseStream(0, "nope")


def test_poisson_events():
    s = NoiseStream(2, "poisson_events")
    assert poisson_events(s, 0.0, (0.0, 1.0)).size == 0
    n = 4000
    counts = np.array([poisson_events(s, 3.0, (0.0, 1.0), step=k).size for k in range(n)])
    assert abs(counts.mean() - 3.0) <= 4 * np.sqrt(3.0) / np.sqrt(n)
    ev = poisson_events(s, 50.0, (2.0, 3.0))
    assert np.all(np.diff(ev) >= 0) and np.all((ev > 2.0) & (ev <= 3.0))


def test_draw_marks():
    s = NoiseStream(9, "poisson_marks")
    law = rademacher()
    u, r = draw_marks(s, (0, 0), 0, law)
    assert r.size == 0 and u in (-1.0, 1.0)
    senders = np.array([draw_marks(s, (k, 0), 1, law)[0] for k in range(10**5)])
    assert abs(senders.mean()) <= 0.013
    # marks of distinct events are independent
    other = np.array([draw_marks(s, (k, 1), 1, law)[0] for k in range(10**5)])
    assert abs(np.corrcoef(senders, other)[0, 1]) < 4 / np.sqrt(10**5)


def test_panel_total_variance():
    atoms = rademacher()
    s = NoiseStream(4, "common_W")
    tot = np.array([np.sum(sample_panel(s, k, 10, atoms, 0.01).increments ** 2) for k in range(10**4)])
    assert tot.mean() == pytest.approx(0.01, rel=0.02)


def test_common_panel_shared_and_idio_independent():
    atoms = rademacher()
    s = NoiseStream(4, "common_W")
    a = sample_panel(s, 5, 8, atoms, 0.01).increments
    b = sample_panel(NoiseStream(4, "common_W"), 5, 8, atoms, 0.01).increments
    np.testing.assert_array_equal(a, b)
    H = np.array([sample_idio_block(NoiseStream(4, "idio_W"), k, 2, 50, 0.01) for k in range(2000)])
    x, y = H[:, 0, :].ravel(), H[:, 1, :].ravel()
    assert abs(np.corrcoef(x, y)[0, 1]) < 4 / np.sqrt(x.size)
