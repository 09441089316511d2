import numpy as np
import pytest

from clkinetic import clkernel, geometry, simulator
from clkinetic.rng import chunk_bounds, stream


def test_streams_are_reproducible_and_distinct():
    a = stream(7, 3, 1).standard_normal(4)
    b = stream(7, 3, 1).standard_normal(4)
    c = stream(7, 4, 1).standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_chunk_bounds():
    assert chunk_bounds(10, 4) == [(0, 4), (4, 8), (8, 10)]


def test_thread_count_does_not_change_result(ball, wall):
    r1 = simulator.simulate(ball, wall, 20000, 2.0, seed=11, threads=1)
    r2 = simulator.simulate(ball, wall, 20000, 2.0, seed=11, threads=3)
    np.testing.assert_array_equal(r1["ensemble"].velocities, r2["ensemble"].velocities)
    np.testing.assert_array_equal(r1["events"], r2["events"])


def test_particles_stay_inside_and_mass_conserved(quartic, wall):
    r = simulator.simulate(quartic, wall, 3000, 3.0, seed=2)
    assert r["mass_conserved"]
    assert r["max_xi"] <= 1e-8
    assert r["events"].sum() > 0


@pytest.mark.parametrize("kind", ["specular", "bounceback"])
def test_limiting_walls_conserve_energy(ball, wall, kind):
    r = simulator.simulate(ball, wall, 2000, 3.0, seed=4, kind=kind, T_init=1.0)
    init = simulator.initialize_ensemble(ball, 2000, 1.0, stream(4, 0, 0))
    e0 = np.sum(init.velocities ** 2)
    e1 = np.sum(r["ensemble"].velocities ** 2)
    assert e1 == pytest.approx(e0, rel=1e-10)


def test_mean_free_time_ball(ball, wall):
    # wall flux of a uniform isotropic gas: S <|v|>/(4V) = 3 <|v|>/4 events per particle per unit time
    tau = simulator.mean_free_time(ball, wall, seed=1, n=20000)
    expected = 1.0 / (0.75 * 2.0 * np.sqrt(2.0 / np.pi))
    assert tau == pytest.approx(expected, rel=0.03)


def test_speed_chi2_accepts_maxwellian(rng):
    v = rng.standard_normal((50000, 3)) * np.sqrt(1.3)
    _, dof, p = simulator.speed_chi2(np.linalg.norm(v, axis=1), 1.3)
    assert dof == 39 and p > 1e-3


def test_speed_chi2_rejects_wrong_temperature(rng):
    v = rng.standard_normal((50000, 3)) * np.sqrt(1.1)
    assert simulator.speed_chi2(np.linalg.norm(v, axis=1), 1.0)[2] < 1e-6


def test_tally_null_mass_flux(ball, wall):
    r = simulator.simulate(ball, wall, 5000, 5.0, seed=9)
    for row in simulator.null_flux_tally(r["tally"]):
        assert row["mass_ok"]


def test_moments_shape(ball, wall):
    r = simulator.simulate(ball, wall, 2000, 2.0, seed=3, n_snapshots=5)
    assert len(r["moments"]) == 5
    assert {"time", "density", "temperature"} <= set(r["moments"][0])
