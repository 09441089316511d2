import math

import numpy as np
import pytest

from clkinetic import clkernel, collision
from clkinetic.errors import NonUnitOmega, SingularPoint


def test_post_collision_conserves(rng):
    u, v = rng.standard_normal((1000, 3)), rng.standard_normal((1000, 3))
    om = collision.random_unit_vectors(1000, rng)
    up, vp = collision.post_collision(u, v, om)
    np.testing.assert_allclose(up + vp, u + v, atol=1e-14)
    np.testing.assert_allclose(np.sum(up ** 2 + vp ** 2, 1), np.sum(u ** 2 + v ** 2, 1), rtol=1e-13)


def test_post_collision_involution(rng):
    u, v = rng.standard_normal(3), rng.standard_normal(3)
    om = collision.random_unit_vectors(1, rng)[0]
    up, vp = collision.post_collision(u, v, om)
    uu, vv = collision.post_collision(up, vp, om)
    np.testing.assert_allclose(uu, u, atol=1e-14)
    np.testing.assert_allclose(vv, v, atol=1e-14)


def test_non_unit_omega():
    with pytest.raises(NonUnitOmega):
        collision.post_collision(np.zeros(3), np.ones(3), np.array([1.0, 1.0, 0.0]))


def test_collision_frequency_at_rest():
    # mean relative speed of a T=1 Maxwellian from rest is 2 sqrt(2/pi);
    # times 2 pi (angular factor) times (2 pi)^{3/2}/(2 pi) (mass of mu0) gives 8 pi
    assert collision.collision_frequency(0.0) == pytest.approx(8 * math.pi, rel=1e-13)


@pytest.mark.parametrize("s,T", [(0.5, 1.0), (3.0, 0.5), (100.0, 0.5), (20.0, 2.0)])
def test_collision_frequency_closed_form(s, T):
    assert collision.collision_frequency(s, T) == pytest.approx(
        collision.collision_frequency_closed(s, T), rel=1e-12)


def test_nu_comparable_to_bracket():
    c1, c2 = collision.nu_comparability(1.0, 50.0, 100)
    assert 0 < c1 <= c2 < math.inf


def test_k_rho_singular():
    with pytest.raises(SingularPoint):
        collision.k_rho(np.zeros(3), np.zeros(3), 1.0)


@pytest.mark.parametrize("rho", [0.25, 1.0, 4.0])
def test_k_rho_l1(rho):
    for r in collision.k_rho_l1_check(np.array([1.0, 2.0, 0.0]), rho):
        assert r.passed, r


def test_k_rho_l1_mc(rng):
    # independent route: crude MC of int k_rho du with u = v + Gaussian
    rho = 1.0
    z = rng.standard_normal((400000, 3)) / math.sqrt(2 * rho)
    d = np.linalg.norm(z, axis=1)
    g = np.exp(-rho * d * d) * (rho / math.pi) ** 1.5
    vals = np.exp(-rho * d * d) / d / g
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean() - 2 * math.pi / rho) < 4 * se


def test_k_theta_scan_below_closed_form():
    r = collision.k_theta_check(0.2, 1.0, 0.5, v_max=5.0, n_v=6, n_dir=500)
    assert not r.asserted
    assert r.passed


def test_q_maxwellian_zero(rng):
    f = lambda w: clkernel.mu0(1.0, w)
    r = collision.q_gain_mc(f, f, np.array([1.0, 0.0, 0.0]), 1.0, 200000, rng)
    assert abs(r["estimate"]) < 4 * r["std_error"]


def test_q_paired_cancels(rng):
    f = lambda w: clkernel.mu0(1.0, w)
    r = collision.q_gain_mc(f, f, np.array([2.0, 0.0, 0.0]), 1.0, 10000, rng, paired=True)
    assert abs(r["estimate"]) < 1e-12 * r["gain"]


def test_gain_matches_loss_for_maxwellian(rng):
    # Q_gain(mu0, mu0)(v) = nu(v) mu0(v)
    v = np.array([0.0, 1.5, 0.0])
    f = lambda w: clkernel.mu0(1.0, w)
    r = collision.q_gain_mc(f, f, v, 1.0, 200000, rng)
    target = collision.collision_frequency(1.5) * float(clkernel.mu0(1.0, v))
    assert abs(r["gain"] - target) < 4 * r["gain_se"]
