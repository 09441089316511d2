import math

import numpy as np
import pytest

from clkinetic import clkernel, lemma_oracle as lo
from clkinetic.errors import DivergentIntegral


@pytest.mark.parametrize("a,b,eps", [(0.0, 1.0, 0.0), (0.3, 1.5, 0.05), (0.4, 0.6, 0.1)])
def test_abc_identity(a, b, eps):
    r = lo.lemma_abc_check(a, b, eps, np.array([1.0, 0.5]))
    assert r.passed, r


def test_abc_identity_known_value():
    # a = eps = 0: the Gaussian mass alone, so the value is exactly 1
    r = lo.lemma_abc_check(0.0, 2.0, 0.0, np.array([0.3, -0.7]))
    assert r.lhs == pytest.approx(1.0, rel=1e-12)
    assert r.rhs == 1.0


def test_abc_divergent():
    with pytest.raises(DivergentIntegral):
        lo.lemma_abc_check(0.5, 0.6, 0.1, np.zeros(2))


@pytest.mark.parametrize("delta", [0.2, 0.1])
def test_abc_tails(delta):
    for r in lo.lemma_abc_tail_check(0.2, 1.0, 0.05, np.array([1.0, 0.5]), delta):
        assert r.passed, r


def test_perp_weighted_identity_and_tails():
    assert lo.lemma_perp_check(0.1, 0.8, 0.02, 1.3, weighted=True).passed
    for r in lo.lemma_perp_tail_check(0.1, 0.8, 0.02, 1.3, 0.2):
        assert r.passed, r
    assert lo.lemma_perp_small_check(0.1, 0.8, 0.02, 1.3, 0.2).passed


def test_perp_unweighted_form_is_reported_not_asserted():
    r = lo.lemma_perp_check(0.0, 1.0, 0.0, 0.0, weighted=False)
    assert not r.asserted
    # the unweighted integral misses the normalization by sqrt(pi)
    assert r.lhs / r.rhs == pytest.approx(math.sqrt(math.pi), rel=1e-8)


def test_extra_term_cap_value():
    assert lo.extra_term_t_cap(1 / 15, 1.0) == pytest.approx(2.0 ** -120)


def test_extra_term_on_bounded_speeds():
    v = np.linspace(0, 20, 2001)
    assert all(r.passed for r in lo.extra_term_check(1e-200, 1 / 15, 1.0, v))
    first, _ = lo.extra_term_check(1e-4, 1 / 15, 1.0, v)
    assert not first.passed
    # the failure sits near |v| ~ sqrt(2) t^{-c/2}, where the Gaussian factor is weakest
    first, _ = lo.extra_term_check(1e-40, 1 / 15, 1.0, v)
    assert not first.passed and first.params["worst_v"] == 20.0


def test_T_li_closed_vs_recursive():
    for T_M, r in ((1.0, 0.5), (2.0, 0.25), (1.3, 1.0)):
        for l in range(1, 20):
            for i in range(1, l + 1):
                assert lo.T_li_recursive(T_M, r, l, i) == pytest.approx(
                    lo.T_li_closed(T_M, r, l, i), rel=1e-13)


def test_T_li_limits():
    # l = i gives 2 T_M; many steps decay to T_M from above
    assert lo.T_li_closed(1.5, 0.3, 4, 4) == pytest.approx(3.0)
    assert lo.T_li_closed(1.5, 0.3, 200, 1) == pytest.approx(1.5, rel=1e-12)


def test_coefficient_bundle_consistent():
    w = clkernel.WallModel(1.0, 0.5, 0.5)
    b = lo.temperature_recursion(w, 5, 2)
    assert b.T_li == pytest.approx(b.T_li_closed, rel=1e-13)
    assert b.C_TMTm == pytest.approx(2.0 * b.C_TM ** 1.5)


def test_calC_diffuse_value():
    # T_M = T_m = 1, r_max = 1: den = 1, so calC = 4*1/2 + 4 = 6
    assert lo.calC(1.0, 1.0, 1.0) == pytest.approx(6.0)
    assert lo.calC_n(6.0, 2) == pytest.approx(6.0 + 36.0)


def test_exponent_negativity_threshold_is_consistent():
    w = clkernel.WallModel(1.0, 0.5, 0.5)
    t_thr = lo.exponent_negativity_threshold(w, 1, 1 / 15)
    assert t_thr > 0
    assert lo.exponent_negativity(w, 1, 0.5 * t_thr, 1 / 15)
    assert not lo.exponent_negativity(w, 1, 2.0 * t_thr, 1 / 15)


def test_reference_walls_recursion():
    for w in lo.reference_wall_set():
        assert lo.temperature_recursion_report(w).passed


def test_boundedness_bound_saturates():
    w = clkernel.WallModel(1.0, 0.5, 0.5)
    assert lo.boundedness_bound(w, 6, 1, 15.0, 1e-2, 1 / 15, 1.0) == math.inf
    b = lo.boundedness_bound(w, 1, 1, 0.0, 1e-2, 1 / 15, 1.0)
    assert b == pytest.approx(1e-2 ** (-1 / 15) * lo.C_TMTm(1.0, 1.0, w.r_max))


def test_i0_smallness_fit_finite():
    r = lo.fit_i0_smallness([0.5, 1.0], [0.5], [0.0, 1.0], [0.2])
    assert not r.asserted and math.isfinite(r.lhs)
