import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from jackson_flows.errors import NonpositiveDenominator, NonpositiveMean
from jackson_flows.flow_stats import MomentSummary, moments, tv_distance
from jackson_flows.nb_stein import (
    NBParams,
    PoissonFallback,
    asymptotic_moments,
    bound_full,
    bound_report,
    bound_simplified,
    check_bound,
    cluster_bounds,
    model_pmf,
    nb_params_from_moments,
    nb_pmf,
    poisson_pmf,
    shift_bound,
)
from jackson_flows.route_chains import link_stats


def test_nb_params_examples():
    p = nb_params_from_moments(10.0, 12.5)
    assert (p.q, p.r) == pytest.approx((0.8, 40.0))
    p = nb_params_from_moments(100.0, 150.0)
    assert (p.q, p.r) == pytest.approx((2 / 3, 200.0))


def test_poisson_fallback():
    assert isinstance(nb_params_from_moments(10.0, 10.0), PoissonFallback)
    assert isinstance(nb_params_from_moments(10.0, 9.0), PoissonFallback)
    assert isinstance(nb_params_from_moments(10.0, 10.0 + 5e-6), PoissonFallback)
    assert isinstance(nb_params_from_moments(10.0, 10.0 + 2e-5), NBParams)
    with pytest.raises(NonpositiveMean):
        nb_params_from_moments(0.0, 1.0)


@settings(max_examples=300, deadline=None)
@given(st.floats(0.01, 1e4), st.floats(1.001, 50.0))
def test_param_round_trip(mean, ratio):
    p = nb_params_from_moments(mean, mean * ratio)
    assert p.mean == pytest.approx(mean, rel=1e-9)
    assert p.variance == pytest.approx(mean * ratio, rel=1e-9)


def test_nb_one_is_geometric():
    pmf = nb_pmf(NBParams(1.0, 0.3))
    k = np.arange(pmf.probs.size)
    assert np.max(np.abs(pmf.probs - 0.3 * 0.7 ** k)) < 1e-15


def test_nb_moments():
    pmf = nb_pmf(NBParams(40.0, 0.8))
    assert pmf.mean() == pytest.approx(10.0, abs=1e-9)
    assert pmf.variance() == pytest.approx(12.5, abs=1e-9)
    assert pmf.tail < 1e-12


@pytest.mark.parametrize("r,q", [(40.0, 0.8), (0.3, 0.05), (200.0, 2 / 3), (2.5, 0.5)])
def test_nb_pmf_against_gammaln(r, q):
    pmf = nb_pmf(NBParams(r, q))
    k = np.arange(pmf.probs.size)
    ref = np.exp(special.gammaln(r + k) - special.gammaln(r) - special.gammaln(k + 1)
                 + r * np.log(q) + k * np.log1p(-q))
    assert np.max(np.abs(pmf.probs - ref)) < 1e-13
    assert abs(pmf.probs.sum() + pmf.tail - 1) < 1e-9
    # the tail bound really bounds the missing mass
    assert stats.nbinom.sf(k[-1], r, q) <= pmf.tail * (1 + 1e-6) + 1e-300


def test_large_r_approaches_poisson():
    r = 1e6
    p = NBParams(r, r / (r + 10.0))
    assert tv_distance(nb_pmf(p), poisson_pmf(10.0))[1] <= 1e-5


def test_model_pmf_dispatch():
    assert model_pmf(PoissonFallback(3.0)).mean() == pytest.approx(3.0, abs=1e-9)
    assert model_pmf(NBParams(4.0, 0.5)).mean() == pytest.approx(4.0, abs=1e-9)


def test_bound_arithmetic(feedback):
    ls = link_stats(feedback, feedback.traffic, [(1, 1)])
    t = 400.0
    denom = math.sqrt(2 * math.e * 0.64 * 0.25 * t)
    assert bound_simplified(ls.eps_C, ls.sigma_C, ls.w_C, ls.rho_C, t) == pytest.approx(1.875 / denom, rel=1e-12)
    assert bound_simplified(ls.eps_C, ls.sigma_C, ls.w_C, ls.rho_C, t) == pytest.approx(0.1005, abs=5e-5)
    assert shift_bound(ls.w_C, ls.rho_C, t) == pytest.approx(1 / denom, rel=1e-12)
    assert shift_bound(ls.w_C, ls.rho_C, t) == pytest.approx(0.0536, abs=5e-5)


def test_quadrupled_window_halves_bounds():
    b1 = bound_simplified(0.5, 1.375, 0.64, 0.25, 400.0)
    b4 = bound_simplified(0.5, 1.375, 0.64, 0.25, 1600.0)
    assert b4 == b1 / 2
    assert shift_bound(0.64, 0.25, 1600.0) == shift_bound(0.64, 0.25, 400.0) / 2


def test_bounds_reject_zero_denominator():
    with pytest.raises(NonpositiveDenominator):
        bound_simplified(0.5, 1.0, 0.0, 0.25, 400.0)
    with pytest.raises(NonpositiveDenominator):
        shift_bound(0.64, 0.25, 0.0)


def test_full_bound_vanishes_for_poisson_moments():
    m = 37.0
    s = MomentSummary(n=0, mean=m, variance=m, f2=m * m, f3=m ** 3)
    assert bound_full(s, 0.7, 0.5, m / 0.5).value == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 5.0), st.floats(1e-3, 20.0), st.floats(0.05, 1.0), st.floats(0.01, 10.0),
       st.floats(1.0, 1e4))
def test_full_bound_below_simplified_with_asymptotic_moments(eps, extra, w, rho, t):
    # sigma >= 2 eps keeps the extra-visit term nonnegative
    sigma = 2 * eps + extra
    s = asymptotic_moments(eps, sigma, rho, t)
    full = bound_full(s, w, rho, t).value
    # with these moments the bracket reduces to m^2 (2 eps^2 + sigma - 2 eps)
    closed = (2 * eps ** 2 + sigma - 2 * eps) / math.sqrt(2 * math.e * w * rho * t)
    # F3 - m F2 cancels about m^2 ulps of relative precision
    assert full == pytest.approx(closed, rel=1e-13 * max(1.0, s.mean) ** 2 + 1e-12)
    assert closed <= bound_simplified(eps, sigma, w, rho, t)


def test_full_bound_negative_bracket_clamped():
    s = MomentSummary(n=0, mean=10.0, variance=10.0, f2=100.0, f3=900.0)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        fb = bound_full(s, 0.5, 1.0, 10.0)
    assert fb.clamped and fb.value == 0.0
    assert any(issubclass(r.category, RuntimeWarning) for r in rec)


def test_full_bound_jackknife(feedback):
    x = np.random.default_rng(0).negative_binomial(40, 0.8, 2000)
    fb = bound_full(moments(x), 0.64, 0.25, 40.0)
    assert fb.se > 0 and np.isfinite(fb.value)


def test_cluster_bounds():
    cb = cluster_bounds(0.5, 0.25, 400.0)
    assert cb.theta == pytest.approx((100 / 1.5, 100.0))
    assert cb.cluster_size == (1.0, 1.5)
    with pytest.raises(ValueError):
        cluster_bounds(-0.1, 0.25, 400.0)


def test_asymptotic_moments_are_consistent():
    s = asymptotic_moments(0.5, 1.375, 0.25, 400.0)
    assert s.mean == 100.0 and s.variance == 150.0
    assert s.f2 == s.variance + s.mean ** 2 - s.mean


def test_bound_report_and_check(feedback):
    ls = link_stats(feedback, feedback.traffic, [(1, 1)])
    rep = bound_report(ls, 400.0, asymptotic_moments(ls.eps_C, ls.sigma_C, ls.rho_C, 400.0), mode="asymptotic")
    d = rep.to_dict()
    assert d["bound_full_mode"] == "asymptotic-moment"
    assert d["bound_full"] <= d["bound_simplified"]
    assert d["inputs"]["w_C"] == pytest.approx(0.64)
    res = check_bound(0.05, rep.shift_bound, 0.01)
    assert res["holds"] and res["budget"] == pytest.approx(rep.shift_bound + 0.01)
    assert not check_bound(0.2, 0.1)["holds"]
