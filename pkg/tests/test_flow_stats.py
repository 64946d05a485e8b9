from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from jackson_flows.errors import InsufficientSamples, ZeroMean
from jackson_flows.flow_stats import (
    Pmf,
    empirical_pmf,
    moments,
    overdispersion_test,
    shift_tv,
    shift_tv_mc_error,
    tv_distance,
    tv_noise_floor,
)
from jackson_flows.nb_stein import poisson_pmf


def test_empirical_pmf():
    p = empirical_pmf([2, 3, 3, 5])
    assert p.offset == 2
    assert p.probs.tolist() == [0.25, 0.5, 0.0, 0.25]
    assert p[3] == 0.5 and p[7] == 0.0 and p[0] == 0.0


def test_empirical_pmf_empty():
    with pytest.raises(InsufficientSamples):
        empirical_pmf([])


def test_pmf_mass_checked():
    with pytest.raises(ValueError):
        Pmf(0, np.array([0.5, 0.4]))
    Pmf(0, np.array([0.5, 0.4]), tail=0.1)


def test_constant_sample_moments():
    m = moments([3, 3, 3])
    assert (m.mean, m.variance, m.f2, m.f3) == (3.0, 0.0, 6.0, 6.0)


def test_two_point_moments():
    m = moments([0, 2])
    assert (m.mean, m.variance, m.f2, m.f3) == (1.0, 2.0, 1.0, 0.0)


def test_moments_need_two_samples():
    with pytest.raises(InsufficientSamples):
        moments([4])


def test_jackknife_se_of_mean_is_classical():
    x = np.random.default_rng(0).poisson(7.0, 500)
    m = moments(x)
    assert m.se_mean == pytest.approx(x.std(ddof=1) / np.sqrt(x.size), rel=1e-10)


def exact_stats(values):
    """mean, var (n-1), f2, f3 and f3 - m f2 - 2m(V - m) in rational arithmetic."""
    v = [Fraction(int(a)) for a in values]
    n = len(v)
    m = sum(v) / n
    var = sum((a - m) ** 2 for a in v) / (n - 1)
    f2 = sum(a * (a - 1) for a in v) / n
    f3 = sum(a * (a - 1) * (a - 2) for a in v) / n
    return [float(z) for z in (m, var, f2, f3, f3 - m * f2 - 2 * m * (var - m))]


def test_leave_one_out_rows():
    x = np.array([1, 4, 2, 8, 5, 5, 0])
    m = moments(x)
    assert m.third_excess == pytest.approx(exact_stats(x)[4], rel=1e-12)
    for i in range(x.size):
        assert m.loo[i] == pytest.approx(exact_stats(np.delete(x, i)), rel=1e-12, abs=1e-12)


def test_third_excess_is_well_conditioned():
    # large counts: the raw f3 - m f2 difference would lose ~m^2 ulps
    x = np.random.default_rng(7).poisson(5e4, 400)
    assert moments(x).third_excess == pytest.approx(exact_stats(x)[4], rel=1e-12)


def test_tv_examples():
    p = Pmf(0, np.array([1.0]))
    q = Pmf(1, np.array([1.0]))
    assert tv_distance(p, q) == (1.0, 1.0)
    a = Pmf(0, np.array([0.5, 0.5]))
    b = Pmf(0, np.array([0.25, 0.75]))
    assert tv_distance(a, b)[0] == pytest.approx(0.25)
    assert tv_distance(a, a) == (0.0, 0.0)


def test_tv_upper_adds_tails():
    a = Pmf(0, np.array([0.5, 0.49]), tail=0.01)
    b = Pmf(0, np.array([0.5, 0.5]))
    point, upper = tv_distance(a, b)
    assert point == pytest.approx(0.005)
    assert upper == pytest.approx(0.01)


pmfs = st.lists(st.floats(0.0, 1.0), min_size=1, max_size=12).filter(lambda v: sum(v) > 1e-3).map(
    lambda v: np.array(v) / sum(v))


@settings(max_examples=200, deadline=None)
@given(pmfs, st.integers(0, 5), pmfs, st.integers(0, 5), pmfs, st.integers(0, 5))
def test_tv_is_a_metric(a, oa, b, ob, c, oc):
    p, q, r = Pmf(oa, a), Pmf(ob, b), Pmf(oc, c)
    dpq = tv_distance(p, q)[0]
    assert 0.0 <= dpq <= 1.0
    assert dpq == pytest.approx(tv_distance(q, p)[0], abs=1e-15)
    assert tv_distance(p, p)[0] == 0.0
    assert dpq <= tv_distance(p, r)[0] + tv_distance(r, q)[0] + 1e-12


def test_tv_matches_scipy_reference():
    x = np.random.default_rng(1).poisson(20.0, 5000)
    emp = empirical_pmf(x)
    model = poisson_pmf(20.0)
    ks = np.arange(0, 200)
    freq = np.bincount(x, minlength=200)[:200] / x.size
    ref = 0.5 * np.abs(freq - stats.poisson.pmf(ks, 20.0)).sum()
    assert tv_distance(emp, model)[0] == pytest.approx(ref, abs=1e-10)


def test_poisson_samples_close_to_poisson():
    x = np.random.default_rng(2).poisson(20.0, 10**5)
    model = poisson_pmf(20.0)
    tv = tv_distance(empirical_pmf(x), model)[1]
    assert tv <= 0.02
    assert tv <= tv_noise_floor(model, x.size)


def test_noise_floor_scaling():
    model = poisson_pmf(20.0)
    assert tv_noise_floor(model, 400) == pytest.approx(2 * tv_noise_floor(model, 1600), rel=1e-6)


def test_shift_tv_constant():
    assert shift_tv([5, 5, 5, 5]) == 1.0


def test_shift_tv_poisson():
    x = np.random.default_rng(3).poisson(100.0, 10**5)
    exact = stats.poisson.pmf(100, 100.0)  # unimodal: half the total variation is the mode mass
    assert abs(exact - 0.0399) < 1e-4
    assert abs(shift_tv(x) - exact) <= shift_tv_mc_error(x)


def test_overdispersion_verdicts():
    rng = np.random.default_rng(4)
    nb = rng.negative_binomial(5, 0.5, 5000)
    assert overdispersion_test(nb).verdict == "over-dispersed"
    po = rng.poisson(10.0, 5000)
    assert overdispersion_test(po).verdict == "consistent-with-Poisson"
    bi = rng.binomial(20, 0.5, 5000)
    assert overdispersion_test(bi).verdict == "under-dispersed-anomaly"


def test_overdispersion_ratio_and_seed():
    x = np.random.default_rng(5).negative_binomial(3, 0.4, 2000)
    a = overdispersion_test(x, seed=9)
    b = overdispersion_test(x, seed=9)
    assert a == b
    assert a.ratio == pytest.approx(x.var(ddof=1) / x.mean())
    assert a.ci_low < a.ratio < a.ci_high


def test_overdispersion_zero_mean():
    with pytest.raises(ZeroMean):
        overdispersion_test([0, 0, 0])
