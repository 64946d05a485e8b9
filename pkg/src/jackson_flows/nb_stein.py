"""Negative binomial reference law and the error bounds for flow counts.

NB(r, q) has pmf Gamma(r+i)/(Gamma(r) i!) q^r (1-q)^i, mean r(1-q)/q and
variance r(1-q)/q^2. Matching a count's mean m and variance V > m gives
q = m/V and r = m^2/(V - m).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import NonpositiveDenominator, NonpositiveMean
from .flow_stats import MomentSummary, Pmf, jackknife_se

POISSON_DELTA = 1e-6
PMF_CUTOFF = 1e-12
TWO_E = 2.0 * math.e


@dataclass(frozen=True)
class NBParams:
    r: float
    q: float

    def __post_init__(self):
        if not (self.r > 0 and 0 < self.q < 1):
            raise ValueError(f"invalid NB parameters r={self.r!r}, q={self.q!r}")

    @property
    def mean(self) -> float:
        return self.r * (1 - self.q) / self.q

    @property
    def variance(self) -> float:
        return self.r * (1 - self.q) / self.q ** 2

    def to_dict(self) -> dict:
        return {"family": "negative_binomial", "r": self.r, "q": self.q}


@dataclass(frozen=True)
class PoissonFallback:
    """Returned when the variance does not exceed the mean enough for NB."""

    mean: float

    @property
    def variance(self) -> float:
        return self.mean

    def to_dict(self) -> dict:
        return {"family": "poisson", "mean": self.mean}


def nb_params_from_moments(mean: float, variance: float, delta: float = POISSON_DELTA):
    if not mean > 0:
        raise NonpositiveMean(f"mean must be positive, got {mean!r}")
    if variance <= mean * (1 + delta):
        return PoissonFallback(float(mean))
    return NBParams(r=mean * mean / (variance - mean), q=mean / variance)


def nb_pmf(params: NBParams, cutoff: float = PMF_CUTOFF) -> Pmf:
    """Pmf from pi_0 = q^r and pi_{i+1}/pi_i = (r+i)(1-q)/(i+1), in log space.

    Stops once the accumulated mass reaches 1 - cutoff past the mode; the
    remaining mass is bounded by a geometric series on the (eventually
    nonincreasing) term ratio.
    """
    r, q = params.r, params.q
    log1mq = math.log1p(-q)
    logs = [r * math.log(q)]
    total = math.exp(logs[0])
    i = 0
    while True:
        ratio = (r + i) * (1 - q) / (i + 1)
        nxt = logs[-1] + math.log(r + i) + log1mq - math.log(i + 1)
        # sup of later ratios: decreasing towards 1-q when r >= 1, increasing towards it otherwise
        sup_ratio = max((r + i + 1) * (1 - q) / (i + 2), 1 - q)
        if total >= 1 - cutoff and ratio < 1:
            tail = math.exp(nxt) / (1 - sup_ratio)
            break
        logs.append(nxt)
        total += math.exp(nxt)
        i += 1
    probs = np.exp(np.asarray(logs))
    # absorb float drift so mass + tail stays within the Pmf tolerance
    return Pmf(offset=0, probs=probs, tail=max(tail, 1.0 - probs.sum(), 0.0))


def poisson_pmf(mean: float, cutoff: float = PMF_CUTOFF) -> Pmf:
    hi = int(stats.poisson.isf(cutoff, mean)) + 1
    k = np.arange(hi + 1)
    probs = stats.poisson.pmf(k, mean)
    tail = float(stats.poisson.sf(hi, mean))
    return Pmf(offset=0, probs=probs, tail=max(tail, 1.0 - probs.sum(), 0.0))


def model_pmf(params) -> Pmf:
    if isinstance(params, PoissonFallback):
        return poisson_pmf(params.mean)
    return nb_pmf(params)


# --------------------------------------------------------------------------
# bounds
# --------------------------------------------------------------------------


def _scale(w_C: float, rho_C: float, t: float) -> float:
    if not (w_C > 0 and rho_C > 0 and t > 0):
        raise NonpositiveDenominator(f"need w_C, rho_C, t > 0 (got {w_C!r}, {rho_C!r}, {t!r})")
    return math.sqrt(TWO_E * w_C * rho_C * t)


def shift_bound(w_C: float, rho_C: float, t: float) -> float:
    """Upper bound on d_TV(Xi, Xi + 1)."""
    return 1.0 / _scale(w_C, rho_C, t)


def bound_simplified(eps_C: float, sigma_C: float, w_C: float, rho_C: float, t: float) -> float:
    """(2 eps_C^2 + sigma_C) / sqrt(2e w_C rho_C t)."""
    return (2.0 * eps_C ** 2 + sigma_C) / _scale(w_C, rho_C, t)


@dataclass(frozen=True)
class FullBound:
    value: float
    se: float
    bracket: float
    clamped: bool


def _bracket(mean, var, third_excess):
    return 2.0 * (var - mean) ** 2 + mean * third_excess


def bound_full(summary: MomentSummary, w_C: float, rho_C: float, t: float) -> FullBound:
    """Moment form of the NB error bound.

    The bracket is evaluated at the summary's own mean (equal to rho_C t for
    exact moments); the normaliser uses rho_C t. With sample moments the
    bracket can dip below zero by sampling noise; it is then clamped to 0.
    """
    m_true = rho_C * t
    denom = m_true ** 2 * _scale(w_C, rho_C, t)
    bracket = _bracket(summary.mean, summary.variance, summary.third_excess)
    se = float("nan")
    if summary.loo is not None:
        loo = summary.loo
        se = jackknife_se(_bracket(loo[:, 0], loo[:, 1], loo[:, 4]) / denom)
    clamped = False
    if bracket < 0:
        clamped = True
        warnings.warn(f"negative moment bracket {bracket:.4g} clamped to 0", RuntimeWarning, stacklevel=2)
        bracket = 0.0
    return FullBound(value=bracket / denom, se=se, bracket=bracket, clamped=clamped)


@dataclass(frozen=True)
class ClusterBounds:
    theta: tuple
    cluster_size: tuple


def cluster_bounds(eps_C: float, rho_C: float, t: float) -> ClusterBounds:
    """Ranges for the Poisson cluster count mean and the mean cluster size."""
    if eps_C < 0 or not rho_C * t > 0:
        raise ValueError("need eps_C >= 0 and rho_C t > 0")
    m = rho_C * t
    return ClusterBounds(theta=(m / (1.0 + eps_C), m), cluster_size=(1.0, 1.0 + eps_C))


def asymptotic_moments(eps_C: float, sigma_C: float, rho_C: float, t: float) -> MomentSummary:
    """Large-t moments: Var = m(1+eps_C), extra-visit factorial term m(sigma_C - 2 eps_C).

    An upper-bound surrogate for the finite-window moments.
    """
    m = rho_C * t
    var = m * (1.0 + eps_C)
    f2 = var + m * m - m
    extra = m * (sigma_C - 2.0 * eps_C)
    f3 = m * f2 + 2.0 * m * (var - m) + extra
    return MomentSummary(n=0, mean=m, variance=var, f2=f2, f3=f3, extra=extra)


@dataclass(frozen=True)
class BoundReport:
    bound_simplified: float
    bound_full: float | None
    bound_full_se: float | None
    bound_full_clamped: bool
    shift_bound: float
    theta_bounds: tuple
    cluster_size_bounds: tuple
    eps_C: float
    sigma_C: float
    w_C: float
    rho_C: float
    t: float
    moment_mode: str | None

    def to_dict(self) -> dict:
        return {
            "bound_simplified": self.bound_simplified,
            "bound_full": self.bound_full,
            "bound_full_se": self.bound_full_se,
            "bound_full_clamped": self.bound_full_clamped,
            "bound_full_mode": self.moment_mode,
            "shift_bound": self.shift_bound,
            "theta_bounds": list(self.theta_bounds),
            "cluster_size_bounds": list(self.cluster_size_bounds),
            "inputs": {"eps_C": self.eps_C, "sigma_C": self.sigma_C, "w_C": self.w_C,
                       "rho_C": self.rho_C, "t": self.t},
        }


def bound_report(stats, t: float, summary: MomentSummary | None = None, mode: str = "empirical") -> BoundReport:
    """Collect every bound for a LinkStats at window length t."""
    eps, sig, w, rho = stats.eps_C, stats.sigma_C, stats.w_C, stats.rho_C
    full = se = None
    clamped = False
    if summary is not None:
        fb = bound_full(summary, w, rho, t)
        full, clamped = fb.value, fb.clamped
        se = None if math.isnan(fb.se) else fb.se
    cb = cluster_bounds(eps, rho, t)
    return BoundReport(
        bound_simplified=bound_simplified(eps, sig, w, rho, t),
        bound_full=full,
        bound_full_se=se,
        bound_full_clamped=clamped,
        shift_bound=shift_bound(w, rho, t),
        theta_bounds=cb.theta,
        cluster_size_bounds=cb.cluster_size,
        eps_C=eps, sigma_C=sig, w_C=w, rho_C=rho, t=t,
        moment_mode=f"{mode}-moment" if summary is not None else None,
    )


def check_bound(empirical: float, bound: float, mc_error: float = 0.0) -> dict:
    """Compare an empirical quantity with the bound it should respect."""
    budget = bound + mc_error
    return {"empirical": empirical, "bound": bound, "mc_error": mc_error, "budget": budget,
            "holds": bool(empirical <= budget)}
