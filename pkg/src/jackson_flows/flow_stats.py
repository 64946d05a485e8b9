"""Empirical count distributions: pmfs, moments, dispersion, TV distances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientSamples, ZeroMean

PMF_TOL = 1e-9
N_BOOT = 1000


def _counts(samples) -> np.ndarray:
    x = getattr(samples, "counts", samples)
    return np.asarray(x, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class Pmf:
    """Probabilities on ``offset, offset+1, ...`` plus unaccounted tail mass."""

    offset: int
    probs: np.ndarray
    tail: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if np.any(p < 0):
            raise ValueError("negative probability")
        total = p.sum() + self.tail
        if abs(total - 1.0) > PMF_TOL:
            raise ValueError(f"pmf mass {total!r} is not 1")
        object.__setattr__(self, "probs", p)

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + self.probs.shape[0])

    def __getitem__(self, k: int) -> float:
        i = k - self.offset
        return float(self.probs[i]) if 0 <= i < self.probs.shape[0] else 0.0

    def mean(self) -> float:
        return float(self.support @ self.probs)

    def variance(self) -> float:
        s = self.support
        m = self.mean()
        return float(((s - m) ** 2) @ self.probs)

    def to_dict(self) -> dict:
        return {int(k): float(p) for k, p in zip(self.support, self.probs) if p > 0}


def empirical_pmf(samples) -> Pmf:
    x = _counts(samples)
    if x.size == 0:
        raise InsufficientSamples("need at least one sample")
    lo = int(x.min())
    freq = np.bincount(x - lo).astype(float)
    return Pmf(offset=lo, probs=freq / x.size)


def _aligned(p: Pmf, q: Pmf) -> tuple:
    lo = min(p.offset, q.offset)
    hi = max(p.offset + p.probs.size, q.offset + q.probs.size)
    a = np.zeros(hi - lo)
    b = np.zeros(hi - lo)
    a[p.offset - lo: p.offset - lo + p.probs.size] = p.probs
    b[q.offset - lo: q.offset - lo + q.probs.size] = q.probs
    return a, b


def tv_distance(p: Pmf, q: Pmf) -> tuple:
    """Total variation distance as ``(point, upper)``.

    ``upper`` adds half of both unaccounted tail masses, which is where the
    truncated parts could at worst disagree.
    """
    a, b = _aligned(p, q)
    point = 0.5 * float(np.abs(a - b).sum())
    upper = min(1.0, point + 0.5 * (p.tail + q.tail))
    return min(point, 1.0), upper


def tv_noise_floor(model: Pmf, n: int) -> float:
    """Upper bound on E d_TV(empirical pmf of n draws, model)."""
    p = model.probs
    return 0.5 * float(np.sqrt(p * (1.0 - p) / n).sum()) + 0.5 * model.tail


# --------------------------------------------------------------------------
# moments
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MomentSummary:
    """Sample moments of Xi with delete-one jackknife standard errors.

    ``f2``/``f3`` are plug-in factorial moments E[X(X-1)], E[X(X-1)(X-2)].
    ``extra`` is f3 - mean*f2 - 2*mean*(variance - mean), the third-order
    departure from Poisson. It is computed from central moments because the
    raw difference cancels badly for large means; ``None`` means derive it
    from f2/f3. ``loo`` holds the leave-one-out (mean, var, f2, f3, extra)
    rows when the summary came from data, so derived statistics can be
    jackknifed too.
    """

    n: int
    mean: float
    variance: float
    f2: float
    f3: float
    se_mean: float = float("nan")
    se_variance: float = float("nan")
    se_f2: float = float("nan")
    se_f3: float = float("nan")
    extra: float | None = None
    loo: np.ndarray | None = None

    @property
    def third_excess(self) -> float:
        if self.extra is not None:
            return self.extra
        return self.f3 - self.mean * self.f2 - 2.0 * self.mean * (self.variance - self.mean)

    def to_dict(self) -> dict:
        keys = ("n", "mean", "variance", "f2", "f3", "se_mean", "se_variance", "se_f2", "se_f3")
        return {**{k: getattr(self, k) for k in keys}, "third_excess": self.third_excess}


def jackknife_se(loo_values: np.ndarray) -> float:
    v = np.asarray(loo_values, dtype=float)
    n = v.shape[0]
    return float(np.sqrt((n - 1) / n * ((v - v.mean()) ** 2).sum()))


def _third_excess(mean, var, var0, mu3):
    """f3 - m f2 - 2m(V - m) written with central moments.

    With plug-in moments E X^2 = var0 + m^2 and E X^3 = mu3 + 3 m var0 + m^3,
    which turns the raw expression into mu3 + 2m(var0 - var) - 3 var0 + 2m.
    """
    return mu3 + 2.0 * mean * (var0 - var) - 3.0 * var0 + 2.0 * mean


def moments(samples) -> MomentSummary:
    x = _counts(samples).astype(float)
    n = x.size
    if n < 2:
        raise InsufficientSamples("need at least two samples for a variance")
    mean = x.mean()
    y = x - mean
    s2, s3 = (y * y).sum(), (y ** 3).sum()
    var0, mu3 = s2 / n, s3 / n
    var = s2 / (n - 1)
    g2 = x * (x - 1)
    g3 = g2 * (x - 2)
    f2, f3 = g2.mean(), g3.mean()
    extra = _third_excess(mean, var, var0, mu3)
    if n < 3:
        return MomentSummary(n, float(mean), float(var), float(f2), float(f3), extra=float(extra))

    # leave-one-out statistics in O(n), via sums centred at the full mean
    k = n - 1
    a1 = -y / k
    a2 = (s2 - y * y) / k
    a3 = (s3 - y ** 3) / k
    v0_loo = a2 - a1 * a1
    mu3_loo = a3 - 3.0 * a1 * a2 + 2.0 * a1 ** 3
    m_loo = mean + a1
    v_loo = v0_loo * k / (k - 1)
    f2_loo = (g2.sum() - g2) / k
    f3_loo = (g3.sum() - g3) / k
    x_loo = _third_excess(m_loo, v_loo, v0_loo, mu3_loo)
    loo = np.column_stack([m_loo, v_loo, f2_loo, f3_loo, x_loo])
    return MomentSummary(
        n=n, mean=float(mean), variance=float(var), f2=float(f2), f3=float(f3),
        se_mean=jackknife_se(m_loo), se_variance=jackknife_se(v_loo),
        se_f2=jackknife_se(f2_loo), se_f3=jackknife_se(f3_loo), extra=float(extra), loo=loo,
    )


# --------------------------------------------------------------------------
# dispersion
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DispersionTest:
    ratio: float
    ci_low: float
    ci_high: float
    verdict: str

    def to_dict(self) -> dict:
        return {"ratio": self.ratio, "ci": [self.ci_low, self.ci_high], "verdict": self.verdict}


def overdispersion_test(samples, n_boot: int = N_BOOT, seed: int = 0, level: float = 0.95) -> DispersionTest:
    """Variance/mean ratio with a percentile bootstrap CI.

    Verdicts: ``over-dispersed`` (CI above 1), ``consistent-with-Poisson``
    (CI contains 1), ``under-dispersed-anomaly`` (CI below 1; flows cannot
    be under-dispersed, so this flags misuse).
    """
    x = _counts(samples)
    if x.size < 2:
        raise InsufficientSamples("need at least two samples")
    mean = x.mean()
    if mean == 0:
        raise ZeroMean("variance/mean ratio undefined for zero mean")
    ratio = x.var(ddof=1) / mean

    # resample through the multinomial over observed values
    vals, freq = np.unique(x, return_counts=True)
    rng = np.random.default_rng(seed)
    w = rng.multinomial(x.size, freq / x.size, size=n_boot).astype(float)
    m = w @ vals / x.size
    ss = w @ (vals.astype(float) ** 2) - x.size * m ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        boot = np.where(m > 0, ss / (x.size - 1) / m, np.nan)
    boot = boot[np.isfinite(boot)]
    a = (1 - level) / 2
    lo, hi = np.quantile(boot, [a, 1 - a])

    if lo > 1:
        verdict = "over-dispersed"
    elif hi < 1:
        verdict = "under-dispersed-anomaly"
    else:
        verdict = "consistent-with-Poisson"
    return DispersionTest(float(ratio), float(lo), float(hi), verdict)


# --------------------------------------------------------------------------
# shift
# --------------------------------------------------------------------------


def _shift_diffs(samples) -> tuple:
    x = _counts(samples)
    if x.size < 2:
        raise InsufficientSamples("need at least two samples")
    p = empirical_pmf(x).probs
    # p_k - p_{k-1} over the support extended by one on each side
    padded = np.concatenate(([0.0], p, [0.0]))
    return padded, np.diff(padded), x.size


def shift_tv(samples) -> float:
    """d_TV between the empirical law of Xi and that of Xi + 1."""
    _, d, _ = _shift_diffs(samples)
    return 0.5 * float(np.abs(d).sum())


def shift_tv_mc_error(samples) -> float:
    """Upper bound on the sampling noise of :func:`shift_tv`."""
    padded, d, n = _shift_diffs(samples)
    pair = padded[1:] + padded[:-1]
    return 0.5 * float(np.sqrt(np.maximum(pair - d ** 2, 0.0) / n).sum())
