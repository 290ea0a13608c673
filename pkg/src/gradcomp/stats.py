"""Fit-validation statistics.

Wasserstein distances between an empirical sample and a GenNorm model are
computed exactly. The empirical quantile function is the left-continuous
inverse of the empirical CDF, constant (``x_(i)``) on each segment
``((i-1)/n, i/n]``. On a segment the model quantile's integrals reduce to
partial moments of the model, which have closed forms in the regularized
incomplete gamma function. So no quadrature error enters.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from statistics import NormalDist

import numpy as np
from scipy import special

from . import gennorm
from .errors import InputError
from .gennorm import GenNormParams


@dataclass(frozen=True)
class FitReport:
    epoch: int
    layer_label: str
    w1_gennorm: float
    w1_norm: float
    w2_gennorm: float
    w2_norm: float
    w2_sqrt_w1_gennorm: float
    w2_sqrt_w1_norm: float
    sample_kurtosis: float
    model_kurtosis: float
    gennorm_params: GenNormParams
    norm_params: GenNormParams


@dataclass(frozen=True)
class MomentCI:
    mean: float
    mean_halfwidth: float
    variance: float
    variance_halfwidth: float
    confidence_level: float
    method: str = "normal-theory"


def _tail_const(beta, k):
    return math.exp(special.gammaln((k + 1.0) / beta) - special.gammaln(1.0 / beta)) / 2.0


def _side_tail(y, beta, k):
    """``int_{|y|}^inf u**k f(u) du`` for the standard GenNorm (mu=0, alpha=1)."""
    with np.errstate(over="ignore"):
        return _tail_const(beta, k) * special.gammaincc((k + 1.0) / beta, np.abs(y) ** beta)


def _combine(ya, yb, ta, tb, c, k):
    """``int_{ya}^{yb} y**k f(y) dy`` given the side tails at both ends."""
    sgn = -1.0 if k % 2 else 1.0
    return np.where(
        ya >= 0, ta - tb,
        np.where(yb <= 0, sgn * (tb - ta), sgn * (c - ta) + (c - tb)),
    )


def _check_sample(sample):
    x = np.asarray(sample, dtype=np.float64).ravel()
    if x.size < 2:
        raise InputError("need at least 2 sample points")
    if np.any(~np.isfinite(x)):
        raise InputError("sample contains non-finite values")
    return x


def _boundaries(n, beta):
    """Standard-model quantiles at ``i/n`` for ``i = 0..n`` (ends infinite)."""
    std = GenNormParams(0.0, 1.0, beta)
    m = n // 2
    i = np.arange(1, m + 1, dtype=np.float64)
    lower = i / n
    a = 1.0 / beta
    central = 1.0 - 2.0 * lower
    with np.errstate(all="ignore"):
        g = np.where(central < 0.5, special.gammaincinv(a, central),
                     special.gammainccinv(a, 2.0 * lower))
    left = -(g**a)
    # one Newton step on cdf(left) - i/n
    dens = gennorm.pdf(left, std)
    resid = gennorm.cdf(left, std) - lower
    left = left - np.where(dens > 0, resid / np.where(dens > 0, dens, 1.0), 0.0)
    left[lower == 0.5] = 0.0
    b = np.empty(n + 1)
    b[0], b[-1] = -np.inf, np.inf
    b[1:m + 1] = left
    # mirror: Q(1 - z) = -Q(z)
    b[n - m:n] = -left[::-1]
    return b


def _distances(sample, model: GenNormParams, orders=(1, 2)):
    x = _check_sample(sample)
    n = x.size
    # standardized units make the distance exactly translation covariant
    y = np.sort((x - model.mu) / model.alpha)
    beta = model.beta
    z = np.arange(n + 1, dtype=np.float64) / n
    bounds = _boundaries(n, beta)
    ya, yb = bounds[:-1], bounds[1:]
    t1 = _side_tail(bounds, beta, 1)
    c1 = _tail_const(beta, 1)
    out = {}
    if 2 in orders:
        m1 = _combine(ya, yb, t1[:-1], t1[1:], c1, 1)
        t2 = _side_tail(bounds, beta, 2)
        m2 = _combine(ya, yb, t2[:-1], t2[1:], _tail_const(beta, 2), 2)
        total = float(np.sum(y * y / n - 2.0 * y * m1 + m2))
        out[2] = model.alpha * math.sqrt(max(total, 0.0))
    if 1 in orders:
        # split each segment where the model quantile crosses the sample value
        c = np.clip(y, ya, yb)
        inside = (y > ya) & (y < yb)
        fc = np.where(y <= ya, z[:-1], z[1:])
        tc = np.where(y <= ya, t1[:-1], t1[1:])
        if inside.any():
            std = GenNormParams(0.0, 1.0, beta)
            fc[inside] = gennorm.cdf(c[inside], std)
            tc[inside] = _side_tail(c[inside], beta, 1)
        below = y * (fc - z[:-1]) - _combine(ya, c, t1[:-1], tc, c1, 1)
        above = _combine(c, yb, tc, t1[1:], c1, 1) - y * (z[1:] - fc)
        out[1] = model.alpha * float(np.sum(np.maximum(below, 0.0) + np.maximum(above, 0.0)))
    return out


def wasserstein(sample, model: GenNormParams, order=2) -> float:
    """1-D Wasserstein distance of ``order`` 1 or 2 between sample and model."""
    if order not in (1, 2):
        raise InputError("order must be 1 or 2")
    return _distances(sample, model, (order,))[order]


def wasserstein_sqrt_w1(sample, model: GenNormParams) -> float:
    """Square root of the order-1 integral (the un-squared integrand under a 1/2 power)."""
    return math.sqrt(wasserstein(sample, model, order=1))


def sample_kurtosis(data) -> float:
    x = np.asarray(data, dtype=np.float64).ravel()
    if x.size < 4:
        raise InputError("kurtosis needs at least 4 values")
    d = x - x.mean()
    m2 = np.mean(d * d)
    if not m2 > 0:
        raise InputError("kurtosis undefined for zero-variance data")
    return float(np.mean(d**4) / m2**2)


def moment_ci(data, level=0.95) -> MomentCI:
    """Large-sample normal-theory intervals for the mean and variance.

    mean +/- z s / sqrt(n), variance +/- z s**2 sqrt(2 / (n - 1)).
    """
    x = np.asarray(data, dtype=np.float64).ravel()
    if x.size < 30:
        raise InputError("confidence intervals need at least 30 values")
    if not 0 < level < 1:
        raise InputError("confidence level must lie in (0, 1)")
    n = x.size
    zq = NormalDist().inv_cdf(0.5 + level / 2.0)
    mean = float(x.mean())
    var = float(x.var(ddof=1))
    return MomentCI(
        mean=mean,
        mean_halfwidth=zq * math.sqrt(var / n),
        variance=var,
        variance_halfwidth=zq * var * math.sqrt(2.0 / (n - 1)),
        confidence_level=level,
    )


def fit_report(data, epoch=0, layer_label="") -> FitReport:
    gn = gennorm.fit(data)
    nm = gennorm.fit_norm(data)
    d_gn = _distances(data, gn)
    d_nm = _distances(data, nm)
    return FitReport(
        epoch=int(epoch),
        layer_label=str(layer_label),
        w1_gennorm=d_gn[1],
        w1_norm=d_nm[1],
        w2_gennorm=d_gn[2],
        w2_norm=d_nm[2],
        w2_sqrt_w1_gennorm=math.sqrt(d_gn[1]),
        w2_sqrt_w1_norm=math.sqrt(d_nm[1]),
        sample_kurtosis=sample_kurtosis(data),
        model_kurtosis=gennorm.moments(gn).kurtosis,
        gennorm_params=gn,
        norm_params=nm,
    )


FIT_REPORT_COLUMNS = (
    "epoch", "layer", "w1_gn", "w1_n", "w2_gn", "w2_n",
    "w2_paper_variant_gn", "w2_paper_variant_n",
    "kurt_sample", "kurt_model", "mu", "alpha", "beta",
)


def fit_report_row(r: FitReport):
    p = r.gennorm_params
    return [r.epoch, r.layer_label, r.w1_gennorm, r.w1_norm, r.w2_gennorm, r.w2_norm,
            r.w2_sqrt_w1_gennorm, r.w2_sqrt_w1_norm,
            r.sample_kurtosis, r.model_kurtosis, p.mu, p.alpha, p.beta]


def fit_reports_to_csv(reports) -> str:
    """CSV with one row per report; floats rendered with ``repr``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FIT_REPORT_COLUMNS)
    for r in reports:
        w.writerow([repr(v) if isinstance(v, float) else v for v in fit_report_row(r)])
    return buf.getvalue()


def moment_ci_dict(ci: MomentCI):
    return asdict(ci)
