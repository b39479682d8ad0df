"""Pareto tail fitting on step-function CDF estimates and quantile
extrapolation beyond the data.

The tail index alpha is estimated from the weighted log survival ratio

    alpha_hat = - int_{y_min}^{T} log( s(y) / s(y_min) ) w(y) dy
                / int_{y_min}^{T} log( y / y_min ) w(y) dy,

with s = 1 - beta_hat, weight w(y) = y^(-omega-1) / y_min^(-omega), and
T the upper end of the positive-survival region. Over the full ray
[y_min, inf) the denominator integrates to exactly 1/omega^2. For step
CDFs both integrals have closed forms segment by segment; an analytic
mode integrates a supplied survival function to infinity by quadrature
and serves as the independent oracle path.

Quantiles at level close to 1 extrapolate along the fitted tail:
y_min * (s(y_min) / (1 - level))^(1 / alpha_hat).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.integrate import quad

from .core import EstimationError, MonotoneCdf, StepCdf, evaluate, left_inverse, monotone_rearrange


class NonPositiveSurvival(EstimationError):
    """Survival at the threshold is not positive; nothing to fit."""


class EmptyTail(EstimationError):
    """No usable knots beyond the threshold."""


class NotBeyondThreshold(EstimationError):
    """Requested tail probability sits well inside the fitted region, so
    the query is an interior quantile, not a tail extrapolation."""


class InvalidAlpha(EstimationError):
    """Non-positive tail index cannot be inverted into a quantile."""


@dataclass(frozen=True)
class TailFit:
    """Fitted Pareto tail. s_min is survival at the threshold, t_max the
    truncation point of the fit (inf when survival never hits zero).

    shift records the constant added to the outcome scale before fitting
    (positivity protocol); quantiles subtract it again. flipped records
    that the fit lives on the negated-outcome scale.
    """

    y_min: float
    omega: float
    alpha_hat: float
    c_hat: float
    s_min: float
    t_max: float
    flipped: bool = False
    shift: float = 0.0

    @property
    def alpha_ok(self) -> bool:
        return self.alpha_hat > 0.0


def select_ymin(cdf: StepCdf, level: float = 0.975) -> float:
    """Threshold: smallest knot where the rearranged CDF reaches level."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    return left_inverse(monotone_rearrange(cdf), level)


def _w_mass(u_lo: np.ndarray, u_hi: np.ndarray, omega: float) -> np.ndarray:
    # integral of u^(-omega-1) over [u_lo, u_hi] in threshold units;
    # u_hi = inf contributes zero
    return (np.power(u_lo, -omega) - np.power(u_hi, -omega)) / omega


def _log_antideriv(u: np.ndarray, omega: float) -> np.ndarray:
    # H(u) with H' = -log(u) u^(-omega-1); H(inf) = 0
    u = np.atleast_1d(np.asarray(u, dtype=float))
    out = np.zeros_like(u)
    finite = np.isfinite(u)
    uf = u[finite]
    out[finite] = np.power(uf, -omega) * (omega * np.log(uf) + 1.0) / omega**2
    return out


def _tail_segments(cdf: StepCdf, y_min: float):
    """Constancy segments of the CDF on (y_min, inf): lefts, rights, survival."""
    k, v = cdf.knots, cdf.values
    j0 = int(np.searchsorted(k, y_min, side="right"))
    if j0 >= k.size:
        raise EmptyTail(f"no knots beyond threshold {y_min:g}")
    prev = v[j0 - 1] if j0 > 0 else 0.0
    lefts = np.concatenate([[y_min], k[j0:]])
    rights = np.concatenate([k[j0:], [np.inf]])
    seg_values = np.concatenate([[prev], v[j0:]])
    return lefts, rights, 1.0 - seg_values


def pareto_index(
    cdf: StepCdf,
    y_min: float,
    omega: float = 1.0,
    baseline_survival: float | None = None,
) -> TailFit:
    """Closed-form tail-index fit on a step CDF above a positive threshold.

    Integration runs from y_min to T, the end of the last segment with
    positive survival. Interior segments where the raw estimate already
    puts survival at or below zero carry no usable log ratio and are
    excluded from both integrals. A non-positive alpha_hat is returned
    rather than raised; it is flagged via alpha_ok and rejected at
    quantile time.

    baseline_survival replaces the log-ratio denominator 1 - cdf(y_min).
    Subsampling uses this to keep the threshold survival at its
    full-sample value while the tail shape comes from the subsample;
    re-reading the noisy subsample CDF at the threshold would make the
    baseline nonpositive in a large share of draws.
    """
    if omega <= 0.0:
        raise ValueError("omega must be positive")
    if y_min <= 0.0:
        raise ValueError("threshold must be positive; shift outcomes first")
    s_min = (
        1.0 - evaluate(cdf, y_min) if baseline_survival is None else baseline_survival
    )
    if s_min <= 0.0:
        raise NonPositiveSurvival(
            f"survival at threshold {y_min:g} is {s_min:.3e}"
        )
    lefts, rights, surv = _tail_segments(cdf, y_min)
    pos = surv > 0.0
    if not pos.any():
        raise EmptyTail(f"no positive survival beyond threshold {y_min:g}")
    t_max = float(rights[np.nonzero(pos)[0][-1]])

    u_lo = lefts[pos] / y_min
    u_hi = rights[pos] / y_min
    log_ratio = np.log(surv[pos] / s_min)
    num = float(np.sum(log_ratio * _w_mass(u_lo, u_hi, omega)))
    den = float(np.sum(_log_antideriv(u_lo, omega) - _log_antideriv(u_hi, omega)))
    alpha = -num / den
    return TailFit(
        y_min=float(y_min),
        omega=float(omega),
        alpha_hat=alpha,
        c_hat=_scale_from(s_min, y_min, alpha),
        s_min=float(s_min),
        t_max=t_max,
        flipped=cdf.flipped,
    )


def _scale_from(s_min: float, y_min: float, alpha: float) -> float:
    """c = s_min y_min^alpha; runaway index estimates overflow to inf
    instead of raising, matching float64 semantics."""
    with np.errstate(over="ignore"):
        return float(s_min * np.float64(y_min) ** np.float64(alpha))


def pareto_index_analytic(
    survival: Callable[[float], float],
    y_min: float,
    omega: float = 1.0,
    flipped: bool = False,
) -> TailFit:
    """Tail-index functional of an exact survival function, by quadrature.

    Substituting v = (y / y_min)^(-omega) flattens the weight, so both
    integrals run over (0, 1] with only a log endpoint singularity. The
    fit integrates to infinity; truncation never binds for a survival
    function that stays positive.
    """
    if omega <= 0.0:
        raise ValueError("omega must be positive")
    if y_min <= 0.0:
        raise ValueError("threshold must be positive")
    s_min = float(survival(y_min))
    if s_min <= 0.0:
        raise NonPositiveSurvival(f"survival at threshold {y_min:g} is {s_min:.3e}")

    def integrand(v: float) -> float:
        y = y_min * v ** (-1.0 / omega)
        return np.log(survival(y) / s_min)

    num = quad(integrand, 0.0, 1.0, epsabs=1e-13, epsrel=1e-12, limit=300)[0] / omega
    den = quad(lambda v: -np.log(v), 0.0, 1.0, epsabs=1e-13, epsrel=1e-12, limit=300)[0] / omega**2
    alpha = -num / den
    return TailFit(
        y_min=float(y_min),
        omega=float(omega),
        alpha_hat=alpha,
        c_hat=_scale_from(s_min, y_min, alpha),
        s_min=s_min,
        t_max=np.inf,
        flipped=flipped,
    )


def fit_tail(cdf: StepCdf, level: float = 0.975, omega: float = 1.0) -> TailFit:
    """Select the threshold at the given CDF level and fit the tail.

    Positivity protocol: the fit needs y_min > 0, so when the selected
    threshold is at or below zero all knots are shifted up until the
    threshold sits at 1.0, the fit runs there, and the shift is recorded
    on the TailFit so quantiles map back. Treatment-effect differences
    are unaffected by the shift.
    """
    y_min = select_ymin(cdf, level)
    if y_min <= 0.0:
        delta = 1.0 - y_min
        fit = pareto_index(cdf.shifted(delta), y_min + delta, omega)
        return replace(fit, shift=delta)
    return pareto_index(cdf, y_min, omega)


def extreme_quantile(fit: TailFit, level: float) -> float:
    """Tail-extrapolated quantile at the given level, on the analysis scale.

    If fit.flipped the caller is responsible for mapping back (negate,
    and reflect the level q -> 1 - q); qte_point does this for QTEs.
    """
    if fit.alpha_hat <= 0.0:
        raise InvalidAlpha(f"alpha_hat = {fit.alpha_hat:.4g}")
    out = extrapolated_quantiles(fit, level, np.array([fit.alpha_hat]))
    return float(out[0])


def extrapolated_quantiles(
    fit: TailFit,
    level: float,
    alphas: np.ndarray,
    survivals: np.ndarray | None = None,
    thresholds: np.ndarray | None = None,
) -> np.ndarray:
    """extreme_quantile evaluated for a batch of alternative index values.

    Same formula as extreme_quantile with alpha_hat replaced elementwise;
    used by subsampling where the index varies across draws. When
    survivals is given it replaces the threshold survival elementwise as
    well, so each draw re-estimates both the tail slope and the mass
    beyond the threshold; a draw whose survival falls below the target
    probability then lands below the threshold, which is what makes the
    batch dispersion honest when the target sits near the threshold.
    thresholds likewise replaces y_min elementwise for designs whose
    threshold is itself re-selected per draw.

    The target is meant to sit at or beyond the threshold. A threshold
    selected on a discrete CDF overshoots its nominal level, leaving the
    realized survival a shade below the nominal tail probability, so
    targets are allowed up to twice the threshold survival; anything
    beyond that is an interior quantile and is refused.

    An infinite index is the flat-tail boundary case. Paired with zero
    survival (no resolvable mass beyond the threshold) the draw gives
    back the threshold itself; at a target equal to the threshold
    survival the ratio is one and every index gives the threshold back.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    p = 1.0 - level
    if p >= 2.0 * fit.s_min:
        raise NotBeyondThreshold(
            f"tail probability {p:.4g} is interior to the fit "
            f"(threshold survival {fit.s_min:.4g})"
        )
    alphas = np.asarray(alphas, dtype=float)
    if np.any(alphas <= 0.0):
        raise InvalidAlpha("batch contains nonpositive index values")
    if survivals is None:
        ratio = fit.s_min / p
    else:
        survivals = np.asarray(survivals, dtype=float)
        if np.any((survivals <= 0.0) & np.isfinite(alphas)):
            raise NonPositiveSurvival(
                "zero draw survival is only meaningful with an infinite index"
            )
        ratio = survivals / p
    base = fit.y_min if thresholds is None else np.asarray(thresholds, dtype=float)
    with np.errstate(over="ignore"):
        return base * ratio ** (1.0 / alphas) - fit.shift


def qte_point(fit1: TailFit, fit0: TailFit, q: float) -> float:
    """Quantile treatment effect at level q from two fitted arms.

    For flipped fits q is reflected to 1 - q on the analysis scale and
    the sign of the difference is mapped back to the original scale.
    """
    if fit1.flipped != fit0.flipped:
        raise ValueError("arms disagree about outcome flipping")
    if fit1.flipped:
        level = 1.0 - q
        return extreme_quantile(fit0, level) - extreme_quantile(fit1, level)
    return extreme_quantile(fit1, q) - extreme_quantile(fit0, q)


@dataclass(frozen=True)
class SecondOrderSpec:
    """Two-term Pareto tail 1 - F(y) = c y^(-alpha) (1 + d y^(-rho)).

    Test oracle for the deterministic part of the index bias: fitting at
    threshold y_min shifts the population index by -index_bias(), up to
    terms vanishing faster than y_min^(-rho).
    """

    alpha: float
    c: float = 1.0
    d: float = 0.0
    rho: float = 1.0

    def survival(self, y):
        y = np.asarray(y, dtype=float)
        out = self.c * y**-self.alpha * (1.0 + self.d * y**-self.rho)
        return float(out) if out.ndim == 0 else out

    def index_bias(self, y_min: float, omega: float) -> float:
        return (
            self.d
            * omega**2
            * y_min**-self.rho
            * (1.0 / (self.rho + omega) - 1.0 / omega)
        )
