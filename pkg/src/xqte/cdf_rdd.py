"""Counterfactual outcome CDFs for compliers at a discontinuity cutoff.

Local Nadaraya-Watson means are taken separately on each side of the
cutoff (normalized to r = 0) with an Epanechnikov kernel, and the
counterfactual CDFs are ratios of side-to-side jumps:

    beta1(y) = [NW+(1{Y<=y} D) - NW-(1{Y<=y} D)] / [NW+(D) - NW-(D)]
    beta0(y) = [NW+(1{Y<=y}(1-D)) - NW-(1{Y<=y}(1-D))] / [NW+(1-D) - NW-(1-D)]

The two denominators are exact negatives of each other. The default
bandwidth is the rule of thumb sigma_hat * n^(-1/5).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from .core import DegenerateDenominator, EstimationError, ObservationSet, StepCdf

DENOM_EPS = 1e-10


class ZeroVariance(EstimationError):
    """Running variable has no spread; the rule-of-thumb bandwidth is zero."""


class EmptyWindow(EstimationError):
    """No kernel weight on one side of the cutoff within the bandwidth."""


@dataclass(frozen=True)
class KernelSpec:
    bandwidth: float
    kind: str = "epanechnikov"


def epanechnikov(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)


def rot_bandwidth(r: np.ndarray) -> float:
    """Rule-of-thumb bandwidth: sample standard deviation times n^(-1/5)."""
    r = np.asarray(r, dtype=float)
    if r.size < 2:
        raise ValueError("need at least two observations for a bandwidth")
    sd = float(np.std(r, ddof=1))
    if sd == 0.0:
        raise ZeroVariance("running variable is constant")
    return sd * r.size ** (-1.0 / 5.0)


def one_sided_nw(
    data: ObservationSet,
    side: Literal["above", "below"],
    g: Callable[[ObservationSet], np.ndarray] | np.ndarray,
    h: float,
) -> float:
    """Kernel-weighted mean of g over records strictly on one side of 0."""
    if data.design != "rdd":
        raise ValueError("one_sided_nw needs an rdd-design ObservationSet")
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    r = data.r
    mask = r > 0 if side == "above" else r < 0
    gv = g(data) if callable(g) else np.asarray(g, dtype=float)
    w = epanechnikov(r[mask] / h)
    total = w.sum()
    if total <= 0.0:
        raise EmptyWindow(f"no kernel mass {side} the cutoff within h = {h:g}")
    return float((w * gv[mask]).sum() / total)


@dataclass(frozen=True)
class RddCdfPair:
    """Complier CDF pair at the cutoff, with the first-stage jump used as
    the arm-1 denominator (arm 0 uses its negative)."""

    beta0: StepCdf
    beta1: StepCdf
    denom1: float
    denom0: float
    kernel: KernelSpec


def rdd_cdf(data: ObservationSet, h: float | None = None, flipped: bool = False) -> RddCdfPair:
    """Counterfactual CDF pair on the grid of distinct windowed outcomes.

    Outcomes with |r| > h carry no kernel weight and do not contribute
    knots. values[i] uses the indicator 1{Y <= knots[i]}, the value just
    above the knot under left-continuous evaluation.
    """
    if data.design != "rdd":
        raise ValueError("rdd_cdf needs an rdd-design ObservationSet")
    if h is None:
        h = rot_bandwidth(data.r)
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    r = data.r
    above = r > 0
    below = r < 0
    w = epanechnikov(r / h)
    w_above = np.where(above, w, 0.0)
    w_below = np.where(below, w, 0.0)
    s_above = w_above.sum()
    s_below = w_below.sum()
    if s_above <= 0.0:
        raise EmptyWindow(f"no kernel mass above the cutoff within h = {h:g}")
    if s_below <= 0.0:
        raise EmptyWindow(f"no kernel mass below the cutoff within h = {h:g}")

    d = data.d.astype(float)
    nw_above_d = float((w_above * d).sum() / s_above)
    nw_below_d = float((w_below * d).sum() / s_below)
    denom1 = nw_above_d - nw_below_d
    denom0 = -denom1
    if abs(denom1) < DENOM_EPS:
        raise DegenerateDenominator(
            f"first-stage jump {denom1:.3e} below {DENOM_EPS}"
        )

    window = np.abs(r) <= h
    yw = data.y[window]
    if yw.size == 0:
        raise EmptyWindow(f"no outcomes within h = {h:g} of the cutoff")
    order = np.argsort(yw)
    ys = yw[order]
    knots = np.unique(ys)
    last = np.searchsorted(ys, knots, side="right") - 1

    def jump_cumsum(weights: np.ndarray) -> np.ndarray:
        ww = weights[window][order]
        return np.cumsum(ww)[last]

    num1 = jump_cumsum(w_above * d) / s_above - jump_cumsum(w_below * d) / s_below
    num0 = jump_cumsum(w_above * (1.0 - d)) / s_above - jump_cumsum(w_below * (1.0 - d)) / s_below
    return RddCdfPair(
        beta0=StepCdf(knots, num0 / denom0, flipped),
        beta1=StepCdf(knots, num1 / denom1, flipped),
        denom1=denom1,
        denom0=denom0,
        kernel=KernelSpec(bandwidth=float(h)),
    )


def arm_threshold(
    data: ObservationSet, arm: int, h: float | None = None, level: float = 0.975
) -> float:
    """Kernel-weighted outcome quantile among arm takers near the cutoff.

    Tail thresholds for the discontinuity design come from the outcome
    distribution of units with D = arm inside the bandwidth window, both
    sides pooled and cutoff rows excluded, each weighted by the kernel.
    The quantile uses weighted midpoint ranks with linear interpolation
    between adjacent outcomes, the continuous analog of a weighted order
    statistic. Continuity matters beyond aesthetics: subsample windows
    hold only a handful of exceedances, and a step quantile would
    collapse their draws onto a few order statistics, understating the
    dispersion the interval construction feeds on.

    Reading a high quantile off the estimated complier CDF instead would
    transmit the first-stage ratio noise into the threshold location;
    the weighted arm quantile carries plain local order-statistic noise.
    """
    if data.design != "rdd":
        raise ValueError("arm_threshold needs an rdd-design ObservationSet")
    if arm not in (0, 1):
        raise ValueError("arm must be 0 or 1")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    if h is None:
        h = rot_bandwidth(data.r)
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    r = data.r
    keep = (np.abs(r) <= h) & (r != 0.0) & (data.d == arm)
    w = epanechnikov(r[keep] / h)
    total = w.sum()
    if total <= 0.0:
        raise EmptyWindow(f"no arm-{arm} kernel mass within h = {h:g} of the cutoff")
    y = data.y[keep]
    order = np.argsort(y)
    ys, ws = y[order], w[order]
    cum = np.cumsum(ws)
    pos = (cum - 0.5 * ws) / cum[-1]
    return float(np.interp(level, pos, ys))
