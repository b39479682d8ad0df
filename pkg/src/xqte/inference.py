"""Subsampling inference for tail-extrapolated QTEs.

The point estimator converges slower than root-n and its limit law
depends on nuisance quantities, so confidence intervals come from
subsampling: draw size-b subsets without replacement, recompute the
counterfactual CDFs on each subset, re-extract the tail pieces, and
rebuild the QTE around the full-sample anchors. Designs whose
thresholds are frozen at the full-sample location vary only the index
and the threshold survival across draws; the discontinuity design,
whose thresholds are local order statistics, re-selects them on each
subset so the draws carry the threshold noise as well.

Draw streams come from a caller-supplied rng_for_draw(t) so results do
not depend on worker count or draw order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import EstimationError, StepCdf, tail_view
from .tail import (
    EmptyTail,
    NonPositiveSurvival,
    TailFit,
    extrapolated_quantiles,
    pareto_index,
    qte_point,
)


class UnstableSubsampling(EstimationError):
    """Too many subsample draws failed to produce a usable tail fit."""


@dataclass(frozen=True)
class RateSpec:
    """Convergence-rate correction for subsampled draws.

    The scaled dispersion rho_b (draw - point) mimics the sampling error
    of the full sample. RDD estimates converge at the nonparametric
    n^(2/5) rate; IV and direct designs at root-n.
    """

    design: str

    def __post_init__(self):
        if self.design not in ("iv", "rdd", "direct"):
            raise ValueError(f"unknown design {self.design!r}")

    @property
    def exponent(self) -> float:
        return 0.4 if self.design == "rdd" else 0.5

    def ratio(self, b: int, n: int) -> float:
        return (b / n) ** self.exponent


@dataclass(frozen=True)
class SubsampleConfig:
    """b is the subsample size (None picks ceil(n^0.7)), draws the number
    of subsets, ci_level the two-sided coverage target.

    allow_degenerate is a test hook letting b == n through, which turns
    every draw into the full sample.
    """

    b: int | None = None
    draws: int = 500
    ci_level: float = 0.95
    max_failure_share: float = 0.10
    allow_degenerate: bool = False

    def resolve_b(self, n: int) -> int:
        return int(math.ceil(n**0.7)) if self.b is None else int(self.b)

    def validate(self, n: int) -> int:
        b = self.resolve_b(n)
        upper_ok = b <= n if self.allow_degenerate else b < n
        if not (1 < b and upper_ok):
            raise ValueError(f"subsample size b={b} not in (1, n) for n={n}")
        if self.draws < 100:
            raise ValueError("need at least 100 subsample draws")
        if not 0.0 < self.ci_level < 1.0:
            raise ValueError("ci_level must lie in (0, 1)")
        if not 0.0 <= self.max_failure_share < 1.0:
            raise ValueError("max_failure_share must lie in [0, 1)")
        return b


def _tail_at_frozen_threshold(cdf: StepCdf, full_fit: TailFit) -> tuple[float, float]:
    """Index and threshold survival from a subset CDF at the frozen
    full-sample threshold.

    The subset CDF goes through the same proper-CDF view the full fit
    used, then the full fit's shift (if any) is applied so both live on
    the same positive scale. Only the threshold location is frozen; the
    returned survival is the subset's own mass beyond it and the index
    measures the subset's tail slope against its own baseline.

    On the monotone view the only degenerate geometry is a tail that is
    flat from the threshold onward (the subset puts no resolvable mass
    beyond it). That is the boundary case of an infinitely fast decay,
    so it maps to an infinite index with zero survival, which
    extrapolates to the threshold itself. Returning it as a value
    instead of discarding keeps the draw distribution free of selection
    on how clean the subset tail looks.
    """
    cdf = tail_view(cdf)
    if full_fit.shift != 0.0:
        cdf = cdf.shifted(full_fit.shift)
    try:
        fit = pareto_index(cdf, full_fit.y_min, full_fit.omega)
    except (NonPositiveSurvival, EmptyTail):
        return math.inf, 0.0
    if fit.alpha_hat == 0.0:
        return math.inf, fit.s_min
    return fit.alpha_hat, fit.s_min


def _tail_at_subset_threshold(
    cdf: StepCdf, threshold: float, full_fit: TailFit
) -> tuple[float, float]:
    """Index and (shifted) threshold for a draw that re-selects its own
    threshold, mirroring the flat-tail fallback of the full-sample
    discontinuity recipe.

    The draw's threshold survival stays pinned at the nominal level, so
    across draws only the threshold location and the slope move. A
    subset threshold that lands at or below zero on the shifted scale
    cannot carry a tail fit and degrades to the flat boundary too.
    """
    view = tail_view(cdf)
    if full_fit.shift != 0.0:
        view = view.shifted(full_fit.shift)
    th = threshold + full_fit.shift
    if th <= 0.0:
        return math.inf, th
    try:
        fit = pareto_index(view, th, full_fit.omega)
    except (NonPositiveSurvival, EmptyTail):
        return math.inf, th
    if fit.alpha_hat <= 0.0:
        return math.inf, th
    return fit.alpha_hat, th


@dataclass(frozen=True)
class TailDraws:
    """Retained subsample tail re-estimates.

    alphas, survivals and thresholds all have shape (n_kept, 2), column
    0 for the treated arm and column 1 for the control arm. Designs
    with frozen thresholds repeat the full-sample threshold in every
    row; the discontinuity design re-selects thresholds per draw.
    """

    alphas: np.ndarray
    survivals: np.ndarray
    thresholds: np.ndarray
    failed: int


def subsample_tail_pairs(
    pipeline,
    cfg: SubsampleConfig,
    rng_for_draw: Callable[[int], np.random.Generator],
) -> TailDraws:
    """Per-draw (index, survival) pairs at the frozen thresholds.

    A draw fails when re-estimation raises an EstimationError or either
    index comes out negative; more than max_failure_share failures
    raises UnstableSubsampling. Indices are sorted so a draw is a set,
    not a permutation.
    """
    n = pipeline.data.n
    b = cfg.validate(n)
    refit_thr = getattr(pipeline, "refit_thresholds", None)
    alphas: list[tuple[float, float]] = []
    survivals: list[tuple[float, float]] = []
    thresholds: list[tuple[float, float]] = []
    failed = 0
    for t in range(cfg.draws):
        rng = rng_for_draw(t)
        idx = np.sort(rng.choice(n, size=b, replace=False))
        try:
            cdf1, cdf0 = pipeline.refit_cdfs(idx)
            if refit_thr is None:
                a1, s1 = _tail_at_frozen_threshold(cdf1, pipeline.fit1)
                a0, s0 = _tail_at_frozen_threshold(cdf0, pipeline.fit0)
                th1, th0 = pipeline.fit1.y_min, pipeline.fit0.y_min
            else:
                thr1_raw, thr0_raw = refit_thr(idx)
                a1, th1 = _tail_at_subset_threshold(cdf1, thr1_raw, pipeline.fit1)
                a0, th0 = _tail_at_subset_threshold(cdf0, thr0_raw, pipeline.fit0)
                s1, s0 = pipeline.fit1.s_min, pipeline.fit0.s_min
        except EstimationError:
            failed += 1
            continue
        if a1 <= 0.0 or a0 <= 0.0:
            failed += 1
            continue
        alphas.append((a1, a0))
        survivals.append((s1, s0))
        thresholds.append((th1, th0))
    if failed > cfg.max_failure_share * cfg.draws:
        raise UnstableSubsampling(
            f"{failed} of {cfg.draws} subsample draws failed; "
            "the tail fit is too fragile at this sample size"
        )
    return TailDraws(
        alphas=np.asarray(alphas, dtype=float).reshape(-1, 2),
        survivals=np.asarray(survivals, dtype=float).reshape(-1, 2),
        thresholds=np.asarray(thresholds, dtype=float).reshape(-1, 2),
        failed=failed,
    )


def qte_draws_from_tails(
    fit1: TailFit, fit0: TailFit, tails: TailDraws, q: float
) -> np.ndarray:
    """QTE draws on the original outcome scale, one per retained pair.

    Shifts are held at their full-sample values; each draw contributes
    its own tail slope, threshold survival and threshold location (the
    last two frozen per design, see TailDraws).
    """
    if fit1.flipped != fit0.flipped:
        raise ValueError("arms disagree about outcome flipping")
    a1, a0 = tails.alphas[:, 0], tails.alphas[:, 1]
    s1, s0 = tails.survivals[:, 0], tails.survivals[:, 1]
    th1, th0 = tails.thresholds[:, 0], tails.thresholds[:, 1]
    if fit1.flipped:
        level = 1.0 - q
        return extrapolated_quantiles(
            fit0, level, a0, survivals=s0, thresholds=th0
        ) - extrapolated_quantiles(fit1, level, a1, survivals=s1, thresholds=th1)
    return extrapolated_quantiles(
        fit1, q, a1, survivals=s1, thresholds=th1
    ) - extrapolated_quantiles(fit0, q, a0, survivals=s0, thresholds=th0)


def subsample_draws(
    pipeline,
    q: float,
    cfg: SubsampleConfig,
    rng_for_draw: Callable[[int], np.random.Generator],
) -> tuple[np.ndarray, int]:
    """QTE draws for a single quantile level. Prefer estimate_qte_batch
    when several levels share the same draws."""
    tails = subsample_tail_pairs(pipeline, cfg, rng_for_draw)
    return qte_draws_from_tails(pipeline.fit1, pipeline.fit0, tails, q), tails.failed


@dataclass(frozen=True)
class CiResult:
    lo: float
    hi: float
    level: float
    b: int
    rate_ratio: float
    n_draws: int
    n_failed: int


def subsampling_ci(
    draws: np.ndarray,
    point: float,
    cfg: SubsampleConfig,
    rate: RateSpec,
    n: int,
    n_failed: int = 0,
) -> CiResult:
    """Equal-tailed interval from rate-scaled draw dispersion.

    With s_g the g-quantile of rho_b (draw - point), the interval is
    [point - s_{1-a/2}, point - s_{a/2}].
    """
    b = cfg.resolve_b(n)
    rho = rate.ratio(b, n)
    scaled = rho * (np.asarray(draws, dtype=float) - point)
    a = 1.0 - cfg.ci_level
    s_lo, s_hi = np.quantile(scaled, [a / 2.0, 1.0 - a / 2.0])
    return CiResult(
        lo=point - s_hi,
        hi=point - s_lo,
        level=cfg.ci_level,
        b=b,
        rate_ratio=rho,
        n_draws=int(np.asarray(draws).size),
        n_failed=n_failed,
    )


@dataclass(frozen=True)
class QteResult:
    q: float
    estimate: float
    ci: CiResult | None


def estimate_qte_batch(
    pipeline,
    q_list: Sequence[float],
    cfg: SubsampleConfig | None = None,
    rng_for_draw: Callable[[int], np.random.Generator] | None = None,
) -> list[QteResult]:
    """Point estimates, and intervals when cfg is given, for several
    quantile levels.

    The alpha draws do not depend on q, so one set of subsample refits
    serves every level. Omitting cfg skips inference entirely.
    """
    points = [qte_point(pipeline.fit1, pipeline.fit0, q) for q in q_list]
    if cfg is None:
        return [QteResult(q=q, estimate=p, ci=None) for q, p in zip(q_list, points)]
    if rng_for_draw is None:
        raise ValueError("rng_for_draw is required when cfg is given")
    tails = subsample_tail_pairs(pipeline, cfg, rng_for_draw)
    out = []
    for q, point in zip(q_list, points):
        draws = qte_draws_from_tails(pipeline.fit1, pipeline.fit0, tails, q)
        ci = subsampling_ci(
            draws, point, cfg, pipeline.rate, pipeline.data.n, tails.failed
        )
        out.append(QteResult(q=q, estimate=point, ci=ci))
    return out
