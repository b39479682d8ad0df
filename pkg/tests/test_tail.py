"""Tail-index fitting, quantile extrapolation, and the bias oracle."""

import numpy as np
import pytest
from scipy.integrate import quad

from xqte.core import StepCdf, evaluate, substream
from xqte.tail import (
    EmptyTail,
    InvalidAlpha,
    NonPositiveSurvival,
    NotBeyondThreshold,
    SecondOrderSpec,
    TailFit,
    extreme_quantile,
    fit_tail,
    pareto_index,
    pareto_index_analytic,
    qte_point,
    select_ymin,
)


def quad_index_oracle(cdf, y_min, omega):
    """Numeric-quadrature version of the tail-index ratio on a step CDF.

    Walks the constancy pieces above the threshold, drops pieces with
    non-positive survival, truncates after the last positive piece, and
    integrates numerator and denominator with scipy.quad.
    """

    def w(y):
        return y ** (-omega - 1.0) / y_min ** (-omega)

    s_min = 1.0 - evaluate(cdf, y_min)
    assert s_min > 0
    uppers = [float(k) for k in cdf.knots if k > y_min]
    assert uppers, "oracle needs knots beyond the threshold"
    pieces = []
    edges = [y_min] + uppers
    for a, b in zip(edges[:-1], edges[1:]):
        pieces.append((a, b, 1.0 - evaluate(cdf, 0.5 * (a + b))))
    pieces.append((uppers[-1], np.inf, 1.0 - float(cdf.values[-1])))
    while pieces and pieces[-1][2] <= 0:
        pieces.pop()
    num = den = 0.0
    for a, b, s in pieces:
        if s <= 0:
            continue
        num += quad(lambda y: np.log(s / s_min) * w(y), a, b, epsabs=1e-13, limit=200)[0]
        den += quad(lambda y: np.log(y / y_min) * w(y), a, b, epsabs=1e-13, limit=200)[0]
    return -num / den


def ecdf(sample) -> StepCdf:
    ys = np.sort(np.asarray(sample, dtype=float))
    knots, counts = np.unique(ys, return_counts=True)
    return StepCdf(knots, np.cumsum(counts) / ys.size)


def pareto_sample(rng, alpha, n):
    return rng.random(n) ** (-1.0 / alpha)


# ------------------------------------------------------------ threshold

def test_select_ymin_picks_first_crossing():
    cdf = StepCdf(np.array([1.0, 2.0, 3.0]), np.array([0.5, 0.96, 1.0]))
    assert select_ymin(cdf, 0.975) == 3.0
    assert select_ymin(cdf, 0.9) == 2.0
    with pytest.raises(ValueError):
        select_ymin(cdf, 1.0)


def test_select_ymin_uses_rearranged_values():
    # a dip below an earlier peak must not delay the crossing
    cdf = StepCdf(np.array([1.0, 2.0, 3.0]), np.array([0.98, 0.6, 1.0]))
    assert select_ymin(cdf, 0.975) == 1.0


# ----------------------------------------------------------- step index

def test_pareto_index_worked_step_example():
    # survival 1 on [1,2), 0.25 on [2,4), 0 beyond; omega 1, threshold 1
    cdf = StepCdf(np.array([2.0, 4.0]), np.array([0.75, 1.0]))
    fit = pareto_index(cdf, y_min=1.0, omega=1.0)
    num = np.log(0.25) * (1.0 / 2.0 - 1.0 / 4.0)
    den = quad(lambda y: np.log(y) / y**2, 1.0, 4.0)[0]
    assert fit.alpha_hat == pytest.approx(-num / den, rel=1e-10)
    assert fit.alpha_hat == pytest.approx(0.8591, abs=2e-4)
    assert fit.s_min == 1.0
    assert fit.t_max == 4.0
    assert fit.alpha_ok


@pytest.mark.parametrize("case", range(6))
def test_pareto_index_matches_quadrature_oracle(case):
    rng = substream(701, case)
    m = int(rng.integers(8, 30))
    knots = np.cumsum(rng.uniform(0.1, 2.0, size=m)) + rng.uniform(0.2, 5.0)
    values = np.linspace(0.05, 1.0, m) + rng.normal(scale=0.05, size=m)
    values[-1] = 1.0 if case % 2 == 0 else values[-1]
    cdf = StepCdf(knots, values)
    level = [0.5, 0.6, 0.7][case % 3]
    omega = [0.5, 1.0, 2.0][case % 3]
    y_min = select_ymin(cdf, level)
    fit = pareto_index(cdf, y_min, omega)
    assert fit.alpha_hat == pytest.approx(quad_index_oracle(cdf, y_min, omega), rel=1e-9)


def test_pareto_index_skips_interior_saturated_pieces():
    cdf = StepCdf(
        np.array([1.0, 2.0, 3.0, 4.0]),
        np.array([0.5, 1.2, 0.75, 1.0]),
    )
    y_min = 1.0
    fit = pareto_index(cdf, y_min, omega=1.0)
    assert fit.t_max == 4.0
    assert fit.alpha_hat == pytest.approx(quad_index_oracle(cdf, y_min, 1.0), rel=1e-10)


def test_pareto_index_scale_invariance():
    rng = substream(701, 99)
    cdf = ecdf(pareto_sample(rng, 2.0, 400))
    y_min = select_ymin(cdf, 0.9)
    base = pareto_index(cdf, y_min, omega=1.0)
    for lam in (0.01, 3.0, 1e4):
        scaled = pareto_index(
            StepCdf(cdf.knots * lam, cdf.values), y_min * lam, omega=1.0
        )
        assert scaled.alpha_hat == pytest.approx(base.alpha_hat, rel=1e-12)
        assert scaled.t_max == pytest.approx(base.t_max * lam, rel=1e-12)


def test_pareto_index_errors():
    cdf = StepCdf(np.array([1.0, 2.0]), np.array([0.5, 1.0]))
    with pytest.raises(ValueError):
        pareto_index(cdf, y_min=-1.0)
    with pytest.raises(ValueError):
        pareto_index(cdf, y_min=1.5, omega=0.0)
    with pytest.raises(EmptyTail):
        pareto_index(cdf, y_min=2.0)
    saturated = StepCdf(np.array([1.0, 2.0]), np.array([1.0, 1.0]))
    with pytest.raises(NonPositiveSurvival):
        pareto_index(saturated, y_min=1.5)


def test_pareto_index_negative_alpha_flagged_not_raised():
    # survival rises above its threshold value, so the log ratio is positive
    cdf = StepCdf(np.array([1.0, 2.0, 3.0]), np.array([0.5, 0.3, 1.0]))
    fit = pareto_index(cdf, y_min=2.0, omega=1.0)
    assert fit.alpha_hat < 0
    assert not fit.alpha_ok
    with pytest.raises(InvalidAlpha):
        extreme_quantile(fit, 0.9999)


# ------------------------------------------------------- analytic index

@pytest.mark.parametrize("omega", [0.5, 1.0, 2.0])
def test_analytic_exact_pareto_recovery(omega):
    fit = pareto_index_analytic(lambda y: y**-2.0, y_min=1.0, omega=omega)
    assert fit.alpha_hat == pytest.approx(2.0, abs=1e-12)
    assert fit.c_hat == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("omega", [0.5, 1.0, 2.0, 4.0])
def test_weight_normalization_identity(omega):
    # integral of log(y/y_min) * w over the full ray equals 1/omega^2;
    # substitute v = (y/y_min)^(-omega) to put quad on a finite interval
    y_min = 3.7
    val = quad(
        lambda v: -np.log(v) / omega**2, 0.0, 1.0, epsabs=1e-14, epsrel=1e-13
    )[0]
    assert val == pytest.approx(1.0 / omega**2, abs=1e-10)
    # cross-check the untransformed integral on a finite stretch plus tail bound
    direct = quad(
        lambda y: np.log(y / y_min) * y ** (-omega - 1) / y_min**-omega,
        y_min,
        np.inf,
        epsabs=1e-12,
        limit=400,
    )[0]
    assert direct == pytest.approx(1.0 / omega**2, abs=1e-8)


def test_analytic_second_order_worked_example():
    spec = SecondOrderSpec(alpha=2.0, d=0.5, rho=1.0)
    y_min, omega = 10.0, 1.0
    bias = spec.index_bias(y_min, omega)
    assert bias == pytest.approx(-0.025)
    fit = pareto_index_analytic(spec.survival, y_min, omega)
    # population index sits near alpha - bias = 2.025
    assert fit.alpha_hat - spec.alpha == pytest.approx(-bias, rel=0.2)


# --------------------------------------------------------------- quantile

def _fit(y_min, alpha, s_min, flipped=False, shift=0.0, omega=1.0):
    return TailFit(
        y_min=y_min,
        omega=omega,
        alpha_hat=alpha,
        c_hat=s_min * y_min**alpha,
        s_min=s_min,
        t_max=np.inf,
        flipped=flipped,
        shift=shift,
    )


def test_extreme_quantile_worked_values():
    fit = _fit(y_min=5.0, alpha=2.0, s_min=0.1)
    assert extreme_quantile(fit, 0.99) == pytest.approx(5.0 * np.sqrt(10.0))
    # just beyond the threshold the quantile sits at y_min
    eps_level = 1.0 - fit.s_min * 0.999
    assert extreme_quantile(fit, eps_level) == pytest.approx(5.0, rel=1e-3)


def test_extreme_quantile_exact_pareto_end_to_end():
    # alpha 2 tail, threshold at the 0.975 level, target level 0.999
    y_min = 0.025**-0.5
    fit = pareto_index_analytic(lambda y: y**-2.0, y_min=y_min, omega=1.0)
    got = extreme_quantile(fit, 0.999)
    assert got == pytest.approx(np.sqrt(1000.0), abs=1e-9)


def test_extreme_quantile_errors():
    fit = _fit(y_min=5.0, alpha=2.0, s_min=0.02)
    with pytest.raises(NotBeyondThreshold):
        extreme_quantile(fit, 0.96)  # p = 0.04, twice the threshold survival
    with pytest.raises(ValueError):
        extreme_quantile(fit, 1.0)


def test_extreme_quantile_allows_slightly_interior_targets():
    # a threshold picked on a discrete CDF overshoots its nominal level,
    # leaving the realized survival a shade below the nominal tail
    # probability; such queries interpolate just below the threshold
    # instead of being refused
    fit = _fit(y_min=5.0, alpha=2.0, s_min=0.02)
    got = extreme_quantile(fit, 0.975)
    assert got == pytest.approx(5.0 * (0.02 / 0.025) ** 0.5, rel=1e-12)
    assert got < fit.y_min


def test_extreme_quantile_applies_shift():
    plain = _fit(y_min=4.0, alpha=1.5, s_min=0.05)
    shifted = _fit(y_min=4.0, alpha=1.5, s_min=0.05, shift=9.0)
    assert extreme_quantile(shifted, 0.999) == pytest.approx(
        extreme_quantile(plain, 0.999) - 9.0
    )


# -------------------------------------------------------------- qte point

def test_qte_point_worked_values():
    fit1 = _fit(y_min=2.0, alpha=1.0, s_min=0.1)
    fit0 = _fit(y_min=3.5, alpha=1.0, s_min=0.04)
    level = 0.98  # p = 0.02: arm quantiles 10 and 7
    assert extreme_quantile(fit1, level) == pytest.approx(10.0)
    assert extreme_quantile(fit0, level) == pytest.approx(7.0)
    assert qte_point(fit1, fit0, level) == pytest.approx(3.0)
    assert qte_point(fit1, fit1, level) == 0.0


def test_qte_point_flipped_maps_back():
    fit1 = _fit(y_min=2.0, alpha=1.0, s_min=0.1, flipped=True)
    fit0 = _fit(y_min=3.5, alpha=1.0, s_min=0.04, flipped=True)
    q = 0.02
    want = extreme_quantile(fit0, 0.98) - extreme_quantile(fit1, 0.98)
    assert qte_point(fit1, fit0, q) == pytest.approx(want)
    with pytest.raises(ValueError):
        qte_point(fit1, _fit(2.0, 1.0, 0.1), q)


# ------------------------------------------------------------ fit_tail

def test_fit_tail_positive_threshold_no_shift():
    rng = substream(702, 0)
    cdf = ecdf(pareto_sample(rng, 2.0, 1000))
    fit = fit_tail(cdf, level=0.9, omega=1.0)
    assert fit.shift == 0.0
    assert fit.y_min == select_ymin(cdf, 0.9)


def test_fit_tail_shift_protocol_on_nonpositive_threshold():
    rng = substream(702, 1)
    y = pareto_sample(rng, 2.0, 1000) - 50.0  # threshold lands negative
    cdf = ecdf(y)
    y_min = select_ymin(cdf, 0.9)
    assert y_min <= 0
    fit = fit_tail(cdf, level=0.9, omega=1.0)
    assert fit.shift == pytest.approx(1.0 - y_min)
    manual = pareto_index(cdf.shifted(fit.shift), y_min + fit.shift, omega=1.0)
    assert fit.alpha_hat == manual.alpha_hat
    # quantiles come back on the original scale
    q_orig = extreme_quantile(fit, 0.999)
    q_shifted_scale = fit.y_min * (fit.s_min / 0.001) ** (1.0 / fit.alpha_hat)
    assert q_orig == pytest.approx(q_shifted_scale - fit.shift)


def test_fit_tail_median_alpha_orders_with_truth():
    # heavier tails should fit systematically smaller indices
    meds = {}
    for alpha in (1.0, 3.0):
        fits = []
        for rep in range(200):
            rng = substream(703, int(alpha), rep)
            cdf = ecdf(pareto_sample(rng, alpha, 500))
            fits.append(fit_tail(cdf, level=0.9, omega=1.0).alpha_hat)
        meds[alpha] = np.median(fits)
    assert meds[1.0] < meds[3.0]
    assert meds[1.0] == pytest.approx(1.0, rel=0.35)
    assert meds[3.0] == pytest.approx(3.0, rel=0.35)
