import math

import numpy as np
import pytest

from xqte.core import ObservationSet, StepCdf, substream
from xqte.inference import (
    RateSpec,
    SubsampleConfig,
    TailDraws,
    UnstableSubsampling,
    _tail_at_frozen_threshold,
    estimate_qte_batch,
    qte_draws_from_tails,
    subsample_draws,
    subsample_tail_pairs,
    subsampling_ci,
)
from xqte.pipeline import EstimatorSettings, fit_pipeline
from xqte.tail import TailFit, extreme_quantile


def direct_set(y0, y1):
    return ObservationSet(
        design="direct",
        y=np.concatenate([y0, y1]),
        d=np.concatenate([np.zeros(len(y0)), np.ones(len(y1))]),
    )


def pareto(key, n, alpha, scale=1.0):
    u = substream(47, key).random(n)
    return scale * (1.0 - u) ** (-1.0 / alpha)


def draw_stream(*prefix):
    return lambda t: substream(47, *prefix, t)


class TestRateSpec:
    def test_worked_values(self):
        assert RateSpec("iv").ratio(1000, 10000) == pytest.approx(
            0.31622776601683794, rel=1e-13
        )
        assert RateSpec("rdd").ratio(1000, 10000) == pytest.approx(
            0.3981071705534972, rel=1e-13
        )
        assert RateSpec("direct").ratio(1000, 10000) == RateSpec("iv").ratio(1000, 10000)

    def test_exponents(self):
        assert RateSpec("iv").exponent == 0.5
        assert RateSpec("direct").exponent == 0.5
        assert RateSpec("rdd").exponent == 0.4

    def test_rejects_unknown_design(self):
        with pytest.raises(ValueError):
            RateSpec("matching")


class TestSubsampleConfig:
    def test_default_subsample_size(self):
        assert SubsampleConfig().resolve_b(10000) == 631
        assert SubsampleConfig().resolve_b(1000) == 126
        assert SubsampleConfig(b=200).resolve_b(1000) == 200

    @pytest.mark.parametrize(
        "cfg,n",
        [
            (SubsampleConfig(b=1), 100),
            (SubsampleConfig(b=100), 100),
            (SubsampleConfig(b=150), 100),
            (SubsampleConfig(b=50, draws=99), 100),
            (SubsampleConfig(b=50, ci_level=0.0), 100),
            (SubsampleConfig(b=50, ci_level=1.0), 100),
            (SubsampleConfig(b=50, max_failure_share=1.0), 100),
        ],
    )
    def test_validate_rejects(self, cfg, n):
        with pytest.raises(ValueError):
            cfg.validate(n)

    def test_degenerate_hook_admits_full_sample(self):
        assert SubsampleConfig(b=100, allow_degenerate=True).validate(100) == 100


class TestSubsamplingCi:
    def test_worked_example(self):
        # rho = (25/100)^0.5 = 0.5, scaled = [-0.5, 0, 0.5, 1.0];
        # at 50% coverage the 0.25/0.75 quantiles are -0.125 and 0.625,
        # giving [2 - 0.625, 2 + 0.125].
        draws = np.array([1.0, 2.0, 3.0, 4.0])
        cfg = SubsampleConfig(b=25, ci_level=0.5)
        ci = subsampling_ci(draws, 2.0, cfg, RateSpec("iv"), n=100)
        assert ci.rate_ratio == pytest.approx(0.5, rel=1e-15)
        assert ci.lo == pytest.approx(1.375, rel=1e-12)
        assert ci.hi == pytest.approx(2.125, rel=1e-12)
        assert ci.b == 25
        assert ci.n_draws == 4

    def test_nesting_across_levels(self):
        draws = substream(47, 0).standard_normal(400) + 3.0
        cis = {}
        for level in (0.90, 0.95, 0.99):
            cfg = SubsampleConfig(b=200, ci_level=level)
            cis[level] = subsampling_ci(draws, 3.1, cfg, RateSpec("iv"), n=1000)
        assert cis[0.99].lo <= cis[0.95].lo <= cis[0.90].lo
        assert cis[0.90].hi <= cis[0.95].hi <= cis[0.99].hi

    def test_constant_draws_collapse_to_point(self):
        draws = np.full(200, 7.25)
        ci = subsampling_ci(draws, 7.25, SubsampleConfig(b=50), RateSpec("rdd"), n=500)
        assert ci.lo == 7.25 == ci.hi


class TestFullSampleDegenerate:
    """With b = n every draw is the full sample, so the draws must
    reproduce the point estimate bit for bit."""

    def test_draws_equal_point(self):
        data = direct_set(pareto(1, 200, 2.0), pareto(2, 200, 2.0, scale=2.0))
        pipe = fit_pipeline(data, EstimatorSettings(ymin_level=0.9))
        cfg = SubsampleConfig(b=data.n, draws=100, allow_degenerate=True)
        tails = subsample_tail_pairs(pipe, cfg, draw_stream(3))
        assert tails.failed == 0
        assert np.all(tails.alphas[:, 0] == pipe.fit1.alpha_hat)
        assert np.all(tails.alphas[:, 1] == pipe.fit0.alpha_hat)
        assert np.all(tails.survivals[:, 0] == pipe.fit1.s_min)
        assert np.all(tails.survivals[:, 1] == pipe.fit0.s_min)
        q = 0.95
        draws = qte_draws_from_tails(pipe.fit1, pipe.fit0, tails, q)
        point = extreme_quantile(pipe.fit1, q) - extreme_quantile(pipe.fit0, q)
        assert np.all(draws == point)
        ci = subsampling_ci(draws, point, cfg, pipe.rate, data.n)
        assert ci.lo == point == ci.hi


class TestDeterminism:
    def make_pipe(self):
        data = direct_set(pareto(4, 1200, 2.0), pareto(5, 1200, 2.0, scale=2.0))
        return fit_pipeline(data, EstimatorSettings(ymin_level=0.9))

    def test_same_streams_same_answer(self):
        pipe = self.make_pipe()
        cfg = SubsampleConfig(draws=120)
        r1 = estimate_qte_batch(pipe, [0.95], cfg, draw_stream(6))
        r2 = estimate_qte_batch(pipe, [0.95], cfg, draw_stream(6))
        assert r1[0].estimate == r2[0].estimate
        assert r1[0].ci.lo == r2[0].ci.lo
        assert r1[0].ci.hi == r2[0].ci.hi

    def test_different_streams_differ(self):
        pipe = self.make_pipe()
        cfg = SubsampleConfig(draws=120)
        r1 = estimate_qte_batch(pipe, [0.95], cfg, draw_stream(6))
        r2 = estimate_qte_batch(pipe, [0.95], cfg, draw_stream(7))
        assert r1[0].ci.lo != r2[0].ci.lo

    def test_point_only_when_config_omitted(self):
        pipe = self.make_pipe()
        res = estimate_qte_batch(pipe, [0.95, 0.96])
        assert all(r.ci is None for r in res)
        assert res[0].estimate != res[1].estimate


class TestSharedDrawsAcrossLevels:
    def test_batch_matches_manual_composition(self):
        data = direct_set(pareto(8, 900, 2.0), pareto(9, 900, 2.0, scale=1.5))
        pipe = fit_pipeline(data, EstimatorSettings(ymin_level=0.9))
        cfg = SubsampleConfig(draws=110)
        res = estimate_qte_batch(pipe, [0.94, 0.96], cfg, draw_stream(10))
        tails = subsample_tail_pairs(pipe, cfg, draw_stream(10))
        for r in res:
            draws = qte_draws_from_tails(pipe.fit1, pipe.fit0, tails, r.q)
            ci = subsampling_ci(
                draws, r.estimate, cfg, pipe.rate, data.n, tails.failed
            )
            assert r.ci == ci

    def test_single_level_helper_agrees(self):
        data = direct_set(pareto(11, 700, 2.0), pareto(12, 700, 2.0))
        pipe = fit_pipeline(data, EstimatorSettings(ymin_level=0.9))
        cfg = SubsampleConfig(draws=100)
        draws_a, failed_a = subsample_draws(pipe, 0.95, cfg, draw_stream(13))
        tails = subsample_tail_pairs(pipe, cfg, draw_stream(13))
        draws_b = qte_draws_from_tails(pipe.fit1, pipe.fit0, tails, 0.95)
        assert failed_a == tails.failed
        assert np.array_equal(draws_a, draws_b)


def heavy_lower_tail_arm(key, n):
    p = (1.0 - substream(47, key).random(n)) ** (-1.0 / 1.5)
    return 100.0 - np.ceil(10.0 * p)


class TestShiftEquivariance:
    """Adding a constant to every outcome must leave the QTE and its
    interval unchanged, with per-arm quantiles moving by that constant.

    Integer-valued outcomes keep the shift-protocol arithmetic exact, so
    the only slack is the final subtraction in each quantile.
    """

    def build(self, offset):
        base = heavy_lower_tail_arm(20, 700)
        tilt = heavy_lower_tail_arm(21, 700) - 2.0
        data = direct_set(base + offset, tilt + offset)
        pipe = fit_pipeline(data, EstimatorSettings(ymin_level=0.9), tail_side="lower")
        cfg = SubsampleConfig(draws=110)
        res = estimate_qte_batch(pipe, [0.05], cfg, draw_stream(22))
        return pipe, res[0]

    def test_shift_protocol_invariance(self):
        pipe_a, res_a = self.build(0.0)
        pipe_b, res_b = self.build(-7.0)
        # identical analysis-scale objects after shift normalization
        assert pipe_b.fit1.alpha_hat == pipe_a.fit1.alpha_hat
        assert pipe_b.fit0.alpha_hat == pipe_a.fit0.alpha_hat
        assert pipe_b.fit1.s_min == pipe_a.fit1.s_min
        # flipped outcomes move by +7, so the recorded shifts move by -7
        assert pipe_b.fit1.shift == pipe_a.fit1.shift - 7.0
        # per-arm original-scale quantiles move by the offset
        qa = -extreme_quantile(pipe_a.fit1, 0.95)
        qb = -extreme_quantile(pipe_b.fit1, 0.95)
        assert qb == pytest.approx(qa - 7.0, rel=1e-12)
        # the QTE and its interval do not move
        assert res_b.estimate == pytest.approx(res_a.estimate, rel=1e-12)
        assert res_b.ci.lo == pytest.approx(res_a.ci.lo, rel=1e-12)
        assert res_b.ci.hi == pytest.approx(res_a.ci.hi, rel=1e-12)
        assert res_b.ci.n_failed == res_a.ci.n_failed


class TestFlatTailDraws:
    """Subsets whose tail carries no information give an infinite index.

    A flat tail is the boundary of arbitrarily fast decay, so the draw
    extrapolates to the threshold itself instead of being discarded.
    """

    def full_fit(self, y_min):
        return TailFit(
            y_min=y_min, omega=1.0, alpha_hat=2.0, c_hat=1.0,
            s_min=0.4, t_max=np.inf,
        )

    def test_no_knots_beyond_threshold(self):
        cdf = StepCdf([1.0, 2.0, 3.0, 4.0], [0.5, 0.9, 1.0, 1.0])
        assert _tail_at_frozen_threshold(cdf, self.full_fit(3.0)) == (math.inf, 0.0)

    def test_dead_baseline(self):
        cdf = StepCdf([1.0, 2.0, 3.0, 4.0], [0.5, 1.0, 1.0, 1.0])
        assert _tail_at_frozen_threshold(cdf, self.full_fit(3.0)) == (math.inf, 0.0)

    def test_constant_positive_survival(self):
        # survival sits at 0.4 on the whole tail, so the slope is zero
        # but the threshold survival itself is informative
        cdf = StepCdf([1.0, 2.0, 3.0], [0.6, 0.6, 1.0])
        a, s = _tail_at_frozen_threshold(cdf, self.full_fit(2.0))
        assert a == math.inf
        assert s == pytest.approx(0.4, rel=1e-12)

    def test_informative_tail_stays_finite(self):
        cdf = StepCdf([1.0, 2.0, 3.0, 4.0], [0.5, 0.8, 0.95, 1.0])
        a, s = _tail_at_frozen_threshold(cdf, self.full_fit(2.0))
        assert math.isfinite(a) and a > 0
        assert s == pytest.approx(0.5, rel=1e-12)

    def test_infinite_draws_land_on_threshold_gap(self):
        # one arm twice the other: with every draw flat, each QTE draw
        # is exactly the gap between the two thresholds
        data = direct_set(
            np.arange(1.0, 41.0), 2.0 * np.arange(1.0, 41.0)
        )
        pipe = fit_pipeline(data, EstimatorSettings(ymin_level=0.9))
        tails = TailDraws(
            alphas=np.full((5, 2), np.inf),
            survivals=np.zeros((5, 2)),
            thresholds=np.tile([pipe.fit1.y_min, pipe.fit0.y_min], (5, 1)),
            failed=0,
        )
        draws = qte_draws_from_tails(pipe.fit1, pipe.fit0, tails, 0.95)
        gap = (pipe.fit1.y_min - pipe.fit1.shift) - (
            pipe.fit0.y_min - pipe.fit0.shift
        )
        np.testing.assert_allclose(draws, gap, rtol=1e-12)


class TestUnstableSubsampling:
    """Draws still fail hard when the subset estimator itself breaks."""

    def tiny_arm_set(self):
        # 4 treated rows among 400: at b = 67 roughly half the subsets
        # contain no treated observation at all and the refit raises
        return direct_set(
            pareto(30, 396, 2.0), np.array([1.0, 2.0, 4.0, 8.0])
        )

    def test_vanishing_arm_draws_raise(self):
        pipe = fit_pipeline(self.tiny_arm_set(), EstimatorSettings(ymin_level=0.5))
        cfg = SubsampleConfig(draws=150)
        with pytest.raises(UnstableSubsampling):
            subsample_tail_pairs(pipe, cfg, draw_stream(32))

    def test_failure_budget_can_be_raised(self):
        pipe = fit_pipeline(self.tiny_arm_set(), EstimatorSettings(ymin_level=0.5))
        cfg = SubsampleConfig(draws=150, max_failure_share=0.9)
        tails = subsample_tail_pairs(pipe, cfg, draw_stream(32))
        assert tails.failed > 15
        assert tails.alphas.shape[0] == 150 - tails.failed
        assert tails.survivals.shape == tails.alphas.shape


class TestCoverageSmoke:
    def test_interval_covers_truth_most_of_the_time(self):
        # exact Pareto arms, true upper QTE at q = 0.95 is 0.05^(-1/2)
        true = 0.05**-0.5
        settings = EstimatorSettings(ymin_level=0.9)
        cfg = SubsampleConfig(draws=120)
        covered = 0
        points = []
        reps = 40
        for rep in range(reps):
            y0 = (1.0 - substream(5, rep, 0).random(1500)) ** -0.5
            y1 = 2.0 * (1.0 - substream(5, rep, 1).random(1500)) ** -0.5
            pipe = fit_pipeline(direct_set(y0, y1), settings)
            res = estimate_qte_batch(pipe, [0.95], cfg, lambda t, rep=rep: substream(5, rep, 2, t))
            points.append(res[0].estimate)
            covered += res[0].ci.lo <= true <= res[0].ci.hi
        assert covered / reps >= 0.70
        assert abs(np.mean(points) - true) < 0.35
        assert np.mean(points) == pytest.approx(true, rel=0.10)
