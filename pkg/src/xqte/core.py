"""Shared data model: observation sets, step-function CDFs, generalized
inverses, outcome flipping, and reproducible RNG substreams.

Counterfactual CDF estimators in this package return raw step functions
that need not be monotone or stay inside [0, 1]. Quantile lookups go
through an explicit monotone rearrangement so that the inversion step is
well defined and auditable.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

Design = Literal["iv", "rdd", "direct"]


class EstimationError(Exception):
    """Base class for failures of the estimation pipeline."""


class QuantileUnreachable(EstimationError):
    """Requested level is never attained by the rearranged CDF."""


class DegenerateDenominator(EstimationError):
    """Estimated complier mass is numerically zero; the design carries no
    identifying variation for the counterfactual CDFs."""


def _check_finite(arr: np.ndarray, name: str) -> np.ndarray:
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def _check_binary(arr: np.ndarray, name: str) -> np.ndarray:
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{name} must be 0/1 valued")
    return arr


@dataclass(frozen=True)
class ObservationSet:
    """Unit-level records for one research design.

    design "iv":     outcome y, treatment d, binary instrument z,
                     covariate matrix x of shape (n, k).
    design "rdd":    outcome y, treatment d, running variable r with the
                     cutoff normalized to 0.
    design "direct": outcome y and treatment d only; each arm's CDF is
                     read straight off the corresponding subsample.
    """

    design: Design
    y: np.ndarray
    d: np.ndarray
    z: np.ndarray | None = None
    x: np.ndarray | None = None
    r: np.ndarray | None = None

    def __post_init__(self):
        y = _check_finite(np.asarray(self.y, dtype=float), "y")
        if y.ndim != 1 or y.size == 0:
            raise ValueError("y must be a non-empty 1-d array")
        n = y.size
        d = np.asarray(self.d)
        if d.shape != (n,):
            raise ValueError("d must match y in length")
        d = _check_binary(d, "d").astype(np.int8)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", d)
        if self.design == "iv":
            if self.z is None or self.x is None:
                raise ValueError("iv design needs z and x")
            z = np.asarray(self.z)
            if z.shape != (n,):
                raise ValueError("z must match y in length")
            z = _check_binary(z, "z").astype(np.int8)
            x = _check_finite(np.asarray(self.x, dtype=float), "x")
            if x.ndim != 2 or x.shape[0] != n:
                raise ValueError("x must be a 2-d array with one row per unit")
            object.__setattr__(self, "z", z)
            object.__setattr__(self, "x", x)
        elif self.design == "rdd":
            if self.r is None:
                raise ValueError("rdd design needs the running variable r")
            r = _check_finite(np.asarray(self.r, dtype=float), "r")
            if r.shape != (n,):
                raise ValueError("r must match y in length")
            object.__setattr__(self, "r", r)
        elif self.design != "direct":
            raise ValueError(f"unknown design {self.design!r}")

    @property
    def n(self) -> int:
        return self.y.size

    def subset(self, idx: np.ndarray) -> "ObservationSet":
        """Row subset (used by subsampling); validation re-runs, it is cheap."""
        return ObservationSet(
            design=self.design,
            y=self.y[idx],
            d=self.d[idx],
            z=None if self.z is None else self.z[idx],
            x=None if self.x is None else self.x[idx],
            r=None if self.r is None else self.r[idx],
        )


def flip_outcomes(data: ObservationSet) -> ObservationSet:
    """Negate outcomes so a lower-tail analysis becomes an upper-tail one.

    An involution: flipping twice restores the input. A lower-tail
    quantile level q on the original data corresponds to the upper-tail
    level 1 - q on flipped data, and quantile estimates map back with a
    sign change.
    """
    return replace(data, y=-data.y)


@dataclass(frozen=True)
class StepCdf:
    """Piecewise-constant CDF estimate on a strictly increasing knot grid.

    values[i] is the estimate just above knots[i]. Evaluation is
    left-continuous: 0 below the first knot, values[i-1] on
    (knots[i-1], knots[i]], and values[-1] above the last knot. Values
    are stored raw; they may leave [0, 1] or be non-monotone, and no
    clipping happens here.

    flipped records whether the underlying outcomes were negated before
    estimation, so downstream quantile lookups know to map back.
    """

    knots: np.ndarray
    values: np.ndarray
    flipped: bool = False

    def __post_init__(self):
        knots = _check_finite(np.asarray(self.knots, dtype=float), "knots")
        values = _check_finite(np.asarray(self.values, dtype=float), "values")
        if knots.ndim != 1 or knots.size == 0:
            raise ValueError("knots must be a non-empty 1-d array")
        if values.shape != knots.shape:
            raise ValueError("values must match knots in shape")
        if knots.size > 1 and not np.all(np.diff(knots) > 0):
            raise ValueError("knots must be strictly increasing")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    def shifted(self, delta: float) -> "StepCdf":
        return StepCdf(self.knots + delta, self.values, self.flipped)


@dataclass(frozen=True)
class MonotoneCdf:
    """Rearranged CDF: same knots, values non-decreasing within [0, 1]."""

    knots: np.ndarray
    values: np.ndarray
    flipped: bool = False


def evaluate(cdf: StepCdf | MonotoneCdf, y) -> np.ndarray | float:
    """Left-continuous evaluation of a step CDF at scalar or array y."""
    y_arr = np.asarray(y, dtype=float)
    # number of knots strictly below y gives the active segment
    idx = np.searchsorted(cdf.knots, y_arr, side="left")
    padded = np.concatenate(([0.0], cdf.values))
    out = padded[idx]
    return float(out) if np.isscalar(y) or y_arr.ndim == 0 else out


def monotone_rearrange(cdf: StepCdf) -> MonotoneCdf:
    """Clip values into [0, 1] and take the running maximum.

    The result dominates the clipped input pointwise and is the smallest
    monotone function that does, so quantile lookups are conservative in
    the direction of earlier knots.
    """
    clipped = np.clip(cdf.values, 0.0, 1.0)
    return MonotoneCdf(cdf.knots, np.maximum.accumulate(clipped), cdf.flipped)


def tail_view(cdf: StepCdf) -> StepCdf:
    """Proper-CDF view of a raw step CDF for tail estimation.

    Weighted CDF estimates wander around their terminal level instead of
    landing on 1, and the wobble is of the same order as the tail
    probabilities we want to measure. Feeding the raw values into a tail
    fit therefore mostly measures sampling noise in the normalisation.
    The view takes the running maximum of the raw values and rescales by
    the global maximum, so the last knot sits at exactly 1 and threshold
    selection is always well defined. Clipping happens only after the
    rescaling: an early noise peak above 1 deflates the whole curve
    slightly instead of freezing it at 1 and erasing the tail. Ratios of
    survival levels, which is all the tail fit consumes, are unchanged
    by the rescaling.
    """
    peak = np.maximum.accumulate(cdf.values)
    top = peak[-1]
    if top <= 0.0:
        raise DegenerateDenominator("CDF estimate has no positive mass")
    return StepCdf(cdf.knots, np.clip(peak / top, 0.0, 1.0), cdf.flipped)


def left_inverse(m: MonotoneCdf, q: float) -> float:
    """Smallest knot whose rearranged value reaches q.

    Matches the classical left-continuous inverse of an empirical CDF
    when applied to one. Raises QuantileUnreachable when even the last
    knot stays below q.
    """
    if not 0.0 < q <= 1.0:
        raise ValueError("q must lie in (0, 1]")
    idx = int(np.searchsorted(m.values, q, side="left"))
    if idx >= m.values.size:
        raise QuantileUnreachable(
            f"rearranged CDF tops out at {m.values[-1]:.6g} < q = {q:.6g}"
        )
    return float(m.knots[idx])


def substream(seed: int, *key: int) -> np.random.Generator:
    """Generator for a (seed, key) pair, independent across keys.

    Replication k of a run with master seed s always sees the stream
    substream(s, ..., k) no matter how work is scheduled, which makes
    simulation output independent of worker count.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))
