"""Minimum cross entropy thresholding and training-target construction.

For a histogram h over gray values g, the threshold objective is

    D(t) = sum_{g <  t} g h(g) log(g / mu0(t))
         + sum_{g >= t} g h(g) log(g / mu1(t))

with mu0/mu1 the mean gray value below/above the split, the convention
0 log 0 = 0, and an empty side contributing nothing.  The minimizer is
found by an exhaustive scan over every integer candidate between the
smallest occupied value and one past the largest, ties broken toward the
smallest t.  That scan window also guarantees the result stays within
[min occupied, max occupied].
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import BorderSeedError
from .volume import Environment


@dataclass(frozen=True)
class Histogram:
    """Integer-binned gray value counts with an affine bin -> gray map."""

    counts: np.ndarray
    origin: int = 0
    width: int = 1

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or counts.size < 2:
            raise ValueError("histogram needs a 1D counts array with at least 2 bins")
        if np.any(counts < 0):
            raise ValueError("histogram counts must be nonnegative")
        if self.width < 1:
            raise ValueError("bin width must be >= 1")
        object.__setattr__(self, "counts", counts.astype(np.int64))

    @classmethod
    def from_values(cls, values) -> "Histogram":
        """Exact histogram of integer gray values (dense between min and max).

        One empty bin is appended past the maximum so the all-below split is
        always a candidate.
        """
        v = np.asarray(values).ravel()
        if v.size == 0:
            raise ValueError("cannot build a histogram from no values")
        v = v.astype(np.int64)
        lo = int(v.min())
        hi = int(v.max())
        counts = np.bincount(v - lo, minlength=hi - lo + 2)
        return cls(counts=counts, origin=lo)

    @property
    def bin_count(self) -> int:
        return int(self.counts.size)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def value_of_bin(self, index: int) -> float:
        return float(self.origin + index * self.width)

    @property
    def occupied(self) -> np.ndarray:
        return np.nonzero(self.counts)[0]


def _side_term(moment, count, moment_log):
    """sum g h log(g/mu) over one side, with 0 log 0 = 0 and empty side -> 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        log_mu = np.log(np.where(moment > 0, moment, 1.0) / np.where(count > 0, count, 1.0))
    return moment_log - np.where(moment > 0, moment * log_mu, 0.0)


def mce_threshold(hist: Histogram) -> float:
    """Gray value minimizing the cross-entropy split objective."""
    if hist.total < 1:
        raise ValueError("histogram has no mass")
    counts = hist.counts.astype(np.float64)
    gray = hist.origin + np.arange(hist.bin_count, dtype=np.float64) * hist.width
    occupied = hist.occupied
    lo = int(occupied[0])
    hi = int(occupied[-1])

    moment = gray * counts
    log_gray = np.where(gray > 0, np.log(np.where(gray > 0, gray, 1.0)), 0.0)
    moment_log = moment * log_gray

    cum_m = np.concatenate([[0.0], np.cumsum(moment)])
    cum_n = np.concatenate([[0.0], np.cumsum(counts)])
    cum_p = np.concatenate([[0.0], np.cumsum(moment_log)])

    # candidate split bins: [lo, hi + 1]; bins below t are the lower class
    ts = np.arange(lo, hi + 2)
    m0, n0, p0 = cum_m[ts], cum_n[ts], cum_p[ts]
    m1, n1, p1 = cum_m[-1] - m0, cum_n[-1] - n0, cum_p[-1] - p0
    objective = _side_term(m0, n0, p0) + _side_term(m1, n1, p1)
    best = int(ts[int(np.argmin(objective))])
    return hist.value_of_bin(best)


@dataclass(frozen=True)
class TargetVector:
    """Per-seed threshold offsets: entry j is theta*(U_j) - theta_g."""

    values: np.ndarray
    theta_stars: np.ndarray
    degenerate: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return int(self.values.size)


def build_targets(envs: Sequence[Environment], theta_g: float) -> TargetVector:
    """Estimate the per-region optimal threshold and subtract the global one.

    Every environment must be complete; seed regions clipped by the volume
    border carry no usable histogram.
    """
    if len(envs) == 0:
        raise ValueError("need at least one environment")
    if theta_g < 0:
        raise ValueError(f"theta_g must be nonnegative, got {theta_g}")
    borders = [env.center for env in envs if not env.complete]
    if borders:
        raise BorderSeedError(borders, envs[0].size)
    stars = np.empty(len(envs), dtype=np.float64)
    degenerate = np.zeros(len(envs), dtype=bool)
    for j, env in enumerate(envs):
        hist = Histogram.from_values(env.values)
        stars[j] = mce_threshold(hist)
        degenerate[j] = hist.occupied.size == 1
    return TargetVector(values=stars - float(theta_g), theta_stars=stars, degenerate=degenerate)
