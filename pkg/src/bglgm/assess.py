"""Prediction assessment: narrowest credible intervals, empirical coverage,
RMSE of predicted probabilities and the total-count posterior."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .errors import DataValidationError


def narrowest_credible_interval(samples, level: float) -> tuple[float, float]:
    """Shortest window of sorted samples containing ceil(level * N) of them.

    Ties in width break to the smallest lower endpoint.  Interval endpoints
    are inclusive, which matters for width-zero intervals on integer counts.
    """
    values = np.sort(np.asarray(samples, dtype=float).ravel())
    n = values.shape[0]
    if n == 0:
        raise DataValidationError("cannot form an interval from no samples")
    if not 0.0 < level < 1.0:
        raise DataValidationError("level must be in (0, 1)")
    k = min(int(math.ceil(level * n)), n)
    widths = values[k - 1:] - values[:n - k + 1]
    start = int(np.argmin(widths))  # first minimum = leftmost, smallest lo
    return float(values[start]), float(values[start + k - 1])


class CoverageResult(NamedTuple):
    coverage: float
    mean_width: float


def empirical_coverage(count_draws, truths, level: float) -> CoverageResult:
    """Fraction of sites whose true count falls in its narrowest interval."""
    draws = np.asarray(count_draws, dtype=float)
    truths = np.asarray(truths, dtype=float)
    if draws.ndim != 2 or draws.shape[1] != truths.shape[0]:
        raise DataValidationError("count_draws columns must match truths")
    hits = 0
    widths = np.empty(truths.shape[0])
    for j, truth in enumerate(truths):
        lo, hi = narrowest_credible_interval(draws[:, j], level)
        widths[j] = hi - lo
        if lo <= truth <= hi:
            hits += 1
    return CoverageResult(hits / truths.shape[0], float(widths.mean()))


def rmse_probs(p_hat, p_true) -> float:
    """Root mean squared difference between predicted and true probabilities."""
    a = np.asarray(p_hat, dtype=float)
    b = np.asarray(p_true, dtype=float)
    if a.shape != b.shape:
        raise DataValidationError("probability vectors must have equal length")
    return float(np.sqrt(np.mean((a - b) ** 2)))


class TotalCountSummary(NamedTuple):
    totals: np.ndarray
    interval: tuple[float, float]
    covered: bool


def total_count_summary(count_draws, truths, level: float = 0.95) -> TotalCountSummary:
    """Distribution of the summed counts across sites, with its narrowest
    interval and whether it covers the true total."""
    draws = np.asarray(count_draws, dtype=float)
    truths = np.asarray(truths, dtype=float)
    if draws.ndim != 2 or draws.shape[1] != truths.shape[0]:
        raise DataValidationError("count_draws columns must match truths")
    totals = draws.sum(axis=1)
    lo, hi = narrowest_credible_interval(totals, level)
    truth_total = float(truths.sum())
    return TotalCountSummary(totals, (lo, hi), lo <= truth_total <= hi)
