#!/usr/bin/env python
# -*- coding: utf-8 -*-
from __future__ import annotations

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .constants import PERIODS_PER_DAY
from .forecasters import DensityForecast
from .timing import TimingPmf
from .utils import CoverageError, DomainError, invert_monotone

# Relative widening of the component quantile bracket
BRACKET_SLACK = 1e-9


class FusedForecast(DensityForecast):
    """
    Linear pool of a half-hourly forecast and the daily peak forecast of the same day:

        F(y) = (1 - w) * F_base(y) + w * F_peak(y)

    with w the probability that the period holds the daily peak. The pool is kept lazily as
    component references plus weights, so queries are exact at any y.

    Arguments:

    base:       Half-hourly forecast
    peak:       Daily peak-intensity forecast
    weights:    Peak timing pmf of the same days
    """

    def __init__(self, base: DensityForecast, peak: DensityForecast, weights: TimingPmf) -> None:
        super().__init__(base.node_id, 'fusion', 'halfhourly', base.index, base.skipped)
        self.base = base
        self.peak = peak
        self.timing = weights
        self.peak_rows = peak.lookup(base.dates)
        self.weights = weights.probabilities[weights.rows(base.dates), base.periods - 1]
        lowers = [base.support_lower, peak.support_lower]
        self.support_lower = min(lowers)

    def cdf(self, y: np.ndarray, rows: Optional[np.ndarray] = None) -> np.ndarray:
        rows = self._rows(rows)
        y = np.broadcast_to(np.asarray(y, dtype=float), rows.shape)
        weight = self.weights[rows]
        return (1. - weight) * self.base.cdf(y, rows) + weight * self.peak.cdf(y, self.peak_rows[rows])

    def quantiles(self, levels: Sequence[float], rows: Optional[np.ndarray] = None) -> np.ndarray:
        """
        Quantiles by bracketed root finding on the pooled CDF. The pooled quantile at level p
        lies between the two component quantiles at p, which seed the bracket.
        """
        rows = self._rows(rows)
        levels = np.asarray(levels, dtype=float)
        if not ((levels > 0) & (levels < 1)).all():
            raise DomainError('Quantile levels must lie strictly inside (0, 1)')
        base = self.base.quantiles(levels, rows)
        peak = self.peak.quantiles(levels, self.peak_rows[rows])
        weight = np.repeat(self.weights[rows][:, None], len(levels), axis=1)
        result = np.where(weight <= 0., base, peak)
        mixed = (weight > 0.) & (weight < 1.)
        if not mixed.any():
            return result

        lower = np.minimum(base, peak)[mixed]
        upper = np.maximum(base, peak)[mixed]
        slack = BRACKET_SLACK * (1. + np.abs(lower) + np.abs(upper))
        entry = np.broadcast_to(rows[:, None], base.shape)[mixed]
        targets = np.broadcast_to(levels[None, :], base.shape)[mixed]
        floor = self.support_lower if np.isfinite(self.support_lower) else None
        lower = lower - slack
        if floor is not None:
            lower = np.maximum(lower, floor)

        def pooled(x: np.ndarray, idx: np.ndarray) -> np.ndarray:
            return self.cdf(x, entry[idx])

        result[mixed] = invert_monotone(pooled, targets, lower, upper + slack, floor=floor)
        return result


def coverage_gaps(base: DensityForecast, peak: DensityForecast, weights: TimingPmf) -> List[Tuple[str, int]]:
    """ (day, period) cells that are not covered by all three fusion inputs. """
    base_cells = set(zip(base.dates, base.periods))
    peak_days = set(peak.dates)
    weight_days = set(weights.dates)
    days = set(base.dates) | peak_days | weight_days
    missing = []
    for day in sorted(days):
        for period in range(1, PERIODS_PER_DAY + 1):
            if (day, period) not in base_cells or day not in peak_days or day not in weight_days:
                missing.append((str(day), period))
    return missing


def fuse(base: DensityForecast, peak: DensityForecast, weights: TimingPmf) -> FusedForecast:
    """
    Fuse a half-hourly forecast with the peak-intensity forecast using the timing pmf as weights.
    All inputs must belong to the same node and cover the same days, every period included.
    """
    if base.resolution != 'halfhourly' or peak.resolution != 'daily':
        raise ValueError('Fusion takes a half-hourly base forecast and a daily peak forecast')
    nodes = {base.node_id, peak.node_id, weights.node_id}
    if len(nodes) != 1:
        raise CoverageError(sorted(nodes), 'Fusion inputs belong to different nodes')
    missing = coverage_gaps(base, peak, weights)
    if missing:
        raise CoverageError(missing, f'Fusion inputs of `{base.node_id}` do not cover {len(missing)} cells')
    fused = FusedForecast(base, peak, weights)
    logging.debug(f'{base.node_id}: fused {len(fused)} timesteps ({base.method} + {peak.method}, {weights.method} weights)')
    return fused


def _cell(fused: FusedForecast, day, period: int) -> np.ndarray:
    row = fused.lookup([day], [period])
    if row[0] < 0:
        raise CoverageError([(str(day), period)], 'No fused forecast for')
    return row


def fused_cdf(fused: FusedForecast, day, period: int, y) -> np.ndarray:
    """ Pooled CDF of one (day, period) cell at the values `y`. """
    y = np.asarray(y, dtype=float)
    rows = np.repeat(_cell(fused, day, period), y.size)
    return fused.cdf(y.ravel(), rows).reshape(y.shape)


def fused_quantile(fused: FusedForecast, day, period: int, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return fused.quantiles(p.ravel(), _cell(fused, day, period))[0].reshape(p.shape)


def fusion_weights_frame(fused: FusedForecast) -> pd.DataFrame:
    return pd.DataFrame({
        'node': fused.node_id,
        'date': fused.dates.astype('datetime64[ns]'),
        'period': fused.periods,
        'weight': fused.weights
    })
