#!/usr/bin/env python
# -*- coding: utf-8 -*-
from __future__ import annotations

import logging
from typing import Any, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .constants import BASIS_DIMS, CLIMATOLOGY_SMOOTHING, CLIMATOLOGY_WINDOW, DAY_OF_YEAR_RANGE, DAY_TYPES_2, \
    HAZARD_MIN_DAYS, PERIOD_RANGE, PERIODS_PER_DAY
from .dataset import DailyPeakSeries, as_dates, calendar_columns
from .gamlss import FittedModel, ModelSpec, fit, predict
from .smoothers import SmoothTerm, dummy, pb, pbc, tensor
from .utils import DomainError, InsufficientDataError

ANNUAL_PERIOD = DAY_OF_YEAR_RANGE[1]


def expand_to_person_period(peaks: DailyPeakSeries, features: Optional[pd.DataFrame] = None) -> pd.DataFrame:
    """
    One record per day and period up to the day's peak; `event` is 1 on the peak period only.

    Arguments:

    peaks:      Daily peak timings
    features:   Daily frame with date, doy and daytype2 columns, derived from the dates when None
    """
    if features is None:
        features = calendar_columns(peaks.dates)
    features = features.set_index(pd.DatetimeIndex(features['date']))
    dates = pd.DatetimeIndex(peaks.dates.astype('datetime64[ns]'))
    daily = features.reindex(dates)
    timing = np.asarray(peaks.timing, dtype=int)
    if ((timing < 1) | (timing > PERIODS_PER_DAY)).any():
        raise DomainError('Peak timings must lie in 1..48')
    rows = np.repeat(np.arange(len(timing)), timing)
    starts = np.repeat(np.cumsum(timing) - timing, timing)
    period = np.arange(len(rows)) - starts + 1
    return pd.DataFrame({
        'date': dates[rows],
        'period': period,
        'event': (period == timing[rows]).astype(float),
        'doy': daily['doy'].to_numpy()[rows],
        'daytype2': daily['daytype2'].to_numpy()[rows]
    })


def hazard_spec(level: str, basis_dims: Optional[Mapping[str, Any]] = None) -> ModelSpec:
    dims = dict(BASIS_DIMS, **(basis_dims or {}))
    if level == 'household':
        terms = [
            pb('period', k=dims['period'], lower=PERIOD_RANGE[0], upper=PERIOD_RANGE[1]),
            pbc('doy', k=dims['annual'], period=ANNUAL_PERIOD, lower=DAY_OF_YEAR_RANGE[0])
        ]
    else:
        k_period, k_annual = dims['tensor']
        terms = [
            tensor(
                SmoothTerm('pb', 'period', k=k_period, lower=PERIOD_RANGE[0], upper=PERIOD_RANGE[1]),
                SmoothTerm('pbc', 'doy', k=k_annual, period=ANNUAL_PERIOD, lower=DAY_OF_YEAR_RANGE[0])
            ),
            dummy('daytype2', levels=DAY_TYPES_2)
        ]
    return ModelSpec('Bernoulli', {'mu': terms}, resolution='halfhourly', name=f'hazard-{level}', target='event')


def fit_hazard(
        records: pd.DataFrame,
        level: str,
        options: Optional[Mapping[str, Any]] = None,
        basis_dims: Optional[Mapping[str, Any]] = None
) -> FittedModel:
    """
    Logit-link discrete hazard of the daily peak: tensor(period, day of year) plus weekday/weekend
    for aggregated nodes, additive period and day-of-year smooths for households.
    """
    n_days = records['date'].nunique()
    if n_days < HAZARD_MIN_DAYS:
        raise InsufficientDataError(f'Hazard fit needs at least {HAZARD_MIN_DAYS} days, got {n_days}')
    level = 'household' if level == 'household' else 'aggregated'
    return fit(hazard_spec(level, basis_dims), records, options)


def survival(hazards: np.ndarray) -> np.ndarray:
    """ S(h) = prod_{s <= h} (1 - hazard(s)) along the last axis. """
    return np.cumprod(1. - np.asarray(hazards, dtype=float), axis=-1)


def hazard_to_pmf(hazards: np.ndarray) -> np.ndarray:
    """
    f(h) = hazard(h) * S(h - 1) along the last axis, with the mass S(H) left after the last
    period added to the last period so each row sums to one.
    """
    hazards = np.asarray(hazards, dtype=float)
    if not ((hazards >= 0) & (hazards <= 1)).all():
        raise DomainError('Hazards must lie in [0, 1]')
    surviving = survival(hazards)
    before = np.concatenate([np.ones(hazards.shape[:-1] + (1,)), surviving[..., :-1]], axis=-1)
    pmf = hazards * before
    pmf[..., -1] += surviving[..., -1]
    return pmf


class TimingPmf(object):
    """
    Per-day probability mass over the 48 periods for the time of the daily peak.

    Arguments:

    node_id:        Node the forecast belongs to
    dates:          Forecast days
    probabilities:  (days, 48) array, rows sum to one
    method:         'hazard' or 'climatology'
    """

    def __init__(self, node_id: str, dates: np.ndarray, probabilities: np.ndarray, method: str) -> None:
        probabilities = np.array(probabilities, dtype=float).reshape(len(dates), PERIODS_PER_DAY)
        if (probabilities < 0).any() or not np.allclose(probabilities.sum(axis=1), 1., atol=1e-12, rtol=0.):
            raise DomainError(f'Timing pmf of `{node_id}` is not a probability mass function')
        probabilities.setflags(write=False)
        self.node_id = node_id
        self.dates = as_dates(dates)
        self.probabilities = probabilities
        self.method = method

    def __len__(self) -> int:
        return len(self.dates)

    def restrict(self, dates: Sequence) -> TimingPmf:
        keep = np.isin(self.dates, as_dates(dates))
        return TimingPmf(self.node_id, self.dates[keep], self.probabilities[keep], self.method)

    def rows(self, dates: Sequence) -> np.ndarray:
        """ Row of every requested date, -1 where the date is not covered. """
        position = {day: row for row, day in enumerate(self.dates)}
        return np.array([position.get(day, -1) for day in as_dates(dates)], dtype=int)

    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.probabilities, axis=1)

    def to_frame(self) -> pd.DataFrame:
        n_days = len(self.dates)
        return pd.DataFrame({
            'node': self.node_id,
            'date': np.repeat(self.dates, PERIODS_PER_DAY).astype('datetime64[ns]'),
            'h': np.tile(np.arange(1, PERIODS_PER_DAY + 1), n_days),
            'probability': self.probabilities.ravel()
        })

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, method: str) -> TimingPmf:
        table = frame.pivot(index='date', columns='h', values='probability').reindex(
            columns=range(1, PERIODS_PER_DAY + 1))
        return cls(str(frame['node'].iloc[0]), as_dates(table.index), table.to_numpy(), method)


def predict_timing(model: FittedModel, node_id: str, daily: pd.DataFrame) -> TimingPmf:
    """ Hazard for every period of the given days turned into a TimingPmf. """
    n_days = len(daily)
    grid = pd.DataFrame({
        'period': np.tile(np.arange(1, PERIODS_PER_DAY + 1), n_days).astype(float),
        'doy': np.repeat(daily['doy'].to_numpy(dtype=float), PERIODS_PER_DAY),
        'daytype2': np.repeat(daily['daytype2'].to_numpy(), PERIODS_PER_DAY)
    })
    hazards = predict(model, grid)['mu'].to_numpy().reshape(n_days, PERIODS_PER_DAY)
    return TimingPmf(node_id, as_dates(daily['date']), hazard_to_pmf(np.clip(hazards, 0., 1.)), 'hazard')


def _circular_distance(first: np.ndarray, second: np.ndarray, cycle: float = ANNUAL_PERIOD) -> np.ndarray:
    distance = np.abs(first[:, None] - second[None, :]) % cycle
    return np.minimum(distance, cycle - distance)


def climatology_pmf(
        training: DailyPeakSeries,
        query_dates: Union[Sequence, np.ndarray],
        window: int = CLIMATOLOGY_WINDOW,
        smoothing: float = CLIMATOLOGY_SMOOTHING
) -> TimingPmf:
    """
    Seasonal climatology of the peak timing: relative frequency of the training peak periods
    within +/- `window` days of year and with the same weekday/weekend type as the query day,
    with `smoothing` added to every period before normalizing.
    """
    if len(training) == 0:
        raise DomainError('Climatology needs training peaks')
    train = calendar_columns(training.dates)
    query = calendar_columns(as_dates(query_dates))
    near = _circular_distance(query['doy'].to_numpy(), train['doy'].to_numpy()) <= window
    same_type = query['daytype2'].to_numpy()[:, None] == train['daytype2'].to_numpy()[None, :]
    mask = near & same_type
    empty = ~mask.any(axis=1)
    if empty.any():
        logging.info(f'{training.node_id}: climatology window empty for {int(empty.sum())} days, using all training days')
        mask[empty] = True
    one_hot = np.zeros((len(training), PERIODS_PER_DAY))
    one_hot[np.arange(len(training)), np.asarray(training.timing) - 1] = 1.
    counts = mask.astype(float) @ one_hot + smoothing
    return TimingPmf(training.node_id, query['date'].to_numpy(), counts / counts.sum(axis=1, keepdims=True), 'climatology')


def hazard_consistency(pmf: np.ndarray) -> np.ndarray:
    """ Hazards implied by a pmf, hazard(h) = f(h) / S(h - 1), NaN where nothing survives. """
    pmf = np.asarray(pmf, dtype=float)
    before = 1. - np.concatenate([np.zeros(pmf.shape[:-1] + (1,)), np.cumsum(pmf, axis=-1)[..., :-1]], axis=-1)
    with np.errstate(divide='ignore', invalid='ignore'):
        return np.where(before > 0, pmf / before, np.nan)
