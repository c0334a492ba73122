#!/usr/bin/env python
# -*- coding: utf-8 -*-
from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .constants import BASIS_DIMS, DAY_OF_YEAR_RANGE, DAY_TYPES_2, DAY_TYPES_3, PERIOD_RANGE, PERIODS_PER_DAY, \
    QUANTILE_LEVELS
from .dataset import FeatureFrame, as_dates
from .distributions import DistributionFamily, ParamVector, get_family, select_rows
from .gamlss import FittedModel, ModelSpec, fit, fit_with_fallback, predict
from .kde import KdeModel, cell_keys, fit_kde_frame, kde_cdf
from .smoothers import dummy, linear, pb, pbc, pvc
from .utils import DatasetError

ANNUAL_PERIOD = DAY_OF_YEAR_RANGE[1]

# Observations of the target day itself, never allowed as regressors
SAME_DAY_COLUMNS = ('y', 'peak', 'timing', 'std', 'empty')

# Resolution and response column per forecast kind
KINDS = {
    'halfhourly': ('halfhourly', 'y'),
    'peak': ('daily', 'peak')
}

# KDE conditioning of the household benchmarks
KDE_CONDITIONING = {
    'halfhourly': {'kde1': 'by_period', 'kde2': 'by_period_and_daytype3'},
    'peak': {'kde1': 'none', 'kde2': 'by_daytype2'}
}


def _dims(basis_dims: Optional[Mapping[str, Any]]) -> Dict[str, Any]:
    return dict(BASIS_DIMS, **(basis_dims or {}))


def _period_smooth(dims: Mapping[str, Any]):
    return pb('period', k=dims['period'], lower=PERIOD_RANGE[0], upper=PERIOD_RANGE[1])


def _annual_cyclic(k: int):
    return pbc('doy', k=k, period=ANNUAL_PERIOD, lower=DAY_OF_YEAR_RANGE[0])


def spec_halfhourly_aggregated(basis_dims: Optional[Mapping[str, Any]] = None) -> ModelSpec:
    """
    Gaussian model of aggregated half-hourly load.

    mu: lag-1 and lag-7 load, yesterday's peak, per-period multipliers of the lag-1 load and of
    yesterday's peak, one period-of-day curve per day type and a smooth annual cycle.
    sigma: period-of-day curve.
    """
    dims = _dims(basis_dims)
    periods = list(range(1, PERIODS_PER_DAY + 1))
    mu = [
        linear('lag1'),
        linear('lag7'),
        linear('peak_lag1'),
        dummy('period', by='lag1', levels=periods),
        dummy('period', by='peak_lag1', levels=periods),
        pvc('period', by='daytype3', k=dims['period'], lower=PERIOD_RANGE[0], upper=PERIOD_RANGE[1],
            levels=DAY_TYPES_3),
        _annual_cyclic(dims['annual_smooth'])
    ]
    return ModelSpec('Gaussian', {'mu': mu, 'sigma': [_period_smooth(dims)]}, 'halfhourly', 'halfhourly-full')


def spec_halfhourly_household(basis_dims: Optional[Mapping[str, Any]] = None) -> ModelSpec:
    """ Generalised Beta Prime model of household half-hourly load, nu and tau constant. """
    dims = _dims(basis_dims)
    mu = [
        linear('lag1'),
        linear('lag7'),
        dummy('dow', levels=list(range(7))),
        _period_smooth(dims),
        _annual_cyclic(dims['annual'])
    ]
    return ModelSpec(
        'GeneralisedBetaPrime', {'mu': mu, 'sigma': [_period_smooth(dims)]}, 'halfhourly', 'halfhourly-full'
    )


def spec_peak_intensity_aggregated(basis_dims: Optional[Mapping[str, Any]] = None) -> ModelSpec:
    dims = _dims(basis_dims)
    mu = [
        linear('peak_lag1'),
        linear('peak_lag7'),
        linear('std_lag1'),
        _annual_cyclic(dims['annual_daily']),
        dummy('daytype2', levels=DAY_TYPES_2)
    ]
    sigma = [dummy('daytype2', levels=DAY_TYPES_2), linear('std_lag1')]
    return ModelSpec('Gaussian', {'mu': mu, 'sigma': sigma}, 'daily', 'peak-full', target='peak')


def spec_peak_intensity_household(
        empty_enabled: bool = False,
        basis_dims: Optional[Mapping[str, Any]] = None
) -> ModelSpec:
    """
    Generalised Beta Prime model of the household daily peak. The empty-house indicator of the
    previous day enters mu, sigma and nu only when the household has empty periods.
    """
    dims = _dims(basis_dims)
    mu = [
        linear('peak_lag1'),
        linear('peak_lag7'),
        pb('doy', k=dims['annual_daily'], lower=DAY_OF_YEAR_RANGE[0], upper=ANNUAL_PERIOD),
        dummy('daytype2', levels=DAY_TYPES_2)
    ]
    formulas = {'mu': mu}
    if empty_enabled:
        mu.append(linear('empty_lag1'))
        formulas['sigma'] = [linear('empty_lag1')]
        formulas['nu'] = [linear('empty_lag1')]
    return ModelSpec('GeneralisedBetaPrime', formulas, 'daily', 'peak-full', target='peak')


def spec_benchmark_simple_aggregated(basis_dims: Optional[Mapping[str, Any]] = None) -> ModelSpec:
    dims = _dims(basis_dims)
    mu = [linear('lag1'), linear('lag7'), _period_smooth(dims)]
    return ModelSpec('Gaussian', {'mu': mu, 'sigma': [_period_smooth(dims)]}, 'halfhourly', 'halfhourly-simple')


def spec_benchmark_simple_household(basis_dims: Optional[Mapping[str, Any]] = None) -> ModelSpec:
    dims = _dims(basis_dims)
    formulas = {'mu': [_period_smooth(dims)], 'sigma': [_period_smooth(dims)]}
    return ModelSpec('GeneralisedBetaPrime', formulas, 'halfhourly', 'halfhourly-simple')


def spec_benchmark_peak_simple(level: str) -> ModelSpec:
    family = 'GeneralisedBetaPrime' if level == 'household' else 'Gaussian'
    mu = [linear('peak_lag1'), linear('peak_lag7')]
    return ModelSpec(family, {'mu': mu}, 'daily', 'peak-simple', target='peak')


def level_group(level: str) -> str:
    return 'household' if level == 'household' else 'aggregated'


def method_spec(
        level: str,
        kind: str,
        method: str,
        empty_enabled: bool = False,
        basis_dims: Optional[Mapping[str, Any]] = None
) -> ModelSpec:
    """ ModelSpec of a GAMLSS method, `kind` being 'halfhourly' or 'peak'. """
    household = level_group(level) == 'household'
    if kind == 'halfhourly' and method == 'full':
        return spec_halfhourly_household(basis_dims) if household else spec_halfhourly_aggregated(basis_dims)
    if kind == 'halfhourly' and method == 'simple':
        return spec_benchmark_simple_household(basis_dims) if household else spec_benchmark_simple_aggregated(basis_dims)
    if kind == 'peak' and method == 'full':
        if household:
            return spec_peak_intensity_household(empty_enabled, basis_dims)
        return spec_peak_intensity_aggregated(basis_dims)
    if kind == 'peak' and method == 'simple':
        return spec_benchmark_peak_simple(level_group(level))
    raise ValueError(f'No GAMLSS method `{method}` for {kind} forecasts at level `{level}`')


def fallback_spec(level: str, kind: str, method: str, basis_dims: Optional[Mapping[str, Any]] = None) -> Optional[ModelSpec]:
    """ Households replace a failed Full model by the Simple one. """
    if level_group(level) == 'household' and method == 'full':
        return method_spec(level, kind, 'simple', basis_dims=basis_dims)
    return None


def training_rows(features: FeatureFrame, kind: str, dates: Sequence, require_lags: bool = True) -> pd.DataFrame:
    resolution, _ = KINDS[kind]
    frame = features.halfhourly if resolution == 'halfhourly' else features.daily
    keep = np.isin(as_dates(frame['date']), as_dates(dates))
    if require_lags:
        keep &= frame['available'].to_numpy(dtype=bool)
    return frame.loc[keep].reset_index(drop=True)


def fit_method(
        features: FeatureFrame,
        level: str,
        kind: str,
        method: str,
        dates: Sequence,
        options: Optional[Mapping[str, Any]] = None,
        basis_dims: Optional[Mapping[str, Any]] = None
) -> Union[FittedModel, KdeModel]:
    """
    Fit one forecasting method of a node on the given training days.

    Arguments:

    features:   Feature frame of the node
    level:      Network level of the node
    kind:       'halfhourly' or 'peak'
    method:     'simple', 'full', 'kde1' or 'kde2'
    dates:      Training days
    options:    GAMLSS fitting options
    basis_dims: Overrides of the smooth basis dimensions
    """
    _, target = KINDS[kind]
    if method in KDE_CONDITIONING[kind]:
        rows = training_rows(features, kind, dates, require_lags=False)
        return fit_kde_frame(rows, KDE_CONDITIONING[kind][method], target)
    spec = method_spec(level, kind, method, features.empty_enabled, basis_dims)
    spec.name = f'{features.node_id}/{kind}-{method}'
    rows = training_rows(features, kind, dates)
    fallback = fallback_spec(level, kind, method, basis_dims)
    if fallback is None:
        return fit(spec, rows, options)
    fallback.name = f'{features.node_id}/{kind}-simple'
    return fit_with_fallback(spec, fallback, rows, options)


def audit_causality(spec: ModelSpec, frame: pd.DataFrame) -> List[str]:
    """ Problems that would let a forecast see its own target day, empty when the inputs are day-ahead. """
    problems = [f'covariate `{name}` is observed on the target day' for name in spec.covariates if name in SAME_DAY_COLUMNS]
    dates = pd.to_datetime(frame['date'])
    for column in ('lag1_date', 'lag7_date'):
        if column not in frame.columns:
            continue
        lagged = pd.to_datetime(frame[column])
        late = lagged.notna() & (lagged >= dates)
        if late.any():
            problems.append(f'{int(late.sum())} rows take `{column}` on or after the target day')
    return problems


class DensityForecast(ABC):
    """
    Predictive distributions of one node and method, one entry per (date, period) for
    half-hourly forecasts or per date for daily peak forecasts.

    Arguments:

    node_id:    Node the forecast belongs to
    method:     Method name
    resolution: 'halfhourly' or 'daily'
    index:      Entry keys, a date column plus a period column for half-hourly forecasts
    skipped:    Keys of the requested timesteps that could not be forecast
    """

    support_lower = -np.inf

    def __init__(
            self,
            node_id: str,
            method: str,
            resolution: str,
            index: pd.DataFrame,
            skipped: Optional[pd.DataFrame] = None
    ) -> None:
        self.node_id = node_id
        self.method = method
        self.resolution = resolution
        self.index = index.reset_index(drop=True)
        self.skipped = skipped if skipped is not None else index.iloc[:0]

    def __len__(self) -> int:
        return len(self.index)

    @property
    def dates(self) -> np.ndarray:
        return as_dates(self.index['date'])

    @property
    def periods(self) -> np.ndarray:
        if 'period' in self.index.columns:
            return self.index['period'].to_numpy(dtype=int)
        return np.zeros(len(self.index), dtype=int)

    def _rows(self, rows: Optional[np.ndarray]) -> np.ndarray:
        return np.arange(len(self)) if rows is None else np.asarray(rows, dtype=int)

    def lookup(self, dates: Sequence, periods: Optional[Sequence] = None) -> np.ndarray:
        """ Entry row of every (date, period) key, -1 where not covered. """
        own = list(zip(self.dates, self.periods))
        position = {key: row for row, key in enumerate(own)}
        dates = as_dates(dates)
        periods = np.zeros(len(dates), dtype=int) if periods is None or self.resolution == 'daily' else np.asarray(periods, dtype=int)
        return np.array([position.get(key, -1) for key in zip(dates, periods)], dtype=int)

    @abstractmethod
    def cdf(self, y: np.ndarray, rows: Optional[np.ndarray] = None) -> np.ndarray:
        """ CDF of entry `rows[i]` at `y[i]`. """

    @abstractmethod
    def quantiles(self, levels: Sequence[float], rows: Optional[np.ndarray] = None) -> np.ndarray:
        """ (entries, levels) matrix of quantiles. """

    def quantile_table(self, levels: Sequence[float] = QUANTILE_LEVELS) -> pd.DataFrame:
        levels = np.asarray(levels, dtype=float)
        values = self.quantiles(levels)
        table = self._key_frame()
        for column, level in enumerate(levels):
            table[f'q{int(round(level * 100)):02d}'] = values[:, column]
        table.insert(0, 'method', self.method)
        return table

    def _key_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'node': self.node_id,
            'date': self.dates.astype('datetime64[ns]'),
            'period': self.periods if self.resolution == 'halfhourly' else np.nan
        })


class ParametricForecast(DensityForecast):
    """ Forecast whose entries are parameter vectors of one distribution family. """

    def __init__(
            self,
            node_id: str,
            method: str,
            resolution: str,
            index: pd.DataFrame,
            family: Union[str, DistributionFamily],
            params: Mapping[str, np.ndarray],
            skipped: Optional[pd.DataFrame] = None
    ) -> None:
        super().__init__(node_id, method, resolution, index, skipped)
        self.family = get_family(family)
        self.params: ParamVector = self.family.validate(params)
        if self.family.links[self.family.parameters[0]] == 'log':
            self.support_lower = 0.

    def cdf(self, y: np.ndarray, rows: Optional[np.ndarray] = None) -> np.ndarray:
        rows = self._rows(rows)
        return self.family.cdf(select_rows(self.params, rows), np.asarray(y, dtype=float))

    def quantiles(self, levels: Sequence[float], rows: Optional[np.ndarray] = None) -> np.ndarray:
        rows = self._rows(rows)
        levels = np.asarray(levels, dtype=float)
        params = {name: value[:, None] for name, value in select_rows(self.params, rows).items()}
        return self.family.quantile(params, levels[None, :])

    def to_frame(self) -> pd.DataFrame:
        frame = self._key_frame()
        frame['family'] = self.family.name
        for position in range(4):
            name = self.family.parameters[position] if position < len(self.family.parameters) else None
            frame[f'theta{position + 1}'] = self.params[name] if name else np.nan
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, method: str) -> ParametricForecast:
        family = get_family(str(frame['family'].iloc[0]))
        resolution = 'daily' if frame['period'].isna().all() else 'halfhourly'
        index = pd.DataFrame({'date': pd.to_datetime(frame['date'])})
        if resolution == 'halfhourly':
            index['period'] = frame['period'].to_numpy(dtype=int)
        params = {name: frame[f'theta{position + 1}'].to_numpy(dtype=float) for position, name in enumerate(family.parameters)}
        return cls(str(frame['node'].iloc[0]), method, resolution, index, family, params)


class KdeForecast(DensityForecast):
    """ Forecast whose entries read the KDE cell matching their period and day type. """

    support_lower = 0.

    def __init__(
            self,
            node_id: str,
            method: str,
            resolution: str,
            index: pd.DataFrame,
            model: KdeModel,
            keys: Sequence,
            skipped: Optional[pd.DataFrame] = None
    ) -> None:
        super().__init__(node_id, method, resolution, index, skipped)
        self.model = model
        self.keys = [tuple(key) for key in keys]

    def _grouped(self, rows: np.ndarray) -> Dict[tuple, np.ndarray]:
        """ Cell key -> positions within `rows`. """
        groups: Dict[tuple, List[int]] = {}
        for position, row in enumerate(rows):
            groups.setdefault(self.keys[row], []).append(position)
        return {key: np.asarray(positions) for key, positions in groups.items()}

    def cdf(self, y: np.ndarray, rows: Optional[np.ndarray] = None) -> np.ndarray:
        rows = self._rows(rows)
        y = np.broadcast_to(np.asarray(y, dtype=float), rows.shape)
        out = np.empty(len(rows))
        for key, positions in self._grouped(rows).items():
            out[positions] = kde_cdf(self.model, key, y[positions])
        return out

    def quantiles(self, levels: Sequence[float], rows: Optional[np.ndarray] = None) -> np.ndarray:
        rows = self._rows(rows)
        levels = np.asarray(levels, dtype=float)
        out = np.empty((len(rows), len(levels)))
        for key, positions in self._grouped(rows).items():
            out[positions] = self.model.quantile(key, levels)[None, :]
        return out


def forecast_day_ahead(
        model: Union[FittedModel, KdeModel],
        features: FeatureFrame,
        target_dates: Sequence,
        kind: Optional[str] = None,
        method: Optional[str] = None
) -> DensityForecast:
    """
    Day-ahead predictive distributions for every timestep of the target days whose lagged
    inputs are on record. Timesteps with missing lags are skipped and reported.

    Arguments:

    model:          Fitted GAMLSS or KDE benchmark
    features:       Feature frame of the node
    target_dates:   Days to forecast
    kind:           'halfhourly' or 'peak', taken from the model resolution for GAMLSS models
    method:         Method name stored on the forecast
    """
    if isinstance(model, FittedModel):
        kind = 'halfhourly' if model.spec.resolution == 'halfhourly' else 'peak'
        method = method or model.name.rsplit('-', 1)[-1]
    if kind not in KINDS:
        raise ValueError(f'Forecast kind must be one of {", ".join(KINDS)}')
    resolution, _ = KINDS[kind]
    method = method or 'kde'
    frame = training_rows(features, kind, target_dates, require_lags=False)
    key_columns = ['date', 'period'] if resolution == 'halfhourly' else ['date']
    available = frame['available'].to_numpy(dtype=bool)
    skipped = frame.loc[~available, key_columns].reset_index(drop=True)
    if len(skipped):
        logging.warning(f'{features.node_id}/{kind}-{method}: skipped {len(skipped)} timesteps with missing lags')
    frame = frame.loc[available].reset_index(drop=True)
    index = frame[key_columns].copy()

    if isinstance(model, KdeModel):
        keys = cell_keys(model.conditioning, frame)
        return KdeForecast(features.node_id, method, resolution, index, model, keys, skipped)

    problems = audit_causality(model.spec, frame)
    if problems:
        raise DatasetError(f'{model.name}: ' + '; '.join(problems))
    params = predict(model, frame)
    return ParametricForecast(
        features.node_id, method, resolution, index, model.family,
        {name: params[name].to_numpy() for name in params.columns}, skipped
    )


def observations(forecast: DensityForecast, features: FeatureFrame) -> np.ndarray:
    """ Observed load of every forecast entry, NaN where the day is not on record. """
    if forecast.resolution == 'halfhourly':
        frame = features.halfhourly
        lookup = pd.Series(
            frame['y'].to_numpy(dtype=float),
            index=pd.MultiIndex.from_arrays([as_dates(frame['date']), frame['period'].to_numpy(dtype=int)])
        )
        keys = pd.MultiIndex.from_arrays([forecast.dates, forecast.periods])
    else:
        frame = features.daily
        lookup = pd.Series(frame['peak'].to_numpy(dtype=float), index=as_dates(frame['date']))
        keys = forecast.dates
    return lookup.reindex(keys).to_numpy(dtype=float)


def coefficient_of_variation(features: FeatureFrame) -> float:
    load = features.halfhourly['y'].to_numpy(dtype=float)
    mean = float(np.mean(load))
    return float(np.std(load) / mean) if mean > 0 else float('nan')
