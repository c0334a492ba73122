#!/usr/bin/env python
# -*- coding: utf-8 -*-
from __future__ import annotations

import json
import logging
import pathlib
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from .constants import BOOTSTRAP_RESAMPLES, CRPS_LEVELS, PERIODS_PER_DAY, PIT_BINS
from .dataset import DailyPeakSeries
from .forecasters import DensityForecast, ParametricForecast
from .timing import TimingPmf
from .utils import DomainError

SCORE_COLUMNS = ['node', 'level', 'kind', 'method', 'partition', 'date', 'period', 'score']


def crps_gaussian(mu: np.ndarray, sigma: np.ndarray, y: np.ndarray) -> np.ndarray:
    """ Closed form sigma * [z (2 Phi(z) - 1) + 2 phi(z) - 1 / sqrt(pi)] with z = (y - mu) / sigma. """
    mu, sigma, y = np.broadcast_arrays(*(np.asarray(value, dtype=float) for value in (mu, sigma, y)))
    if not (np.isfinite(mu).all() and np.isfinite(sigma).all() and np.isfinite(y).all()):
        raise DomainError('CRPS needs finite parameters and observations')
    if (sigma <= 0).any():
        raise DomainError('Gaussian scale must be strictly positive')
    z = (y - mu) / sigma
    return sigma * (z * (2. * stats.norm.cdf(z) - 1.) + 2. * stats.norm.pdf(z) - 1. / np.sqrt(np.pi))


def crps_levels(n_levels: int = CRPS_LEVELS) -> np.ndarray:
    """ Midpoint levels (k - 0.5) / K, k = 1..K. """
    return (np.arange(1, n_levels + 1) - 0.5) / n_levels


def pinball_loss(quantiles: np.ndarray, y: np.ndarray, levels: np.ndarray) -> np.ndarray:
    quantiles = np.asarray(quantiles, dtype=float)
    y = np.asarray(y, dtype=float)[:, None]
    levels = np.asarray(levels, dtype=float)[None, :]
    return ((y < quantiles).astype(float) - levels) * (quantiles - y)


def crps_quantile(quantiles: np.ndarray, y: np.ndarray, levels: Optional[np.ndarray] = None) -> np.ndarray:
    """
    CRPS as twice the mean pinball loss over the quantile levels.

    Arguments:

    quantiles:  (timesteps, levels) forecast quantiles
    y:          Observation per timestep
    levels:     Quantile levels, midpoint levels of the same count when None
    """
    quantiles = np.atleast_2d(np.asarray(quantiles, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if levels is None:
        levels = crps_levels(quantiles.shape[1])
    if not (np.isfinite(quantiles).all() and np.isfinite(y).all()):
        raise DomainError('CRPS needs finite quantiles and observations')
    return 2. * pinball_loss(quantiles, y, levels).mean(axis=1)


def crps(
        forecast: DensityForecast,
        y: np.ndarray,
        rows: Optional[np.ndarray] = None,
        n_levels: int = CRPS_LEVELS,
        chunk: int = 2048
) -> np.ndarray:
    """
    CRPS of every forecast entry. Gaussian forecasts use the closed form, every other forecast
    the quantile decomposition with `n_levels` midpoint levels, evaluated in chunks of entries.
    """
    rows = np.arange(len(forecast)) if rows is None else np.asarray(rows, dtype=int)
    y = np.asarray(y, dtype=float)
    if not np.isfinite(y).all():
        raise DomainError('CRPS needs finite observations')
    if isinstance(forecast, ParametricForecast) and forecast.family.name == 'Gaussian':
        return crps_gaussian(forecast.params['mu'][rows], forecast.params['sigma'][rows], y)
    levels = crps_levels(n_levels)
    scores = np.empty(len(rows))
    for start in range(0, len(rows), chunk):
        stop = min(start + chunk, len(rows))
        quantiles = forecast.quantiles(levels, rows[start:stop])
        scores[start:stop] = crps_quantile(quantiles, y[start:stop], levels)
    return scores


def rps(probabilities: np.ndarray, observed: np.ndarray) -> np.ndarray:
    """
    Ranked probability score sum_h (F(h) - 1{h >= h_obs})^2 per day.

    Arguments:

    probabilities:  (days, categories) pmf, or a single pmf
    observed:       Observed category per day, counted from 1
    """
    probabilities = np.atleast_2d(np.asarray(probabilities, dtype=float))
    observed = np.atleast_1d(np.asarray(observed, dtype=int))
    n_categories = probabilities.shape[1]
    if ((observed < 1) | (observed > n_categories)).any():
        raise DomainError(f'Observed categories must lie in 1..{n_categories}')
    cumulative = np.cumsum(probabilities, axis=1)
    steps = (np.arange(1, n_categories + 1)[None, :] >= observed[:, None]).astype(float)
    return ((cumulative - steps) ** 2).sum(axis=1)


def timing_rps(pmf: TimingPmf, peaks: DailyPeakSeries) -> pd.DataFrame:
    rows = pmf.rows(peaks.dates)
    found = rows >= 0
    scores = rps(pmf.probabilities[rows[found]], peaks.timing[found])
    return pd.DataFrame({'date': peaks.dates[found].astype('datetime64[ns]'), 'score': scores})


def pit_values(forecast: DensityForecast, y: np.ndarray, rows: Optional[np.ndarray] = None) -> np.ndarray:
    return np.clip(forecast.cdf(np.asarray(y, dtype=float), rows), 0., 1.)


def pit_histogram(values: np.ndarray, bins: int = PIT_BINS) -> np.ndarray:
    counts, _ = np.histogram(np.asarray(values, dtype=float), bins=bins, range=(0., 1.))
    return counts


def pit(
        forecast: DensityForecast,
        y: np.ndarray,
        bins: int = PIT_BINS,
        rows: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """ PIT values F(y_t) and their histogram over `bins` equal bins of [0, 1]. """
    values = pit_values(forecast, y, rows)
    return values, pit_histogram(values, bins)


def skill(mean_score: float, mean_reference: float) -> float:
    """ 1 - S / S_ref for a score whose perfect value is zero. """
    if not mean_reference > 0:
        raise ValueError(f'Skill needs a positive reference score, got {mean_reference}')
    return 1. - float(mean_score) / float(mean_reference)


def bootstrap_skill(
        scores: np.ndarray,
        reference_scores: np.ndarray,
        n_resamples: int = BOOTSTRAP_RESAMPLES,
        seed: int = 0
) -> np.ndarray:
    """
    Skill of the resampled means. Target times are drawn with replacement and the same
    indices are applied to both score vectors.
    """
    scores = np.asarray(scores, dtype=float)
    reference_scores = np.asarray(reference_scores, dtype=float)
    if scores.shape != reference_scores.shape:
        raise ValueError('Bootstrap needs aligned score vectors')
    rng = np.random.default_rng(seed)
    indices = rng.integers(0, len(scores), size=(n_resamples, len(scores)))
    means = scores[indices].mean(axis=1)
    reference_means = reference_scores[indices].mean(axis=1)
    with np.errstate(divide='ignore', invalid='ignore'):
        return np.where(reference_means > 0, 1. - means / reference_means, np.nan)


def peak_subset(scores: pd.DataFrame, peaks: DailyPeakSeries) -> pd.DataFrame:
    """ Rows of a per-timestep score table at the observed peak period of their day. """
    timing = pd.Series(peaks.timing, index=pd.DatetimeIndex(peaks.dates.astype('datetime64[ns]')))
    observed = timing.reindex(pd.DatetimeIndex(pd.to_datetime(scores['date']))).to_numpy()
    keep = scores['period'].to_numpy(dtype=float) == observed
    return scores.loc[keep].reset_index(drop=True)


def score_frame(
        forecast: DensityForecast,
        y: np.ndarray,
        level: str,
        kind: str,
        partition: str,
        n_levels: int = CRPS_LEVELS
) -> pd.DataFrame:
    """ Per-timestep CRPS table of one forecast; entries without an observation are dropped. """
    y = np.asarray(y, dtype=float)
    rows = np.flatnonzero(np.isfinite(y))
    if len(rows) < len(y):
        logging.info(f'{forecast.node_id}/{forecast.method}: {len(y) - len(rows)} entries without observation')
    return pd.DataFrame({
        'node': forecast.node_id,
        'level': level,
        'kind': kind,
        'method': forecast.method,
        'partition': partition,
        'date': forecast.dates[rows].astype('datetime64[ns]'),
        'period': forecast.periods[rows] if forecast.resolution == 'halfhourly' else 0,
        'score': crps(forecast, y[rows], rows, n_levels)
    }, columns=SCORE_COLUMNS)


class ScoreReport(object):
    """
    Per-timestep scores of every (node, method, partition) with the 'all' and 'peaks' subsets,
    their means and bootstrap skill distributions.

    Arguments:

    scores:     Long table with SCORE_COLUMNS plus a `subset` column
    bootstrap:  Comparison label -> resampled skill values
    """

    def __init__(self, scores: pd.DataFrame, bootstrap: Optional[Dict[str, np.ndarray]] = None) -> None:
        self.scores = scores.reset_index(drop=True)
        self.bootstrap = {key: np.asarray(value, dtype=float) for key, value in (bootstrap or {}).items()}

    @classmethod
    def from_scores(cls, frames: Sequence[pd.DataFrame], peaks: Dict[str, DailyPeakSeries]) -> ScoreReport:
        """ Build the report from per-timestep tables, deriving the peaks-only subset of half-hourly scores. """
        parts = []
        for frame in frames:
            if frame.empty:
                continue
            parts.append(frame.assign(subset='all'))
            if (frame['kind'] == 'halfhourly').all():
                node = str(frame['node'].iloc[0])
                parts.append(peak_subset(frame, peaks[node]).assign(subset='peaks'))
        if not parts:
            return cls(pd.DataFrame(columns=SCORE_COLUMNS + ['subset']))
        return cls(pd.concat(parts, ignore_index=True))

    def means(self, by: Sequence[str] = ('node', 'level', 'kind', 'method', 'subset', 'partition')) -> pd.DataFrame:
        return self.scores.groupby(list(by), sort=True)['score'].mean().reset_index(name='mean')

    def select(self, **criteria: Any) -> pd.DataFrame:
        keep = np.ones(len(self.scores), dtype=bool)
        for column, value in criteria.items():
            keep &= (self.scores[column] == value).to_numpy()
        return self.scores.loc[keep]

    def paired(self, reference: str, method: str, **criteria: Any) -> Tuple[np.ndarray, np.ndarray]:
        """ Score vectors of two methods aligned on (node, date, period). """
        keys = ['node', 'date', 'period']
        first = self.select(method=method, **criteria)[keys + ['score']]
        second = self.select(method=reference, **criteria)[keys + ['score']]
        merged = first.merge(second, on=keys, suffixes=('', '_reference'))
        return merged['score'].to_numpy(), merged['score_reference'].to_numpy()

    def add_bootstrap(
            self,
            label: str,
            reference: str,
            method: str,
            n_resamples: int = BOOTSTRAP_RESAMPLES,
            seed: int = 0,
            **criteria: Any
    ) -> np.ndarray:
        scores, reference_scores = self.paired(reference, method, **criteria)
        if len(scores) == 0:
            logging.warning(f'No paired scores for bootstrap `{label}`')
            self.bootstrap[label] = np.array([])
        else:
            self.bootstrap[label] = bootstrap_skill(scores, reference_scores, n_resamples, seed)
        return self.bootstrap[label]

    def summary(self) -> List[Dict[str, Any]]:
        rows = []
        for record in self.means().to_dict('records'):
            rows.append({key: (value if not isinstance(value, np.generic) else value.item()) for key, value in record.items()})
        for label, values in self.bootstrap.items():
            finite = values[np.isfinite(values)]
            rows.append({
                'bootstrap': label,
                'n': int(len(values)),
                'q025': float(np.quantile(finite, 0.025)) if len(finite) else None,
                'q500': float(np.quantile(finite, 0.5)) if len(finite) else None,
                'q975': float(np.quantile(finite, 0.975)) if len(finite) else None
            })
        return rows

    def save(self, directory: Union[str, pathlib.Path]) -> None:
        directory = pathlib.Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.scores.to_csv(directory / 'scores.csv', index=False, date_format='%Y-%m-%d')
        with open(directory / 'summary.json', 'w') as fp:
            json.dump(self.summary(), fp, indent=2)
        bootstrap = pd.DataFrame(
            [(label, index, value) for label, values in self.bootstrap.items() for index, value in enumerate(values)],
            columns=['comparison', 'resample', 'skill']
        )
        bootstrap.to_csv(directory / 'bootstrap.csv', index=False)

    @classmethod
    def load(cls, directory: Union[str, pathlib.Path]) -> ScoreReport:
        directory = pathlib.Path(directory)
        scores = pd.read_csv(directory / 'scores.csv', parse_dates=['date'])
        bootstrap: Dict[str, np.ndarray] = {}
        path = directory / 'bootstrap.csv'
        if path.exists():
            table = pd.read_csv(path)
            bootstrap = {label: group.sort_values('resample')['skill'].to_numpy() for label, group in table.groupby('comparison')}
        return cls(scores, bootstrap)


def level_summary(report: ScoreReport, partition: str = 'test') -> pd.DataFrame:
    """
    Mean half-hourly CRPS per level, subset and method, averaged over nodes, with the skill of
    fusion relative to the full model.
    """
    scores = report.select(kind='halfhourly', partition=partition)
    node_means = scores.groupby(['level', 'subset', 'method', 'node'])['score'].mean().reset_index()
    table = node_means.groupby(['level', 'subset', 'method'])['score'].mean().unstack('method')
    if 'fusion' in table.columns and 'full' in table.columns:
        table['fusion_skill'] = 1. - table['fusion'] / table['full']
    return table.reset_index()


def skill_table(report: ScoreReport, references: Dict[str, Dict[str, str]], partition: str = 'test') -> pd.DataFrame:
    """ Per-node skill of every method relative to the reference method of its level group and kind. """
    means = report.means()
    means = means[means['partition'] == partition]
    rows = []
    for (node, level, kind, subset), group in means.groupby(['node', 'level', 'kind', 'subset']):
        group_name = 'household' if level == 'household' else 'aggregated'
        reference = references[group_name].get(kind)
        scores = dict(zip(group['method'], group['mean']))
        if reference not in scores or not scores[reference] > 0:
            continue
        for method, value in scores.items():
            rows.append((node, level, kind, subset, method, reference, skill(value, scores[reference])))
    return pd.DataFrame(rows, columns=['node', 'level', 'kind', 'subset', 'method', 'reference', 'skill'])


def level_pit(frames: Sequence[pd.DataFrame], bins: int = PIT_BINS) -> pd.DataFrame:
    """ Histogram of PIT values pooled within each (level, method). """
    pit_frame = pd.concat(frames, ignore_index=True)
    rows = []
    for (level, method), group in pit_frame.groupby(['level', 'method']):
        for position, count in enumerate(pit_histogram(group['pit'].to_numpy(), bins)):
            rows.append((level, method, position + 1, int(count)))
    return pd.DataFrame(rows, columns=['level', 'method', 'bin', 'count'])


def pit_uniformity(counts: np.ndarray) -> float:
    """ Chi-square p-value of PIT histogram counts against a flat histogram. """
    return float(stats.chisquare(np.asarray(counts, dtype=float)).pvalue)


def hourly_profile(report: ScoreReport, partition: str = 'test') -> pd.DataFrame:
    """ Mean half-hourly CRPS by period per level and method. """
    scores = report.select(kind='halfhourly', partition=partition, subset='all')
    table = scores.groupby(['level', 'method', 'period'])['score'].mean().reset_index()
    return table[table['period'].between(1, PERIODS_PER_DAY)]