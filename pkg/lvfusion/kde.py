#!/usr/bin/env python
# -*- coding: utf-8 -*-
from __future__ import annotations

import logging
from typing import Any, Callable, Dict, Hashable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from .constants import DAY_TYPES_2, DAY_TYPES_3, KDE_BANDWIDTH_FLOOR, PERIODS_PER_DAY
from .utils import DomainError, FitError, invert_monotone

CONDITIONINGS = ('none', 'by_period', 'by_period_and_daytype3', 'by_daytype2')

CellKey = Tuple[Hashable, ...]


def expected_cells(conditioning: str) -> List[CellKey]:
    periods = range(1, PERIODS_PER_DAY + 1)
    if conditioning == 'none':
        return [('all',)]
    if conditioning == 'by_period':
        return [(period,) for period in periods]
    if conditioning == 'by_period_and_daytype3':
        return [(period, day_type) for period in periods for day_type in DAY_TYPES_3]
    if conditioning == 'by_daytype2':
        return [(day_type,) for day_type in DAY_TYPES_2]
    raise ValueError(f'Unknown KDE conditioning `{conditioning}`, choose from {", ".join(CONDITIONINGS)}')


def cell_keys(conditioning: str, frame: pd.DataFrame) -> List[CellKey]:
    """ Cell of every row of a feature frame. """
    if conditioning == 'none':
        return [('all',)] * len(frame)
    if conditioning == 'by_period':
        return [(int(period),) for period in frame['period']]
    if conditioning == 'by_period_and_daytype3':
        return [(int(period), day_type) for period, day_type in zip(frame['period'], frame['daytype3'])]
    if conditioning == 'by_daytype2':
        return [(day_type,) for day_type in frame['daytype2']]
    raise ValueError(f'Unknown KDE conditioning `{conditioning}`, choose from {", ".join(CONDITIONINGS)}')


def silverman_bandwidth(samples: np.ndarray, floor: float = KDE_BANDWIDTH_FLOOR) -> float:
    samples = np.asarray(samples, dtype=float)
    if len(samples) < 2:
        return floor
    spread = float(np.std(samples, ddof=1))
    iqr = float(np.subtract(*np.percentile(samples, [75, 25]))) / 1.34
    if iqr > 0:
        spread = min(spread, iqr)
    return max(0.9 * spread * len(samples) ** -0.2, floor)


class KdeModel(object):
    """
    Zero-truncated Gaussian kernel density per conditioning cell.

    Each kernel N(y_i, h) is cut at zero and renormalized by 1 / Phi(y_i / h), so no mass lies
    below zero. Cells without training samples use the pooled samples of all cells.

    Arguments:

    conditioning:   'none', 'by_period', 'by_period_and_daytype3' or 'by_daytype2'
    cells:          Cell key -> training samples (kWh)
    bandwidths:     Cell key -> kernel bandwidth (kWh)
    pooled_cells:   Cells that fell back to the pooled samples
    """

    def __init__(
            self,
            conditioning: str,
            cells: Dict[CellKey, np.ndarray],
            bandwidths: Dict[CellKey, float],
            pooled_cells: Optional[List[CellKey]] = None
    ) -> None:
        self.conditioning = conditioning
        self.cells = {key: np.asarray(samples, dtype=float) for key, samples in cells.items()}
        self.bandwidths = dict(bandwidths)
        self.pooled_cells = list(pooled_cells or [])
        self._quantile_cache: Dict[Tuple[CellKey, Tuple[float, ...]], np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.cells)

    def cell(self, key: CellKey) -> Tuple[np.ndarray, float]:
        key = tuple(key)
        if key not in self.cells:
            raise DomainError(f'Unknown KDE cell {key} for conditioning `{self.conditioning}`')
        return self.cells[key], self.bandwidths[key]

    def cdf(self, key: CellKey, y: np.ndarray) -> np.ndarray:
        samples, bandwidth = self.cell(key)
        y = np.asarray(y, dtype=float)
        flat = np.clip(y.ravel(), 0., None)
        mass = stats.norm.cdf(samples / bandwidth)
        below = stats.norm.cdf(-samples / bandwidth)
        inside = stats.norm.cdf((flat[:, None] - samples[None, :]) / bandwidth) - below[None, :]
        value = np.mean(np.clip(inside / mass[None, :], 0., 1.), axis=1)
        return np.where(y.ravel() < 0, 0., value).reshape(y.shape)

    def pdf(self, key: CellKey, y: np.ndarray) -> np.ndarray:
        samples, bandwidth = self.cell(key)
        y = np.asarray(y, dtype=float)
        flat = y.ravel()
        mass = stats.norm.cdf(samples / bandwidth)
        kernels = stats.norm.pdf((flat[:, None] - samples[None, :]) / bandwidth) / (bandwidth * mass[None, :])
        value = np.mean(kernels, axis=1)
        return np.where(flat < 0, 0., value).reshape(y.shape)

    def quantile(self, key: CellKey, levels: Sequence[float]) -> np.ndarray:
        levels = np.asarray(levels, dtype=float)
        if not ((levels > 0) & (levels < 1)).all():
            raise DomainError('Quantile levels must lie strictly inside (0, 1)')
        cache_key = (tuple(key), tuple(levels.ravel().tolist()))
        if cache_key not in self._quantile_cache:
            samples, bandwidth = self.cell(key)
            upper = float(samples.max()) + 10. * bandwidth
            self._quantile_cache[cache_key] = invert_monotone(
                lambda x, idx: self.cdf(key, x), levels.ravel(), 0., upper, floor=0.
            )
        return self._quantile_cache[cache_key].reshape(levels.shape)

    def random(self, key: CellKey, size: int, rng: np.random.Generator) -> np.ndarray:
        samples, bandwidth = self.cell(key)
        centres = samples[rng.integers(0, len(samples), size=size)]
        return stats.truncnorm.rvs(-centres / bandwidth, np.inf, loc=centres, scale=bandwidth, random_state=rng)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'conditioning': self.conditioning,
            'cells': [
                {'key': list(key), 'samples': self.cells[key].tolist(), 'bandwidth': self.bandwidths[key]}
                for key in self.cells
            ],
            'pooled_cells': [list(key) for key in self.pooled_cells]
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> KdeModel:
        cells = {tuple(cell['key']): np.asarray(cell['samples']) for cell in data['cells']}
        bandwidths = {tuple(cell['key']): float(cell['bandwidth']) for cell in data['cells']}
        return cls(data['conditioning'], cells, bandwidths, [tuple(key) for key in data.get('pooled_cells', [])])


def fit_kde(
        samples: Mapping[CellKey, Sequence[float]],
        conditioning: str = 'none',
        bandwidth_rule: Callable[[np.ndarray], float] = silverman_bandwidth
) -> KdeModel:
    """
    Build a KDE with one cell per conditioning level.

    Arguments:

    samples:        Cell key -> training values, missing or empty cells use the pooled values
    conditioning:   Which cells are expected, see `expected_cells`
    bandwidth_rule: Callable giving the bandwidth of a sample array
    """
    expected = expected_cells(conditioning)
    given = {tuple(key): np.asarray(values, dtype=float) for key, values in samples.items()}
    unknown = [key for key in given if key not in expected]
    if unknown:
        raise DomainError(f'Cells {unknown[:5]} do not belong to conditioning `{conditioning}`')
    filled = [values for values in given.values() if len(values)]
    if not filled:
        raise FitError('KDE training samples are empty in every cell')
    pooled = np.concatenate(filled)
    pooled_bandwidth = bandwidth_rule(pooled)
    cells: Dict[CellKey, np.ndarray] = {}
    bandwidths: Dict[CellKey, float] = {}
    pooled_cells = []
    for key in expected:
        values = given.get(key)
        if values is None or len(values) == 0:
            cells[key] = pooled
            bandwidths[key] = pooled_bandwidth
            pooled_cells.append(key)
        else:
            cells[key] = values
            bandwidths[key] = bandwidth_rule(values)
    if pooled_cells:
        logging.info(f'KDE ({conditioning}): {len(pooled_cells)} empty cells use the pooled samples')
    return KdeModel(conditioning, cells, bandwidths, pooled_cells)


def fit_kde_frame(frame: pd.DataFrame, conditioning: str, target: str = 'y') -> KdeModel:
    keys = cell_keys(conditioning, frame)
    values = frame[target].to_numpy(dtype=float)
    samples: Dict[CellKey, List[float]] = {}
    for key, value in zip(keys, values):
        samples.setdefault(key, []).append(value)
    return fit_kde(samples, conditioning)


def kde_cdf(model: KdeModel, key: CellKey, y: np.ndarray) -> np.ndarray:
    """ Predictive CDF of the cell `key` at `y`, pooled samples for cells without training data. """
    return model.cdf(key, y)
