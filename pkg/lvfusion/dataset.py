#!/usr/bin/env python
# -*- coding: utf-8 -*-
from __future__ import annotations

import datetime
import json
import logging
import pathlib
from typing import Any, Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import tzlocal

from .constants import DAY_TYPES_2, DAY_TYPES_3, DEFAULT_SCHEMA, EMPTY_HOUSE, HIERARCHY_LIMITS, \
    MODEL_FORMAT_VERSION, NODE_PREFIXES, PERIODS_PER_DAY, VARIABLE_TARIFF_VALUES
from .utils import DatasetError, run_lengths

ONE_DAY = np.timedelta64(1, 'D')


def resolve_timezone(timezone: Optional[str] = None) -> str:
    if timezone:
        return timezone
    return str(tzlocal.get_localzone())


def as_dates(values: Iterable) -> np.ndarray:
    if not hasattr(values, '__len__'):
        values = list(values)
    return pd.DatetimeIndex(pd.to_datetime(values)).normalize().values.astype('datetime64[D]')


class LoadSeries(object):
    """
    Half-hourly energy of one node, one row per retained day and one column per period.

    Arguments:

    node_id:            Meter id or synthesized node id
    dates:              Calendar dates of the retained days
    energy:             (days, 48) array of kWh values, finite and non-negative
    variable_tariff:    True when the meter was flagged as variable-price, None when unknown
    """

    def __init__(
            self,
            node_id: str,
            dates: Union[Sequence, np.ndarray],
            energy: np.ndarray,
            variable_tariff: Optional[bool] = None
    ) -> None:
        dates = np.asarray(dates).astype('datetime64[D]')
        energy = np.array(energy, dtype=float).reshape(len(dates), PERIODS_PER_DAY)
        if not np.isfinite(energy).all() or (energy < 0).any():
            raise DatasetError(f'Series `{node_id}` has non-finite or negative energy values')
        order = np.argsort(dates, kind='stable')
        dates = dates[order]
        if len(dates) > 1 and (np.diff(dates) <= np.timedelta64(0, 'D')).any():
            raise DatasetError(f'Series `{node_id}` repeats a calendar date')
        energy = energy[order]
        energy.setflags(write=False)
        dates.setflags(write=False)
        self.node_id = node_id
        self.dates = dates
        self.energy = energy
        self.variable_tariff = variable_tariff

    def __len__(self) -> int:
        return len(self.dates)

    def __repr__(self) -> str:
        return f'LoadSeries({self.node_id!r}, days={len(self.dates)})'

    def records(self) -> List[Tuple[datetime.date, int, float]]:
        return [
            (day.astype(datetime.date), period + 1, float(self.energy[row, period]))
            for row, day in enumerate(self.dates)
            for period in range(PERIODS_PER_DAY)
        ]

    def restrict(self, dates: np.ndarray) -> LoadSeries:
        keep = np.isin(self.dates, as_dates(dates))
        return LoadSeries(self.node_id, self.dates[keep], self.energy[keep], self.variable_tariff)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'node': self.node_id,
            'date': np.repeat(self.dates, PERIODS_PER_DAY).astype('datetime64[ns]'),
            'period': np.tile(np.arange(1, PERIODS_PER_DAY + 1), len(self.dates)),
            'energy': self.energy.ravel()
        })

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, node_id: Optional[str] = None) -> LoadSeries:
        if node_id is None:
            node_id = str(frame['node'].iloc[0])
        table = frame.pivot(index='date', columns='period', values='energy')
        table = table.reindex(columns=range(1, PERIODS_PER_DAY + 1))
        return cls(node_id, as_dates(table.index), table.to_numpy())


class RowError(NamedTuple):
    line: int
    meter_id: Optional[str]
    reason: str


class IngestReport(object):
    """
    Result of reading a smart meter CSV: one LoadSeries per meter plus the rows and days left behind.
    """

    def __init__(
            self,
            series: Dict[str, LoadSeries],
            errors: List[RowError],
            dropped_days: Dict[str, int],
            transition_days: List[datetime.date]
    ) -> None:
        self.series = series
        self.errors = errors
        self.dropped_days = dropped_days
        self.transition_days = transition_days

    def summary(self) -> Dict[str, Any]:
        return {
            'meters': len(self.series),
            'row_errors': len(self.errors),
            'dropped_days': int(sum(self.dropped_days.values())),
            'transition_days': [str(day) for day in self.transition_days]
        }


def clock_change_days(dates: Iterable, timezone: str) -> np.ndarray:
    """ Return the dates among `dates` whose local day is not 24 hours long. """
    days = pd.DatetimeIndex(np.unique(as_dates(dates)).astype('datetime64[ns]'))
    if len(days) == 0:
        return np.array([], dtype='datetime64[D]')
    start = days.tz_localize(timezone, ambiguous='NaT', nonexistent='NaT')
    end = (days + pd.Timedelta(days=1)).tz_localize(timezone, ambiguous='NaT', nonexistent='NaT')
    transition = ~np.asarray((end - start) == pd.Timedelta(hours=24))
    return days[transition].values.astype('datetime64[D]')


def ingest_csv(
        path: Union[str, pathlib.Path],
        schema: Optional[Mapping[str, str]] = None,
        timezone: Optional[str] = None,
        variable_tariff_values: Optional[Sequence[str]] = None
) -> IngestReport:
    """
    Read a half-hourly smart meter export into one LoadSeries per meter.

    Record-level problems (unparseable timestamp or energy, negative values, timestamps off the
    half-hour grid, repeated (meter, timestamp) pairs) are collected in the report. Days without
    all 48 periods and local clock-change days are dropped whole.

    Arguments:

    path:                   CSV file to read
    schema:                 Column map with keys meter_id, timestamp, energy and optionally tariff
    timezone:               Local clock timezone, tz-aware timestamps are converted to it
    variable_tariff_values: Tariff column values marking a meter as variable-price
    """
    schema = dict(schema or DEFAULT_SCHEMA)
    timezone = resolve_timezone(timezone)
    variable_tariff_values = set(variable_tariff_values or VARIABLE_TARIFF_VALUES)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise DatasetError(f'`{path}` is empty')
    missing = [schema[key] for key in ('meter_id', 'timestamp', 'energy') if schema[key] not in frame.columns]
    if missing:
        raise DatasetError(f'`{path}` is missing columns: {", ".join(missing)}')
    if frame.empty:
        raise DatasetError(f'`{path}` has a header but no rows')

    # Line 1 is the header
    lines = np.arange(len(frame)) + 2
    meters = frame[schema['meter_id']].str.strip()
    raw_stamps = frame[schema['timestamp']].str.strip()
    try:
        stamps = pd.to_datetime(raw_stamps, errors='coerce', format='ISO8601')
    except ValueError:
        # Mixed UTC offsets
        stamps = pd.to_datetime(raw_stamps, errors='coerce', format='ISO8601', utc=True)
    if isinstance(stamps.dtype, pd.DatetimeTZDtype):
        stamps = stamps.dt.tz_convert(timezone).dt.tz_localize(None)
    energy = pd.to_numeric(frame[schema['energy']].str.strip(), errors='coerce')

    reasons = pd.Series('', index=frame.index)
    reasons[meters == ''] = 'missing meter id'
    reasons[(reasons == '') & stamps.isna()] = 'unparseable timestamp'
    reasons[(reasons == '') & energy.isna()] = 'unparseable energy'
    reasons[(reasons == '') & ~np.isfinite(energy.fillna(0.))] = 'non-finite energy'
    reasons[(reasons == '') & (energy < 0)] = 'negative energy'
    off_grid = stamps.notna() & (
        ~stamps.dt.minute.isin([0, 30]) | (stamps.dt.second != 0) | (stamps.dt.microsecond != 0)
    )
    reasons[(reasons == '') & off_grid] = 'timestamp not on a half-hour boundary'

    records = pd.DataFrame({
        'line': lines,
        'meter': meters,
        'stamp': stamps,
        'energy': energy
    })
    valid = records[reasons == ''].copy()
    valid['date'] = valid['stamp'].dt.normalize()
    valid['period'] = valid['stamp'].dt.hour * 2 + valid['stamp'].dt.minute // 30 + 1

    transitions = clock_change_days(valid['date'], timezone)
    on_transition = valid['date'].values.astype('datetime64[D]')
    on_transition = np.isin(on_transition, transitions)
    if on_transition.any():
        logging.info(f'Dropping {len(transitions)} clock-change days ({int(on_transition.sum())} rows)')
    valid = valid[~on_transition]

    duplicated = valid.duplicated(subset=['meter', 'stamp'], keep='first')
    reasons.loc[valid.index[duplicated.to_numpy()]] = 'duplicate meter and timestamp'
    valid = valid[~duplicated]

    errors = [
        RowError(int(lines[idx]), meters.iloc[idx] or None, reasons.iloc[idx])
        for idx in np.flatnonzero((reasons != '').to_numpy())
    ]
    if errors:
        logging.warning(f'Rejected {len(errors)} rows of `{path}`')
        for error in errors:
            logging.debug(f'Rejected line {error.line} ({error.meter_id}): {error.reason}')

    tariff_column = schema.get('tariff')
    variable_meters = set()
    has_tariff = bool(tariff_column) and tariff_column in frame.columns
    if has_tariff:
        flagged = frame[tariff_column].str.strip().isin(variable_tariff_values)
        variable_meters = set(meters[flagged])

    series: Dict[str, LoadSeries] = {}
    dropped_days: Dict[str, int] = {}
    for meter_id, group in valid.groupby('meter', sort=True):
        table = group.pivot(index='date', columns='period', values='energy')
        table = table.reindex(columns=range(1, PERIODS_PER_DAY + 1))
        complete = table.notna().all(axis=1).to_numpy()
        dropped_days[meter_id] = int((~complete).sum())
        if dropped_days[meter_id]:
            logging.debug(f'Meter {meter_id}: dropped {dropped_days[meter_id]} incomplete days')
        table = table[complete]
        series[meter_id] = LoadSeries(
            meter_id,
            table.index.values.astype('datetime64[D]'),
            table.to_numpy(),
            variable_tariff=(meter_id in variable_meters) if has_tariff else None
        )
    if sum(dropped_days.values()):
        logging.info(f'Dropped {sum(dropped_days.values())} incomplete meter-days')
    logging.info(f'Ingested {len(series)} meters from `{path}`')
    return IngestReport(series, errors, dropped_days, [day.astype(datetime.date) for day in transitions])


def expected_days(year: int, timezone: Optional[str] = None) -> np.ndarray:
    days = np.arange(np.datetime64(f'{year}-01-01'), np.datetime64(f'{year + 1}-01-01'), ONE_DAY)
    transitions = clock_change_days(days, resolve_timezone(timezone))
    return days[~np.isin(days, transitions)]


def clean(
        series: Union[Mapping[str, LoadSeries], Iterable[LoadSeries]],
        year: int,
        timezone: Optional[str] = None
) -> Dict[str, LoadSeries]:
    """
    Keep meters with every expected day of `year` on record and a fixed tariff, trimmed to that year.
    """
    if isinstance(series, Mapping):
        series = list(series.values())
    required = expected_days(year, timezone)
    retained: Dict[str, LoadSeries] = {}
    incomplete = 0
    variable = 0
    for item in sorted(series, key=lambda s: s.node_id):
        if item.variable_tariff:
            variable += 1
            continue
        if not np.isin(required, item.dates).all():
            incomplete += 1
            continue
        retained[item.node_id] = item.restrict(required)
    logging.info(
        f'Cleaning for {year}: retained {len(retained)} meters, removed {incomplete} incomplete and '
        f'{variable} variable-tariff meters'
    )
    if not retained:
        logging.warning(f'No meter has a complete record for {year}')
    return retained


def aggregate(node_id: str, members: Sequence[LoadSeries]) -> LoadSeries:
    """ Exact elementwise sum of member series over the dates they all share. """
    if not members:
        raise DatasetError(f'Node `{node_id}` has no members')
    common = members[0].dates
    for member in members[1:]:
        common = np.intersect1d(common, member.dates)
    total = np.zeros((len(common), PERIODS_PER_DAY))
    for member in members:
        total += member.energy[np.isin(member.dates, common)]
    return LoadSeries(node_id, common, total)


def _sample_group_sizes(total: int, low: int, high: int, rng: np.random.Generator) -> List[int]:
    sizes = []
    remaining = total
    while remaining > 0:
        if remaining <= high:
            sizes.append(remaining)
            break
        upper = min(high, remaining - low)
        if upper < low:
            logging.warning(f'Cannot split {remaining} items into groups of {low}-{high}, keeping one group')
            sizes.append(remaining)
            break
        size = int(rng.integers(low, upper + 1))
        sizes.append(size)
        remaining -= size
    return sizes


class NetworkHierarchy(object):
    """
    Hypothetical LV network: one primary, secondaries, feeders and households, each with its series.

    Arguments:

    parents:    Node id -> parent node id (None for the primary)
    levels:     Node id -> level name
    series:     Node id -> LoadSeries, aggregates are member sums
    seed:       Seed used to sample the network
    limits:     Group size limits used while sampling
    """

    def __init__(
            self,
            parents: Dict[str, Optional[str]],
            levels: Dict[str, str],
            series: Dict[str, LoadSeries],
            seed: int,
            limits: Optional[Dict[str, Sequence[int]]] = None
    ) -> None:
        self.parents = dict(parents)
        self.levels = dict(levels)
        self.series = dict(series)
        self.seed = seed
        self.limits = {key: list(value) for key, value in (limits or HIERARCHY_LIMITS).items()}
        self.children: Dict[str, List[str]] = {node: [] for node in self.parents}
        for node, parent in self.parents.items():
            if parent is not None:
                self.children[parent].append(node)

    def nodes(self, level: Optional[str] = None) -> List[str]:
        return [node for node in self.parents if level is None or self.levels[node] == level]

    def members(self, node: str) -> List[str]:
        if self.levels[node] == 'household':
            return [node]
        found = []
        for child in self.children[node]:
            found.extend(self.members(child))
        return found

    def to_manifest(self) -> Dict[str, Any]:
        return {
            'format_version': MODEL_FORMAT_VERSION,
            'seed': self.seed,
            'limits': self.limits,
            'nodes': [
                {
                    'id': node,
                    'level': self.levels[node],
                    'parent': self.parents[node],
                    'children': list(self.children[node]),
                    'members': self.members(node)
                }
                for node in self.parents
            ]
        }

    def save_manifest(self, path: Union[str, pathlib.Path]) -> None:
        with open(path, 'w') as fp:
            json.dump(self.to_manifest(), fp, indent=2, sort_keys=True)

    @classmethod
    def from_manifest(cls, manifest: Mapping[str, Any], households: Mapping[str, LoadSeries]) -> NetworkHierarchy:
        parents = {entry['id']: entry['parent'] for entry in manifest['nodes']}
        levels = {entry['id']: entry['level'] for entry in manifest['nodes']}
        missing = [node for node, level in levels.items() if level == 'household' and node not in households]
        if missing:
            raise DatasetError(f'Manifest households without series: {", ".join(missing[:10])}')
        hierarchy = cls(parents, levels, {}, manifest['seed'], manifest.get('limits'))
        for node in hierarchy.nodes('household'):
            hierarchy.series[node] = households[node]
        for level in ('feeder', 'secondary', 'primary'):
            for node in hierarchy.nodes(level):
                hierarchy.series[node] = aggregate(node, [households[m] for m in hierarchy.members(node)])
        return hierarchy


def synthesize_hierarchy(
        households: Union[Mapping[str, LoadSeries], Iterable[LoadSeries]],
        seed: int,
        limits: Optional[Mapping[str, Sequence[int]]] = None
) -> NetworkHierarchy:
    """
    Sample households without replacement into feeders, feeders into secondaries under one primary.

    Arguments:

    households: Cleaned household series
    seed:       Seed for the sampling, the result is a pure function of households and seed
    limits:     feeders_per_ss and hh_per_feeder as (min, max) pairs
    """
    if isinstance(households, Mapping):
        households = list(households.values())
    by_id = {item.node_id: item for item in households}
    bounds = dict(HIERARCHY_LIMITS)
    bounds.update(limits or {})
    hh_low, hh_high = bounds['hh_per_feeder']
    fdr_low, fdr_high = bounds['feeders_per_ss']
    if len(by_id) < hh_low:
        raise DatasetError(
            f'Need at least {hh_low} households to form a feeder, got {len(by_id)} '
            f'(short by {hh_low - len(by_id)})'
        )
    rng = np.random.default_rng(seed)
    order = [str(node) for node in rng.permutation(sorted(by_id))]
    feeder_sizes = _sample_group_sizes(len(order), hh_low, hh_high, rng)
    if len(feeder_sizes) < fdr_low:
        logging.warning(
            f'Only {len(feeder_sizes)} feeders, fewer than {fdr_low} per secondary; using one secondary'
        )
        secondary_sizes = [len(feeder_sizes)]
    else:
        secondary_sizes = _sample_group_sizes(len(feeder_sizes), fdr_low, fdr_high, rng)

    primary = f'{NODE_PREFIXES["primary"]}1'
    parents: Dict[str, Optional[str]] = {primary: None}
    levels = {primary: 'primary'}
    feeder_members: Dict[str, List[str]] = {}
    start = 0
    feeder_index = 0
    for ss_number, n_feeders in enumerate(secondary_sizes, start=1):
        secondary = f'{NODE_PREFIXES["secondary"]}{ss_number}'
        parents[secondary] = primary
        levels[secondary] = 'secondary'
        for fdr_number in range(1, n_feeders + 1):
            feeder = f'{secondary}_{NODE_PREFIXES["feeder"]}{fdr_number}'
            parents[feeder] = secondary
            levels[feeder] = 'feeder'
            size = feeder_sizes[feeder_index]
            feeder_members[feeder] = order[start:start + size]
            start += size
            feeder_index += 1
    for feeder, members in feeder_members.items():
        for household in members:
            parents[household] = feeder
            levels[household] = 'household'

    hierarchy = NetworkHierarchy(parents, levels, {}, seed, bounds)
    for node in hierarchy.nodes('household'):
        hierarchy.series[node] = by_id[node]
    for level in ('feeder', 'secondary', 'primary'):
        for node in hierarchy.nodes(level):
            hierarchy.series[node] = aggregate(node, [hierarchy.series[child] for child in hierarchy.children[node]])
    logging.info(
        f'Synthesized hierarchy (seed {seed}): {len(secondary_sizes)} secondaries, '
        f'{len(feeder_sizes)} feeders, {len(order)} households'
    )
    return hierarchy


class DailyPeakSeries(object):
    def __init__(
            self,
            node_id: str,
            dates: np.ndarray,
            peak: np.ndarray,
            timing: np.ndarray,
            std: np.ndarray
    ) -> None:
        self.node_id = node_id
        self.dates = np.asarray(dates, dtype='datetime64[D]')
        self.peak = np.asarray(peak, dtype=float)
        self.timing = np.asarray(timing, dtype=int)
        self.std = np.asarray(std, dtype=float)
        for array in (self.dates, self.peak, self.timing, self.std):
            array.setflags(write=False)

    def __len__(self) -> int:
        return len(self.dates)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'node': self.node_id,
            'date': self.dates.astype('datetime64[ns]'),
            'peak': self.peak,
            'timing': self.timing,
            'std': self.std
        })

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, node_id: Optional[str] = None) -> DailyPeakSeries:
        if node_id is None:
            node_id = str(frame['node'].iloc[0])
        return cls(
            node_id, as_dates(frame['date']), frame['peak'].to_numpy(),
            frame['timing'].to_numpy(), frame['std'].to_numpy()
        )


def extract_daily_peaks(series: LoadSeries) -> DailyPeakSeries:
    energy = series.energy
    # argmax returns the first occurrence on ties
    timing = np.argmax(energy, axis=1) + 1
    return DailyPeakSeries(
        series.node_id,
        series.dates,
        energy.max(axis=1),
        timing,
        energy.std(axis=1, ddof=1)
    )


def detect_empty_house(
        peaks: DailyPeakSeries,
        eps: float = EMPTY_HOUSE['eps'],
        min_run: int = EMPTY_HOUSE['min_run'],
        min_total: int = EMPTY_HOUSE['min_total']
) -> np.ndarray:
    """
    Flag days inside runs of at least `min_run` consecutive calendar days with daily std below `eps`.

    The indicator is all zero unless the flagged days add up to `min_total` or more.
    """
    indicator = np.zeros(len(peaks), dtype=int)
    low = peaks.std < eps
    # A missing calendar day breaks a run
    breaks = np.concatenate([[True], np.diff(peaks.dates) != ONE_DAY])
    segment = np.cumsum(breaks)
    for start, length in run_lengths(low):
        cuts = segment[start:start + length]
        for value in np.unique(cuts):
            positions = start + np.flatnonzero(cuts == value)
            if len(positions) >= min_run:
                indicator[positions] = 1
    if indicator.sum() < min_total:
        return np.zeros(len(peaks), dtype=int)
    logging.info(f'{peaks.node_id}: empty-house feature enabled on {int(indicator.sum())} days')
    return indicator


def day_type_3(dates: np.ndarray) -> np.ndarray:
    dow = pd.DatetimeIndex(dates).dayofweek.to_numpy()
    return np.where(dow < 5, DAY_TYPES_3[0], np.where(dow == 5, DAY_TYPES_3[1], DAY_TYPES_3[2]))


def day_type_2(dates: np.ndarray) -> np.ndarray:
    dow = pd.DatetimeIndex(dates).dayofweek.to_numpy()
    return np.where(dow < 5, DAY_TYPES_2[0], DAY_TYPES_2[1])


def calendar_columns(dates: np.ndarray) -> pd.DataFrame:
    index = pd.DatetimeIndex(np.asarray(dates, dtype='datetime64[ns]'))
    return pd.DataFrame({
        'date': index,
        'doy': index.dayofyear.to_numpy().astype(float),
        'dow': index.dayofweek.to_numpy(),
        'daytype3': day_type_3(index),
        'daytype2': day_type_2(index)
    })


class FeatureFrame(object):
    """
    Model inputs of one node.

    `halfhourly` holds one row per (date, period), `daily` one row per date. Lag columns are NaN
    where the lagged day is not on record, and `available` is False on those rows.
    """

    HALFHOURLY_LAGS = ('lag1', 'lag7', 'peak_lag1')
    DAILY_LAGS = ('peak_lag1', 'peak_lag7', 'std_lag1')

    def __init__(
            self,
            node_id: str,
            halfhourly: pd.DataFrame,
            daily: pd.DataFrame,
            empty_enabled: bool = False
    ) -> None:
        self.node_id = node_id
        self.halfhourly = halfhourly
        self.daily = daily
        self.empty_enabled = empty_enabled

    def save(self, directory: Union[str, pathlib.Path]) -> None:
        directory = pathlib.Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.halfhourly.to_csv(directory / f'{self.node_id}_halfhourly.csv', index=False, date_format='%Y-%m-%d')
        self.daily.to_csv(directory / f'{self.node_id}_daily.csv', index=False, date_format='%Y-%m-%d')

    @classmethod
    def load(cls, directory: Union[str, pathlib.Path], node_id: str) -> FeatureFrame:
        directory = pathlib.Path(directory)
        frames = []
        for name in ('halfhourly', 'daily'):
            frame = pd.read_csv(directory / f'{node_id}_{name}.csv')
            for column in ('date', 'lag1_date', 'lag7_date'):
                if column in frame.columns:
                    frame[column] = pd.to_datetime(frame[column])
            frames.append(frame)
        empty_enabled = bool(frames[1]['empty'].sum() > 0)
        return cls(node_id, frames[0], frames[1], empty_enabled)


def build_features(
        series: LoadSeries,
        peaks: DailyPeakSeries,
        empty: Optional[np.ndarray] = None
) -> FeatureFrame:
    """
    Build the half-hourly and daily regressors of one node with lags aligned by calendar date.

    Arguments:

    series:     Half-hourly load of the node
    peaks:      Daily peaks extracted from the same series
    empty:      Optional per-day empty-house indicator aligned with `peaks`
    """
    if not np.array_equal(series.dates, peaks.dates):
        raise DatasetError(f'Peaks of `{peaks.node_id}` do not line up with the series of `{series.node_id}`')
    if empty is None:
        empty = np.zeros(len(peaks), dtype=int)
    dates = series.dates
    position = {day: row for row, day in enumerate(dates)}

    def lagged_rows(days: int) -> np.ndarray:
        return np.array([position.get(day - np.timedelta64(days, 'D'), -1) for day in dates], dtype=int)

    lag1_rows = lagged_rows(1)
    lag7_rows = lagged_rows(7)

    def take(values: np.ndarray, rows: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        out = np.full((len(rows),) + values.shape[1:], np.nan)
        found = rows >= 0
        out[found] = values[rows[found]]
        return out

    daily = calendar_columns(dates)
    daily['peak'] = peaks.peak
    daily['timing'] = peaks.timing
    daily['std'] = peaks.std
    daily['empty'] = np.asarray(empty, dtype=int)
    daily['peak_lag1'] = take(peaks.peak, lag1_rows)
    daily['peak_lag7'] = take(peaks.peak, lag7_rows)
    daily['std_lag1'] = take(peaks.std, lag1_rows)
    daily['empty_lag1'] = take(empty, lag1_rows)
    daily['lag1_date'] = pd.to_datetime(np.where(lag1_rows >= 0, dates - np.timedelta64(1, 'D'), np.datetime64('NaT')))
    daily['lag7_date'] = pd.to_datetime(np.where(lag7_rows >= 0, dates - np.timedelta64(7, 'D'), np.datetime64('NaT')))
    daily['available'] = daily[list(FeatureFrame.DAILY_LAGS)].notna().all(axis=1)

    n_days = len(dates)
    halfhourly = daily[['date', 'doy', 'dow', 'daytype3', 'daytype2', 'peak_lag1', 'peak_lag7',
                        'std_lag1', 'empty_lag1', 'lag1_date', 'lag7_date']]
    halfhourly = halfhourly.loc[halfhourly.index.repeat(PERIODS_PER_DAY)].reset_index(drop=True)
    halfhourly.insert(1, 'period', np.tile(np.arange(1, PERIODS_PER_DAY + 1), n_days))
    halfhourly['y'] = series.energy.ravel()
    halfhourly['lag1'] = take(series.energy, lag1_rows).ravel()
    halfhourly['lag7'] = take(series.energy, lag7_rows).ravel()
    halfhourly['available'] = halfhourly[list(FeatureFrame.HALFHOURLY_LAGS)].notna().all(axis=1)
    return FeatureFrame(series.node_id, halfhourly, daily, bool(np.asarray(empty).any()))


class DataPartition(object):
    """
    Month blocks of the evaluation period: B1 and B2 of every month train, B3 tests.

    `blocks` has one row per date with its month and block number (1, 2 or 3).
    """

    def __init__(self, blocks: pd.DataFrame) -> None:
        self.blocks = blocks

    def dates(self, block: int) -> np.ndarray:
        return np.asarray(self.blocks.loc[self.blocks['block'] == block, 'date'].values, dtype='datetime64[D]')

    @property
    def train_dates(self) -> np.ndarray:
        return np.sort(np.concatenate([self.dates(1), self.dates(2)]))

    @property
    def test_dates(self) -> np.ndarray:
        return self.dates(3)

    def cv_folds(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        """ (fit dates, held-out dates) per fold: each training block held out in every month. """
        return [(self.dates(2), self.dates(1)), (self.dates(1), self.dates(2))]

    def month_sizes(self) -> Dict[str, Tuple[int, int, int]]:
        counts = self.blocks.groupby(['month', 'block']).size().unstack(fill_value=0)
        counts = counts.reindex(columns=[1, 2, 3], fill_value=0)
        return {month: tuple(int(v) for v in row) for month, row in counts.iterrows()}


def partition(series_days: Iterable) -> DataPartition:
    """
    Split every month of the given days into three contiguous blocks, remainder days going to the earlier blocks.
    """
    dates = np.unique(as_dates(series_days))
    if len(dates) == 0:
        raise DatasetError('Cannot partition an empty date range')
    months = dates.astype('datetime64[M]')
    rows = []
    for month in np.unique(months):
        days = dates[months == month]
        base, extra = divmod(len(days), 3)
        sizes = [base + (1 if block < extra else 0) for block in range(3)]
        labels = np.repeat([1, 2, 3], sizes)
        for day, label in zip(days, labels):
            rows.append((day, str(month), int(label)))
    blocks = pd.DataFrame(rows, columns=['date', 'month', 'block'])
    blocks['date'] = blocks['date'].astype('datetime64[ns]')
    return DataPartition(blocks)
