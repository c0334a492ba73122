#!/usr/bin/env python
# -*- coding: utf-8 -*-
from __future__ import annotations

import contextlib
import io
import json
import pathlib
import tempfile
import unittest
from typing import List, Tuple

import numpy as np
import pandas as pd
from scipy import integrate, stats

from .cli import EXIT_FATAL, EXIT_OK, build_parser, main, partition_label
from .config import ExperimentConfig
from .constants import PERIODS_PER_DAY
from .dataset import DailyPeakSeries, LoadSeries, aggregate, build_features, calendar_columns, clean, \
    detect_empty_house, expected_days, extract_daily_peaks, ingest_csv, partition, synthesize_hierarchy
from .distributions import as_params, get_family
from .forecasters import KdeForecast, ParametricForecast, audit_causality, fit_method, forecast_day_ahead, \
    method_spec, observations, training_rows
from .fusion import fuse, fused_cdf, fused_quantile
from .gamlss import FittedModel, ModelSpec, ParameterDesign, fit, fit_with_fallback, predict
from .kde import fit_kde, fit_kde_frame, kde_cdf
from .smoothers import NormalEquations, TermBasis, bspline_basis, cyclic_bspline_basis, linear, pb, pbc, \
    select_lambdas, sum_to_zero_coding
from .timing import TimingPmf, climatology_pmf, expand_to_person_period, fit_hazard, hazard_consistency, \
    hazard_to_pmf, predict_timing
from .utils import ConfigError, CoverageError, DatasetError, DomainError, FitError, InsufficientDataError, \
    invert_monotone, run_lengths
from .verification import ScoreReport, bootstrap_skill, crps, crps_gaussian, crps_levels, crps_quantile, \
    peak_subset, pit, rps, score_frame, skill

FAST = {'polish': False}


def day_range(start: str, days: int) -> np.ndarray:
    first = np.datetime64(start, 'D')
    return np.arange(first, first + np.timedelta64(days, 'D'))


def synthetic_series(node_id: str = 'hh1', days: int = 120, seed: int = 0, start: str = '2013-01-01') -> LoadSeries:
    """ Evening-peaking load with day-to-day level changes and multiplicative noise. """
    rng = np.random.default_rng(seed)
    periods = np.arange(1, PERIODS_PER_DAY + 1)
    profile = 0.2 + 0.15 * np.exp(-0.5 * ((periods - 36) / 3.) ** 2) + 0.05 * np.exp(-0.5 * ((periods - 16) / 2.) ** 2)
    level = np.clip(1. + 0.1 * rng.standard_normal(days), 0.5, None)
    energy = profile[None, :] * level[:, None] * rng.gamma(20., 1. / 20., size=(days, PERIODS_PER_DAY))
    return LoadSeries(node_id, day_range(start, days), energy)


def synthetic_features(node_id: str = 'hh1', days: int = 120, seed: int = 0):
    series = synthetic_series(node_id, days, seed)
    return series, build_features(series, extract_daily_peaks(series))


def synthetic_peaks(days: int = 120, centre: float = 36., spread: float = 3., seed: int = 0) -> DailyPeakSeries:
    rng = np.random.default_rng(seed)
    timing = np.clip(np.round(rng.normal(centre, spread, size=days)), 1, PERIODS_PER_DAY).astype(int)
    return DailyPeakSeries('hh1', day_range('2013-01-01', days), np.ones(days), timing, np.full(days, 0.1))


def halfhourly_index(dates: np.ndarray) -> pd.DataFrame:
    return pd.DataFrame({
        'date': pd.to_datetime(np.repeat(dates, PERIODS_PER_DAY).astype('datetime64[ns]')),
        'period': np.tile(np.arange(1, PERIODS_PER_DAY + 1), len(dates))
    })


def gaussian_forecast(node_id: str, dates: np.ndarray, mu: float, sigma: float, daily: bool = False) -> ParametricForecast:
    if daily:
        index = pd.DataFrame({'date': pd.to_datetime(dates.astype('datetime64[ns]'))})
        resolution = 'daily'
    else:
        index = halfhourly_index(dates)
        resolution = 'halfhourly'
    size = len(index)
    params = {'mu': np.full(size, mu), 'sigma': np.full(size, sigma)}
    return ParametricForecast(node_id, 'full', resolution, index, 'Gaussian', params)


def peak_weighted_pmf(node_id: str, dates: np.ndarray, period: int = 36, weight: float = 0.25) -> TimingPmf:
    row = np.full(PERIODS_PER_DAY, (1. - weight) / (PERIODS_PER_DAY - 1))
    row[period - 1] = weight
    return TimingPmf(node_id, dates, np.tile(row, (len(dates), 1)), 'climatology')


def write_meter_csv(path: pathlib.Path, meters: int = 16, year: int = 2013) -> None:
    """ A year of complete half-hourly readings per meter in the default export layout. """
    days = len(expected_days(year, 'UTC'))
    stamps = pd.date_range(f'{year}-01-01', periods=days * PERIODS_PER_DAY, freq='30min').strftime('%Y-%m-%dT%H:%M:%S')
    frames = []
    for number in range(meters):
        series = synthetic_series(f'MAC{number:03d}', days=days, seed=number, start=f'{year}-01-01')
        frames.append(pd.DataFrame({
            'LCLid': series.node_id,
            'DateTime': stamps,
            'KWH/hh (per half hour) ': np.round(series.energy.ravel(), 4),
            'stdorToU': 'Std'
        }))
    pd.concat(frames, ignore_index=True).to_csv(path, index=False)


def run_pipeline(directory: pathlib.Path, data_path: pathlib.Path, jobs: int) -> Tuple[List[int], pathlib.Path]:
    """ build, then fit, forecast, fuse and evaluate the feeders; returns the exit codes and output directory. """
    output = directory / f'output-{jobs}'
    config_path = directory / f'config-{jobs}.json'
    config_path.write_text(json.dumps({
        'data_path': str(data_path), 'year': 2013, 'timezone': 'UTC', 'seed': 4, 'evaluation_seed': 5,
        'hierarchy_limits': {'hh_per_feeder': [8, 8], 'feeders_per_ss': [4, 7]},
        'basis_dims': {'period': 6, 'annual': 6, 'annual_smooth': 4, 'annual_daily': 6, 'tensor': [4, 4]},
        'polish': False, 'bootstrap_resamples': 20, 'crps_levels': 99, 'output_dir': str(output),
        'logging_level': 'CRITICAL'
    }))
    stages = [['build'], ['fit', '--level', 'feeder'], ['forecast', '--level', 'feeder'], ['fuse', '--level', 'feeder'],
              ['evaluate', '--level', 'feeder']]
    codes = []
    with contextlib.redirect_stderr(io.StringIO()):
        for stage in stages:
            codes.append(main(['--config', str(config_path), '--jobs', str(jobs)] + stage))
    return codes, output


class TestUtils(unittest.TestCase):
    def test_invert_monotone_matches_normal_quantile(self):
        targets = np.array([0.01, 0.3, 0.5, 0.975])
        found = invert_monotone(lambda x, idx: stats.norm.cdf(x), targets, -0.1, 0.1)
        np.testing.assert_allclose(found, stats.norm.ppf(targets), atol=1e-7)

    def test_invert_monotone_respects_floor(self):
        found = invert_monotone(lambda x, idx: stats.expon.cdf(x), np.array([0.2, 0.9]), 5., 6., floor=0.)
        self.assertTrue((found >= 0).all())
        np.testing.assert_allclose(found, stats.expon.ppf([0.2, 0.9]), atol=1e-7)

    def test_run_lengths(self):
        self.assertEqual(run_lengths(np.array([0, 1, 1, 0, 1], dtype=bool)), [(1, 2), (4, 1)])
        self.assertEqual(run_lengths(np.zeros(4, dtype=bool)), [])


class TestDistributions(unittest.TestCase):
    def test_gaussian_reference_values(self):
        gaussian = get_family('Gaussian')
        params = as_params('Gaussian', mu=0., sigma=1.)
        self.assertAlmostEqual(float(gaussian.pdf(params, 0.)), 0.3989423, places=6)
        self.assertAlmostEqual(float(gaussian.quantile(params, 0.975)), 1.959964, places=5)

    def test_quantile_levels_must_be_inside_unit_interval(self):
        gaussian = get_family('Gaussian')
        params = as_params('Gaussian', mu=0., sigma=1.)
        for level in (0., 1., 1.5):
            with self.assertRaises(DomainError):
                gaussian.quantile(params, level)

    def test_log_link_parameters_must_be_positive(self):
        with self.assertRaises(DomainError):
            as_params('Gaussian', mu=0., sigma=-1.)
        with self.assertRaises(DomainError):
            as_params('GeneralisedBetaPrime', mu=1., sigma=2., nu=0., tau=1.)

    def test_gbp_is_log_logistic_when_shapes_are_one(self):
        family = get_family('GeneralisedBetaPrime')
        params = as_params('GeneralisedBetaPrime', mu=0.8, sigma=3., nu=1., tau=1.)
        y = np.array([0.1, 0.8, 2.5])
        ratio = (y / 0.8) ** 3.
        np.testing.assert_allclose(family.cdf(params, y), ratio / (1. + ratio), rtol=1e-10)
        self.assertEqual(float(family.cdf(params, 0.)), 0.)
        self.assertEqual(float(family.pdf(params, -1.)), 0.)

    def test_gbp_quantile_inverts_cdf(self):
        family = get_family('GeneralisedBetaPrime')
        params = as_params('GeneralisedBetaPrime', mu=0.5, sigma=2.5, nu=1.7, tau=0.8)
        levels = np.array([0.001, 0.1, 0.5, 0.9, 0.999])
        np.testing.assert_allclose(family.cdf(params, family.quantile(params, levels)), levels, atol=1e-10)

    def test_gbp_density_integrates_to_one(self):
        family = get_family('GeneralisedBetaPrime')
        params = as_params('GeneralisedBetaPrime', mu=0.5, sigma=2.5, nu=1.7, tau=1.3)
        total, _ = integrate.quad(lambda y: float(family.pdf(params, y)), 0., np.inf)
        self.assertAlmostEqual(total, 1., places=6)

    def test_gbp_score_matches_finite_differences(self):
        family = get_family('GeneralisedBetaPrime')
        params = as_params('GeneralisedBetaPrime', mu=0.6, sigma=2., nu=1.4, tau=0.9)
        y = np.array([0.3, 1.1])
        score = family.score(params, y)
        for name in family.parameters:
            step = 1e-6 * float(params[name])
            up = dict(params, **{name: params[name] + step})
            down = dict(params, **{name: params[name] - step})
            numeric = (family.loglik(up, y) - family.loglik(down, y)) / (2. * step)
            np.testing.assert_allclose(score[name], numeric, rtol=1e-5, atol=1e-7)

    def test_gbp_information_is_the_expected_squared_score(self):
        family = get_family('GeneralisedBetaPrime')
        params = as_params('GeneralisedBetaPrime', mu=0.5, sigma=3., nu=1.5, tau=2.)
        y = family.random(params, 400000, np.random.default_rng(20))
        score = family.score(params, y)
        information = family.information(params, y)
        for name in family.parameters:
            self.assertAlmostEqual(float(np.mean(score[name] ** 2)) / float(information[name][0]), 1., delta=0.03)

    def test_gbp_random_parameters_normalize_and_invert(self):
        family = get_family('GeneralisedBetaPrime')
        rng = np.random.default_rng(21)
        levels = np.array([0.001, 0.01, 0.25, 0.5, 0.75, 0.99, 0.999])
        for _ in range(50):
            params = as_params(
                'GeneralisedBetaPrime', mu=rng.uniform(0.2, 3.), sigma=rng.uniform(1., 5.),
                nu=rng.uniform(0.5, 4.), tau=rng.uniform(0.5, 4.)
            )
            quantiles = family.quantile(params, levels)
            np.testing.assert_allclose(family.cdf(params, quantiles), levels, atol=1e-9)

            def density(t: float) -> float:
                return float(family.pdf(params, np.exp(t))) * np.exp(t)

            first, median, last = np.log(family.quantile(params, np.array([1e-10, 0.5, 1. - 1e-10])))
            lower, _ = integrate.quad(density, first, median, limit=200)
            upper, _ = integrate.quad(density, median, last, limit=200)
            self.assertAlmostEqual(lower, 0.5, delta=1e-6)
            self.assertAlmostEqual(lower + upper, 1., delta=1e-6)

    def test_bernoulli_cdf(self):
        family = get_family('Bernoulli')
        params = as_params('Bernoulli', mu=0.3)
        np.testing.assert_allclose(family.cdf(params, np.array([-1., 0., 0.5, 1.])), [0., 0.7, 0.7, 1.])


class TestDataset(unittest.TestCase):
    def test_partition_block_sizes(self):
        blocks = partition(day_range('2013-01-01', 59))
        self.assertEqual(blocks.month_sizes(), {'2013-01': (11, 10, 10), '2013-02': (10, 9, 9)})
        self.assertEqual(len(np.intersect1d(blocks.train_dates, blocks.test_dates)), 0)
        self.assertEqual(len(blocks.train_dates) + len(blocks.test_dates), 59)

    def test_cross_validation_folds_swap_training_blocks(self):
        blocks = partition(day_range('2013-01-01', 31))
        (fit_first, held_first), (fit_second, held_second) = blocks.cv_folds()
        np.testing.assert_array_equal(fit_first, held_second)
        np.testing.assert_array_equal(fit_second, held_first)
        self.assertEqual(len(held_first), 11)
        self.assertFalse(np.isin(held_first, blocks.test_dates).any())

    def test_daily_peaks_take_first_tie(self):
        energy = np.full((1, PERIODS_PER_DAY), 0.1)
        energy[0, [9, 30]] = 2.
        peaks = extract_daily_peaks(LoadSeries('hh1', day_range('2013-03-01', 1), energy))
        self.assertEqual(int(peaks.timing[0]), 10)
        self.assertEqual(float(peaks.peak[0]), 2.)

    def test_empty_house_needs_long_runs(self):
        days = 80
        std = np.full(days, 0.2)
        std[10:50] = 0.
        peaks = DailyPeakSeries('hh1', day_range('2013-01-01', days), np.ones(days), np.ones(days, dtype=int), std)
        indicator = detect_empty_house(peaks)
        self.assertEqual(int(indicator.sum()), 40)
        self.assertEqual(int(indicator[10]), 1)

        short = np.full(days, 0.2)
        for start in range(0, 70, 10):
            short[start:start + 5] = 0.
        peaks = DailyPeakSeries('hh1', day_range('2013-01-01', days), np.ones(days), np.ones(days, dtype=int), short)
        self.assertEqual(int(detect_empty_house(peaks).sum()), 0)

    def test_features_use_calendar_lags(self):
        series, features = synthetic_features(days=20)
        halfhourly = features.halfhourly
        self.assertTrue(halfhourly.loc[halfhourly['date'] == pd.Timestamp('2013-01-01'), 'lag1'].isna().all())
        second_day = halfhourly[halfhourly['date'] == pd.Timestamp('2013-01-02')]
        np.testing.assert_allclose(second_day['lag1'].to_numpy(), series.energy[0])
        self.assertEqual(int(features.daily['available'].sum()), 13)
        self.assertEqual(int(halfhourly['available'].sum()), 13 * PERIODS_PER_DAY)

    def test_missing_day_breaks_lags(self):
        series = synthetic_series(days=20)
        kept = np.setdiff1d(series.dates, [np.datetime64('2013-01-10')])
        series = series.restrict(kept)
        features = build_features(series, extract_daily_peaks(series))
        daily = features.daily.set_index('date')
        self.assertTrue(np.isnan(daily.loc[pd.Timestamp('2013-01-11'), 'peak_lag1']))
        self.assertTrue(np.isnan(daily.loc[pd.Timestamp('2013-01-17'), 'peak_lag7']))

    def test_calendar_day_types(self):
        calendar = calendar_columns(day_range('2013-01-04', 3))
        self.assertEqual(calendar['daytype3'].tolist(), ['weekday', 'saturday', 'sunday'])
        self.assertEqual(calendar['daytype2'].tolist(), ['weekday', 'weekend', 'weekend'])

    def test_aggregate_is_exact_sum(self):
        first = synthetic_series('a', days=10, seed=1)
        second = synthetic_series('b', days=10, seed=2)
        total = aggregate('fdr', [first, second])
        np.testing.assert_allclose(total.energy, first.energy + second.energy)

    def test_hierarchy_is_seeded_and_complete(self):
        households = {f'hh{i}': synthetic_series(f'hh{i}', days=5, seed=i) for i in range(40)}
        limits = {'hh_per_feeder': (5, 10), 'feeders_per_ss': (2, 3)}
        first = synthesize_hierarchy(households, seed=3, limits=limits)
        second = synthesize_hierarchy(households, seed=3, limits=limits)
        self.assertEqual(first.to_manifest(), second.to_manifest())
        members = [m for feeder in first.nodes('feeder') for m in first.members(feeder)]
        self.assertEqual(sorted(members), sorted(households))
        primary = first.nodes('primary')[0]
        expected = sum(series.energy for series in households.values())
        np.testing.assert_allclose(first.series[primary].energy, expected)

    def test_ingest_reports_bad_rows_and_incomplete_days(self):
        lines = ['LCLid,DateTime,KWH/hh (per half hour) ,stdorToU']
        for meter, day in (('MAC1', '2013-01-02'), ('MAC2', '2013-01-02')):
            for period in range(PERIODS_PER_DAY):
                if meter == 'MAC2' and period == 5:
                    continue
                stamp = pd.Timestamp(day) + pd.Timedelta(minutes=30 * period)
                lines.append(f'{meter},{stamp.strftime("%Y-%m-%dT%H:%M:%S")},0.25,Std')
        lines.append('MAC1,2013-01-03T00:00:00,abc,Std')
        with tempfile.TemporaryDirectory() as directory:
            path = pathlib.Path(directory) / 'meters.csv'
            path.write_text('\n'.join(lines) + '\n')
            report = ingest_csv(path, timezone='Europe/London')
        self.assertEqual(len(report.series['MAC1']), 1)
        self.assertEqual(len(report.series['MAC2']), 0)
        self.assertEqual(report.dropped_days['MAC2'], 1)
        self.assertEqual([error.reason for error in report.errors], ['unparseable energy'])
        self.assertFalse(report.series['MAC1'].variable_tariff)

    def test_ingest_rejects_repeated_readings(self):
        lines = ['LCLid,DateTime,KWH/hh (per half hour) ,stdorToU']
        for period in range(PERIODS_PER_DAY):
            stamp = pd.Timestamp('2013-01-02') + pd.Timedelta(minutes=30 * period)
            lines.append(f'MAC1,{stamp.strftime("%Y-%m-%dT%H:%M:%S")},0.25,Std')
        lines.append('MAC1,2013-01-02T10:00:00,0.75,Std')
        with tempfile.TemporaryDirectory() as directory:
            path = pathlib.Path(directory) / 'meters.csv'
            path.write_text('\n'.join(lines) + '\n')
            report = ingest_csv(path, timezone='UTC')
        self.assertEqual([(error.line, error.reason) for error in report.errors],
                         [(PERIODS_PER_DAY + 2, 'duplicate meter and timestamp')])
        self.assertEqual(float(report.series['MAC1'].energy[0, 20]), 0.25)

    def test_ingest_of_empty_files_fails(self):
        with tempfile.TemporaryDirectory() as directory:
            path = pathlib.Path(directory) / 'meters.csv'
            path.write_text('')
            with self.assertRaises(DatasetError):
                ingest_csv(path, timezone='UTC')
            path.write_text('LCLid,DateTime,KWH/hh (per half hour) ,stdorToU\n')
            with self.assertRaises(DatasetError):
                ingest_csv(path, timezone='UTC')

    def test_clean_removes_incomplete_and_variable_meters(self):
        days = expected_days(2013, 'UTC')
        meters = {}
        for number in range(100):
            dates = np.delete(days, number * 30) if number < 10 else days
            meters[f'm{number:03d}'] = LoadSeries(f'm{number:03d}', dates, np.full((len(dates), PERIODS_PER_DAY), 0.2))
        retained = clean(meters, 2013, 'UTC')
        self.assertEqual(len(retained), 90)
        self.assertNotIn('m000', retained)
        self.assertEqual(len(retained['m010']), 365)

        variable = LoadSeries('tou', days, np.full((len(days), PERIODS_PER_DAY), 0.2), variable_tariff=True)
        self.assertEqual(clean([variable, meters['m050']], 2013, 'UTC').keys(), {'m050'})

    def test_sixteen_households_form_the_smallest_network(self):
        households = {f'hh{i:02d}': synthetic_series(f'hh{i:02d}', days=3, seed=i) for i in range(16)}
        hierarchy = synthesize_hierarchy(households, seed=1)
        counts = [len(hierarchy.nodes(level)) for level in ('primary', 'secondary', 'feeder', 'household')]
        self.assertEqual(counts, [1, 1, 1, 16])
        self.assertEqual(hierarchy.parents['ss1_fdr1'], 'ss1')
        with self.assertRaises(DatasetError):
            synthesize_hierarchy(dict(list(households.items())[:15]), seed=1)


class TestSmoothers(unittest.TestCase):
    def test_bspline_bases_sum_to_one(self):
        x = np.linspace(1., 48., 200)
        np.testing.assert_allclose(bspline_basis(x, 1., 48., 10).sum(axis=1), 1., atol=1e-12)
        np.testing.assert_allclose(cyclic_bspline_basis(x, 1., 365., 8).sum(axis=1), 1., atol=1e-12)

    def test_cyclic_basis_wraps(self):
        basis = cyclic_bspline_basis(np.array([1., 366.]), 1., 365., 8)
        np.testing.assert_allclose(basis[0], basis[1], atol=1e-12)

    def test_sum_to_zero_coding(self):
        coded = sum_to_zero_coding(np.array(['a', 'b', 'c']), ['a', 'b', 'c'])
        np.testing.assert_array_equal(coded, [[1., 0.], [0., 1.], [-1., -1.]])

    def test_smooth_columns_are_centred(self):
        frame = pd.DataFrame({'x': np.linspace(0., 1., 300)})
        basis = TermBasis.setup(pb('x', k=10), frame)
        matrix, clamped = basis.design(frame)
        self.assertEqual(matrix.shape, (300, 9))
        self.assertEqual(clamped, 0)
        np.testing.assert_allclose(matrix.sum(axis=0), 0., atol=1e-9)

    def test_fixed_edf_target_is_reached(self):
        rng = np.random.default_rng(4)
        frame = pd.DataFrame({'x': np.sort(rng.random(400))})
        design = ParameterDesign([TermBasis.setup(pb('x', k=10), frame)])
        matrix, _ = design.matrix(frame)
        response = np.sin(2. * np.pi * frame['x'].to_numpy()) + 0.3 * rng.standard_normal(400)
        equations = NormalEquations(matrix, response, np.ones(400), design.penalties)
        lambdas = select_lambdas(equations, fixed_edf={0: 4.})
        self.assertAlmostEqual(equations.penalty_edf(0, lambdas), 4., places=3)

    def test_heavy_smoothing_leaves_the_linear_null_space(self):
        rng = np.random.default_rng(22)
        x = np.sort(rng.random(400))
        frame = pd.DataFrame({'x': x})
        design = ParameterDesign([TermBasis.setup(pb('x', k=10), frame)])
        matrix, _ = design.matrix(frame)
        response = np.sin(2. * np.pi * x) + 0.3 * rng.standard_normal(400)
        equations = NormalEquations(matrix, response, np.ones(400), design.penalties)
        edf = [equations.penalty_edf(0, [lam]) for lam in 10. ** np.arange(-4., 9.)]
        self.assertTrue((np.diff(edf) <= 1e-9).all())
        self.assertAlmostEqual(edf[0], 9., delta=0.05)
        self.assertAlmostEqual(edf[-1], 1., delta=0.05)
        columns = design.slices[0]
        smooth = matrix[:, columns] @ equations.solve([1e8]).coefficients[columns]
        slope, intercept = np.polyfit(x, smooth, 1)
        self.assertLess(float(np.max(np.abs(smooth - (slope * x + intercept)))), 1e-3)

    def test_unpenalized_terms_add_no_smoothing_parameter(self):
        frame = pd.DataFrame({'x': np.linspace(0., 1., 50), 'z': np.linspace(1., 2., 50)})
        design = ParameterDesign([TermBasis.setup(linear('z'), frame), TermBasis.setup(pb('x', k=6), frame)])
        self.assertEqual(len(design.penalties), 1)
        self.assertEqual(design.size, 1 + 1 + 5)


class TestGamlss(unittest.TestCase):
    def test_gaussian_linear_fit(self):
        rng = np.random.default_rng(1)
        x = rng.random(500)
        frame = pd.DataFrame({'x': x, 'y': 2. + 3. * x + 0.5 * rng.standard_normal(500)})
        model = fit(ModelSpec('Gaussian', {'mu': [linear('x')]}, 'daily'), frame)
        self.assertTrue(model.converged)
        params = predict(model, pd.DataFrame({'x': [0.5]}))
        self.assertAlmostEqual(float(params['mu'].iloc[0]), 3.5, delta=0.15)
        self.assertAlmostEqual(float(params['sigma'].iloc[0]), 0.5, delta=0.06)

    def test_deviance_trace_never_increases(self):
        rng = np.random.default_rng(2)
        x = rng.random(600)
        frame = pd.DataFrame({'x': x, 'y': np.sin(2. * np.pi * x) + (0.1 + 0.3 * x) * rng.standard_normal(600)})
        spec = ModelSpec('Gaussian', {'mu': [pb('x', k=10)], 'sigma': [linear('x')]}, 'daily')
        model = fit(spec, frame, FAST)
        self.assertTrue((np.diff(model.deviance_trace) <= 1e-8).all())
        fitted = predict(model, frame)['mu'].to_numpy()
        truth = np.sin(2. * np.pi * x)
        self.assertLess(float(np.sqrt(np.mean((fitted - truth) ** 2))), 0.1)

    def test_gbp_parameters_recovered_within_three_standard_errors(self):
        family = get_family('GeneralisedBetaPrime')
        truth = {'mu': 0.5, 'sigma': 3., 'nu': 1.5, 'tau': 2.}
        frame = pd.DataFrame({'y': family.random(as_params(family, truth), 10000, np.random.default_rng(3))})
        model = fit(ModelSpec('GeneralisedBetaPrime', {}, 'daily'), frame)
        self.assertTrue(model.converged)
        self.assertTrue(model.stationary)
        for name, value in truth.items():
            estimate = float(model.coefficients[name][0])
            error = float(model.standard_errors(name)[0])
            self.assertTrue(np.isfinite(error) and error > 0)
            self.assertLess(abs(estimate - np.log(value)), 3. * error, name)

    def test_gaussian_log_linear_scale_recovered_within_three_standard_errors(self):
        rng = np.random.default_rng(23)
        x = rng.random(5000)
        y = 1. + 2. * x + np.exp(-1. + 1.5 * x) * rng.standard_normal(5000)
        spec = ModelSpec('Gaussian', {'mu': [linear('x')], 'sigma': [linear('x')]}, 'daily')
        model = fit(spec, pd.DataFrame({'x': x, 'y': y}))
        self.assertTrue(model.converged)
        for name, truth in (('mu', [1., 2.]), ('sigma', [-1., 1.5])):
            errors = model.standard_errors(name)
            np.testing.assert_array_less(np.abs(model.coefficients[name] - truth), 3. * errors)

    def test_joint_standard_errors_match_least_squares(self):
        rng = np.random.default_rng(24)
        x = rng.random(800)
        frame = pd.DataFrame({'x': x, 'y': 2. + 3. * x + 0.5 * rng.standard_normal(800)})
        model = fit(ModelSpec('Gaussian', {'mu': [linear('x')]}, 'daily'), frame)
        residuals = frame['y'] - predict(model, frame)['mu']
        scale = float(np.sqrt(np.mean(residuals ** 2)))
        expected = scale / np.sqrt(np.sum((x - x.mean()) ** 2))
        self.assertAlmostEqual(float(model.standard_errors('mu')[1]) / expected, 1., delta=0.02)
        self.assertEqual(model.covariance.shape, (3, 3))
        np.testing.assert_allclose(model.covariance, model.covariance.T, atol=1e-12)

    def test_cyclic_smooth_predicts_periodically(self):
        rng = np.random.default_rng(25)
        doy = np.linspace(1., 366., 500)
        frame = pd.DataFrame({'doy': doy, 'y': np.sin(2. * np.pi * (doy - 1.) / 365.) + 0.2 * rng.standard_normal(500)})
        model = fit(ModelSpec('Gaussian', {'mu': [pbc('doy', k=10, period=365., lower=1.)]}, 'daily'), frame, FAST)
        mu = predict(model, pd.DataFrame({'doy': [1., 366.]}))['mu'].to_numpy()
        self.assertAlmostEqual(float(mu[0]), float(mu[1]), delta=1e-8)

    def test_too_few_rows_raise(self):
        frame = pd.DataFrame({'x': np.linspace(0., 1., 30), 'y': np.linspace(0., 1., 30)})
        with self.assertRaises(InsufficientDataError):
            fit(ModelSpec('Gaussian', {'mu': [pb('x', k=20)]}, 'daily'), frame)

    def test_fallback_records_reason(self):
        rng = np.random.default_rng(5)
        frame = pd.DataFrame({'x': rng.random(60), 'y': rng.standard_normal(60)})
        primary = ModelSpec('Gaussian', {'mu': [pb('x', k=20)]}, 'daily', 'primary')
        fallback = ModelSpec('Gaussian', {'mu': [linear('x')]}, 'daily', 'fallback')
        model = fit_with_fallback(primary, fallback, frame)
        self.assertEqual(model.name, 'fallback')
        self.assertIn('InsufficientDataError', model.fallback_reason)
        self.assertTrue(model.converged)

    def test_fallback_that_does_not_converge_fails(self):
        rng = np.random.default_rng(5)
        frame = pd.DataFrame({'x': rng.random(60), 'y': rng.standard_normal(60)})
        primary = ModelSpec('Gaussian', {'mu': [pb('x', k=20)]}, 'daily', 'primary')
        fallback = ModelSpec('Gaussian', {'mu': [linear('x')]}, 'daily', 'fallback')
        # A zero tolerance can never be met
        options = {'convergence_tolerance': 0., 'max_outer_iterations': 3}
        self.assertFalse(fit(fallback, frame, options).converged)
        with self.assertRaises(FitError):
            fit_with_fallback(primary, fallback, frame, options)

    def test_convergence_record_survives_serialization(self):
        rng = np.random.default_rng(26)
        frame = pd.DataFrame({'x': rng.random(200), 'y': rng.standard_normal(200)})
        model = fit(ModelSpec('Gaussian', {'mu': [linear('x')]}, 'daily'), frame, FAST, fallback_reason='primary failed')
        loaded = FittedModel.from_dict(json.loads(json.dumps(model.to_dict())))
        self.assertEqual(loaded.fallback_reason, 'primary failed')
        for name in ('converged', 'backfit_converged', 'stationary', 'newton_steps', 'iterations'):
            self.assertEqual(getattr(loaded, name), getattr(model, name), name)
        np.testing.assert_array_equal(loaded.covariance, model.covariance)

    def test_saved_model_predicts_the_same(self):
        rng = np.random.default_rng(6)
        x = rng.random(300)
        frame = pd.DataFrame({'x': x, 'y': x ** 2 + 0.1 * rng.standard_normal(300)})
        model = fit(ModelSpec('Gaussian', {'mu': [pb('x', k=8)]}, 'daily'), frame, FAST)
        with tempfile.TemporaryDirectory() as directory:
            path = pathlib.Path(directory) / 'model.json'
            model.save(path)
            loaded = FittedModel.load(path)
        newdata = pd.DataFrame({'x': [0.1, 0.5, 1.4]})
        pd.testing.assert_frame_equal(predict(model, newdata), predict(loaded, newdata))


class TestKde(unittest.TestCase):
    def test_by_period_cells_and_support(self):
        _, features = synthetic_features(days=30)
        model = fit_kde_frame(features.halfhourly, 'by_period')
        self.assertEqual(len(model), PERIODS_PER_DAY)
        self.assertEqual(float(model.cdf((36,), np.array([0.]))[0]), 0.)
        self.assertEqual(float(model.cdf((36,), np.array([-1.]))[0]), 0.)
        quantiles = model.quantile((36,), [0.1, 0.5, 0.9])
        self.assertTrue((np.diff(quantiles) > 0).all())
        self.assertTrue((quantiles > 0).all())

    def test_day_type_cells_and_pooling(self):
        _, features = synthetic_features(days=30)
        model = fit_kde_frame(features.halfhourly, 'by_period_and_daytype3')
        self.assertEqual(len(model), 3 * PERIODS_PER_DAY)
        sparse = fit_kde({('weekday',): [1., 2., 3.]}, 'by_daytype2')
        self.assertEqual(sparse.pooled_cells, [('weekend',)])
        np.testing.assert_array_equal(sparse.cell(('weekend',))[0], [1., 2., 3.])

    def test_truncated_kernels_integrate_to_one(self):
        model = fit_kde({('all',): [0.01, 0.02, 0.5]}, 'none')
        total, _ = integrate.quad(lambda y: float(model.pdf(('all',), np.array([y]))[0]), 0., 5., points=[0.01, 0.5])
        self.assertAlmostEqual(total, 1., places=5)

    def test_cdf_of_a_cell_and_of_a_pooled_cell(self):
        model = fit_kde({('weekday',): [0.2, 0.4, 0.9]}, 'by_daytype2')
        y = np.array([0.1, 0.4, 2.])
        values = kde_cdf(model, ('weekday',), y)
        self.assertTrue((np.diff(values) > 0).all())
        self.assertTrue(((values > 0) & (values <= 1)).all())
        np.testing.assert_allclose(kde_cdf(model, ('weekend',), y), values)
        self.assertEqual(float(kde_cdf(model, ('weekday',), np.array([0.]))[0]), 0.)


class TestTiming(unittest.TestCase):
    def test_hazard_to_pmf(self):
        np.testing.assert_allclose(hazard_to_pmf(np.array([[0.5, 0.5, 1.]])), [[0.5, 0.25, 0.25]])
        # Mass that survives the last period lands on it
        np.testing.assert_allclose(hazard_to_pmf(np.zeros(4)), [0., 0., 0., 1.])
        with self.assertRaises(DomainError):
            hazard_to_pmf(np.array([0.2, 1.2]))

    def test_hazard_consistency(self):
        hazards = np.random.default_rng(7).uniform(0.05, 0.3, size=(3, PERIODS_PER_DAY))
        recovered = hazard_consistency(hazard_to_pmf(hazards))
        np.testing.assert_allclose(recovered[:, :-1], hazards[:, :-1], rtol=1e-9)

    def test_hazard_to_pmf_matches_direct_products(self):
        hazards = np.random.default_rng(27).uniform(0., 0.2, size=(1000, PERIODS_PER_DAY))
        expected = np.empty_like(hazards)
        for row, values in enumerate(hazards):
            alive = 1.
            for period in range(PERIODS_PER_DAY - 1):
                expected[row, period] = values[period] * alive
                alive *= 1. - values[period]
            expected[row, -1] = alive
        np.testing.assert_allclose(hazard_to_pmf(hazards), expected, rtol=1e-10, atol=1e-15)

    def test_constant_hazard_is_recovered(self):
        rng = np.random.default_rng(28)
        days = 1460
        timing = np.minimum(rng.geometric(0.1, size=days), PERIODS_PER_DAY)
        peaks = DailyPeakSeries('hh1', day_range('2010-01-01', days), np.ones(days), timing, np.full(days, 0.1))
        model = fit_hazard(expand_to_person_period(peaks), 'household', FAST)
        self.assertTrue(model.converged)
        pmf = predict_timing(model, 'hh1', calendar_columns(day_range('2011-03-01', 7)))
        hazards = hazard_consistency(pmf.probabilities)[:, :10]
        self.assertLess(float(np.max(np.abs(hazards - 0.1))), 0.02)

    def test_person_period_records(self):
        peaks = DailyPeakSeries('hh1', day_range('2013-01-07', 2), [1., 1.], [3, 1], [0.1, 0.1])
        records = expand_to_person_period(peaks)
        self.assertEqual(records['period'].tolist(), [1, 2, 3, 1])
        self.assertEqual(records['event'].tolist(), [0., 0., 1., 1.])
        self.assertEqual(records['daytype2'].tolist(), ['weekday'] * 4)

    def test_pmf_rows_must_sum_to_one(self):
        with self.assertRaises(DomainError):
            TimingPmf('hh1', day_range('2013-01-01', 1), np.full((1, PERIODS_PER_DAY), 0.03), 'hazard')

    def test_climatology_concentrates_on_the_usual_period(self):
        peaks = synthetic_peaks(days=100, spread=0.)
        pmf = climatology_pmf(peaks, day_range('2013-04-20', 5))
        np.testing.assert_allclose(pmf.probabilities.sum(axis=1), 1., atol=1e-12)
        self.assertTrue((pmf.probabilities.argmax(axis=1) == 35).all())
        self.assertTrue((pmf.probabilities > 0).all())

    def test_hazard_fit_finds_the_peak_period(self):
        peaks = synthetic_peaks(days=120)
        model = fit_hazard(expand_to_person_period(peaks), 'household', FAST)
        pmf = predict_timing(model, 'hh1', calendar_columns(day_range('2013-05-01', 3)))
        modes = pmf.probabilities.argmax(axis=1) + 1
        self.assertTrue((np.abs(modes - 36) <= 3).all())

    def test_hazard_needs_enough_days(self):
        peaks = synthetic_peaks(days=30)
        with self.assertRaises(InsufficientDataError):
            fit_hazard(expand_to_person_period(peaks), 'household')


class TestForecasters(unittest.TestCase):
    def setUp(self):
        self.series, self.features = synthetic_features('fdr1', days=100, seed=8)
        self.dates = self.series.dates

    def test_simple_halfhourly_forecast(self):
        model = fit_method(self.features, 'feeder', 'halfhourly', 'simple', self.dates[:80], FAST)
        forecast = forecast_day_ahead(model, self.features, self.dates[80:], method='simple')
        self.assertIsInstance(forecast, ParametricForecast)
        self.assertEqual(len(forecast), 20 * PERIODS_PER_DAY)
        quantiles = forecast.quantiles([0.1, 0.5, 0.9])
        self.assertTrue((np.diff(quantiles, axis=1) > 0).all())
        np.testing.assert_allclose(observations(forecast, self.features), self.series.energy[80:].ravel())

    def test_days_without_lags_are_skipped(self):
        model = fit_method(self.features, 'feeder', 'halfhourly', 'simple', self.dates[:80], FAST)
        forecast = forecast_day_ahead(model, self.features, self.dates[:10], method='simple')
        self.assertEqual(len(forecast), 3 * PERIODS_PER_DAY)
        self.assertEqual(len(forecast.skipped), 7 * PERIODS_PER_DAY)

    def test_peak_forecast_is_daily(self):
        model = fit_method(self.features, 'feeder', 'peak', 'simple', self.dates[:80], FAST)
        forecast = forecast_day_ahead(model, self.features, self.dates[80:], method='simple')
        self.assertEqual(forecast.resolution, 'daily')
        self.assertEqual(len(forecast), 20)
        table = forecast.quantile_table([0.05, 0.5, 0.95])
        self.assertEqual(list(table.columns), ['method', 'node', 'date', 'period', 'q05', 'q50', 'q95'])

    def test_kde_benchmark_forecast(self):
        model = fit_method(self.features, 'household', 'halfhourly', 'kde2', self.dates[:80])
        forecast = forecast_day_ahead(model, self.features, self.dates[80:], 'halfhourly', 'kde2')
        self.assertIsInstance(forecast, KdeForecast)
        values = forecast.cdf(observations(forecast, self.features))
        self.assertTrue(((values >= 0) & (values <= 1)).all())
        self.assertTrue((forecast.quantiles([0.01]) >= 0).all())

    def test_audit_flags_same_day_inputs(self):
        spec = ModelSpec('Gaussian', {'mu': [linear('peak')]}, 'daily', target='peak')
        frame = self.features.daily
        self.assertEqual(len(audit_causality(spec, frame)), 1)
        late = frame.assign(lag1_date=frame['date'])
        self.assertEqual(len(audit_causality(ModelSpec('Gaussian', {}, 'daily', target='peak'), late)), 1)


class TestFullModels(unittest.TestCase):
    """ Full and Simple GAMLSS of a feeder and of households on the same training days. """

    @classmethod
    def setUpClass(cls):
        series, cls.feeder = synthetic_features('fdr1', days=120, seed=21)
        cls.feeder_dates = series.dates[:110]
        cls.households = [synthetic_features(f'hh{number}', days=120, seed=40 + number)[1] for number in range(3)]
        cls.household_dates = series.dates[:110]
        cls.aggregated = {}
        for kind in ('halfhourly', 'peak'):
            for method in ('full', 'simple'):
                cls.aggregated[kind, method] = fit_method(cls.feeder, 'feeder', kind, method, cls.feeder_dates, FAST)

    def household_full(self, kind: str) -> FittedModel:
        features = self.households[0]
        spec = method_spec('household', kind, 'full', features.empty_enabled)
        return fit(spec, training_rows(features, kind, self.household_dates), FAST)

    def test_aggregated_full_models_converge(self):
        for kind in ('halfhourly', 'peak'):
            model = self.aggregated[kind, 'full']
            self.assertTrue(model.converged, kind)
            self.assertIsNone(model.fallback_reason)

    def test_household_full_models_converge(self):
        for kind in ('halfhourly', 'peak'):
            model = self.household_full(kind)
            self.assertTrue(model.converged, kind)
            self.assertTrue(np.isfinite(model.final_deviance))

    def test_aggregated_halfhourly_term_groups(self):
        designs = self.aggregated['halfhourly', 'full'].designs
        self.assertEqual(len(designs['mu'].slices) + 1, 8)
        self.assertEqual(len(designs['sigma'].slices) + 1, 2)

    def test_household_shape_parameters_are_constant(self):
        for kind in ('halfhourly', 'peak'):
            designs = self.household_full(kind).designs
            self.assertEqual(designs['nu'].size, 1, kind)
            self.assertEqual(designs['tau'].size, 1, kind)

    def test_only_the_aggregated_halfhourly_annual_cycle_is_very_smooth(self):
        def annual_dims(spec: ModelSpec) -> List[int]:
            return [term.k for term in spec.formulas['mu'] if term.kind in ('pb', 'pbc') and term.covariate == 'doy']

        self.assertEqual(annual_dims(method_spec('feeder', 'halfhourly', 'full')), [6])
        for level, kind in (('household', 'halfhourly'), ('household', 'peak'), ('feeder', 'peak')):
            self.assertEqual(annual_dims(method_spec(level, kind, 'full')), [10], (level, kind))

    def test_full_models_fit_no_worse_than_simple(self):
        for kind in ('halfhourly', 'peak'):
            full = self.aggregated[kind, 'full']
            simple = self.aggregated[kind, 'simple']
            self.assertLessEqual(full.final_deviance, simple.final_deviance, kind)

    def test_most_households_keep_the_full_model(self):
        models = [fit_method(features, 'household', 'halfhourly', 'full', self.household_dates, FAST)
                  for features in self.households]
        replaced = [model.fallback_reason for model in models if model.fallback_reason is not None]
        self.assertLess(len(replaced), len(models), replaced)


class TestFusion(unittest.TestCase):
    def setUp(self):
        self.dates = day_range('2013-06-03', 2)
        self.base = gaussian_forecast('fdr1', self.dates, 1., 0.2)
        self.peak = gaussian_forecast('fdr1', self.dates, 3., 0.3, daily=True)
        self.weights = peak_weighted_pmf('fdr1', self.dates)

    def test_linear_pool(self):
        fused = fuse(self.base, self.peak, self.weights)
        y = 1.3
        expected = 0.75 * stats.norm.cdf(y, 1., 0.2) + 0.25 * stats.norm.cdf(y, 3., 0.3)
        self.assertAlmostEqual(float(fused_cdf(fused, self.dates[0], 36, y)), expected, places=12)

    def test_pool_of_two_cdf_values(self):
        # F_base = 0.4 and F_peak = 0.8 at the same y give 0.5 with w = 0.25
        y = 1.
        base = gaussian_forecast('fdr1', self.dates, y - 0.2 * stats.norm.ppf(0.4), 0.2)
        peak = gaussian_forecast('fdr1', self.dates, y - 0.3 * stats.norm.ppf(0.8), 0.3, daily=True)
        fused = fuse(base, peak, self.weights)
        self.assertAlmostEqual(float(fused_cdf(fused, self.dates[1], 36, y)), 0.5, places=10)

    def test_pooled_cdf_matches_sampling(self):
        fused = fuse(self.base, self.peak, self.weights)
        rng = np.random.default_rng(29)
        size = 200000
        from_peak = rng.random(size) < 0.25
        draws = np.where(from_peak, rng.normal(3., 0.3, size), rng.normal(1., 0.2, size))
        grid = np.array([0.8, 1.0, 1.3, 2.5, 3.2])
        empirical = (draws[:, None] <= grid[None, :]).mean(axis=0)
        np.testing.assert_allclose(fused_cdf(fused, self.dates[0], 36, grid), empirical, atol=5e-3)

    def test_pooled_cdf_lies_between_its_components(self):
        fused = fuse(self.base, self.peak, self.weights)
        grid = np.linspace(0., 4.5, 40)
        base = stats.norm.cdf(grid, 1., 0.2)
        peak = stats.norm.cdf(grid, 3., 0.3)
        for period in (1, 20, 36, 48):
            values = fused_cdf(fused, self.dates[1], period, grid)
            self.assertTrue((values >= np.minimum(base, peak) - 1e-12).all())
            self.assertTrue((values <= np.maximum(base, peak) + 1e-12).all())

    def test_quantiles_invert_the_pooled_cdf(self):
        fused = fuse(self.base, self.peak, self.weights)
        levels = np.array([0.05, 0.5, 0.8, 0.95])
        quantiles = fused_quantile(fused, self.dates[0], 36, levels)
        np.testing.assert_allclose(fused_cdf(fused, self.dates[0], 36, quantiles), levels, atol=1e-8)
        self.assertTrue((np.diff(quantiles) > 0).all())

    def test_zero_weight_keeps_the_base_forecast(self):
        row = np.zeros(PERIODS_PER_DAY)
        row[35] = 1.
        weights = TimingPmf('fdr1', self.dates, np.tile(row, (2, 1)), 'hazard')
        fused = fuse(self.base, self.peak, weights)
        np.testing.assert_allclose(fused_quantile(fused, self.dates[0], 10, [0.5]), [1.])
        np.testing.assert_allclose(fused_quantile(fused, self.dates[0], 36, [0.5]), [3.])

    def test_missing_inputs_raise(self):
        with self.assertRaises(CoverageError):
            fuse(self.base, gaussian_forecast('fdr1', self.dates[:1], 3., 0.3, daily=True), self.weights)
        with self.assertRaises(CoverageError):
            fuse(self.base, gaussian_forecast('fdr2', self.dates, 3., 0.3, daily=True), self.weights)
        with self.assertRaises(CoverageError):
            fuse(self.base, self.peak, self.weights.restrict(self.dates[1:]))


class TestVerification(unittest.TestCase):
    def test_gaussian_crps_reference_value(self):
        self.assertAlmostEqual(float(crps_gaussian(0., 1., 0.)), 0.2336950, places=6)
        with self.assertRaises(DomainError):
            crps_gaussian(0., 0., 1.)

    def test_quantile_crps_matches_closed_form(self):
        levels = crps_levels(999)
        quantiles = stats.norm.ppf(levels)[None, :]
        for y in (0., 0.3, -1.7):
            self.assertAlmostEqual(float(crps_quantile(quantiles, [y], levels)[0]),
                                   float(crps_gaussian(0., 1., y)), delta=1e-3)

    def test_crps_of_skewed_forecast_matches_integral(self):
        dates = day_range('2013-01-01', 1)
        index = pd.DataFrame({'date': pd.to_datetime(dates.astype('datetime64[ns]'))})
        params = {'mu': np.array([1.]), 'sigma': np.array([4.]), 'nu': np.array([1.]), 'tau': np.array([1.])}
        forecast = ParametricForecast('hh1', 'full', 'daily', index, 'GeneralisedBetaPrime', params)
        family = get_family('GeneralisedBetaPrime')
        y = 1.4
        below, _ = integrate.quad(lambda x: float(family.cdf(params, x)[0]) ** 2, 0., y)
        above, _ = integrate.quad(lambda x: (1. - float(family.cdf(params, x)[0])) ** 2, y, np.inf)
        self.assertAlmostEqual(float(crps(forecast, np.array([y]))[0]), below + above, delta=2e-3)
        coarse = float(crps(forecast, np.array([y]), n_levels=999)[0])
        fine = float(crps(forecast, np.array([y]), n_levels=9999)[0])
        self.assertLess(abs(coarse - fine), 5e-4)
        self.assertAlmostEqual(fine, below + above, delta=2e-3)

    def test_rps(self):
        pmf = np.array([0., 1., 0., 0.])
        self.assertEqual(float(rps(pmf, 2)[0]), 0.)
        self.assertEqual(float(rps(pmf, 3)[0]), 1.)
        with self.assertRaises(DomainError):
            rps(pmf, 5)

    def test_rps_lies_between_zero_and_forty_seven(self):
        rng = np.random.default_rng(30)
        pmfs = rng.dirichlet(np.full(PERIODS_PER_DAY, 0.3), size=1000)
        scores = rps(pmfs, rng.integers(1, PERIODS_PER_DAY + 1, size=1000))
        self.assertTrue(((scores >= 0) & (scores <= PERIODS_PER_DAY - 1)).all())
        first = np.zeros(PERIODS_PER_DAY)
        first[0] = 1.
        self.assertAlmostEqual(float(rps(first, PERIODS_PER_DAY)[0]), 47.)
        self.assertAlmostEqual(float(rps(first[::-1], 1)[0]), 47.)

    def test_skill(self):
        self.assertAlmostEqual(skill(8., 10.), 0.2)
        with self.assertRaises(ValueError):
            skill(1., 0.)

    def test_bootstrap_is_seeded(self):
        rng = np.random.default_rng(9)
        scores = rng.random(200)
        reference = scores + 0.1
        first = bootstrap_skill(scores, reference, 50, seed=11)
        np.testing.assert_array_equal(first, bootstrap_skill(scores, reference, 50, seed=11))
        self.assertTrue((first > 0).all())
        np.testing.assert_allclose(bootstrap_skill(scores, scores, 20, seed=1), 0.)

    def test_bootstrap_of_a_single_time(self):
        resampled = bootstrap_skill(np.array([2.]), np.array([4.]), 30, seed=3)
        self.assertEqual(len(resampled), 30)
        np.testing.assert_allclose(resampled, 0.5)

    def test_pit_of_calibrated_forecast_is_flat(self):
        dates = day_range('2013-01-01', 40)
        forecast = gaussian_forecast('fdr1', dates, 1., 0.2)
        y = np.random.default_rng(12).normal(1., 0.2, size=len(forecast))
        _, counts = pit(forecast, y, bins=10)
        self.assertEqual(int(counts.sum()), len(forecast))
        self.assertGreater(stats.chisquare(counts).pvalue, 1e-3)

    def test_pit_uniformity_at_ten_thousand_forecasts(self):
        dates = day_range('1990-01-01', 10000)
        rng = np.random.default_rng(31)
        y = rng.normal(1., 0.2, size=10000)
        _, counts = pit(gaussian_forecast('fdr1', dates, 1., 0.2, daily=True), y, bins=20)
        self.assertEqual(len(counts), 20)
        self.assertGreater(stats.chisquare(counts).pvalue, 0.01)
        _, narrow = pit(gaussian_forecast('fdr1', dates, 1., 0.1, daily=True), y, bins=20)
        self.assertLess(stats.chisquare(narrow).pvalue, 0.01)

    def test_report_subsets_and_persistence(self):
        dates = day_range('2013-01-01', 3)
        peaks = DailyPeakSeries('fdr1', dates, np.ones(3), np.array([36, 36, 20]), np.full(3, 0.1))
        forecast = gaussian_forecast('fdr1', dates, 1., 0.2)
        y = np.full(len(forecast), 1.1)
        frame = score_frame(forecast, y, 'feeder', 'halfhourly', 'test')
        self.assertEqual(len(peak_subset(frame, peaks)), 3)
        report = ScoreReport.from_scores([frame], {'fdr1': peaks})
        self.assertEqual(sorted(report.scores['subset'].unique()), ['all', 'peaks'])
        report.add_bootstrap('self', 'full', 'full', 10, 0, subset='all')
        with tempfile.TemporaryDirectory() as directory:
            report.save(directory)
            loaded = ScoreReport.load(directory)
        self.assertEqual(len(loaded.scores), len(report.scores))
        np.testing.assert_allclose(loaded.bootstrap['self'], 0.)


class TestCommandLine(unittest.TestCase):
    def test_parser(self):
        args = build_parser().parse_args(['--jobs', '2', 'fit', '--level', 'household', '--method', 'kde1'])
        self.assertEqual((args.command, args.level, args.method, args.jobs), ('fit', 'household', 'kde1', 2))
        with contextlib.redirect_stderr(io.StringIO()), self.assertRaises(SystemExit):
            build_parser().parse_args(['fuse', '--level', 'street'])

    def test_partition_labels(self):
        self.assertEqual([partition_label(name) for name in ('test', 'cv1', 'cv2')], ['test', 'cv', 'cv'])

    def test_missing_artifacts_are_fatal(self):
        with tempfile.TemporaryDirectory() as directory:
            config_path = pathlib.Path(directory) / 'config.json'
            config_path.write_text(json.dumps({
                'seed': 1, 'evaluation_seed': 2, 'output_dir': str(pathlib.Path(directory) / 'out'),
                'logging_level': 'CRITICAL'
            }))
            buffer = io.StringIO()
            with contextlib.redirect_stderr(buffer):
                code = main(['--config', str(config_path), 'fuse'])
        self.assertEqual(code, EXIT_FATAL)
        self.assertEqual(json.loads(buffer.getvalue().strip().splitlines()[-1])['error'], 'ArtifactError')

    def test_config_validation(self):
        config = ExperimentConfig(seed=None, evaluation_seed=1, jobs=0)
        with self.assertRaises(ConfigError) as context:
            config.validate(require_data=False)
        self.assertEqual(len(context.exception.problems), 2)
        with tempfile.TemporaryDirectory() as directory:
            path = pathlib.Path(directory) / 'config.json'
            path.write_text(json.dumps({'config_version': 99}))
            with self.assertRaises(ConfigError):
                ExperimentConfig.from_json(str(path))
            path.write_text(json.dumps({'no_such_option': 1}))
            with self.assertRaises(ConfigError):
                ExperimentConfig.from_json(str(path))

    def test_missing_config_file_is_an_error(self):
        with tempfile.TemporaryDirectory() as directory:
            missing = str(pathlib.Path(directory) / 'absent.json')
            with self.assertRaises(ConfigError):
                ExperimentConfig.from_json(missing)
            broken = pathlib.Path(directory) / 'broken.json'
            broken.write_text('{"seed": 1,')
            with self.assertRaises(ConfigError):
                ExperimentConfig.from_json(str(broken))
            buffer = io.StringIO()
            with contextlib.redirect_stderr(buffer):
                code = main(['--config', missing, 'build'])
        self.assertEqual(code, EXIT_FATAL)
        self.assertEqual(json.loads(buffer.getvalue().strip().splitlines()[-1])['error'], 'ConfigError')

    def test_serial_and_parallel_runs_agree(self):
        with tempfile.TemporaryDirectory() as directory:
            directory = pathlib.Path(directory)
            data_path = directory / 'meters.csv'
            write_meter_csv(data_path)
            serial_codes, serial = run_pipeline(directory, data_path, jobs=1)
            parallel_codes, parallel = run_pipeline(directory, data_path, jobs=2)
            self.assertEqual(serial_codes, [EXIT_OK] * 5)
            self.assertEqual(parallel_codes, [EXIT_OK] * 5)
            tables = sorted(str(path.relative_to(serial)) for path in serial.rglob('*.csv'))
            self.assertEqual(tables, sorted(str(path.relative_to(parallel)) for path in parallel.rglob('*.csv')))
            self.assertIn('scores/pit_histograms.csv', tables)
            for name in tables:
                pd.testing.assert_frame_equal(
                    pd.read_csv(serial / name), pd.read_csv(parallel / name), check_exact=False, rtol=1e-6
                )
            manifests = [json.loads((output / 'hierarchy.json').read_text()) for output in (serial, parallel)]
            self.assertEqual(manifests[0], manifests[1])
