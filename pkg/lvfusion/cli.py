#!/usr/bin/env python
# -*- coding: utf-8 -*-
from __future__ import annotations

import argparse
import json
import logging
import pathlib
import sys
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .config import ExperimentConfig
from .constants import ARTIFACTS, LEVELS, SKILL_REFERENCE
from .dataset import DailyPeakSeries, DataPartition, FeatureFrame, as_dates, build_features, clean, \
    detect_empty_house, extract_daily_peaks, ingest_csv, partition, synthesize_hierarchy
from .forecasters import KDE_CONDITIONING, DensityForecast, ParametricForecast, coefficient_of_variation, \
    fit_method, forecast_day_ahead, level_group, observations
from .fusion import fuse, fusion_weights_frame
from .gamlss import FittedModel
from .kde import KdeModel
from .timing import TimingPmf, climatology_pmf, expand_to_person_period, fit_hazard, predict_timing
from .utils import ArtifactError, ConfigError, CoverageError, DatasetError, DomainError, FitError, \
    configure_logging
from .verification import SCORE_COLUMNS, ScoreReport, hourly_profile, level_pit, level_summary, pit_uniformity, \
    pit_values, score_frame, skill_table, timing_rps
from .version import __version__

# Fit days and forecast days of every evaluation partition
PARTITIONS = ('test', 'cv1', 'cv2')

NODE_ERRORS = (ArtifactError, CoverageError, DatasetError, DomainError, FitError, np.linalg.LinAlgError)

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2


def partition_label(name: str) -> str:
    return 'test' if name == 'test' else 'cv'


def _restrict_peaks(peaks: DailyPeakSeries, dates: np.ndarray) -> DailyPeakSeries:
    keep = np.isin(peaks.dates, as_dates(dates))
    return DailyPeakSeries(peaks.node_id, peaks.dates[keep], peaks.peak[keep], peaks.timing[keep], peaks.std[keep])


def _guarded(job: Callable[..., Any], node: str, level: str) -> Tuple[str, Any, Optional[str]]:
    try:
        return node, job(node, level), None
    except NODE_ERRORS as exc:
        logging.warning(f'{node}: {type(exc).__name__}: {exc}')
        return node, None, f'{type(exc).__name__}: {exc}'


class ExperimentRunner(object):
    """
    Runs the experiment stages against the artifact directory named by the config.

    Every stage reads only the artifacts written by earlier stages, so stages can be rerun
    individually. Per-node work is spread over `config.jobs` workers.
    """

    def __init__(self, config: ExperimentConfig) -> None:
        self.config = config
        self.root = pathlib.Path(config.output_dir).expanduser()

    def path(self, artifact: str, *parts: str) -> pathlib.Path:
        return self.root.joinpath(ARTIFACTS[artifact], *parts)

    @staticmethod
    def require(path: pathlib.Path, producer: str) -> pathlib.Path:
        if not path.exists():
            raise ArtifactError(f'Missing artifact `{path}`; run `lvfusion {producer}` first')
        return path

    def run_nodes(self, job: Callable[[str, str], Any], nodes: Sequence[Tuple[str, str]]) -> Dict[str, Any]:
        """ Run `job(node, level)` for every node; failures are logged and collected, not raised. """
        outcomes = Parallel(n_jobs=self.config.jobs)(delayed(_guarded)(job, node, level) for node, level in nodes)
        results = {node: result for node, result, error in outcomes if error is None}
        failures = {node: error for node, _, error in outcomes if error is not None}
        return {'results': results, 'failures': failures}

    # Build

    def build(self) -> Dict[str, Any]:
        timezone = self.config.local_timezone
        report = ingest_csv(self.config.data_path, self.config.schema, timezone, self.config.variable_tariff_values)
        households = clean(report.series, self.config.year, timezone)
        hierarchy = synthesize_hierarchy(households, self.config.seed, self.config.hierarchy_limits)
        self.root.mkdir(parents=True, exist_ok=True)
        hierarchy.save_manifest(self.path('manifest'))

        features_dir = self.path('features')
        peaks_dir = self.path('peaks')
        peaks_dir.mkdir(parents=True, exist_ok=True)
        empty_nodes = 0
        for node in hierarchy.nodes():
            series = hierarchy.series[node]
            peaks = extract_daily_peaks(series)
            empty = None
            if hierarchy.levels[node] == 'household':
                empty = detect_empty_house(peaks, **self.config.empty_house)
                empty_nodes += int(empty.any())
            build_features(series, peaks, empty).save(features_dir)
            peaks.to_frame().to_csv(peaks_dir / f'{node}.csv', index=False, date_format='%Y-%m-%d')

        primary = hierarchy.nodes('primary')[0]
        blocks = partition(hierarchy.series[primary].dates)
        blocks.blocks.to_csv(self.root / 'partition.csv', index=False, date_format='%Y-%m-%d')
        summary = dict(report.summary(), households=len(hierarchy.nodes('household')), empty_house_nodes=empty_nodes)
        self.path('reports').mkdir(parents=True, exist_ok=True)
        with open(self.path('reports', 'build.json'), 'w') as fp:
            json.dump(summary, fp, indent=2, sort_keys=True)
        logging.info(f'Built {len(hierarchy.nodes())} nodes into `{self.root}`')
        return summary

    # Artifact readers

    def manifest(self) -> Dict[str, Any]:
        with open(self.require(self.path('manifest'), 'build'), 'r') as fp:
            return json.load(fp)

    def nodes(self, level: Optional[str] = None) -> List[Tuple[str, str]]:
        return [
            (entry['id'], entry['level']) for entry in self.manifest()['nodes']
            if level is None or entry['level'] == level
        ]

    def features(self, node: str) -> FeatureFrame:
        self.require(self.path('features', f'{node}_daily.csv'), 'build')
        return FeatureFrame.load(self.path('features'), node)

    def peaks(self, node: str) -> DailyPeakSeries:
        frame = pd.read_csv(self.require(self.path('peaks', f'{node}.csv'), 'build'), parse_dates=['date'])
        return DailyPeakSeries.from_frame(frame, node)

    def partition(self) -> DataPartition:
        blocks = pd.read_csv(self.require(self.root / 'partition.csv', 'build'), parse_dates=['date'])
        return DataPartition(blocks)

    def split(self, name: str) -> Tuple[np.ndarray, np.ndarray]:
        """ (fit days, forecast days) of a partition. """
        blocks = self.partition()
        if name == 'test':
            return blocks.train_dates, blocks.test_dates
        folds = blocks.cv_folds()
        return folds[int(name[-1]) - 1]

    def methods(self, level: str, kind: str, method: Optional[str] = None) -> List[str]:
        roster = self.config.roster[level_group(level)][kind]
        return [name for name in roster if method is None or name == method]

    def model_path(self, partition_name: str, node: str, kind: str, method: str) -> pathlib.Path:
        return self.path('models', partition_name, node, f'{kind}-{method}.json')

    def load_model(self, partition_name: str, node: str, kind: str, method: str) -> Union[FittedModel, KdeModel]:
        path = self.require(self.model_path(partition_name, node, kind, method), 'fit')
        with open(path, 'r') as fp:
            data = json.load(fp)
        if 'conditioning' in data:
            return KdeModel.from_dict(data)
        return FittedModel.from_dict(data)

    def forecast_path(self, partition_name: str, node: str, name: str) -> pathlib.Path:
        return self.path('forecasts', partition_name, node, f'{name}.csv')

    def load_forecast(self, partition_name: str, node: str, level: str, kind: str, method: str) -> DensityForecast:
        if method in KDE_CONDITIONING[kind]:
            _, target_dates = self.split(partition_name)
            model = self.load_model(partition_name, node, kind, method)
            return forecast_day_ahead(model, self.features(node), target_dates, kind, method)
        frame = pd.read_csv(self.require(self.forecast_path(partition_name, node, f'{kind}-{method}'), 'forecast'))
        return ParametricForecast.from_frame(frame, method)

    def load_timing(self, partition_name: str, node: str, method: str) -> TimingPmf:
        path = self.require(self.forecast_path(partition_name, node, f'timing-{method}'), 'forecast')
        return TimingPmf.from_frame(pd.read_csv(path, parse_dates=['date']), method)

    def fusion_timing(self, partition_name: str, node: str) -> TimingPmf:
        """ Hazard pmf when the hazard model fitted and converged, the climatology otherwise. """
        path = self.model_path(partition_name, node, 'timing', 'hazard')
        if path.exists() and self.forecast_path(partition_name, node, 'timing-hazard').exists():
            model = FittedModel.load(path)
            if model.converged:
                return self.load_timing(partition_name, node, 'hazard')
            logging.warning(f'{node}: hazard model did not converge, fusing with the climatology')
        return self.load_timing(partition_name, node, 'climatology')

    # Fit

    def fit_node(self, node: str, level: str, method: Optional[str] = None) -> Dict[str, Any]:
        features = self.features(node)
        peaks = self.peaks(node)
        options = self.config.fit_options()
        fallbacks = []
        for partition_name in PARTITIONS:
            fit_dates, _ = self.split(partition_name)
            directory = self.path('models', partition_name, node)
            directory.mkdir(parents=True, exist_ok=True)
            for kind in ('halfhourly', 'peak'):
                for name in self.methods(level, kind, method):
                    model = fit_method(features, level, kind, name, fit_dates, options, self.config.basis_dims)
                    if isinstance(model, KdeModel):
                        with open(self.model_path(partition_name, node, kind, name), 'w') as fp:
                            json.dump(model.to_dict(), fp)
                        continue
                    model.save(self.model_path(partition_name, node, kind, name))
                    if model.fallback_reason:
                        fallbacks.append((partition_name, kind, name, model.fallback_reason))
            if 'hazard' in self.methods(level, 'timing', method):
                records = expand_to_person_period(_restrict_peaks(peaks, fit_dates), features.daily)
                path = self.model_path(partition_name, node, 'timing', 'hazard')
                try:
                    model = fit_hazard(records, level, options, self.config.basis_dims)
                except (FitError, DomainError) as exc:
                    logging.warning(f'{node}: hazard fit failed ({exc}), the climatology stands in')
                    fallbacks.append((partition_name, 'timing', 'hazard', str(exc)))
                    path.unlink(missing_ok=True)
                    continue
                if not model.converged:
                    fallbacks.append((partition_name, 'timing', 'hazard', 'did not converge'))
                model.save(path)
        return {'fallbacks': fallbacks}

    def fit(self, level: Optional[str] = None, method: Optional[str] = None) -> Dict[str, Any]:
        outcome = self.run_nodes(lambda node, node_level: self.fit_node(node, node_level, method), self.nodes(level))
        roster = [
            {'node': node, 'partition': partition_name, 'kind': kind, 'method': name, 'reason': reason}
            for node, result in outcome['results'].items()
            for partition_name, kind, name, reason in result['fallbacks']
        ]
        self.path('reports').mkdir(parents=True, exist_ok=True)
        pd.DataFrame(roster, columns=['node', 'partition', 'kind', 'method', 'reason']).to_csv(
            self.path('reports', 'fallbacks.csv'), index=False
        )
        replaced = sorted({entry['node'] for entry in roster if entry['kind'] != 'timing'})
        logging.info(f'Fitted {len(outcome["results"])} nodes, {len(replaced)} used a fallback model')
        return dict(outcome, fallback_nodes=replaced)

    # Forecast

    def forecast_node(self, node: str, level: str, method: Optional[str] = None) -> int:
        features = self.features(node)
        peaks = self.peaks(node)
        written = 0
        for partition_name in PARTITIONS:
            fit_dates, target_dates = self.split(partition_name)
            directory = self.path('forecasts', partition_name, node)
            directory.mkdir(parents=True, exist_ok=True)
            for kind in ('halfhourly', 'peak'):
                for name in self.methods(level, kind, method):
                    model = self.load_model(partition_name, node, kind, name)
                    forecast = forecast_day_ahead(model, features, target_dates, kind, name)
                    if isinstance(forecast, ParametricForecast):
                        forecast.to_frame().to_csv(
                            self.forecast_path(partition_name, node, f'{kind}-{name}'), index=False, date_format='%Y-%m-%d'
                        )
                    forecast.quantile_table(self.config.quantile_levels).to_csv(
                        self.forecast_path(partition_name, node, f'{kind}-{name}_quantiles'), index=False, date_format='%Y-%m-%d'
                    )
                    written += 1
            daily = features.daily[np.isin(as_dates(features.daily['date']), target_dates)].reset_index(drop=True)
            timing_methods = self.methods(level, 'timing', method)
            if 'hazard' in timing_methods and self.model_path(partition_name, node, 'timing', 'hazard').exists():
                pmf = predict_timing(FittedModel.load(self.model_path(partition_name, node, 'timing', 'hazard')), node, daily)
                pmf.to_frame().to_csv(self.forecast_path(partition_name, node, 'timing-hazard'), index=False, date_format='%Y-%m-%d')
                written += 1
            # The climatology is always written as it stands in for failed hazard fits
            pmf = climatology_pmf(_restrict_peaks(peaks, fit_dates), target_dates)
            pmf.to_frame().to_csv(self.forecast_path(partition_name, node, 'timing-climatology'), index=False, date_format='%Y-%m-%d')
            written += 1
        return written

    def forecast(self, level: Optional[str] = None, method: Optional[str] = None) -> Dict[str, Any]:
        return self.run_nodes(lambda node, node_level: self.forecast_node(node, node_level, method), self.nodes(level))

    # Fuse

    def fused_forecast(self, partition_name: str, node: str, level: str):
        base = self.load_forecast(partition_name, node, level, 'halfhourly', 'full')
        peak = self.load_forecast(partition_name, node, level, 'peak', 'full')
        weights = self.fusion_timing(partition_name, node).restrict(base.dates)
        return fuse(base, peak, weights)

    def fuse_node(self, node: str, level: str) -> int:
        for partition_name in PARTITIONS:
            fused = self.fused_forecast(partition_name, node, level)
            directory = self.path('fused', partition_name, node)
            directory.mkdir(parents=True, exist_ok=True)
            fused.quantile_table(self.config.quantile_levels).to_csv(
                directory / 'fusion_quantiles.csv', index=False, date_format='%Y-%m-%d'
            )
            fusion_weights_frame(fused).to_csv(directory / 'fusion_weights.csv', index=False, date_format='%Y-%m-%d')
        return len(PARTITIONS)

    def fuse(self, level: Optional[str] = None) -> Dict[str, Any]:
        return self.run_nodes(self.fuse_node, self.nodes(level))

    # Evaluate

    def evaluate_node(self, node: str, level: str) -> Dict[str, pd.DataFrame]:
        features = self.features(node)
        peaks = self.peaks(node)
        scores = []
        pits = []
        for partition_name in PARTITIONS:
            label = partition_label(partition_name)
            self.require(self.path('fused', partition_name, node, 'fusion_quantiles.csv'), 'fuse')
            forecasts = []
            for kind in ('halfhourly', 'peak'):
                for name in self.methods(level, kind):
                    forecasts.append((kind, self.load_forecast(partition_name, node, level, kind, name)))
            forecasts.append(('halfhourly', self.fused_forecast(partition_name, node, level)))
            for kind, forecast in forecasts:
                y = observations(forecast, features)
                scores.append(score_frame(forecast, y, level, kind, label, self.config.crps_levels))
                if kind == 'halfhourly' and label == 'test':
                    observed = np.isfinite(y)
                    pits.append(pd.DataFrame({
                        'node': node, 'level': level, 'method': forecast.method,
                        'pit': pit_values(forecast, y[observed], np.flatnonzero(observed))
                    }))
            _, target_dates = self.split(partition_name)
            target_peaks = _restrict_peaks(peaks, target_dates)
            for name in self.methods(level, 'timing'):
                path = self.forecast_path(partition_name, node, f'timing-{name}')
                if not path.exists():
                    continue
                table = timing_rps(self.load_timing(partition_name, node, name), target_peaks)
                scores.append(table.assign(
                    node=node, level=level, kind='timing', method=name, partition=label, period=0
                )[SCORE_COLUMNS])
        return {
            'scores': pd.concat(scores, ignore_index=True),
            'pit': pd.concat(pits, ignore_index=True) if pits else pd.DataFrame(columns=['node', 'level', 'method', 'pit']),
            'variability': pd.DataFrame([{'node': node, 'level': level, 'cv': coefficient_of_variation(features)}])
        }

    def evaluate(self, level: Optional[str] = None) -> Dict[str, Any]:
        nodes = self.nodes(level)
        outcome = self.run_nodes(self.evaluate_node, nodes)
        results = outcome['results']
        if not results:
            return outcome
        peaks = {node: self.peaks(node) for node in results}
        report = ScoreReport.from_scores([results[node]['scores'] for node in sorted(results)], peaks)
        for node, node_level in nodes:
            if node not in results:
                continue
            references = SKILL_REFERENCE[level_group(node_level)]
            comparisons = [
                ('halfhourly', 'all', 'fusion', 'full'),
                ('halfhourly', 'peaks', 'fusion', 'full'),
                ('halfhourly', 'all', 'full', references['halfhourly']),
                ('halfhourly', 'peaks', 'full', references['halfhourly']),
                ('peak', 'all', 'full', references['peak']),
                ('timing', 'all', 'hazard', references['timing'])
            ]
            for kind, subset, method, reference in comparisons:
                report.add_bootstrap(
                    f'{node}/{kind}/{subset}/{method}-vs-{reference}', reference, method,
                    self.config.bootstrap_resamples, self.config.evaluation_seed,
                    node=node, kind=kind, subset=subset, partition='test'
                )
        report.save(self.path('scores'))
        pit_frames = [results[node]['pit'] for node in sorted(results)]
        level_pit(pit_frames, self.config.pit_bins).to_csv(self.path('scores', 'pit_histograms.csv'), index=False)
        pd.concat([results[node]['variability'] for node in sorted(results)], ignore_index=True).to_csv(
            self.path('scores', 'variability.csv'), index=False
        )
        self.report()
        return outcome

    # Report

    def report(self) -> Dict[str, Any]:
        report = ScoreReport.load(self.require(self.path('scores'), 'evaluate'))
        directory = self.path('reports')
        directory.mkdir(parents=True, exist_ok=True)
        summary = level_summary(report)
        summary.to_csv(directory / 'level_summary.csv', index=False)
        skills = skill_table(report, SKILL_REFERENCE)
        skills.to_csv(directory / 'skill.csv', index=False)
        hourly_profile(report).to_csv(directory / 'hourly_profile.csv', index=False)

        histograms_path = self.path('scores', 'pit_histograms.csv')
        if histograms_path.exists():
            histograms = pd.read_csv(histograms_path)
            uniformity = [
                {'level': level, 'method': method, 'p_value': pit_uniformity(group.sort_values('bin')['count'].to_numpy())}
                for (level, method), group in histograms.groupby(['level', 'method'])
            ]
            pd.DataFrame(uniformity, columns=['level', 'method', 'p_value']).to_csv(
                directory / 'pit_uniformity.csv', index=False
            )

        variability = pd.read_csv(self.require(self.path('scores', 'variability.csv'), 'evaluate'))
        means = report.means()
        means = means[(means['kind'] == 'halfhourly') & (means['partition'] == 'test') & (means['subset'] == 'all')]
        pivot = means.pivot_table(index='node', columns='method', values='mean')
        rows = []
        for record in variability.to_dict('records'):
            node = record['node']
            value = np.nan
            if node in pivot.index and {'fusion', 'full'} <= set(pivot.columns) and pivot.loc[node, 'full'] > 0:
                value = 1. - pivot.loc[node, 'fusion'] / pivot.loc[node, 'full']
            rows.append(dict(record, fusion_vs_full_skill=value))
        pd.DataFrame(rows).to_csv(directory / 'skill_vs_variability.csv', index=False)

        fallbacks_path = directory / 'fallbacks.csv'
        fallbacks = pd.read_csv(fallbacks_path) if fallbacks_path.exists() else pd.DataFrame(columns=['node'])
        model_fallbacks = fallbacks[fallbacks['kind'] != 'timing'] if 'kind' in fallbacks.columns else fallbacks
        logging.info(
            f'Report: {len(summary)} level rows, {fallbacks["node"].nunique()} nodes with fallbacks, '
            f'{len(skills)} skill values'
        )
        return {
            'level_summary': summary.to_dict('records'),
            'fallback_nodes': sorted(model_fallbacks['node'].unique().tolist())
        }


def cmd_build(config: ExperimentConfig) -> Dict[str, Any]:
    return ExperimentRunner(config).build()


def cmd_fit(config: ExperimentConfig, level: Optional[str] = None, method: Optional[str] = None) -> Dict[str, Any]:
    return ExperimentRunner(config).fit(level, method)


def cmd_forecast(config: ExperimentConfig, level: Optional[str] = None, method: Optional[str] = None) -> Dict[str, Any]:
    return ExperimentRunner(config).forecast(level, method)


def cmd_fuse(config: ExperimentConfig, level: Optional[str] = None) -> Dict[str, Any]:
    return ExperimentRunner(config).fuse(level)


def cmd_evaluate(config: ExperimentConfig, level: Optional[str] = None) -> Dict[str, Any]:
    return ExperimentRunner(config).evaluate(level)


def cmd_report(config: ExperimentConfig) -> Dict[str, Any]:
    return ExperimentRunner(config).report()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='lvfusion', description='Day-ahead probabilistic LV load forecasting')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    parser.add_argument('--config', type=str, default=None, help='Path to the experiment config JSON')
    parser.add_argument('--jobs', type=int, default=None, help='Worker pool size for per-node jobs')
    parser.add_argument('--seed', type=int, default=None, help='Override the hierarchy seed')
    commands = parser.add_subparsers(dest='command', required=True)
    commands.add_parser('build', help='Ingest, clean, synthesize the hierarchy and build features')
    for name, text in (('fit', 'Fit the forecasting models'), ('forecast', 'Write day-ahead forecasts')):
        command = commands.add_parser(name, help=text)
        command.add_argument('--level', choices=LEVELS, default=None)
        command.add_argument('--method', type=str, default=None)
    for name, text in (('fuse', 'Fuse half-hourly and peak forecasts'), ('evaluate', 'Score every forecast')):
        command = commands.add_parser(name, help=text)
        command.add_argument('--level', choices=LEVELS, default=None)
    commands.add_parser('report', help='Rebuild the report tables from the scores')
    return parser


def _emit_error(exc: Exception) -> None:
    details = getattr(exc, 'problems', None) or [str(cell) for cell in getattr(exc, 'missing', [])]
    json.dump({'error': type(exc).__name__, 'message': str(exc), 'details': details}, sys.stderr)
    sys.stderr.write('\n')


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = ExperimentConfig.from_json(args.config)
        if args.seed is not None:
            config.seed = args.seed
        if args.jobs is not None:
            config.jobs = args.jobs
        configure_logging(config.logging_level)
        config.validate(require_data=args.command == 'build')
        level = getattr(args, 'level', None)
        method = getattr(args, 'method', None)
        if args.command == 'build':
            cmd_build(config)
            return EXIT_OK
        if args.command == 'report':
            cmd_report(config)
            return EXIT_OK
        if args.command == 'fit':
            outcome = cmd_fit(config, level, method)
        elif args.command == 'forecast':
            outcome = cmd_forecast(config, level, method)
        elif args.command == 'fuse':
            outcome = cmd_fuse(config, level)
        else:
            outcome = cmd_evaluate(config, level)
    except (ArtifactError, ConfigError, CoverageError, DatasetError, DomainError, FitError) as exc:
        _emit_error(exc)
        return EXIT_FATAL
    failures = outcome['failures']
    if failures:
        json.dump({'error': 'PartialFailure', 'message': f'{len(failures)} nodes failed',
                   'details': [f'{node}: {error}' for node, error in sorted(failures.items())]}, sys.stderr)
        sys.stderr.write('\n')
        return EXIT_FATAL if not outcome['results'] else EXIT_PARTIAL
    return EXIT_OK
