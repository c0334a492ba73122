#!/usr/bin/env python
# -*- coding: utf-8 -*-
from __future__ import annotations

import copy
import json
import logging
import pathlib
from typing import Any, Dict, List, Optional, Sequence

import appdirs
import tzlocal

from .constants import BASIS_DIMS, BOOTSTRAP_RESAMPLES, CONFIG_VERSION, CRPS_LEVELS, DEFAULT_SCHEMA, \
    EMPTY_HOUSE, FIT_DEFAULTS, HIERARCHY_LIMITS, PIT_BINS, QUANTILE_LEVELS, ROSTER, VARIABLE_TARIFF_VALUES
from .utils import ConfigError


def default_config_file() -> str:
    return str(pathlib.Path(appdirs.user_config_dir('lvfusion')) / 'config.json')


class ExperimentConfig(object):
    """
    Configuration abstraction for an lvfusion experiment.

    Arguments:

    data_path:              Smart meter CSV export to ingest
    schema:                 Column map with keys meter_id, timestamp, energy and optionally tariff
    variable_tariff_values: Tariff column values that mark a meter as variable-price
    year:                   Calendar year a meter must cover completely to be retained
    timezone:               Local clock timezone of the timestamps, None uses the machine's zone
    seed:                   Seed for hierarchy sampling, mandatory
    hierarchy_limits:       feeders_per_ss and hh_per_feeder as [min, max] pairs
    empty_house:            eps (kWh), min_run (days) and min_total (days) for the empty-house rule
    gbp_floor:              Lowest kWh value passed to Generalised Beta Prime fits
    min_rows_per_coef:      Row guard per model resolution ('halfhourly', 'daily')
    max_outer_iterations:   Back-fitting cycle limit
    max_inner_iterations:   Penalized IRLS step limit per parameter and cycle
    convergence_tolerance:  Relative deviance change that ends back-fitting
    polish:                 Run the joint penalized likelihood polish after back-fitting
    fixed_edf:              Optional {covariate: edf} targets replacing GCV for matching smooths
    basis_dims:             Basis dimension per smooth role
    roster:                 Methods per level group and forecast kind
    bootstrap_resamples:    Bootstrap resamples per skill comparison
    evaluation_seed:        Seed for bootstrap resampling, mandatory
    crps_levels:            Quantile levels used by the quantile-decomposition CRPS
    pit_bins:               Bins of the PIT histograms
    quantile_levels:        Levels written to quantile (fan chart) tables
    jobs:                   Worker pool size for per-node jobs
    output_dir:             Directory receiving every artifact
    logging_level:          Root logger level
    config_file:            Path to the config file
    """

    def __init__(
            self,
            data_path: Optional[str] = None,
            schema: Optional[Dict[str, str]] = None,
            variable_tariff_values: Optional[Sequence[str]] = None,
            year: int = 2013,
            timezone: Optional[str] = None,
            seed: Optional[int] = None,
            hierarchy_limits: Optional[Dict[str, Sequence[int]]] = None,
            empty_house: Optional[Dict[str, float]] = None,
            gbp_floor: float = FIT_DEFAULTS['gbp_floor'],
            min_rows_per_coef: Optional[Dict[str, float]] = None,
            max_outer_iterations: int = FIT_DEFAULTS['max_outer_iterations'],
            max_inner_iterations: int = FIT_DEFAULTS['max_inner_iterations'],
            convergence_tolerance: float = FIT_DEFAULTS['convergence_tolerance'],
            polish: bool = FIT_DEFAULTS['polish'],
            fixed_edf: Optional[Dict[str, float]] = None,
            basis_dims: Optional[Dict[str, Any]] = None,
            roster: Optional[Dict[str, Dict[str, Sequence[str]]]] = None,
            bootstrap_resamples: int = BOOTSTRAP_RESAMPLES,
            evaluation_seed: Optional[int] = None,
            crps_levels: int = CRPS_LEVELS,
            pit_bins: int = PIT_BINS,
            quantile_levels: Optional[Sequence[float]] = None,
            jobs: int = 1,
            output_dir: str = 'lvfusion-output',
            logging_level: str = 'INFO',
            config_version: int = CONFIG_VERSION,
            config_file: Optional[str] = None
    ) -> None:
        self.config_version = config_version
        self.data_path = data_path
        self.schema = dict(schema or DEFAULT_SCHEMA)
        self.variable_tariff_values = list(variable_tariff_values or VARIABLE_TARIFF_VALUES)
        self.year = year
        self.timezone = timezone
        self.seed = seed
        limits = copy.deepcopy(HIERARCHY_LIMITS)
        limits.update(hierarchy_limits or {})
        self.hierarchy_limits = {key: list(value) for key, value in limits.items()}
        self.empty_house = dict(EMPTY_HOUSE, **(empty_house or {}))
        self.gbp_floor = gbp_floor
        self.min_rows_per_coef = dict(FIT_DEFAULTS['min_rows_per_coef'], **(min_rows_per_coef or {}))
        self.max_outer_iterations = max_outer_iterations
        self.max_inner_iterations = max_inner_iterations
        self.convergence_tolerance = convergence_tolerance
        self.polish = polish
        self.fixed_edf = dict(fixed_edf or {})
        self.basis_dims = dict(BASIS_DIMS, **(basis_dims or {}))
        self.roster = copy.deepcopy(ROSTER)
        for group, kinds in (roster or {}).items():
            self.roster.setdefault(group, {}).update({kind: list(methods) for kind, methods in kinds.items()})
        self.bootstrap_resamples = bootstrap_resamples
        self.evaluation_seed = evaluation_seed
        self.crps_levels = crps_levels
        self.pit_bins = pit_bins
        self.quantile_levels = list(quantile_levels or QUANTILE_LEVELS)
        self.jobs = jobs
        self.output_dir = output_dir
        self.logging_level = logging_level
        if config_file is None:
            config_file = default_config_file()
        self.config_file = config_file

    @classmethod
    def from_json(cls, config_file: Optional[str] = None) -> ExperimentConfig:
        """ Read `config_file`; without one, the user config file if present, else the defaults. """
        config = {}
        explicit = bool(config_file)
        if not explicit:
            config_file = default_config_file()
        config_file = str(pathlib.Path(config_file).expanduser().resolve())
        try:
            with open(config_file, 'r') as fp:
                config = json.load(fp=fp)
        except OSError as exc:
            if explicit:
                raise ConfigError([f'Could not open config file `{config_file}`: {exc.strerror or exc}'])
            logging.info('Could not open config file path, using defaults')
        except json.JSONDecodeError as exc:
            raise ConfigError([f'Config file `{config_file}` is not valid JSON: {exc}'])
        if config.get('config_version', CONFIG_VERSION) > CONFIG_VERSION:
            raise ConfigError([
                f'config_version {config["config_version"]} is newer than supported version {CONFIG_VERSION}'
            ])
        config['config_file'] = config_file
        try:
            return cls(**config)
        except TypeError as exc:
            raise ConfigError([f'Unknown or malformed config field: {exc}'])

    @property
    def local_timezone(self) -> str:
        if self.timezone:
            return self.timezone
        return str(tzlocal.get_localzone())

    def fit_options(self) -> Dict[str, Any]:
        return {
            'max_outer_iterations': self.max_outer_iterations,
            'max_inner_iterations': self.max_inner_iterations,
            'convergence_tolerance': self.convergence_tolerance,
            'min_rows_per_coef': dict(self.min_rows_per_coef),
            'gbp_floor': self.gbp_floor,
            'polish': self.polish,
            'fixed_edf': dict(self.fixed_edf)
        }

    def validate(self, require_data: bool = True) -> None:
        problems: List[str] = []
        if require_data:
            if not self.data_path:
                problems.append('data_path is not set')
            elif not pathlib.Path(self.data_path).expanduser().exists():
                problems.append(f'data_path `{self.data_path}` does not exist')
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            problems.append('seed must be an integer')
        if not isinstance(self.evaluation_seed, int) or isinstance(self.evaluation_seed, bool):
            problems.append('evaluation_seed must be an integer')
        for key in ('meter_id', 'timestamp', 'energy'):
            if key not in self.schema:
                problems.append(f'schema is missing the `{key}` column')
        for key, bounds in self.hierarchy_limits.items():
            if len(bounds) != 2 or bounds[0] < 1 or bounds[0] > bounds[1]:
                problems.append(f'hierarchy_limits.{key} must be [min, max] with 1 <= min <= max')
        if self.crps_levels < 1:
            problems.append('crps_levels must be positive')
        if self.jobs < 1:
            problems.append('jobs must be at least 1')
        if problems:
            raise ConfigError(problems)

    def to_dict(self) -> Dict[str, Any]:
        config_json = {}
        for key, value in self.__dict__.items():
            if key.startswith('_') or key == 'config_file':
                continue
            config_json[key] = value
        return config_json

    def save(self) -> None:
        config_path = pathlib.Path(self.config_file)
        if not config_path.exists():
            try:
                config_path.parent.mkdir(parents=True, exist_ok=True)
                config_path.touch()
            except OSError:
                logging.warning(f'Could not create config file at `{config_path}`, not saving')
                return
        try:
            with config_path.open('w') as cfp:
                json.dump(self.to_dict(), cfp, indent=4)
        except OSError:
            logging.warning(f'Could not write json to config file at `{config_path}`, not saving')
