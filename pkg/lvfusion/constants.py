#!/usr/bin/env python
# -*- coding: utf-8 -*-

PERIODS_PER_DAY = 48

LEVELS = ('primary', 'secondary', 'feeder', 'household')
AGGREGATED_LEVELS = ('primary', 'secondary', 'feeder')

# Node id prefixes used when synthesizing the network
NODE_PREFIXES = {
    'primary': 'ps',
    'secondary': 'ss',
    'feeder': 'fdr'
}

DAY_TYPES_3 = ('weekday', 'saturday', 'sunday')
DAY_TYPES_2 = ('weekday', 'weekend')
DAYS_OF_WEEK = ('mon', 'tue', 'wed', 'thu', 'fri', 'sat', 'sun')

# Column map for the Low Carbon London half-hourly export
DEFAULT_SCHEMA = {
    'meter_id': 'LCLid',
    'timestamp': 'DateTime',
    'energy': 'KWH/hh (per half hour) ',
    'tariff': 'stdorToU'
}
VARIABLE_TARIFF_VALUES = ('ToU',)

HIERARCHY_LIMITS = {
    'feeders_per_ss': (4, 7),
    'hh_per_feeder': (16, 45)
}

EMPTY_HOUSE = {
    'eps': 0.01,
    'min_run': 7,
    'min_total': 30
}

# Basis dimensions per smooth role
BASIS_DIMS = {
    'period': 10,
    'annual': 10,
    'annual_smooth': 6,
    'annual_daily': 10,
    'tensor': (8, 8)
}
PENALTY_ORDER = 2
SPLINE_DEGREE = 3

DAY_OF_YEAR_RANGE = (1., 365.)
PERIOD_RANGE = (1., float(PERIODS_PER_DAY))

FIT_DEFAULTS = {
    'max_outer_iterations': 200,
    'max_inner_iterations': 30,
    'convergence_tolerance': 1e-6,
    'min_rows_per_coef': {
        'halfhourly': 10.,
        'daily': 5.
    },
    'gbp_floor': 1e-3,
    'polish': True
}

# log10 bounds searched for smoothing parameters
LAMBDA_BOUNDS = (-8., 12.)

HAZARD_MIN_DAYS = 60

KDE_BANDWIDTH_FLOOR = 0.001

CLIMATOLOGY_WINDOW = 45
CLIMATOLOGY_SMOOTHING = 0.5

CRPS_LEVELS = 999
PIT_BINS = 20
BOOTSTRAP_RESAMPLES = 1000
QUANTILE_LEVELS = tuple(round(q / 100, 2) for q in range(1, 100))

FAMILY_PARAMETERS = {
    'Gaussian': ('mu', 'sigma'),
    'GeneralisedBetaPrime': ('mu', 'sigma', 'nu', 'tau'),
    'Bernoulli': ('mu',)
}

# Half-hourly, peak intensity and peak timing methods evaluated at each group of levels
ROSTER = {
    'aggregated': {
        'halfhourly': ('simple', 'full'),
        'peak': ('simple', 'full'),
        'timing': ('hazard', 'climatology'),
        'fusion': ('fusion',)
    },
    'household': {
        'halfhourly': ('kde1', 'kde2', 'simple', 'full'),
        'peak': ('kde1', 'kde2', 'simple', 'full'),
        'timing': ('hazard', 'climatology'),
        'fusion': ('fusion',)
    }
}

# Reference method for skill scores
SKILL_REFERENCE = {
    'aggregated': {
        'halfhourly': 'simple',
        'peak': 'simple',
        'timing': 'climatology'
    },
    'household': {
        'halfhourly': 'kde1',
        'peak': 'kde1',
        'timing': 'climatology'
    }
}

MODEL_FORMAT_VERSION = 2
CONFIG_VERSION = 1

# Artifact layout inside the output directory
ARTIFACTS = {
    'manifest': 'hierarchy.json',
    'features': 'features',
    'peaks': 'peaks',
    'models': 'models',
    'forecasts': 'forecasts',
    'fused': 'fused',
    'scores': 'scores',
    'reports': 'reports'
}
