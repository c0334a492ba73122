#!/usr/bin/env python
# -*- coding: utf-8 -*-
from __future__ import annotations

import logging
import sys
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np


class DatasetError(ValueError):
    pass


class DomainError(ValueError):
    pass


class ConfigError(ValueError):
    def __init__(self, problems: Sequence[str]) -> None:
        self.problems = list(problems)
        super().__init__('; '.join(self.problems))


class CoverageError(ValueError):
    def __init__(self, missing: Sequence[Tuple], message: str = 'Fusion inputs do not cover') -> None:
        self.missing = list(missing)
        preview = ', '.join(str(cell) for cell in self.missing[:10])
        more = f' (+{len(self.missing) - 10} more)' if len(self.missing) > 10 else ''
        super().__init__(f'{message}: {preview}{more}')


class ArtifactError(RuntimeError):
    pass


class FitError(RuntimeError):
    pass


class SingularWeightsError(FitError):
    def __init__(self, parameter: str, detail: str = '') -> None:
        self.parameter = parameter
        super().__init__(f'Singular working weights for parameter `{parameter}` {detail}'.strip())


class InsufficientDataError(FitError):
    pass


def configure_logging(level: str = 'INFO') -> None:
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter('%(asctime)s %(levelname)s %(name)s: %(message)s'))
    root.addHandler(handler)
    root.setLevel(logging.getLevelName(level.upper()))


def clamp(
        values: np.ndarray,
        min_value: float,
        max_value: float
) -> Tuple[np.ndarray, int]:
    """ Clip values into [min_value, max_value], returning the clipped array and how many moved. """
    values = np.asarray(values, dtype=float)
    assert min_value <= max_value
    outside = (values < min_value) | (values > max_value)
    return np.clip(values, min_value, max_value), int(np.count_nonzero(outside))


def run_lengths(mask: np.ndarray) -> List[Tuple[int, int]]:
    """ Return (start, length) of each run of True values in a boolean vector. """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return []
    padded = np.concatenate([[False], mask, [False]]).astype(int)
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    return [(int(start), int(stop - start)) for start, stop in zip(starts, stops)]


def invert_monotone(
        func: Callable[[np.ndarray, np.ndarray], np.ndarray],
        targets: np.ndarray,
        lower: np.ndarray,
        upper: np.ndarray,
        ftol: float = 1e-10,
        xtol: float = 1e-13,
        max_iter: int = 200,
        floor: Optional[float] = None
) -> np.ndarray:
    """
    Vectorized bracketed root finding for nondecreasing functions.

    Solves func(x, idx) = targets for every entry, where `idx` holds the flat positions being
    evaluated so that row-specific functions can pick their own parameters. Brackets are
    widened geometrically until they contain the target, then narrowed by alternating
    false-position and bisection steps.

    Arguments:

    func:       Callable(x, idx) -> values, nondecreasing in x for each position
    targets:    Values to reach
    lower:      Initial lower bracket
    upper:      Initial upper bracket
    ftol:       Absolute tolerance on func(x) - target
    xtol:       Relative tolerance on the bracket width
    floor:      Hard lower limit of the support, brackets never go below it
    """
    shape = np.shape(targets)
    targets = np.asarray(targets, dtype=float).ravel()
    lo = np.array(np.broadcast_to(lower, targets.shape), dtype=float).ravel()
    hi = np.array(np.broadcast_to(upper, targets.shape), dtype=float).ravel()
    everything = np.arange(targets.size)
    f_lo = func(lo, everything) - targets
    f_hi = func(hi, everything) - targets

    for _ in range(200):
        bad_lo = f_lo > 0
        if floor is not None:
            bad_lo &= lo > floor
        bad_hi = f_hi < 0
        if not bad_lo.any() and not bad_hi.any():
            break
        width = np.maximum(hi - lo, 1e-12)
        if bad_lo.any():
            idx = np.flatnonzero(bad_lo)
            hi[idx] = lo[idx]
            f_hi[idx] = f_lo[idx]
            lo[idx] = lo[idx] - 2 * width[idx]
            if floor is not None:
                lo[idx] = np.maximum(lo[idx], floor)
            f_lo[idx] = func(lo[idx], idx) - targets[idx]
        if bad_hi.any():
            idx = np.flatnonzero(bad_hi)
            lo[idx] = hi[idx]
            f_lo[idx] = f_hi[idx]
            hi[idx] = hi[idx] + 2 * width[idx]
            f_hi[idx] = func(hi[idx], idx) - targets[idx]
    else:
        raise DomainError('Could not bracket the requested probability level')
    if floor is None and ((f_lo > 0).any() or (f_hi < 0).any()):
        raise DomainError('Could not bracket the requested probability level')

    result = np.where(np.abs(f_lo) <= np.abs(f_hi), lo, hi)
    best = np.minimum(np.abs(f_lo), np.abs(f_hi))
    active = np.flatnonzero(best > ftol)
    for iteration in range(max_iter):
        if active.size == 0:
            break
        a, b = lo[active], hi[active]
        fa, fb = f_lo[active], f_hi[active]
        if iteration % 2 == 0:
            denominator = fb - fa
            safe = denominator > 0
            x = np.where(safe, b - fb * (b - a) / np.where(safe, denominator, 1.), 0.5 * (a + b))
            inside = (x > a) & (x < b)
            x = np.where(inside, x, 0.5 * (a + b))
        else:
            x = 0.5 * (a + b)
        fx = func(x, active) - targets[active]
        left = fx <= 0
        lo[active] = np.where(left, x, a)
        f_lo[active] = np.where(left, fx, fa)
        hi[active] = np.where(left, b, x)
        f_hi[active] = np.where(left, fb, fx)
        result[active] = x
        narrow = (hi[active] - lo[active]) <= xtol * (1. + np.abs(x))
        done = (np.abs(fx) <= ftol) | narrow
        active = active[~done]
    return result.reshape(shape)
