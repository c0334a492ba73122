#!/usr/bin/env python
# -*- coding: utf-8 -*-
from __future__ import annotations

import logging
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg, optimize
from scipy.interpolate import BSpline

from .constants import LAMBDA_BOUNDS, PENALTY_ORDER, SPLINE_DEGREE

# Smallest squared pivot of the unit-diagonal scaled normal matrix before it counts as singular
SINGULAR_PIVOT = 1e-13


class SmoothTerm(object):
    """
    Description of one additive term of a predictor.

    Arguments:

    kind:       'linear', 'dummy', 'pb', 'pbc', 'pvc' or 'tensor'
    covariate:  Column the term is a function of (unused for tensors)
    by:         Multiplier column for linear/dummy/pvc terms
    factor_by:  Treat `by` as a factor (one smooth per level) instead of a numeric multiplier
    k:          Basis dimension of spline terms
    order:      Difference penalty order
    period:     Cycle length of cyclic terms
    lower:      Lower end of the covariate range, taken from the data when None
    upper:      Upper end of the covariate range (non-cyclic), taken from the data when None
    levels:     Factor levels of a dummy covariate or of a factor `by`
    margins:    Two marginal 'pb'/'pbc' terms of a tensor
    label:      Name used in reports, derived from the term when None
    """

    KINDS = ('linear', 'dummy', 'pb', 'pbc', 'pvc', 'tensor')

    def __init__(
            self,
            kind: str,
            covariate: Optional[str] = None,
            by: Optional[str] = None,
            factor_by: bool = False,
            k: Optional[int] = None,
            order: int = PENALTY_ORDER,
            period: Optional[float] = None,
            lower: Optional[float] = None,
            upper: Optional[float] = None,
            levels: Optional[Sequence] = None,
            margins: Optional[Sequence[SmoothTerm]] = None,
            label: Optional[str] = None
    ) -> None:
        if kind not in self.KINDS:
            raise ValueError(f'Unknown term kind `{kind}`, choose from {", ".join(self.KINDS)}')
        self.kind = kind
        self.covariate = covariate
        self.by = by
        self.factor_by = factor_by
        self.k = k
        self.order = order
        self.period = period
        self.lower = lower
        self.upper = upper
        self.levels = list(levels) if levels is not None else None
        self.margins = list(margins) if margins is not None else None
        if kind == 'tensor':
            assert self.margins is not None and len(self.margins) == 2
            assert all(margin.kind in ('pb', 'pbc') for margin in self.margins)
        else:
            assert covariate is not None
        if kind in ('pb', 'pbc', 'pvc'):
            assert k is not None and k >= order + 2, 'basis dimension must exceed the penalty order by 2'
        if kind == 'pbc':
            assert period is not None and period > 0
        if kind == 'pvc':
            assert by is not None
        if label is None:
            if kind == 'tensor':
                label = f'te({self.margins[0].covariate},{self.margins[1].covariate})'
            elif by is not None:
                label = f'{kind}({covariate},by={by})'
            else:
                label = f'{kind}({covariate})'
        self.label = label

    def __repr__(self) -> str:
        return f'SmoothTerm({self.label})'

    @property
    def covariates(self) -> List[str]:
        if self.kind == 'tensor':
            return [margin.covariate for margin in self.margins]
        names = [self.covariate]
        if self.by is not None:
            names.append(self.by)
        return names

    @property
    def penalized(self) -> bool:
        return self.kind in ('pb', 'pbc', 'pvc', 'tensor')

    def to_dict(self) -> Dict[str, Any]:
        return {
            'kind': self.kind,
            'covariate': self.covariate,
            'by': self.by,
            'factor_by': self.factor_by,
            'k': self.k,
            'order': self.order,
            'period': self.period,
            'lower': self.lower,
            'upper': self.upper,
            'levels': self.levels,
            'margins': [margin.to_dict() for margin in self.margins] if self.margins else None,
            'label': self.label
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SmoothTerm:
        data = dict(data)
        if data.get('margins'):
            data['margins'] = [cls.from_dict(margin) for margin in data['margins']]
        return cls(**data)


def linear(covariate: str, by: Optional[str] = None) -> SmoothTerm:
    return SmoothTerm('linear', covariate, by=by)


def dummy(covariate: str, by: Optional[str] = None, levels: Optional[Sequence] = None) -> SmoothTerm:
    return SmoothTerm('dummy', covariate, by=by, levels=levels)


def pb(covariate: str, k: int, lower: Optional[float] = None, upper: Optional[float] = None) -> SmoothTerm:
    return SmoothTerm('pb', covariate, k=k, lower=lower, upper=upper)


def pbc(covariate: str, k: int, period: float, lower: float = 0.) -> SmoothTerm:
    return SmoothTerm('pbc', covariate, k=k, period=period, lower=lower)


def pvc(
        covariate: str,
        by: str,
        k: int,
        factor_by: bool = True,
        lower: Optional[float] = None,
        upper: Optional[float] = None,
        levels: Optional[Sequence] = None
) -> SmoothTerm:
    return SmoothTerm('pvc', covariate, by=by, factor_by=factor_by, k=k, lower=lower, upper=upper, levels=levels)


def tensor(first: SmoothTerm, second: SmoothTerm) -> SmoothTerm:
    return SmoothTerm('tensor', margins=[first, second])


class BasisBlock(NamedTuple):
    matrix: np.ndarray
    penalties: List[np.ndarray]


def bspline_basis(x: np.ndarray, lower: float, upper: float, k: int, degree: int = SPLINE_DEGREE) -> np.ndarray:
    """ k equally spaced B-splines spanning [lower, upper], x clipped into the range. """
    assert upper > lower
    step = (upper - lower) / (k - degree)
    knots = lower + step * np.arange(-degree, k + 1)
    # Guard the right end against rounding in the knot grid
    knots[k] = upper
    x = np.clip(np.asarray(x, dtype=float), lower, upper)
    return BSpline.design_matrix(x, knots, degree).toarray()


def cyclic_bspline_basis(x: np.ndarray, lower: float, period: float, k: int, degree: int = SPLINE_DEGREE) -> np.ndarray:
    """ k B-splines wrapped around [lower, lower + period) so values and derivatives join up. """
    step = period / k
    knots = lower + step * np.arange(-degree, k + degree + 1)
    x = lower + np.mod(np.asarray(x, dtype=float) - lower, period)
    raw = BSpline.design_matrix(x, knots, degree).toarray()
    basis = raw[:, :k].copy()
    basis[:, :degree] += raw[:, k:k + degree]
    return basis


def difference_penalty(k: int, order: int = PENALTY_ORDER) -> np.ndarray:
    difference = np.diff(np.eye(k), n=order, axis=0)
    return difference.T @ difference


def cyclic_difference_penalty(k: int, order: int = PENALTY_ORDER) -> np.ndarray:
    step = np.eye(k) - np.roll(np.eye(k), 1, axis=1)
    difference = np.linalg.matrix_power(step, order)
    return difference.T @ difference


def sum_to_zero_coding(x: np.ndarray, levels: Sequence) -> np.ndarray:
    """ One column per level but the last: +1 on that level, -1 on the last level. """
    x = np.asarray(x)
    columns = np.zeros((len(x), max(len(levels) - 1, 0)))
    last = x == levels[-1]
    for column, level in enumerate(levels[:-1]):
        columns[:, column] = (x == level).astype(float) - last
    return columns


def _multiplier(x_by: Optional[np.ndarray], n_rows: int) -> np.ndarray:
    if x_by is None:
        return np.ones(n_rows)
    return np.asarray(x_by, dtype=float)


def build_basis(term: SmoothTerm, x: np.ndarray, x_by: Optional[np.ndarray] = None) -> BasisBlock:
    """
    Raw (unconstrained) design block and penalty for 'linear', 'dummy', 'pb' and 'pbc' terms.
    """
    x = np.asarray(x)
    multiplier = _multiplier(x_by, len(x))
    if term.kind == 'linear':
        matrix = (np.asarray(x, dtype=float) * multiplier)[:, None]
        return BasisBlock(matrix, [np.zeros((1, 1))])
    if term.kind == 'dummy':
        levels = term.levels if term.levels is not None else sorted(pd.unique(x))
        matrix = sum_to_zero_coding(x, levels) * multiplier[:, None]
        return BasisBlock(matrix, [np.zeros((matrix.shape[1], matrix.shape[1]))])
    if term.kind == 'pb':
        lower = term.lower if term.lower is not None else float(np.min(x))
        upper = term.upper if term.upper is not None else float(np.max(x))
        if upper <= lower:
            upper = lower + 1.
        matrix = bspline_basis(x, lower, upper, term.k)
        return BasisBlock(matrix * multiplier[:, None], [difference_penalty(term.k, term.order)])
    if term.kind == 'pbc':
        lower = term.lower if term.lower is not None else 0.
        matrix = cyclic_bspline_basis(x, lower, term.period, term.k)
        return BasisBlock(matrix * multiplier[:, None], [cyclic_difference_penalty(term.k, term.order)])
    raise ValueError(f'build_basis does not handle `{term.kind}` terms')


def _marginal(term: SmoothTerm) -> SmoothTerm:
    if term.period is not None:
        return SmoothTerm('pbc', term.covariate, k=term.k, order=term.order, period=term.period,
                          lower=term.lower if term.lower is not None else 0.)
    return SmoothTerm('pb', term.covariate, k=term.k, order=term.order, lower=term.lower, upper=term.upper)


def build_varying_coefficient(
        term: SmoothTerm,
        x_smooth: np.ndarray,
        x_by: np.ndarray
) -> BasisBlock:
    """
    Smooth of `x_smooth` whose rows are scaled by a numeric `x_by`, or, for factor-by terms, one
    independently penalized smooth per level with rows selected by the level.
    """
    smooth = build_basis(_marginal(term), x_smooth)
    if not term.factor_by:
        return BasisBlock(smooth.matrix * np.asarray(x_by, dtype=float)[:, None], smooth.penalties)
    x_by = np.asarray(x_by)
    levels = term.levels if term.levels is not None else sorted(pd.unique(x_by))
    k = smooth.matrix.shape[1]
    blocks = []
    penalties = []
    for position, level in enumerate(levels):
        blocks.append(smooth.matrix * (x_by == level)[:, None])
        penalty = np.zeros((k * len(levels), k * len(levels)))
        penalty[position * k:(position + 1) * k, position * k:(position + 1) * k] = smooth.penalties[0]
        penalties.append(penalty)
    return BasisBlock(np.hstack(blocks), penalties)


def row_kronecker(first: np.ndarray, second: np.ndarray) -> np.ndarray:
    return (first[:, :, None] * second[:, None, :]).reshape(first.shape[0], -1)


def build_tensor(term: SmoothTerm, x1: np.ndarray, x2: np.ndarray) -> BasisBlock:
    """ Row-wise Kronecker product of two marginal bases with the two marginal penalties kept apart. """
    first = build_basis(term.margins[0], x1)
    second = build_basis(term.margins[1], x2)
    k1, k2 = first.matrix.shape[1], second.matrix.shape[1]
    return BasisBlock(
        row_kronecker(first.matrix, second.matrix),
        [np.kron(first.penalties[0], np.eye(k2)), np.kron(np.eye(k1), second.penalties[0])]
    )


def centering_constraint(matrix: np.ndarray) -> np.ndarray:
    """ Basis of the null space of the column sums, so that the reparametrized block sums to zero. """
    sums = matrix.sum(axis=0)[:, None]
    if not np.any(sums):
        return np.eye(matrix.shape[1])[:, 1:]
    q, _ = np.linalg.qr(sums, mode='complete')
    return q[:, 1:]


def _as_column(frame: pd.DataFrame, name: str) -> np.ndarray:
    if name not in frame.columns:
        raise KeyError(name)
    return frame[name].to_numpy()


class TermBasis(object):
    """
    A SmoothTerm bound to its training data: covariate ranges, factor levels and identifiability
    constraints are frozen so that new rows get exactly the same design columns.
    """

    def __init__(
            self,
            term: SmoothTerm,
            ranges: Dict[str, Tuple[float, float]],
            levels: Dict[str, List],
            constraints: List[np.ndarray],
            n_columns: int,
            penalties: List[np.ndarray]
    ) -> None:
        self.term = term
        self.ranges = ranges
        self.levels = levels
        self.constraints = constraints
        self.n_columns = n_columns
        self.penalties = penalties

    @property
    def label(self) -> str:
        return self.term.label

    @classmethod
    def setup(cls, term: SmoothTerm, frame: pd.DataFrame) -> TermBasis:
        ranges: Dict[str, Tuple[float, float]] = {}
        levels: Dict[str, List] = {}
        for name in term.covariates:
            values = _as_column(frame, name)
            if term.kind == 'dummy' and name == term.covariate:
                levels[name] = term.levels if term.levels is not None else sorted(pd.unique(values).tolist())
            elif term.kind == 'pvc' and term.factor_by and name == term.by:
                levels[name] = term.levels if term.levels is not None else sorted(pd.unique(values).tolist())
            else:
                values = values.astype(float)
                ranges[name] = (float(np.min(values)), float(np.max(values)))
        bound = cls(term, ranges, levels, [], 0, [])
        resolved = bound.resolved_term()
        raw = bound._raw(resolved, frame)
        constraints: List[np.ndarray] = []
        if term.kind in ('pb', 'pbc', 'tensor'):
            constraints = [centering_constraint(raw.matrix)]
        elif term.kind == 'pvc' and term.factor_by:
            k = resolved.k
            by_values = _as_column(frame, term.by)
            for position, level in enumerate(levels[term.by]):
                rows = by_values == level
                constraints.append(centering_constraint(raw.matrix[rows][:, position * k:(position + 1) * k]))
        bound.constraints = constraints
        block = bound._constrain(raw, frame)
        bound.n_columns = block.matrix.shape[1]
        bound.penalties = block.penalties
        return bound

    def resolved_term(self) -> SmoothTerm:
        """ The term with data-derived ranges and levels filled in. """
        term = self.term

        def fill(margin: SmoothTerm) -> SmoothTerm:
            if margin.kind == 'pb' or (margin.kind == 'pvc' and margin.period is None):
                lower, upper = self.ranges.get(margin.covariate, (margin.lower, margin.upper))
                lower = margin.lower if margin.lower is not None else lower
                upper = margin.upper if margin.upper is not None else upper
                if upper <= lower:
                    upper = lower + 1.
                data = margin.to_dict()
                data.update(lower=lower, upper=upper)
                return SmoothTerm.from_dict(data)
            return margin

        if term.kind == 'tensor':
            data = term.to_dict()
            data['margins'] = [fill(margin).to_dict() for margin in term.margins]
            return SmoothTerm.from_dict(data)
        if term.kind in ('pb', 'pvc'):
            resolved = fill(term)
        else:
            resolved = term
        if term.kind == 'dummy' or (term.kind == 'pvc' and term.factor_by):
            name = term.covariate if term.kind == 'dummy' else term.by
            data = resolved.to_dict()
            data['levels'] = self.levels[name]
            resolved = SmoothTerm.from_dict(data)
        return resolved

    def _raw(self, term: SmoothTerm, frame: pd.DataFrame) -> BasisBlock:
        if term.kind == 'tensor':
            return build_tensor(term, _as_column(frame, term.margins[0].covariate),
                                _as_column(frame, term.margins[1].covariate))
        if term.kind == 'pvc':
            return build_varying_coefficient(term, _as_column(frame, term.covariate), _as_column(frame, term.by))
        x_by = _as_column(frame, term.by) if term.by is not None else None
        return build_basis(term, _as_column(frame, term.covariate), x_by)

    def _constrain(self, raw: BasisBlock, frame: pd.DataFrame) -> BasisBlock:
        term = self.term
        if not self.constraints:
            return raw
        if term.kind == 'pvc':
            by_values = _as_column(frame, term.by)
            levels = self.levels[term.by]
            k = raw.matrix.shape[1] // len(levels)
            level_dummies = sum_to_zero_coding(by_values, levels)
            blocks = [level_dummies]
            sizes = [z.shape[1] for z in self.constraints]
            total = level_dummies.shape[1] + sum(sizes)
            penalties = []
            offset = level_dummies.shape[1]
            for position, z in enumerate(self.constraints):
                columns = slice(position * k, (position + 1) * k)
                blocks.append(raw.matrix[:, columns] @ z)
                penalty = np.zeros((total, total))
                inner = raw.penalties[position][columns, columns]
                penalty[offset:offset + z.shape[1], offset:offset + z.shape[1]] = z.T @ inner @ z
                penalties.append(penalty)
                offset += z.shape[1]
            return BasisBlock(np.hstack(blocks), penalties)
        z = self.constraints[0]
        return BasisBlock(raw.matrix @ z, [z.T @ penalty @ z for penalty in raw.penalties])

    def design(self, frame: pd.DataFrame) -> Tuple[np.ndarray, int]:
        """ Design columns for new rows, with smooth covariates clamped to the training range. """
        clamped = 0
        if self.term.penalized:
            frame = frame.copy()
            for name, (lower, upper) in self._clamp_ranges().items():
                values = frame[name].to_numpy(dtype=float)
                outside = (values < lower) | (values > upper)
                if outside.any():
                    clamped += int(outside.sum())
                    frame[name] = np.clip(values, lower, upper)
        raw = self._raw(self.resolved_term(), frame)
        return self._constrain(raw, frame).matrix, clamped

    def _clamp_ranges(self) -> Dict[str, Tuple[float, float]]:
        resolved = self.resolved_term()
        margins = resolved.margins if resolved.kind == 'tensor' else [resolved]
        limits = {}
        for margin in margins:
            if margin.kind in ('pb', 'pvc') and margin.period is None:
                limits[margin.covariate] = (margin.lower, margin.upper)
        return limits

    def to_dict(self) -> Dict[str, Any]:
        return {
            'term': self.term.to_dict(),
            'ranges': {name: list(bounds) for name, bounds in self.ranges.items()},
            'levels': {name: [_plain(level) for level in values] for name, values in self.levels.items()},
            'constraints': [z.tolist() for z in self.constraints],
            'n_columns': self.n_columns,
            'penalties': [penalty.tolist() for penalty in self.penalties]
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TermBasis:
        return cls(
            SmoothTerm.from_dict(data['term']),
            {name: tuple(bounds) for name, bounds in data['ranges'].items()},
            {name: list(values) for name, values in data['levels'].items()},
            [np.asarray(z, dtype=float) for z in data['constraints']],
            int(data['n_columns']),
            [np.asarray(penalty, dtype=float) for penalty in data['penalties']]
        )


def _plain(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    return value


class NormalFactor(object):
    """
    Cholesky factor of a symmetric positive definite matrix after unit-diagonal scaling.

    Raises numpy.linalg.LinAlgError when the scaled matrix is not numerically positive definite.
    """

    def __init__(self, matrix: np.ndarray) -> None:
        diagonal = np.diag(matrix)
        if not np.isfinite(matrix).all() or not (diagonal > 0).all():
            raise np.linalg.LinAlgError('normal matrix has non-positive or non-finite diagonal')
        self.scale = np.sqrt(diagonal)
        scaled = matrix / np.outer(self.scale, self.scale)
        self.lower = linalg.cholesky(scaled, lower=True)
        if np.min(np.diag(self.lower)) ** 2 < SINGULAR_PIVOT:
            raise np.linalg.LinAlgError('normal matrix is numerically singular')

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        scale = self.scale if rhs.ndim == 1 else self.scale[:, None]
        solved = linalg.cho_solve((self.lower, True), rhs / scale)
        return solved / scale

    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(len(self.scale)))


def penalty_sum(penalties: Sequence[np.ndarray], lambdas: Sequence[float], size: int) -> np.ndarray:
    total = np.zeros((size, size))
    for penalty, lam in zip(penalties, lambdas):
        total += lam * penalty
    return total


class PenalizedFit(NamedTuple):
    coefficients: np.ndarray
    lambdas: List[float]
    edf: float
    column_edf: np.ndarray
    rss: float
    gcv: float


class NormalEquations(object):
    """
    Weighted cross products of one working regression, reused for every smoothing parameter
    candidate.

    Arguments:

    matrix:     Design matrix (n, p)
    response:   Working response z
    weights:    Working weights w
    penalties:  Full-size (p, p) penalty matrices, one smoothing parameter each
    """

    def __init__(
            self,
            matrix: np.ndarray,
            response: np.ndarray,
            weights: np.ndarray,
            penalties: Sequence[np.ndarray]
    ) -> None:
        weighted = matrix * weights[:, None]
        self.n = matrix.shape[0]
        self.p = matrix.shape[1]
        self.xtwx = matrix.T @ weighted
        self.xtwz = weighted.T @ response
        self.ztwz = float(np.sum(weights * response ** 2))
        self.penalties = list(penalties)

    def solve(self, lambdas: Sequence[float]) -> PenalizedFit:
        factor = NormalFactor(self.xtwx + penalty_sum(self.penalties, lambdas, self.p))
        beta = factor.solve(self.xtwz)
        influence = factor.solve(self.xtwx)
        column_edf = np.diag(influence).copy()
        edf = float(column_edf.sum())
        rss = max(self.ztwz - 2. * beta @ self.xtwz + beta @ self.xtwx @ beta, 0.)
        denominator = self.n - edf
        gcv = self.n * rss / denominator ** 2 if denominator > 0 else np.inf
        return PenalizedFit(beta, list(lambdas), edf, column_edf, float(rss), float(gcv))

    def gcv(self, log_lambdas: np.ndarray) -> float:
        try:
            return self.solve(10. ** np.asarray(log_lambdas)).gcv
        except np.linalg.LinAlgError:
            return np.inf

    def penalty_edf(self, index: int, lambdas: Sequence[float]) -> float:
        """ Effective degrees of freedom of the columns penalized by penalty `index`. """
        columns = np.flatnonzero(np.abs(np.diag(self.penalties[index])) > 0)
        return float(self.solve(lambdas).column_edf[columns].sum())


def select_lambdas(
        equations: NormalEquations,
        start: Optional[Sequence[float]] = None,
        fixed_edf: Optional[Mapping[int, float]] = None
) -> List[float]:
    """
    Smoothing parameters minimizing GCV over log10 lambda, with optional per-penalty EDF targets.

    Penalties listed in `fixed_edf` get the lambda whose EDF matches the target instead.
    """
    n_penalties = len(equations.penalties)
    if n_penalties == 0:
        return []
    fixed_edf = dict(fixed_edf or {})
    low, high = LAMBDA_BOUNDS
    if start is None:
        start = [1.] * n_penalties
    log_start = np.clip(np.log10(np.maximum(np.asarray(start, dtype=float), 10. ** low)), low, high)
    free = [index for index in range(n_penalties) if index not in fixed_edf]
    log_lambdas = log_start.copy()

    if free:
        def objective(values: np.ndarray) -> float:
            candidate = log_lambdas.copy()
            candidate[free] = values
            return equations.gcv(candidate)

        result = optimize.minimize(objective, log_lambdas[free], method='L-BFGS-B', bounds=[(low, high)] * len(free))
        if np.isfinite(result.fun) and result.fun <= objective(log_lambdas[free]):
            log_lambdas[free] = result.x

    for index, target in fixed_edf.items():
        def gap(value: float) -> float:
            candidate = log_lambdas.copy()
            candidate[index] = value
            return equations.penalty_edf(index, 10. ** candidate) - target

        try:
            if gap(low) * gap(high) < 0:
                log_lambdas[index] = optimize.brentq(gap, low, high, xtol=1e-6)
            else:
                log_lambdas[index] = low if abs(gap(low)) < abs(gap(high)) else high
        except np.linalg.LinAlgError:
            logging.warning(f'Could not reach EDF {target} for penalty {index}, keeping lambda')
    return [float(value) for value in 10. ** log_lambdas]


def fit_penalized(
        matrix: np.ndarray,
        response: np.ndarray,
        penalties: Sequence[np.ndarray],
        lambdas: Optional[Sequence[float]] = None,
        weights: Optional[np.ndarray] = None
) -> PenalizedFit:
    """ Penalized weighted least squares, lambdas chosen by GCV when not given. """
    response = np.asarray(response, dtype=float)
    if weights is None:
        weights = np.ones_like(response)
    equations = NormalEquations(np.asarray(matrix, dtype=float), response, np.asarray(weights, dtype=float), penalties)
    if lambdas is None:
        lambdas = select_lambdas(equations)
    return equations.solve(lambdas)
