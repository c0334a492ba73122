#!/usr/bin/env python
# -*- coding: utf-8 -*-
from __future__ import annotations

import json
import logging
import pathlib
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import linalg, optimize

from .constants import FIT_DEFAULTS, MODEL_FORMAT_VERSION
from .distributions import DistributionFamily, ParamVector, get_family
from .smoothers import NormalEquations, SmoothTerm, TermBasis, select_lambdas
from .utils import ArtifactError, DatasetError, DomainError, FitError, InsufficientDataError, SingularWeightsError

MAX_HALVINGS = 10
MAX_NEWTON_STEPS = 20
COEFFICIENT_TOLERANCE = 1e-8
HESSIAN_STEP = 1e-5
EIGEN_FLOOR = 1e-10


class ModelSpec(object):
    """
    Family plus one additive formula per distribution parameter; every predictor has an intercept.

    Arguments:

    family:     Distribution family or its name
    formulas:   Parameter name -> terms added to the intercept, missing parameters are intercept-only
    resolution: 'halfhourly' or 'daily', selects the rows-per-coefficient guard
    name:       Method name used in logs and artifacts
    target:     Response column
    """

    def __init__(
            self,
            family: Union[str, DistributionFamily],
            formulas: Optional[Mapping[str, Sequence[SmoothTerm]]] = None,
            resolution: str = 'halfhourly',
            name: str = 'model',
            target: str = 'y'
    ) -> None:
        self.family = get_family(family)
        formulas = dict(formulas or {})
        unknown = [parameter for parameter in formulas if parameter not in self.family.parameters]
        if unknown:
            raise ValueError(f'{self.family.name} has no parameters named {", ".join(unknown)}')
        self.formulas: Dict[str, List[SmoothTerm]] = {
            parameter: list(formulas.get(parameter, [])) for parameter in self.family.parameters
        }
        self.resolution = resolution
        self.name = name
        self.target = target

    def __repr__(self) -> str:
        body = '; '.join(
            f'{parameter} ~ ' + ' + '.join(['1'] + [term.label for term in terms])
            for parameter, terms in self.formulas.items()
        )
        return f'ModelSpec({self.name}, {self.family.name}: {body})'

    @property
    def covariates(self) -> List[str]:
        names: List[str] = []
        for terms in self.formulas.values():
            for term in terms:
                for name in term.covariates:
                    if name not in names:
                        names.append(name)
        return names

    def term_labels(self, parameter: str) -> List[str]:
        return [term.label for term in self.formulas[parameter]]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'family': self.family.name,
            'formulas': {parameter: [term.to_dict() for term in terms] for parameter, terms in self.formulas.items()},
            'resolution': self.resolution,
            'name': self.name,
            'target': self.target
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ModelSpec:
        return cls(
            data['family'],
            {parameter: [SmoothTerm.from_dict(term) for term in terms] for parameter, terms in data['formulas'].items()},
            data.get('resolution', 'halfhourly'),
            data.get('name', 'model'),
            data.get('target', 'y')
        )


def fit_options(options: Optional[Mapping[str, Any]] = None) -> Dict[str, Any]:
    merged = dict(FIT_DEFAULTS)
    merged['min_rows_per_coef'] = dict(FIT_DEFAULTS['min_rows_per_coef'])
    merged['fixed_edf'] = {}
    for key, value in (options or {}).items():
        if key == 'min_rows_per_coef':
            merged[key].update(value)
        else:
            merged[key] = value
    return merged


class ParameterDesign(object):
    """ Intercept plus term columns of one distribution parameter, with full-size penalties. """

    def __init__(self, bases: List[TermBasis]) -> None:
        self.bases = bases
        self.slices: List[slice] = []
        offset = 1
        for basis in bases:
            self.slices.append(slice(offset, offset + basis.n_columns))
            offset += basis.n_columns
        self.size = offset
        self.penalties: List[np.ndarray] = []
        self.penalty_terms: List[int] = []
        for position, basis in enumerate(bases):
            columns = self.slices[position]
            for penalty in basis.penalties:
                # Unpenalized terms carry an all-zero penalty
                if not np.any(penalty):
                    continue
                full = np.zeros((self.size, self.size))
                full[columns, columns] = penalty
                self.penalties.append(full)
                self.penalty_terms.append(position)

    def matrix(self, frame: pd.DataFrame) -> Tuple[np.ndarray, int]:
        blocks = [np.ones((len(frame), 1))]
        clamped = 0
        for basis in self.bases:
            block, moved = basis.design(frame)
            blocks.append(block)
            clamped += moved
        return np.hstack(blocks), clamped

    def penalty_matrix(self, lambdas: Sequence[float]) -> np.ndarray:
        total = np.zeros((self.size, self.size))
        for penalty, lam in zip(self.penalties, lambdas):
            total += lam * penalty
        return total

    def fixed_edf_targets(self, fixed_edf: Mapping[str, float]) -> Dict[int, float]:
        """ EDF targets per penalty index for single-penalty smooths whose covariate is listed. """
        targets = {}
        for index, position in enumerate(self.penalty_terms):
            term = self.bases[position].term
            if term.kind in ('pb', 'pbc') and term.covariate in fixed_edf:
                targets[index] = float(fixed_edf[term.covariate])
        return targets


class FittedModel(object):
    """
    Result of a GAMLSS fit, immutable once built and serializable to a versioned JSON document.

    Arguments:

    spec:               The ModelSpec that was fitted
    bases:              Parameter -> frozen term bases
    coefficients:       Parameter -> coefficient vector (intercept first)
    lambdas:            Parameter -> smoothing parameter per penalty
    edf:                Parameter -> effective degrees of freedom per term (intercept excluded)
    deviance_trace:     Global deviance after initialization and after every back-fitting cycle
    final_deviance:     Global deviance of the returned coefficients
    converged:          True when back-fitting converged or the joint refinement reached a stationary point
    iterations:         Back-fitting cycles run
    covariance:         Joint covariance of all coefficients, parameter blocks in family order
    training:           Summary of the training rows
    polished:           True when the joint penalized likelihood polish moved the coefficients
    backfit_converged:  True when the relative deviance change of back-fitting dropped below tolerance
    stationary:         True when the Newton decrement of the joint refinement dropped below tolerance
    newton_steps:       Newton steps accepted by the joint refinement
    fallback_reason:    Why this model replaced a failed primary fit, None otherwise
    """

    def __init__(
            self,
            spec: ModelSpec,
            bases: Dict[str, List[TermBasis]],
            coefficients: Dict[str, np.ndarray],
            lambdas: Dict[str, List[float]],
            edf: Dict[str, List[float]],
            deviance_trace: List[float],
            final_deviance: float,
            converged: bool,
            iterations: int,
            covariance: np.ndarray,
            training: Dict[str, Any],
            polished: bool = False,
            backfit_converged: Optional[bool] = None,
            stationary: bool = False,
            newton_steps: int = 0,
            fallback_reason: Optional[str] = None
    ) -> None:
        self.spec = spec
        self.bases = bases
        self.designs = {parameter: ParameterDesign(bases[parameter]) for parameter in spec.family.parameters}
        self.coefficients = {parameter: np.asarray(value, dtype=float) for parameter, value in coefficients.items()}
        for value in self.coefficients.values():
            value.setflags(write=False)
        self.lambdas = lambdas
        self.edf = edf
        self.deviance_trace = deviance_trace
        self.final_deviance = final_deviance
        self.converged = converged
        self.iterations = iterations
        self.covariance = np.asarray(covariance, dtype=float)
        if self.covariance.shape != (self.n_coefficients, self.n_coefficients):
            raise ValueError(f'covariance shape {self.covariance.shape} does not match {self.n_coefficients} coefficients')
        self.training = training
        self.polished = polished
        self.backfit_converged = converged if backfit_converged is None else backfit_converged
        self.stationary = stationary
        self.newton_steps = newton_steps
        self.fallback_reason = fallback_reason

    @property
    def family(self) -> DistributionFamily:
        return self.spec.family

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def n_coefficients(self) -> int:
        return int(sum(len(value) for value in self.coefficients.values()))

    def block(self, parameter: str) -> slice:
        """ Rows and columns of `parameter` in the joint covariance. """
        offset = 0
        for name in self.family.parameters:
            size = len(self.coefficients[name])
            if name == parameter:
                return slice(offset, offset + size)
            offset += size
        raise KeyError(parameter)

    def standard_errors(self, parameter: str) -> np.ndarray:
        columns = self.block(parameter)
        return np.sqrt(np.diag(self.covariance[columns, columns]))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'format_version': MODEL_FORMAT_VERSION,
            'spec': self.spec.to_dict(),
            'bases': {parameter: [basis.to_dict() for basis in bases] for parameter, bases in self.bases.items()},
            'coefficients': {parameter: value.tolist() for parameter, value in self.coefficients.items()},
            'lambdas': self.lambdas,
            'edf': self.edf,
            'convergence': {
                'deviance_trace': self.deviance_trace,
                'final_deviance': self.final_deviance,
                'converged': self.converged,
                'iterations': self.iterations,
                'polished': self.polished,
                'backfit_converged': self.backfit_converged,
                'stationary': self.stationary,
                'newton_steps': self.newton_steps
            },
            'covariance': self.covariance.tolist(),
            'training': self.training,
            'fallback_reason': self.fallback_reason
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> FittedModel:
        version = data.get('format_version')
        if version != MODEL_FORMAT_VERSION:
            raise ArtifactError(f'Model format version {version} is not supported (expected {MODEL_FORMAT_VERSION})')
        convergence = data['convergence']
        return cls(
            ModelSpec.from_dict(data['spec']),
            {parameter: [TermBasis.from_dict(basis) for basis in bases] for parameter, bases in data['bases'].items()},
            {parameter: np.asarray(value) for parameter, value in data['coefficients'].items()},
            {parameter: list(value) for parameter, value in data['lambdas'].items()},
            {parameter: list(value) for parameter, value in data['edf'].items()},
            list(convergence['deviance_trace']),
            float(convergence['final_deviance']),
            bool(convergence['converged']),
            int(convergence['iterations']),
            np.asarray(data['covariance'], dtype=float),
            dict(data['training']),
            polished=bool(convergence.get('polished', False)),
            backfit_converged=bool(convergence['backfit_converged']),
            stationary=bool(convergence['stationary']),
            newton_steps=int(convergence['newton_steps']),
            fallback_reason=data.get('fallback_reason')
        )

    def save(self, path: Union[str, pathlib.Path]) -> None:
        with open(path, 'w') as fp:
            json.dump(self.to_dict(), fp)

    @classmethod
    def load(cls, path: Union[str, pathlib.Path]) -> FittedModel:
        try:
            with open(path, 'r') as fp:
                return cls.from_dict(json.load(fp))
        except OSError as exc:
            raise ArtifactError(f'Could not read model `{path}`: {exc}')


def _check_frame(spec: ModelSpec, frame: pd.DataFrame, with_target: bool) -> None:
    needed = spec.covariates + ([spec.target] if with_target else [])
    missing = [name for name in needed if name not in frame.columns]
    if missing:
        raise DatasetError(f'{spec.name}: missing covariates {", ".join(missing)}')
    if with_target:
        incomplete = frame[needed].isna().any(axis=1)
        if incomplete.any():
            raise FitError(f'{spec.name}: {int(incomplete.sum())} training rows have unavailable covariates')


class _Backfitter(object):
    """ State of one RS back-fitting run. """

    def __init__(self, spec: ModelSpec, frame: pd.DataFrame, options: Dict[str, Any]) -> None:
        self.spec = spec
        self.family = spec.family
        self.options = options
        y = frame[spec.target].to_numpy(dtype=float)
        if self.family.name == 'GeneralisedBetaPrime':
            floored = y < options['gbp_floor']
            if floored.any():
                logging.debug(f'{spec.name}: raised {int(floored.sum())} targets to the floor {options["gbp_floor"]}')
            y = np.maximum(y, options['gbp_floor'])
        self.y = y
        self.designs: Dict[str, ParameterDesign] = {}
        self.matrices: Dict[str, np.ndarray] = {}
        for parameter in self.family.parameters:
            bases = [TermBasis.setup(term, frame) for term in spec.formulas[parameter]]
            design = ParameterDesign(bases)
            self.designs[parameter] = design
            self.matrices[parameter], _ = design.matrix(frame)

        n_coefficients = sum(design.size for design in self.designs.values())
        ratio = options['min_rows_per_coef'][spec.resolution]
        if len(y) < ratio * n_coefficients:
            raise InsufficientDataError(
                f'{spec.name}: {len(y)} rows for {n_coefficients} coefficients, need {ratio:g} rows per coefficient'
            )

        initial = self.family.initial(y)
        self.beta: Dict[str, np.ndarray] = {}
        self.eta: Dict[str, np.ndarray] = {}
        self.lambdas: Dict[str, List[float]] = {}
        self.column_edf: Dict[str, np.ndarray] = {}
        for parameter, design in self.designs.items():
            beta = np.zeros(design.size)
            beta[0] = float(self.family.link(parameter).apply(np.asarray(initial[parameter])))
            self.beta[parameter] = beta
            self.eta[parameter] = self.matrices[parameter] @ beta
            self.lambdas[parameter] = [1.] * len(design.penalties)
            self.column_edf[parameter] = np.zeros(design.size)
        self.fixed_edf = {
            parameter: design.fixed_edf_targets(options.get('fixed_edf') or {})
            for parameter, design in self.designs.items()
        }

    def natural(self, eta: Mapping[str, np.ndarray]) -> ParamVector:
        return {parameter: self.family.link(parameter).invert(value) for parameter, value in eta.items()}

    def deviance(self, eta: Mapping[str, np.ndarray]) -> float:
        with np.errstate(all='ignore'):
            params = self.natural(eta)
            if not all(np.isfinite(value).all() for value in params.values()):
                return np.inf
            value = -2. * float(np.sum(self.family.logpdf(params, self.y)))
        return value if np.isfinite(value) else np.inf

    def update(self, parameter: str, current: float) -> float:
        """ Penalized IRLS on one parameter holding the others fixed; returns the new deviance. """
        design = self.designs[parameter]
        matrix = self.matrices[parameter]
        for _ in range(self.options['max_inner_iterations']):
            params = self.natural(self.eta)
            with np.errstate(all='ignore'):
                score, weight = self.family.working(parameter, params, self.eta[parameter], self.y)
            if not (np.isfinite(score).all() and np.isfinite(weight).all()) or (weight < 0).any() \
                    or not (weight > 0).any():
                raise SingularWeightsError(parameter, 'non-finite or non-positive working weights')
            weight = np.maximum(weight, 1e-12)
            response = self.eta[parameter] + score / weight
            equations = NormalEquations(matrix, response, weight, design.penalties)
            try:
                lambdas = select_lambdas(equations, self.lambdas[parameter], self.fixed_edf[parameter])
                solution = equations.solve(lambdas)
            except np.linalg.LinAlgError as exc:
                raise SingularWeightsError(parameter, f'({exc})')

            old = self.beta[parameter]
            step = solution.coefficients - old
            accepted = False
            for halving in range(MAX_HALVINGS + 1):
                candidate = old + step
                trial = dict(self.eta)
                trial[parameter] = matrix @ candidate
                deviance = self.deviance(trial)
                if deviance <= current:
                    accepted = True
                    break
                step = step / 2.
                logging.debug(f'{self.spec.name}: step-halving {halving + 1} on `{parameter}`')
            if not accepted:
                break
            self.beta[parameter] = candidate
            self.eta[parameter] = trial[parameter]
            self.lambdas[parameter] = lambdas
            self.column_edf[parameter] = solution.column_edf
            current = deviance
            if np.max(np.abs(candidate - old)) <= COEFFICIENT_TOLERANCE * (1. + np.max(np.abs(old))):
                break
        return current

    def run(self) -> Tuple[List[float], bool, int]:
        current = self.deviance(self.eta)
        if not np.isfinite(current):
            raise FitError(f'{self.spec.name}: initial values give a non-finite deviance')
        trace = [current]
        tolerance = self.options['convergence_tolerance']
        converged = False
        iterations = 0
        for iterations in range(1, self.options['max_outer_iterations'] + 1):
            for parameter in self.family.parameters:
                current = self.update(parameter, current)
            trace.append(current)
            if abs(trace[-2] - trace[-1]) < tolerance * max(abs(trace[-2]), 1.):
                converged = True
                break
        if not converged:
            logging.info(f'{self.spec.name}: back-fitting did not converge after {iterations} cycles')
        return trace, converged, iterations

    def _split(self, theta: np.ndarray) -> Dict[str, np.ndarray]:
        betas = {}
        offset = 0
        for parameter, design in self.designs.items():
            betas[parameter] = theta[offset:offset + design.size]
            offset += design.size
        return betas

    def penalized_objective(self, theta: np.ndarray) -> Tuple[float, np.ndarray]:
        """ Negative log-likelihood plus half the quadratic penalties, with its gradient. """
        betas = self._split(theta)
        eta = {parameter: self.matrices[parameter] @ beta for parameter, beta in betas.items()}
        with np.errstate(all='ignore'):
            params = self.natural(eta)
            loglik = self.family.logpdf(params, self.y)
            value = -float(np.sum(loglik))
            if not np.isfinite(value):
                return np.inf, np.zeros_like(theta)
            score = self.family.score(params, self.y)
        gradients = []
        for parameter, beta in betas.items():
            penalty = self.designs[parameter].penalty_matrix(self.lambdas[parameter])
            value += 0.5 * float(beta @ penalty @ beta)
            dtheta = self.family.link(parameter).derivative(eta[parameter])
            gradients.append(-self.matrices[parameter].T @ (score[parameter] * dtheta) + penalty @ beta)
        gradient = np.concatenate(gradients)
        if not np.isfinite(gradient).all():
            return np.inf, np.zeros_like(theta)
        return value, gradient

    def theta(self) -> np.ndarray:
        return np.concatenate([self.beta[parameter] for parameter in self.designs])

    def assign(self, theta: np.ndarray) -> None:
        for parameter, beta in self._split(theta).items():
            self.beta[parameter] = np.array(beta)
            self.eta[parameter] = self.matrices[parameter] @ self.beta[parameter]

    def polish(self) -> bool:
        theta = self.theta()
        start, _ = self.penalized_objective(theta)
        result = optimize.minimize(
            self.penalized_objective, theta, jac=True, method='L-BFGS-B',
            options={'maxiter': 500, 'ftol': 1e-14, 'gtol': 1e-9}
        )
        if not np.isfinite(result.fun) or result.fun >= start:
            return False
        self.assign(result.x)
        return True

    def hessian(self, theta: np.ndarray) -> np.ndarray:
        """ Central differences of the analytic gradient; NaN when a perturbed point is infeasible. """
        size = len(theta)
        hessian = np.empty((size, size))
        for column in range(size):
            delta = HESSIAN_STEP * max(1., abs(theta[column]))
            forward = theta.copy()
            backward = theta.copy()
            forward[column] += delta
            backward[column] -= delta
            upper, upper_gradient = self.penalized_objective(forward)
            lower, lower_gradient = self.penalized_objective(backward)
            if not (np.isfinite(upper) and np.isfinite(lower)):
                return np.full((size, size), np.nan)
            hessian[:, column] = (upper_gradient - lower_gradient) / (2. * delta)
        return 0.5 * (hessian + hessian.T)

    def refine(self) -> Tuple[bool, int, np.ndarray]:
        """
        Damped Newton steps on the joint penalized likelihood with the smoothing parameters fixed.

        Returns whether the Newton decrement dropped below the convergence tolerance (on the
        deviance scale), the number of accepted steps and the inverse Hessian at the final
        coefficients, which is the joint covariance of the fit.
        """
        tolerance = self.options['convergence_tolerance']
        theta = self.theta()
        value, gradient = self.penalized_objective(theta)
        size = len(theta)
        if not np.isfinite(value):
            return False, 0, np.full((size, size), np.nan)
        stationary = False
        steps = 0
        while True:
            hessian = self.hessian(theta)
            if not np.isfinite(hessian).all():
                logging.debug(f'{self.spec.name}: Hessian is not finite at the fitted coefficients')
                return False, steps, np.full((size, size), np.nan)
            inverse = _regularized_inverse(hessian)
            step = -inverse @ gradient
            # The decrement approximates twice the remaining drop in the objective, i.e. the deviance drop
            decrement = float(-gradient @ step)
            if decrement <= tolerance * max(2. * abs(value), 1.):
                stationary = True
                break
            if steps == MAX_NEWTON_STEPS:
                break
            accepted = False
            for _ in range(MAX_HALVINGS + 1):
                candidate = theta + step
                trial, trial_gradient = self.penalized_objective(candidate)
                if trial < value:
                    accepted = True
                    break
                step = step / 2.
            if not accepted:
                break
            theta, value, gradient = candidate, trial, trial_gradient
            steps += 1
        self.assign(theta)
        return stationary, steps, inverse


def _regularized_inverse(hessian: np.ndarray) -> np.ndarray:
    """ Inverse of a symmetric matrix after replacing its eigenvalues by their floored magnitudes. """
    values, vectors = linalg.eigh(hessian)
    floor = EIGEN_FLOOR * max(float(np.max(np.abs(values))), 1.)
    values = np.maximum(np.abs(values), floor)
    return (vectors / values) @ vectors.T


def fit(
        spec: ModelSpec,
        data: pd.DataFrame,
        options: Optional[Mapping[str, Any]] = None,
        fallback_reason: Optional[str] = None
) -> FittedModel:
    """
    Fit a GAMLSS by RS back-fitting: each parameter in turn is updated by penalized IRLS with
    GCV-selected smoothing parameters, holding the others fixed. A parameter step is halved
    until the global deviance does not increase. When `polish` is set, all coefficients are then
    refined jointly by L-BFGS-B on the penalized likelihood with the smoothing parameters fixed.
    Damped Newton steps on the same objective finish the fit; their Hessian gives the joint
    covariance. The fit counts as converged when either back-fitting or the Newton steps meet
    the convergence tolerance.

    Arguments:

    spec:               Family and formulas to fit
    data:               Training rows holding every covariate and the target, no missing values
    options:            Overrides of the fitting defaults (iterations, tolerance, guards, polish, fixed_edf)
    fallback_reason:    Recorded on the model when it replaces a failed primary fit
    """
    options = fit_options(options)
    _check_frame(spec, data, with_target=True)
    state = _Backfitter(spec, data, options)
    trace, backfit_converged, iterations = state.run()
    polished = state.polish() if options['polish'] else False
    stationary, newton_steps, covariance = state.refine()
    converged = backfit_converged or stationary
    final = state.deviance(state.eta)

    edf = {}
    for parameter, design in state.designs.items():
        edf[parameter] = [float(state.column_edf[parameter][columns].sum()) for columns in design.slices]
    training = {
        'rows': int(len(data)),
        'target_mean': float(np.mean(state.y)),
        'target_std': float(np.std(state.y)),
        'ranges': {
            name: [float(data[name].min()), float(data[name].max())]
            for name in spec.covariates if pd.api.types.is_numeric_dtype(data[name])
        }
    }
    model = FittedModel(
        spec,
        {parameter: design.bases for parameter, design in state.designs.items()},
        state.beta,
        state.lambdas,
        edf,
        trace,
        final,
        converged,
        iterations,
        covariance,
        training,
        polished=polished,
        backfit_converged=backfit_converged,
        stationary=stationary,
        newton_steps=newton_steps,
        fallback_reason=fallback_reason
    )
    if not converged:
        logging.warning(f'{spec.name}: not stationary after {newton_steps} Newton steps')
    logging.info(
        f'{spec.name}: fitted {model.n_coefficients} coefficients on {len(data)} rows, '
        f'deviance {final:.4f}, {"converged" if converged else "not converged"} after {iterations} cycles '
        f'and {newton_steps} Newton steps'
    )
    return model


def linear_predictors(model: FittedModel, newdata: pd.DataFrame) -> Tuple[Dict[str, np.ndarray], int]:
    _check_frame(model.spec, newdata, with_target=False)
    eta = {}
    clamped = 0
    for parameter, design in model.designs.items():
        matrix, moved = design.matrix(newdata)
        eta[parameter] = matrix @ model.coefficients[parameter]
        clamped += moved
    return eta, clamped


def predict(model: FittedModel, newdata: pd.DataFrame) -> pd.DataFrame:
    """ Natural-scale parameters per row of `newdata`, one column per distribution parameter. """
    eta, clamped = linear_predictors(model, newdata)
    if clamped:
        logging.info(f'{model.name}: clamped {clamped} covariate values to the training range')
    family = model.family
    return pd.DataFrame(
        {parameter: family.link(parameter).invert(value) for parameter, value in eta.items()},
        index=newdata.index
    )


def valid_on(model: FittedModel, frame: pd.DataFrame) -> bool:
    try:
        params = predict(model, frame)
    except (DatasetError, DomainError):
        return False
    return model.family.valid({name: params[name].to_numpy() for name in params.columns})


def fit_with_fallback(
        primary_spec: ModelSpec,
        fallback_spec: ModelSpec,
        data: pd.DataFrame,
        options: Optional[Mapping[str, Any]] = None
) -> FittedModel:
    """
    Fit `primary_spec`, or `fallback_spec` when the primary fails, does not converge or yields
    invalid parameters on a training row. The returned model records why the fallback was used.
    Raises FitError when the fallback fails the same checks.
    """
    reason = None
    try:
        model = fit(primary_spec, data, options)
        if not model.converged:
            reason = 'did not converge'
        elif not valid_on(model, data):
            reason = 'invalid parameters on training rows'
        else:
            return model
    except (FitError, DomainError) as exc:
        reason = f'{type(exc).__name__}: {exc}'
    logging.warning(f'{primary_spec.name} replaced by {fallback_spec.name}: {reason}')
    try:
        model = fit(fallback_spec, data, options, fallback_reason=reason)
    except (FitError, DomainError) as exc:
        raise FitError(f'{primary_spec.name} failed ({reason}) and {fallback_spec.name} failed ({exc})')
    if not model.converged:
        raise FitError(f'{primary_spec.name} failed ({reason}) and {fallback_spec.name} did not converge')
    if not valid_on(model, data):
        raise FitError(f'{primary_spec.name} failed ({reason}) and {fallback_spec.name} gives invalid parameters')
    return model
