#!/usr/bin/env python
# -*- coding: utf-8 -*-
from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Dict, Mapping, Optional, Tuple, Union

import numpy as np
from scipy import special, stats

from .constants import FAMILY_PARAMETERS
from .utils import DomainError

ParamVector = Dict[str, np.ndarray]

_PROBABILITY_CLIP = 1e-10


class Link(ABC):
    name = ''

    @abstractmethod
    def apply(self, value: np.ndarray) -> np.ndarray:
        """ Natural scale to predictor scale. """

    @abstractmethod
    def invert(self, eta: np.ndarray) -> np.ndarray:
        """ Predictor scale to natural scale. """

    @abstractmethod
    def derivative(self, eta: np.ndarray) -> np.ndarray:
        """ d(natural)/d(eta) evaluated at eta. """


class IdentityLink(Link):
    name = 'identity'

    def apply(self, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value, dtype=float)
        if not np.isfinite(value).all():
            raise DomainError('identity link needs finite values')
        return value

    def invert(self, eta: np.ndarray) -> np.ndarray:
        return np.asarray(eta, dtype=float)

    def derivative(self, eta: np.ndarray) -> np.ndarray:
        return np.ones_like(np.asarray(eta, dtype=float))


class LogLink(Link):
    name = 'log'

    def apply(self, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value, dtype=float)
        if not (value > 0).all() or not np.isfinite(value).all():
            raise DomainError('log link needs strictly positive finite values')
        return np.log(value)

    def invert(self, eta: np.ndarray) -> np.ndarray:
        return np.exp(np.asarray(eta, dtype=float))

    def derivative(self, eta: np.ndarray) -> np.ndarray:
        return np.exp(np.asarray(eta, dtype=float))


class LogitLink(Link):
    name = 'logit'

    def apply(self, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value, dtype=float)
        if not ((value > 0) & (value < 1)).all():
            raise DomainError('logit link needs values strictly inside (0, 1)')
        return special.logit(value)

    def invert(self, eta: np.ndarray) -> np.ndarray:
        return special.expit(np.asarray(eta, dtype=float))

    def derivative(self, eta: np.ndarray) -> np.ndarray:
        p = special.expit(np.asarray(eta, dtype=float))
        return p * (1. - p)


LINKS = {
    'identity': IdentityLink(),
    'log': LogLink(),
    'logit': LogitLink()
}


def get_link(link: Union[str, Link]) -> Link:
    if isinstance(link, Link):
        return link
    try:
        return LINKS[link]
    except KeyError:
        raise ValueError(f'Unknown link `{link}`, choose from {", ".join(LINKS)}')


def apply_link(link: Union[str, Link], value: np.ndarray) -> np.ndarray:
    return get_link(link).apply(value)


def invert_link(link: Union[str, Link], value: np.ndarray) -> np.ndarray:
    return get_link(link).invert(value)


class DistributionFamily(ABC):
    """
    Parametric response family used by the GAMLSS engine.

    Parameters are passed as a mapping from parameter name to natural-scale values that
    broadcast against the observations. `score` and `information` return per-observation first
    derivatives of the log-likelihood and the expected information on the natural scale.
    """

    name = ''
    parameters: Tuple[str, ...] = ()
    links: Dict[str, str] = {}

    def link(self, parameter: str) -> Link:
        return get_link(self.links[parameter])

    def validate(self, params: Mapping[str, np.ndarray]) -> ParamVector:
        missing = [name for name in self.parameters if name not in params]
        if missing:
            raise DomainError(f'{self.name} is missing parameters: {", ".join(missing)}')
        checked = {name: np.asarray(params[name], dtype=float) for name in self.parameters}
        for name, value in checked.items():
            if not np.isfinite(value).all():
                raise DomainError(f'{self.name} parameter `{name}` is not finite')
        self._check_domain(checked)
        return checked

    def _check_domain(self, params: ParamVector) -> None:
        for name in self.parameters:
            if self.links[name] == 'log' and not (params[name] > 0).all():
                raise DomainError(f'{self.name} parameter `{name}` must be strictly positive')

    def valid(self, params: Mapping[str, np.ndarray]) -> bool:
        try:
            self.validate(params)
        except DomainError:
            return False
        return True

    @abstractmethod
    def logpdf(self, params: ParamVector, y: np.ndarray) -> np.ndarray:
        pass

    def pdf(self, params: Mapping[str, np.ndarray], y: np.ndarray) -> np.ndarray:
        return np.exp(self.logpdf(self.validate(params), np.asarray(y, dtype=float)))

    def loglik(self, params: Mapping[str, np.ndarray], y: np.ndarray) -> np.ndarray:
        return self.logpdf(self.validate(params), np.asarray(y, dtype=float))

    @abstractmethod
    def _cdf(self, params: ParamVector, y: np.ndarray) -> np.ndarray:
        pass

    def cdf(self, params: Mapping[str, np.ndarray], y: np.ndarray) -> np.ndarray:
        return self._cdf(self.validate(params), np.asarray(y, dtype=float))

    @abstractmethod
    def _quantile(self, params: ParamVector, p: np.ndarray) -> np.ndarray:
        pass

    def quantile(self, params: Mapping[str, np.ndarray], p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if not ((p > 0) & (p < 1)).all():
            raise DomainError('Quantile levels must lie strictly inside (0, 1)')
        return self._quantile(self.validate(params), p)

    @abstractmethod
    def score(self, params: ParamVector, y: np.ndarray) -> ParamVector:
        pass

    @abstractmethod
    def information(self, params: ParamVector, y: np.ndarray) -> ParamVector:
        pass

    @abstractmethod
    def random(self, params: Mapping[str, np.ndarray], size: int, rng: np.random.Generator) -> np.ndarray:
        pass

    @abstractmethod
    def initial(self, y: np.ndarray) -> Dict[str, float]:
        pass

    def working(
            self,
            parameter: str,
            params: ParamVector,
            eta: np.ndarray,
            y: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray]:
        """ Score and information of one parameter on its predictor scale. """
        dtheta = self.link(parameter).derivative(eta)
        score = self.score(params, y)[parameter]
        information = self.information(params, y)[parameter]
        return score * dtheta, information * dtheta ** 2


class Gaussian(DistributionFamily):
    name = 'Gaussian'
    parameters = FAMILY_PARAMETERS['Gaussian']
    links = {'mu': 'identity', 'sigma': 'log'}

    def logpdf(self, params: ParamVector, y: np.ndarray) -> np.ndarray:
        return stats.norm.logpdf(y, loc=params['mu'], scale=params['sigma'])

    def _cdf(self, params: ParamVector, y: np.ndarray) -> np.ndarray:
        return stats.norm.cdf(y, loc=params['mu'], scale=params['sigma'])

    def _quantile(self, params: ParamVector, p: np.ndarray) -> np.ndarray:
        return stats.norm.ppf(p, loc=params['mu'], scale=params['sigma'])

    def score(self, params: ParamVector, y: np.ndarray) -> ParamVector:
        mu, sigma = params['mu'], params['sigma']
        residual = y - mu
        return {
            'mu': residual / sigma ** 2,
            'sigma': -1. / sigma + residual ** 2 / sigma ** 3
        }

    def information(self, params: ParamVector, y: np.ndarray) -> ParamVector:
        sigma = np.broadcast_to(params['sigma'], np.shape(y))
        return {
            'mu': 1. / sigma ** 2,
            'sigma': 2. / sigma ** 2
        }

    def random(self, params: Mapping[str, np.ndarray], size: int, rng: np.random.Generator) -> np.ndarray:
        params = self.validate(params)
        return rng.normal(params['mu'], params['sigma'], size=size)

    def initial(self, y: np.ndarray) -> Dict[str, float]:
        y = np.asarray(y, dtype=float)
        return {'mu': float(y.mean()), 'sigma': max(float(y.std()), 1e-6)}


class GeneralisedBetaPrime(DistributionFamily):
    """
    Four-parameter Generalised Beta Prime on (0, inf):

        f(y) = sigma * y**(sigma*nu - 1) / (mu**(sigma*nu) * B(nu, tau) * (1 + (y/mu)**sigma)**(nu + tau))

    With s = (y/mu)**sigma / (1 + (y/mu)**sigma), s follows Beta(nu, tau), which gives the CDF and
    a closed-form quantile through the regularized incomplete beta function.
    """

    name = 'GeneralisedBetaPrime'
    parameters = FAMILY_PARAMETERS['GeneralisedBetaPrime']
    links = {'mu': 'log', 'sigma': 'log', 'nu': 'log', 'tau': 'log'}

    @staticmethod
    def _log_ratio(params: ParamVector, y: np.ndarray) -> np.ndarray:
        with np.errstate(divide='ignore', invalid='ignore'):
            return np.log(np.where(y > 0, y, 1.)) - np.log(params['mu'])

    def logpdf(self, params: ParamVector, y: np.ndarray) -> np.ndarray:
        mu, sigma, nu, tau = (params[name] for name in self.parameters)
        z = sigma * self._log_ratio(params, y)
        safe_y = np.where(y > 0, y, 1.)
        value = (np.log(sigma) - np.log(safe_y) + nu * z - special.betaln(nu, tau)
                 - (nu + tau) * np.logaddexp(0., z))
        return np.where(y > 0, value, -np.inf)

    def _cdf(self, params: ParamVector, y: np.ndarray) -> np.ndarray:
        sigma, nu, tau = params['sigma'], params['nu'], params['tau']
        z = sigma * self._log_ratio(params, y)
        lower = special.betainc(nu, tau, special.expit(z))
        # Upper tail through the complement keeps precision near 1
        upper = 1. - special.betainc(tau, nu, special.expit(-z))
        value = np.where(z > 0, upper, lower)
        return np.where(y > 0, value, 0.)

    def _quantile(self, params: ParamVector, p: np.ndarray) -> np.ndarray:
        mu, sigma, nu, tau = (params[name] for name in self.parameters)
        u = special.betaincinv(nu, tau, p)
        v = special.betaincinv(tau, nu, 1. - p)
        with np.errstate(divide='ignore'):
            log_odds = np.where(p <= 0.5, np.log(u) - np.log1p(-u), np.log1p(-v) - np.log(v))
        return mu * np.exp(log_odds / sigma)

    def score(self, params: ParamVector, y: np.ndarray) -> ParamVector:
        mu, sigma, nu, tau = (params[name] for name in self.parameters)
        log_ratio = self._log_ratio(params, y)
        z = sigma * log_ratio
        s = special.expit(z)
        digamma_sum = special.digamma(nu + tau)
        return {
            'mu': (sigma / mu) * ((nu + tau) * s - nu),
            'sigma': 1. / sigma + log_ratio * (nu - (nu + tau) * s),
            'nu': -np.logaddexp(0., -z) - special.digamma(nu) + digamma_sum,
            'tau': -np.logaddexp(0., z) - special.digamma(tau) + digamma_sum
        }

    def information(self, params: ParamVector, y: np.ndarray) -> ParamVector:
        mu, sigma, nu, tau = (np.broadcast_to(params[name], np.shape(y)) for name in self.parameters)
        trigamma_sum = special.polygamma(1, nu + tau)
        # s = expit(sigma * log(y / mu)) is Beta(nu, tau); s(1 - s) weighting shifts it to Beta(nu + 1, tau + 1)
        shape = nu * tau / (nu + tau + 1.)
        log_odds_mean = special.digamma(nu + 1.) - special.digamma(tau + 1.)
        log_odds_var = special.polygamma(1, nu + 1.) + special.polygamma(1, tau + 1.)
        return {
            'mu': (sigma / mu) ** 2 * shape,
            'sigma': (1. + shape * (log_odds_mean ** 2 + log_odds_var)) / sigma ** 2,
            'nu': special.polygamma(1, nu) - trigamma_sum,
            'tau': special.polygamma(1, tau) - trigamma_sum
        }

    def random(self, params: Mapping[str, np.ndarray], size: int, rng: np.random.Generator) -> np.ndarray:
        params = self.validate(params)
        u = rng.beta(params['nu'], params['tau'], size=size)
        return params['mu'] * (u / (1. - u)) ** (1. / params['sigma'])

    def initial(self, y: np.ndarray) -> Dict[str, float]:
        log_y = np.log(np.asarray(y, dtype=float))
        spread = max(float(log_y.std()), 1e-3)
        return {
            'mu': float(np.exp(log_y.mean())),
            # Logistic log-ratio when nu = tau = 1
            'sigma': float(np.pi / (np.sqrt(3.) * spread)),
            'nu': 1.,
            'tau': 1.
        }


class Bernoulli(DistributionFamily):
    """ Binary response with logit link, used for discrete hazards. """

    name = 'Bernoulli'
    parameters = FAMILY_PARAMETERS['Bernoulli']
    links = {'mu': 'logit'}

    def _check_domain(self, params: ParamVector) -> None:
        if not ((params['mu'] >= 0) & (params['mu'] <= 1)).all():
            raise DomainError('Bernoulli probability must lie in [0, 1]')

    def logpdf(self, params: ParamVector, y: np.ndarray) -> np.ndarray:
        p = params['mu']
        value = special.xlogy(y, p) + special.xlog1py(1. - y, -p)
        return np.where((y == 0) | (y == 1), value, -np.inf)

    def _cdf(self, params: ParamVector, y: np.ndarray) -> np.ndarray:
        p = params['mu']
        return np.where(y < 0, 0., np.where(y < 1, 1. - p, 1.))

    def _quantile(self, params: ParamVector, p: np.ndarray) -> np.ndarray:
        return np.where(p <= 1. - params['mu'], 0., 1.)

    def score(self, params: ParamVector, y: np.ndarray) -> ParamVector:
        p = np.clip(params['mu'], _PROBABILITY_CLIP, 1. - _PROBABILITY_CLIP)
        return {'mu': (y - p) / (p * (1. - p))}

    def information(self, params: ParamVector, y: np.ndarray) -> ParamVector:
        p = np.clip(np.broadcast_to(params['mu'], np.shape(y)), _PROBABILITY_CLIP, 1. - _PROBABILITY_CLIP)
        return {'mu': 1. / (p * (1. - p))}

    def random(self, params: Mapping[str, np.ndarray], size: int, rng: np.random.Generator) -> np.ndarray:
        params = self.validate(params)
        return (rng.random(size) < params['mu']).astype(float)

    def initial(self, y: np.ndarray) -> Dict[str, float]:
        mean = float(np.mean(y))
        return {'mu': min(max(mean, 1e-4), 1. - 1e-4)}


FAMILIES = {
    'Gaussian': Gaussian(),
    'GeneralisedBetaPrime': GeneralisedBetaPrime(),
    'Bernoulli': Bernoulli()
}


def get_family(family: Union[str, DistributionFamily]) -> DistributionFamily:
    if isinstance(family, DistributionFamily):
        return family
    try:
        return FAMILIES[family]
    except KeyError:
        raise ValueError(f'Unknown distribution family `{family}`, choose from {", ".join(FAMILIES)}')


def pdf(family: Union[str, DistributionFamily], params: Mapping[str, np.ndarray], y: np.ndarray) -> np.ndarray:
    return get_family(family).pdf(params, y)


def cdf(family: Union[str, DistributionFamily], params: Mapping[str, np.ndarray], y: np.ndarray) -> np.ndarray:
    return get_family(family).cdf(params, y)


def quantile(
        family: Union[str, DistributionFamily],
        params: Mapping[str, np.ndarray],
        p: np.ndarray
) -> np.ndarray:
    return get_family(family).quantile(params, p)


def loglik(family: Union[str, DistributionFamily], params: Mapping[str, np.ndarray], y: np.ndarray) -> np.ndarray:
    return get_family(family).loglik(params, y)


def select_rows(params: Mapping[str, np.ndarray], rows: Union[np.ndarray, slice, int]) -> ParamVector:
    """ Row subset of a parameter mapping whose arrays share one leading dimension. """
    return {name: np.asarray(value)[rows] for name, value in params.items()}


def as_params(family: Union[str, DistributionFamily], values: Optional[Mapping[str, float]] = None, **kwargs) -> ParamVector:
    family = get_family(family)
    values = dict(values or {}, **kwargs)
    return family.validate({name: np.asarray(values[name], dtype=float) for name in family.parameters})
