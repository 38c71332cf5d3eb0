"""Simulation designs and a Monte Carlo oracle for their true parameters.

All four designs draw a scalar covariate Z, build strata
``S = sum_j 1{Z <= g_j}`` and generate potential outcomes
``Y(j) = j * mu + m_j(Z) + scale_j(Z) * eps_j``:

=====  ==========================  ======================================
id     covariate and cutoffs       outcome structure
=====  ==========================  ======================================
1      standardised Beta(2, 2);    ``m_1 = m_0 = gamma Z``; normal noise,
       ``sqrt(20) * (-1/4, 0,      treated noise scaled by ``sigma``
       1/4, 1/2)``
2      as design 1                 ``m_1 = gamma Z``,
                                   ``m_0 = -gamma log(Z + 3) 1{Z <= 1/2}``
3      Uniform[-2, 2];             ``m_0`` piecewise quadratic, ``m_1 = -m_0``;
       ``(-1, 0, 1, 2)``           t(3)/3 noise scaled by ``1 + Z^2``
4      Normal(0, 4);               ``m_1 = -m_0 = gamma Z^2 / 4``; normal
       ``2 * Phi^-1(1/4, 1/2,      noise scaled by ``1 + exp(-Z^2/2)/2``
       3/4)``, ``inf``
=====  ==========================  ======================================
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Optional, Tuple

import numpy as np

from ._streams import SeedLike, seed_words, substream
from .assign import SchemeSpec, StrataRule, assign, make_strata
from .core import ConfigurationError, DomainError, Sample, _check_tau, empirical_quantile

__all__ = [
    "DgpSpec",
    "GeneratedSample",
    "STRATA_RULES",
    "generate_potential",
    "generate_sample",
    "true_value",
    "TrueValue",
]

_SQRT20 = math.sqrt(20.0)
_nd = NormalDist()

STRATA_RULES = {
    1: StrataRule((-0.25 * _SQRT20, 0.0, 0.25 * _SQRT20, 0.5 * _SQRT20)),
    2: StrataRule((-0.25 * _SQRT20, 0.0, 0.25 * _SQRT20, 0.5 * _SQRT20)),
    3: StrataRule((-1.0, 0.0, 1.0, 2.0)),
    4: StrataRule((2 * _nd.inv_cdf(0.25), 0.0, 2 * _nd.inv_cdf(0.75), math.inf)),
}


@dataclass(frozen=True)
class DgpSpec:
    id: int
    mu: float = 0.0
    gamma_coef: float = 4.0
    sigma: float = 2.0

    def __post_init__(self):
        if self.id not in (1, 2, 3, 4):
            raise ConfigurationError(f"unknown design {self.id!r}; expected 1..4")
        if not self.sigma > 0:
            raise ConfigurationError("sigma must be positive")


@dataclass(frozen=True)
class GeneratedSample:
    sample: Sample
    z: np.ndarray
    y1: np.ndarray
    y0: np.ndarray


def generate_potential(spec: DgpSpec, n: int, rng: np.random.Generator):
    """Draw ``(z, y1, y0, strata)`` for ``n`` units."""
    if n < 1:
        raise DomainError("n must be at least 1")
    g, sig, mu = spec.gamma_coef, spec.sigma, spec.mu
    if spec.id in (1, 2):
        z = (rng.beta(2.0, 2.0, n) - 0.5) * _SQRT20
        e1, e2 = rng.standard_normal(n), rng.standard_normal(n)
        y1 = mu + g * z + sig * e1
        if spec.id == 1:
            y0 = g * z + e2
        else:
            y0 = -g * np.log(z + 3.0) * (z <= 0.5) + e2
    elif spec.id == 3:
        z = rng.uniform(-2.0, 2.0, n)
        e1, e2 = rng.standard_t(3, n) / 3.0, rng.standard_t(3, n) / 3.0
        z2 = z * z
        m0 = np.where(np.abs(z) >= 1.0, g * z2, g / 4.0 * (2.0 - z2))
        y1 = mu - m0 + sig * (1.0 + z2) * e1
        y0 = m0 + (1.0 + z2) * e2
    else:
        z = rng.normal(0.0, 2.0, n)
        e1, e2 = rng.standard_normal(n), rng.standard_normal(n)
        z2 = z * z
        scale = 1.0 + 0.5 * np.exp(-z2 / 2.0)
        y1 = mu + g * z2 / 4.0 + sig * scale * e1
        y0 = -g * z2 / 4.0 + scale * e2
    strata = make_strata(z, STRATA_RULES[spec.id])
    return z, y1, y0, strata


def generate_sample(spec: DgpSpec, n: int, scheme: SchemeSpec,
                    rng: np.random.Generator) -> GeneratedSample:
    """Potential outcomes, an assignment under ``scheme`` and the observed sample."""
    z, y1, y0, strata = generate_potential(spec, n, rng)
    a = assign(scheme, strata, rng)
    y = np.where(a == 1, y1, y0)
    return GeneratedSample(Sample(y, a, strata), z, y1, y0)


@dataclass(frozen=True)
class TrueValue:
    value: float
    mc_se: float
    oracle_n: int
    oracle_reps: int


def true_value(spec: DgpSpec, tau=None, estimand: str = "qte",
               oracle_n: int = 10 ** 6, oracle_reps: int = 100,
               seed: SeedLike = 0) -> TrueValue:
    """Monte Carlo value of a population parameter of a design.

    Each replication draws ``oracle_n`` potential-outcome pairs from its own
    substream and computes the sample analogue; the result is the average
    over replications, with its Monte Carlo standard error.

    Parameters
    ----------
    estimand : {'qte', 'ate', 'contrast'}
        ``q(tau)``, ``E[Y(1) - Y(0)]`` or ``q(tau1) - q(tau2)`` with
        ``tau = (tau1, tau2)``.
    """
    estimand = estimand.lower()
    if estimand == "qte":
        _check_tau(tau)
    elif estimand == "contrast":
        if not isinstance(tau, (tuple, list)) or len(tau) != 2:
            raise DomainError("a contrast needs tau = (tau1, tau2)")
        _check_tau(tau[0])
        _check_tau(tau[1])
    elif estimand != "ate":
        raise DomainError(f"unknown estimand {estimand!r}")
    if oracle_n < 1 or oracle_reps < 1:
        raise DomainError("oracle_n and oracle_reps must be positive")

    words = seed_words(seed)
    vals = np.empty(oracle_reps)
    for r in range(oracle_reps):
        _, y1, y0, _ = generate_potential(spec, oracle_n, substream(words, r))
        if estimand == "ate":
            vals[r] = y1.mean() - y0.mean()
        elif estimand == "qte":
            vals[r] = empirical_quantile(y1, tau) - empirical_quantile(y0, tau)
        else:
            vals[r] = ((empirical_quantile(y1, tau[0]) - empirical_quantile(y0, tau[0]))
                       - (empirical_quantile(y1, tau[1]) - empirical_quantile(y0, tau[1])))
    mc_se = float(vals.std(ddof=1) / math.sqrt(oracle_reps)) if oracle_reps > 1 else float("nan")
    return TrueValue(float(vals.mean()), mc_se, oracle_n, oracle_reps)
