"""Analytic standard errors for the simple quantile regression estimator.

The asymptotic variance of the SQR estimator splits into an outcome term,
an assignment term and a strata term::

    zeta_y = sum_j (tau(1-tau) - E m_j(S)^2) / (pi_j f_j(q_j)^2)
    zeta_a = E gamma(S) (m_1(S) / (pi f_1) + m_0(S) / ((1-pi) f_0))^2
    zeta_s = E (m_1(S) / f_1 - m_0(S) / f_0)^2

with ``pi_1 = pi``, ``pi_0 = 1 - pi`` and ``m_j(s) = E[tau - 1{Y(j) <= q_j} | S = s]``.
The "naive" standard error plugs ``gamma = pi(1 - pi)`` into the assignment
term (the value under simple random sampling); the "adjusted" one uses the
assignment rule's own ``gamma(s)``. Densities are Gaussian-kernel estimates
with Silverman's rule-of-thumb bandwidth, evaluated at the arm quantiles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from .core import (
    ConfigurationError,
    DomainError,
    EstimationError,
    Sample,
    SingularDensityError,
    _check_tau,
    as_label_map,
    stratum_index,
)
from .estimate import qte_sqr

__all__ = [
    "DensityPlugin",
    "VarianceComponents",
    "silverman_h",
    "kde_gaussian",
    "m_hat",
    "se_naive",
    "se_adjusted",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class DensityPlugin:
    arm: int
    h: float
    f_hat_at_q: float


@dataclass(frozen=True)
class VarianceComponents:
    """Plug-in variance decomposition; ``se = sqrt(total / n)``."""

    zeta_y_sq: float
    zeta_a_sq: float
    zeta_s_sq: float
    total: float
    se: float
    densities: Tuple[DensityPlugin, DensityPlugin]


def silverman_h(values, scale: float = 1.0) -> float:
    """Rule-of-thumb bandwidth ``1.06 * scale * sd * n**(-1/5)``.

    ``sd`` is the sample standard deviation (``n - 1`` denominator).
    ``scale`` is a bandwidth multiplier for sensitivity sweeps.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise SingularDensityError("bandwidth needs at least two values")
    sd = float(np.std(v, ddof=1))
    if not sd > 0:
        raise SingularDensityError("values have zero dispersion; bandwidth is degenerate")
    if not scale > 0:
        raise DomainError("bandwidth scale must be positive")
    return 1.06 * scale * sd * v.size ** (-0.2)


def kde_gaussian(values, x, h: float):
    """Gaussian kernel density estimate of ``values`` evaluated at ``x``."""
    if not h > 0:
        raise DomainError(f"bandwidth must be positive, got {h!r}")
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise DomainError("kde needs at least one value")
    xs = np.asarray(x, dtype=np.float64)
    u = (xs[..., None] - v) / h
    dens = np.exp(-0.5 * u * u).sum(axis=-1) / (v.size * h * _SQRT_2PI)
    return float(dens) if dens.ndim == 0 else dens


def m_hat(sample: Sample, tau: float, arm: int, q: float = None) -> Dict[int, float]:
    """Stratum means of ``tau - 1{Y <= q}`` within one arm.

    ``q`` defaults to the arm's empirical ``tau``-quantile.
    """
    _check_tau(tau)
    if arm not in (0, 1):
        raise DomainError("arm must be 0 or 1")
    if q is None:
        q = qte_sqr(sample, tau).per_arm[1 - arm]
    labels, idx = stratum_index(sample.s)
    in_arm = (sample.a == arm).astype(np.float64)
    cnt = np.bincount(idx, weights=in_arm, minlength=len(labels))
    empty = np.flatnonzero(cnt == 0)
    if empty.size:
        raise EstimationError(
            f"stratum {int(labels[empty[0]])} has no units in arm {arm}")
    hits = in_arm * (tau - (sample.y <= q))
    sums = np.bincount(idx, weights=hits, minlength=len(labels))
    return {int(lab): float(v) for lab, v in zip(labels, sums / cnt)}


def se_naive(sample: Sample, tau: float, pi: float,
             bandwidth_scale: float = 1.0) -> VarianceComponents:
    """Standard error treating the design as simple random sampling."""
    return _components(sample, tau, pi, None, bandwidth_scale)


def se_adjusted(sample: Sample, tau: float, pi: float, gamma,
                bandwidth_scale: float = 1.0) -> VarianceComponents:
    """Standard error with the assignment rule's ``gamma(s)``.

    ``gamma`` is a scalar or a ``{label: value}`` mapping, each value in
    ``[0, pi(1 - pi)]`` (see :func:`carq.assign.gamma_of`).
    """
    return _components(sample, tau, pi, gamma, bandwidth_scale)


def _components(sample, tau, pi, gamma, bandwidth_scale):
    _check_tau(tau)
    if not (0.0 < pi < 1.0):
        raise DomainError(f"pi must lie in (0, 1), got {pi!r}")
    labels = [int(x) for x in np.unique(sample.s)]
    cap = pi * (1.0 - pi)
    if gamma is None:
        gmap = {lab: cap for lab in labels}
    else:
        gmap = as_label_map(gamma, labels, "gamma")
        for lab, g in gmap.items():
            if not (0.0 <= g <= cap * (1.0 + 1e-12)):
                raise ConfigurationError(
                    f"gamma({lab}) = {g} outside [0, pi(1-pi)] = [0, {cap}]")

    est = qte_sqr(sample, tau)
    q1, q0 = est.per_arm
    plugins = []
    for j, q in ((1, q1), (0, q0)):
        yj = sample.arm(j)
        h = silverman_h(yj, bandwidth_scale)
        f = kde_gaussian(yj, q, h)
        if not f > 0:
            raise SingularDensityError(f"estimated density of arm {j} is zero at its quantile")
        plugins.append(DensityPlugin(j, h, f))
    f1, f0 = plugins[0].f_hat_at_q, plugins[1].f_hat_at_q

    m1 = m_hat(sample, tau, 1, q1)
    m0 = m_hat(sample, tau, 0, q0)
    _, idx = stratum_index(sample.s)
    p = np.bincount(idx) / sample.n
    m1v = np.array([m1[lab] for lab in labels])
    m0v = np.array([m0[lab] for lab in labels])
    gv = np.array([gmap[lab] for lab in labels])

    tt = tau * (1.0 - tau)
    zeta_y = ((tt - np.sum(p * m1v ** 2)) / (pi * f1 ** 2)
              + (tt - np.sum(p * m0v ** 2)) / ((1.0 - pi) * f0 ** 2))
    zeta_a = np.sum(p * gv * (m1v / (pi * f1) + m0v / ((1.0 - pi) * f0)) ** 2)
    zeta_s = np.sum(p * (m1v / f1 - m0v / f0) ** 2)
    total = float(zeta_y + zeta_a + zeta_s)
    if not total > 0:
        raise EstimationError(f"plug-in variance is not positive ({total})")
    return VarianceComponents(float(zeta_y), float(zeta_a), float(zeta_s), total,
                              math.sqrt(total / sample.n), tuple(plugins))
