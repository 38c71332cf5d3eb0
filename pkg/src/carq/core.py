"""Shared data model, check loss and the weighted empirical quantile.

Every quantile estimator in the package (simple, inverse-propensity weighted,
strata fixed effects, and all their bootstrap counterparts) reduces to
minimising a weighted check loss, which in one dimension is solved exactly by
:func:`weighted_quantile`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

__all__ = [
    "CarqError",
    "DomainError",
    "ConfigurationError",
    "EstimationError",
    "DegeneratePropensityError",
    "SingularDensityError",
    "Sample",
    "StrataStats",
    "QuantileSpec",
    "check_loss",
    "weighted_quantile",
    "weighted_quantile_rows",
    "empirical_quantile",
    "strata_stats",
]

# Cumulative weights within this relative distance of tau * total count as
# reaching it; absorbs summation rounding at exact ties.
QUANTILE_RTOL = 1e-12


class CarqError(ValueError):
    """Base class for errors raised by this package."""


class DomainError(CarqError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigurationError(CarqError):
    """Inconsistent scheme, method or experiment configuration."""


class EstimationError(CarqError):
    """An estimator is undefined on the supplied sample."""


class DegeneratePropensityError(EstimationError):
    """A stratum has an empirical propensity of exactly 0 or 1."""

    def __init__(self, stratum, message=None):
        self.stratum = stratum
        if message is None:
            message = (
                f"stratum {stratum!r} has no treated or no control units; "
                "its propensity is degenerate (consider merging strata)"
            )
        super().__init__(message)


class SingularDensityError(EstimationError):
    """A kernel density plug-in is zero or the bandwidth is degenerate."""


@dataclass(frozen=True)
class Sample:
    """Observed outcomes, treatment indicators and stratum labels.

    Parameters
    ----------
    y : array_like of float
        Outcomes.
    a : array_like of {0, 1}
        Treatment indicators.
    s : array_like of int
        Non-negative integer stratum labels.
    """

    y: np.ndarray
    a: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        a_raw = np.asarray(self.a)
        s_raw = np.asarray(self.s)
        if y.ndim != 1 or a_raw.ndim != 1 or s_raw.ndim != 1:
            raise DomainError("y, a and s must be one-dimensional")
        if not (len(y) == len(a_raw) == len(s_raw)):
            raise DomainError(
                f"length mismatch: y={len(y)}, a={len(a_raw)}, s={len(s_raw)}"
            )
        if len(y) == 0:
            raise DomainError("a sample needs at least one unit")
        if not np.all(np.isfinite(y)):
            raise DomainError("outcomes must be finite")
        if not np.all((a_raw == 0) | (a_raw == 1)):
            raise DomainError("treatment indicators must be 0 or 1")
        if s_raw.dtype.kind == "f":
            if not np.all(s_raw == np.round(s_raw)):
                raise DomainError("stratum labels must be integers")
        elif s_raw.dtype.kind not in "iub":
            raise DomainError("stratum labels must be integers")
        s = s_raw.astype(np.int64)
        if np.any(s < 0):
            raise DomainError("stratum labels must be non-negative")
        for name, value in (("y", y), ("a", a_raw.astype(np.int8)), ("s", s)):
            value = np.array(value, copy=True)
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def strata(self) -> np.ndarray:
        """Sorted distinct stratum labels present in the sample."""
        return np.unique(self.s)

    def arm(self, j: int) -> np.ndarray:
        """Outcomes of the units with treatment status ``j``."""
        return self.y[self.a == j]

    def subset(self, mask) -> "Sample":
        mask = np.asarray(mask, dtype=bool)
        return Sample(self.y[mask], self.a[mask], self.s[mask])


@dataclass(frozen=True)
class StrataStats:
    """Per-stratum counts and imbalance.

    All mappings are keyed by the stratum labels present in the sample,
    in increasing order.
    """

    pi: float
    n: int
    n_s: Dict[int, int]
    n1_s: Dict[int, int]
    pi_hat: Dict[int, float]
    d_n: Dict[int, float]
    p_hat: Dict[int, float]

    @property
    def labels(self) -> list:
        return list(self.n_s)


@dataclass(frozen=True)
class QuantileSpec:
    """A quantile index, optionally with a finite grid of indices."""

    tau: float
    grid: Optional[tuple] = field(default=None)

    def __post_init__(self):
        _check_tau(self.tau)
        if self.grid is not None:
            grid = tuple(float(t) for t in self.grid)
            for t in grid:
                _check_tau(t)
            object.__setattr__(self, "grid", grid)

    def taus(self) -> tuple:
        return self.grid if self.grid is not None else (float(self.tau),)


def _check_tau(tau):
    if not (0.0 < float(tau) < 1.0):
        raise DomainError(f"quantile index must lie in (0, 1), got {tau!r}")


def check_loss(u, tau):
    """Check function ``u * (tau - 1{u <= 0})``.

    Works elementwise on arrays.
    """
    _check_tau(tau)
    u = np.asarray(u, dtype=np.float64)
    out = u * (tau - (u <= 0))
    return float(out) if out.ndim == 0 else out


def weighted_quantile(values, weights, tau) -> float:
    """Smallest minimiser of ``sum_i w_i * check_loss(v_i - q, tau)``.

    This is the left-continuous inverse of the weighted empirical CDF: the
    smallest sample value whose cumulative weight reaches ``tau`` times the
    total weight. The minimum of the piecewise-linear convex objective is
    always attained at a data point, so the result is one of ``values``.

    Parameters
    ----------
    values : array_like
        Sample values.
    weights : array_like
        Non-negative weights, same length as ``values``.
    tau : float
        Quantile index in (0, 1).

    Returns
    -------
    float
    """
    _check_tau(tau)
    v = np.asarray(values, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if v.ndim != 1 or v.shape != w.shape:
        raise DomainError("values and weights must be 1-D arrays of equal length")
    if v.size == 0:
        raise DomainError("weighted_quantile needs at least one value")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise DomainError("weights must be finite and non-negative")
    order = np.argsort(v, kind="stable")
    cw = np.cumsum(w[order])
    total = cw[-1]
    if not total > 0:
        raise DomainError("total weight must be positive")
    k = np.searchsorted(cw, tau * total * (1.0 - QUANTILE_RTOL), side="left")
    return float(v[order][min(k, v.size - 1)])


def weighted_quantile_rows(values, weights, tau, presorted=False):
    """Row-wise :func:`weighted_quantile` for 2-D arrays.

    Rows with zero total weight yield ``nan``. When ``presorted`` is true
    every row of ``values`` must already be in increasing order.
    """
    v = np.asarray(values, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if v.ndim == 1:
        v = np.broadcast_to(v, w.shape)
    if not presorted:
        order = np.argsort(v, axis=1, kind="stable")
        v = np.take_along_axis(v, order, axis=1)
        w = np.take_along_axis(w, order, axis=1)
    cw = np.cumsum(w, axis=1)
    total = cw[:, -1]
    thr = tau * total * (1.0 - QUANTILE_RTOL)
    k = np.argmax(cw >= thr[:, None], axis=1)
    out = v[np.arange(v.shape[0]), k]
    return np.where(total > 0, out, np.nan)


def empirical_quantile(values, tau) -> float:
    """Unweighted special case of :func:`weighted_quantile` in linear time."""
    _check_tau(tau)
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise DomainError("empirical_quantile needs at least one value")
    k = math.ceil(tau * v.size * (1.0 - QUANTILE_RTOL)) - 1
    k = min(max(k, 0), v.size - 1)
    return float(np.partition(v, k)[k])


def strata_stats(sample: Sample, pi: float) -> StrataStats:
    """Per-stratum sizes, treated counts, propensities and imbalances.

    ``d_n[s] = n1_s[s] - pi * n_s[s]``; strata absent from the sample do not
    appear in the mappings.
    """
    if not (0.0 < pi < 1.0):
        raise DomainError(f"target proportion must lie in (0, 1), got {pi!r}")
    labels, inv = np.unique(sample.s, return_inverse=True)
    counts = np.bincount(inv)
    treated = np.bincount(inv, weights=sample.a).astype(np.int64)
    n_s, n1_s, pi_hat, d_n, p_hat = {}, {}, {}, {}, {}
    for lab, c, t in zip(labels.tolist(), counts.tolist(), treated.tolist()):
        n_s[lab] = c
        n1_s[lab] = t
        pi_hat[lab] = t / c
        d_n[lab] = t - pi * c
        p_hat[lab] = c / sample.n
    return StrataStats(pi=pi, n=sample.n, n_s=n_s, n1_s=n1_s, pi_hat=pi_hat,
                       d_n=d_n, p_hat=p_hat)


def stratum_index(s):
    """Map labels to ``0..K-1``; returns ``(labels, index)``."""
    labels, inv = np.unique(np.asarray(s), return_inverse=True)
    return labels, inv.reshape(np.shape(s))


def as_label_map(value, labels: Sequence[int], name="value") -> Dict[int, float]:
    """Broadcast a scalar or mapping to a ``{label: float}`` dict."""
    if isinstance(value, Mapping):
        missing = [lab for lab in labels if lab not in value]
        if missing:
            raise ConfigurationError(f"{name} missing for strata {missing}")
        return {lab: float(value[lab]) for lab in labels}
    return {lab: float(value) for lab in labels}
