"""Covariate-adaptive treatment assignment rules and stratum construction.

Four rules are supported:

``srs``
    Simple random sampling: i.i.d. Bernoulli(pi) draws.
``wei``
    Wei's adaptive biased coin: unit k is treated with probability
    ``phi(D / n)`` where ``D`` is the running imbalance and ``n`` the running
    size of its stratum (``0/0`` is read as 0).
``bcd``
    Efron's biased coin: probability 1/2, ``lam`` or ``1 - lam`` when the
    running imbalance of the unit's stratum is zero, negative or positive.
``sbr``
    Stratified block randomisation: exactly ``floor(pi * n(s))`` treated
    units in each stratum, placed uniformly at random.

All rules are driven by one uniform variate per unit, which is what lets the
covariate-adaptive bootstrap run many assignments at once (see
:func:`assign_from_uniforms`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import ConfigurationError, DomainError, stratum_index

__all__ = [
    "SCHEMES",
    "SchemeSpec",
    "StrataRule",
    "make_strata",
    "assign",
    "assign_from_uniforms",
    "gamma_of",
    "default_phi",
]

SCHEMES = ("srs", "wei", "bcd", "sbr")

# floor(pi * n) is taken after adding this slack so that e.g. 0.7 * 30
# evaluating to 20.999999999999996 still yields 21.
_FLOOR_SLACK = 1e-9


def default_phi(x):
    """``phi(x) = (1 - x) / 2``, the allocation function used in the simulations."""
    return (1.0 - np.asarray(x, dtype=np.float64)) / 2.0


@dataclass(frozen=True)
class SchemeSpec:
    """An assignment rule together with its parameters.

    Parameters
    ----------
    kind : {'srs', 'wei', 'bcd', 'sbr'}
    pi : float
        Target treated proportion in every stratum.
    lam : float
        Biased-coin probability, ``1/2 < lam <= 1`` (``bcd`` only).
    phi : callable, optional
        Allocation function for ``wei``; must be vectorised, non-increasing
        and satisfy ``phi(-x) = 1 - phi(x)``. Defaults to
        :func:`default_phi`.
    """

    kind: str
    pi: float = 0.5
    lam: float = 0.75
    phi: Optional[Callable] = None

    def __post_init__(self):
        kind = str(self.kind).lower()
        if kind not in SCHEMES:
            raise ConfigurationError(
                f"unknown assignment scheme {self.kind!r}; expected one of {SCHEMES}")
        object.__setattr__(self, "kind", kind)
        # degenerate SRS (pi = 0 or 1) is allowed as a test convenience
        if kind == "srs":
            ok = 0.0 <= self.pi <= 1.0
        else:
            ok = 0.0 < self.pi < 1.0
        if not ok:
            raise ConfigurationError(f"pi out of range for {kind}: {self.pi!r}")
        if kind in ("wei", "bcd") and self.pi != 0.5:
            raise ConfigurationError(f"{kind} is only defined for pi = 1/2")
        if kind == "bcd" and not (0.5 < self.lam <= 1.0):
            raise ConfigurationError(f"lam must lie in (1/2, 1], got {self.lam!r}")
        if kind == "wei" and self.phi is None:
            object.__setattr__(self, "phi", default_phi)

    @property
    def strong_balance(self) -> bool:
        return self.kind in ("bcd", "sbr")

    def describe(self) -> dict:
        out = {"kind": self.kind, "pi": self.pi}
        if self.kind == "bcd":
            out["lambda"] = self.lam
        return out


@dataclass(frozen=True)
class StrataRule:
    """Stratum ``S = sum_j 1{z <= g_j}`` for strictly increasing cutoffs ``g``."""

    cutoffs: tuple

    def __post_init__(self):
        g = tuple(float(c) for c in self.cutoffs)
        if len(g) == 0:
            raise ConfigurationError("at least one cutoff is required")
        if any(b <= a for a, b in zip(g, g[1:])):
            raise ConfigurationError("cutoffs must be strictly increasing")
        object.__setattr__(self, "cutoffs", g)


def make_strata(z, rule: StrataRule) -> np.ndarray:
    """Labels in ``{0, ..., J}``; larger labels mean smaller covariate values."""
    z = np.asarray(z, dtype=np.float64)
    g = np.asarray(rule.cutoffs)
    # z <= g_j counts the cutoffs at or above z
    return (len(g) - np.searchsorted(g, z, side="left")).astype(np.int64)


def assign(scheme: SchemeSpec, strata, rng: np.random.Generator) -> np.ndarray:
    """Draw treatment indicators for units arriving in the given order.

    Consumes exactly ``len(strata)`` uniforms from ``rng``.
    """
    s = np.asarray(strata)
    if s.ndim != 1 or s.size == 0:
        raise DomainError("strata must be a non-empty 1-D array")
    u = rng.random(s.size)
    return assign_from_uniforms(scheme, s[None, :], u[None, :])[0]


def assign_from_uniforms(scheme: SchemeSpec, strata, u) -> np.ndarray:
    """Row-wise assignment of ``(B, n)`` stratum labels given uniforms ``u``.

    Each row is an independent experiment; unit ``k`` of a row consumes
    ``u[:, k]``. Returns an ``int8`` array of the same shape.
    """
    s = np.asarray(strata)
    u = np.asarray(u, dtype=np.float64)
    if s.shape != u.shape or s.ndim != 2:
        raise DomainError("strata and uniforms must be 2-D arrays of equal shape")
    _, idx = stratum_index(s)
    kind = scheme.kind
    if kind == "srs":
        return (u < scheme.pi).astype(np.int8)
    if kind == "sbr":
        return _sbr(idx, u, scheme.pi)
    return _sequential(scheme, idx, u)


def _sbr(idx, u, pi):
    B, n = idx.shape
    order = np.lexsort((u, idx), axis=1)
    s_sorted = np.take_along_axis(idx, order, axis=1)
    # position of each sorted unit within its stratum block
    pos = np.arange(n)[None, :]
    new_block = np.ones_like(s_sorted, dtype=bool)
    new_block[:, 1:] = s_sorted[:, 1:] != s_sorted[:, :-1]
    block_start = np.maximum.accumulate(np.where(new_block, pos, 0), axis=1)
    rank = pos - block_start
    K = int(idx.max()) + 1
    counts = np.zeros((B, K), dtype=np.int64)
    np.add.at(counts, (np.repeat(np.arange(B), n), idx.ravel()), 1)
    quota = np.floor(pi * counts + _FLOOR_SLACK).astype(np.int64)
    treated_sorted = rank < np.take_along_axis(quota, s_sorted, axis=1)
    out = np.empty((B, n), dtype=np.int8)
    np.put_along_axis(out, order, treated_sorted.astype(np.int8), axis=1)
    return out


def _sequential(scheme, idx, u):
    B, n = idx.shape
    K = int(idx.max()) + 1
    rows = np.arange(B)
    # twice the running imbalance, kept integral
    d2 = np.zeros((B, K), dtype=np.int64)
    cnt = np.zeros((B, K), dtype=np.int64)
    out = np.empty((B, n), dtype=np.int8)
    lam = scheme.lam
    phi = scheme.phi
    for k in range(n):
        sk = idx[:, k]
        d = d2[rows, sk]
        if scheme.kind == "bcd":
            p = np.where(d == 0, 0.5, np.where(d < 0, lam, 1.0 - lam))
        else:
            c = cnt[rows, sk]
            ratio = np.where(c > 0, d / (2.0 * np.maximum(c, 1)), 0.0)
            p = phi(ratio)
        a = u[:, k] < p
        out[:, k] = a
        d2[rows, sk] += 2 * a - 1
        cnt[rows, sk] += 1
    return out


def gamma_of(scheme: SchemeSpec, strata=None):
    """Limit variance factor ``gamma(s)`` of the scaled stratum imbalance.

    Returns a float, or a ``{label: gamma}`` dict when stratum labels are
    given (the value is the same for every stratum under these rules).

    For ``wei`` the value is ``(1/4) * (1 - 2 * phi'(0))**-1``, which is
    1/8 for the default ``phi``. This is the stationary variance of the
    imbalance recursion ``D_k = D_{k-1} + A_k - 1/2`` with drift
    ``phi'(0) D / k``. The frequently quoted closed form with ``4 * phi'(0)``
    gives 1/12 and corresponds to feeding ``phi`` the difference
    ``n1 - n0 = 2 D`` instead of ``D``.
    """
    kind = scheme.kind
    if kind == "srs":
        g = scheme.pi * (1.0 - scheme.pi)
    elif kind in ("bcd", "sbr"):
        g = 0.0
    else:
        g = 0.25 / (1.0 - 2.0 * _phi_slope_at_zero(scheme.phi))
    if strata is None:
        return g
    return {int(lab): g for lab in np.unique(np.asarray(strata))}


def _phi_slope_at_zero(phi) -> float:
    if phi is default_phi:
        return -0.5
    h = 1e-6
    f0 = float(phi(0.0))
    right = (float(phi(h)) - f0) / h
    left = (f0 - float(phi(-h))) / h
    if not (math.isfinite(left) and math.isfinite(right)) or \
            abs(right - left) > 1e-4 * max(1.0, abs(right), abs(left)):
        raise ConfigurationError("phi must be differentiable at 0 to compute gamma")
    return 0.5 * (left + right)
