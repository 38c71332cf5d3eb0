"""Quantile and average treatment effect estimators.

QTE estimators
--------------
``sqr``
    Quantile regression of Y on (1, A); with a binary regressor this is the
    difference of the two arms' empirical quantiles.
``ipw``
    Difference of arm quantiles where unit i is weighted by ``1/pi_hat(S_i)``
    (treated) or ``1/(1 - pi_hat(S_i))`` (control).
``sfe``
    Quantile regression of Y on (1, A - pi_hat(S)), the quantile analogue of
    the strata fixed effects regression.

ATE estimators
--------------
``simple`` (difference in means), ``sfe`` (OLS coefficient on A with strata
dummies) and ``ipw`` (stratum-share weighted within-stratum differences,
numerically the fully saturated regression).

Besides the single-sample functions, this module holds row-wise kernels
(``batch_*``) that evaluate the same estimators on ``(B, n)`` stacks of
weighted or resampled data. Both bootstraps are built on them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .core import (
    DegeneratePropensityError,
    DomainError,
    EstimationError,
    QUANTILE_RTOL,
    Sample,
    _check_tau,
    strata_stats,
    stratum_index,
    weighted_quantile,
)

__all__ = [
    "QTE_METHODS",
    "ATE_METHODS",
    "QteEstimate",
    "qte",
    "qte_sqr",
    "qte_ipw",
    "qte_sfe",
    "sfe_fit",
    "ate",
    "qte_contrast",
    "imbalance_diagnostic",
]

QTE_METHODS = ("sqr", "ipw", "sfe")
ATE_METHODS = ("simple", "sfe", "ipw")


@dataclass(frozen=True)
class QteEstimate:
    """Point estimate of the ``tau``-th QTE.

    ``per_arm`` holds the fitted arm quantiles ``(q1, q0)`` for ``sqr`` and
    ``ipw``; the ``sfe`` fit has no per-arm decomposition, so it is ``None``.
    """

    tau: float
    value: float
    method: str
    per_arm: Optional[Tuple[float, float]]


def _check_method(method, allowed):
    m = str(method).lower()
    if m not in allowed:
        raise DomainError(f"unknown method {method!r}; expected one of {allowed}")
    return m


def _require_arms(sample: Sample):
    n1 = int(sample.a.sum())
    if n1 == 0 or n1 == sample.n:
        raise EstimationError("both treatment arms must be non-empty")


def _propensities(sample: Sample):
    """Per-unit ``pi_hat(S_i)``; raises if any stratum is degenerate."""
    _require_arms(sample)
    labels, idx = stratum_index(sample.s)
    n_s = np.bincount(idx)
    n1_s = np.bincount(idx, weights=sample.a)
    pi_s = n1_s / n_s
    bad = np.flatnonzero((pi_s == 0) | (pi_s == 1))
    if bad.size:
        raise DegeneratePropensityError(int(labels[bad[0]]))
    return pi_s[idx]


def qte_sqr(sample: Sample, tau: float) -> QteEstimate:
    """Difference of the arms' empirical ``tau``-quantiles."""
    _check_tau(tau)
    _require_arms(sample)
    y1, y0 = sample.arm(1), sample.arm(0)
    q1 = weighted_quantile(y1, np.ones_like(y1), tau)
    q0 = weighted_quantile(y0, np.ones_like(y0), tau)
    return QteEstimate(float(tau), q1 - q0, "sqr", (q1, q0))


def qte_ipw(sample: Sample, tau: float) -> QteEstimate:
    """Inverse-propensity weighted difference of arm quantiles."""
    _check_tau(tau)
    ps = _propensities(sample)
    t = sample.a == 1
    q1 = weighted_quantile(sample.y[t], 1.0 / ps[t], tau)
    q0 = weighted_quantile(sample.y[~t], 1.0 / (1.0 - ps[~t]), tau)
    return QteEstimate(float(tau), q1 - q0, "ipw", (q1, q0))


def qte_sfe(sample: Sample, tau: float) -> QteEstimate:
    """Slope of the quantile regression of Y on the demeaned treatment."""
    _check_tau(tau)
    ps = _propensities(sample)
    x = sample.a - ps
    _, b1 = sfe_fit(sample.y, x, None, tau)
    return QteEstimate(float(tau), b1, "sfe", None)


def qte(sample: Sample, tau: float, method: str = "sqr") -> QteEstimate:
    m = _check_method(method, QTE_METHODS)
    return {"sqr": qte_sqr, "ipw": qte_ipw, "sfe": qte_sfe}[m](sample, tau)


def qte_contrast(sample: Sample, tau1: float, tau2: float, method: str = "sqr") -> float:
    """``q(tau1) - q(tau2)`` estimated with the same method at both indices."""
    return qte(sample, tau1, method).value - qte(sample, tau2, method).value


def _check_loss_sum(r, w, tau):
    return float(np.sum(w * r * (tau - (r <= 0))))


def _sfe_profile(y, x, w, tau, b1):
    r = y - b1 * x
    b0 = weighted_quantile(r, w, tau)
    return _check_loss_sum(r - b0, w, tau), b0


def _candidate_slopes(y, x):
    xs, grp = np.unique(x, return_inverse=True)
    pieces = [np.zeros(1)]
    for g in range(len(xs)):
        yg = y[grp == g]
        for h in range(g + 1, len(xs)):
            yh = y[grp == h]
            pieces.append(((yg[:, None] - yh[None, :]) / (xs[g] - xs[h])).ravel())
    c = np.unique(np.concatenate(pieces))
    # the same slope computed from different pairs can differ in the last
    # bits; equal neighbours would fake a flat minimum in the search below
    keep = np.ones(c.size, dtype=bool)
    keep[1:] = np.diff(c) > 1e-9 * np.maximum(1.0, np.abs(c[1:]))
    return c[keep]


def sfe_fit(y, x, w, tau, exhaustive: bool = False):
    """Exact minimiser of ``sum_i w_i * rho_tau(y_i - b0 - b1 * x_i)``.

    An optimal vertex of this two-parameter linear program interpolates two
    observations with distinct regressor values, so the optimal slope is one
    of the pairwise slopes ``(y_i - y_j) / (x_i - x_j)``. For a given slope
    the best intercept is the weighted quantile of ``y - b1 * x``. The
    profiled objective is convex in the slope, hence unimodal over the sorted
    candidates, and a binary search finds its leftmost minimiser. With
    ``exhaustive=True`` every candidate is evaluated instead.

    Ties between minimising slopes are broken towards the smallest slope.

    Returns
    -------
    (b0, b1) : tuple of float
    """
    _check_tau(tau)
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=np.float64)
    keep = w > 0
    y, x, w = y[keep], x[keep], w[keep]
    if y.size == 0:
        raise DomainError("total weight must be positive")
    if np.all(x == x[0]):
        raise EstimationError("regressor is constant; slope is not identified")
    cands = _candidate_slopes(y, x)

    def obj(i):
        return _sfe_profile(y, x, w, tau, cands[i])[0]

    if exhaustive:
        vals = np.array([obj(i) for i in range(len(cands))])
        best = vals.min()
        i = int(np.flatnonzero(vals <= best + _obj_tol(best, best))[0])
    else:
        lo, hi = 0, len(cands) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            f0, f1 = obj(mid), obj(mid + 1)
            if f0 <= f1 + _obj_tol(f0, f1):
                hi = mid
            else:
                lo = mid + 1
        i = lo
    b1 = float(cands[i])
    _, b0 = _sfe_profile(y, x, w, tau, b1)
    return b0, b1


def _obj_tol(f0, f1):
    return 1e-12 * (abs(f0) + abs(f1)) + 1e-300


def ate(sample: Sample, method: str = "simple") -> float:
    """Average treatment effect estimate.

    ``simple``: difference in arm means. ``ipw``:
    ``sum_s p_hat(s) * (mean_1(s) - mean_0(s))``. ``sfe``: OLS coefficient on
    A in a regression with stratum dummies, computed by partialling the
    dummies out of A.
    """
    m = _check_method(method, ATE_METHODS)
    _require_arms(sample)
    y, a = sample.y, sample.a.astype(np.float64)
    if m == "simple":
        return float(y[a == 1].mean() - y[a == 0].mean())
    ps = _propensities(sample)
    if m == "sfe":
        x = a - ps
        return float(np.sum(x * y) / np.sum(x * x))
    labels, idx = stratum_index(sample.s)
    n_s = np.bincount(idx)
    n1_s = np.bincount(idx, weights=a)
    sum1 = np.bincount(idx, weights=a * y)
    sum0 = np.bincount(idx, weights=(1 - a) * y)
    diff = sum1 / n1_s - sum0 / (n_s - n1_s)
    return float(np.sum(n_s / sample.n * diff))


def imbalance_diagnostic(sample: Sample, pi: float) -> float:
    """``max_s |D_n(s) / n(s)|``, the subsample feasibility statistic.

    Small values support using the weighted bootstrap with the IPW estimator
    on a subsample whose assignment rule is unknown.
    """
    if sample is None or sample.n == 0:
        raise DomainError("imbalance diagnostic needs a non-empty sample")
    st = strata_stats(sample, pi)
    return max(abs(st.d_n[s]) / st.n_s[s] for s in st.labels)


# --------------------------------------------------------------------------
# Row-wise kernels. Arrays are (B, n); `sidx` holds stratum indices 0..K-1.


def _row_bincount(sidx, K, weights):
    B, n = sidx.shape
    flat = (np.arange(B)[:, None] * K + sidx).ravel()
    return np.bincount(flat, weights=np.ravel(weights), minlength=B * K).reshape(B, K)


def batch_propensity(a, sidx, K, w):
    """Weighted per-row stratum propensities and a degenerate-row mask.

    A row is degenerate when some stratum that carries weight in it has a
    propensity of exactly 0 or 1.
    """
    tot = _row_bincount(sidx, K, w)
    tr = _row_bincount(sidx, K, w * a)
    present = tot > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        ps = np.where(present, tr / np.where(present, tot, 1.0), 0.5)
    degenerate = np.any(present & ((ps <= 0) | (ps >= 1)), axis=1)
    return ps, degenerate


def _sorted_arm_cums(y, a, wts1, wts0):
    order = np.argsort(y, axis=1, kind="stable")
    ys = np.take_along_axis(y, order, axis=1)
    c1 = np.cumsum(np.take_along_axis(wts1, order, axis=1), axis=1)
    c0 = np.cumsum(np.take_along_axis(wts0, order, axis=1), axis=1)
    return ys, c1, c0


def _lookup(ys, cw, tau):
    total = cw[:, -1]
    k = np.argmax(cw >= (tau * total * (1.0 - QUANTILE_RTOL))[:, None], axis=1)
    return np.where(total > 0, ys[np.arange(ys.shape[0]), k], np.nan)


def batch_qte(method, y, a, sidx, K, w, taus: Sequence[float]):
    """QTE estimates for each row and each tau.

    Returns ``(values, degenerate)`` with ``values`` of shape
    ``(B, len(taus))``; rows flagged ``degenerate`` hold ``nan``.
    """
    a = a.astype(np.float64)
    B = y.shape[0]
    out = np.full((B, len(taus)), np.nan)
    if method == "sqr":
        wa = w * a
        w1, w0 = wa, w - wa
        deg = (w1.sum(axis=1) <= 0) | (w0.sum(axis=1) <= 0)
    else:
        ps, deg = batch_propensity(a, sidx, K, w)
        pu = np.take_along_axis(ps, sidx, axis=1)
        if method == "sfe":
            good = np.flatnonzero(~deg)
            xt = a - pu
            for b in good:
                for j, t in enumerate(taus):
                    out[b, j] = sfe_fit(y[b], xt[b], w[b], t)[1]
            return out, deg
        with np.errstate(invalid="ignore", divide="ignore"):
            w1 = np.where(a == 1, w / pu, 0.0)
            w0 = np.where(a == 0, w / (1.0 - pu), 0.0)
    ys, c1, c0 = _sorted_arm_cums(y, a, w1, w0)
    for j, t in enumerate(taus):
        out[:, j] = _lookup(ys, c1, t) - _lookup(ys, c0, t)
    out[deg] = np.nan
    return out, deg


def batch_ate(method, y, a, sidx, K, w):
    """Row-wise ATE estimates; returns ``(values, degenerate)``."""
    a = a.astype(np.float64)
    if method == "simple":
        s1, s0 = np.sum(w * a, axis=1), np.sum(w * (1 - a), axis=1)
        deg = (s1 <= 0) | (s0 <= 0)
        with np.errstate(invalid="ignore", divide="ignore"):
            val = np.sum(w * a * y, axis=1) / s1 - np.sum(w * (1 - a) * y, axis=1) / s0
        return np.where(deg, np.nan, val), deg
    ps, deg = batch_propensity(a, sidx, K, w)
    if method == "sfe":
        x = a - np.take_along_axis(ps, sidx, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            val = np.sum(w * x * y, axis=1) / np.sum(w * x * x, axis=1)
        return np.where(deg, np.nan, val), deg
    tot = _row_bincount(sidx, K, w)
    n1 = _row_bincount(sidx, K, w * a)
    s1 = _row_bincount(sidx, K, w * a * y)
    s0 = _row_bincount(sidx, K, w * (1 - a) * y)
    with np.errstate(invalid="ignore", divide="ignore"):
        diff = np.where(tot > 0, s1 / n1 - s0 / (tot - n1), 0.0)
    share = tot / tot.sum(axis=1, keepdims=True)
    val = np.sum(share * diff, axis=1)
    return np.where(deg, np.nan, val), deg
