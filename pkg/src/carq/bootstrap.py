"""Weighted and covariate-adaptive bootstrap, bootstrap SEs and Wald tests.

Weighted bootstrap
    Each unit's contribution to the estimating objective is multiplied by an
    i.i.d. standard exponential weight; propensities are recomputed with the
    same weights. It ignores the dependence created by the assignment rule.

Covariate-adaptive bootstrap
    (1) resample the n stratum labels with replacement, (2) re-run the
    original assignment rule on them, (3) for every bootstrap unit in cell
    (s, a) draw an outcome from the original cell (s, a) with replacement.

Draw ``b`` always uses random substream ``b`` of the bootstrap seed, so a
given ``(sample, seed, B)`` produces the same draws however the work is
batched. Several estimators and quantile indices can be evaluated on one set
of bootstrap samples with :func:`bootstrap`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from ._streams import SeedLike, seed_words, substream
from .assign import SchemeSpec, assign_from_uniforms
from .core import (
    ConfigurationError,
    DomainError,
    EstimationError,
    Sample,
    _check_tau,
    empirical_quantile,
    stratum_index,
)
from .estimate import ATE_METHODS, QTE_METHODS, batch_ate, batch_qte

__all__ = [
    "BootstrapDraws",
    "WaldResult",
    "bootstrap",
    "weighted_draws",
    "ca_draws",
    "se_from_draws",
    "wald",
    "exponential_weights",
]

_WEIGHTED_TAG = 1
_CA_TAG = 2
# rows of a (B, n) batch are processed in chunks of about this many cells
_CHUNK_CELLS = 1 << 21

TauSpec = Union[float, Tuple[float, float], None]


@dataclass(frozen=True)
class BootstrapDraws:
    """Bootstrap replicates of one estimator.

    ``tau`` is a float for a QTE, a pair ``(tau1, tau2)`` for the contrast
    ``q(tau1) - q(tau2)`` and ``None`` for the ATE. ``n_redrawn`` counts
    draws that were degenerate and had to be regenerated once.
    """

    values: np.ndarray
    method: str
    estimator: str
    tau: TauSpec
    n_redrawn: int = 0

    def __post_init__(self):
        if len(self.values) < 2:
            raise DomainError("at least two bootstrap draws are required")

    @property
    def b(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class WaldResult:
    estimate: float
    se: float
    null_value: float
    t: float
    reject: bool
    level: float
    critical_value: float = field(default=float("nan"))


def exponential_weights(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.standard_exponential(n)


def _targets(estimators, taus, contrasts, ate):
    """Normalise the requested statistics to a list of keys."""
    keys = []
    for est in estimators:
        est = str(est).lower()
        if ate:
            if est not in ATE_METHODS:
                raise DomainError(f"unknown ATE estimator {est!r}")
            keys.append(("ate", est, None))
            continue
        if est not in QTE_METHODS:
            raise DomainError(f"unknown QTE estimator {est!r}")
        for t in taus:
            _check_tau(t)
            keys.append(("qte", est, float(t)))
        for t1, t2 in contrasts:
            _check_tau(t1)
            _check_tau(t2)
            keys.append(("contrast", est, (float(t1), float(t2))))
    if not keys:
        raise DomainError("nothing to bootstrap: give taus, contrasts or ate=True")
    return keys


def _evaluate(keys, y, a, sidx, K, w):
    """Evaluate every key on a (B, n) batch; returns (dict of arrays, degenerate mask)."""
    B = y.shape[0]
    deg = np.zeros(B, dtype=bool)
    out = {}
    by_est: Dict[str, list] = {}
    for kind, est, tau in keys:
        by_est.setdefault(est, []).append((kind, tau))
    for est, items in by_est.items():
        if items[0][0] == "ate":
            vals, d = batch_ate(est, y, a, sidx, K, w)
            out[("ate", est, None)] = vals
            deg |= d
            continue
        needed = []
        for kind, tau in items:
            for t in (tau if kind == "contrast" else (tau,)):
                if t not in needed:
                    needed.append(t)
        vals, d = batch_qte(est, y, a, sidx, K, w, needed)
        deg |= d
        for kind, tau in items:
            if kind == "qte":
                out[("qte", est, tau)] = vals[:, needed.index(tau)]
            else:
                out[("contrast", est, tau)] = (vals[:, needed.index(tau[0])]
                                               - vals[:, needed.index(tau[1])])
    return out, deg


def _chunks(B, n):
    step = max(1, _CHUNK_CELLS // max(n, 1))
    for start in range(0, B, step):
        yield np.arange(start, min(B, start + step))


def _run(keys, B, make_rows, n, label):
    """Generate rows with ``make_rows(draw_ids, retry)`` and evaluate ``keys``."""
    if B < 2:
        raise DomainError("B must be at least 2")
    values = {k: np.empty(B) for k in keys}
    redrawn = 0
    for ids in _chunks(B, n):
        batch = make_rows(ids, False)
        res, deg = _evaluate(keys, *batch)
        if deg.any():
            bad = ids[deg]
            redrawn += bad.size
            retry = make_rows(bad, True)
            res2, deg2 = _evaluate(keys, *retry)
            if deg2.any():
                raise EstimationError(
                    f"{label} draw {int(bad[deg2][0])} degenerate after one redraw "
                    f"({bad.size} of this batch needed redrawing)")
            for k in keys:
                res[k][deg] = res2[k]
        for k in keys:
            values[k][ids] = res[k]
    return values, redrawn


def bootstrap(sample: Sample, method: str, estimators: Sequence[str],
              taus: Sequence[float] = (), contrasts: Sequence[Tuple[float, float]] = (),
              ate: bool = False, B: int = 1000, seed: SeedLike = 0,
              scheme: Optional[SchemeSpec] = None,
              weight_sampler: Optional[Callable] = None) -> Dict[tuple, BootstrapDraws]:
    """Bootstrap several estimators on one shared set of bootstrap samples.

    Parameters
    ----------
    sample : Sample
    method : {'weighted', 'ca'}
    estimators : sequence of str
        QTE estimators (``sqr``, ``ipw``, ``sfe``) or, with ``ate=True``, ATE
        estimators (``simple``, ``sfe``, ``ipw``).
    taus, contrasts : sequences
        Quantile indices and ``(tau1, tau2)`` pairs to evaluate.
    B : int
        Number of bootstrap draws.
    seed : int or tuple of int
        Root of the per-draw substreams.
    scheme : SchemeSpec
        Assignment rule re-run by the covariate-adaptive bootstrap (required
        for ``method='ca'``).
    weight_sampler : callable, optional
        ``(rng, n) -> weights`` replacing the standard exponential weights of
        the weighted bootstrap.

    Returns
    -------
    dict
        Maps ``(kind, estimator, tau)`` keys, with kind in
        ``{'qte', 'contrast', 'ate'}``, to :class:`BootstrapDraws`.
    """
    keys = _targets(estimators, taus, contrasts, ate)
    words = seed_words(seed)
    labels, sidx = stratum_index(sample.s)
    K = len(labels)
    n = sample.n
    y0 = sample.y
    a0 = sample.a.astype(np.float64)
    method = str(method).lower()

    if method == "weighted":
        sampler = weight_sampler or exponential_weights

        def make_rows(ids, retry):
            path = words + (_WEIGHTED_TAG,) + ((1,) if retry else ())
            w = np.vstack([np.asarray(sampler(substream(path, b), n), dtype=np.float64)
                           for b in ids])
            if w.shape != (len(ids), n) or np.any(w < 0):
                raise DomainError("bootstrap weights must be n non-negative values per draw")
            m = len(ids)
            return (np.broadcast_to(y0, (m, n)), np.broadcast_to(a0, (m, n)),
                    np.broadcast_to(sidx, (m, n)), K, w)

        label = "weighted bootstrap"
    elif method in ("ca", "covariate-adaptive"):
        method = "ca"
        if scheme is None:
            raise ConfigurationError(
                "the covariate-adaptive bootstrap needs the original assignment rule")
        make_rows = _ca_row_maker(sample, sidx, labels, scheme, words)
        label = "covariate-adaptive bootstrap"
    else:
        raise DomainError(f"unknown bootstrap method {method!r}")

    values, redrawn = _run(keys, B, make_rows, n, label)
    return {k: BootstrapDraws(values[k], method, k[1], k[2], redrawn) for k in keys}


def _ca_row_maker(sample, sidx, labels, scheme, words):
    n = sample.n
    K = len(labels)
    cell = sidx * 2 + sample.a.astype(np.int64)
    order = np.argsort(cell, kind="stable")
    pool = sample.y[order]
    count = np.bincount(cell, minlength=2 * K)
    start = np.concatenate([[0], np.cumsum(count)[:-1]])

    def make_rows(ids, retry):
        path = words + (_CA_TAG,) + ((1,) if retry else ())
        m = len(ids)
        pick = np.empty((m, n), dtype=np.int64)
        u_assign = np.empty((m, n))
        u_y = np.empty((m, n))
        for r, b in enumerate(ids):
            g = substream(path, b)
            pick[r] = g.integers(0, n, n)
            u_assign[r] = g.random(n)
            u_y[r] = g.random(n)
        s_star = sidx[pick]
        a_star = assign_from_uniforms(scheme, s_star, u_assign).astype(np.int64)
        c_star = s_star * 2 + a_star
        cnt = count[c_star]
        if np.any(cnt == 0):
            bad = c_star[cnt == 0][0]
            raise EstimationError(
                f"original cell (stratum={int(labels[bad // 2])}, arm={int(bad % 2)}) is "
                "empty but the covariate-adaptive bootstrap sample requires it")
        offset = np.minimum((u_y * cnt).astype(np.int64), cnt - 1)
        y_star = pool[start[c_star] + offset]
        return y_star, a_star.astype(np.float64), s_star, K, np.ones((m, n))

    return make_rows


def _single(sample, tau, estimator, B, seed, method, scheme=None, weight_sampler=None):
    if tau is None:
        res = bootstrap(sample, method, [estimator], ate=True, B=B, seed=seed,
                        scheme=scheme, weight_sampler=weight_sampler)
    elif isinstance(tau, tuple):
        res = bootstrap(sample, method, [estimator], contrasts=[tau], B=B, seed=seed,
                        scheme=scheme, weight_sampler=weight_sampler)
    else:
        res = bootstrap(sample, method, [estimator], taus=[tau], B=B, seed=seed,
                        scheme=scheme, weight_sampler=weight_sampler)
    return next(iter(res.values()))


def weighted_draws(sample: Sample, tau: TauSpec, estimator: str = "ipw", B: int = 1000,
                   seed: SeedLike = 0, weight_sampler: Optional[Callable] = None
                   ) -> BootstrapDraws:
    """Weighted (Bayesian) bootstrap draws of one estimator.

    ``tau`` may be a quantile index, a ``(tau1, tau2)`` contrast, or ``None``
    for the ATE (then ``estimator`` is an ATE method).
    """
    return _single(sample, tau, estimator, B, seed, "weighted",
                   weight_sampler=weight_sampler)


def ca_draws(sample: Sample, tau: TauSpec, estimator: str, scheme: SchemeSpec,
             B: int = 1000, seed: SeedLike = 0) -> BootstrapDraws:
    """Covariate-adaptive bootstrap draws of one estimator."""
    return _single(sample, tau, estimator, B, seed, "ca", scheme=scheme)


def se_from_draws(draws, alpha_lo: float = 0.025, alpha_hi: float = 0.975) -> float:
    """Normalised interquantile range of bootstrap draws.

    ``(Q(alpha_hi) - Q(alpha_lo)) / (z(alpha_hi) - z(alpha_lo))`` with ``Q``
    the empirical quantile of the draws and ``z`` the standard normal
    quantile function.
    """
    values = draws.values if isinstance(draws, BootstrapDraws) else np.asarray(draws)
    if len(values) < 2:
        raise DomainError("at least two draws are required")
    if not (0.0 < alpha_lo < alpha_hi < 1.0):
        raise DomainError("need 0 < alpha_lo < alpha_hi < 1")
    nd = NormalDist()
    spread = empirical_quantile(values, alpha_hi) - empirical_quantile(values, alpha_lo)
    return spread / (nd.inv_cdf(alpha_hi) - nd.inv_cdf(alpha_lo))


def wald(estimate: float, se: float, null_value: float = 0.0,
         level: float = 0.05) -> WaldResult:
    """Two-sided Wald test; rejects when ``|t| > z(1 - level/2)``."""
    if not se > 0:
        raise DomainError(f"standard error must be positive, got {se!r}")
    if not (0.0 < level < 1.0):
        raise DomainError(f"level must lie in (0, 1), got {level!r}")
    crit = NormalDist().inv_cdf(1.0 - level / 2.0)
    t = (estimate - null_value) / se
    return WaldResult(float(estimate), float(se), float(null_value), float(t),
                      bool(abs(t) > crit), float(level), crit)
