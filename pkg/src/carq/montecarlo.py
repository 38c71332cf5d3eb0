"""Rejection-rate experiments for the Wald tests.

A cell fixes a design, an assignment rule, a sample size, a target
(a QTE, a contrast of two QTEs or the ATE) and a hypothesis. Each
replication draws a sample, computes every requested estimator/standard
error pair and records whether the Wald test rejects the true value.

Method names follow ``<estimator>/<se>``:

============  ======================================================
``s/naive``   SQR with the analytic SE under simple random sampling
``s/adj``     SQR with the analytic SE using the rule's gamma(s)
``s/W``       SQR, weighted bootstrap SE
``sfe/W``     strata fixed effects, weighted bootstrap SE
``ipw/W``     inverse propensity weighting, weighted bootstrap SE
``s/CA``      SQR, covariate-adaptive bootstrap SE
``sfe/CA``    strata fixed effects, covariate-adaptive bootstrap SE
``ipw/CA``    inverse propensity weighting, covariate-adaptive SE
============  ======================================================

For the ATE the ``s`` estimator is the difference in means; the analytic
methods are not available there.

Replication ``r`` of a cell uses the random substream
``(seed, hash(cell key), r)``, so a cell's results do not depend on which
methods are requested alongside it, on the other cells of the table, or on
how replications are spread over worker processes.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ._streams import stable_hash, substream
from .assign import SchemeSpec, gamma_of
from .bootstrap import bootstrap, se_from_draws, wald
from .core import CarqError, ConfigurationError
from .dgp import DgpSpec, generate_sample, true_value
from .estimate import ate, qte

__all__ = [
    "METHODS",
    "TABLE1_METHODS",
    "McConfig",
    "McTable",
    "mc_stderr",
    "run_cell",
    "run_cells",
    "run_table",
    "default_mu_alt",
    "worker_count",
]

log = logging.getLogger(__name__)

METHODS = ("s/naive", "s/adj", "s/W", "sfe/W", "ipw/W", "s/CA", "sfe/CA", "ipw/CA")
TABLE1_METHODS = ("s/naive", "s/adj", "s/W", "ipw/W", "s/CA", "ipw/CA")
CSV_COLUMNS = ("dgp", "scheme", "n", "tau", "hypothesis", "method", "reject_rate",
               "mc_se", "reps", "boot_b", "seed")

_EST = {"s": "sqr", "sfe": "sfe", "ipw": "ipw"}
_EST_ATE = {"s": "simple", "sfe": "sfe", "ipw": "ipw"}

Target = Union[float, Tuple[float, float], str]


def default_mu_alt(n: int) -> float:
    """Alternative shift used in the reference tables (1 at n=200, 0.75 at n=400)."""
    table = {200: 1.0, 400: 0.75}
    if n not in table:
        raise ConfigurationError(f"no default alternative shift for n={n}; set mu_alt")
    return table[n]


@dataclass(frozen=True)
class McConfig:
    """One cell of a rejection-rate table.

    ``target`` is a quantile index, a pair ``(tau1, tau2)`` for the contrast
    ``q(tau1) - q(tau2)``, or the string ``'ate'``. Under ``'H1'`` the data
    are generated with shift ``mu_alt`` while the null stays at the true
    value without shift (for a contrast, where a location shift cancels, the
    null is moved by ``mu_alt`` instead).
    """

    dgp: DgpSpec
    scheme: SchemeSpec
    n: int
    target: Target = 0.5
    methods: Tuple[str, ...] = TABLE1_METHODS
    reps: int = 1000
    boot_b: int = 1000
    level: float = 0.05
    hypothesis: str = "H0"
    mu_alt: Optional[float] = None
    seed: int = 0
    true_value: Optional[float] = None
    se_quantiles: Tuple[float, float] = (0.025, 0.975)
    bandwidth_scale: float = 1.0
    oracle_n: int = 10 ** 6
    oracle_reps: int = 100

    def __post_init__(self):
        methods = tuple(self.methods)
        for m in methods:
            if m not in METHODS:
                raise ConfigurationError(f"unknown method {m!r}; expected one of {METHODS}")
        if not methods:
            raise ConfigurationError("at least one method is required")
        object.__setattr__(self, "methods", methods)
        if self.reps < 1:
            raise ConfigurationError("reps must be at least 1")
        if any(m.endswith(("/W", "/CA")) for m in methods) and self.boot_b < 2:
            raise ConfigurationError("boot_b must be at least 2 for bootstrap methods")
        hyp = str(self.hypothesis).upper()
        if hyp not in ("H0", "H1"):
            raise ConfigurationError("hypothesis must be 'H0' or 'H1'")
        object.__setattr__(self, "hypothesis", hyp)
        target = self.target
        if isinstance(target, str):
            if target.lower() != "ate":
                raise ConfigurationError(f"unknown target {target!r}")
            target = "ate"
        elif isinstance(target, (tuple, list)):
            target = (float(target[0]), float(target[1]))
        else:
            target = float(target)
        object.__setattr__(self, "target", target)
        if not isinstance(target, float) and any(m in ("s/naive", "s/adj") for m in methods):
            raise ConfigurationError(
                "analytic standard errors are only available for a single QTE")
        if self.dgp.mu != 0:
            raise ConfigurationError("give the design with mu = 0; use hypothesis/mu_alt")
        if self.mu_alt is None and hyp == "H1":
            object.__setattr__(self, "mu_alt", default_mu_alt(self.n))

    @property
    def target_label(self) -> str:
        if self.target == "ate":
            return "ate"
        if isinstance(self.target, tuple):
            return f"{_fmt(self.target[0])}-{_fmt(self.target[1])}"
        return _fmt(self.target)

    def cell_key(self) -> str:
        d, s = self.dgp, self.scheme
        scheme = f"{s.kind}:{s.pi!r}" + (f":{s.lam!r}" if s.kind == "bcd" else "")
        mu = self.mu_alt if self.hypothesis == "H1" else 0.0
        return (f"dgp={d.id}:{d.gamma_coef!r}:{d.sigma!r}|scheme={scheme}|n={self.n}"
                f"|target={self.target_label}|hyp={self.hypothesis}:{mu!r}")

    def cell_seed(self) -> Tuple[int, int]:
        return (int(self.seed), stable_hash(self.cell_key()))


def _fmt(x: float) -> str:
    return repr(float(x))


def mc_stderr(p_hat: float, r: int) -> float:
    """Binomial standard error ``sqrt(p(1 - p) / r)``."""
    if not (0.0 <= p_hat <= 1.0) or r < 1:
        raise ValueError("need 0 <= p_hat <= 1 and r >= 1")
    return math.sqrt(p_hat * (1.0 - p_hat) / r)


@lru_cache(maxsize=64)
def _oracle(dgp: DgpSpec, target, oracle_n: int, oracle_reps: int, seed: int) -> float:
    if target == "ate":
        return true_value(dgp, None, "ate", oracle_n, oracle_reps, seed).value
    if isinstance(target, tuple):
        return true_value(dgp, target, "contrast", oracle_n, oracle_reps, seed).value
    return true_value(dgp, target, "qte", oracle_n, oracle_reps, seed).value


def null_value(config: McConfig) -> float:
    """True value under the null, shifted for contrasts under H1."""
    if config.true_value is not None:
        base = float(config.true_value)
    else:
        base = _oracle(config.dgp, config.target, config.oracle_n, config.oracle_reps,
                       config.seed)
    if config.hypothesis == "H1" and isinstance(config.target, tuple):
        return base + config.mu_alt
    return base


def _point(sample, config, est_short):
    t = config.target
    if t == "ate":
        return ate(sample, _EST_ATE[est_short])
    if isinstance(t, tuple):
        m = _EST[est_short]
        return qte(sample, t[0], m).value - qte(sample, t[1], m).value
    return qte(sample, t, _EST[est_short]).value


def _boot_ses(sample, config, kind, shorts, seed_words):
    t = config.target
    if t == "ate":
        ests = [_EST_ATE[s] for s in shorts]
        res = bootstrap(sample, kind, ests, ate=True, B=config.boot_b, seed=seed_words,
                        scheme=config.scheme)
        keys = [("ate", e, None) for e in ests]
    elif isinstance(t, tuple):
        ests = [_EST[s] for s in shorts]
        res = bootstrap(sample, kind, ests, contrasts=[t], B=config.boot_b,
                        seed=seed_words, scheme=config.scheme)
        keys = [("contrast", e, t) for e in ests]
    else:
        ests = [_EST[s] for s in shorts]
        res = bootstrap(sample, kind, ests, taus=[t], B=config.boot_b, seed=seed_words,
                        scheme=config.scheme)
        keys = [("qte", e, t) for e in ests]
    lo, hi = config.se_quantiles
    return {s: se_from_draws(res[k], lo, hi) for s, k in zip(shorts, keys)}


def _replicate(config: McConfig, r: int, null: float) -> np.ndarray:
    """Rejection indicators (one per method) for replication ``r``."""
    words = config.cell_seed()
    mu = config.mu_alt if (config.hypothesis == "H1" and not isinstance(config.target, tuple)) else 0.0
    dgp = replace(config.dgp, mu=mu)
    gen = generate_sample(dgp, config.n, config.scheme, substream(words, r))
    sample = gen.sample
    methods = config.methods
    shorts = {m.split("/")[0] for m in methods}
    points = {s: _point(sample, config, s) for s in sorted(shorts)}
    ses: Dict[str, float] = {}
    if "s/naive" in methods or "s/adj" in methods:
        from .variance import se_adjusted, se_naive
        pi = config.scheme.pi
        if "s/naive" in methods:
            ses["s/naive"] = se_naive(sample, config.target, pi, config.bandwidth_scale).se
        if "s/adj" in methods:
            g = gamma_of(config.scheme)
            ses["s/adj"] = se_adjusted(sample, config.target, pi, g,
                                       config.bandwidth_scale).se
    boot_words = words + (r,)
    for kind, suffix in (("weighted", "/W"), ("ca", "/CA")):
        want = sorted(m.split("/")[0] for m in methods if m.endswith(suffix))
        if want:
            for s, se in _boot_ses(sample, config, kind, want, boot_words).items():
                ses[s + suffix] = se
    out = np.empty(len(methods), dtype=bool)
    for j, m in enumerate(methods):
        out[j] = wald(points[m.split("/")[0]], ses[m], null, config.level).reject
    return out


def _replicate_range(args):
    config, start, stop, null = args
    return np.vstack([_replicate(config, r, null) for r in range(start, stop)])


def worker_count() -> int:
    """Parallelism cap from ``CARQ_THREADS`` (default: CPU count)."""
    env = os.environ.get("CARQ_THREADS")
    if env:
        try:
            k = int(env)
        except ValueError:
            raise ConfigurationError(f"CARQ_THREADS must be an integer, got {env!r}")
        return max(1, k)
    return max(1, os.cpu_count() or 1)


def _rejections(config: McConfig, workers: Optional[int] = None) -> np.ndarray:
    null = null_value(config)
    workers = worker_count() if workers is None else max(1, workers)
    R = config.reps
    if workers == 1 or R < 2:
        return _replicate_range((config, 0, R, null))
    bounds = np.linspace(0, R, min(R, 4 * workers) + 1).astype(int)
    jobs = [(config, int(a), int(b), null) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_replicate_range, jobs))
    return np.vstack(parts)


def run_cell(config: McConfig, method: str, workers: Optional[int] = None
             ) -> Tuple[float, float]:
    """Rejection rate of one method in one cell and its Monte Carlo SE."""
    cfg = replace(config, methods=(method,))
    rej = _rejections(cfg, workers)[:, 0]
    p = float(rej.mean())
    return p, mc_stderr(p, cfg.reps)


def run_cells(config: McConfig, workers: Optional[int] = None) -> Dict[str, Tuple[float, float]]:
    """Rejection rates of all methods of a cell, from shared replications."""
    t0 = time.perf_counter()
    rej = _rejections(config, workers)
    out = {}
    for j, m in enumerate(config.methods):
        p = float(rej[:, j].mean())
        out[m] = (p, mc_stderr(p, config.reps))
    log.info("cell %s: %d reps in %.1fs", config.cell_key(), config.reps,
             time.perf_counter() - t0)
    return out


@dataclass
class McTable:
    """Rejection rates indexed by cell and method (stored as proportions)."""

    rows: List[dict] = field(default_factory=list)
    errors: Dict[str, str] = field(default_factory=dict)

    def rate(self, dgp: int, scheme: str, method: str, **match) -> float:
        for row in self.rows:
            if row["dgp"] == dgp and row["scheme"] == scheme and row["method"] == method \
                    and all(row[k] == v for k, v in match.items()):
                return row["reject_rate"]
        raise KeyError((dgp, scheme, method, match))

    def to_csv(self, fh=None, percent: bool = False) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        scale = 100.0 if percent else 1.0
        for row in self.rows:
            vals = dict(row)
            for k in ("reject_rate", "mc_se"):
                vals[k] = repr(round(row[k] * scale, 12)) if not math.isnan(row[k]) else "nan"
            writer.writerow([vals[c] for c in CSV_COLUMNS])
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text

    def to_wide(self, percent: bool = True) -> str:
        """Text table with one line per (dgp, scheme, hypothesis) and one column per method."""
        methods = [m for m in METHODS if any(r["method"] == m for r in self.rows)]
        keys = []
        for r in self.rows:
            k = (r["dgp"], r["scheme"], r["n"], r["tau"], r["hypothesis"])
            if k not in keys:
                keys.append(k)
        head = f"{'M':>2} {'A':<4} {'n':>5} {'tau':>10} {'hyp':>3} " + \
            " ".join(f"{m:>8}" for m in methods)
        lines = [head]
        scale = 100.0 if percent else 1.0
        for k in keys:
            cells = []
            for m in methods:
                vals = [r["reject_rate"] for r in self.rows
                        if (r["dgp"], r["scheme"], r["n"], r["tau"], r["hypothesis"]) == k
                        and r["method"] == m]
                cells.append(f"{vals[0] * scale:8.1f}" if vals else f"{'':>8}")
            lines.append(f"{k[0]:>2} {k[1].upper():<4} {k[2]:>5} {k[3]:>10} {k[4]:>3} "
                         + " ".join(cells))
        return "\n".join(lines)


def run_table(configs: Sequence[McConfig], workers: Optional[int] = None) -> McTable:
    """Run every cell; a failing cell is recorded and the rest still run."""
    if not configs:
        raise ConfigurationError("empty experiment grid")
    table = McTable()
    for cfg in configs:
        try:
            res = run_cells(cfg, workers)
        except CarqError as exc:
            log.error("cell %s failed: %s", cfg.cell_key(), exc)
            table.errors[cfg.cell_key()] = str(exc)
            res = {m: (float("nan"), float("nan")) for m in cfg.methods}
        for m in cfg.methods:
            p, se = res[m]
            table.rows.append({
                "dgp": cfg.dgp.id, "scheme": cfg.scheme.kind, "n": cfg.n,
                "tau": cfg.target_label, "hypothesis": cfg.hypothesis, "method": m,
                "reject_rate": p, "mc_se": se, "reps": cfg.reps,
                "boot_b": cfg.boot_b, "seed": cfg.seed,
            })
    return table
