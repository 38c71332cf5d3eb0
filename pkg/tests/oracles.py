"""Independent reference implementations used by the tests.

These deliberately avoid the package's own solvers: exact rational
arithmetic for the check-loss objective and plain grid search for the
two-parameter regressions.
"""

from fractions import Fraction

import numpy as np

from carq.core import Sample, stratum_index


def exact_tau(tau):
    """The decimal a user typed: 0.8 means 4/5, not the nearest double."""
    return Fraction(repr(float(tau)))


def check_loss_exact(u, tau):
    u, tau = Fraction(u), exact_tau(tau)
    return u * (tau - (1 if u <= 0 else 0))


def brute_weighted_quantile(values, weights, tau):
    """Smallest data point minimising the weighted check loss, exactly."""
    best, arg = None, None
    for q in sorted(set(float(v) for v in values)):
        obj = sum(Fraction(w) * check_loss_exact(Fraction(v) - Fraction(q), tau)
                  for v, w in zip(values, weights))
        if best is None or obj < best:
            best, arg = obj, q
    return arg


def objective(y, x, w, tau, b0, b1):
    """Weighted check loss of ``y - b0 - b1 x``; broadcasts over b0, b1."""
    b0 = np.asarray(b0, dtype=float)[..., None]
    b1 = np.asarray(b1, dtype=float)[..., None]
    r = y - b0 - b1 * x
    return np.sum(w * r * (tau - (r <= 0)), axis=-1)


def grid_minimize(y, x, w, tau, b0_grid, b1_grid):
    """Exhaustive search over a 2-D grid; returns (min value, minimiser set)."""
    vals = np.empty((len(b1_grid), len(b0_grid)))
    for i, b1 in enumerate(b1_grid):
        vals[i] = objective(y, x, w, tau, b0_grid, b1)
    best = vals.min()
    close = np.argwhere(vals <= best + 1e-9 * max(1.0, abs(best)))
    pts = np.column_stack([b0_grid[close[:, 1]], b1_grid[close[:, 0]]])
    return best, pts


def direct_ipw_ate(y, a, s):
    """``sum_s p(s) (mean_1(s) - mean_0(s))`` by explicit loops."""
    n = len(y)
    total = 0.0
    for lab in sorted(set(s.tolist())):
        m = s == lab
        y1 = y[m & (a == 1)]
        y0 = y[m & (a == 0)]
        total += m.sum() / n * (y1.mean() - y0.mean())
    return total


def random_instance(rng, n_max=15, lattice=False):
    """Sample with every (stratum, arm) cell non-empty."""
    while True:
        n = int(rng.integers(6, n_max + 1))
        s = rng.integers(0, 3, n)
        a = rng.integers(0, 2, n)
        if all(((s == k) & (a == j)).any() for k in np.unique(s) for j in (0, 1)):
            break
    y = rng.integers(-20, 21, n) / 10.0 if lattice else rng.normal(size=n)
    return Sample(y, a, s)


def regression_data(sample, method):
    a = sample.a.astype(float)
    if method == "sqr":
        return a, np.ones(sample.n)
    _, idx = stratum_index(sample.s)
    ps = (np.bincount(idx, weights=a) / np.bincount(idx))[idx]
    if method == "ipw":
        return a, a / ps + (1 - a) / (1 - ps)
    return a - ps, np.ones(sample.n)
