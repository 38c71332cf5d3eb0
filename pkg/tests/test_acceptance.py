"""Acceptance suite.

Each test prints one ``[ACCEPT] <id> PASS|FAIL ...`` line. The Monte Carlo
reproduction at full scale (R = B = 1000) takes roughly a quarter of an hour
on one core and runs by default; set ``CARQ_ACCEPTANCE_PROFILE=ci`` to run
only the reduced profile (R = B = 200) for criterion 1 and skip the full-scale
checks. All runs use seed 1.
"""

import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from carq._streams import substream
from carq.assign import SchemeSpec, assign_from_uniforms, gamma_of
from carq.bootstrap import bootstrap, se_from_draws
from carq.core import Sample, weighted_quantile
from carq.dgp import DgpSpec, generate_sample
from carq.estimate import qte, qte_sqr, sfe_fit
from carq.montecarlo import TABLE1_METHODS, McConfig, run_table
from carq.variance import kde_gaussian, se_adjusted, se_naive
from oracles import brute_weighted_quantile, grid_minimize, objective, random_instance, \
    regression_data

SEED = 1
PROFILE = os.environ.get("CARQ_ACCEPTANCE_PROFILE", "full").lower()
SCHEMES = ("srs", "wei", "bcd", "sbr")

# DGP1 rejection rates at n = 200, tau = 0.5 (percent)
TABLE1 = {
    "srs": {"s/naive": 4.5, "s/adj": 4.5, "s/W": 4.7, "ipw/W": 4.4, "s/CA": 4.4, "ipw/CA": 3.9},
    "wei": {"s/naive": 1.2, "s/adj": 4.0, "s/W": 1.4, "ipw/W": 4.3, "s/CA": 3.7, "ipw/CA": 3.5},
    "bcd": {"s/naive": 0.2, "s/adj": 5.7, "s/W": 0.3, "ipw/W": 4.1, "s/CA": 4.4, "ipw/CA": 3.9},
    "sbr": {"s/naive": 0.1, "s/adj": 5.7, "s/W": 0.1, "ipw/W": 4.6, "s/CA": 4.5, "ipw/CA": 4.4},
}
H1_WEI = {"s/W": 13.8, "ipw/W": 44.7}


def report(capsys, cid, ok, detail):
    with capsys.disabled():
        print(f"\n[ACCEPT] {cid} {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"criterion {cid}: {detail}"


def needs_full():
    if PROFILE == "ci":
        pytest.skip("full-scale profile disabled by CARQ_ACCEPTANCE_PROFILE=ci")


def table1(reps, boot_b):
    configs = [McConfig(dgp=DgpSpec(1), scheme=SchemeSpec(k), n=200, target=0.5,
                        methods=TABLE1_METHODS, reps=reps, boot_b=boot_b, seed=SEED,
                        true_value=0.0)
               for k in SCHEMES]
    t0 = time.perf_counter()
    table = run_table(configs)
    return table, time.perf_counter() - t0


def compare(table, tol):
    misses, worst = [], 0.0
    for k in SCHEMES:
        for m in TABLE1_METHODS:
            got = table.rate(1, k, m)
            gap = abs(got - TABLE1[k][m] / 100)
            worst = max(worst, gap)
            if not gap <= tol:
                misses.append(f"{k}/{m}={got:.3f} vs {TABLE1[k][m] / 100:.3f}")
    return misses, worst


@pytest.fixture(scope="module")
def full_table():
    needs_full()
    return table1(1000, 1000)[0]


def test_c1_table1_full(full_table, capsys):
    misses, worst = compare(full_table, 0.025)
    report(capsys, "1-full", not misses and not full_table.errors,
           f"R=1000 B=1000 tol=0.025 max|gap|={worst:.4f} misses={misses or 'none'}")


def test_c1_table1_ci_profile(capsys):
    table, secs = table1(200, 200)
    misses, worst = compare(table, 0.05)
    ok = not misses and not table.errors and secs < 600
    report(capsys, "1-ci", ok,
           f"R=200 B=200 tol=0.05 {secs:.0f}s max|gap|={worst:.4f} misses={misses or 'none'}")


def test_c2_conservativeness(full_table, capsys):
    bad = []
    for k in ("bcd", "sbr"):
        for m in ("s/naive", "s/W"):
            if not full_table.rate(1, k, m) <= 0.02:
                bad.append(f"{k}/{m}={full_table.rate(1, k, m):.3f}")
        for m in ("ipw/W", "s/CA", "ipw/CA"):
            if not 0.02 <= full_table.rate(1, k, m) <= 0.08:
                bad.append(f"{k}/{m}={full_table.rate(1, k, m):.3f}")
    summary = " ".join(f"{k}/{m}={full_table.rate(1, k, m):.3f}"
                       for k in ("bcd", "sbr") for m in TABLE1_METHODS if m != "s/adj")
    report(capsys, "2", not bad, summary + (f" violations={bad}" if bad else ""))


def test_c3_power_gap(capsys):
    needs_full()
    cfg = McConfig(dgp=DgpSpec(1), scheme=SchemeSpec("wei"), n=200, target=0.5,
                   methods=("s/W", "ipw/W"), reps=1000, boot_b=1000, seed=SEED,
                   hypothesis="H1", true_value=0.0)
    t = run_table([cfg])
    sw, iw = t.rate(1, "wei", "s/W"), t.rate(1, "wei", "ipw/W")
    report(capsys, "3", iw - sw >= 0.15,
           f"s/W={sw:.3f} ipw/W={iw:.3f} gap={iw - sw:.3f} (reference {H1_WEI['s/W'] / 100:.3f}"
           f" vs {H1_WEI['ipw/W'] / 100:.3f})")


def test_c4_exactness(capsys):
    rng = np.random.default_rng(SEED)
    sqr_bad = 0
    for _ in range(1000):
        smp = random_instance(rng, n_max=40)
        tau = float(rng.uniform(0.02, 0.98))
        y1, y0 = np.sort(smp.arm(1)), np.sort(smp.arm(0))
        want = y1[math.ceil(tau * y1.size) - 1] - y0[math.ceil(tau * y0.size) - 1]
        sqr_bad += qte_sqr(smp, tau).value != want

    h = 0.05
    b0_grid = np.round(np.arange(-2.5, 2.5 + h / 2, h), 10)
    grid_bad = 0
    for i in range(200):
        method = ("sqr", "ipw", "sfe")[i % 3]
        smp = random_instance(rng, lattice=True)
        tau = float(rng.choice([0.25, 0.5, 0.75, 0.37]))
        x, w = regression_data(smp, method)
        if method == "sfe":
            b0, b1 = sfe_fit(smp.y, x, None, tau)
            span = 4.0 / np.diff(np.unique(x)).min()
            b1_grid = np.arange(-span, span + h / 2, h)
        else:
            q1, q0 = qte(smp, tau, method).per_arm
            b0, b1 = q0, q1 - q0
            b1_grid = np.round(np.arange(-4.0, 4.0 + h / 2, h), 10)
        mine = float(objective(smp.y, x, w, tau, b0, b1))
        best, _ = grid_minimize(smp.y, x, w, tau, b0_grid, b1_grid)
        # never beaten by the grid, and no better than the grid by more than
        # the objective's Lipschitz constant times the grid step
        grid_bad += not (mine <= best + 1e-9 and best - mine <= np.sum(w * (1 + np.abs(x))) * h)

    wq_bad = 0
    for _ in range(2000):
        n = int(rng.integers(1, 13))
        v = rng.integers(-5, 6, n).astype(float)
        w = rng.integers(0, 5, n).astype(float)
        w[rng.integers(n)] += 1.0
        tau = float(rng.choice([0.1, 0.25, 0.3, 0.5, 0.6, 0.75, 0.8, 0.9, rng.uniform(0.01, 0.99)]))
        wq_bad += weighted_quantile(v, w, tau) != brute_weighted_quantile(v, w, tau)

    report(capsys, "4", sqr_bad == grid_bad == wq_bad == 0,
           f"sqr mismatches={sqr_bad}/1000 grid failures={grid_bad}/200 "
           f"weighted_quantile mismatches={wq_bad}/2000")


def test_c5_scheme_balance(capsys):
    rng = substream(SEED, 5)
    # SBR: 10^5 draws of 40 units over 3 strata
    sbr_max = 0
    for _ in range(10):
        s = rng.integers(0, 3, (10_000, 40))
        a = assign_from_uniforms(SchemeSpec("sbr"), s, rng.random(s.shape))
        for k in range(3):
            d = ((a - 0.5) * (s == k)).sum(axis=1)
            sbr_max = max(sbr_max, float(np.abs(d).max()))

    n, B = 10_000, 500
    s1 = np.zeros((B, n), dtype=int)
    a = assign_from_uniforms(SchemeSpec("bcd"), s1, rng.random((B, n)))
    bcd_var = float(np.var((a.sum(axis=1) - 0.5 * n) / math.sqrt(n)))

    s = rng.integers(0, 2, (B, 2000))
    a = assign_from_uniforms(SchemeSpec("srs"), s, rng.random(s.shape))
    d = ((a - 0.5) * (s == 0)).sum(axis=1) / math.sqrt(2000)
    srs_ratio = float(np.var(d) / (0.5 * 0.25))

    ok = sbr_max <= 1 and bcd_var < 0.01 and abs(srs_ratio - 1) <= 0.2
    report(capsys, "5", ok, f"SBR max|D|={sbr_max:g} BCD Var={bcd_var:.5f} "
                            f"SRS Var/(p pi(1-pi))={srs_ratio:.3f}")


def test_c6_se_machinery(capsys):
    rng = substream(SEED, 6)
    worst = 0.0
    for _ in range(50):
        v = rng.normal(0, rng.uniform(0.1, 10), int(rng.integers(1, 40)))
        h = float(rng.uniform(0.05, 3))
        grid = np.linspace(v.min() - 10 * h, v.max() + 10 * h, 40001)
        worst = max(worst, abs(np.trapezoid(kde_gaussian(v, grid, h), grid) - 1))
    same = zero = True
    for r in range(20):
        smp = generate_sample(DgpSpec(1 + r % 4), 200, SchemeSpec(SCHEMES[r % 4]),
                              substream(SEED, 600 + r)).sample
        tau = (0.25, 0.5, 0.75)[r % 3]
        same &= se_adjusted(smp, tau, 0.5, gamma_of(SchemeSpec("srs"))) == se_naive(smp, tau, 0.5)
        zero &= se_adjusted(smp, tau, 0.5, 0.0).zeta_a_sq == 0.0
    report(capsys, "6", worst <= 1e-3 and same and zero,
           f"max|integral-1|={worst:.2e} adj(pi(1-pi))==naive:{same} adj(0) zero term:{zero}")


def test_c7_bootstrap_se_ordering(capsys):
    needs_full()
    sch = SchemeSpec("bcd")
    w_se, ca_se = [], []
    for r in range(200):
        smp = generate_sample(DgpSpec(1), 400, sch, substream((SEED, 7), r)).sample
        w = bootstrap(smp, "weighted", ["sqr"], taus=[0.5], B=1000, seed=(SEED, 7, r))
        c = bootstrap(smp, "ca", ["sqr"], taus=[0.5], B=1000, seed=(SEED, 7, r), scheme=sch)
        w_se.append(se_from_draws(w[("qte", "sqr", 0.5)]))
        ca_se.append(se_from_draws(c[("qte", "sqr", 0.5)]))
    ratio = float(np.mean(w_se) / np.mean(ca_se))
    report(capsys, "7", ratio >= 1.10,
           f"mean W SE={np.mean(w_se):.4f} mean CA SE={np.mean(ca_se):.4f} ratio={ratio:.3f}")


def test_c8_cli_determinism(tmp_path, capsys):
    smp = generate_sample(DgpSpec(3), 150, SchemeSpec("sbr"), substream(SEED, 8)).sample
    data = tmp_path / "data.csv"
    data.write_text("y,a,s\n" + "".join(f"{float(y)!r},{int(a)},{int(s)}\n"
                                        for y, a, s in zip(smp.y, smp.a, smp.s)))
    strata = tmp_path / "strata.csv"
    strata.write_text("s\n" + "".join(f"{int(s)}\n" for s in smp.s))
    cfg = tmp_path / "sim.yaml"
    cfg.write_text("seed: 1\nreps: 8\nboot_b: 40\ncells:\n"
                   "  - {dgp: [1, 3], scheme: [wei, sbr], n: 80, tau: [0.5, ate],"
                   " methods: [s/W, ipw/CA, sfe/W], true_value: 0.0}\n")
    commands = {
        "estimate": ["estimate", str(data), "--tau", "0.25", "0.5", "--method", "sqr", "ipw",
                     "sfe", "--se", "weighted-boot", "ca-boot", "naive", "--scheme", "sbr",
                     "--ate", "--contrast", "0.25", "0.75", "--boot-b", "100", "--seed", "1"],
        "assign": ["assign", str(strata), "--scheme", "bcd", "--seed", "1"],
        "simulate": ["simulate", str(cfg)],
        "true-values": ["true-values", "--dgp", "2", "3", "--tau", "0.3", "--ate",
                        "--contrast", "0.25", "0.75", "--oracle-n", "20000",
                        "--oracle-reps", "3", "--seed", "1"],
    }
    max_threads = str(max(4, os.cpu_count() or 1))
    differing = []
    for name, argv in commands.items():
        outs = []
        for threads in ("1", max_threads, max_threads):
            env = dict(os.environ, CARQ_THREADS=threads)
            res = subprocess.run([sys.executable, "-m", "carq.cli", *argv], env=env,
                                 capture_output=True, check=True)
            outs.append(res.stdout)
        if not (outs[0] == outs[1] == outs[2] and outs[0]):
            differing.append(name)
    report(capsys, "8", not differing,
           f"commands={list(commands)} threads=1,{max_threads},{max_threads} "
           f"differing={differing or 'none'}")
