import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from carq.assign import (
    SchemeSpec,
    StrataRule,
    assign,
    assign_from_uniforms,
    default_phi,
    gamma_of,
    make_strata,
)
from carq.core import ConfigurationError, DomainError
from carq.dgp import STRATA_RULES

strata_lists = st.lists(st.integers(0, 3), min_size=1, max_size=60)


def loop_sequential(kind, s, u, lam=0.75, phi=default_phi):
    """Unit-by-unit reference for the sequential rules (pi = 1/2)."""
    n1, n = {}, {}
    out = []
    for sk, uk in zip(s, u):
        c, t = n.get(sk, 0), n1.get(sk, 0)
        d = t - 0.5 * c
        if kind == "bcd":
            p = 0.5 if d == 0 else (lam if d < 0 else 1 - lam)
        else:
            p = float(phi(d / c if c else 0.0))
        a = int(uk < p)
        out.append(a)
        n[sk] = c + 1
        n1[sk] = t + a
    return out


class TestSchemeSpec:
    @pytest.mark.parametrize("kw", [
        dict(kind="wei", pi=0.4), dict(kind="bcd", pi=0.6), dict(kind="bcd", lam=0.5),
        dict(kind="bcd", lam=1.2), dict(kind="sbr", pi=0.0), dict(kind="srs", pi=1.5),
        dict(kind="xyz"),
    ])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            SchemeSpec(**kw)

    def test_strong_balance(self):
        assert SchemeSpec("bcd").strong_balance and SchemeSpec("sbr").strong_balance
        assert not SchemeSpec("srs").strong_balance


class TestMakeStrata:
    def test_dgp1_cutoffs(self):
        rule = STRATA_RULES[1]
        assert make_strata([0.0], rule).tolist() == [3]
        assert make_strata([100.0], rule).tolist() == [0]
        assert make_strata([-100.0], rule).tolist() == [4]

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=30))
    def test_counts_cutoffs_at_or_above(self, z):
        g = (-1.0, 0.0, 1.0, 2.0)
        got = make_strata(z, StrataRule(g))
        want = [sum(zi <= gj for gj in g) for zi in z]
        assert got.tolist() == want

    def test_cutoffs_must_increase(self):
        with pytest.raises(ConfigurationError):
            StrataRule((0.0, 0.0))


class TestAssign:
    def test_srs_all_ones(self):
        a = assign(SchemeSpec("srs", pi=1.0), np.zeros(50, int), np.random.default_rng(0))
        assert a.tolist() == [1] * 50

    def test_sbr_four_units(self):
        a = assign(SchemeSpec("sbr"), np.zeros(4, int), np.random.default_rng(0))
        assert a.sum() == 2

    @settings(max_examples=200)
    @given(strata_lists, st.sampled_from([0.5, 0.3, 0.7, 0.25]), st.integers(0, 2 ** 32))
    def test_sbr_floor_counts(self, s, pi, seed):
        a = assign(SchemeSpec("sbr", pi=pi), np.array(s), np.random.default_rng(seed))
        s = np.array(s)
        for lab in np.unique(s):
            m = s == lab
            assert a[m].sum() == math.floor(pi * m.sum() + 1e-9)

    @settings(max_examples=200)
    @given(strata_lists, st.sampled_from(["bcd", "wei"]), st.integers(0, 2 ** 32))
    def test_sequential_matches_loop(self, s, kind, seed):
        u = np.random.default_rng(seed).random(len(s))
        got = assign_from_uniforms(SchemeSpec(kind), np.array([s]), u[None, :])[0]
        assert got.tolist() == loop_sequential(kind, s, u)

    def test_rows_are_independent_experiments(self):
        rng = np.random.default_rng(1)
        s = rng.integers(0, 3, (20, 40))
        u = rng.random((20, 40))
        for kind in ("srs", "wei", "bcd", "sbr"):
            sch = SchemeSpec(kind)
            full = assign_from_uniforms(sch, s, u)
            for r in range(20):
                one = assign_from_uniforms(sch, s[r:r + 1], u[r:r + 1])[0]
                assert np.array_equal(full[r], one)

    def test_bcd_second_draw_probability(self):
        # P(A2 = 1 | A1 = 1) is 1 - lambda = 0.25 in a single stratum
        u = np.random.default_rng(20).random((100_000, 2))
        a = assign_from_uniforms(SchemeSpec("bcd", lam=0.75), np.zeros((100_000, 2), int), u)
        first = a[:, 0] == 1
        assert abs(a[first, 1].mean() - 0.25) < 0.01

    @pytest.mark.parametrize("kind", ["srs", "wei", "bcd", "sbr"])
    def test_seed_replay(self, kind):
        s = np.random.default_rng(3).integers(0, 4, 100)
        a1 = assign(SchemeSpec(kind), s, np.random.default_rng(9))
        a2 = assign(SchemeSpec(kind), s, np.random.default_rng(9))
        assert np.array_equal(a1, a2)

    def test_empty_strata(self):
        with pytest.raises(DomainError):
            assign(SchemeSpec("srs"), np.array([], int), np.random.default_rng(0))


class TestGamma:
    def test_values(self):
        assert gamma_of(SchemeSpec("srs")) == 0.25
        assert gamma_of(SchemeSpec("srs", pi=0.3)) == pytest.approx(0.21)
        assert gamma_of(SchemeSpec("sbr")) == 0.0
        assert gamma_of(SchemeSpec("bcd")) == 0.0
        assert gamma_of(SchemeSpec("wei")) == pytest.approx(1 / 8)

    def test_per_stratum(self):
        assert gamma_of(SchemeSpec("sbr"), [2, 1, 2]) == {1: 0.0, 2: 0.0}

    def test_custom_differentiable_phi(self):
        phi = lambda x: 0.5 - 0.25 * np.tanh(np.asarray(x))  # slope -1/4 at 0
        assert gamma_of(SchemeSpec("wei", phi=phi)) == pytest.approx(1 / 6, rel=1e-6)

    def test_kinked_phi_rejected(self):
        phi = lambda x: 0.5 - 0.25 * np.sign(x) * np.minimum(np.abs(x), 1)
        phi2 = lambda x: np.where(np.asarray(x) > 0, 0.5 - 0.4 * np.asarray(x),
                                  0.5 - 0.1 * np.asarray(x))
        gamma_of(SchemeSpec("wei", phi=phi))  # linear near 0: fine
        with pytest.raises(ConfigurationError):
            gamma_of(SchemeSpec("wei", phi=phi2))

    def test_wei_imbalance_variance(self):
        # the simulated imbalance variance is what gamma_of reports
        n, B = 2000, 2000
        u = np.random.default_rng(5).random((B, n))
        a = assign_from_uniforms(SchemeSpec("wei"), np.zeros((B, n), int), u)
        v = np.var((a.sum(axis=1) - 0.5 * n) / math.sqrt(n))
        assert abs(v - gamma_of(SchemeSpec("wei"))) < 0.012
