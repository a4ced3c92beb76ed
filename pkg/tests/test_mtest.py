import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import ndtri
from scipy.stats import norm

from pairgraph.mtest import fdp_hat, finalize_report, h_max, test_stats as wstats, threshold, upper


def sym(v, p):
    w = np.zeros((p, p))
    w[np.triu_indices(p, 1)] = v
    return w + w.T


def brute_fdp(w, h, p):
    count = 0
    for i in range(p):
        for j in range(i + 1, p):
            if abs(w[i, j]) >= h:
                count += 1
    return 2.0 * norm.sf(h) * (p * p - p) / 2.0 / max(count, 1)


def grid_threshold(w, alpha, p, step=1e-4):
    hs = np.arange(0.0, h_max(p) + step, step)
    hs = hs[hs <= h_max(p)]
    aw = np.sort(np.abs(upper(w)))
    counts = aw.size - np.searchsorted(aw, hs, side="left")
    vals = 2.0 * norm.sf(hs) * (p * p - p) / 2.0 / np.maximum(counts, 1)
    ok = np.flatnonzero(vals <= alpha)
    return hs[ok[0]] if ok.size else h_max(p)


def test_stat_examples():
    rho = np.array([[1.0, 0.3], [0.3, 1.0]])
    assert np.array_equal(wstats(rho, rho, np.full((2, 2), 0.1)), np.zeros((2, 2)))
    rho2 = np.array([[1.0, 0.1], [0.1, 1.0]])
    assert wstats(rho, rho2, np.full((2, 2), 0.01))[0, 1] == pytest.approx(2.0)
    with pytest.raises(ValueError):
        wstats(rho, rho2, np.zeros((2, 2)))


def test_fdp_examples():
    p = 6
    w = sym(np.arange(1, 16) / 10, p)
    assert fdp_hat(w, 0.0, p) == 1.0
    assert fdp_hat(w, 5.0, p) == pytest.approx(2 * norm.sf(5.0) * 15)


def test_fdp_brute_force(rng):
    for _ in range(100):
        p = int(rng.integers(4, 12))
        w = sym(rng.standard_normal(p * (p - 1) // 2) * 2, p)
        h = float(rng.uniform(0, 4))
        assert fdp_hat(w, h, p) == brute_fdp(w, h, p)


def test_fdp_nonincreasing_between_jumps(rng):
    p = 8
    w = sym(rng.standard_normal(28) * 2, p)
    aw = np.sort(upper(np.abs(w)))
    for lo, hi in zip(aw[:-1], aw[1:]):
        hs = np.linspace(lo, hi, 7)[1:-1]
        vals = [fdp_hat(w, h, p) for h in hs]
        assert np.all(np.diff(vals) <= 0)


def test_threshold_all_large():
    p = 10
    w = sym(np.full(45, 10.0), p)
    h = threshold(w, 0.01, p)
    assert h < 10
    assert fdp_hat(w, h, p) <= 0.01
    assert h == 0 or fdp_hat(w, h - 1e-6, p) > 0.01
    assert abs(h - grid_threshold(w, 0.01, p)) <= 1e-4


def test_threshold_fallback():
    p = 10
    assert 90 * norm.sf(2 * math.sqrt(math.log(p))) > 0.01
    assert threshold(np.zeros((p, p)), 0.01, p) == h_max(p)


def test_threshold_alpha_near_one_is_fast_and_feasible():
    # fdp at h = 0 is exactly 1, so a tiny positive h is needed; the root
    # sits within rounding of the boundary
    p = 5
    w = sym(np.ones(10), p)
    h = threshold(w, 0.999999, p)
    assert 0 < h < 1e-5
    assert fdp_hat(w, h, p) <= 0.999999
    with pytest.raises(ValueError):
        threshold(w, 1.0, p)


def test_threshold_grid_oracle(rng):
    for _ in range(100):
        p = int(rng.integers(5, 30))
        v = rng.standard_normal(p * (p - 1) // 2)
        v[rng.random(v.size) < 0.2] *= 4
        w = sym(v, p)
        alpha = float(rng.choice([0.01, 0.05, 0.1, 0.2]))
        h = threshold(w, alpha, p)
        assert 0 <= h <= h_max(p)
        assert abs(h - grid_threshold(w, alpha, p)) <= 1e-4


def test_report_flags_and_pvalues(rng):
    p = 12
    w = sym(rng.standard_normal(66) * 2, p)
    w[0, 1] = w[1, 0] = 0.0
    thr = threshold(w, 0.1, p)
    rep = finalize_report(w, thr, 0.1, {"correction": "corrected"})
    assert rep.p_values[0, 1] == 1.0 and (0, 1) not in rep.rejected
    brute = {(i, j) for i in range(p) for j in range(i + 1, p) if abs(w[i, j]) >= thr}
    assert rep.rejected == brute
    if brute:
        assert fdp_hat(w, thr, p) == pytest.approx(
            2 * norm.sf(thr) * (p * p - p) / 2 / len(brute), rel=1e-15)
    assert np.allclose(rep.p_values, 2 * norm.sf(np.abs(w)) * (1 - np.eye(p)) + np.eye(p))
    assert rep.modes == {"correction": "corrected"}


def test_rejections_monotone_in_alpha(rng):
    p = 15
    w = sym(rng.standard_normal(105) * 2.5, p)
    prev = set()
    for a in (0.001, 0.01, 0.05, 0.1, 0.3):
        rej = finalize_report(w, threshold(w, a, p), a).rejected
        assert prev <= rej
        prev = rej


@pytest.mark.parametrize("x", [0.0, 0.5, 1.0, 1.96, 3.0, 4.5, 6.0, 7.5, 8.0])
def test_normal_tail_against_reference(x):
    with mpmath.workdps(50):
        ref = float(mpmath.ncdf(-x))
    assert norm.sf(x) == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("tail", [0.5, 0.1, 1e-3, 1e-6, 1e-10, 1e-15])
def test_normal_quantile_against_reference(tail):
    with mpmath.workdps(50):
        ref = float(-mpmath.sqrt(2) * mpmath.erfinv(1 - 2 * mpmath.mpf(tail)))
    got = float(ndtri(tail))
    assert got == pytest.approx(ref, rel=1e-12, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(p=st.integers(4, 20), seed=st.integers(0, 2**31), alpha=st.floats(0.001, 0.5))
def test_threshold_definition_property(p, seed, alpha):
    w = sym(np.random.default_rng(seed).standard_normal(p * (p - 1) // 2) * 3, p)
    h = threshold(w, alpha, p)
    assert 0 <= h <= h_max(p)
    if h < h_max(p):
        assert fdp_hat(w, h, p) <= alpha
        if h > 0:
            assert fdp_hat(w, max(h - 1e-6, 0.0), p) > alpha
