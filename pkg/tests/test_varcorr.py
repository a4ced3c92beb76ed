import numpy as np
import pytest

from conftest import OMEGA3, OMEGA4, custom_model, gaussian_rows, whitened_group
from pairgraph.harness import mc_theta_oracle
from pairgraph.model import make_temporal_cov, rescale_cross, sample_paired
from pairgraph.nodewise import NodewiseFit, ResidualSet, nodewise_fit, penalties_for_b, residuals
from pairgraph.edgestats import edge_statistics
from pairgraph.pipeline import KnownTemporal, run_pipeline
from pairgraph.varcorr import (VarianceError, cross_varrho, spatial_cross_corr, temporal_factor,
                               theta_corrected, theta_true, theta_within, variance_estimates)


def fit_from(B):
    return NodewiseFit.from_matrix(1, np.asarray(B, float), np.zeros(len(B)))


def true_fit(omega):
    B = -omega / np.diag(omega)[:, None]
    np.fill_diagonal(B, 0.0)
    return fit_from(B)


def test_theta_within_examples():
    th = theta_within(fit_from(np.zeros((3, 3))), np.eye(3), 10, 10)
    assert np.all(th == 0.01)
    B = np.zeros((2, 2))
    B[1, 0] = 1.0  # coef_on(1 -> 0)
    th = theta_within(fit_from(B), np.eye(2), 10, 10)
    assert th[0, 1] == pytest.approx(0.02) and th[1, 0] == th[0, 1]


def test_theta_within_population(rng):
    Y = whitened_group(OMEGA4, 10_000, 10, rng)
    fit = nodewise_fit(Y, penalties_for_b(Y, 1))
    st = edge_statistics(residuals(Y, fit), fit)
    th = theta_within(fit, st.r_hat, 10_000, 10)
    d = np.diag(OMEGA4)
    target = 1 + OMEGA4**2 / np.outer(d, d)
    iu = np.triu_indices(4, 1)
    assert np.max(np.abs(1e5 * th[iu] - target[iu]) / target[iu]) <= 0.03
    assert np.all(th >= 1 / 1e5)


def test_varrho_independent_groups():
    maxes = []
    for s in range(15):
        rng = np.random.default_rng(s)
        y1 = whitened_group(OMEGA4, 1000, 10, rng)
        y2 = whitened_group(OMEGA4, 1000, 10, rng)
        fit = true_fit(OMEGA4)
        r1, r2 = residuals(y1, fit), residuals(y2, fit)
        rt = np.diag(1 / np.diag(OMEGA4))
        maxes.append(np.max(np.abs(cross_varrho(r1, r2, rt, rt))))
    assert np.median(maxes) <= 0.05


def test_varrho_expectation(rng):
    p12 = np.eye(2)
    m = custom_model(OMEGA3, setting="I", gamma=0.6, p12=p12)
    n, q = 500_000, 2
    x = gaussian_rows(m.whitened_joint_covariance(), n, rng)
    y1 = x[:, :6].reshape(n, 3, q)
    y2 = x[:, 6:].reshape(n, 3, q)
    fit = true_fit(OMEGA3)
    rt = np.diag(1 / np.diag(OMEGA3))
    vr = cross_varrho(residuals(y1, fit), residuals(y2, fit), rt, rt)
    target = spatial_cross_corr(m) * np.trace(p12) / q
    nz = np.abs(target) > 1e-12
    assert np.max(np.abs(vr[nz] - target[nz]) / np.abs(target[nz])) <= 0.03
    assert np.max(np.abs(vr[~nz])) <= 0.01


def test_varrho_swap_transposes(rng):
    e1 = ResidualSet(1, rng.standard_normal((4, 3, 5)), "per_column")
    e2 = ResidualSet(2, rng.standard_normal((4, 3, 5)), "per_column")
    r = np.diag([1.0, 2.0, 0.5])
    assert np.allclose(cross_varrho(e1, e2, r, r), cross_varrho(e2, e1, r, r).T, atol=1e-15)
    with pytest.raises(ValueError):
        cross_varrho(e1, ResidualSet(2, np.zeros((4, 3, 6)), "per_column"), r, r)


def test_temporal_factor_examples():
    assert temporal_factor(np.eye(7)) == pytest.approx(1.0)
    assert temporal_factor(-3.5 * np.eye(7)) == pytest.approx(1.0)
    pat = np.diag([-1.0 if i in (0, 2, 4) else 1.0 for i in range(15)])
    assert temporal_factor(pat) == pytest.approx(225 / 81, rel=1e-15)
    with pytest.raises(VarianceError):
        temporal_factor(np.diag([1.0, -1.0]))


def test_theta_corrected_modes(rng):
    t1 = np.full((3, 3), 0.01)
    t2 = np.full((3, 3), 0.02)
    vr = rng.standard_normal((3, 3)) * 0.1
    assert np.array_equal(theta_corrected(t1, t2, np.zeros((3, 3)), 2.0, 10, 10), t1 + t2)
    assert np.array_equal(theta_corrected(t1, t2, vr, 2.0, 10, 10, "uncorrected"), t1 + t2)
    out = theta_corrected(t1, t2, vr, 2.0, 10, 10, "known_temporal")
    d = np.diag(vr)
    assert out[0, 1] == pytest.approx(0.03 - 0.02 * 2.0 * (d[0] * d[1] + vr[0, 1] * vr[1, 0]))
    with pytest.raises(ValueError):
        theta_corrected(t1, t2, vr, 1.0, 10, 10, "bogus")


def test_theta_corrected_nonpositive_lists_pairs():
    t = np.full((3, 3), 0.01)
    vr = np.eye(3)
    with pytest.raises(VarianceError) as exc:
        theta_corrected(t, t, vr, 1.0, 10, 10)
    assert exc.value.pairs == [(1, 2), (1, 3), (2, 3)]


def test_theta_true_no_cross_is_sum():
    m = custom_model(OMEGA3, omega2=np.eye(3), gamma=0.0)
    th = theta_true(m, 5, 2)
    om = OMEGA3
    d = np.diag(om)
    expect = (1 + om**2 / np.outer(d, d)) / 10 + 1 / 10
    iu = np.triu_indices(3, 1)
    assert np.allclose(th[iu], expect[iu], rtol=1e-14)


def test_theta_true_identical_groups_vanish():
    om = np.array([[1.0, 0.4], [0.4, 1.0]])
    m = custom_model(om, gamma=1.0, p12=np.eye(2))
    th = theta_true(m, 5, 2)
    mc = mc_theta_oracle(m, 5, 2, draws=10**5, seed=0)
    assert abs(th[0, 1]) <= 1e-12 and abs(mc[0, 1]) <= 1e-12


@pytest.mark.parametrize("setting,gamma", [("I", 0.3), ("II", 0.5), ("I", -0.4)])
def test_theta_true_symmetric_positive(setting, gamma):
    om2 = OMEGA3.copy()
    om2[0, 1] = om2[1, 0] = 0.0
    m = custom_model(OMEGA3, omega2=om2, setting=setting, gamma=gamma,
                     t1=[[1.0, 0.4], [0.4, 1.0]], t2=[[1.0, 0.2], [0.2, 1.0]],
                     p12=np.diag([1.0, 0.5]))
    th = theta_true(m, 5, 2)
    assert np.array_equal(th, th.T)
    assert np.all(th[np.triu_indices(3, 1)] > 0)
    mc = mc_theta_oracle(m, 5, 2, draws=20_000, seed=1)
    iu = np.triu_indices(3, 1)
    assert np.max(np.abs(mc[iu] - th[iu]) / th[iu]) <= 0.05


def test_theta_true_scale_invariance():
    m = custom_model(OMEGA3, setting="II", gamma=0.5, p12=np.diag([1.0, -0.5]))
    base = theta_true(m, 5, 2)
    for c in (0.5, 2.0, 10.0):
        cr = rescale_cross(m.cross, c, m.sigma_t1.entries, m.sigma_t2.entries)
        m2 = type(m)(m.omega_s1, m.omega_s2, m.sigma_t1, m.sigma_t2, cr)
        assert np.max(np.abs(theta_true(m2, 5, 2) - base) / np.abs(base)) <= 1e-12


def test_theta_hat_matches_truth_known_temporal(rng):
    q, n = 50, 200
    t1 = make_temporal_cov("ma", q, 1).entries
    t2 = make_temporal_cov("ma", q, 2).entries
    m = custom_model(OMEGA4, setting="I", gamma=0.6, t1=t1, t2=t2)
    d = sample_paired(m, n, seed=3)
    known = KnownTemporal(t1, t2, m.cross.p_t12)
    res = run_pipeline(d, 0.05, "known", known, ("corrected",), grid=(2,))
    th_hat = res["corrected"].variance.theta_corrected
    th = theta_true(m, n, q)
    iu = np.triu_indices(4, 1)
    assert np.max(np.abs(th_hat[iu] - th[iu]) / th[iu]) <= 0.10


def test_variance_estimates_uncorrected_skips_factor(rng):
    y1 = rng.standard_normal((5, 3, 4))
    y2 = rng.standard_normal((5, 3, 4))
    f = fit_from(np.zeros((3, 3)))
    r1, r2 = residuals(y1, f), residuals(y2, f)
    est = variance_estimates(f, f, r1, r2, np.eye(3), np.eye(3), np.diag([1.0, -1, 1, -1]),
                             "uncorrected")
    assert est.temporal_factor == 1.0
    assert np.array_equal(est.theta_corrected, est.theta1 + est.theta2)
    with pytest.raises(VarianceError):
        variance_estimates(f, f, r1, r2, np.eye(3), np.eye(3), np.diag([1.0, -1, 1, -1]),
                           "known_temporal")

