"""Variance of the partial-correlation difference under paired sampling.

The within-stage variances ``theta`` are the independent two-sample terms;
the paired correction subtracts a between-stage term built from the
residual cross-correlations ``varrho`` and a temporal factor
``q ||P||_F^2 / tr(P)^2``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pairgraph.model import GroundTruthModel
from pairgraph.nodewise import NodewiseFit, ResidualSet

MODES = ("known_temporal", "estimated_temporal", "uncorrected")


class VarianceError(ArithmeticError):
    """Raised when a corrected variance comes out nonpositive."""

    def __init__(self, msg, pairs=()):
        super().__init__(msg)
        self.pairs = list(pairs)


@dataclass
class VarianceEstimates:
    theta1: np.ndarray
    theta2: np.ndarray
    varrho: np.ndarray
    temporal_factor: float
    theta_corrected: np.ndarray
    mode: str


def _sym_from_upper(m):
    iu = np.triu_indices_from(m, 1)
    m.T[iu] = m[iu]
    return m


def theta_within(fit: NodewiseFit, r_hat, n: int, q: int) -> np.ndarray:
    """``(1 + coef_on(j->i)^2 r_ii / r_jj) / (nq)`` for ``i < j``."""
    r_hat = np.asarray(r_hat, dtype=float)
    d = np.diag(r_hat)
    Bt = fit.matrix().T  # Bt[i, j] = coef_on(j -> i)
    theta = (1.0 + Bt**2 * d[:, None] / d[None, :]) / (n * q)
    theta = _sym_from_upper(theta)
    np.fill_diagonal(theta, 1.0 / (n * q))
    return theta


def cross_varrho(res1: ResidualSet, res2: ResidualSet, r_hat1, r_hat2) -> np.ndarray:
    """Full (asymmetric) matrix of standardized residual cross covariances
    between stage 1 node ``i`` and stage 2 node ``j``."""
    e1, e2 = res1.eps, res2.eps
    if e1.shape != e2.shape:
        raise ValueError("residual sets differ in shape")
    n, _, q = e1.shape
    cov = np.einsum("kil,kjl->ij", e1, e2) / (n * q)
    d1 = np.diag(np.asarray(r_hat1, dtype=float))
    d2 = np.diag(np.asarray(r_hat2, dtype=float))
    return cov / np.sqrt(np.outer(d1, d2))


def temporal_factor(p12) -> float:
    p12 = np.asarray(p12, dtype=float)
    q = p12.shape[0]
    tr = np.trace(p12)
    fro2 = float(np.sum(p12**2))
    if abs(tr) < 1e-10 * np.sqrt(fro2):
        raise VarianceError(
            f"trace of the temporal cross matrix is ~0 ({tr:.3e}); "
            "the paired correction is undefined")
    return q * fro2 / tr**2


def paired_term(varrho) -> np.ndarray:
    """``varrho_ii varrho_jj + varrho_ij varrho_ji``."""
    d = np.diag(varrho)
    return np.outer(d, d) + varrho * varrho.T


def theta_corrected(theta1, theta2, varrho, factor, n, q, mode="estimated_temporal",
                    check=True) -> np.ndarray:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    base = theta1 + theta2
    if mode == "uncorrected":
        return base.copy()
    out = base - 2.0 / (n * q) * paired_term(varrho) * factor
    if check:
        iu = np.triu_indices_from(out, 1)
        bad = np.flatnonzero(out[iu] <= 0)
        if bad.size:
            pairs = [(int(iu[0][b]) + 1, int(iu[1][b]) + 1) for b in bad]
            raise VarianceError(
                f"{bad.size} nonpositive corrected variance(s), e.g. pairs "
                f"{pairs[:5]}", pairs)
    return out


def variance_estimates(fit1, fit2, res1, res2, r_hat1, r_hat2, p12, mode,
                       check=True) -> VarianceEstimates:
    n, _, q = res1.eps.shape
    th1 = theta_within(fit1, r_hat1, n, q)
    th2 = theta_within(fit2, r_hat2, n, q)
    vr = cross_varrho(res1, res2, r_hat1, r_hat2)
    if mode == "uncorrected":
        fac = 1.0
    else:
        fac = temporal_factor(p12)
    tc = theta_corrected(th1, th2, vr, fac, n, q, mode, check)
    return VarianceEstimates(th1, th2, vr, fac, tc, mode)


def spatial_cross_corr(model: GroundTruthModel) -> np.ndarray:
    """Population correlation of stage-1 residual ``i`` with stage-2 residual
    ``j`` on the spatial side: ``sqrt(r1_ii r2_jj) (Om1 S12 Om2)_ij``."""
    om1 = model.omega_s1.entries
    om2 = model.omega_s2.entries
    r1 = 1.0 / np.diag(om1)
    r2 = 1.0 / np.diag(om2)
    return np.sqrt(np.outer(r1, r2)) * (om1 @ model.cross.sigma_s12 @ om2)


def theta_true(model: GroundTruthModel, n: int, q: int) -> np.ndarray:
    """Closed-form variance of the oracle difference for every pair."""
    th = []
    for om in (model.omega_s1.entries, model.omega_s2.entries):
        d = np.diag(om)
        th.append((1.0 + om**2 / np.outer(d, d)) / (n * q))
    rs = spatial_cross_corr(model)
    fro2 = float(np.sum(model.cross.p_t12**2))
    return th[0] + th[1] - 2.0 / (n * q**2) * paired_term(rs) * fro2
