"""Residual covariances, bias-corrected ``r`` and partial correlations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pairgraph.nodewise import NodewiseFit, ResidualSet

DIAG_GUARD = 1e-10


class DegenerateFitError(ArithmeticError):
    pass


@dataclass
class EdgeStatistics:
    group: int
    r_tilde: np.ndarray
    r_hat: np.ndarray
    rho_hat: np.ndarray


def residual_cov(res: ResidualSet) -> np.ndarray:
    eps = res.eps
    n, _, q = eps.shape
    r = np.einsum("kil,kjl->ij", eps, eps) / (n * q)
    return (r + r.T) / 2


def bias_corrected_r(r_tilde, fit: NodewiseFit) -> np.ndarray:
    """``-(r~_ij + r~_ii coef_on(j->i) + r~_jj coef_on(i->j))`` off the
    diagonal, ``r~_ii`` on it."""
    r_tilde = np.asarray(r_tilde, dtype=float)
    B = fit.matrix()
    d = np.diag(r_tilde)
    # B.T[i, j] = coef_on(j -> i)
    r_hat = -(r_tilde + d[:, None] * B.T + d[None, :] * B)
    iu = np.triu_indices_from(r_hat, 1)
    r_hat.T[iu] = r_hat[iu]
    np.fill_diagonal(r_hat, d)
    return r_hat


def partial_corr_est(r_hat) -> np.ndarray:
    r_hat = np.asarray(r_hat, dtype=float)
    d = np.diag(r_hat)
    bad = np.flatnonzero(d < DIAG_GUARD)
    if bad.size:
        raise DegenerateFitError(
            f"nonpositive residual variance at node(s) {(bad + 1).tolist()} "
            f"(min {d.min():.3e})")
    s = 1.0 / np.sqrt(d)
    rho = r_hat * np.outer(s, s)
    np.fill_diagonal(rho, 1.0)
    return rho


def edge_statistics(res: ResidualSet, fit: NodewiseFit) -> EdgeStatistics:
    r_tilde = residual_cov(res)
    r_hat = bias_corrected_r(r_tilde, fit)
    return EdgeStatistics(fit.group, r_tilde, r_hat, partial_corr_est(r_hat))
