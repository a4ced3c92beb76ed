"""Nodewise Lasso regressions pooled over subjects and time points.

Coefficients are kept in a ``p x p`` matrix ``B`` with a zero diagonal,
where ``B[a, b]`` is the coefficient on variable ``b`` in the regression of
variable ``a`` (``coef_on(a -> b)``).  The packed ``p x (p-1)`` layout drops
the diagonal.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np
from scipy.stats import norm

TOL = 1e-8
MAX_SWEEPS = 10_000


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def lasso_objective(beta, X, y, lam):
    r = y - X @ beta
    return r @ r / (2 * X.shape[0]) + lam * np.abs(beta).sum()


def lasso_solve(X, y, lam, tol=TOL, max_sweeps=MAX_SWEEPS, beta0=None,
                history=False):
    """Cyclic coordinate descent for ``(1/2m)||y - X b||^2 + lam ||b||_1``.

    Works in covariance form on ``X'X/m`` and ``X'y/m``; stops when no
    coefficient moves by more than ``tol`` in a sweep.  With ``history``
    the objective after every sweep is returned as well.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.isfinite(X).all() and np.isfinite(y).all() and np.isfinite(lam)):
        raise ValueError("non-finite input to lasso_solve")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    m, d = X.shape
    gram = X.T @ X / m
    corr = X.T @ y / m
    beta = np.zeros(d) if beta0 is None else np.array(beta0, dtype=float)
    diag = np.diag(gram)
    hist = []
    for _ in range(max_sweeps):
        delta = 0.0
        for j in range(d):
            if diag[j] <= 0:
                beta[j] = 0.0
                continue
            rho = corr[j] - gram[j] @ beta + diag[j] * beta[j]
            new = soft_threshold(rho, lam) / diag[j]
            delta = max(delta, abs(new - beta[j]))
            beta[j] = new
        if history:
            hist.append(lasso_objective(beta, X, y, lam))
        if delta < tol:
            break
    return (beta, np.array(hist)) if history else beta


def lasso_gram_batch(S, lam, tol=TOL, max_sweeps=MAX_SWEEPS):
    """Nodewise Lasso for every node and every penalty row at once.

    Parameters
    ----------
    S : (p, p) array
        Pooled sample covariance of the centered variables.
    lam : (nb, p) array
        Penalty for node ``i`` under setting ``b`` in ``lam[b, i]``.

    Returns
    -------
    B : (nb, p, p) array
        ``B[b, i, j]`` is the coefficient on ``j`` when regressing ``i`` on
        the others, with a zero diagonal.  Each ``(b, i)`` problem is solved
        by cyclic coordinate descent over ``j``.
    """
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    p = S.shape[0]
    nb = lam.shape[0]
    B = np.zeros((nb, p, p))
    for _ in range(max_sweeps):
        delta = 0.0
        for j in range(p):
            sjj = S[j, j]
            if sjj <= 0:
                continue
            # partial residual correlation, excluding j's own contribution
            rho = S[:, j] - B @ S[:, j] + B[:, :, j] * sjj
            new = soft_threshold(rho, lam) / sjj
            new[:, j] = 0.0
            delta = max(delta, float(np.max(np.abs(new - B[:, :, j]))))
            B[:, :, j] = new
        if delta < tol:
            break
    return B


@dataclass
class NodewiseFit:
    group: int
    coefficients: np.ndarray  # (p, p-1)
    penalties: np.ndarray     # (p,)
    b_used: Optional[int] = None

    @classmethod
    def from_matrix(cls, group, B, penalties, b_used=None):
        p = B.shape[0]
        off = ~np.eye(p, dtype=bool)
        return cls(group, B[off].reshape(p, p - 1), np.asarray(penalties, float), b_used)

    @property
    def p(self) -> int:
        return self.coefficients.shape[0]

    def matrix(self) -> np.ndarray:
        """``p x p`` layout, ``M[a, b] = coef_on(a -> b)``, zero diagonal."""
        p = self.p
        out = np.zeros((p, p))
        out[~np.eye(p, dtype=bool)] = self.coefficients.ravel()
        return out

    def coef_on(self, a: int, b: int) -> float:
        if a == b:
            raise ValueError("no self coefficient")
        return float(self.coefficients[a, b if b < a else b - 1])


@dataclass
class ResidualSet:
    group: int
    eps: np.ndarray  # (n, p, q)
    centering: str


def pooled_design(Y) -> np.ndarray:
    """Stack the ``n*q`` observations (k, l) as rows of an ``nq x p`` matrix."""
    Y = np.asarray(Y, dtype=float)
    return Y.transpose(0, 2, 1).reshape(-1, Y.shape[1])


def pooled_cov(Y) -> np.ndarray:
    Z = pooled_design(Y)
    Z = Z - Z.mean(axis=0)
    S = Z.T @ Z / Z.shape[0]
    return (S + S.T) / 2


def penalties_for_b(Y, b) -> np.ndarray:
    """``b/20 * sqrt(var_i * log p / (nq))`` for every node ``i``.

    ``b`` may be a scalar or a sequence, giving one row per value.
    """
    n, p, q = np.shape(Y)
    var = np.diag(pooled_cov(Y))
    base = np.sqrt(var * np.log(p) / (n * q))
    return np.multiply.outer(np.asarray(b, dtype=float) / 20.0, base)


def nodewise_fit(Y, penalties, group: int = 1, b_used=None) -> NodewiseFit:
    n, p, q = np.shape(Y)
    if n * q <= 1:
        raise ValueError("need more than one pooled observation")
    penalties = np.broadcast_to(np.asarray(penalties, dtype=float), (p,))
    B = lasso_gram_batch(pooled_cov(Y), penalties[None, :])[0]
    return NodewiseFit.from_matrix(group, B, penalties, b_used)


def nodewise_path(Y, bs: Iterable[int], group: int = 1) -> dict:
    """Fits for every ``b`` in ``bs`` from a single batched solve."""
    bs = list(bs)
    lam = penalties_for_b(Y, bs)
    B = lasso_gram_batch(pooled_cov(Y), lam)
    return {b: NodewiseFit.from_matrix(group, B[k], lam[k], b)
            for k, b in enumerate(bs)}


def residuals(Y, fit: NodewiseFit, centering: str = "per_column") -> ResidualSet:
    """Regression residuals for every node.

    ``per_column`` centers each (i, l) cell by its mean over subjects;
    ``pooled`` centers each variable by its mean over subjects and time.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.shape[1] != fit.p:
        raise ValueError(f"fit has p={fit.p} but data has p={Y.shape[1]}")
    if centering == "per_column":
        Yc = Y - Y.mean(axis=0, keepdims=True)
    elif centering == "pooled":
        Yc = Y - Y.mean(axis=(0, 2), keepdims=True)
    else:
        raise ValueError(f"unknown centering {centering!r}")
    # eps_i = Yc_i - sum_b coef_on(i -> b) Yc_b
    eps = Yc - np.einsum("ab,kbl->kal", fit.matrix(), Yc)
    return ResidualSet(fit.group, eps, centering)


def _crit_levels(p):
    tail = norm.sf(np.sqrt(np.log(p)))
    s = np.arange(1, 11)
    probs = s * tail / 10
    return norm.isf(probs), probs


def tuning_criterion(w, p: Optional[int] = None) -> float:
    """Squared-deviation criterion comparing tail counts of ``|W|`` with the
    normal reference over ten thresholds."""
    w = np.asarray(w, dtype=float)
    if w.ndim == 2:
        p = w.shape[0]
        w = w[np.triu_indices(p, 1)]
    if p is None:
        raise ValueError("p is required for a flat statistic vector")
    levels, probs = _crit_levels(p)
    aw = np.abs(w)
    counts = (aw[None, :] >= levels[:, None]).sum(axis=1)
    return float(np.sum((counts / (probs * p * (p - 1)) - 1.0) ** 2))


def tune_b(w_of_b: Callable[[int], np.ndarray], grid=range(1, 41)):
    """Minimize the tuning criterion over ``grid``; ties go to the smaller b.

    ``w_of_b`` returns the ``p x p`` statistic matrix for a grid value, or
    ``None`` when the pipeline cannot produce one (that value is skipped).
    Returns ``(b_hat, {b: criterion})``.
    """
    grid = sorted(grid)
    if not grid:
        raise ValueError("empty tuning grid")
    scores = {}
    for b in grid:
        w = w_of_b(b)
        scores[b] = np.inf if w is None else tuning_criterion(w)
    best = min(grid, key=lambda b: (scores[b], b))
    return best, scores
