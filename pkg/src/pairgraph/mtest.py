"""Edge test statistics and the FDR-controlling threshold."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri
from scipy.stats import norm

ROOT_TOL = 1e-12


@dataclass
class TestReport:
    w: np.ndarray
    p_values: np.ndarray
    threshold: float
    alpha: float
    rejected: set
    modes: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class


def upper(m):
    m = np.asarray(m)
    return m[np.triu_indices(m.shape[0], 1)]


def test_stats(rho1, rho2, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    iu = np.triu_indices_from(theta, 1)
    if np.any(theta[iu] <= 0):
        raise ValueError("nonpositive variance in test statistic")
    w = np.zeros_like(theta)
    w[iu] = (np.asarray(rho1)[iu] - np.asarray(rho2)[iu]) / np.sqrt(theta[iu])
    return w + w.T


test_stats.__test__ = False


def h_max(p: int) -> float:
    return 2.0 * np.sqrt(np.log(p))


def fdp_hat(w, h: float, p: int) -> float:
    """Estimated FDP at threshold ``h``; ``w`` is ``p x p`` or the flat
    upper-triangle vector."""
    aw = np.abs(upper(w) if np.ndim(w) == 2 else np.asarray(w))
    num = 2.0 * norm.sf(h) * (p * p - p) / 2.0
    return num / max(int(np.count_nonzero(aw >= h)), 1)


def threshold(w, alpha: float, p: int) -> float:
    """Smallest ``h`` in ``[0, 2 sqrt(log p)]`` with ``fdp_hat(h) <= alpha``.

    The rejection count only changes at the observed ``|W|`` values, so on
    each piece ``(lo, hi]`` between consecutive order statistics the
    condition reduces to ``h >= Phi^{-1}(1 - alpha D / (2L))`` with ``D``
    the fixed count and ``L`` the number of pairs.  Pieces are scanned
    upward.  Returns ``2 sqrt(log p)`` when no ``h`` qualifies.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    aw = np.abs(upper(w) if np.ndim(w) == 2 else np.asarray(w, dtype=float))
    aw = np.sort(aw)
    hmax = h_max(p)
    n_pairs = (p * p - p) / 2.0
    if fdp_hat(aw, 0.0, p) <= alpha:
        return 0.0
    lo = 0.0
    for hi in [*np.unique(aw[(aw > 0) & (aw < hmax)]), hmax]:
        count = aw.size - np.searchsorted(aw, hi, side="left")
        tail = alpha * max(int(count), 1) / (2.0 * n_pairs)
        h_star = -np.inf if tail >= 1.0 else -float(ndtri(tail))
        cand = max(h_star, lo)
        if cand <= hi:
            if fdp_hat(aw, cand, p) <= alpha:
                return float(cand)
            # the closed-form root landed on the infeasible side by rounding;
            # the count is fixed on the piece, so feasibility is monotone
            if fdp_hat(aw, hi, p) <= alpha:
                a, b = cand, hi
                while b - a > ROOT_TOL * max(1.0, b):
                    mid = 0.5 * (a + b)
                    if fdp_hat(aw, mid, p) <= alpha:
                        b = mid
                    else:
                        a = mid
                return float(b)
        lo = hi
    return float(hmax)


def finalize_report(w, thr: float, alpha: float, modes=None) -> TestReport:
    w = np.asarray(w, dtype=float)
    p = w.shape[0]
    pv = 2.0 * norm.sf(np.abs(w))
    np.fill_diagonal(pv, 1.0)
    iu, ju = np.triu_indices(p, 1)
    hit = np.abs(w[iu, ju]) >= thr
    rejected = set(zip(iu[hit].tolist(), ju[hit].tolist()))
    return TestReport(w, pv, float(thr), alpha, rejected, dict(modes or {}))
