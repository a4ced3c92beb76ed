"""Temporal covariance estimation, whitening, and the between-stage
temporal cross-covariance estimate."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from pairgraph.linalg import inv_sqrt_psd
from pairgraph.model import PairedDataset

log = logging.getLogger(__name__)

BAND_FLOOR = 1e-6


@dataclass
class TemporalEstimate:
    sigma_hat: np.ndarray
    bandwidth: int


@dataclass
class WhitenedDataset:
    y_pre: np.ndarray
    y_post: np.ndarray
    mode: str
    invsqrt_pre: np.ndarray
    invsqrt_post: np.ndarray

    @property
    def shape(self):
        return self.y_pre.shape

    def group(self, t: int) -> np.ndarray:
        return self.y_pre if t == 1 else self.y_post

    def swapped(self) -> "WhitenedDataset":
        return WhitenedDataset(self.y_post, self.y_pre, self.mode,
                               self.invsqrt_post, self.invsqrt_pre)


def _rows(group: np.ndarray) -> np.ndarray:
    g = np.asarray(group, dtype=float)
    return g.reshape(-1, g.shape[-1])


def _row_cov(rows: np.ndarray) -> np.ndarray:
    centered = rows - rows.mean(axis=0)
    s = centered.T @ centered / rows.shape[0]
    return (s + s.T) / 2


def pooled_temporal_cov(group) -> np.ndarray:
    """Covariance of the ``n*p`` pooled rows about the grand mean row."""
    rows = _rows(group)
    if rows.shape[0] < 2:
        raise ValueError("need at least two pooled rows")
    s = _row_cov(rows)
    if not np.any(s):
        log.warning("pooled temporal covariance is identically zero")
    return s


def band_matrix(cov, bandwidth: int, floor: Optional[float] = BAND_FLOOR) -> np.ndarray:
    """Zero entries more than ``bandwidth`` off the diagonal.

    With ``floor`` set, eigenvalues below ``floor * max_eigenvalue`` are
    raised to that level so the result is positive definite.
    """
    if bandwidth < 0:
        raise ValueError("bandwidth must be nonnegative")
    cov = np.asarray(cov, dtype=float)
    q = cov.shape[0]
    lag = np.abs(np.subtract.outer(np.arange(q), np.arange(q)))
    out = np.where(lag <= bandwidth, cov, 0.0)
    if floor is None:
        return out
    lam, u = np.linalg.eigh((out + out.T) / 2)
    lo = floor * lam[-1]
    if lam[0] >= lo:
        return out
    out = (u * np.maximum(lam, lo)) @ u.T
    return (out + out.T) / 2


def default_bandwidths(q: int) -> list[int]:
    return list(range(min(q - 1, 10) + 1))


def select_bandwidth(group, candidates: Optional[Sequence[int]] = None,
                     n_splits: int = 20, seed=None) -> int:
    """Pick the bandwidth with the smallest mean Frobenius split risk.

    The pooled rows are split at random into halves; each candidate bands
    the covariance of one half and is scored against the raw covariance of
    the other.  Ties go to the smaller bandwidth.
    """
    rows = _rows(group)
    if candidates is None:
        candidates = default_bandwidths(rows.shape[1])
    candidates = sorted(int(k) for k in candidates)
    if not candidates:
        raise ValueError("no bandwidth candidates")
    if len(candidates) == 1:
        return candidates[0]
    rng = np.random.default_rng(seed)
    m = rows.shape[0]
    half = m // 2
    risk = np.zeros(len(candidates))
    for _ in range(n_splits):
        perm = rng.permutation(m)
        s_train = _row_cov(rows[perm[:half]])
        s_valid = _row_cov(rows[perm[half:]])
        for c, k in enumerate(candidates):
            risk[c] += np.linalg.norm(band_matrix(s_train, k, None) - s_valid)
    return candidates[int(np.argmin(risk))]


def estimate_temporal(group, candidates=None, seed=None) -> TemporalEstimate:
    k = select_bandwidth(group, candidates, seed=seed)
    return TemporalEstimate(band_matrix(pooled_temporal_cov(group), k), k)


def whiten_group(dataset: PairedDataset, invsqrt_pre, invsqrt_post,
                 mode: str = "known_temporal") -> WhitenedDataset:
    invsqrt_pre = np.asarray(invsqrt_pre, dtype=float)
    invsqrt_post = np.asarray(invsqrt_post, dtype=float)
    q = dataset.q
    if invsqrt_pre.shape != (q, q) or invsqrt_post.shape != (q, q):
        raise ValueError(
            f"whitening matrices must be {q}x{q}, got "
            f"{invsqrt_pre.shape} and {invsqrt_post.shape}")
    return WhitenedDataset(dataset.pre @ invsqrt_pre, dataset.post @ invsqrt_post,
                           mode, invsqrt_pre, invsqrt_post)


def whiten_known(dataset: PairedDataset, sigma_t1, sigma_t2) -> WhitenedDataset:
    return whiten_group(dataset, inv_sqrt_psd(sigma_t1), inv_sqrt_psd(sigma_t2),
                        "known_temporal")


def whiten_estimated(dataset: PairedDataset, candidates=None, seed=None):
    """Whiten each stage with its own banded temporal estimate.

    Returns the whitened data and the two ``TemporalEstimate`` objects.
    """
    ss = np.random.SeedSequence(seed) if not isinstance(seed, np.random.SeedSequence) else seed
    s1, s2 = ss.spawn(2)
    est1 = estimate_temporal(dataset.pre, candidates, np.random.default_rng(s1))
    est2 = estimate_temporal(dataset.post, candidates, np.random.default_rng(s2))
    wd = whiten_group(dataset, inv_sqrt_psd(est1.sigma_hat),
                      inv_sqrt_psd(est2.sigma_hat), "estimated_temporal")
    return wd, (est1, est2)


def estimate_p12(wd: WhitenedDataset) -> np.ndarray:
    """Pooled-row cross covariance between the two whitened stages."""
    r1 = _rows(wd.y_pre)
    r2 = _rows(wd.y_post)
    if r1.shape[0] < 2:
        raise ValueError("need at least two pooled rows")
    c1 = r1 - r1.mean(axis=0)
    c2 = r2 - r2.mean(axis=0)
    return c1.T @ c2 / r1.shape[0]
