"""Eigendecomposition helpers for symmetric matrices."""
import numpy as np


def _eigh_sym(m):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    return np.linalg.eigh((m + m.T) / 2)


def inv_sqrt_psd(m, eig_floor=1e-8):
    """Inverse symmetric square root with eigenvalues floored at
    ``eig_floor * max_eigenvalue``."""
    lam, u = _eigh_sym(m)
    top = lam[-1]
    if not top > 0:
        raise ValueError("matrix has no positive eigenvalue")
    lam = np.maximum(lam, eig_floor * top)
    out = (u / np.sqrt(lam)) @ u.T
    return (out + out.T) / 2


def sqrt_psd(m):
    lam, u = _eigh_sym(m)
    out = (u * np.sqrt(np.clip(lam, 0.0, None))) @ u.T
    return (out + out.T) / 2


def sym_factor(m):
    """Return ``(min_eigenvalue, F)`` with ``F.T @ F == m`` after clipping
    negative eigenvalues to zero.  ``F`` is the symmetric square root."""
    lam, u = _eigh_sym(m)
    f = (u * np.sqrt(np.clip(lam, 0.0, None))) @ u.T
    return float(lam[0]), f
