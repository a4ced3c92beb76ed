import numpy as np
import pytest

from pairgraph.model import (CrossCov, GroundTruthModel, SpatialPrecision, TemporalCov,
                             make_cross_cov)

OMEGA3 = np.array([[1.0, 0.3, 0.0], [0.3, 1.0, 0.2], [0.0, 0.2, 1.0]])
OMEGA4 = np.array([[1.0, 0.4, 0.2, 0.0],
                   [0.4, 1.0, 0.3, 0.1],
                   [0.2, 0.3, 1.0, -0.25],
                   [0.0, 0.1, -0.25, 1.0]])


def custom_model(omega1, omega2=None, t1=None, t2=None, setting="I", gamma=0.0, p12=None):
    """Hand-built model for dimensions below the generator minimum."""
    omega2 = omega1 if omega2 is None else omega2
    p = omega1.shape[0]
    t1 = np.eye(2) if t1 is None else np.asarray(t1, float)
    t2 = t1 if t2 is None else np.asarray(t2, float)
    om1, om2 = SpatialPrecision(np.asarray(omega1, float)), SpatialPrecision(np.asarray(omega2, float))
    cross = make_cross_cov(setting, gamma, om1.covariance(), t1, t2, p12)
    assert cross.sigma_s12.shape == (p, p)
    return GroundTruthModel(om1, om2, TemporalCov(t1), TemporalCov(t2), cross)


def gaussian_rows(cov, m, rng):
    """``m`` draws from N(0, cov) as rows."""
    lam, u = np.linalg.eigh(cov)
    return rng.standard_normal((m, cov.shape[0])) @ (u * np.sqrt(np.maximum(lam, 0))) @ u.T


def whitened_group(omega, n, q, rng):
    """``(n, p, q)`` array whose columns are i.i.d. N(0, omega^{-1})."""
    p = omega.shape[0]
    cols = gaussian_rows(np.linalg.inv(omega), n * q, rng)
    return cols.reshape(n, q, p).transpose(0, 2, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


__all__ = ["CrossCov", "OMEGA3", "OMEGA4", "custom_model", "gaussian_rows", "whitened_group"]
