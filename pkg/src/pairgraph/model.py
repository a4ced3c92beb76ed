"""Ground-truth structures and the joint matrix-normal sampler for paired data.

Matrices are ``p x q`` with rows indexing spatial locations and columns
indexing time points, so ``Cov(X[i, l], X[i2, l2]) = Sigma_S[i, i2] *
Sigma_T[l, l2]``.  Stacked vectors use row-major order (``X.reshape(-1)``),
which makes the covariance of the stacked vector literally
``kron(Sigma_S, Sigma_T)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import networkx as nx
import numpy as np

from pairgraph.linalg import sqrt_psd, sym_factor

SPATIAL_KINDS = ("banded", "hub", "small_world", "custom")
TEMPORAL_KINDS = ("ar", "ma", "custom")
SETTINGS = ("I", "II", "diagonal")

# off-diagonal absolute row sums are scaled to at most this (unit diagonal)
ROW_SUM_CAP = 0.9
EDGE_WEIGHTS = {"banded": None, "hub": 0.4, "small_world": 0.3}
PSD_TOL = -1e-8


class ModelError(ValueError):
    """Invalid model configuration (bad kind, too-small dimension, non-PSD)."""


@dataclass(frozen=True)
class SpatialPrecision:
    entries: np.ndarray
    kind: str = "custom"

    @property
    def p(self) -> int:
        return self.entries.shape[0]

    def edges(self) -> set[tuple[int, int]]:
        """Upper-triangle index pairs with a nonzero entry."""
        iu, ju = np.nonzero(np.triu(self.entries, 1))
        return set(zip(iu.tolist(), ju.tolist()))

    def covariance(self) -> np.ndarray:
        cov = np.linalg.inv(self.entries)
        return (cov + cov.T) / 2


@dataclass(frozen=True)
class TemporalCov:
    entries: np.ndarray
    kind: str = "custom"

    @property
    def q(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class CrossCov:
    """Between-stage covariance.

    ``p_t12`` lives on the whitened temporal scale; ``sigma_t12`` is the
    raw-scale block ``Sigma_T1^{1/2} P Sigma_T2^{1/2}``.
    """

    sigma_s12: np.ndarray
    p_t12: np.ndarray
    sigma_t12: np.ndarray


@dataclass(frozen=True)
class NoiseKind:
    kind: str = "gaussian"
    df: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "student_t"):
            raise ModelError(f"unknown noise kind {self.kind!r}")
        if self.kind == "student_t" and (self.df is None or self.df <= 2):
            raise ModelError(f"student_t noise needs df > 2, got {self.df}")


GAUSSIAN = NoiseKind()


@dataclass
class GroundTruthModel:
    omega_s1: SpatialPrecision
    omega_s2: SpatialPrecision
    sigma_t1: TemporalCov
    sigma_t2: TemporalCov
    cross: CrossCov
    h1_edges: set = field(default=None)
    check_psd: bool = True

    def __post_init__(self):
        if self.h1_edges is None:
            self.h1_edges = _h1_edges(self.omega_s1, self.omega_s2)
        if self.check_psd:
            lam = np.linalg.eigvalsh(self.joint_covariance())[0]
            if lam < PSD_TOL:
                raise ModelError(
                    f"joint covariance is not PSD (min eigenvalue {lam:.3e})")

    @property
    def p(self) -> int:
        return self.omega_s1.p

    @property
    def q(self) -> int:
        return self.sigma_t1.q

    def joint_covariance(self) -> np.ndarray:
        return assemble_joint(
            self.omega_s1.covariance(), self.omega_s2.covariance(),
            self.sigma_t1.entries, self.sigma_t2.entries,
            self.cross.sigma_s12, self.cross.sigma_t12)

    def whitened_joint_covariance(self) -> np.ndarray:
        """Joint covariance after removing the temporal correlation."""
        eye = np.eye(self.q)
        return assemble_joint(
            self.omega_s1.covariance(), self.omega_s2.covariance(), eye, eye,
            self.cross.sigma_s12, self.cross.p_t12)


@dataclass
class PairedDataset:
    pre: np.ndarray   # (n, p, q)
    post: np.ndarray  # (n, p, q)
    subject_ids: list = None

    def __post_init__(self):
        self.pre = np.asarray(self.pre, dtype=float)
        self.post = np.asarray(self.post, dtype=float)
        if self.pre.ndim != 3 or self.pre.shape != self.post.shape:
            raise ValueError(
                f"pre/post must share an (n, p, q) shape, got "
                f"{self.pre.shape} and {self.post.shape}")
        if self.pre.shape[0] < 2:
            raise ValueError("need at least 2 subjects")
        if not (np.isfinite(self.pre).all() and np.isfinite(self.post).all()):
            raise ValueError("dataset contains non-finite entries")
        if self.subject_ids is None:
            self.subject_ids = [f"s{k + 1:03d}" for k in range(self.n)]
        if len(self.subject_ids) != self.n:
            raise ValueError("subject_ids length does not match n")

    @property
    def n(self) -> int:
        return self.pre.shape[0]

    @property
    def p(self) -> int:
        return self.pre.shape[1]

    @property
    def q(self) -> int:
        return self.pre.shape[2]


def assemble_joint(sigma_s1, sigma_s2, sigma_t1, sigma_t2, sigma_s12, sigma_t12):
    off = np.kron(sigma_s12, sigma_t12)
    joint = np.block([[np.kron(sigma_s1, sigma_t1), off],
                      [off.T, np.kron(sigma_s2, sigma_t2)]])
    return (joint + joint.T) / 2


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _scale_offdiag(adj: np.ndarray, cap: float = ROW_SUM_CAP) -> np.ndarray:
    """Unit-diagonal precision with off-diagonal row sums capped at ``cap``."""
    if not 0 < cap < 1:
        raise ModelError(f"row sum cap must lie in (0, 1), got {cap}")
    off = adj.copy()
    np.fill_diagonal(off, 0.0)
    row_sum = np.abs(off).sum(axis=1).max()
    if row_sum > cap:
        off *= cap / row_sum
    return off + np.eye(adj.shape[0])


def make_spatial_precision(kind: str, p: int, params: Optional[dict] = None,
                           seed=None) -> SpatialPrecision:
    """Generate a sparse, strictly diagonally dominant spatial precision matrix.

    Parameters
    ----------
    kind : {"banded", "hub", "small_world"}
    p : int
        Number of spatial locations (at least 4).
    params : dict, optional
        ``bandwidth`` (banded, default 3), ``groups`` (hub, default 20),
        ``neighbors`` per side and ``rewire`` probability (small world,
        defaults 5 and 0.05), ``weight`` for hub or small-world edges and
        ``row_sum_cap`` on the off-diagonal absolute row sums (default 0.9).
    seed : int or numpy Generator, optional
        Only the small-world rewiring is random.
    """
    params = dict(params or {})
    if kind not in SPATIAL_KINDS or kind == "custom":
        raise ModelError(f"cannot generate spatial kind {kind!r}")
    if p < 4:
        raise ModelError(f"p must be at least 4, got {p}")
    idx = np.arange(p)
    lag = np.abs(idx[:, None] - idx[None, :])
    if kind == "banded":
        bw = int(params.get("bandwidth", 3))
        w = np.where((lag <= bw) & (lag > 0), 0.5 ** lag, 0.0)
    elif kind == "hub":
        groups = int(params.get("groups", 20))
        if p < groups:
            raise ModelError(f"hub graph needs p >= groups ({groups}), got {p}")
        w = np.zeros((p, p))
        for members in np.array_split(idx, groups):
            hub = members[0]
            w[hub, members[1:]] = params.get("weight", EDGE_WEIGHTS["hub"])
            w[members[1:], hub] = params.get("weight", EDGE_WEIGHTS["hub"])
    else:
        k = int(params.get("neighbors", 5))
        beta = float(params.get("rewire", 0.05))
        if p < 2 * k + 1:
            raise ModelError(f"small-world graph needs p >= {2 * k + 1}, got {p}")
        rng = np.random.default_rng(seed)
        g = nx.watts_strogatz_graph(p, 2 * k, beta,
                                    seed=int(rng.integers(2**32 - 1)))
        w = nx.to_numpy_array(g, nodelist=range(p)) * params.get("weight", EDGE_WEIGHTS["small_world"])
    return SpatialPrecision(_scale_offdiag(w, float(params.get("row_sum_cap", ROW_SUM_CAP))), kind)


def derive_post_precision(omega1: SpatialPrecision, removal_fraction: float,
                          seed=None) -> SpatialPrecision:
    """Zero out a random ``removal_fraction`` of the undirected edges."""
    if not 0.0 <= removal_fraction <= 1.0:
        raise ModelError("removal_fraction must lie in [0, 1]")
    edges = sorted(omega1.edges())
    n_remove = _round_half_up(removal_fraction * len(edges))
    out = omega1.entries.copy()
    if n_remove:
        rng = np.random.default_rng(seed)
        drop = rng.choice(len(edges), size=n_remove, replace=False)
        for e in np.sort(drop):
            i, j = edges[e]
            out[i, j] = out[j, i] = 0.0
    return SpatialPrecision(out, omega1.kind)


def make_temporal_cov(kind: str, q: int, group: int) -> TemporalCov:
    if group not in (1, 2):
        raise ModelError(f"group must be 1 or 2, got {group!r}")
    if q < 2:
        raise ModelError(f"q must be at least 2, got {q}")
    lag = np.abs(np.subtract.outer(np.arange(q), np.arange(q)))
    if kind == "ar":
        m = (0.4 if group == 1 else 0.5) ** lag
    elif kind == "ma":
        width = 2 if group == 1 else 4
        m = np.where(lag <= width, 1.0 / (lag + 1.0), 0.0)
    else:
        raise ModelError(f"cannot generate temporal kind {kind!r}")
    return TemporalCov(m.astype(float), kind)


def cross_temporal_pattern(q: int) -> np.ndarray:
    """Diagonal +-1 matrix, -1 at 1-based positions congruent to 1, 3, 5 mod 15."""
    pos = np.arange(1, q + 1)
    return np.diag(np.where(np.isin(pos % 15, (1, 3, 5)), -1.0, 1.0))


def _flip_diag(p: int) -> np.ndarray:
    pos = np.arange(1, p + 1)
    return 1.0 - 2.0 * np.isin(pos % 7, (1, 3, 5))


def make_cross_cov(setting: str, gamma: float, sigma_s1: np.ndarray,
                   sigma_t1: np.ndarray, sigma_t2: np.ndarray,
                   p_t12: Optional[np.ndarray] = None) -> CrossCov:
    """Between-stage covariance for the simulation settings.

    ``"I"`` scales ``sigma_s1`` by ``gamma``; ``"II"`` flips signs by the
    checkerboard ``(-1)^(i+j)`` off the diagonal and by the mod-7 pattern on
    it; ``"diagonal"`` keeps only that flipped diagonal (sensitivity runs).
    """
    if abs(gamma) > 1:
        raise ModelError(f"|gamma| must be <= 1, got {gamma}")
    p = sigma_s1.shape[0]
    q = sigma_t1.shape[0]
    if setting == "I":
        s12 = gamma * sigma_s1
    elif setting in ("II", "diagonal"):
        pos = np.arange(1, p + 1)
        checker = (-1.0) ** np.add.outer(pos, pos)
        s12 = gamma * sigma_s1 * checker if setting == "II" else np.zeros((p, p))
        np.fill_diagonal(s12, gamma * np.diag(sigma_s1) * _flip_diag(p))
    else:
        raise ModelError(f"unknown setting {setting!r}")
    if p_t12 is None:
        p_t12 = cross_temporal_pattern(q)
    return CrossCov(np.array(s12, dtype=float), p_t12,
                    sqrt_psd(sigma_t1) @ p_t12 @ sqrt_psd(sigma_t2))


def rescale_cross(cross: CrossCov, c: float, sigma_t1, sigma_t2) -> CrossCov:
    """Same joint law, spatial block times ``c`` and temporal block over ``c``."""
    p_new = cross.p_t12 / c
    return CrossCov(c * cross.sigma_s12, p_new,
                    sqrt_psd(sigma_t1) @ p_new @ sqrt_psd(sigma_t2))


def build_model(spatial: str, temporal: str, p: int, q: int, setting: str = "I",
                gamma: float = 0.0, removal_fraction: float = 0.5,
                spatial_params: Optional[dict] = None, seed=None,
                check_psd: bool = True) -> GroundTruthModel:
    ss = np.random.SeedSequence(seed) if not isinstance(seed, np.random.SeedSequence) else seed
    graph_ss, removal_ss = ss.spawn(2)
    om1 = make_spatial_precision(spatial, p, spatial_params,
                                 np.random.default_rng(graph_ss))
    om2 = derive_post_precision(om1, removal_fraction,
                                np.random.default_rng(removal_ss))
    t1 = make_temporal_cov(temporal, q, 1)
    t2 = make_temporal_cov(temporal, q, 2)
    cross = make_cross_cov(setting, gamma, om1.covariance(), t1.entries, t2.entries)
    return GroundTruthModel(om1, om2, t1, t2, cross, check_psd=check_psd)


def true_partial_correlations(omega) -> np.ndarray:
    om = omega.entries if isinstance(omega, SpatialPrecision) else np.asarray(omega)
    d = np.diag(om)
    if np.any(d <= 0):
        raise ModelError("precision matrix has a nonpositive diagonal entry")
    s = 1.0 / np.sqrt(d)
    return om * np.outer(s, s)


def _h1_edges(om1: SpatialPrecision, om2: SpatialPrecision) -> set:
    diff = np.abs(true_partial_correlations(om1) - true_partial_correlations(om2))
    iu, ju = np.nonzero(np.triu(diff > 1e-12, 1))
    return set(zip(iu.tolist(), ju.tolist()))


def null_edge_set(model: GroundTruthModel) -> set:
    p = model.p
    return {(i, j) for i in range(p) for j in range(i + 1, p)} - model.h1_edges


class JointSampler:
    """Symmetric factor of a joint ``2pq`` covariance, reusable across draws."""

    def __init__(self, joint: np.ndarray, p: int, q: int):
        lam_min, self.factor = sym_factor(joint)
        if lam_min < PSD_TOL:
            raise ModelError(
                f"joint covariance is not PSD (min eigenvalue {lam_min:.3e})")
        self.p, self.q = p, q

    @classmethod
    def from_model(cls, model: GroundTruthModel) -> "JointSampler":
        return cls(model.joint_covariance(), model.p, model.q)

    def draw_arrays(self, n: int, seed=None, noise: NoiseKind = GAUSSIAN):
        """``(pre, post)`` arrays of shape ``(n, p, q)``; one seed stream per
        subject."""
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        dim = 2 * self.p * self.q
        z = np.empty((n, dim))
        for k, sub in enumerate(ss.spawn(n)):
            rng = np.random.default_rng(sub)
            if noise.kind == "gaussian":
                z[k] = rng.standard_normal(dim)
            else:
                z[k] = rng.standard_t(noise.df, dim) * np.sqrt((noise.df - 2) / noise.df)
        x = z @ self.factor
        half = self.p * self.q
        return (x[:, :half].reshape(n, self.p, self.q),
                x[:, half:].reshape(n, self.p, self.q))

    def draw(self, n: int, seed=None, noise: NoiseKind = GAUSSIAN) -> PairedDataset:
        return PairedDataset(*self.draw_arrays(n, seed, noise))


def sample_paired(model: GroundTruthModel, n: int, seed=None,
                  noise: NoiseKind = GAUSSIAN) -> PairedDataset:
    return JointSampler.from_model(model).draw(n, seed, noise)


def perturb_cross_block(model: GroundTruthModel, p_star: float, l_star: float,
                        seed=None):
    """Replace ``p_star`` percent of the cross block with N(0, nu^2) noise.

    ``nu`` is ``l_star`` times the median absolute nonzero cross entry.  The
    transposed block is mirrored.  Returns ``(joint, min_eigenvalue)``.
    """
    joint = model.joint_covariance()
    if p_star == 0:
        return joint, float(np.linalg.eigvalsh(joint)[0])
    if not 0 <= p_star <= 100 or l_star <= 0:
        raise ModelError("need 0 <= p_star <= 100 and l_star > 0")
    half = model.p * model.q
    block = joint[:half, half:].copy()
    nz = np.abs(block[block != 0])
    nu = l_star * (np.median(nz) if nz.size else 1.0)
    rng = np.random.default_rng(seed)
    count = _round_half_up(p_star / 100 * block.size)
    flat = rng.choice(block.size, size=count, replace=False)
    block.flat[flat] = rng.normal(0.0, nu, size=count)
    joint[:half, half:] = block
    joint[half:, :half] = block.T
    return joint, float(np.linalg.eigvalsh(joint)[0])
