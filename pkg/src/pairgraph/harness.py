"""Simulation experiments: empirical FDR and power, Monte-Carlo variance
oracle and the variance-estimation error metric."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from pairgraph.model import (GAUSSIAN, GroundTruthModel, JointSampler, NoiseKind,
                             build_model, null_edge_set, perturb_cross_block)
from pairgraph.pipeline import CORRECTIONS, KnownTemporal, run_pipeline
from pairgraph.varcorr import theta_true

TEMPORAL_MODES = ("known", "estimated")
DEFAULT_MODES = (("corrected", "estimated"), ("uncorrected", "estimated"))


def mode_label(correction: str, temporal: str) -> str:
    return f"{correction}/{temporal}"


@dataclass
class ExperimentConfig:
    p: int = 40
    q: int = 25
    n: int = 15
    spatial: str = "banded"
    temporal: str = "ma"
    setting: str = "I"
    gamma: float = 0.0
    noise: NoiseKind = GAUSSIAN
    perturbation: Optional[tuple] = None  # (p_star, l_star)
    alpha: float = 0.01
    replications: int = 50
    seed: int = 0
    modes: tuple = DEFAULT_MODES
    grid: tuple = (1, 40)
    removal_fraction: float = 0.5
    spatial_params: Optional[dict] = None

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        self.modes = tuple(tuple(m) for m in self.modes)
        if not self.modes:
            raise ValueError("no modes requested")
        for corr, temp in self.modes:
            if corr not in CORRECTIONS or temp not in TEMPORAL_MODES:
                raise ValueError(f"unknown mode ({corr!r}, {temp!r})")
        lo, hi = self.grid
        if not 1 <= lo <= hi:
            raise ValueError(f"bad tuning grid bounds {self.grid}")
        if self.perturbation is not None:
            self.perturbation = tuple(self.perturbation)

    @property
    def labels(self) -> list:
        return [mode_label(c, t) for c, t in self.modes]


@dataclass
class ModeOutcome:
    fdp: Optional[float] = None
    power: Optional[float] = None
    n_rejected: int = 0
    b_hat: Optional[int] = None
    threshold: Optional[float] = None
    theta_hat: Optional[np.ndarray] = None  # upper triangle, row-major
    error: Optional[str] = None


@dataclass
class ReplicationRecord:
    index: int
    empty_h1: bool
    outcomes: dict


@dataclass
class ModeSummary:
    fdr_pct: float
    fdr_se_pct: Optional[float]
    power_pct: Optional[float]
    theta_mse_ratio: Optional[float]
    n_ok: int
    n_failed: int


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    summaries: dict
    records: list = field(default_factory=list)


@dataclass
class _Setup:
    model: GroundTruthModel
    sampler: JointSampler
    h0: set
    h1: set
    theta_upper: np.ndarray
    rep_seeds: list


def _seeds(config: ExperimentConfig):
    root = np.random.SeedSequence(config.seed)
    model_ss, perturb_ss, reps_ss = root.spawn(3)
    return model_ss, perturb_ss, reps_ss.spawn(config.replications)


def prepare(config: ExperimentConfig) -> _Setup:
    """Ground truth and sampler shared by every replication."""
    model_ss, perturb_ss, rep_seeds = _seeds(config)
    model = build_model(config.spatial, config.temporal, config.p, config.q,
                        config.setting, config.gamma, config.removal_fraction,
                        config.spatial_params, seed=model_ss)
    if config.perturbation is None:
        sampler = JointSampler.from_model(model)
    else:
        p_star, l_star = config.perturbation
        joint, _ = perturb_cross_block(model, p_star, l_star,
                                       np.random.default_rng(perturb_ss))
        sampler = JointSampler(joint, model.p, model.q)
    iu = np.triu_indices(model.p, 1)
    th = theta_true(model, config.n, config.q)[iu]
    return _Setup(model, sampler, null_edge_set(model), set(model.h1_edges), th,
                  rep_seeds)


def run_replication(config: ExperimentConfig, rep_seed, setup: Optional[_Setup] = None,
                    index: int = 0) -> ReplicationRecord:
    """One simulated dataset pushed through every requested mode."""
    if setup is None:
        setup = prepare(config)
    ss = rep_seed if isinstance(rep_seed, np.random.SeedSequence) \
        else np.random.SeedSequence(rep_seed)
    data_ss, split_ss = ss.spawn(2)
    data = setup.sampler.draw(config.n, data_ss, config.noise)
    m = setup.model
    known = KnownTemporal(m.sigma_t1.entries, m.sigma_t2.entries, m.cross.p_t12)
    grid = range(config.grid[0], config.grid[1] + 1)
    iu = np.triu_indices(m.p, 1)
    outcomes = {}
    for temp in TEMPORAL_MODES:
        corrs = [c for c, t in config.modes if t == temp]
        if not corrs:
            continue
        res = run_pipeline(data, config.alpha, temp, known, corrs, grid,
                           seed=split_ss, keep_going=True)
        for corr in corrs:
            label = mode_label(corr, temp)
            if corr in res.errors:
                outcomes[label] = ModeOutcome(error=str(res.errors[corr]))
                continue
            mr = res[corr]
            rej = mr.report.rejected
            fdp = len(rej & setup.h0) / max(len(rej), 1)
            power = len(rej & setup.h1) / len(setup.h1) if setup.h1 else None
            outcomes[label] = ModeOutcome(
                fdp, power, len(rej), mr.b_hat, mr.report.threshold,
                mr.variance.theta_corrected[iu].copy())
    return ReplicationRecord(index, not setup.h1, outcomes)


def theta_mse_ratio(theta_hat_records, theta_true_) -> float:
    """Per-pair MSE across replications summed over pairs, over the summed
    squared truth.  Records may be ``p x p`` matrices or upper-triangle
    vectors."""
    recs = [np.asarray(r, dtype=float) for r in theta_hat_records]
    if len(recs) < 2:
        raise ValueError("need at least two replications")
    tt = np.asarray(theta_true_, dtype=float)
    if tt.ndim == 2:
        iu = np.triu_indices(tt.shape[0], 1)
        tt = tt[iu]
        recs = [r[iu] if r.ndim == 2 else r for r in recs]
    err = np.mean([(r - tt) ** 2 for r in recs], axis=0)
    return float(err.sum() / np.sum(tt**2))


def _summarize(records, label, theta_upper) -> ModeSummary:
    outs = [r.outcomes[label] for r in records]
    ok = [o for o in outs if o.error is None]
    if not ok:
        return ModeSummary(math.nan, None, None, None, 0, len(outs))
    fdp = np.array([o.fdp for o in ok])
    se = float(np.std(fdp, ddof=1) * 100) if len(ok) > 1 else None
    pw = [o.power for o in ok if o.power is not None]
    power = float(np.mean(pw) * 100) if pw else None
    mse = theta_mse_ratio([o.theta_hat for o in ok], theta_upper) if len(ok) > 1 else None
    return ModeSummary(float(fdp.mean() * 100), se, power, mse, len(ok),
                       len(outs) - len(ok))


def run_experiment(config: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    """All replications of one configuration, aggregated per mode.

    Replications draw from independent seed streams, so the result does not
    depend on ``workers``; aggregation follows replication order.
    """
    setup = prepare(config)
    jobs = list(enumerate(setup.rep_seeds))

    def one(job):
        i, ss = job
        return run_replication(config, ss, setup, i)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            records = list(ex.map(one, jobs))
    else:
        records = [one(j) for j in jobs]
    records.sort(key=lambda r: r.index)
    summaries = {lab: _summarize(records, lab, setup.theta_upper) for lab in config.labels}
    return ExperimentResult(config, summaries, records)


def mc_theta_oracle(model: GroundTruthModel, n: int, q: int, draws: int = 10**5,
                    seed=None, chunk: int = 20_000) -> np.ndarray:
    """Empirical variance of the oracle difference ``U1 - U2`` per pair.

    Whitened data are drawn from the exact joint law, true residuals are
    ``diag(1/omega_ii) Omega Y`` per stage, and each draw averages ``n``
    subjects' standardized residual products.
    """
    if draws < 10**4:
        raise ValueError("draws must be at least 1e4")
    if q != model.q:
        raise ValueError(f"model has q={model.q}, got {q}")
    p = model.p
    sampler = JointSampler(model.whitened_joint_covariance(), p, q)
    om = [model.omega_s1.entries, model.omega_s2.entries]
    # eps = A Y with A = diag(1/omega_ii) Omega; standardized by sqrt(r_ii)
    # = 1/sqrt(omega_ii), so eps / sqrt(r_ii) = diag(omega_ii^{-1/2}) Omega Y
    mats = [o / np.sqrt(np.diag(o))[:, None] for o in om]
    ss = np.random.SeedSequence(seed)
    total, s1, s2 = 0, np.zeros((p, p)), np.zeros((p, p))
    per = max(1, chunk // n)
    for sub in ss.spawn(math.ceil(draws / per)):
        m = min(per, draws - total)
        x = np.random.default_rng(sub).standard_normal((m * n, 2 * p * q)) @ sampler.factor
        pre = x[:, :p * q].reshape(-1, p, q)
        post = x[:, p * q:].reshape(-1, p, q)
        e1 = np.einsum("ab,kbl->kal", mats[0], pre)
        e2 = np.einsum("ab,kbl->kal", mats[1], post)
        z = (np.einsum("kil,kjl->kij", e1, e1) - np.einsum("kil,kjl->kij", e2, e2))
        u = z.reshape(m, n, p, p).sum(axis=1) / (n * q)
        s1 += u.sum(axis=0)
        s2 += np.einsum("kij,kij->ij", u, u)
        total += m
        if total >= draws:
            break
    mean = s1 / total
    return (s2 - total * mean**2) / (total - 1)
