"""End-to-end paired test: whitening, nodewise fits, tuning, statistics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from pairgraph import mtest
from pairgraph.edgestats import DegenerateFitError, edge_statistics
from pairgraph.model import PairedDataset
from pairgraph.nodewise import nodewise_path, residuals, tune_b
from pairgraph.varcorr import VarianceError, VarianceEstimates, variance_estimates
from pairgraph.whiten import WhitenedDataset, estimate_p12, whiten_estimated, whiten_known

CORRECTIONS = ("corrected", "uncorrected")
DEFAULT_GRID = tuple(range(1, 41))


class PipelineError(RuntimeError):
    """A numerical failure inside the pipeline, tagged with its stage."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class KnownTemporal:
    sigma_t1: np.ndarray
    sigma_t2: np.ndarray
    p_t12: np.ndarray


@dataclass
class ModeResult:
    correction: str
    b_hat: int
    criteria: dict
    stats: tuple  # (EdgeStatistics, EdgeStatistics)
    variance: VarianceEstimates
    report: mtest.TestReport


@dataclass
class PipelineResult:
    whitened: WhitenedDataset
    p12: np.ndarray
    bandwidths: Optional[tuple]
    results: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)

    def __getitem__(self, correction) -> ModeResult:
        return self.results[correction]


def _variance_mode(correction: str, temporal: str) -> str:
    if correction == "uncorrected":
        return "uncorrected"
    return "known_temporal" if temporal == "known" else "estimated_temporal"


class _Evaluator:
    """Caches per-``b`` statistics so both correction modes share the fits."""

    def __init__(self, wd: WhitenedDataset, p12, temporal: str, grid):
        self.wd = wd
        self.p12 = p12
        self.temporal = temporal
        self.centering = "per_column" if temporal == "known" else "pooled"
        self.fits = [nodewise_path(wd.group(t), grid, group=t) for t in (1, 2)]
        self._stats = {}

    def stats(self, b):
        if b not in self._stats:
            res = [residuals(self.wd.group(t), self.fits[t - 1][b], self.centering)
                   for t in (1, 2)]
            est = [edge_statistics(res[t], self.fits[t][b]) for t in (0, 1)]
            self._stats[b] = (res, est)
        return self._stats[b]

    def variance(self, b, correction, check=True):
        res, est = self.stats(b)
        return variance_estimates(
            self.fits[0][b], self.fits[1][b], res[0], res[1],
            est[0].r_hat, est[1].r_hat, self.p12,
            _variance_mode(correction, self.temporal), check)

    def w(self, b, correction):
        _, est = self.stats(b)
        var = self.variance(b, correction)
        return mtest.test_stats(est[0].rho_hat, est[1].rho_hat, var.theta_corrected)

    def w_or_none(self, b, correction):
        try:
            return self.w(b, correction)
        except (DegenerateFitError, VarianceError, ValueError):
            return None


def run_pipeline(dataset: PairedDataset, alpha: float = 0.01,
                 temporal: str = "estimated",
                 known: Optional[KnownTemporal] = None,
                 corrections: Sequence[str] = CORRECTIONS,
                 grid: Sequence[int] = DEFAULT_GRID,
                 bandwidths: Optional[Sequence[int]] = None,
                 seed=None, keep_going: bool = False) -> PipelineResult:
    """Run the paired test on one dataset.

    ``temporal="known"`` whitens with the supplied ``known`` matrices and
    uses their ``p_t12``; ``"estimated"`` bands the pooled temporal
    covariance per stage and estimates the cross matrix from the data.
    Each correction mode tunes its own penalty level over ``grid``.
    With ``keep_going`` a failing correction mode is stored in ``errors``
    instead of raising, so the other mode still runs.
    """
    if temporal not in ("known", "estimated"):
        raise ValueError(f"unknown temporal mode {temporal!r}")
    if temporal == "known" and known is None:
        raise ValueError("known temporal mode needs the true matrices")
    try:
        if temporal == "known":
            wd = whiten_known(dataset, known.sigma_t1, known.sigma_t2)
            p12 = np.asarray(known.p_t12, dtype=float)
            bws = None
        else:
            wd, ests = whiten_estimated(dataset, bandwidths, seed)
            p12 = estimate_p12(wd)
            bws = (ests[0].bandwidth, ests[1].bandwidth)
    except (ValueError, np.linalg.LinAlgError) as e:
        raise PipelineError("whiten", e) from e

    grid = sorted(grid)
    ev = _Evaluator(wd, p12, temporal, grid)
    out = PipelineResult(wd, p12, bws)
    p = dataset.p
    for corr in corrections:
        if corr not in CORRECTIONS:
            raise ValueError(f"unknown correction {corr!r}")
        if len(grid) == 1:
            b_hat, crit = grid[0], {}
        else:
            b_hat, crit = tune_b(lambda b: ev.w_or_none(b, corr), grid)
        try:
            try:
                _, est = ev.stats(b_hat)
                var = ev.variance(b_hat, corr)
            except DegenerateFitError as e:
                raise PipelineError("edgestats", e) from e
            except VarianceError as e:
                raise PipelineError("varcorr", e) from e
        except PipelineError as e:
            if not keep_going:
                raise
            out.errors[corr] = e
            continue
        w = mtest.test_stats(est[0].rho_hat, est[1].rho_hat, var.theta_corrected)
        thr = mtest.threshold(w, alpha, p)
        report = mtest.finalize_report(
            w, thr, alpha, {"temporal": temporal, "correction": corr, "b_hat": b_hat})
        out.results[corr] = ModeResult(corr, b_hat, crit, tuple(est), var, report)
    return out
