"""Command-line entry point: ``simulate``, ``test`` and ``eval``."""
from __future__ import annotations

import argparse
import json
import logging
import math
import secrets
import sys
from pathlib import Path

import numpy as np

from pairgraph import datafiles
from pairgraph.config import ConfigError, experiments, load_raw
from pairgraph.datafiles import DataError, atomic_write, fmt
from pairgraph.harness import mode_label, prepare, run_experiment
from pairgraph.model import ModelError, true_partial_correlations
from pairgraph.pipeline import DEFAULT_GRID, KnownTemporal, PipelineError, run_pipeline

log = logging.getLogger("pairgraph")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
EDGE_COLUMNS = ("i", "j", "rho_pre", "rho_post", "w", "p_value", "reject")
EVAL_COLUMNS = ("setting", "gamma", "df", "p_star", "mode", "fdr_pct", "fdr_se_pct",
                "power_pct", "theta_mse_ratio", "n_failed")
KNOWN_FILES = ("sigma_t1.csv", "sigma_t2.csv", "p_t12.csv")


class CliError(Exception):
    def __init__(self, code: int, kind: str, msg: str):
        super().__init__(msg)
        self.code, self.kind = code, kind


def _single_config(path):
    cfgs = experiments(load_raw(path), replications=1)
    if len(cfgs) != 1:
        raise ConfigError("simulate needs a single configuration, not a sweep")
    return cfgs[0]


def _pairs_json(pairs):
    return [[i + 1, j + 1] for i, j in sorted(pairs)]


def cmd_simulate(config_path, out_dir) -> Path:
    """Write one simulated dataset, its ground truth and the true temporal
    matrices (for known-temporal runs)."""
    cfg = _single_config(config_path)
    setup = prepare(cfg)
    data_ss = setup.rep_seeds[0].spawn(1)[0]
    data = setup.sampler.draw(cfg.n, data_ss, cfg.noise)
    out_dir = Path(out_dir)
    man = datafiles.write_dataset(out_dir, data)
    m = setup.model
    iu = np.triu_indices(m.p, 1)
    theta = np.zeros((m.p, m.p))
    theta[iu] = setup.theta_upper
    theta = theta + theta.T
    truth = {
        "seed": cfg.seed,
        "p": m.p, "q": m.q, "n": cfg.n,
        "setting": cfg.setting, "gamma": cfg.gamma,
        "h1_edges": _pairs_json(setup.h1),
        "h0_edges": _pairs_json(setup.h0),
        "rho_pre": true_partial_correlations(m.omega_s1).tolist(),
        "rho_post": true_partial_correlations(m.omega_s2).tolist(),
        "theta": theta.tolist(),
    }
    atomic_write(out_dir / "truth.json", json.dumps(truth) + "\n")
    for name, mat in zip(KNOWN_FILES, (m.sigma_t1.entries, m.sigma_t2.entries,
                                       m.cross.p_t12)):
        datafiles.write_matrix(out_dir / "temporal" / name, mat)
    return man


def _load_known(dirpath, q) -> KnownTemporal:
    d = Path(dirpath)
    mats = [datafiles.read_matrix(d / f, (q, q), f) for f in KNOWN_FILES]
    return KnownTemporal(*mats)


def edge_report_csv(res) -> str:
    rep = res.report
    rho1, rho2 = res.stats[0].rho_hat, res.stats[1].rho_hat
    lines = [",".join(EDGE_COLUMNS)]
    p = rep.w.shape[0]
    for i in range(p):
        for j in range(i + 1, p):
            rej = int((i, j) in rep.rejected)
            lines.append(",".join([str(i + 1), str(j + 1), fmt(rho1[i, j]), fmt(rho2[i, j]),
                                   fmt(rep.w[i, j]), fmt(rep.p_values[i, j]), str(rej)]))
    return "\n".join(lines) + "\n"


def cmd_test(data_dir, out, alpha=0.01, known_dir=None, seed=None,
             correction="corrected", grid=(1, 40), bandwidths=None) -> dict:
    """Run the paired test on a dataset directory; writes the edge report and
    a JSON summary next to it (``<out>.summary.json``)."""
    if not 0 < alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    if seed is None:
        seed = secrets.randbits(64)
    data = datafiles.ingest_dataset(data_dir)
    known = _load_known(known_dir, data.q) if known_dir else None
    temporal = "known" if known else "estimated"
    res = run_pipeline(data, alpha, temporal, known, (correction,),
                       range(grid[0], grid[1] + 1), bandwidths, seed)
    mr = res[correction]
    out = Path(out)
    atomic_write(out, edge_report_csv(mr))
    summary = {
        "alpha": alpha,
        "temporal": temporal,
        "correction": correction,
        "b_hat": mr.b_hat,
        "bandwidths": list(res.bandwidths) if res.bandwidths else None,
        "threshold": mr.report.threshold,
        "n_rejected": len(mr.report.rejected),
        "n_pairs": data.p * (data.p - 1) // 2,
        "seed": seed,
    }
    atomic_write(out.with_name(out.name + ".summary.json"),
                 json.dumps(summary, indent=2) + "\n")
    return summary


def _cell(x, digits=4):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.{digits}f}"


def cmd_eval(config_path, out, reps=None, workers=1, seed=None) -> list:
    """Run every configured experiment and write one row per (point, mode)."""
    cfgs = experiments(load_raw(config_path), replications=reps, seed=seed)
    lines = [",".join(EVAL_COLUMNS)]
    rows = []
    for cfg in cfgs:
        result = run_experiment(cfg, workers)
        for corr, temp in cfg.modes:
            s = result.summaries[mode_label(corr, temp)]
            row = [cfg.setting, repr(cfg.gamma),
                   "" if cfg.noise.df is None else str(cfg.noise.df),
                   repr(cfg.perturbation[0]) if cfg.perturbation else "0",
                   mode_label(corr, temp), _cell(s.fdr_pct), _cell(s.fdr_se_pct),
                   _cell(s.power_pct), _cell(s.theta_mse_ratio, 6), str(s.n_failed)]
            lines.append(",".join(row))
            rows.append(dict(zip(EVAL_COLUMNS, row)))
    atomic_write(out, "\n".join(lines) + "\n")
    return rows


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pairgraph",
                                 description="Paired two-sample test of spatial networks.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write a simulated dataset and its ground truth")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)

    t = sub.add_parser("test", help="test every edge of a dataset")
    t.add_argument("--data", required=True, help="dataset directory or manifest")
    t.add_argument("--alpha", type=float, default=0.01)
    t.add_argument("--known-temporal", metavar="DIR",
                   help="directory with sigma_t1.csv, sigma_t2.csv, p_t12.csv")
    t.add_argument("--seed", type=int)
    t.add_argument("--correction", choices=("corrected", "uncorrected"), default="corrected")
    t.add_argument("--grid", type=int, nargs=2, metavar=("LO", "HI"),
                   default=(DEFAULT_GRID[0], DEFAULT_GRID[-1]))
    t.add_argument("--bandwidths", type=int, nargs="+")
    t.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="run simulation experiments")
    e.add_argument("--config", required=True)
    e.add_argument("--reps", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--out", required=True)
    return ap


def _dispatch(args):
    if args.command == "simulate":
        cmd_simulate(args.config, args.out)
    elif args.command == "test":
        lo, hi = args.grid
        if not 1 <= lo <= hi:
            raise ConfigError(f"bad grid bounds {lo} {hi}")
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        summary = cmd_test(args.data, args.out, args.alpha, args.known_temporal,
                           args.seed, args.correction, (lo, hi), args.bandwidths)
        print(json.dumps(summary))
    else:
        if args.reps is not None and args.reps < 1:
            raise ConfigError("--reps must be >= 1")
        cmd_eval(args.config, args.out, args.reps, max(1, args.workers), args.seed)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _dispatch(args)
    except ConfigError as e:
        err = CliError(EXIT_CONFIG, "config", str(e))
    except ModelError as e:
        err = CliError(EXIT_CONFIG, "model", str(e))
    except DataError as e:
        err = CliError(EXIT_DATA, "data", str(e))
    except PipelineError as e:
        err = CliError(EXIT_NUMERIC, f"pipeline.{e.stage}", str(e.cause))
    except (ArithmeticError, np.linalg.LinAlgError) as e:
        err = CliError(EXIT_NUMERIC, "numeric", str(e))
    else:
        return EXIT_OK
    msg = " ".join(str(err).split())
    print(f"error code={err.code} kind={err.kind}: {msg}", file=sys.stderr)
    return err.code


if __name__ == "__main__":
    sys.exit(main())
