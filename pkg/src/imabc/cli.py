"""Command line entry points: calibrate, summarize, resample, predict."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, RunConfig, build_model, load_config, parse_config
from .engine import (CheckpointError, EmptyPosteriorError, load_checkpoint, resample_posterior,
                     run)
from .summary import density_grid, posterior_table, weighted_quantile

log = logging.getLogger("imabc")

# spawn-key prefixes for subcommands with their own randomness
RESAMPLE_STREAM = 2
PREDICT_STREAM = 3


class CLIError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------

def _config_copy(cfg: RunConfig) -> dict:
    # worker count and output location do not affect results
    d = cfg.to_dict()
    d.pop("workers")
    d.pop("output_dir")
    return d


def calibrate(config_path, resume=None, workers=None, seed=None, out=None) -> int:
    cfg = load_config(config_path)
    if seed is not None:
        cfg.seed = int(seed)
    if workers is not None:
        cfg.workers = int(workers)
    out_dir = Path(out or cfg.output_dir)
    model, targets = build_model(cfg)
    engine_cfg = cfg.engine_config()
    state = None
    if resume is not None:
        if not Path(resume).is_file():
            raise CLIError(f"checkpoint file not found: {resume}")
        state = load_checkpoint(resume, targets, model.priors)
    out_dir.mkdir(parents=True, exist_ok=True)
    io.write_json(out_dir / io.CONFIG_COPY, _config_copy(cfg))
    t0 = time.perf_counter()
    result = run(engine_cfg, model, targets, workers=cfg.workers,
                 checkpoint=out_dir / io.CHECKPOINT_FILE, state=state)
    log.info("calibration finished in %.1f s", time.perf_counter() - t0)
    io.write_accepted(out_dir / io.ACCEPTED_FILE, result)
    io.write_history(out_dir / io.HISTORY_FILE, result)
    io.write_json(out_dir / io.REPORT_FILE, io.report_dict(result, {"model": cfg.model,
                                                                    "seed": cfg.seed}))
    status = "converged" if result.converged else "NOT converged"
    print(f"{status}: {result.iterations} iterations, {result.n_accepted} accepted, "
          f"ESS {result.ess if result.ess is None else round(result.ess, 1)}; outputs in {out_dir}")
    for msg in result.messages:
        print(f"note: {msg}")
    return 0


# ---------------------------------------------------------------------------
# result helpers
# ---------------------------------------------------------------------------

def _result_paths(result_path) -> tuple[Path, Path]:
    p = Path(result_path)
    table = p / io.ACCEPTED_FILE if p.is_dir() else p
    if not table.is_file():
        raise CLIError(f"accepted-points table not found: {table}")
    return table, table.parent


def _load_result(result_path) -> tuple[dict, Path]:
    table, run_dir = _result_paths(result_path)
    res = io.read_accepted(table)
    if res["weight"].size == 0 or not res["weight"].sum() > 0:
        raise EmptyPosteriorError(f"{table}: no accepted points with positive weight")
    return res, run_dir


def _run_config(run_dir: Path, config_path=None) -> RunConfig:
    if config_path is not None:
        return load_config(config_path)
    copy = run_dir / io.CONFIG_COPY
    if not copy.is_file():
        raise CLIError(f"no run configuration found next to the results ({copy}); pass --config")
    return parse_config(io.read_json(copy), run_dir)


def _stream(seed: int, *key) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def _default_seed(run_dir: Path, seed):
    if seed is not None:
        return int(seed)
    copy = run_dir / io.CONFIG_COPY
    if copy.is_file():
        return int(io.read_json(copy)["seed"])
    raise CLIError("--seed is required when the run configuration is not available")


# ---------------------------------------------------------------------------
# summarize / resample / predict
# ---------------------------------------------------------------------------

def summarize(result_path, pairs=(), bins=40, out=None) -> int:
    res, run_dir = _load_result(result_path)
    rows = posterior_table(res["names"], res["theta"], res["weight"])
    out = Path(out) if out else run_dir / "posterior_summary.csv"
    io.write_dicts(out, rows, ["parameter", "mean", "sd", "p2.5", "p97.5"])
    for r in rows:
        print(f"{r['parameter']:>14s}  mean {r['mean']:.6g}  95% ({r['p2.5']:.6g}, {r['p97.5']:.6g})")
    if pairs:
        grid_rows = []
        for pair in pairs:
            a, _, b = pair.partition(":")
            if a not in res["names"] or b not in res["names"]:
                raise CLIError(f"unknown parameter pair {pair!r}")
            ia, ib = res["names"].index(a), res["names"].index(b)
            for g in density_grid(res["theta"][:, ia], res["theta"][:, ib], res["weight"], bins):
                grid_rows.append({"x_param": a, "y_param": b, **g})
        io.write_dicts(out.with_name("density_grids.csv"), grid_rows,
                       ["x_param", "y_param", "x", "y", "density"])
    print(f"summary written to {out}")
    return 0


def resample(result_path, n, seed=None, out=None) -> int:
    """Weighted draws with replacement; seed defaults to the run's seed."""
    res, run_dir = _load_result(result_path)
    seed = _default_seed(run_dir, seed)
    draws = _resample(res, n, seed)
    out = Path(out) if out else run_dir / "posterior_draws.csv"
    io.write_rows(out, res["names"], draws.tolist())
    print(f"{n} draws written to {out}")
    return 0


def _resample(res, n, seed) -> np.ndarray:
    from .engine import CalibrationResult

    view = CalibrationResult(res["names"], res["target_ids"], res["theta"], res["sim"], res["rho"],
                             res["dist"], res["weight"], np.array([]), [], 0, 0, None, True, True,
                             [], [], {})
    return resample_posterior(view, int(n), _stream(seed, RESAMPLE_STREAM))


def predict(result_path, n_draws, config_path=None, seed=None, out=None, target_ids=None) -> int:
    """Simulate targets at posterior draws; seed defaults to the run's seed."""
    res, run_dir = _load_result(result_path)
    cfg = _run_config(run_dir, config_path)
    seed = _default_seed(run_dir, seed)
    model, targets = build_model(cfg)
    if list(model.priors.names) != res["names"]:
        raise CLIError("result parameters do not match the configured model")
    if target_ids:
        missing = [t for t in target_ids if t not in targets.ids]
        if missing:
            raise CLIError(f"unknown target ids: {missing}")
        targets = targets.subset([targets.ids.index(t) for t in target_ids])
    draws = _resample(res, n_draws, seed)
    sims = np.empty((draws.shape[0], len(targets)))
    for k, theta in enumerate(draws):
        sims[k] = model.simulate_targets(theta, targets.ids, _stream(seed, PREDICT_STREAM, k))
    rows = []
    for t, (lo, hi), col in zip(targets, targets.intervals(targets.alpha_final), sims.T):
        col = col[~np.isnan(col)]
        if col.size:
            mean, q = float(col.mean()), weighted_quantile(col, np.ones(col.size), [0.025, 0.975])
        else:
            mean, q = float("nan"), [float("nan")] * 2
        rows.append({"target": t.id, "observed": t.observed, "tol_lower": lo, "tol_upper": hi,
                     "mean": mean, "p2.5": float(q[0]), "p97.5": float(q[1])})
    out = Path(out) if out else run_dir / "predicted_targets.csv"
    io.write_dicts(out, rows, ["target", "observed", "tol_lower", "tol_upper", "mean", "p2.5",
                               "p97.5"])
    io.write_rows(out.with_name(out.stem + "_draws.csv"), list(targets.ids), sims.tolist())
    for r in rows:
        print(f"{r['target']:>28s}  obs {r['observed']:<8g} pred {r['mean']:.4g} "
              f"({r['p2.5']:.4g}, {r['p97.5']:.4g})")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="imabc", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="run the IMABC engine")
    c.add_argument("--config", required=True, help="run configuration (JSON)")
    c.add_argument("--resume", help="checkpoint to resume from")
    c.add_argument("--workers", type=int, help="evaluation processes (default: config)")
    c.add_argument("--seed", type=int, help="override the config seed")
    c.add_argument("--out", help="output directory (default: config output_dir)")

    s = sub.add_parser("summarize", help="weighted posterior means and 95%% intervals")
    s.add_argument("result", help="run directory or accepted-points table")
    s.add_argument("--pairs", nargs="*", default=[], metavar="A:B",
                   help="parameter pairs for bivariate density grids")
    s.add_argument("--bins", type=int, default=40)
    s.add_argument("--out", help="summary table path")

    r = sub.add_parser("resample", help="draw from the weighted posterior")
    r.add_argument("result")
    r.add_argument("-n", "--n", type=int, required=True, help="number of draws")
    r.add_argument("--seed", type=int, help="default: the run's seed")
    r.add_argument("--out")

    p = sub.add_parser("predict", help="posterior predictive target table")
    p.add_argument("result")
    p.add_argument("--n-draws", type=int, default=100)
    p.add_argument("--config", help="default: the run's saved configuration")
    p.add_argument("--seed", type=int, help="default: the run's seed")
    p.add_argument("--targets", nargs="*", metavar="ID", help="subset of target ids")
    p.add_argument("--out")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "calibrate":
            return calibrate(args.config, args.resume, args.workers, args.seed, args.out)
        if args.command == "summarize":
            return summarize(args.result, args.pairs, args.bins, args.out)
        if args.command == "resample":
            return resample(args.result, args.n, args.seed, args.out)
        return predict(args.result, args.n_draws, args.config, args.seed, args.out, args.targets)
    except (ConfigError, CLIError, CheckpointError, EmptyPosteriorError, FileNotFoundError) as exc:
        print(f"imabc: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
