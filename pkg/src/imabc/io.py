"""Delimited output tables.

Floats are written with ``repr`` so every table parses back to the exact
in-memory values; missing values are written as ``nan``.
"""
from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from .engine import CalibrationResult


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


def write_rows(path, header: list[str], rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    os.replace(tmp, path)


def write_dicts(path, rows: list[dict], header: list[str] | None = None) -> None:
    header = header or (list(rows[0]) if rows else [])
    write_rows(path, header, ([r[h] for h in header] for r in rows))


def read_rows(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# calibration outputs
# ---------------------------------------------------------------------------

ACCEPTED_FILE = "accepted.csv"
HISTORY_FILE = "tolerance_history.csv"
REPORT_FILE = "report.json"
CHECKPOINT_FILE = "checkpoint.json"
CONFIG_COPY = "run_config.json"


def accepted_header(result: CalibrationResult) -> list[str]:
    return (list(result.param_names) + [f"S:{t}" for t in result.target_ids]
            + ["rho", "dist", "weight"])


def write_accepted(path, result: CalibrationResult) -> None:
    rows = (list(result.theta[i]) + list(result.sim[i])
            + [result.rho[i], result.dist[i], result.weights[i]] for i in range(result.n_accepted))
    write_rows(path, accepted_header(result), rows)


def read_accepted(path) -> dict:
    """Accepted-points table as arrays: names, target_ids, theta, sim, rho, dist, weight."""
    header, rows = read_rows(path)
    tcols = [i for i, h in enumerate(header) if h.startswith("S:")]
    if not tcols or header[-3:] != ["rho", "dist", "weight"]:
        raise ValueError(f"{path}: not an accepted-points table")
    p = tcols[0]
    data = np.array([[float(v) for v in r] for r in rows], dtype=float).reshape(-1, len(header))
    return {"names": header[:p], "target_ids": [header[i][2:] for i in tcols],
            "theta": data[:, :p], "sim": data[:, tcols], "rho": data[:, -3],
            "dist": data[:, -2], "weight": data[:, -1]}


def write_history(path, result: CalibrationResult) -> None:
    keys = ["iteration", "n_total", "n_accepted", "n_new", "n_new_accepted", "acceptance_rate",
            "centers_demoted", "pruned", "ess"]
    header = keys + [f"alpha:{t}" for t in result.target_ids]
    rows = ([h[k] for k in keys] + list(h["alphas"]) for h in result.history)
    write_rows(path, header, rows)


def report_dict(result: CalibrationResult, extra: dict | None = None) -> dict:
    out = {"iterations": result.iterations, "n_total": result.n_total,
           "n_accepted": result.n_accepted, "ess": result.ess,
           "converged": result.converged, "at_final_tolerance": result.at_final_tolerance,
           "alphas": dict(zip(result.target_ids, result.alphas.tolist())),
           "messages": result.messages, "n_model_failures": len(result.failures),
           "failures": result.failures[:100],
           "group_evaluations": {str(k): v for k, v in sorted(result.group_calls.items())}}
    out.update(extra or {})
    return out
