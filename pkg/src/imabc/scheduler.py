"""Deterministic evaluation of candidate points, optionally in a process pool.

Every model call gets its own random stream keyed by
``(master seed, point index, evaluation number, cost rank)``, so a point's
simulated targets do not depend on which worker ran it or in what order.
Targets are simulated cheapest group first and evaluation stops at the first
group that falls outside the current tolerances.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .distributions import PriorSet
from .targets import TargetSet

log = logging.getLogger(__name__)

# first element of every spawn key; the engine's own streams use 0
EVAL_STREAM = 1
ENGINE_STREAM = 0


class SimulationModel(Protocol):
    priors: PriorSet

    def simulate_targets(self, theta: np.ndarray, target_ids: Sequence[str],
                         rng: np.random.Generator) -> np.ndarray: ...


def eval_rng(seed: int, index: int, eval_no: int, rank: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(EVAL_STREAM, index, eval_no, rank))
    return np.random.Generator(np.random.PCG64(ss))


def engine_rng(seed: int, iteration: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(ENGINE_STREAM, iteration))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass
class Evaluation:
    """Outcome of simulating one point."""

    sim: np.ndarray
    accepted: bool
    ranks: list[int] = field(default_factory=list)
    error: str | None = None


def evaluate_point(model: SimulationModel, targets: TargetSet, theta, alphas, seed: int,
                   index: int, eval_no: int) -> Evaluation:
    """Simulate targets group by group, stopping at the first rejection."""
    sim = np.full(len(targets), np.nan)
    out = Evaluation(sim, False)
    for rank, idx in targets.groups():
        rng = eval_rng(seed, index, eval_no, rank)
        try:
            vals = np.asarray(model.simulate_targets(theta, [targets.ids[j] for j in idx], rng),
                              dtype=float)
            if vals.shape != (len(idx),):
                raise ValueError(f"model returned shape {vals.shape} for {len(idx)} targets")
        except Exception as exc:  # model failures reject the point, not the run
            out.error = f"{type(exc).__name__}: {exc}"
            return out
        sim[idx] = vals
        out.ranks.append(rank)
        if not targets.accept_matrix(sim, alphas)[0, idx].all():
            return out
    out.accepted = True
    return out


# ---------------------------------------------------------------------------
# worker pool
# ---------------------------------------------------------------------------

_WORKER: dict = {}


def _init_worker(model, targets, seed):
    _WORKER.update(model=model, targets=targets, seed=seed)


def _eval_chunk(jobs, alphas):
    m, t, s = _WORKER["model"], _WORKER["targets"], _WORKER["seed"]
    return [evaluate_point(m, t, theta, alphas, s, i, e) for i, e, theta in jobs]


class Evaluator:
    """Evaluates batches of ``(index, eval_no, theta)`` jobs in input order.

    With ``workers > 1`` jobs are split into contiguous chunks and sent to a
    process pool that lives until :meth:`close`.
    """

    def __init__(self, model: SimulationModel, targets: TargetSet, seed: int, workers: int = 1):
        if workers < 1:
            raise ValueError("workers must be >= 1")
        if np.any(targets.cost_rank < 0):
            raise ValueError("cost ranks must be nonnegative")
        self.model = model
        self.targets = targets
        self.seed = int(seed)
        self.workers = int(workers)
        self._pool: ProcessPoolExecutor | None = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def _get_pool(self) -> ProcessPoolExecutor:
        if self._pool is None:
            self._pool = ProcessPoolExecutor(self.workers, initializer=_init_worker,
                                             initargs=(self.model, self.targets, self.seed))
        return self._pool

    def __call__(self, jobs: list[tuple[int, int, np.ndarray]], alphas) -> list[Evaluation]:
        alphas = np.asarray(alphas, dtype=float)
        if self.workers == 1 or len(jobs) < 2:
            return [evaluate_point(self.model, self.targets, theta, alphas, self.seed, i, e)
                    for i, e, theta in jobs]
        n_chunks = min(len(jobs), 4 * self.workers)
        bounds = np.linspace(0, len(jobs), n_chunks + 1).astype(int)
        chunks = [jobs[a:b] for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        pool = self._get_pool()
        futures = [pool.submit(_eval_chunk, c, alphas) for c in chunks]
        out: list[Evaluation] = []
        for f in futures:
            out.extend(f.result())
        return out
