"""Incremental mixture approximate Bayesian computation.

The engine keeps every point it has ever drawn. Points are accepted when all
simulated targets fall inside the current tolerance intervals. Each iteration
centres normal kernels on the best-fitting accepted points, samples from them,
and then tightens the tolerances toward their final levels. Once every
tolerance is final the accepted points are weighted by prior over mixture
density, and the run stops when the effective sample size is large enough.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .distributions import GaussianKernel, PriorSet, latin_hypercube
from .scheduler import Evaluation, Evaluator, SimulationModel, engine_rng
from .targets import TargetSet

log = logging.getLogger(__name__)

REJECTED, ACCEPTED, PRUNED = 0, 1, 2
STATUS_NAMES = {REJECTED: "rejected", ACCEPTED: "accepted", PRUNED: "pruned"}
CHECKPOINT_FORMAT = "imabc-checkpoint"
CHECKPOINT_VERSION = 1


class EmptyFrontierError(RuntimeError):
    """No accepted points to centre kernels on."""


class EmptyPosteriorError(RuntimeError):
    """No positive importance weights."""


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class EngineConfig:
    seed: int
    n_init: int = 21_000
    n_centers: int = 10
    batch_per_center: int = 1_000
    n_post: int = 5_000
    max_iterations: int = 100
    # neighbours used for local kernel covariances; None means 25p
    n_cov_points: int | None = None

    def __post_init__(self):
        for name in ("n_init", "n_centers", "batch_per_center", "n_post"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.n_cov_points is not None and self.n_cov_points < 2:
            raise ValueError("n_cov_points must be >= 2")

    def cov_points(self, p: int) -> int:
        return 25 * p if self.n_cov_points is None else max(int(self.n_cov_points), 5 * p)

    @property
    def per_iteration(self) -> int:
        return self.n_centers * self.batch_per_center


@dataclass
class Point:
    """Read-only view of one stored point."""

    index: int
    theta: np.ndarray
    sim_targets: np.ndarray
    rho_per_target: np.ndarray
    rho_min: float
    dist: float
    status: str
    origin: tuple[int, int] | None
    weight: float


@dataclass
class EngineState:
    config: EngineConfig
    param_names: list[str]
    target_ids: list[str]
    theta: np.ndarray
    sim: np.ndarray
    status: np.ndarray
    origin_iter: np.ndarray
    origin_center: np.ndarray
    n_evals: np.ndarray
    alphas: np.ndarray
    iteration: int = 0
    n_total: int = 0
    kernels: list[GaussianKernel] = field(default_factory=list)
    history: list[dict] = field(default_factory=list)
    group_calls: dict[int, int] = field(default_factory=dict)
    failures: list[dict] = field(default_factory=list)
    messages: list[str] = field(default_factory=list)
    weights: np.ndarray | None = None
    ess: float | None = None
    converged: bool = False
    pvals: np.ndarray | None = field(default=None, repr=False)
    # counts from the latest proposal round, not checkpointed
    last_round: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.pvals is None:
            self.pvals = np.empty((0, len(self.target_ids)))

    @property
    def n_points(self) -> int:
        return self.theta.shape[0]

    @property
    def accepted(self) -> np.ndarray:
        return np.flatnonzero(self.status == ACCEPTED)

    @property
    def n_accepted(self) -> int:
        return int((self.status == ACCEPTED).sum())

    def rho_min(self, idx=None) -> np.ndarray:
        p = self.pvals if idx is None else self.pvals[idx]
        return p.min(axis=1)

    def point(self, i: int, targets: TargetSet) -> Point:
        d = float(targets.discrepancy(self.sim[i][None, :], self.alphas)[0])
        origin = None if self.origin_iter[i] == 0 else (int(self.origin_iter[i]),
                                                        int(self.origin_center[i]))
        w = 0.0 if self.weights is None else float(self.weights[i])
        return Point(i, self.theta[i].copy(), self.sim[i].copy(), self.pvals[i].copy(),
                     float(self.pvals[i].min()), d, STATUS_NAMES[int(self.status[i])], origin, w)

    def at_final(self, targets: TargetSet) -> bool:
        return bool(np.all(self.alphas >= targets.alpha_final))


@dataclass
class CalibrationResult:
    param_names: list[str]
    target_ids: list[str]
    theta: np.ndarray
    sim: np.ndarray
    rho: np.ndarray
    dist: np.ndarray
    weights: np.ndarray
    alphas: np.ndarray
    history: list[dict]
    iterations: int
    n_total: int
    ess: float | None
    converged: bool
    at_final_tolerance: bool
    messages: list[str]
    failures: list[dict]
    group_calls: dict[int, int]
    state: EngineState | None = field(default=None, repr=False)

    @property
    def n_accepted(self) -> int:
        return self.theta.shape[0]


# ---------------------------------------------------------------------------
# bookkeeping helpers
# ---------------------------------------------------------------------------

def _empty_state(config: EngineConfig, priors: PriorSet, targets: TargetSet) -> EngineState:
    p, J = priors.dim, len(targets)
    return EngineState(config=config, param_names=list(priors.names), target_ids=list(targets.ids),
                       theta=np.empty((0, p)), sim=np.empty((0, J)),
                       status=np.empty(0, dtype=np.int8), origin_iter=np.empty(0, dtype=np.int64),
                       origin_center=np.empty(0, dtype=np.int64), n_evals=np.empty(0, dtype=np.int64),
                       alphas=targets.alpha_init.copy(), pvals=np.empty((0, J)))


def _append(state: EngineState, theta, iteration: int, centers) -> np.ndarray:
    n, J = theta.shape[0], state.sim.shape[1]
    start = state.n_points
    state.theta = np.vstack([state.theta, theta])
    state.sim = np.vstack([state.sim, np.full((n, J), np.nan)])
    state.pvals = np.vstack([state.pvals, np.zeros((n, J))])
    state.status = np.concatenate([state.status, np.full(n, REJECTED, dtype=np.int8)])
    state.origin_iter = np.concatenate([state.origin_iter, np.full(n, iteration, dtype=np.int64)])
    state.origin_center = np.concatenate([state.origin_center, np.asarray(centers, dtype=np.int64)])
    state.n_evals = np.concatenate([state.n_evals, np.zeros(n, dtype=np.int64)])
    return np.arange(start, start + n)


def _record(state: EngineState, targets: TargetSet, idx, results: list[Evaluation]):
    for i, r in zip(idx, results):
        state.sim[i] = r.sim
        state.n_evals[i] += 1
        state.status[i] = ACCEPTED if r.accepted else REJECTED
        for rank in r.ranks:
            state.group_calls[rank] = state.group_calls.get(rank, 0) + 1
        if r.error is not None:
            state.failures.append({"index": int(i), "iteration": state.iteration, "error": r.error})
            log.warning("model failure at point %d: %s", i, r.error)
    if len(idx):
        state.pvals[idx] = targets.p_values(state.sim[idx])


def _evaluate(state: EngineState, evaluator: Evaluator, targets: TargetSet, priors: PriorSet, idx):
    """Evaluate points ``idx``; points with zero prior density are rejected unseen."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        return
    inside = priors.density(state.theta[idx]) > 0
    run = idx[inside]
    jobs = [(int(i), int(state.n_evals[i]), state.theta[i].copy()) for i in run]
    _record(state, targets, run, evaluator(jobs, state.alphas))
    state.status[idx[~inside]] = REJECTED


# ---------------------------------------------------------------------------
# algorithm steps
# ---------------------------------------------------------------------------

def initialize(config: EngineConfig, model: SimulationModel, targets: TargetSet,
               evaluator: Evaluator | None = None) -> EngineState:
    """Latin hypercube draws from the prior, evaluated at the initial tolerances."""
    priors = model.priors
    own = evaluator is None
    evaluator = evaluator or Evaluator(model, targets, config.seed)
    try:
        state = _empty_state(config, priors, targets)
        theta = latin_hypercube(priors, config.n_init, engine_rng(config.seed, 0))
        idx = _append(state, theta, 0, np.full(config.n_init, -1))
        _evaluate(state, evaluator, targets, priors, idx)
    finally:
        if own:
            evaluator.close()
    state.n_total = config.n_init
    n_acc = state.n_accepted
    state.history.append(_history_entry(state, n_new=config.n_init, n_new_acc=n_acc,
                                        n_demoted=0, n_pruned=0))
    if n_acc == 0:
        msg = ("no initial draw satisfies the initial tolerances; "
               "the prior and the targets look incompatible")
        state.messages.append(msg)
        log.warning(msg)
    return state


def select_centers(state: EngineState, targets: TargetSet) -> np.ndarray:
    """Indices of the N^(c) best accepted points (highest min p-value, then lowest distance).

    With fewer accepted points than centres the ranked points are reused
    cyclically, so the number of kernels per iteration is always N^(c).
    """
    acc = state.accepted
    if acc.size == 0:
        raise EmptyFrontierError("no accepted points to select centres from")
    rho = state.rho_min(acc)
    d = targets.discrepancy(state.sim[acc], state.alphas)
    order = np.lexsort((acc, d, -rho))
    ranked = acc[order[: state.config.n_centers]]
    return ranked[np.arange(state.config.n_centers) % ranked.size]


def local_covariance(state: EngineState, center: int, prior_sd) -> np.ndarray:
    """Kernel covariance for a centre.

    Below 5p accepted points: diagonal with half the prior sd. Up to the
    neighbour count (25p by default): covariance of all accepted points.
    Beyond it: covariance of that many accepted points nearest the centre.
    """
    p = state.theta.shape[1]
    prior_sd = np.asarray(prior_sd, dtype=float)
    acc = state.accepted
    if acc.size < 5 * p:
        return np.diag((prior_sd / 2.0) ** 2)
    pts = state.theta[acc]
    k = state.config.cov_points(p)
    if acc.size > k:
        z = (pts - state.theta[center]) / prior_sd
        near = np.argsort((z * z).sum(axis=1), kind="stable")[:k]
        pts = pts[near]
    return np.atleast_2d(np.cov(pts, rowvar=False))


def propose_and_evaluate(state: EngineState, model: SimulationModel, targets: TargetSet,
                         evaluator: Evaluator | None = None) -> EngineState:
    """One round of kernel sampling plus re-simulation of the centres."""
    cfg = state.config
    priors = model.priors
    t = state.iteration + 1
    rng = engine_rng(cfg.seed, t)
    centers = select_centers(state, targets)
    sd = priors.sd()
    new_kernels = [GaussianKernel(state.theta[c].copy(), local_covariance(state, c, sd))
                   for c in centers]
    draws = np.vstack([k.sample(rng, cfg.batch_per_center) for k in new_kernels])
    owner = np.repeat(np.arange(cfg.n_centers), cfg.batch_per_center)

    state.iteration = t
    idx = _append(state, draws, t, owner)
    uniq = np.unique(centers)
    own = evaluator is None
    evaluator = evaluator or Evaluator(model, targets, cfg.seed)
    try:
        _evaluate(state, evaluator, targets, priors, np.concatenate([uniq, idx]))
    finally:
        if own:
            evaluator.close()
    state.kernels.extend(new_kernels)
    state.n_total += cfg.per_iteration
    n_demoted = int((state.status[uniq] != ACCEPTED).sum())
    state.last_round = {"n_new": int(idx.size), "n_new_acc": int((state.status[idx] == ACCEPTED).sum()),
                   "n_demoted": n_demoted}
    return state


def update_tolerances(state: EngineState, targets: TargetSet) -> int:
    """Tighten tolerances from the median-fit accepted point; returns the number pruned."""
    p = state.theta.shape[1]
    active = state.alphas < targets.alpha_final
    acc = state.accepted
    if not active.any() or acc.size < 50 * p:
        return 0
    rho = state.rho_min(acc)
    d_old = targets.discrepancy(state.sim[acc], state.alphas)
    order = np.lexsort((acc, d_old, -rho))
    i_med = acc[order[acc.size // 2]]
    new = state.alphas.copy()
    cand = np.minimum(state.pvals[i_med], targets.alpha_final)
    new[active] = np.maximum(state.alphas[active], cand[active])

    ok = targets.accept(state.sim[acc], new)
    fail = acc[~ok]
    cap = acc.size // 2
    if fail.size > cap:
        d_fail = d_old[~ok]
        worst = np.lexsort((-fail, -d_fail))[:cap]
        pruned = fail[worst]
        keep = np.setdiff1d(acc, pruned)
        violated = ~targets.accept_matrix(state.sim[keep], new).all(axis=0)
        new[violated] = state.pvals[keep][:, violated].min(axis=0)
    else:
        pruned = fail
    state.status[pruned] = PRUNED
    state.alphas = np.maximum(state.alphas, new)
    if not targets.accept(state.sim[state.accepted], state.alphas).all():
        raise RuntimeError("accepted set violates the updated tolerances")
    return int(pruned.size)


def mixture_density(state: EngineState, priors: PriorSet, theta) -> np.ndarray:
    """q_t = (N0/Nt) prior + (B/Nt) sum of all kernels drawn so far."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    cfg = state.config
    n_t = cfg.n_init + cfg.batch_per_center * len(state.kernels)
    q = (cfg.n_init / n_t) * priors.marginal_density(theta)
    if state.kernels:
        ksum = np.zeros(theta.shape[0])
        for k in state.kernels:
            ksum += k.density(theta)
        q = q + (cfg.batch_per_center / n_t) * ksum
    return q


def compute_weights(state: EngineState, priors: PriorSet) -> np.ndarray:
    """Normalized importance weights, zero for points not accepted."""
    acc = state.accepted
    w = np.zeros(state.n_points)
    if acc.size == 0:
        raise EmptyPosteriorError("no accepted points")
    th = state.theta[acc]
    q = mixture_density(state, priors, th)
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.where(q > 0, priors.density(th) / q, 0.0)
    total = raw.sum()
    if not total > 0:
        raise EmptyPosteriorError("all importance weights are zero")
    w[acc] = raw / total
    return w


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if not total > 0:
        raise EmptyPosteriorError("weights sum to zero")
    w = w / total
    return float(1.0 / np.dot(w, w))


def _history_entry(state: EngineState, n_new, n_new_acc, n_demoted, n_pruned) -> dict:
    return {"iteration": state.iteration, "n_total": state.n_total,
            "n_accepted": state.n_accepted, "n_new": n_new, "n_new_accepted": n_new_acc,
            "acceptance_rate": n_new_acc / n_new if n_new else 0.0,
            "centers_demoted": n_demoted, "pruned": n_pruned,
            "alphas": state.alphas.tolist(), "ess": state.ess}


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def run(config: EngineConfig, model: SimulationModel, targets: TargetSet, workers: int = 1,
        checkpoint: str | os.PathLike | None = None, state: EngineState | None = None,
        on_iteration: Callable[[EngineState], None] | None = None) -> CalibrationResult:
    """Run to convergence or ``max_iterations``.

    Pass ``state`` (e.g. from :func:`load_checkpoint`) to resume. A checkpoint
    is written after initialization and after every iteration.
    """
    priors = model.priors
    _check_compatible(config, priors, targets, state)
    with Evaluator(model, targets, config.seed, workers) as ev:
        if state is None:
            state = initialize(config, model, targets, ev)
            _save(state, checkpoint)
            if on_iteration:
                on_iteration(state)
        else:
            # the saved copy should describe the run that finishes it
            state.config = config
            _save(state, checkpoint)
        while not state.converged and state.iteration < config.max_iterations:
            if state.n_accepted == 0:
                msg = f"iteration {state.iteration}: no accepted points left; stopping"
                if msg not in state.messages:
                    state.messages.append(msg)
                log.warning(msg)
                break
            propose_and_evaluate(state, model, targets, ev)
            last = state.last_round
            n_pruned = update_tolerances(state, targets)
            state.ess = None
            if state.at_final(targets) and state.n_accepted:
                state.weights = compute_weights(state, priors)
                state.ess = effective_sample_size(state.weights[state.accepted])
                state.converged = state.ess >= config.n_post
            else:
                state.weights = None
            state.history.append(_history_entry(state, last["n_new"], last["n_new_acc"],
                                                last["n_demoted"], n_pruned))
            log.info("iteration %d: %d accepted, %d pruned, ess %s", state.iteration,
                     state.n_accepted, n_pruned, state.ess)
            _save(state, checkpoint)
            if on_iteration:
                on_iteration(state)
    return make_result(state, targets, priors)


def make_result(state: EngineState, targets: TargetSet, priors: PriorSet) -> CalibrationResult:
    acc = state.accepted
    final = state.at_final(targets)
    if state.weights is not None:
        w = state.weights[acc]
    elif acc.size:
        # diagnostic weights before the tolerances are final
        w = compute_weights(state, priors)[acc]
    else:
        w = np.zeros(0)
    if not state.converged and acc.size:
        note = "run did not converge; weights are diagnostic" if not final else \
            "run did not reach the target effective sample size"
        if note not in state.messages:
            state.messages.append(note)
    return CalibrationResult(
        param_names=list(state.param_names), target_ids=list(state.target_ids),
        theta=state.theta[acc].copy(), sim=state.sim[acc].copy(),
        rho=state.rho_min(acc).copy(),
        dist=targets.discrepancy(state.sim[acc], state.alphas) if acc.size else np.zeros(0),
        weights=w, alphas=state.alphas.copy(), history=list(state.history),
        iterations=state.iteration, n_total=state.n_total,
        ess=state.ess if state.ess is not None else (effective_sample_size(w) if w.size else None),
        converged=state.converged, at_final_tolerance=final, messages=list(state.messages),
        failures=list(state.failures), group_calls=dict(state.group_calls), state=state)


def resample_posterior(result: CalibrationResult, n: int, rng: np.random.Generator) -> np.ndarray:
    """n draws with replacement from the accepted points, proportional to weight."""
    w = np.asarray(result.weights, dtype=float)
    if w.size == 0 or not w.sum() > 0:
        raise EmptyPosteriorError("no positive weights to resample from")
    pick = rng.choice(w.size, size=n, replace=True, p=w / w.sum())
    return result.theta[pick]


def _check_compatible(config, priors, targets, state):
    if state is None:
        return
    if state.param_names != list(priors.names) or state.target_ids != list(targets.ids):
        raise CheckpointError("checkpoint parameters or targets differ from the configuration")
    old = asdict(state.config)
    new = asdict(config)
    old.pop("max_iterations"), new.pop("max_iterations")
    if old != new:
        raise CheckpointError(f"checkpoint engine settings {old} differ from {new}")


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _nan_list(a) -> list:
    a = np.asarray(a, dtype=float)
    out = a.astype(object)
    out[np.isnan(a)] = None
    return out.tolist()


def _from_nan_list(rows, shape_cols) -> np.ndarray:
    if not rows:
        return np.empty((0, shape_cols))
    return np.array([[np.nan if v is None else v for v in r] for r in rows], dtype=float)


def state_to_dict(state: EngineState) -> dict:
    return {
        "format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
        "config": asdict(state.config),
        "param_names": state.param_names, "target_ids": state.target_ids,
        "iteration": state.iteration, "n_total": state.n_total,
        "alphas": state.alphas.tolist(),
        "theta": state.theta.tolist(), "sim": _nan_list(state.sim),
        "status": state.status.tolist(), "origin_iter": state.origin_iter.tolist(),
        "origin_center": state.origin_center.tolist(), "n_evals": state.n_evals.tolist(),
        "kernels": [{"mean": k.mean.tolist(), "cov": k.cov.tolist()} for k in state.kernels],
        "history": state.history,
        "group_calls": {str(k): v for k, v in sorted(state.group_calls.items())},
        "failures": state.failures, "messages": state.messages,
        "ess": state.ess, "converged": state.converged,
    }


def state_from_dict(d: dict, targets: TargetSet) -> EngineState:
    if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError("not an imabc checkpoint of a supported version")
    p, J = len(d["param_names"]), len(d["target_ids"])
    theta = np.array(d["theta"], dtype=float).reshape(-1, p)
    state = EngineState(
        config=EngineConfig(**d["config"]), param_names=list(d["param_names"]),
        target_ids=list(d["target_ids"]), theta=theta, sim=_from_nan_list(d["sim"], J),
        status=np.array(d["status"], dtype=np.int8),
        origin_iter=np.array(d["origin_iter"], dtype=np.int64),
        origin_center=np.array(d["origin_center"], dtype=np.int64),
        n_evals=np.array(d["n_evals"], dtype=np.int64),
        alphas=np.array(d["alphas"], dtype=float), iteration=int(d["iteration"]),
        n_total=int(d["n_total"]),
        kernels=[GaussianKernel(np.array(k["mean"]), np.array(k["cov"])) for k in d["kernels"]],
        history=list(d["history"]), group_calls={int(k): v for k, v in d["group_calls"].items()},
        failures=list(d["failures"]), messages=list(d["messages"]),
        ess=d["ess"], converged=bool(d["converged"]))
    if list(targets.ids) != state.target_ids:
        raise CheckpointError("checkpoint targets differ from the configured targets")
    state.pvals = targets.p_values(state.sim) if state.n_points else np.empty((0, J))
    return state


def save_checkpoint(state: EngineState, path) -> None:
    """Write the full state as JSON, atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        # dumps takes the C encoder path; dump streams through the pure-Python one
        fh.write(json.dumps(state_to_dict(state), allow_nan=False))
    os.replace(tmp, path)


def load_checkpoint(path, targets: TargetSet, priors: PriorSet | None = None) -> EngineState:
    with open(path) as fh:
        state = state_from_dict(json.load(fh), targets)
    if priors is not None and state.param_names != list(priors.names):
        raise CheckpointError("checkpoint parameters differ from the configured priors")
    if priors is not None and state.at_final(targets) and state.n_accepted:
        state.weights = compute_weights(state, priors)
    return state


def _save(state, path):
    if path is not None:
        save_checkpoint(state, path)
