"""Deterministic synchronous round engine with a message ledger.

Each agent owns an independent RNG stream seeded from (master seed, agent
id), so the trajectory is a pure function of the run configuration and is
bit-identical for any worker count: workers only split the per-agent work of
a phase, never reorder it. The engine owns the phase barriers and is the
only writer of the ledger.

A configurable divergence guard converts numerical blow-up into a structured
error carrying the trace logged so far.
"""
from __future__ import annotations

import math
import threading
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from time import perf_counter

import numpy as np

from .baselines import (init_dsgd_state, init_gt_state, metropolis_weights,
                        prox_dsgd_round, prox_gt_round, uniform_eta_rule)
from .config import ConfigInvalid, RunConfig
from .graph import DENSE_LIMIT, ConstraintOps, Graph
from .hsm_admm import (Schedules, constants_feasibility, hsm_admm_round,
                       init_network_state, warn_if_infeasible)
from .metrics import (DualBoundChecker, gradient_error, lyapunov,
                      make_lyapunov_constants, residuals, stationarity_measure)
from .problems import CompositeProblem


class SimulatorError(Exception):
    pass


class NumericalDivergence(SimulatorError):
    """State norm exceeded the guard; carries the trace logged so far."""

    def __init__(self, message, trace=None, round_index=None):
        super().__init__(message)
        self.trace = trace
        self.round_index = round_index


TRACE_HEADER = ("k", "stat_total", "stat_prox", "stat_consensus", "res_combined",
                "res_consensus", "res_split", "err_sq", "phi", "scalars_tx",
                "wall_ms")


@dataclass
class MessageLedger:
    """Cumulative counts of transmitted vectors and scalars."""

    vector_messages: int = 0
    scalars_transmitted: int = 0

    def record(self, vectors: int, p: int) -> None:
        self.vector_messages += int(vectors)
        self.scalars_transmitted += int(vectors) * int(p)


@dataclass
class MetricsTrace:
    """Per-round metric rows plus checker violation records."""

    header: tuple = TRACE_HEADER
    rows: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def append(self, row) -> None:
        if len(row) != len(self.header):
            raise SimulatorError("row width does not match header")
        self.rows.append(list(row))

    def column(self, name: str) -> np.ndarray:
        idx = self.header.index(name)
        return np.array([row[idx] for row in self.rows], dtype=float)

    def last_row(self) -> dict:
        if not self.rows:
            raise SimulatorError("empty trace")
        return dict(zip(self.header, self.rows[-1]))

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(self.header) + "\n")
            for row in self.rows:
                parts = [str(int(row[0]))]
                parts.extend(repr(float(v)) for v in row[1:])
                fh.write(",".join(parts) + "\n")


def read_trace_csv(path) -> dict:
    """Load a trace CSV back into named float arrays."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    data = np.atleast_1d(data)
    return {name: np.asarray(data[name], dtype=float) for name in data.dtype.names}


def metric_rounds(K: int, every: int = 0) -> set:
    """Rounds to log: every round through 100, then every ceil(K/1000), plus
    the final round; ``every > 0`` forces a fixed stride instead."""
    if K <= 0:
        return set()
    if every > 0:
        chosen = set(range(every, K + 1, every))
    else:
        stride = max(1, math.ceil(K / 1000))
        chosen = set(range(1, min(K, 100) + 1))
        chosen.update(range(stride, K + 1, stride))
    chosen.add(K)
    return chosen


def agent_streams(master_seed: int, n: int) -> list:
    """One generator per agent, seeded from (master seed, agent id)."""
    return [np.random.default_rng([master_seed, 1, i]) for i in range(n)]


def initial_point(master_seed: int, p: int) -> np.ndarray:
    return np.random.default_rng([master_seed, 0]).standard_normal(p)


_feasibility_warned = set()
_feasibility_lock = threading.Lock()


def _startup_feasibility(graph: Graph, sched: Schedules, L: float, p: int) -> None:
    key = (graph.n, graph.m, sched.c_rho, sched.c_a, sched.c_eta, round(L, 6))
    with _feasibility_lock:
        if key in _feasibility_warned:
            return
        _feasibility_warned.add(key)
    report = constants_feasibility(graph, sched, L, p=1)
    warn_if_infeasible(report)


def run(config: RunConfig, prob: CompositeProblem, graph: Graph,
        metrics_sink=None) -> MetricsTrace:
    """Drive ``config.K`` synchronous rounds of the configured algorithm.

    Returns the full metrics trace; raises ``NumericalDivergence`` (carrying
    the partial trace) if any agent state exceeds the guard. The optional
    ``metrics_sink(k, row, state)`` is invoked at every logged round.
    """
    config.validate()
    if prob.n != graph.n:
        raise ConfigInvalid(f"problem has {prob.n} agents, graph has {graph.n}")
    p = prob.p
    sched = Schedules(config.c_rho, config.c_a, config.c_eta)
    ops = ConstraintOps(graph, p)
    rngs = agent_streams(config.seed, graph.n)
    x0 = initial_point(config.seed, p)
    full = config.batch_size == 0
    ledger = MessageLedger()
    trace = MetricsTrace()
    admm = config.algorithm in ("hsm_admm", "uniform_admm")
    uniform = config.algorithm == "uniform_admm"

    if admm:
        state = init_network_state(prob, graph, x0, config.m0, rngs, full_batch=full)
        eta_rule = uniform_eta_rule(sched, graph) if uniform else None

        def round_fn(k, pool):
            hsm_admm_round(state, prob, graph, sched, k, rngs,
                           batch_size=config.batch_size, ledger=ledger,
                           eta_rule=eta_rule, pool=pool)
    elif config.algorithm == "prox_dsgd":
        W = metropolis_weights(graph)
        state = init_dsgd_state(graph, x0)

        def round_fn(k, pool):
            prox_dsgd_round(state, prob, graph, W, k, rngs,
                            step_scale=config.step_scale,
                            batch_size=config.batch_size, ledger=ledger, pool=pool)
    else:
        W = metropolis_weights(graph)
        state = init_gt_state(prob, graph, x0, rngs, config.batch_size)

        def round_fn(k, pool):
            prox_gt_round(state, prob, graph, W, k, rngs,
                          step_scale=config.step_scale,
                          batch_size=config.batch_size, ledger=ledger, pool=pool)

    dense_ok = graph.n * p <= DENSE_LIMIT
    track_phi = config.track_lyapunov and admm and dense_ok
    check_dual = config.check_dual_bound and admm and dense_ok
    record_accum = config.record_accumulation and admm
    if admm and dense_ok:
        _startup_feasibility(graph, sched, prob.smoothness, p)

    consts = None
    if track_phi:
        consts = make_lyapunov_constants(graph, sched, prob.smoothness, p=p,
                                         theta=config.theta, c_mu=config.c_mu,
                                         c_gamma=config.c_gamma,
                                         uniform=uniform)
    checker = None
    if check_dual:
        checker = DualBoundChecker(graph, sched, prob.smoothness, p=p,
                                   theta=config.theta, uniform=uniform)

    need_history = track_phi or check_dual or record_accum
    history = deque(maxlen=3)

    def snapshot(xs=None):
        return {"xs": state.xs() if xs is None else xs, "vs": state.vs(),
                "lam": state.duals_vector(graph)}

    def entry_err_sq(entry):
        if "err_sq" not in entry:
            entry["err_sq"] = gradient_error(prob, entry["xs"], entry["vs"])
        return entry["err_sq"]

    accum = {"err_sq": [], "dx_sq": [], "r_sq": []} if record_accum else None

    if need_history:
        first = snapshot()
        history.append(first)
        if record_accum:
            res0 = residuals(ops, first["xs"], state.ys())
            accum["err_sq"].append(entry_err_sq(first))
            accum["dx_sq"].append(0.0)
            accum["r_sq"].append(res0.combined ** 2)

    logset = metric_rounds(config.K, config.metric_every)
    pool = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
    start = perf_counter()
    try:
        for r in range(config.K):
            round_fn(r, pool)
            s = r + 1
            xs = state.xs()
            peak = float(np.max(np.abs(xs))) if xs.size else 0.0
            if not np.isfinite(peak) or peak > config.divergence_guard:
                trace.meta["diverged_at"] = s
                raise NumericalDivergence(
                    f"state magnitude {peak:.3g} exceeded guard "
                    f"{config.divergence_guard:.3g} at round {s}",
                    trace=trace, round_index=s)

            entry = None
            if need_history:
                entry = snapshot(xs)

            if checker is not None and s >= 2 and len(history) >= 2:
                prev, prev2 = history[-1], history[-2]
                rec = checker.check(s, xs, prev["xs"], prev2["xs"],
                                    entry["lam"], prev["lam"],
                                    entry_err_sq(prev), entry_err_sq(prev2))
                if rec is not None:
                    trace.violations.append(rec)

            if record_accum:
                prev = history[-1]
                res_s = residuals(ops, xs, state.ys())
                accum["err_sq"].append(entry_err_sq(entry))
                dx = xs - prev["xs"]
                accum["dx_sq"].append(float(np.sum(dx * dx)))
                accum["r_sq"].append(res_s.combined ** 2)

            if s in logset:
                stat = stationarity_measure(prob, xs)
                ys = state.ys() if admm else xs
                res = residuals(ops, xs, ys)
                err_sq = float("nan")
                phi = float("nan")
                if admm:
                    if entry is not None:
                        err_sq = entry_err_sq(entry)
                    else:
                        err_sq = gradient_error(prob, xs, state.vs())
                    if track_phi and s >= 2 and len(history) >= 1:
                        prev = history[-1]
                        snap = lyapunov(prob, ops, sched, consts, s, xs, ys,
                                        entry["lam"], entry["vs"],
                                        prev["xs"], prev["vs"])
                        phi = snap.phi
                wall = (perf_counter() - start) * 1000.0
                row = (s, stat.total, stat.prox_gradient_gap, stat.consensus_gap,
                       res.combined, res.consensus, res.splitting, err_sq, phi,
                       float(ledger.scalars_transmitted), wall)
                trace.append(row)
                if metrics_sink is not None:
                    metrics_sink(s, dict(zip(TRACE_HEADER, row)), state)

            if need_history:
                history.append(entry)
    finally:
        if pool is not None:
            pool.shutdown(wait=True)

    trace.meta.update({
        "algorithm": config.algorithm,
        "n": graph.n,
        "p": p,
        "K": config.K,
        "seed": config.seed,
        "vector_messages": ledger.vector_messages,
        "scalars_transmitted": ledger.scalars_transmitted,
        "violation_count": len(trace.violations),
    })
    if record_accum:
        trace.meta["accumulation"] = {k: np.array(v) for k, v in accum.items()}
    return trace
