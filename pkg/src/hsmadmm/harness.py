"""Command-line entry point: run experiments, sweeps, checks, and plots.

Subcommands
-----------
run     execute one configuration; writes trace.csv, summary.json and
        optional SVG convergence plots into the output directory
sweep   cross topologies x algorithms x seeds from a base configuration
verify  fast invariant/checker table (pass/fail per line)
plot    render SVG charts from existing trace.csv files

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 numerical divergence.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import baselines, graph as graphmod, hsm_admm, metrics, problems
from .config import ConfigInvalid, RunConfig, load_config, write_config
from .simulator import (MetricsTrace, NumericalDivergence, read_trace_csv, run)
from .svgplot import EmptyTrace, Series, line_chart

SUMMARY_COLUMNS = ("k", "stat_total", "stat_prox", "stat_consensus", "res_combined",
                   "res_consensus", "res_split", "err_sq", "phi", "scalars_tx")


def build_graph(cfg: RunConfig) -> graphmod.Graph:
    if cfg.topology == "from_edge_list":
        return graphmod.load_edge_list(cfg.edge_list, n=cfg.n, p=cfg.p)
    return graphmod.build_topology(cfg.topology, cfg.n, cfg.graph_seed, p=cfg.p,
                                   prob=cfg.edge_prob, hubs=cfg.hubs)


def build_problem(cfg: RunConfig) -> problems.CompositeProblem:
    if cfg.dataset_csv:
        return problems.load_dataset(cfg.dataset_csv, cfg.dataset_manifest,
                                     kind=cfg.problem, regularizer=cfg.regularizer,
                                     l1_weight=cfg.l1_weight, alpha=cfg.alpha)
    return problems.make_problem(cfg.problem, cfg.n, cfg.p, cfg.samples_per_agent,
                                 cfg.dataset_seed, regularizer=cfg.regularizer,
                                 l1_weight=cfg.l1_weight, alpha=cfg.alpha,
                                 noniid=cfg.noniid, noise_std=cfg.noise_std)


def _final_metrics(trace: MetricsTrace) -> dict:
    last = trace.last_row()
    return {name: last[name] for name in SUMMARY_COLUMNS}


def _replica_summary(trace: MetricsTrace, seed: int) -> dict:
    try:
        slope, intercept = metrics.rate_fit(trace)
    except metrics.InsufficientTrace:
        slope, intercept = None, None
    return {
        "seed": seed,
        "final": _final_metrics(trace) if trace.rows else None,
        "ledger": {
            "vector_messages": trace.meta.get("vector_messages", 0),
            "scalars_transmitted": trace.meta.get("scalars_transmitted", 0),
        },
        "violations": {"dual_step_bound": trace.meta.get("violation_count", 0)},
        "slope": slope,
        "intercept": intercept,
    }


def _write_json(payload: dict, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def emit_plots(traces: dict, out_dir, prefix: str = "") -> dict:
    """Write the three convergence charts from named trace arrays.

    ``traces`` maps a curve label to a dict of trace columns. Returns per
    plot and per curve the abscissa range actually drawn (used to assert the
    communication-cost ratio between algorithms).
    """
    if not traces:
        raise EmptyTrace("no traces supplied")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {}

    specs = (
        (f"{prefix}stationarity_vs_k.svg", "k", "stat_total",
         "iteration k", "stationarity measure"),
        (f"{prefix}residuals_vs_k.svg", "k", "res_combined",
         "iteration k", "residual norm"),
        (f"{prefix}stationarity_vs_scalars.svg", "scalars_tx", "stat_total",
         "scalars transmitted", "stationarity measure"),
    )
    for fname, xcol, ycol, xlabel, ylabel in specs:
        series = []
        ranges = {}
        for label, cols in traces.items():
            x = np.asarray(cols[xcol], dtype=float)
            y = np.asarray(cols[ycol], dtype=float)
            keep = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
            if keep.any():
                series.append(Series(label, x[keep], y[keep]))
                ranges[label] = (float(x[keep].min()), float(x[keep].max()))
        svg = line_chart(series, xlabel, ylabel, logx=True, logy=True)
        with open(out_dir / fname, "w", encoding="utf-8") as fh:
            fh.write(svg)
        meta[fname] = ranges
    return meta


def run_single(cfg: RunConfig, out_dir=None) -> dict:
    """Run all replicas of one configuration and write the outputs.

    Raises ``NumericalDivergence`` after persisting the partial trace and a
    divergence summary.
    """
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    g = build_graph(cfg)
    prob = build_problem(cfg)
    write_config(cfg, out / "config.cfg")

    replicas = []
    traces = {}
    for r in range(cfg.replicas):
        rcfg = dataclasses.replace(cfg, seed=cfg.seed + r)
        rdir = out if cfg.replicas == 1 else out / f"replica_{r:03d}"
        rdir.mkdir(parents=True, exist_ok=True)
        try:
            trace = run(rcfg, prob, g)
        except NumericalDivergence as exc:
            if exc.trace is not None:
                exc.trace.write_csv(rdir / "trace.csv")
            _write_json({"status": "diverged", "round": exc.round_index,
                         "seed": rcfg.seed, "message": str(exc)},
                        out / "summary.json")
            raise
        trace.write_csv(rdir / "trace.csv")
        replicas.append(_replica_summary(trace, rcfg.seed))
        traces[f"seed {rcfg.seed}"] = {name: trace.column(name)
                                       for name in trace.header}

    aggregate = {}
    finals = [rep["final"]["stat_total"] for rep in replicas if rep["final"]]
    if finals:
        aggregate["final_stat_total_mean"] = float(np.mean(finals))
    curves = [(t["k"], t["stat_total"]) for t in traces.values()]
    try:
        slope, intercept = metrics.rate_fit_averaged(curves)
        aggregate["slope_of_mean_min_prefix"] = slope
        aggregate["intercept_of_mean_min_prefix"] = intercept
    except metrics.InsufficientTrace:
        pass

    summary = {"status": "ok", "algorithm": cfg.algorithm,
               "topology": cfg.topology, "replicas": replicas,
               "aggregate": aggregate}
    _write_json(summary, out / "summary.json")
    if cfg.plots and traces:
        try:
            emit_plots(traces, out)
        except EmptyTrace:
            pass  # nothing positive to draw on log axes; summary still written
    return summary


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.out:
        cfg = dataclasses.replace(cfg, out_dir=args.out)
    if args.plots:
        cfg = dataclasses.replace(cfg, plots=True)
    cfg.validate()
    try:
        run_single(cfg)
    except NumericalDivergence as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return 3
    return 0


def _run_cell(payload) -> tuple:
    cell_name, cfg_values, cell_dir = payload
    cfg = RunConfig(**cfg_values)
    try:
        summary = run_single(cfg, cell_dir)
        return cell_name, summary
    except NumericalDivergence as exc:
        return cell_name, {"status": "diverged", "round": exc.round_index}


def cmd_sweep(args) -> int:
    base = load_config(args.config)
    topologies = [t.strip() for t in args.topologies.split(",") if t.strip()]
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    if not topologies or not algos:
        raise ConfigInvalid("sweep needs at least one topology and one algorithm")
    out = Path(args.out if args.out else base.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    jobs = []
    for topo in topologies:
        for algo in algos:
            cell = f"{topo}__{algo}"
            cfg = dataclasses.replace(base, topology=topo, algorithm=algo,
                                      replicas=args.seeds,
                                      out_dir=str(out / cell))
            cfg.validate()
            jobs.append((cell, dataclasses.asdict(cfg), str(out / cell)))

    results = {}
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for cell, summary in pool.map(_run_cell, jobs):
                results[cell] = summary
    else:
        for payload in jobs:
            cell, summary = _run_cell(payload)
            results[cell] = summary

    _write_json({"cells": results}, out / "sweep_summary.json")
    bad = [c for c, s in results.items() if s.get("status") != "ok"]
    if bad:
        print(f"diverged cells: {', '.join(sorted(bad))}", file=sys.stderr)
        return 3
    return 0


def cmd_plot(args) -> int:
    labels = [s.strip() for s in args.labels.split(",")] if args.labels else None
    paths = args.traces
    if labels and len(labels) != len(paths):
        raise ConfigInvalid("need exactly one label per trace")
    traces = {}
    for idx, path in enumerate(paths):
        label = labels[idx] if labels else Path(path).stem
        traces[label] = read_trace_csv(path)
    try:
        emit_plots(traces, args.out)
    except EmptyTrace as exc:
        print(f"plot failed: {exc}", file=sys.stderr)
        return 2
    return 0


def _verify_checks() -> list:
    """Fast invariant suite used by the ``verify`` subcommand."""
    checks = []
    rng = np.random.default_rng(0)

    def check_spectral():
        cases = [graphmod.build_topology("ring", 8), graphmod.build_topology("star", 8),
                 graphmod.build_topology("hub_leaf", 9, hubs=2),
                 graphmod.build_topology("random_connected", 12, seed=5, prob=0.3),
                 graphmod.build_topology("ring", 2)]
        worst = max(abs(graphmod.smallest_singular_sq_A(graphmod.ConstraintOps(g)) - 1.0)
                    for g in cases)
        return worst <= 1e-10, f"max deviation {worst:.2e}"

    checks.append(("spectral identity", check_spectral))

    def check_operators():
        worst = 0.0
        for seed in range(3):
            g = graphmod.build_topology("random_connected", 8, seed=seed, prob=0.4, p=2)
            ops = graphmod.ConstraintOps(g)
            dense = graphmod.ConstraintOps(g, mode="dense")
            for _ in range(10):
                x = rng.standard_normal(ops.dim_in)
                u = rng.standard_normal(ops.dim_out)
                for a, b in ((ops.apply_A(x), dense.apply_A(x)),
                             (ops.apply_At(u), dense.apply_At(u)),
                             (ops.apply_AtA(x), dense.apply_AtA(x))):
                    worst = max(worst, float(np.linalg.norm(a - b)
                                             / max(1.0, np.linalg.norm(b))))
        return worst <= 1e-12, f"max rel deviation {worst:.2e}"

    checks.append(("implicit vs dense operators", check_operators))

    def check_incidence():
        for kind, n in (("ring", 7), ("star", 6), ("hub_leaf", 8)):
            g = graphmod.build_topology(kind, n)
            M = graphmod.incidence_matrix(g)
            if not np.allclose(M.T @ M, graphmod.laplacian(g), atol=1e-12):
                return False, f"incidence mismatch on {kind}"
            if not np.array_equal(np.diag(M.T @ M).astype(int), g.degree):
                return False, f"degree mismatch on {kind}"
        return True, "incidence product equals Laplacian"

    checks.append(("incidence / Laplacian", check_incidence))

    def check_prox():
        prob = problems.make_problem("least_squares", 2, 1, 3, 0,
                                     regularizer="l1", l1_weight=1.0)
        grid = np.arange(-4.0, 4.0 + 1e-9, 1e-4)
        worst = 0.0
        for _ in range(20):
            v = float(rng.uniform(-3, 3))
            c = float(rng.uniform(0.1, 2.0))
            lam = float(rng.uniform(0.0, 2.0))
            trial = dataclasses.replace(prob, l1_weight=lam)
            got = problems.prox_h(trial, 0, np.array([v]), c)[0]
            objective = lam * np.abs(grid) + (grid - v) ** 2 / (2 * c)
            want = grid[np.argmin(objective)]
            worst = max(worst, abs(got - want))
        return worst <= 2e-4, f"max deviation {worst:.2e}"

    checks.append(("prox vs grid search", check_prox))

    def check_gradients():
        worst = 0.0
        for kind in problems.SMOOTH_KINDS:
            prob = problems.make_problem(kind, 2, 4, 6, 3, alpha=0.3)
            batch = problems.full_batch(prob, 0)
            for _ in range(3):
                x = rng.standard_normal(4)
                g = problems.stochastic_gradient(prob, 0, x, batch)
                fd = np.zeros(4)
                for j in range(4):
                    e = np.zeros(4)
                    e[j] = 1e-6
                    fd[j] = (problems.sampled_loss(prob, 0, x + e, batch)
                             - problems.sampled_loss(prob, 0, x - e, batch)) / 2e-6
                worst = max(worst, float(np.linalg.norm(fd - g)
                                         / max(1.0, np.linalg.norm(fd))))
        return worst <= 1e-5, f"max rel deviation {worst:.2e}"

    checks.append(("gradients vs finite differences", check_gradients))

    def check_compact_form():
        g = graphmod.build_topology("random_connected", 5, seed=2, prob=0.5, p=2)
        prob = problems.make_problem("logistic", 5, 2, 8, 1,
                                     regularizer="l1", l1_weight=0.01, alpha=0.1)
        sched = hsm_admm.Schedules()
        ops = graphmod.ConstraintOps(g)
        rngs = [np.random.default_rng([9, 1, i]) for i in range(5)]
        state = hsm_admm.init_network_state(prob, g, np.zeros(2), 4, rngs)
        worst = 0.0
        for k in range(25):
            x = state.xs().ravel()
            y = state.ys().ravel()
            lam = state.duals_vector(g)
            v = state.vs().ravel()
            y_ref, x_ref, lam_ref = hsm_admm.dense_round_reference(
                ops, prob, sched, k, x, y, lam, v)
            hsm_admm.hsm_admm_round(state, prob, g, sched, k, rngs)
            worst = max(worst,
                        float(np.max(np.abs(state.ys().ravel() - y_ref))),
                        float(np.max(np.abs(state.xs().ravel() - x_ref))),
                        float(np.max(np.abs(state.duals_vector(g) - lam_ref))))
        return worst <= 1e-10, f"max deviation {worst:.2e}"

    checks.append(("distributed vs dense rounds", check_compact_form))

    def check_ledger():
        cfg = RunConfig(algorithm="hsm_admm", topology="ring", n=6, p=3, K=10,
                        samples_per_agent=5, track_lyapunov=False)
        trace = run(cfg, build_problem(cfg), build_graph(cfg))
        hsm_total = trace.meta["vector_messages"]
        cfg_gt = dataclasses.replace(cfg, algorithm="prox_gt")
        trace_gt = run(cfg_gt, build_problem(cfg_gt), build_graph(cfg_gt))
        gt_total = trace_gt.meta["vector_messages"]
        ok = hsm_total == 10 * 12 and gt_total == 2 * hsm_total
        return ok, f"hsm {hsm_total}, gt {gt_total}"

    checks.append(("message ledger counts", check_ledger))

    def check_determinism():
        cfg = RunConfig(algorithm="hsm_admm", topology="ring", n=5, p=4, K=40,
                        samples_per_agent=6, regularizer="l1", l1_weight=0.01,
                        track_lyapunov=False)
        prob, g = build_problem(cfg), build_graph(cfg)
        rows = []
        for workers in (1, 2, 1):
            trace = run(dataclasses.replace(cfg, workers=workers), prob, g)
            rows.append(np.array([r[:-1] for r in trace.rows], dtype=float))
        ok = (np.array_equal(rows[0], rows[1], equal_nan=True)
              and np.array_equal(rows[0], rows[2], equal_nan=True))
        return ok, "traces identical across reruns and worker counts"

    checks.append(("determinism", check_determinism))

    def check_tracking():
        g = graphmod.build_topology("ring", 6)
        W = baselines.metropolis_weights(g)
        sym = float(np.max(np.abs(W - W.T)))
        stoch = float(np.max(np.abs(W.sum(axis=1) - 1.0)))
        prob = problems.make_problem("least_squares", 6, 3, 5, 4)
        rngs = [np.random.default_rng([3, 1, i]) for i in range(6)]
        state = baselines.init_gt_state(prob, g, np.zeros(3), rngs)
        worst = 0.0
        for k in range(30):
            baselines.prox_gt_round(state, prob, g, W, k, rngs)
            gap = np.linalg.norm(state.trackers().sum(axis=0)
                                 - state.gradients().sum(axis=0))
            worst = max(worst, float(gap))
        ok = sym <= 1e-15 and stoch <= 1e-12 and worst <= 1e-10
        return ok, f"tracking gap {worst:.2e}"

    checks.append(("mixing and gradient tracking", check_tracking))
    return checks


def cmd_verify(args) -> int:
    failures = 0
    for name, fn in _verify_checks():
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashed check is a failed check
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        status = "PASS" if ok else "FAIL"
        print(f"[{status}] {name}: {detail}")
        failures += 0 if ok else 1
    return 0 if failures == 0 else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hsmadmm",
        description="Deterministic simulator for distributed stochastic "
                    "composite optimization over graphs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one configuration")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default="")
    p_run.add_argument("--plots", action="store_true")
    p_run.set_defaults(fn=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a topology x algorithm grid")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--topologies", required=True)
    p_sweep.add_argument("--algos", required=True)
    p_sweep.add_argument("--seeds", type=int, default=1)
    p_sweep.add_argument("--out", default="")
    p_sweep.add_argument("--jobs", type=int, default=1)
    p_sweep.set_defaults(fn=cmd_sweep)

    p_verify = sub.add_parser("verify", help="run the invariant suite")
    p_verify.set_defaults(fn=cmd_verify)

    p_plot = sub.add_parser("plot", help="render charts from trace files")
    p_plot.add_argument("--traces", nargs="+", required=True)
    p_plot.add_argument("--labels", default="")
    p_plot.add_argument("--out", required=True)
    p_plot.set_defaults(fn=cmd_plot)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
