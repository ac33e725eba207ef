"""Measurements: stationarity, residuals, estimation error, the merit
function with its inequality checkers, and rate fitting.

The headline quantity is the network stationarity measure evaluated at the
agent average: the squared prox-gradient gap of the aggregate objective plus
the consensus spread,

    || xbar - prox_{sum_i h_i}^1 (xbar - mean_i grad f_i(xbar)) ||^2
        + sum_i || x_i - xbar ||^2.

Inequality checkers never abort a run; they produce structured records that
the simulator attaches to the trace.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import ConstraintOps, Graph
from .hsm_admm import Schedules
from .problems import (CompositeProblem, empirical_sigma_sq, full_gradient,
                       global_mean_gradient, h_value, per_sample_gradients,
                       smooth_value, soft_threshold)


class MetricsError(Exception):
    pass


class HistoryUnavailable(MetricsError):
    """Merit evaluation needs at least two completed rounds."""


class InsufficientTrace(MetricsError):
    """Rate fitting needs a long enough logged trace."""


@dataclass
class StationarityReport:
    prox_gradient_gap: float
    consensus_gap: float
    total: float


def stationarity_measure(prob: CompositeProblem, xs) -> StationarityReport:
    """Stationarity at the agent average.

    The prox in the first term is that of the *sum* of the local
    regularizers at unit scale; for a uniform l1 weight across agents this
    is soft thresholding at n times the weight.
    """
    xs = np.asarray(xs, dtype=float)
    xbar = xs.mean(axis=0)
    g = global_mean_gradient(prob, xbar)
    if prob.regularizer == "none":
        prox_pt = xbar - g
    else:
        prox_pt = soft_threshold(xbar - g, prob.n * prob.l1_weight)
    prox_gap = float(np.sum((xbar - prox_pt) ** 2))
    cons_gap = float(np.sum((xs - xbar) ** 2))
    return StationarityReport(prox_gap, cons_gap, prox_gap + cons_gap)


@dataclass
class Residuals:
    consensus: float
    splitting: float
    combined: float


def residuals(ops: ConstraintOps, xs, ys) -> Residuals:
    """Norms of the edge-difference, splitting, and stacked residuals; the
    stacked one satisfies combined^2 = consensus^2 + splitting^2 by the
    block structure."""
    xs = np.asarray(xs, dtype=float).ravel()
    ys = np.asarray(ys, dtype=float).ravel()
    r = ops.residual(xs, ys)
    top = r[: ops.m * ops.p]
    bottom = r[ops.m * ops.p:]
    return Residuals(float(np.linalg.norm(top)), float(np.linalg.norm(bottom)),
                     float(np.linalg.norm(r)))


def gradient_error(prob: CompositeProblem, xs, vs) -> float:
    """Stacked squared estimation error: sum_i ||v_i - grad f_i(x_i)||^2."""
    xs = np.asarray(xs, dtype=float)
    vs = np.asarray(vs, dtype=float)
    total = 0.0
    for i in range(prob.n):
        total += float(np.sum((vs[i] - full_gradient(prob, i, xs[i])) ** 2))
    return total


@dataclass
class LyapunovConstants:
    """Analysis constants for the merit function.

    ``c_err`` must be at least 12 (1 + 1/theta); ``c_beta`` is pinned to its
    lower admissible value, which involves the squared spectral norm of the
    constant part of the step-minus-penalty matrix.
    """

    theta: float
    c_mu: float
    c_gamma: float
    c_err: float
    c_beta: float
    L: float

    def __post_init__(self):
        if self.theta <= 0 or self.c_mu <= 0 or self.c_gamma <= 0:
            raise MetricsError("theta, c_mu, c_gamma must be positive")
        bound = 12.0 * (1.0 + 1.0 / self.theta)
        if self.c_err < bound - 1e-12:
            raise MetricsError(
                f"c_err must be >= {bound} for theta={self.theta}, got {self.c_err}")


def step_matrix_base(graph: Graph, sched: Schedules, p: int = 1,
                     uniform: bool = False) -> np.ndarray:
    """Constant part of the step-minus-penalty matrix: the full matrix at
    round k is (k+1)^{1/3} times this. ``uniform=True`` swaps in the
    worst-degree step used by the uniform baseline."""
    ops = ConstraintOps(graph, p)
    degrees = graph.degree.astype(float)
    if uniform:
        degrees = np.full(graph.n, float(graph.degree.max()))
    C_eta = np.diag(np.repeat(sched.c_eta * (degrees + 1.0), p))
    return C_eta - sched.c_rho * ops.dense_AtA()


def make_lyapunov_constants(graph: Graph, sched: Schedules, L: float, *,
                            p: int = 1, theta: float = 1.0, c_mu: float = 1.0,
                            c_gamma: float = 1.0, c_err: float | None = None,
                            uniform: bool = False) -> LyapunovConstants:
    inv = 1.0 + 1.0 / theta
    if c_err is None:
        c_err = 12.0 * inv
    S_base = step_matrix_base(graph, sched, p, uniform=uniform)
    s_norm_sq = float(np.max(np.abs(np.linalg.eigvalsh(S_base)))) ** 2
    c_beta = (6.0 * inv * s_norm_sq + 12.0 * L * L * inv) / sched.c_rho
    return LyapunovConstants(theta=theta, c_mu=c_mu, c_gamma=c_gamma,
                             c_err=c_err, c_beta=c_beta, L=L)


@dataclass
class LyapunovSnapshot:
    phi: float
    al_value: float
    err_term: float
    err_prev_term: float
    momentum_term: float
    constants: LyapunovConstants


def augmented_lagrangian(prob: CompositeProblem, ops: ConstraintOps,
                         xs, ys, lam, rho: float) -> float:
    """F(x) + H(y) - <lam, Ax + By> + rho/2 ||Ax + By||^2."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    F = sum(smooth_value(prob, i, xs[i]) for i in range(prob.n))
    H = sum(h_value(prob, i, ys[i]) for i in range(prob.n))
    r = ops.residual(xs.ravel(), ys.ravel())
    return float(F + H - lam @ r + 0.5 * rho * float(r @ r))


def lyapunov(prob: CompositeProblem, ops: ConstraintOps, sched: Schedules,
             consts: LyapunovConstants, k: int, xs, ys, lam, vs,
             xs_prev, vs_prev) -> LyapunovSnapshot:
    """Merit value at state index k (two completed rounds required):
    the augmented Lagrangian at the previous round's penalty, plus weighted
    current and previous estimation errors, plus the weighted squared last
    step."""
    if k < 2:
        raise HistoryUnavailable(f"merit needs state index >= 2, got {k}")
    xs = np.asarray(xs, dtype=float)
    rho_prev = sched.rho(k - 1)
    al = augmented_lagrangian(prob, ops, xs, ys, lam, rho_prev)
    err_sq = gradient_error(prob, xs, vs)
    err_prev_sq = gradient_error(prob, xs_prev, vs_prev)
    inv_gamma = consts.c_gamma * float(k) ** (1.0 / 3.0)
    beta_k = consts.c_beta * float(k) ** (1.0 / 3.0)
    err_term = inv_gamma * err_sq
    err_prev_term = consts.c_err / rho_prev * err_prev_sq
    momentum_term = 0.5 * beta_k * float(np.sum((xs - np.asarray(xs_prev)) ** 2))
    phi = al + err_term + err_prev_term + momentum_term
    return LyapunovSnapshot(phi, al, err_term, err_prev_term, momentum_term, consts)


def descent_drift(sched: Schedules, consts: LyapunovConstants, k: int,
                  r_sq: float, sigma_sq: float) -> float:
    """Allowed merit increase over the transition from state k to k+1: the
    penalty-growth term plus the momentum-noise term."""
    rho_step = 0.5 * (sched.rho(k) - sched.rho(k - 1))
    a = sched.a(k)
    inv_gamma_next = consts.c_gamma * float(k + 1) ** (1.0 / 3.0)
    return rho_step * r_sq + 2.0 * a * a * sigma_sq * inv_gamma_next


class DualBoundChecker:
    """Deterministic per-round bound on the squared dual step.

    With S the step-minus-penalty matrix and E the stacked estimation error,
    the transition into state s (s >= 2) must satisfy

        ||lam^s - lam^{s-1}||^2
            <= (1+theta) ||S^{(s-1)} dx^s||^2
             + (2 (1+1/theta) ||S^{(s-2)}||_2^2 + 4 L^2 (1+1/theta)) ||dx^{s-1}||^2
             + 8 (1+1/theta) (||E^{s-1}||^2 + ||E^{s-2}||^2).

    Violations are recorded, never raised: an empirical violation flags a
    subtlety in the bound's range condition, not a broken update.
    """

    def __init__(self, graph: Graph, sched: Schedules, L: float, *,
                 p: int = 1, theta: float = 1.0, uniform: bool = False):
        self.sched = sched
        self.L = L
        self.theta = theta
        self.p = p
        self.S_base = step_matrix_base(graph, sched, p, uniform=uniform)
        self.s_base_norm = float(np.max(np.abs(np.linalg.eigvalsh(self.S_base))))

    def check(self, s: int, xs, xs_prev, xs_prev2, lam, lam_prev,
              err_sq_prev: float, err_sq_prev2: float, tol: float = 1e-9):
        """Evaluate at state index s >= 2; returns a violation record or None."""
        dx = np.asarray(xs, dtype=float).ravel() - np.asarray(xs_prev, dtype=float).ravel()
        dx_prev = (np.asarray(xs_prev, dtype=float).ravel()
                   - np.asarray(xs_prev2, dtype=float).ravel())
        dlam = np.asarray(lam, dtype=float) - np.asarray(lam_prev, dtype=float)
        lhs = float(dlam @ dlam)
        t_cur = float(s) ** (1.0 / 3.0)          # round s-1 evaluates at t = s
        t_prev = float(s - 1) ** (1.0 / 3.0)
        S_dx = t_cur * (self.S_base @ dx)
        inv = 1.0 + 1.0 / self.theta
        rhs = ((1.0 + self.theta) * float(S_dx @ S_dx)
               + (2.0 * inv * (t_prev * self.s_base_norm) ** 2
                  + 4.0 * self.L ** 2 * inv) * float(dx_prev @ dx_prev)
               + 8.0 * inv * (err_sq_prev + err_sq_prev2))
        if lhs <= rhs + tol * max(1.0, rhs):
            return None
        return {"check": "dual_step_bound", "k": int(s), "lhs": lhs, "rhs": rhs}


def momentum_recursion_mc_check(prob: CompositeProblem, xs_prev, xs_new, vs_prev,
                                a: float, n_draws: int, rng, *,
                                L: float | None = None, n_se: float = 4.0) -> dict:
    """Monte-Carlo check of the one-step variance recursion of the momentum
    estimator at a frozen state.

    Draws ``n_draws`` independent single-sample refreshes from the frozen
    (x^k, x^{k+1}, v^k) and compares the empirical mean squared error against

        (1-a)^2 ||E^k||^2 + 2 a^2 sigma^2 + 2 L^2 (1-a)^2 ||dx||^2

    with the empirical stacked variance at x^{k+1} standing in for sigma^2.
    """
    xs_prev = np.asarray(xs_prev, dtype=float)
    xs_new = np.asarray(xs_new, dtype=float)
    vs_prev = np.asarray(vs_prev, dtype=float)
    if L is None:
        L = prob.smoothness
    sq = np.zeros(n_draws)
    err_prev_sq = 0.0
    for i in range(prob.n):
        G_new = per_sample_gradients(prob, i, xs_new[i])
        G_old = per_sample_gradients(prob, i, xs_prev[i])
        g_full_new = G_new.mean(axis=0)
        g_full_old = G_old.mean(axis=0)
        err_prev_sq += float(np.sum((vs_prev[i] - g_full_old) ** 2))
        idx = rng.integers(0, G_new.shape[0], size=n_draws)
        v_plus = G_new[idx] + (1.0 - a) * (vs_prev[i] - G_old[idx])
        sq += np.sum((v_plus - g_full_new) ** 2, axis=1)
    lhs = float(sq.mean())
    se = float(sq.std(ddof=1) / np.sqrt(n_draws))
    sigma_sq = empirical_sigma_sq(prob, xs_new)
    dx_sq = float(np.sum((xs_new - xs_prev) ** 2))
    rhs = ((1.0 - a) ** 2 * err_prev_sq + 2.0 * a * a * sigma_sq
           + 2.0 * L * L * (1.0 - a) ** 2 * dx_sq)
    return {"lhs": lhs, "rhs": rhs, "se": se, "ok": lhs <= rhs + n_se * se,
            "err_prev_sq": err_prev_sq, "sigma_sq": sigma_sq, "dx_sq": dx_sq}


def min_prefix(values) -> np.ndarray:
    return np.minimum.accumulate(np.asarray(values, dtype=float))


def rate_fit(trace, min_k: int = 100, n_points: int = 40) -> tuple:
    """Log-log slope of the running-minimum stationarity over decade-spaced
    checkpoints.

    ``trace`` is either a trace object exposing ``column`` or a pair of
    arrays (iteration indices, stationarity totals). Returns (slope,
    intercept) of the least-squares line through log10(min-prefix) against
    log10(k).
    """
    if hasattr(trace, "column"):
        ks = trace.column("k")
        vals = trace.column("stat_total")
    else:
        ks, vals = trace
    ks = np.asarray(ks, dtype=float)
    vals = np.asarray(vals, dtype=float)
    if ks.size < 100:
        raise InsufficientTrace(f"need at least 100 logged rounds, got {ks.size}")
    prefix = min_prefix(vals)
    mask = ks >= min_k
    if np.count_nonzero(mask) < 2:
        raise InsufficientTrace(f"no checkpoints at or beyond k={min_k}")
    ks_f, pf = ks[mask], prefix[mask]
    targets = np.geomspace(ks_f[0], ks_f[-1], n_points)
    idx = np.unique(np.searchsorted(ks_f, targets).clip(0, ks_f.size - 1))
    xs = np.log10(ks_f[idx])
    ys = np.log10(np.maximum(pf[idx], 1e-300))
    slope, intercept = np.polyfit(xs, ys, 1)
    return float(slope), float(intercept)


def rate_fit_averaged(curves, min_k: int = 100, n_points: int = 40) -> tuple:
    """Rate fit of the replica-averaged running minimum.

    ``curves`` is a list of (iteration indices, stationarity totals) pairs
    that share their logged rounds; the running minima are averaged before
    the log-log fit (idempotent under the inner min-prefix of ``rate_fit``).
    """
    if not curves:
        raise InsufficientTrace("no curves supplied")
    ks0 = np.asarray(curves[0][0], dtype=float)
    prefixes = []
    for ks, vals in curves:
        ks = np.asarray(ks, dtype=float)
        if ks.shape != ks0.shape or not np.array_equal(ks, ks0):
            raise MetricsError("replicas must share their logged rounds")
        prefixes.append(min_prefix(vals))
    return rate_fit((ks0, np.mean(prefixes, axis=0)), min_k=min_k,
                    n_points=n_points)


def accumulation_weighted_sum(err_sq, dx_sq, r_sq, K: int) -> float:
    """Weighted stability sum up to K:

        sum_{k=1}^{K} ( k^{-1/3} ||E^k||^2 + k^{1/3} ||dx^{k+1}||^2
                        + k^{1/3} ||r^{k+1}||^2 )

    from per-state arrays indexed so that entry s-1 holds the value at state
    s (arrays must reach state K+1 for the shifted terms).
    """
    err_sq = np.asarray(err_sq, dtype=float)
    dx_sq = np.asarray(dx_sq, dtype=float)
    r_sq = np.asarray(r_sq, dtype=float)
    if err_sq.size < K or dx_sq.size < K + 1 or r_sq.size < K + 1:
        raise MetricsError(f"need per-state records up to K+1={K + 1}")
    k = np.arange(1, K + 1, dtype=float)
    return float(np.sum(k ** (-1.0 / 3.0) * err_sq[:K]
                        + k ** (1.0 / 3.0) * dx_sq[1:K + 1]
                        + k ** (1.0 / 3.0) * r_sq[1:K + 1]))
