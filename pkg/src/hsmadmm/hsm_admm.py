"""Degree-scaled stochastic momentum ADMM: per-round update sequence.

One synchronous round, from the view of agent i with penalty rho, step eta_i
and momentum parameter a:

    y_i  <- prox of the local regularizer at (x_i - beta_i / rho), scale 1/rho
    x_i  <- x_i - (1/eta_i) * ( v_i
                                + sum_{j ~ i} [ -alpha_ij + rho (x_i - x_j) ]
                                - beta_i + rho (x_i - y_i) )
    exchange the new x with the neighbors (one vector per directed pair)
    alpha_e <- alpha_e - rho (x_i - x_j)          per canonical edge e=(i,j)
    beta_i  <- beta_i  - rho (x_i - y_i)
    v_i  <- momentum refresh at the new x_i

The x step uses the neighbors' previous-round values (synchronous Jacobi).
Step sizes scale with the local degree, eta_i = c_eta * (d_i + 1) * t^{1/3},
so no agent waits on the global maximum degree. Schedules evaluate at
t = k + 1: the k^{1/3} law would make the round-0 penalty zero and the prox
scale undefined, and the one-shift is the minimal repair.

Consensus duals are stored once per canonical (low, high) edge; the two
endpoints read sign-flipped views of the same vector, which makes the
antisymmetry structural instead of a synchronized pair of copies.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from itertools import product

import numpy as np

from .estimator import MomentumState, init_momentum, update_momentum
from .graph import ConstraintOps, Graph, InvalidParam
from .problems import CompositeProblem, prox_h


class AlgorithmError(Exception):
    pass


class MissingNeighbor(AlgorithmError):
    """The x step was invoked without all neighbor values."""


@dataclass(frozen=True)
class Schedules:
    """Polynomial schedules: penalty and steps grow as t^{1/3}, the momentum
    parameter decays as t^{-2/3} clamped into (0, 1]."""

    c_rho: float = 1.0
    c_a: float = 1.0
    c_eta: float = 2.0

    def __post_init__(self):
        if self.c_rho <= 0 or self.c_a <= 0 or self.c_eta <= 0:
            raise InvalidParam("schedule constants must be positive")

    def rho(self, k: int) -> float:
        return self.c_rho * float(k + 1) ** (1.0 / 3.0)

    def a(self, k: int) -> float:
        return min(1.0, self.c_a * float(k + 1) ** (-2.0 / 3.0))

    def eta(self, k: int, degree: int) -> float:
        return self.c_eta * (degree + 1) * float(k + 1) ** (1.0 / 3.0)


def schedules_at(s: Schedules, k: int, degree: int) -> tuple:
    """(rho, a, eta_i) for round k at local degree d_i."""
    return s.rho(k), s.a(k), s.eta(k, degree)


@dataclass
class AgentState:
    """One agent's primal/auxiliary/dual/momentum variables."""

    x: np.ndarray
    y: np.ndarray
    beta: np.ndarray
    momentum: MomentumState
    degree: int


class NetworkState:
    """All agent states plus one dual vector per canonical edge."""

    def __init__(self, agents, edge_duals):
        self.agents = list(agents)
        self.edge_duals = dict(edge_duals)

    @property
    def n(self) -> int:
        return len(self.agents)

    @property
    def p(self) -> int:
        return int(self.agents[0].x.size)

    def alpha_signed(self, i: int, j: int) -> np.ndarray:
        """Consensus dual as seen by agent i toward neighbor j: the canonical
        vector for the low endpoint, its negation for the high one."""
        if i < j:
            return self.edge_duals[(i, j)]
        return -self.edge_duals[(j, i)]

    def xs(self) -> np.ndarray:
        return np.array([ag.x for ag in self.agents])

    def ys(self) -> np.ndarray:
        return np.array([ag.y for ag in self.agents])

    def vs(self) -> np.ndarray:
        return np.array([ag.momentum.v for ag in self.agents])

    def duals_vector(self, graph: Graph) -> np.ndarray:
        """Stacked multipliers: edge duals in edge-list order, then the
        per-agent splitting duals."""
        parts = [self.edge_duals[e] for e in graph.edges]
        parts.extend(ag.beta for ag in self.agents)
        return np.concatenate(parts) if parts else np.zeros(0)

    def copy(self) -> "NetworkState":
        agents = [AgentState(ag.x.copy(), ag.y.copy(), ag.beta.copy(),
                             MomentumState(ag.momentum.v.copy(), ag.momentum.last_x.copy()),
                             ag.degree) for ag in self.agents]
        duals = {e: v.copy() for e, v in self.edge_duals.items()}
        return NetworkState(agents, duals)


def init_network_state(prob: CompositeProblem, graph: Graph, x0, m0: int,
                       rngs, full_batch: bool = False) -> NetworkState:
    """Identical primal start across agents, y = x, zero duals, momentum from
    an m0-sample batch (or the exact gradient in deterministic mode)."""
    x0 = np.asarray(x0, dtype=float)
    agents = []
    for i in range(graph.n):
        mom = init_momentum(prob, i, x0, m0, rngs[i], full=full_batch)
        agents.append(AgentState(x0.copy(), x0.copy(), np.zeros_like(x0),
                                 mom, int(graph.degree[i])))
    duals = {e: np.zeros_like(x0) for e in graph.edges}
    return NetworkState(agents, duals)


def step_y(agent: AgentState, prob: CompositeProblem, i: int, rho: float) -> np.ndarray:
    """Local-only auxiliary update: prox at x_i - beta_i / rho with scale 1/rho."""
    return prox_h(prob, i, agent.x - agent.beta / rho, 1.0 / rho)


def step_x(x, v, beta, neighbors, neighbor_x, alpha_signed, y_new,
           rho: float, eta: float) -> np.ndarray:
    """Linearized primal step with the local degree-scaled step size."""
    acc = v - beta + rho * (x - y_new)
    for j in neighbors:
        if j not in neighbor_x:
            raise MissingNeighbor(f"missing value from neighbor {j}")
        acc = acc - alpha_signed[j] + rho * (x - neighbor_x[j])
    return x - acc / eta


def step_duals(state: NetworkState, graph: Graph, rho: float) -> None:
    """Dual ascent on the committed round state: one update per canonical
    edge and one splitting update per agent."""
    for e in graph.edges:
        i, j = e
        state.edge_duals[e] -= rho * (state.agents[i].x - state.agents[j].x)
    for ag in state.agents:
        ag.beta = ag.beta - rho * (ag.x - ag.y)


def _pmap(fn, count: int, pool):
    if pool is None:
        return [fn(i) for i in range(count)]
    return list(pool.map(fn, range(count)))


def hsm_admm_round(state: NetworkState, prob: CompositeProblem, graph: Graph,
                   sched: Schedules, k: int, rngs, *, batch_size: int = 1,
                   ledger=None, eta_rule=None, pool=None) -> None:
    """Execute round k in place: y for all agents, x for all agents against
    the round-k snapshot, exchange, duals, momentum refresh.

    ``eta_rule(k, degree)`` overrides the heterogeneous step size (used by
    the uniform-step baseline). Exactly one x vector crosses each directed
    neighbor pair per round; the ledger records the exchange.
    """
    rho = sched.rho(k)
    a = sched.a(k)
    agents = state.agents

    y_new = _pmap(lambda i: step_y(agents[i], prob, i, rho), state.n, pool)

    x_snap = [ag.x for ag in agents]

    def x_task(i):
        ag = agents[i]
        eta = eta_rule(k, ag.degree) if eta_rule is not None else sched.eta(k, ag.degree)
        nbrs = graph.neighbors[i]
        neighbor_x = {j: x_snap[j] for j in nbrs}
        alpha = {j: state.alpha_signed(i, j) for j in nbrs}
        return step_x(ag.x, ag.momentum.v, ag.beta, nbrs, neighbor_x, alpha,
                      y_new[i], rho, eta)

    x_new = _pmap(x_task, state.n, pool)

    if ledger is not None:
        ledger.record(2 * graph.m, state.p)

    for i, ag in enumerate(agents):
        ag.y = y_new[i]
        ag.x = x_new[i]

    step_duals(state, graph, rho)

    def momentum_task(i):
        ag = agents[i]
        ag.momentum = update_momentum(ag.momentum, prob, i, ag.x, a, rngs[i],
                                      batch_size)
        return None

    _pmap(momentum_task, state.n, pool)


def dense_round_reference(ops: ConstraintOps, prob: CompositeProblem,
                          sched: Schedules, k: int, x, y, lam, v, *,
                          eta_rule=None) -> tuple:
    """One round predicted by the stacked dense formulation.

    Returns (y_next, x_next, lam_next) computed with explicit matrices:
    the stacked prox, then

        x_next   = x - Q^{-1} (v - A^T lam + rho A^T (A x + B y_next))
        lam_next = lam - rho (A x_next + B y_next)

    with Q the block-diagonal step matrix. This is the verification oracle
    for the distributed neighbor-sum implementation.
    """
    g = ops.graph
    p = ops.p
    rho = sched.rho(k)
    A = ops.dense_A()
    B = ops.dense_B()
    etas = np.array([eta_rule(k, int(g.degree[i])) if eta_rule is not None
                     else sched.eta(k, int(g.degree[i])) for i in range(g.n)])
    Q_diag = np.repeat(etas, p)

    beta = lam[g.m * p:]
    y_next = np.concatenate([
        prox_h(prob, i, x[i * p:(i + 1) * p] - beta[i * p:(i + 1) * p] / rho, 1.0 / rho)
        for i in range(g.n)])
    grad_term = v - A.T @ lam + rho * (A.T @ (A @ x + B @ y_next))
    x_next = x - grad_term / Q_diag
    lam_next = lam - rho * (A @ x_next + B @ y_next)
    return y_next, x_next, lam_next


@dataclass
class FeasibilityReport:
    """Outcome of the step-constant positivity search.

    ``feasible`` means both scalar and matrix positivity margins are strictly
    positive somewhere on the grid; ``best`` holds the grid point with the
    largest worst margin either way.
    """

    feasible: bool
    best: dict
    tried: int


def constants_feasibility(graph: Graph, sched: Schedules, L: float, *,
                          p: int = 1, theta_grid=(0.5, 1.0, 2.0),
                          c_mu_grid=(0.5, 1.0, 2.0, 4.0),
                          c_gamma_grid=(0.25, 0.5, 1.0, 2.0)) -> FeasibilityReport:
    """Search a small grid of analysis constants for simultaneous positivity
    of the error coefficient and the step matrix.

    For each (theta, c_mu, c_gamma) the error-term margin is

        margin_e = 2 c_a c_gamma - 1/(2 c_mu) - (12 (1 + 1/theta) + c_err) / c_rho

    with c_err at its lower admissible value 12 (1 + 1/theta), and the step
    matrix whose smallest eigenvalue must be positive is

        (C_eta - c_rho/2 AtA) - 3(1+theta)/(2 c_rho) (C_eta - c_rho AtA)^2
        - (c_mu/2 + c_beta/2 + L/2 + 2 L^2 c_gamma) I.

    The search reports rather than enforces: the published conditions leave
    the constants as experimental knobs and the desk problems run fine
    outside the certified region.
    """
    ops = ConstraintOps(graph, p)
    AtA = ops.dense_AtA()
    C_eta = np.diag(np.repeat(sched.c_eta * (graph.degree + 1.0), p))
    S_base = C_eta - sched.c_rho * AtA
    s_norm_sq = float(np.max(np.abs(np.linalg.eigvalsh(S_base)))) ** 2

    best = None
    feasible = False
    tried = 0
    for theta, c_mu, c_gamma in product(theta_grid, c_mu_grid, c_gamma_grid):
        tried += 1
        inv = 1.0 + 1.0 / theta
        c_err = 12.0 * inv
        c_beta = (6.0 * inv * s_norm_sq + 12.0 * L * L * inv) / sched.c_rho
        margin_e = (2.0 * sched.c_a * c_gamma - 0.5 / c_mu
                    - (12.0 * inv + c_err) / sched.c_rho)
        Cx = (C_eta - 0.5 * sched.c_rho * AtA
              - (1.5 * (1.0 + theta) / sched.c_rho) * (S_base @ S_base)
              - (0.5 * c_mu + 0.5 * c_beta + 0.5 * L
                 + 2.0 * L * L * c_gamma) * np.eye(AtA.shape[0]))
        margin_x = float(np.linalg.eigvalsh(Cx)[0])
        worst = min(margin_e, margin_x)
        entry = {"theta": theta, "c_mu": c_mu, "c_gamma": c_gamma,
                 "margin_error": margin_e, "margin_step_matrix": margin_x,
                 "worst": worst}
        if best is None or worst > best["worst"]:
            best = entry
        if margin_e > 0 and margin_x > 0:
            feasible = True
            best = entry
            break
    return FeasibilityReport(feasible=feasible, best=best, tried=tried)


def warn_if_infeasible(report: FeasibilityReport) -> None:
    if not report.feasible:
        warnings.warn(
            "no grid point certifies the accumulation-bound positivity "
            f"(best worst-margin {report.best['worst']:.3g}); the schedule "
            "constants remain experimental knobs", RuntimeWarning, stacklevel=2)
