"""Per-agent composite objectives with stochastic first-order and prox oracles.

Each agent holds a finite local dataset of (feature, label) samples. The
smooth local loss is the empirical mean of a per-sample loss plus an optional
bounded nonconvex penalty ``alpha * sum_j x_j^2 / (1 + x_j^2)``; sampling is
uniform with replacement over the local dataset, so the full-data gradient is
the exact expectation of the stochastic one. The nonsmooth part is an l1
regularizer (or nothing) handled through its proximal map.

Smooth loss kinds
-----------------
least_squares     0.5 * (a.x - b)^2
logistic          log(1 + exp(-b * a.x)) with labels in {-1, +1}
nonconvex_robust  0.5 * r^2 / (1 + r^2) with r = a.x - b
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

SMOOTH_KINDS = ("least_squares", "logistic", "nonconvex_robust")
REGULARIZERS = ("l1", "none")

# Upper bound on the second derivative of the per-sample scalar loss.
_CURVATURE = {"least_squares": 1.0, "logistic": 0.25, "nonconvex_robust": 1.0}


class ProblemError(Exception):
    """Base class for objective/oracle failures."""


class IndexOutOfRange(ProblemError):
    """A batch referenced samples outside the local dataset."""


class NonPositiveScale(ProblemError):
    """The proximal scale must be strictly positive."""


@dataclass
class SampleBatch:
    """Indices into one agent's local dataset (uniform with replacement)."""

    agent: int
    indices: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.indices.ndim != 1 or self.indices.size < 1:
            raise IndexOutOfRange("batch must hold at least one sample index")

    @property
    def size(self) -> int:
        return int(self.indices.size)


@dataclass
class CompositeProblem:
    """n-agent composite objective: smooth stochastic loss plus l1 or nothing.

    ``features[i]`` is the (N_i, p) local design matrix of agent i and
    ``labels[i]`` the matching targets. Immutable after construction; all
    oracle calls are pure functions of their arguments.
    """

    kind: str
    features: list
    labels: list
    regularizer: str = "none"
    l1_weight: float = 0.0
    alpha: float = 0.0
    _L: float = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in SMOOTH_KINDS:
            raise ProblemError(f"unknown smooth loss kind {self.kind!r}")
        if self.regularizer not in REGULARIZERS:
            raise ProblemError(f"unknown regularizer {self.regularizer!r}")
        if self.l1_weight < 0 or self.alpha < 0:
            raise ProblemError("l1_weight and alpha must be nonnegative")
        if len(self.features) != len(self.labels) or not self.features:
            raise ProblemError("need one (features, labels) pair per agent")
        p = self.features[0].shape[1]
        for A, b in zip(self.features, self.labels):
            if A.ndim != 2 or A.shape[1] != p or b.shape != (A.shape[0],):
                raise ProblemError("inconsistent dataset shapes")

    @property
    def n(self) -> int:
        return len(self.features)

    @property
    def p(self) -> int:
        return int(self.features[0].shape[1])

    def local_size(self, i: int) -> int:
        return int(self.features[i].shape[0])

    @property
    def smoothness(self) -> float:
        if self._L is None:
            self._L = estimate_smoothness(self)
        return self._L


def _check_agent(prob: CompositeProblem, i: int) -> None:
    if not (0 <= i < prob.n):
        raise IndexOutOfRange(f"agent {i} out of range (n={prob.n})")


def _penalty_value(prob: CompositeProblem, x: np.ndarray) -> float:
    if prob.alpha == 0.0:
        return 0.0
    x2 = x * x
    return float(prob.alpha * np.sum(x2 / (1.0 + x2)))


def _penalty_gradient(prob: CompositeProblem, x: np.ndarray) -> np.ndarray:
    if prob.alpha == 0.0:
        return np.zeros_like(x)
    return prob.alpha * 2.0 * x / (1.0 + x * x) ** 2


def _margins(prob: CompositeProblem, i: int, x: np.ndarray) -> np.ndarray:
    return prob.features[i] @ x


def per_sample_losses(prob: CompositeProblem, i: int, x) -> np.ndarray:
    """Per-sample loss values at x, penalty included, shape (N_i,)."""
    _check_agent(prob, i)
    x = np.asarray(x, dtype=float)
    A, b = prob.features[i], prob.labels[i]
    if prob.kind == "least_squares":
        data = 0.5 * (A @ x - b) ** 2
    elif prob.kind == "logistic":
        data = np.logaddexp(0.0, -b * (A @ x))
    else:
        r2 = (A @ x - b) ** 2
        data = 0.5 * r2 / (1.0 + r2)
    return data + _penalty_value(prob, x)


def per_sample_gradients(prob: CompositeProblem, i: int, x) -> np.ndarray:
    """Per-sample gradients at x, penalty included, shape (N_i, p)."""
    _check_agent(prob, i)
    x = np.asarray(x, dtype=float)
    A, b = prob.features[i], prob.labels[i]
    if prob.kind == "least_squares":
        w = A @ x - b
    elif prob.kind == "logistic":
        z = b * (A @ x)
        # sigmoid(-z) via tanh keeps exp overflow out of the picture
        w = -b * 0.5 * (1.0 + np.tanh(-0.5 * z))
    else:
        r = A @ x - b
        w = r / (1.0 + r * r) ** 2
    return w[:, None] * A + _penalty_gradient(prob, x)


def sampled_loss(prob: CompositeProblem, i: int, x, batch: SampleBatch) -> float:
    """Mean loss over the batch (the quantity whose gradient the stochastic
    oracle returns; used by the finite-difference check)."""
    _validate_batch(prob, i, batch)
    return float(np.mean(per_sample_losses(prob, i, x)[batch.indices]))


def _validate_batch(prob: CompositeProblem, i: int, batch: SampleBatch) -> None:
    _check_agent(prob, i)
    if batch.agent != i:
        raise IndexOutOfRange(f"batch belongs to agent {batch.agent}, not {i}")
    N = prob.local_size(i)
    if batch.indices.min() < 0 or batch.indices.max() >= N:
        raise IndexOutOfRange(f"batch indices outside [0, {N})")


def stochastic_gradient(prob: CompositeProblem, i: int, x, batch: SampleBatch) -> np.ndarray:
    """Mean of per-sample gradients over the batch. With the batch covering
    the whole local dataset in order this reproduces ``full_gradient``
    bit for bit."""
    _validate_batch(prob, i, batch)
    return per_sample_gradients(prob, i, x)[batch.indices].mean(axis=0)


def full_batch(prob: CompositeProblem, i: int) -> SampleBatch:
    return SampleBatch(i, np.arange(prob.local_size(i)))


def full_gradient(prob: CompositeProblem, i: int, x) -> np.ndarray:
    """Exact local gradient: the empirical expectation of the stochastic one."""
    return stochastic_gradient(prob, i, x, full_batch(prob, i))


def global_mean_gradient(prob: CompositeProblem, xbar) -> np.ndarray:
    """(1/n) sum_i of the local full gradients, all evaluated at the same point."""
    acc = np.zeros(prob.p)
    for i in range(prob.n):
        acc += full_gradient(prob, i, xbar)
    return acc / prob.n


def smooth_value(prob: CompositeProblem, i: int, x) -> float:
    """Local smooth objective f_i(x): mean per-sample loss plus penalty."""
    return float(np.mean(per_sample_losses(prob, i, x)))


def h_value(prob: CompositeProblem, i: int, y) -> float:
    """Local nonsmooth value: l1_weight * ||y||_1, or zero."""
    _check_agent(prob, i)
    if prob.regularizer == "none":
        return 0.0
    return float(prob.l1_weight * np.sum(np.abs(y)))


def soft_threshold(v: np.ndarray, t: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def prox_h(prob: CompositeProblem, i: int, v, c: float) -> np.ndarray:
    """Proximal map of the local regularizer at v with scale c > 0.

    For l1 this is componentwise soft thresholding at ``c * l1_weight``; for
    no regularizer it is the identity.
    """
    _check_agent(prob, i)
    if c <= 0:
        raise NonPositiveScale(f"prox scale must be positive, got {c}")
    v = np.asarray(v, dtype=float)
    if prob.regularizer == "none":
        return v.copy()
    return soft_threshold(v, c * prob.l1_weight)


def estimate_smoothness(prob: CompositeProblem) -> float:
    """Upper bound on the per-sample gradient Lipschitz constant.

    The data term contributes ``curvature(kind) * max_samples ||a||^2``
    (curvature 1 for least_squares and nonconvex_robust, 1/4 for logistic);
    the bounded penalty contributes ``2 * alpha``. Bounding each sample's
    curvature bounds the mean-squared version as well.
    """
    worst = 0.0
    for A in prob.features:
        if A.shape[0]:
            worst = max(worst, float(np.max(np.sum(A * A, axis=1))))
    return _CURVATURE[prob.kind] * worst + 2.0 * prob.alpha


def empirical_sigma_sq(prob: CompositeProblem, xs) -> float:
    """Stacked empirical gradient variance: sum over agents of the mean
    squared deviation of per-sample gradients from the local full gradient,
    each agent evaluated at its own point ``xs[i]``."""
    xs = np.asarray(xs, dtype=float)
    if xs.ndim == 1:
        xs = np.tile(xs, (prob.n, 1))
    total = 0.0
    for i in range(prob.n):
        G = per_sample_gradients(prob, i, xs[i])
        total += float(np.mean(np.sum((G - G.mean(axis=0)) ** 2, axis=1)))
    return total


def draw_batch(prob: CompositeProblem, i: int, rng, size: int) -> SampleBatch:
    """Uniform-with-replacement batch from agent i's local dataset."""
    _check_agent(prob, i)
    if size < 1:
        raise IndexOutOfRange(f"batch size must be >= 1, got {size}")
    return SampleBatch(i, rng.integers(0, prob.local_size(i), size=size))


def make_problem(kind: str, n: int, p: int, samples_per_agent: int, seed: int, *,
                 regularizer: str = "none", l1_weight: float = 0.0,
                 alpha: float = 0.0, noniid: bool = False,
                 noise_std: float = 0.1) -> CompositeProblem:
    """Synthesize an n-agent problem with a planted sparse ground truth.

    Features are Gaussian scaled by 1/sqrt(p) so per-sample curvature stays
    O(1). With ``noniid=True`` samples are sorted by label before being
    split into contiguous per-agent chunks (label partitioning); otherwise a
    seeded permutation spreads them evenly.
    """
    if n < 1 or p < 1 or samples_per_agent < 1:
        raise ProblemError("n, p and samples_per_agent must be positive")
    rng = np.random.default_rng(seed)
    x_true = np.zeros(p)
    nnz = max(1, p // 4)
    support = rng.choice(p, size=nnz, replace=False)
    x_true[support] = rng.normal(0.0, 1.0, size=nnz)

    N = n * samples_per_agent
    A = rng.standard_normal((N, p)) / np.sqrt(p)
    margins = A @ x_true + noise_std * rng.standard_normal(N)
    if kind == "logistic":
        b = np.where(margins >= 0.0, 1.0, -1.0)
    else:
        b = margins

    order = np.argsort(b, kind="stable") if noniid else rng.permutation(N)
    feats, labs = [], []
    for i in range(n):
        rows = order[i * samples_per_agent:(i + 1) * samples_per_agent]
        feats.append(A[rows].copy())
        labs.append(b[rows].copy())
    return CompositeProblem(kind, feats, labs, regularizer=regularizer,
                            l1_weight=l1_weight, alpha=alpha)


def save_dataset(prob: CompositeProblem, csv_path, manifest_path) -> None:
    """Write all samples as CSV rows (features then label) plus a JSON
    manifest mapping agents to row ranges."""
    rows = np.vstack([np.column_stack([A, b]) for A, b in zip(prob.features, prob.labels)])
    np.savetxt(csv_path, rows, delimiter=",", fmt="%.17g")
    ranges, start = [], 0
    for i in range(prob.n):
        stop = start + prob.local_size(i)
        ranges.append([start, stop])
        start = stop
    manifest = {"n": prob.n, "p": prob.p, "ranges": ranges}
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(csv_path, manifest_path, *, kind: str,
                 regularizer: str = "none", l1_weight: float = 0.0,
                 alpha: float = 0.0) -> CompositeProblem:
    """Rebuild a problem from the CSV + manifest pair written by
    ``save_dataset``; loss configuration is supplied by the caller."""
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    n, p = int(manifest["n"]), int(manifest["p"])
    rows = np.loadtxt(csv_path, delimiter=",", ndmin=2)
    if rows.shape[1] != p + 1:
        raise ProblemError(f"CSV has {rows.shape[1]} columns, manifest says p={p}")
    ranges = manifest["ranges"]
    if len(ranges) != n:
        raise ProblemError("manifest agent count does not match ranges")
    feats, labs = [], []
    for start, stop in ranges:
        if not (0 <= start < stop <= rows.shape[0]):
            raise ProblemError(f"manifest range [{start}, {stop}) out of bounds")
        feats.append(rows[start:stop, :p].copy())
        labs.append(rows[start:stop, p].copy())
    return CompositeProblem(kind, feats, labs, regularizer=regularizer,
                            l1_weight=l1_weight, alpha=alpha)
