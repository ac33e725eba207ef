"""Recursive-momentum stochastic gradient estimator, one state per agent.

The estimate after a step to ``x_new`` with momentum parameter ``a`` is

    v <- g(x_new, batch) + (1 - a) * (v_old - g(x_old, batch))

where both gradients are evaluated on the *same* freshly drawn batch; reusing
the batch is what cancels the variance of the correction term. ``a = 1``
discards the history and falls back to a plain stochastic gradient.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problems import (CompositeProblem, draw_batch, full_batch,
                       full_gradient, stochastic_gradient)


class EstimatorError(Exception):
    pass


class InvalidBatch(EstimatorError):
    """Initialization batch size below one."""


class MomentumOutOfRange(EstimatorError):
    """Momentum parameter outside (0, 1]."""


@dataclass
class MomentumState:
    """Current gradient estimate and the iterate it was anchored at."""

    v: np.ndarray
    last_x: np.ndarray


def init_momentum(prob: CompositeProblem, i: int, x0, m0: int, rng,
                  full: bool = False) -> MomentumState:
    """Average of ``m0`` independently sampled gradients at ``x0``.

    With ``full=True`` the sampler is bypassed and the exact local gradient
    is used (the deterministic mode; ``m0`` and ``rng`` are then unused).
    """
    x0 = np.asarray(x0, dtype=float).copy()
    if full:
        return MomentumState(v=full_gradient(prob, i, x0), last_x=x0)
    if m0 < 1:
        raise InvalidBatch(f"initialization batch size must be >= 1, got {m0}")
    batch = draw_batch(prob, i, rng, m0)
    return MomentumState(v=stochastic_gradient(prob, i, x0, batch), last_x=x0)


def update_momentum(state: MomentumState, prob: CompositeProblem, i: int,
                    x_new, a: float, rng, batch_size: int = 1) -> MomentumState:
    """One recursive-momentum refresh at the new iterate.

    ``batch_size = 0`` selects the deterministic full-data batch (no rng
    consumption); otherwise ``batch_size`` samples are drawn uniformly with
    replacement and shared by both gradient evaluations.
    """
    if not (0.0 < a <= 1.0):
        raise MomentumOutOfRange(f"momentum parameter must be in (0, 1], got {a}")
    x_new = np.asarray(x_new, dtype=float).copy()
    if batch_size == 0:
        batch = full_batch(prob, i)
    else:
        batch = draw_batch(prob, i, rng, batch_size)
    g_new = stochastic_gradient(prob, i, x_new, batch)
    g_old = stochastic_gradient(prob, i, state.last_x, batch)
    v = g_new + (1.0 - a) * (state.v - g_old)
    return MomentumState(v=v, last_x=x_new)
