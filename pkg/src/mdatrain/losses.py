"""Per-branch training losses and the adaptive beta scheduler.

A branch's loss is its self loss (cross-entropy on its own DA's view) plus a
mutual loss over every other branch k: a direct term against the ground-truth
labels y_k and a knowledge-distillation term against branch k's own
(gradient-detached) prediction, blended by beta_k. beta_k tracks a momentum
moving average of how well branch k currently fits its data, so KD gains
weight only once the teachers become trustworthy.

Loss values are accumulated in float64 regardless of the activation dtype;
gradients are cast back to the prediction dtype.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, SizeError
from .tensor import LOG_EPS, Tensor, add, record_op, scale

BETA_MODES = ("adaptive", "fixed", "linear")


@dataclass
class BetaState:
    """The per-branch beta vector and its scheduling rule."""

    n: int
    momentum: float = 0.9
    mode: str = "adaptive"
    fixed_value: float = 0.0
    total_steps: int = 0
    step_counter: int = 0
    beta: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.mode not in BETA_MODES:
            raise ContractError(f"unknown beta mode: {self.mode!r}")
        if self.mode == "linear" and self.total_steps <= 0:
            raise ContractError("linear beta mode needs total_steps > 0")
        if not 0.0 <= self.momentum <= 1.0:
            raise ContractError("momentum must be in [0,1]")
        if self.beta is None:
            init = self.fixed_value if self.mode == "fixed" else 0.0
            self.beta = np.full(self.n, float(init), dtype=np.float64)

    def on_batch_end(self, batch_fits) -> None:
        """Advance the schedule once per training batch."""
        if self.mode == "adaptive":
            for k, f in enumerate(batch_fits):
                update_beta(self, k, float(f))
        self.step_counter += 1
        if self.mode == "linear":
            self.beta[:] = min(self.step_counter / self.total_steps, 1.0)


def update_beta(state: BetaState, k: int, batch_fit: float) -> BetaState:
    """Momentum moving-average update of beta_k from the batch fit."""
    if not 0.0 <= batch_fit <= 1.0:
        raise ContractError(f"batch_fit must be in [0,1], got {batch_fit}")
    if state.mode == "adaptive":
        m = state.momentum
        state.beta[k] = m * state.beta[k] + (1.0 - m) * batch_fit
    # fixed and linear modes ignore the fit and follow their own rule
    return state


def _rows(a: np.ndarray) -> np.ndarray:
    return a.reshape(1, -1) if a.ndim == 1 else a


def cross_entropy_soft(target, pred: Tensor) -> Tensor:
    """Soft-target cross-entropy, mean over the batch.

    `target` may be a Tensor or a numpy array; gradient flows only to `pred`.
    log is clamped at 1e-12 so zero predictions stay finite.
    """
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if t.shape != pred.shape:
        raise SizeError(f"target shape {t.shape} vs pred shape {pred.shape}")
    t64 = _rows(t).astype(np.float64)
    p64 = _rows(pred.data).astype(np.float64)
    nrows = t64.shape[0]
    clipped = np.maximum(p64, LOG_EPS)
    value = -(t64 * np.log(clipped)).sum(axis=1).mean()
    out = Tensor(np.float64(value).reshape(()), dtype=np.float64)

    def back(g):
        gp = -float(g) * (t64 / clipped) * (p64 > LOG_EPS) / nrows
        return [gp.reshape(pred.shape).astype(pred.data.dtype)]

    return record_op(out, [pred], back)


def self_loss(y_i, yhat_ii: Tensor) -> Tensor:
    """Branch i's cross-entropy on its own DA's view."""
    return cross_entropy_soft(y_i, yhat_ii)


def mutual_loss(i: int, labels, grid, beta: BetaState) -> Tensor:
    """Direct + KD loss of branch i against every other branch's view.

    grid[i][k] is branch i's softmax prediction on view k. Teacher outputs
    grid[k][k] enter detached, so no gradient reaches the teacher path.
    """
    n = beta.n
    if len(grid) != n or any(len(row) != n for row in grid):
        raise ContractError(f"prediction grid must be {n}x{n}")
    if len(labels) != n:
        raise ContractError(f"need {n} label sets, got {len(labels)}")
    total = None
    for k in range(n):
        if k == i:
            continue
        bk = float(beta.beta[k])
        direct = scale(cross_entropy_soft(labels[k], grid[i][k]), 1.0 - bk)
        kd = scale(cross_entropy_soft(grid[k][k].detach(), grid[i][k]), bk)
        term = add(direct, kd)
        total = term if total is None else add(total, term)
    if total is None:
        return Tensor(np.zeros(()), dtype=np.float64)
    return total


def total_loss(labels, grid, beta: BetaState, include_mutual: bool = True):
    """Overall loss: sum over branches of self + mutual.

    Returns (loss tensor, per-branch breakdown dicts with float components).
    """
    n = beta.n
    loss = None
    breakdown = []
    for i in range(n):
        l_self = self_loss(labels[i], grid[i][i])
        l_i = l_self
        l_mut_val = 0.0
        if include_mutual and n > 1:
            l_mut = mutual_loss(i, labels, grid, beta)
            l_mut_val = float(l_mut.data)
            l_i = add(l_self, l_mut)
        breakdown.append({"self": float(l_self.data), "mutual": l_mut_val,
                          "total": float(l_i.data)})
        loss = l_i if loss is None else add(loss, l_i)
    return loss, breakdown


def fit_measure(y_k, yhat_kk) -> float:
    """1 - L1(y, yhat)/2 per sample, averaged over the batch; always in [0,1]."""
    y = y_k.data if isinstance(y_k, Tensor) else np.asarray(y_k)
    p = yhat_kk.data if isinstance(yhat_kk, Tensor) else np.asarray(yhat_kk)
    if y.shape != p.shape:
        raise SizeError(f"shape mismatch: {y.shape} vs {p.shape}")
    y2 = _rows(y).astype(np.float64)
    p2 = _rows(p).astype(np.float64)
    fits = 1.0 - np.abs(y2 - p2).sum(axis=1) / 2.0
    return float(np.clip(fits.mean(), 0.0, 1.0))
