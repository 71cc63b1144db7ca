"""Alternating SNN/TNN training, the separate-learning ablation and the baseline.

One iteration ``t`` is one epoch.  In alternating mode even ``t`` updates the
switcher with the task network frozen, odd ``t`` updates the task network with
the switcher frozen but still differentiated through (the stack is built from
the live TNN weights, so their gradient includes the path through the
switcher).  Both phases minimize the same cross-entropy.

Batch order is a pure function of ``(seed, role, role_epoch)`` where ``role``
is the network being updated and ``role_epoch`` counts that network's
epochs.  This is what makes the alternating run with a constant all-ones
scaler replay the baseline run exactly.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .data import DatasetHandle
from .exceptions import DataEmpty
from .nn import TNNModel, forward
from .switcher import ScalingFactors, SNNModel, classify_factors, compute_factors
from .tensor import Tape, Tensor, backward, sgd_step, softmax_xent

log = logging.getLogger(__name__)

_ROLE_SEED = {"tnn": 1, "snn": 2}


@dataclass
class TrainConfig:
    batch_size: int = 64
    lr: float = 0.1
    epochs: int = 20  # T, the maximal number of iterations
    patience: int = 5
    min_delta: float = 1e-4
    mode: str = "alternating"  # alternating | separate | baseline
    seed: int = 0
    lr_decay: float = 1.0  # multiplicative step decay; 1.0 keeps lr constant
    lr_step: int = 0  # role epochs between decays (0 disables)
    eval_batch: int = 2000
    clip_norm: float = 0.0  # global gradient-norm cap per step; 0 disables

    def __post_init__(self):
        if self.batch_size < 1 or self.lr <= 0 or self.patience < 1 or self.epochs < 0 or self.clip_norm < 0:
            raise ValueError(f"invalid training config {self}")
        if self.mode not in ("alternating", "separate", "baseline"):
            raise ValueError(f"unknown mode {self.mode!r}")

    def lr_at(self, role_epoch: int) -> float:
        if self.lr_step <= 0:
            return self.lr
        return self.lr * self.lr_decay ** (role_epoch // self.lr_step)


@dataclass
class PhaseState:
    t: int = 0
    active: str = "snn"
    best_loss: float = float("inf")
    epochs_since_improvement: int = 0


@dataclass
class EpochRecord:
    t: int
    phase: str
    train_loss: float
    test_acc: float
    counts: list[tuple[int, int, int]]


@dataclass
class RunLog:
    layer_sizes: list[int] = field(default_factory=list)
    rows: list[EpochRecord] = field(default_factory=list)

    def append(self, row: EpochRecord) -> None:
        if self.rows and row.t <= self.rows[-1].t:
            raise ValueError("run log rows must be strictly increasing in t")
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)


class Scaler(Protocol):
    def parameters(self) -> list[Tensor]: ...


class ConstantScaler:
    """All-ones factors independent of the TNN weights; has no parameters."""

    def parameters(self) -> list[Tensor]:
        return []

    def set_requires_grad(self, flag: bool) -> None:
        pass


def factors_for(scaler, tnn: TNNModel) -> ScalingFactors | None:
    if scaler is None:
        return None
    if isinstance(scaler, ConstantScaler):
        return ScalingFactors.ones(tnn)
    return compute_factors(scaler, tnn)


def clip_gradients(params: list[Tensor], max_norm: float) -> float:
    """Rescale gradients in place so their joint L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.vdot(p.grad, p.grad)) for p in params if p.grad is not None)))
    if total > max_norm:
        for p in params:
            if p.grad is not None:
                p.grad *= max_norm / total
    return total


def stop_check(state: PhaseState, epoch_loss: float, patience: int, min_delta: float = 1e-4) -> str:
    """Update ``state`` with one epoch's loss; "stop" once it stalls for ``patience`` epochs."""
    if epoch_loss <= state.best_loss - min_delta:
        state.best_loss = epoch_loss
        state.epochs_since_improvement = 0
        return "continue"
    state.best_loss = min(state.best_loss, epoch_loss)
    state.epochs_since_improvement += 1
    return "stop" if state.epochs_since_improvement >= patience else "continue"


def batch_order(n: int, seed: int, role: str, role_epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, _ROLE_SEED[role], role_epoch]).permutation(n)


def predict_logits(tnn: TNNModel, scaler, X: np.ndarray, batch: int = 2000) -> np.ndarray:
    """Inference logits (no tape, eval-mode batchnorm)."""
    g = factors_for(scaler, tnn)
    mode = "eval" if tnn.is_conv else "train"
    out = [forward(tnn, X[i : i + batch], g, mode).data for i in range(0, len(X), batch)]
    return np.concatenate(out) if out else np.zeros((0, tnn.num_classes))


def evaluate(tnn: TNNModel, snn, data: DatasetHandle | tuple, batch: int = 2000) -> float:
    """Argmax accuracy on the test split (ties resolve to the lowest class)."""
    if isinstance(data, DatasetHandle):
        X, y = data.X_test, data.y_test
    else:
        X, y = data
    if len(y) == 0:
        raise DataEmpty("no samples to evaluate")
    logits = predict_logits(tnn, snn, X, batch)
    return float(np.mean(np.argmax(logits, axis=1) == y))


def _counts(tnn: TNNModel, scaler) -> list[tuple[int, int, int]]:
    g = factors_for(scaler, tnn)
    if g is None:
        g = ScalingFactors.ones(tnn)
    return classify_factors(g)


def run_epoch(tnn: TNNModel, scaler, data: DatasetHandle, cfg: TrainConfig, role: str, role_epoch: int) -> float:
    """One pass over the training set updating ``role``'s parameters; returns mean batch loss."""
    data.require_train()
    updating = tnn.parameters() if role == "tnn" else (scaler.parameters() if scaler is not None else [])
    tnn.set_requires_grad(role == "tnn")
    if scaler is not None:
        scaler.set_requires_grad(role == "snn")
    lr = cfg.lr_at(role_epoch)
    order = batch_order(data.n_train, cfg.seed, role, role_epoch)
    losses = []
    try:
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = data.X_train[idx], data.y_train[idx]
            with Tape() as tape:
                logits = forward(tnn, xb, factors_for(scaler, tnn))
                loss = softmax_xent(logits, yb)
            if updating:
                backward(loss)
                if cfg.clip_norm:
                    clip_gradients(updating, cfg.clip_norm)
                sgd_step(updating, lr)
            losses.append(loss.item())
            tape.clear()
    finally:
        tnn.set_requires_grad(True)
        if scaler is not None:
            scaler.set_requires_grad(True)
    return float(np.mean(losses))


def _record(run_log: RunLog, tnn, scaler, data, cfg, t, phase, loss) -> None:
    acc = evaluate(tnn, scaler, data, cfg.eval_batch) if data.n_test else float("nan")
    row = EpochRecord(t, phase, loss, acc, _counts(tnn, scaler))
    run_log.append(row)
    log.info("t=%d phase=%s loss=%.5f acc=%.4f counts=%s", t, phase, loss, acc, row.counts)


def baseline_train(tnn: TNNModel, data: DatasetHandle, cfg: TrainConfig) -> tuple[TNNModel, RunLog]:
    """Plain SGD on cross-entropy, no scaling."""
    data.require_train()
    run_log = RunLog(tnn.scalable_sizes())
    state = PhaseState(active="tnn")
    for e in range(cfg.epochs):
        state.t = e
        loss = run_epoch(tnn, None, data, cfg, "tnn", e)
        _record(run_log, tnn, None, data, cfg, e, "tnn", loss)
        if stop_check(state, loss, cfg.patience, cfg.min_delta) == "stop":
            break
    return tnn, run_log


def alternating_train(tnn: TNNModel, snn, data: DatasetHandle, cfg: TrainConfig,
                      callback=None) -> tuple[TNNModel, object, RunLog]:
    """Alternate SNN (even t) and TNN (odd t) epochs until T or the loss stalls.

    ``snn`` may be a :class:`ConstantScaler`, in which case the SNN epochs
    only measure the loss.
    """
    data.require_train()
    run_log = RunLog(tnn.scalable_sizes())
    state = PhaseState()
    for t in range(cfg.epochs):
        state.t = t
        state.active = "snn" if t % 2 == 0 else "tnn"
        loss = run_epoch(tnn, snn, data, cfg, state.active, t // 2)
        _record(run_log, tnn, snn, data, cfg, t, state.active, loss)
        if callback is not None:
            callback(t, tnn, snn)
        if stop_check(state, loss, cfg.patience, cfg.min_delta) == "stop":
            break
    return tnn, snn, run_log


def separate_train(tnn: TNNModel, snn: SNNModel, data: DatasetHandle,
                   cfg: TrainConfig) -> tuple[TNNModel, SNNModel, RunLog]:
    """Train the TNN alone, then freeze it and train only the SNN."""
    tnn, first = baseline_train(tnn, data, cfg)
    run_log = RunLog(tnn.scalable_sizes(), list(first.rows))
    t0 = first.rows[-1].t + 1 if first.rows else 0
    state = PhaseState(active="snn")
    for e in range(cfg.epochs):
        state.t = t0 + e
        loss = run_epoch(tnn, snn, data, cfg, "snn", e)
        _record(run_log, tnn, snn, data, cfg, t0 + e, "snn", loss)
        if stop_check(state, loss, cfg.patience, cfg.min_delta) == "stop":
            break
    return tnn, snn, run_log


def train(tnn: TNNModel, snn, data: DatasetHandle, cfg: TrainConfig):
    """Dispatch on ``cfg.mode``; always returns ``(tnn, snn_or_None, log)``."""
    if cfg.mode == "baseline":
        tnn, run_log = baseline_train(tnn, data, cfg)
        return tnn, None, run_log
    if cfg.mode == "separate":
        return separate_train(tnn, snn, data, cfg)
    return alternating_train(tnn, snn, data, cfg)
