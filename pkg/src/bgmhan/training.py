"""Weighted-BCE training with AdamW, plateau LR decay, clipping, early stopping."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .embedding import EncodedBatch
from .tensor import ContractError, ShapeError, Tensor, WeightedBce, backward, square

logger = logging.getLogger(__name__)

# relative-to-best margin a validation accuracy must clear to count as improvement
IMPROVEMENT_EPS = 1e-6


class ConfigError(ValueError):
    pass


class WeightingError(ValueError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 32
    max_epochs: int = 50
    scheduler_patience: int = 3
    scheduler_factor: float = 0.1
    min_lr: float = 1e-7
    early_stop_patience: int = 10
    clip_max_norm: float = 1.0
    weight_decay: float = 1e-4
    decay_mode: str = "decoupled"
    dropout: float = 0.6
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> None:
        checks = [
            ("learning_rate", self.learning_rate > 0),
            ("batch_size", self.batch_size >= 1),
            ("max_epochs", self.max_epochs >= 1),
            ("scheduler_patience", self.scheduler_patience >= 1),
            ("scheduler_factor", 0.0 < self.scheduler_factor < 1.0),
            ("min_lr", self.min_lr > 0),
            ("early_stop_patience", self.early_stop_patience >= 1),
            ("clip_max_norm", self.clip_max_norm > 0),
            ("weight_decay", self.weight_decay >= 0),
            ("decay_mode", self.decay_mode in ("decoupled", "coupled")),
            ("dropout", 0.0 <= self.dropout < 1.0),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigError(f"invalid {name}: {getattr(self, name)!r}")


@dataclass
class TrainState:
    lr: float
    min_lr: float = 1e-7
    scheduler_patience: int = 3
    scheduler_factor: float = 0.1
    early_stop_patience: int = 10
    best_val_accuracy: float = -math.inf
    best_epoch: int = -1
    scheduler_counter: int = 0
    stop_counter: int = 0
    step: int = 0
    moments: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "TrainState":
        return cls(
            lr=cfg.learning_rate,
            min_lr=cfg.min_lr,
            scheduler_patience=cfg.scheduler_patience,
            scheduler_factor=cfg.scheduler_factor,
            early_stop_patience=cfg.early_stop_patience,
        )


# ---------------------------------------------------------------------------
# loss pieces


def class_weights(labels) -> tuple[float, float]:
    """``w_y = N / (2 N_y)`` for y in {0, 1}."""
    y = np.asarray(labels)
    n = y.size
    n1 = int(np.sum(y == 1))
    n0 = n - n1
    if n0 == 0 or n1 == 0:
        raise WeightingError(f"need both classes to weight them, got {n0} negatives and {n1} positives")
    return n / (2.0 * n0), n / (2.0 * n1)


def weighted_bce(preds, labels, weights=(1.0, 1.0), eps: float = 1e-12) -> Tensor:
    """Summed class-weighted binary cross-entropy; probabilities clamped to [eps, 1-eps]."""
    preds = preds if isinstance(preds, Tensor) else Tensor(preds)
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != preds.shape:
        raise ShapeError(f"predictions {preds.shape} vs labels {y.shape}")
    w = np.where(y == 1, weights[1], weights[0])
    return WeightedBce.apply(preds, labels=y, weights=w, eps=eps)


def decayed(p: Tensor) -> bool:
    """Weight matrices and the embedding table; not LayerNorm, biases or gates."""
    leaf = p.name.rsplit(".", 1)[-1] if p.name else ""
    return not (leaf.startswith("ln_") or leaf == "gamma" or leaf.startswith("b"))


def l2_penalty(params: Sequence[Tensor], lam: float, only_decayed: bool = True) -> Tensor:
    total = Tensor(0.0)
    if lam == 0:
        return total
    for p in params:
        if only_decayed and not decayed(p):
            continue
        total = total + square(p).sum()
    return total * lam


def clip_gradients(grads: list[np.ndarray], max_norm: float = 1.0) -> tuple[list[np.ndarray], float]:
    """Rescale in place so the global L2 norm is at most ``max_norm``.

    Returns the gradients and their norm before clipping.
    """
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return grads, norm


# ---------------------------------------------------------------------------
# state machines


def improved(state: TrainState, val_accuracy: float) -> bool:
    return val_accuracy > state.best_val_accuracy + IMPROVEMENT_EPS


def scheduler_step(state: TrainState, val_accuracy: float) -> TrainState:
    """Plateau decay: after ``scheduler_patience`` epochs without a new best,
    multiply lr by ``scheduler_factor`` (floored at ``min_lr``).

    Only the scheduler counter is touched; :func:`record_epoch` updates the
    best score and the early-stop counter.
    """
    if improved(state, val_accuracy):
        state.scheduler_counter = 0
        return state
    state.scheduler_counter += 1
    if state.scheduler_counter >= state.scheduler_patience:
        state.lr = max(state.lr * state.scheduler_factor, state.min_lr)
        state.scheduler_counter = 0
    return state


def early_stop_check(state: TrainState, val_accuracy: float) -> bool:
    """Advance the early-stop counter; True once it reaches the patience."""
    if improved(state, val_accuracy):
        state.stop_counter = 0
    else:
        state.stop_counter += 1
    return state.stop_counter >= state.early_stop_patience


def record_epoch(state: TrainState, epoch: int, val_accuracy: float) -> tuple[bool, bool]:
    """Run scheduler and early stop for one epoch, then update the best score.

    Returns (is_new_best, should_stop).
    """
    best = improved(state, val_accuracy)
    scheduler_step(state, val_accuracy)
    stop = early_stop_check(state, val_accuracy)
    if best:
        state.best_val_accuracy = val_accuracy
        state.best_epoch = epoch
    return best, stop


# ---------------------------------------------------------------------------
# optimizer


def optimizer_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray],
    state: TrainState,
    lr: float | None = None,
    weight_decay: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One AdamW step with bias correction and decoupled decay on ``decayed`` params."""
    lr = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p, g in zip(params, grads):
        if g.shape != p.shape:
            raise ShapeError(f"gradient {g.shape} does not match parameter {p.name} {p.shape}")
        key = p.name or id(p)
        m, v = state.moments.get(key, (None, None))
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.moments[key] = (m, v)
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        if weight_decay and decayed(p):
            p.data = p.data * (1.0 - lr * weight_decay) - update
        else:
            p.data = p.data - update


# ---------------------------------------------------------------------------
# loop


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    lr: float


@dataclass
class TrainResult:
    best_state: dict
    best_epoch: int
    best_val_accuracy: float
    history: list
    stopped_early: bool

    def history_lines(self) -> str:
        return "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in self.history)


def evaluate_loss(model, data: EncodedBatch, weights, batch_size: int = 256) -> tuple[float, float, np.ndarray]:
    """Mean weighted BCE, accuracy at threshold 0.5, probabilities."""
    probs = model.predict_proba(data, batch_size)
    loss = weighted_bce(Tensor(probs), data.labels, weights).item() / max(len(data), 1)
    acc = float(np.mean((probs >= 0.5) == (data.labels == 1))) if len(data) else 0.0
    return loss, acc, probs


def train(model, train_data: EncodedBatch, val_data: EncodedBatch, cfg: TrainConfig) -> TrainResult:
    """Full training protocol; restores the best-validation-accuracy parameters at the end."""
    cfg.validate()
    if len(train_data) == 0 or len(val_data) == 0:
        raise ConfigError("training and validation sets must be non-empty")
    weights = class_weights(train_data.labels)
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    state = TrainState.from_config(cfg)
    best_state = model.state_dict()
    stopped = False
    n = len(train_data)
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = train_data.subset(order[start : start + cfg.batch_size])
            probs = model.forward(batch, training=True, rng=rng)
            data_loss = weighted_bce(probs, batch.labels, weights) * (1.0 / len(batch))
            loss = data_loss
            if cfg.decay_mode == "coupled":
                loss = loss + l2_penalty(params, cfg.weight_decay)
            backward(loss, params)
            grads, _ = clip_gradients([p.grad for p in params], cfg.clip_max_norm)
            optimizer_step(
                params,
                grads,
                state,
                weight_decay=cfg.weight_decay if cfg.decay_mode == "decoupled" else 0.0,
                beta1=cfg.beta1,
                beta2=cfg.beta2,
                eps=cfg.adam_eps,
            )
            total += data_loss.item() * len(batch)
        for p in params:
            if not np.all(np.isfinite(p.data)):
                raise FloatingPointError(f"parameter {p.name} became non-finite in epoch {epoch}")
        val_loss, val_acc, _ = evaluate_loss(model, val_data, weights)
        state.history.append(EpochRecord(epoch, total / n, val_loss, val_acc, state.lr))
        best, stop = record_epoch(state, epoch, val_acc)
        if best:
            best_state = model.state_dict()
        logger.info("epoch %d loss %.4f val_loss %.4f val_acc %.4f lr %.2e", epoch, total / n, val_loss, val_acc, state.lr)
        if stop:
            stopped = True
            break
    model.load_state_dict(best_state)
    return TrainResult(best_state, state.best_epoch, state.best_val_accuracy, state.history, stopped)


def write_history(path, history) -> None:
    Path(path).write_text("".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in history))


def read_history(path) -> list[EpochRecord]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            out.append(EpochRecord(**json.loads(line)))
    return out
