"""Optimization loop, binary-classification metrics, and training history.

Training runs deterministic mini-batch gradient descent on the mean focal
loss: all shuffling comes from one seeded generator, gradient reductions are
ordered, and the same seed + config always reproduces the history bit for
bit.  Early stopping tracks validation F1 and restores the best parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Array, ParamStore
from .data import Dataset
from .errors import ConfigError, DataError, NumericError
from .model import ModelConfig, loss_and_grads, predict

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 8
    lr: float = 1e-3
    optimizer: str = "adam"
    gamma: float | None = None  # None: use the model config's focal gamma
    patience: int = 20
    seed: int = 0
    threshold: float = 0.5

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        if self.gamma is not None and self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must be in (0,1), got {self.threshold}")


@dataclass
class Metrics:
    """Confusion counts and P/R/F1 for the positive class.

    Ratios with a zero denominator are defined as 0 (conservative; keeps F1
    well-defined on degenerate predictions).
    """

    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, tn: int) -> "Metrics":
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = (
            2.0 * precision * recall / (precision + recall)
            if precision + recall > 0
            else 0.0
        )
        return cls(tp=tp, fp=fp, fn=fn, tn=tn, precision=precision, recall=recall, f1=f1)

    @property
    def accuracy(self) -> float:
        total = self.tp + self.fp + self.fn + self.tn
        return (self.tp + self.tn) / total if total else 0.0


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall (0 when both are 0)."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val: Metrics


@dataclass
class AdamState:
    m: Array
    v: Array
    t: int = 0


def step_sgd(param: Array, grad: Array, lr: float) -> None:
    param -= lr * grad


def step_adam(
    param: Array,
    grad: Array,
    state: AdamState,
    lr: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> None:
    """One first/second-moment update with bias correction, in place."""
    if param.shape != grad.shape:
        raise ConfigError(f"adam: param {param.shape} vs grad {grad.shape}")
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * (grad * grad)
    m_hat = state.m / (1.0 - beta1**state.t)
    v_hat = state.v / (1.0 - beta2**state.t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Optimizer:
    """Applies the configured update rule across a ParamStore."""

    def __init__(self, store: ParamStore, cfg: TrainConfig):
        self.store = store
        self.cfg = cfg
        self._adam: dict[str, AdamState] = {}
        if cfg.optimizer == "adam":
            for p in store.paths():
                v = store.value(p)
                self._adam[p] = AdamState(m=np.zeros_like(v), v=np.zeros_like(v))

    def step(self) -> None:
        for p in self.store.paths():
            grad = self.store.grad(p)
            if self.cfg.optimizer == "sgd":
                step_sgd(self.store.value(p), grad, self.cfg.lr)
            else:
                step_adam(self.store.value(p), grad, self._adam[p], self.cfg.lr)


def evaluate(
    store: ParamStore, model_cfg: ModelConfig, ds: Dataset, threshold: float = 0.5
) -> Metrics:
    """Confusion counts over `ds` with y_hat >= threshold predicting positive."""
    if len(ds) == 0:
        raise DataError("evaluate: empty dataset")
    tp = fp = fn = tn = 0
    for s in ds.samples:
        positive = predict(store, s, model_cfg) >= threshold
        if s.label == 1:
            if positive:
                tp += 1
            else:
                fn += 1
        else:
            if positive:
                fp += 1
            else:
                tn += 1
    return Metrics.from_counts(tp, fp, fn, tn)


def train(
    store: ParamStore,
    model_cfg: ModelConfig,
    ds: Dataset,
    cfg: TrainConfig,
    val_ds: Dataset | None = None,
) -> list[EpochRecord]:
    """Train in place; returns per-epoch history.

    Validation defaults to the training set when no `val_ds` is given.  The
    parameters left in `store` afterwards are the ones whose validation F1
    equals the maximum over the history.
    """
    neg, pos = ds.class_counts()
    if neg == 0 or pos == 0:
        raise DataError("train: dataset must contain both classes")
    if val_ds is None:
        val_ds = ds
    gamma = model_cfg.gamma if cfg.gamma is None else cfg.gamma
    rng = np.random.default_rng(cfg.seed)
    optimizer = Optimizer(store, cfg)
    history: list[EpochRecord] = []
    best_f1 = -1.0
    best_params: ParamStore | None = None
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(ds.samples))
        batch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [ds.samples[i] for i in order[start : start + cfg.batch_size]]
            try:
                loss = loss_and_grads(batch, store, model_cfg, gamma=gamma)
            except NumericError as exc:
                raise NumericError(
                    f"epoch {epoch}, batch {start // cfg.batch_size}: {exc}"
                ) from exc
            if not np.isfinite(loss):
                raise NumericError(
                    f"epoch {epoch}, batch {start // cfg.batch_size}: loss diverged"
                )
            optimizer.step()
            batch_losses.append(loss)
        train_loss = float(sum(batch_losses) / len(batch_losses))
        metrics = evaluate(store, model_cfg, val_ds, cfg.threshold)
        history.append(EpochRecord(epoch=epoch, train_loss=train_loss, val=metrics))
        if metrics.f1 >= best_f1:
            # Ties keep the latest (better-converged) parameters; only a
            # strict improvement resets the early-stop counter.
            if metrics.f1 > best_f1:
                stale = 0
            else:
                stale += 1
            best_f1 = metrics.f1
            best_params = store.copy()
        else:
            stale += 1
        if stale >= cfg.patience:
            break
    if best_params is not None:
        for p in store.paths():
            store.value(p)[...] = best_params.value(p)
    return history


def history_lines(history: list[EpochRecord]) -> list[str]:
    """Line-delimited key=value records, full float precision."""
    return [
        f"epoch={rec.epoch} loss={rec.train_loss!r} "
        f"precision={rec.val.precision!r} recall={rec.val.recall!r} "
        f"f1={rec.val.f1!r}"
        for rec in history
    ]
