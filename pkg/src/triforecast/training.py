"""Mini-batch training with Adam, early stopping on validation MSE.

Batch order is drawn from a seeded generator and evaluation reduces in a
fixed order, so a rerun with the same seed reproduces every number bit for
bit. The best-validation parameter snapshot is restored before returning.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ConfigurationError, NonFiniteError, Tensor, adam_step, mse, no_grad, zero_grad
from .data import WindowDataset
from .model import Forecaster, save_checkpoint

_EVAL_CHUNK = 256


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 10
    patience: int = 3
    seed: int = 0

    def validate(self):
        for name, v in (("lr", self.lr), ("batch_size", self.batch_size),
                        ("max_epochs", self.max_epochs), ("patience", self.patience)):
            if v <= 0:
                raise ConfigurationError(f"{name} must be positive, got {v}")


@dataclass
class EpochStats:
    train_loss: float
    val_mse: float
    val_mae: float
    wall_seconds: float


@dataclass
class RunHistory:
    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    wall_seconds: float = 0.0
    checkpoint_path: str | None = None

    @property
    def best(self) -> EpochStats:
        return self.epochs[self.best_epoch]

    def to_json_dict(self) -> dict:
        return {
            "epochs": [
                {
                    "epoch": i,
                    "train_loss": e.train_loss,
                    "val_mse": e.val_mse,
                    "val_mae": e.val_mae,
                    "wall_seconds": e.wall_seconds,
                }
                for i, e in enumerate(self.epochs)
            ],
            "best_epoch": self.best_epoch,
            "metrics": {"val_mse": self.best.val_mse, "val_mae": self.best.val_mae},
            "wall_seconds": self.wall_seconds,
            "checkpoint_path": self.checkpoint_path,
        }


class EarlyStopping:
    """Stop after `patience` consecutive epochs without a strict improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = float("inf")
        self.bad_epochs = 0

    def update(self, val_mse: float) -> bool:
        if val_mse < self.best:
            self.best = val_mse
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


def evaluate(model, windows: WindowDataset, chunk: int = _EVAL_CHUNK) -> dict:
    """Mean squared and absolute error over every window and horizon step.

    Pure: no graph is built and no parameter is touched; two calls agree
    bitwise.
    """
    n = len(windows)
    if n < 1:
        raise ConfigurationError("evaluate needs at least one window")
    sq_sum = 0.0
    abs_sum = 0.0
    count = 0
    with no_grad():
        for start in range(0, n, chunk):
            idx = range(start, min(start + chunk, n))
            x, y = windows.stack(idx)
            pred = model.forward(x)
            diff = pred.data - y
            sq_sum += float(np.sum(diff * diff))
            abs_sum += float(np.sum(np.abs(diff)))
            count += diff.size
    return {"mse": sq_sum / count, "mae": abs_sum / count}


def persistence_baseline(windows: WindowDataset, chunk: int = _EVAL_CHUNK) -> dict:
    """Repeat each window's last observed value across the horizon."""
    n = len(windows)
    if n < 1:
        raise ConfigurationError("persistence_baseline needs at least one window")
    sq_sum = 0.0
    abs_sum = 0.0
    count = 0
    for start in range(0, n, chunk):
        idx = range(start, min(start + chunk, n))
        x, y = windows.stack(idx)
        pred = np.repeat(x[:, :, -1:], y.shape[-1], axis=-1)
        diff = pred - y
        sq_sum += float(np.sum(diff * diff))
        abs_sum += float(np.sum(np.abs(diff)))
        count += diff.size
    return {"mse": sq_sum / count, "mae": abs_sum / count}


def train(
    model: Forecaster,
    train_windows: WindowDataset,
    val_windows: WindowDataset,
    cfg: TrainConfig,
    checkpoint_path=None,
    checkpoint_extras: dict | None = None,
) -> RunHistory:
    """Shuffled mini-batch MSE training with best-epoch restore.

    Raises NonFiniteError naming the epoch and batch if the loss ever
    leaves the finite range.
    """
    cfg.validate()
    if len(train_windows) < 1 or len(val_windows) < 1:
        raise ConfigurationError("train and validation sets each need at least one window")
    rng = np.random.default_rng(cfg.seed)
    params = model.parameter_list()
    history = RunHistory()
    stopper = EarlyStopping(cfg.patience)
    best_state: dict | None = None
    t_start = time.perf_counter()
    n = len(train_windows)
    for epoch in range(cfg.max_epochs):
        t_epoch = time.perf_counter()
        order = rng.permutation(n)
        loss_sum = 0.0
        batches = 0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start: start + cfg.batch_size]
            x, y = train_windows.stack(idx)
            try:
                loss = mse(model.forward(x), Tensor(y))
            except NonFiniteError as e:
                raise NonFiniteError(f"non-finite loss at epoch {epoch}, batch {bi}: {e}") from e
            zero_grad(params)
            loss.backward()
            adam_step(params, lr=cfg.lr)
            loss_sum += loss.item()
            batches += 1
        val = evaluate(model, val_windows)
        history.epochs.append(
            EpochStats(
                train_loss=loss_sum / batches,
                val_mse=val["mse"],
                val_mae=val["mae"],
                wall_seconds=time.perf_counter() - t_epoch,
            )
        )
        if stopper.update(val["mse"]):
            history.best_epoch = epoch
            best_state = {name: p.data.copy() for name, p in model.named_parameters()}
        if stopper.should_stop:
            break
    if best_state is not None:
        for name, p in model.named_parameters():
            np.copyto(p.data, best_state[name])
    history.wall_seconds = time.perf_counter() - t_start
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model, extra_arrays=checkpoint_extras)
        history.checkpoint_path = str(checkpoint_path)
    return history


__all__ = [
    "TrainConfig",
    "EpochStats",
    "RunHistory",
    "EarlyStopping",
    "evaluate",
    "persistence_baseline",
    "train",
]
