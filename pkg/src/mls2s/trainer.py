"""Windowing, normalisation, chronological splits and the training loop."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import numeric as nm
from .errors import ContractError, InputError, NumericalError
from .numeric import AdamState, Tape, Tensor
from .pipeline import SpeedMatrix
from .seq2seq import MLS2SConfig, MLS2SParams, forward

log = logging.getLogger(__name__)


@dataclass
class WindowSample:
    X: np.ndarray  # n x d, NaN where missing
    Y: np.ndarray  # n x h, NaN where missing
    t_anchor: int  # slot index of the last history column
    mask: np.ndarray  # n x h, True where Y is observed

    @property
    def x_mask(self) -> np.ndarray:
        return ~np.isnan(self.X)


def make_windows(series: SpeedMatrix, d: int, h: int) -> list[WindowSample]:
    """Every stride-1 window with ``d`` history and ``h`` target slots."""
    if d < 1 or h < 1:
        raise ContractError(f"history and horizon must be >= 1 (got d={d}, h={h})")
    T = series.T
    if T < d + h:
        raise InputError(f"series of length {T} is shorter than history + horizon = {d + h}")
    vals = np.where(series.mask, series.values, np.nan)
    out = []
    for t in range(d - 1, T - h):
        Y = vals[:, t + 1:t + 1 + h].copy()
        out.append(WindowSample(vals[:, t - d + 1:t + 1].copy(), Y, t, ~np.isnan(Y)))
    return out


def split_dataset(windows: Sequence, fractions=(0.7, 0.1, 0.2)):
    """Chronological train/val/test split; sizes are floored in that order and
    the test split takes the remainder."""
    if len(fractions) != 3 or any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0):
        raise ContractError(f"fractions {fractions} must be three non-negative numbers summing to 1")
    windows = sorted(windows, key=lambda w: w.t_anchor)
    N = len(windows)
    n_train = int(math.floor(N * fractions[0] + 1e-9))
    n_val = int(math.floor(N * fractions[1] + 1e-9))
    parts = windows[:n_train], windows[n_train:n_train + n_val], windows[n_train + n_val:]
    for name, part in zip(("train", "val", "test"), parts):
        if not part:
            raise InputError(f"{name} split is empty for {N} windows with fractions {fractions}")
    return parts


@dataclass(frozen=True)
class Scaler:
    mean: float
    std: float

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def invert(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


def zscore(train_windows: Sequence[WindowSample]) -> Scaler:
    """Mean and std over the observed values of the slots the windows cover.

    Each time slot is counted once even if several windows overlap it.
    """
    slots: dict[int, np.ndarray] = {}
    for w in train_windows:
        d = w.X.shape[1]
        for j in range(d):
            slots.setdefault(w.t_anchor - d + 1 + j, w.X[:, j])
        for j in range(w.Y.shape[1]):
            slots.setdefault(w.t_anchor + 1 + j, w.Y[:, j])
    if not slots:
        raise InputError("zscore: no training windows")
    vals = np.concatenate([slots[k] for k in sorted(slots)])
    vals = vals[~np.isnan(vals)]
    if vals.size == 0:
        raise InputError("zscore: no observed training values")
    mean, std = float(vals.mean()), float(vals.std())
    if not std > 0:
        raise InputError(f"zscore: training data has zero variance (constant {mean})")
    return Scaler(mean, std)


def mae_loss(Y_hat: Tensor, Y, mask=None) -> Tensor:
    return nm.masked_mean_abs_error(Y_hat, Y, mask)


@dataclass
class TrainConfig:
    base_lr: float = 0.01
    decay_ratio: float = 0.1
    decay_epochs: tuple = (20, 40)
    epochs: int = 60
    batch_size: int = 16
    seed: int = 0
    history: int = 12
    horizon: int = 4
    tf_prob: float = 0.5

    def __post_init__(self):
        self.decay_epochs = tuple(int(e) for e in self.decay_epochs)
        if not 0 < self.decay_ratio <= 1:
            raise ContractError(f"decay_ratio must lie in (0, 1], got {self.decay_ratio}")
        if any(b <= a for a, b in zip(self.decay_epochs, self.decay_epochs[1:])):
            raise ContractError(f"decay_epochs {self.decay_epochs} must be strictly increasing")
        if self.base_lr <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ContractError("base_lr > 0, batch_size >= 1 and epochs >= 0 are required")


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Learning rate for 1-based ``epoch``: decays once per milestone passed."""
    passed = sum(1 for m in config.decay_epochs if epoch > m)
    return config.base_lr * config.decay_ratio ** passed


@dataclass
class EpochRecord:
    epoch: int
    train_mae: float
    val_mae: float
    lr: float
    seconds: float


@dataclass
class TrainResult:
    params: MLS2SParams
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_mae: float = float("nan")


def stack_batch(windows: Sequence[WindowSample], scaler: Scaler):
    """Stack windows row-wise into normalised arrays; missing inputs become 0."""
    X = np.concatenate([w.X for w in windows], axis=0)
    Y = np.concatenate([w.Y for w in windows], axis=0)
    mask = np.concatenate([w.mask for w in windows], axis=0)
    Xn = np.nan_to_num(scaler.apply(X), nan=0.0)
    Yn = np.nan_to_num(scaler.apply(Y), nan=0.0)
    return Xn, Yn, mask


def predict_windows(P, params: MLS2SParams, config: MLS2SConfig, windows: Sequence[WindowSample],
                    scaler: Scaler, batch_size: int = 256) -> np.ndarray:
    """De-normalised predictions, shape ``len(windows) x n x horizon``."""
    n = windows[0].X.shape[0]
    out = []
    for s in range(0, len(windows), batch_size):
        chunk = windows[s:s + batch_size]
        X, _, _ = stack_batch(chunk, scaler)
        pred = forward(P, X, params, config).data
        out.append(scaler.invert(pred).reshape(len(chunk), n, config.horizon))
    return np.concatenate(out, axis=0)


def truth_of(windows: Sequence[WindowSample]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([w.Y for w in windows]), np.stack([w.mask for w in windows])


def evaluate_mae(P, params, config, windows, scaler) -> float:
    pred = predict_windows(P, params, config, windows, scaler)
    Y, mask = truth_of(windows)
    return float(np.abs(pred - Y)[mask].mean())


def train(params: MLS2SParams, P, train_windows: Sequence[WindowSample], val_windows: Sequence[WindowSample],
          model_config: MLS2SConfig, config: TrainConfig, scaler: Scaler | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Mini-batch Adam on the masked MAE loss.

    Returns the parameters with the lowest validation MAE seen (the initial
    parameters when ``epochs == 0``) together with the per-epoch history.
    """
    if not train_windows or not val_windows:
        raise InputError("train and validation splits must be non-empty")
    scaler = scaler or zscore(train_windows)
    rng = np.random.default_rng(config.seed)
    named = params.named()
    state = AdamState()
    result = TrainResult(params.clone())
    best = math.inf
    order = np.arange(len(train_windows))
    for epoch in range(1, config.epochs + 1):
        lr = lr_at(epoch, config)
        t0 = time.perf_counter()
        rng.shuffle(order)
        total = weight = 0.0
        for s in range(0, len(order), config.batch_size):
            batch = [train_windows[i] for i in order[s:s + config.batch_size]]
            X, Y, mask = stack_batch(batch, scaler)
            if not mask.any():
                continue
            with Tape() as tape:
                Y_hat = forward(P, X, params, model_config, targets=Y, tf_prob=config.tf_prob, rng=rng)
                loss = mae_loss(Y_hat, Y, mask)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericalError(f"training diverged at epoch {epoch}: loss is {value}")
            nm.backward(tape, loss, named.values())
            nm.adam_step(named, state, lr)
            total += value * mask.sum()
            weight += mask.sum()
        val = evaluate_mae(P, params, model_config, val_windows, scaler)
        if not math.isfinite(val):
            raise NumericalError(f"training diverged at epoch {epoch}: validation MAE is {val}")
        rec = EpochRecord(epoch, total / max(weight, 1) * scaler.std, val, lr, time.perf_counter() - t0)
        result.history.append(rec)
        if val < best:
            best = val
            result.params = params.clone()
            result.best_epoch = epoch
            result.best_val_mae = val
        log.info("epoch %d train_mae=%.4f val_mae=%.4f lr=%g %.2fs",
                 epoch, rec.train_mae, rec.val_mae, lr, rec.seconds)
        if on_epoch:
            on_epoch(rec)
    return result


HISTORY_HEADER = "epoch,train_mae,val_mae,lr"
TIMING_HEADER = "epoch,seconds"


def format_history(history: Sequence[EpochRecord]) -> str:
    rows = [HISTORY_HEADER] + [f"{r.epoch},{r.train_mae!r},{r.val_mae!r},{r.lr!r}" for r in history]
    return "\n".join(rows) + "\n"


def format_timing(history: Sequence[EpochRecord]) -> str:
    rows = [TIMING_HEADER] + [f"{r.epoch},{r.seconds:.6f}" for r in history]
    return "\n".join(rows) + "\n"
