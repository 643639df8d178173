"""Historical-average and vector-autoregression reference forecasters."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError, InputError, NumericalError


def ha_weights(lookback: int, weights: Sequence[float] | None = None) -> np.ndarray:
    if lookback < 1:
        raise ContractError(f"lookback must be >= 1, got {lookback}")
    if weights is None:
        return np.full(lookback, 1.0 / lookback)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (lookback,):
        raise ContractError(f"{w.size} weights for {lookback} lookback cycles")
    if np.any(w < 0) or not np.isclose(w.sum(), 1.0):
        raise ContractError("HA weights must be non-negative and sum to 1")
    return w


@dataclass
class HAModel:
    period: int
    lookback_cycles: int = 4
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.period < 1:
            raise ContractError(f"period must be >= 1, got {self.period}")
        self.weights = ha_weights(self.lookback_cycles, self.weights)


def ha_predict(model: HAModel, values: np.ndarray, mask: np.ndarray | None, t_anchor: int, h: int
               ) -> tuple[np.ndarray, np.ndarray]:
    """Forecast slots ``t_anchor+1 .. t_anchor+h`` from earlier cycles.

    Each forecast is the weighted mean of the values one, two, ... cycles
    before the target slot. Lags that are unobserved, before the series start,
    or after ``t_anchor`` are skipped and the remaining weights renormalised.
    Returns ``(pred, ok)`` where ``ok`` is False for entries with no usable lag.
    """
    values = np.asarray(values, dtype=np.float64)
    if mask is None:
        mask = np.ones(values.shape, dtype=bool)
    n = values.shape[0]
    num = np.zeros((n, h))
    den = np.zeros((n, h))
    for j in range(h):
        s = t_anchor + 1 + j
        for k in range(1, model.lookback_cycles + 1):
            lag = s - k * model.period
            if lag < 0 or lag > t_anchor:
                continue
            w = model.weights[k - 1]
            ok = mask[:, lag]
            num[:, j] += np.where(ok, w * values[:, lag], 0.0)
            den[:, j] += np.where(ok, w, 0.0)
    ok = den > 0
    return np.where(ok, num / np.where(ok, den, 1.0), np.nan), ok


@dataclass
class VARModel:
    coefs: list[np.ndarray]  # A_1 .. A_p, each n x n
    intercept: np.ndarray  # n
    ridge: float = 0.0
    residual_variance: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def order(self) -> int:
        return len(self.coefs)


def var_fit(series: np.ndarray, p: int = 3, ridge: float = 1e-4) -> VARModel:
    """Least-squares fit of ``x_t = c + sum_i A_i x_{t-i}``.

    ``series`` is ``n x T`` and must be fully observed. The ridge penalty
    applies to the lag coefficients only, not the intercept.
    """
    X = np.asarray(series, dtype=np.float64)
    if X.ndim != 2:
        raise InputError(f"series must be n x T, got shape {X.shape}")
    if p < 1:
        raise ContractError(f"order must be >= 1, got {p}")
    if ridge < 0:
        raise ContractError("ridge must be non-negative")
    n, T = X.shape
    if T <= p:
        raise InputError(f"series of length {T} too short for order {p}")
    if not np.isfinite(X).all():
        raise InputError("VAR needs a fully observed (imputed) series")
    # design row for target t: [1, x_{t-1}, ..., x_{t-p}]
    Z = np.hstack([np.ones((T - p, 1))] + [X[:, p - i:T - i].T for i in range(1, p + 1)])
    Y = X[:, p:].T
    G = Z.T @ Z
    G[np.diag_indices_from(G)] += np.r_[0.0, np.full(n * p, ridge)]
    if np.linalg.matrix_rank(G) < G.shape[0]:
        raise NumericalError("VAR normal matrix is singular; use a ridge penalty > 0")
    B = np.linalg.solve(G, Z.T @ Y)
    resid = Y - Z @ B
    coefs = [B[1 + (i - 1) * n:1 + i * n].T.copy() for i in range(1, p + 1)]
    return VARModel(coefs, B[0].copy(), ridge, resid.var(axis=0))


def var_predict(model: VARModel, recent: np.ndarray, h: int) -> np.ndarray:
    """Iterate one-step forecasts ``h`` times from the last ``p`` frames.

    ``recent`` is ``n x p`` in time order (oldest column first).
    """
    recent = np.asarray(recent, dtype=np.float64)
    if recent.ndim == 1:
        recent = recent[:, None]
    if recent.shape[1] != model.order:
        raise ContractError(f"expected {model.order} recent frames, got {recent.shape[1]}")
    hist = [recent[:, j] for j in range(recent.shape[1])]
    out = np.empty((recent.shape[0], h))
    for j in range(h):
        x = model.intercept.copy()
        for i, A in enumerate(model.coefs, 1):
            x = x + A @ hist[-i]
        hist.append(x)
        out[:, j] = x
    return out
