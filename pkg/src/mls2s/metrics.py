"""Masked MAE / RMSE / MAPE for multi-step forecasts."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError

MAPE_FLOOR = 1.0


def _prepare(pred, truth, mask):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction {pred.shape} and truth {truth.shape} differ")
    m = np.isfinite(truth) & np.isfinite(pred)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != truth.shape:
            raise ShapeError(f"mask {mask.shape} does not match {truth.shape}")
        m &= mask
    return pred, truth, m


def zero_mask(truth) -> np.ndarray:
    """Mask treating zero readings as missing (loop-detector dropouts)."""
    truth = np.asarray(truth, dtype=np.float64)
    return np.isfinite(truth) & (truth != 0)


def mae(pred, truth, mask=None) -> float:
    pred, truth, m = _prepare(pred, truth, mask)
    if not m.any():
        raise ContractError("mae: no entries to evaluate")
    return float(np.abs(pred[m] - truth[m]).mean())


def rmse(pred, truth, mask=None) -> float:
    pred, truth, m = _prepare(pred, truth, mask)
    if not m.any():
        raise ContractError("rmse: no entries to evaluate")
    return float(np.sqrt(((pred[m] - truth[m]) ** 2).mean()))


def mape(pred, truth, mask=None, floor: float = MAPE_FLOOR) -> float:
    """Mean absolute percentage error in percent, ignoring ``|truth| < floor``."""
    pred, truth, m = _prepare(pred, truth, mask)
    m &= np.abs(truth) >= floor
    if not m.any():
        raise ContractError(f"mape: no entries with |truth| >= {floor}")
    return float(100.0 * (np.abs(pred[m] - truth[m]) / np.abs(truth[m])).mean())


@dataclass
class StepMetrics:
    mae: float
    rmse: float
    mape: float
    count: int


@dataclass
class EvalReport:
    method: str
    per_step: list[StepMetrics] = field(default_factory=list)
    overall: StepMetrics | None = None
    mape_floor: float = MAPE_FLOOR

    def rows(self, horizons=None) -> list[str]:
        steps = horizons or range(1, len(self.per_step) + 1)
        out = []
        for k in steps:
            if not 1 <= k <= len(self.per_step):
                raise ContractError(f"horizon {k} outside 1..{len(self.per_step)}")
            s = self.per_step[k - 1]
            out.append(f"{self.method},{k},{s.mae:.6f},{s.rmse:.6f},{s.mape:.6f},{s.count}")
        return out


REPORT_HEADER = "method,horizon_steps,mae,rmse,mape,count"


def _trio(pred, truth, m, floor) -> StepMetrics:
    if not m.any():
        return StepMetrics(float("nan"), float("nan"), float("nan"), 0)
    pct_ok = m & (np.abs(truth) >= floor)
    return StepMetrics(
        mae=mae(pred, truth, m), rmse=rmse(pred, truth, m),
        mape=mape(pred, truth, m, floor) if pct_ok.any() else float("nan"),
        count=int(m.sum()))


def evaluate(method: str, pred, truth, mask=None, floor: float = MAPE_FLOOR,
             zeros_missing: bool = False) -> EvalReport:
    """Per-step and aggregate metrics.

    ``pred`` and ``truth`` are ``samples x nodes x horizon`` (or ``rows x
    horizon``); step ``k`` uses column ``k-1`` only, the aggregate uses all.
    """
    pred, truth, m = _prepare(pred, truth, mask)
    if zeros_missing:
        m &= truth != 0
    h = truth.shape[-1]
    report = EvalReport(method, mape_floor=floor)
    for k in range(h):
        report.per_step.append(_trio(pred[..., k], truth[..., k], m[..., k], floor))
    report.overall = _trio(pred, truth, m, floor)
    return report


def format_report(reports, horizons=None) -> str:
    lines = [REPORT_HEADER]
    for r in reports:
        lines.extend(r.rows(horizons))
    return "\n".join(lines) + "\n"
