"""Travel-time records to a cleaned, imputed, smoothed speed matrix.

Stages, in order: drop records of unknown links, split long trips, build a
5-minute max-speed matrix, drop links with long missing runs, rebuild the
adjacency on the surviving links, re-aggregate to 15 minutes, fill remaining
gaps with a historical average, and smooth each link with a Gaussian kernel.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError
from .graph import RoadGraph, Segment, build_adjacency_from_segments, read_segments, write_edge_list

log = logging.getLogger(__name__)

AGGREGATIONS = {"max": np.max, "min": np.min, "mean": np.mean}


@dataclass(frozen=True)
class TripRecord:
    link_id: str
    start_time: int
    end_time: int
    speed: float


@dataclass
class SpeedMatrix:
    """Node x time-slot grid; ``mask`` is False where a value is missing."""

    node_ids: list[str]
    interval_seconds: int
    start_timestamp: int
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.shape != self.mask.shape or self.values.shape[0] != len(self.node_ids):
            raise InputError(f"speed matrix shape {self.values.shape} / mask {self.mask.shape} "
                             f"inconsistent with {len(self.node_ids)} nodes")
        if not np.isfinite(self.values[self.mask]).all():
            raise InputError("speed matrix has non-finite observed values")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]

    def timestamps(self) -> list[int]:
        return [self.start_timestamp + k * self.interval_seconds for k in range(self.T)]

    def take_nodes(self, keep: Sequence[str]) -> "SpeedMatrix":
        index = {v: k for k, v in enumerate(self.node_ids)}
        idx = [index[v] for v in keep]
        return replace(self, node_ids=list(keep), values=self.values[idx], mask=self.mask[idx])


def write_speed_matrix(m: SpeedMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("node_id," + ",".join(str(t) for t in m.timestamps()) + "\n")
        for v, row, ok in zip(m.node_ids, m.values, m.mask):
            cells = [f"{x:.6f}" if o else "NaN" for x, o in zip(row, ok)]
            fh.write(v + "," + ",".join(cells) + "\n")


def read_speed_matrix(path) -> SpeedMatrix:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2:
        raise InputError(f"{path}: speed matrix needs a header and at least one row")
    stamps = [int(x) for x in rows[0][1:]]
    interval = stamps[1] - stamps[0] if len(stamps) > 1 else 1
    nodes, vals = [], []
    for lineno, r in enumerate(rows[1:], 2):
        if len(r) != len(stamps) + 1:
            raise InputError(f"{path}: line {lineno} has {len(r) - 1} values, expected {len(stamps)}")
        nodes.append(r[0])
        vals.append([float(x) for x in r[1:]])
    values = np.array(vals, dtype=np.float64)
    mask = ~np.isnan(values)
    return SpeedMatrix(nodes, interval, stamps[0], np.where(mask, values, 0.0), mask)


def read_trips(path) -> list[TripRecord]:
    out = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or (lineno == 1 and row[0] == "link_id"):
                continue
            if len(row) != 4:
                raise InputError(f"{path}: trip line {lineno} needs 4 fields, got {len(row)}")
            try:
                t = TripRecord(row[0].strip(), int(row[1]), int(row[2]), float(row[3]))
            except ValueError as exc:
                raise InputError(f"{path}: trip line {lineno}: {exc}") from None
            if t.end_time <= t.start_time:
                raise InputError(f"{path}: trip line {lineno} ends before it starts")
            out.append(t)
    return out


def write_trips(path, trips: Iterable[TripRecord]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("link_id,start_time,end_time,speed\n")
        for t in trips:
            fh.write(f"{t.link_id},{t.start_time},{t.end_time},{t.speed!r}\n")


# ---- stages ---------------------------------------------------------------

def split_long_trips(trips: Iterable[TripRecord], interval_seconds: int) -> list[TripRecord]:
    """Cut every trip longer than ``interval_seconds`` into full-interval pieces
    plus one remainder piece; each piece keeps the trip's speed."""
    if interval_seconds <= 0:
        raise InputError(f"interval must be positive, got {interval_seconds}")
    out = []
    for t in trips:
        start = t.start_time
        while t.end_time - start > interval_seconds:
            out.append(TripRecord(t.link_id, start, start + interval_seconds, t.speed))
            start += interval_seconds
        out.append(TripRecord(t.link_id, start, t.end_time, t.speed))
    return out


def build_speed_matrix(trips: Sequence[TripRecord], links: Sequence[str], interval_seconds: int,
                       aggregation: str = "max", start: int | None = None,
                       end: int | None = None) -> SpeedMatrix:
    """Aggregate trip speeds into ``links x slots``.

    A record contributes to every slot its half-open ``[start, end)`` range
    overlaps. The time range defaults to the records' extent snapped to whole
    intervals.
    """
    if aggregation not in AGGREGATIONS:
        raise InputError(f"unknown aggregation {aggregation!r}; choose from {sorted(AGGREGATIONS)}")
    if interval_seconds <= 0:
        raise InputError(f"interval must be positive, got {interval_seconds}")
    index = {v: k for k, v in enumerate(links)}
    trips = [t for t in trips if t.link_id in index]
    if not trips:
        raise InputError("no trip records for the known links")
    if start is None:
        start = min(t.start_time for t in trips) // interval_seconds * interval_seconds
    if end is None:
        end = -(-max(t.end_time for t in trips) // interval_seconds) * interval_seconds
    T = (end - start) // interval_seconds
    if T <= 0:
        raise InputError("empty time range")
    cells: dict[tuple[int, int], list[float]] = {}
    for t in trips:
        first = max((t.start_time - start) // interval_seconds, 0)
        last = min((t.end_time - 1 - start) // interval_seconds, T - 1)
        for slot in range(first, last + 1):
            cells.setdefault((index[t.link_id], slot), []).append(t.speed)
    values = np.zeros((len(links), T))
    mask = np.zeros((len(links), T), dtype=bool)
    agg = AGGREGATIONS[aggregation]
    for (i, j), speeds in cells.items():
        values[i, j] = float(agg(speeds))
        mask[i, j] = True
    return SpeedMatrix(list(links), interval_seconds, start, values, mask)


def longest_missing_run(mask_row: np.ndarray) -> int:
    best = run = 0
    for ok in mask_row:
        run = 0 if ok else run + 1
        best = max(best, run)
    return best


def filter_links(matrix: SpeedMatrix, tau: int = 1000) -> tuple[SpeedMatrix, list[str]]:
    """Drop links with more than ``tau`` consecutive missing slots."""
    if tau < 1:
        raise InputError(f"tau must be >= 1, got {tau}")
    keep = [v for v, row in zip(matrix.node_ids, matrix.mask) if longest_missing_run(row) <= tau]
    if not keep:
        raise InputError(f"every link has a missing run longer than tau={tau}")
    return matrix.take_nodes(keep), keep


def select_top_links(matrix: SpeedMatrix, trips: Sequence[TripRecord], k: int) -> tuple[SpeedMatrix, list[str]]:
    """Keep the ``k`` links with the most trip records (ties broken by matrix order)."""
    counts: dict[str, int] = {}
    for t in trips:
        counts[t.link_id] = counts.get(t.link_id, 0) + 1
    order = sorted(range(matrix.n), key=lambda i: (-counts.get(matrix.node_ids[i], 0), i))
    keep = [matrix.node_ids[i] for i in sorted(order[:k])]
    return matrix.take_nodes(keep), keep


def reaggregate(matrix: SpeedMatrix, factor: int = 3, aggregation: str = "max") -> SpeedMatrix:
    """Merge groups of ``factor`` consecutive slots; a trailing partial group is dropped."""
    if factor < 1:
        raise InputError(f"factor must be >= 1, got {factor}")
    if aggregation not in AGGREGATIONS:
        raise InputError(f"unknown aggregation {aggregation!r}")
    if factor == 1:
        return replace(matrix, values=matrix.values.copy(), mask=matrix.mask.copy())
    G = matrix.T // factor
    if G == 0:
        raise InputError(f"series of {matrix.T} slots is shorter than one group of {factor}")
    vals = matrix.values[:, :G * factor].reshape(matrix.n, G, factor)
    msk = matrix.mask[:, :G * factor].reshape(matrix.n, G, factor)
    fill = {"max": -np.inf, "min": np.inf}.get(aggregation)
    if fill is not None:
        out = AGGREGATIONS[aggregation](np.where(msk, vals, fill), axis=2)
    else:
        cnt = msk.sum(axis=2)
        out = np.where(msk, vals, 0.0).sum(axis=2) / np.maximum(cnt, 1)
    observed = msk.any(axis=2)
    return SpeedMatrix(list(matrix.node_ids), matrix.interval_seconds * factor, matrix.start_timestamp,
                       np.where(observed, out, 0.0), observed)


def impute_ha(matrix: SpeedMatrix, period: int, lookback: int = 4,
              weights: Sequence[float] | None = None) -> SpeedMatrix:
    """Fill gaps with the weighted average of the same slot in earlier cycles.

    Only originally observed values are averaged. Cells with no observed lagged
    value are forward-filled, and anything before a link's first value is
    linearly interpolated (i.e. back-filled) from observed neighbours.
    """
    from .baselines import ha_weights

    if period < 1 or period > matrix.T:
        raise InputError(f"period {period} must lie in [1, {matrix.T}]")
    w = ha_weights(lookback, weights)
    values = matrix.values.copy()
    mask = matrix.mask
    for i in range(matrix.n):
        if not mask[i].any():
            raise InputError(f"link {matrix.node_ids[i]!r} has no observed values")
        for s in np.flatnonzero(~mask[i]):
            num = den = 0.0
            for k in range(1, lookback + 1):
                lag = s - k * period
                if lag >= 0 and mask[i, lag]:
                    num += w[k - 1] * values[i, lag]
                    den += w[k - 1]
            values[i, s] = num / den if den > 0 else np.nan
        row = values[i]
        if np.isnan(row).any():
            known = np.flatnonzero(~np.isnan(row))
            for s in np.flatnonzero(np.isnan(row)):
                prev = known[known < s]
                if prev.size:
                    row[s] = row[prev[-1]]
            gaps = np.isnan(row)
            if gaps.any():
                ok = np.flatnonzero(~gaps)
                row[gaps] = np.interp(np.flatnonzero(gaps), ok, row[ok])
    return replace(matrix, values=values, mask=np.ones_like(mask))


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(4.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(matrix: SpeedMatrix, sigma_slots: float = 1.0) -> SpeedMatrix:
    """Convolve each link with a normalised Gaussian, mirroring at the edges."""
    if sigma_slots <= 0:
        raise InputError(f"sigma must be positive, got {sigma_slots}")
    if not matrix.mask.all():
        raise InputError("gaussian_smooth needs a fully imputed matrix")
    k = gaussian_kernel(sigma_slots)
    r = k.size // 2
    out = np.empty_like(matrix.values)
    for i, row in enumerate(matrix.values):
        padded = np.pad(row, r, mode="symmetric")
        out[i] = np.convolve(padded, k, mode="valid")
    return replace(matrix, values=out, mask=matrix.mask.copy())


# ---- composition ----------------------------------------------------------

@dataclass
class PipelineConfig:
    interval_seconds: int = 300
    aggregation: str = "max"
    tau: int = 1000
    top_k_by_trip_count: int = 0
    reaggregate_factor: int = 3
    ha_period: int = 672
    ha_lookback: int = 4
    sigma_slots: float = 1.0
    start: int | None = None
    end: int | None = None


@dataclass
class PipelineReport:
    records_read: int = 0
    records_orphan: int = 0
    records_after_split: int = 0
    links_in_segments: int = 0
    links_after_filter: int = 0
    links_kept: list[str] = field(default_factory=list)
    cells_imputed: int = 0
    config: dict = field(default_factory=dict)

    def render(self) -> str:
        lines = [
            f"records_read={self.records_read}",
            f"records_dropped_orphan={self.records_orphan}",
            f"records_after_split={self.records_after_split}",
            f"links_in_segments={self.links_in_segments}",
            f"links_after_filter={self.links_after_filter}",
            f"links_kept={len(self.links_kept)}",
            f"cells_imputed={self.cells_imputed}",
        ]
        lines += [f"config.{k}={v}" for k, v in self.config.items()]
        lines.append("kept_ids=" + ",".join(self.links_kept))
        return "\n".join(lines) + "\n"


class StageError(InputError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage}: {cause}")
        self.stage = stage


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except InputError as exc:
        raise StageError(name, exc) from exc


def prepare(trips: Sequence[TripRecord], segments: Sequence[Segment],
            config: PipelineConfig | None = None) -> tuple[SpeedMatrix, RoadGraph, PipelineReport]:
    cfg = config or PipelineConfig()
    report = PipelineReport(records_read=len(trips), links_in_segments=len(segments),
                            config={k: v for k, v in vars(cfg).items()})
    links = [s.link_id for s in segments]
    known = set(links)
    kept_trips = [t for t in trips if t.link_id in known]
    report.records_orphan = len(trips) - len(kept_trips)

    pieces = _stage("split", split_long_trips, kept_trips, cfg.interval_seconds)
    report.records_after_split = len(pieces)
    m = _stage("build", build_speed_matrix, pieces, links, cfg.interval_seconds, cfg.aggregation,
               cfg.start, cfg.end)
    m, keep = _stage("filter", filter_links, m, cfg.tau)
    report.links_after_filter = len(keep)
    if cfg.top_k_by_trip_count:
        m, keep = select_top_links(m, kept_trips, cfg.top_k_by_trip_count)
    report.links_kept = list(keep)
    by_id = {s.link_id: s for s in segments}
    graph = build_adjacency_from_segments([by_id[v] for v in keep])
    m = _stage("reaggregate", reaggregate, m, cfg.reaggregate_factor, cfg.aggregation)
    report.cells_imputed = int((~m.mask).sum())
    m = _stage("impute", impute_ha, m, cfg.ha_period, cfg.ha_lookback)
    m = _stage("smooth", gaussian_smooth, m, cfg.sigma_slots)
    log.info("pipeline kept %d of %d links", len(keep), len(segments))
    return m, graph, report


def run_pipeline(raw_trips_path, segments_path, out_dir, config: PipelineConfig | None = None
                 ) -> tuple[SpeedMatrix, RoadGraph, PipelineReport]:
    """Run :func:`prepare` on files and write speed_matrix.csv, nodes.txt,
    edges.csv and provenance.txt into ``out_dir``."""
    trips = _stage("read", read_trips, raw_trips_path)
    segments = _stage("read", read_segments, segments_path)
    m, graph, report = prepare(trips, segments, config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_speed_matrix(m, out / "speed_matrix.csv")
    write_edge_list(graph, out / "edges.csv", out / "nodes.txt")
    (out / "provenance.txt").write_text(report.render())
    return m, graph, report
