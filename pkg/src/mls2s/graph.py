"""Road graphs, adjacency construction and the normalized propagation operator."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class Segment:
    link_id: str
    origin_id: str
    destination_id: str


class RoadGraph:
    """Undirected, unweighted graph over an ordered list of node ids.

    ``adjacency`` is a symmetric 0/1 matrix with an empty diagonal; its row
    order follows ``node_ids``.
    """

    def __init__(self, node_ids: Sequence[str], adjacency):
        A = np.array(adjacency, dtype=np.float64)
        n = len(node_ids)
        if A.shape != (n, n):
            raise InputError(f"adjacency shape {A.shape} does not match {n} node ids")
        if len(set(node_ids)) != n:
            raise InputError("node ids must be unique")
        if not np.isin(A, (0.0, 1.0)).all():
            raise InputError("adjacency entries must be 0 or 1")
        if np.any(np.diag(A)):
            raise InputError("adjacency must have an empty diagonal")
        if not np.array_equal(A, A.T):
            raise InputError("adjacency must be symmetric")
        self.node_ids = [str(x) for x in node_ids]
        self.adjacency = A

    @property
    def n(self) -> int:
        return len(self.node_ids)

    @property
    def edges(self) -> list[tuple[str, str]]:
        """Each undirected edge once, as (lower index, higher index)."""
        i, j = np.nonzero(np.triu(self.adjacency, 1))
        return [(self.node_ids[a], self.node_ids[b]) for a, b in zip(i, j)]

    def subgraph(self, keep: Iterable[str]) -> "RoadGraph":
        keep = list(keep)
        index = {v: k for k, v in enumerate(self.node_ids)}
        try:
            idx = [index[v] for v in keep]
        except KeyError as exc:
            raise InputError(f"unknown node id {exc.args[0]!r}") from None
        return RoadGraph(keep, self.adjacency[np.ix_(idx, idx)])

    def __eq__(self, other) -> bool:
        return (isinstance(other, RoadGraph) and self.node_ids == other.node_ids
                and np.array_equal(self.adjacency, other.adjacency))

    def __repr__(self) -> str:
        return f"RoadGraph(n={self.n}, edges={int(self.adjacency.sum() // 2)})"


def build_adjacency_from_segments(segments: Iterable) -> RoadGraph:
    """Connect two segments whenever they share any endpoint.

    Accepts :class:`Segment` objects or ``(link_id, origin_id, destination_id)``
    tuples. All four endpoint pairings (origin/origin, origin/destination,
    destination/origin, destination/destination) count.
    """
    segs = [s if isinstance(s, Segment) else Segment(*map(str, s)) for s in segments]
    ids = [s.link_id for s in segs]
    seen: set[str] = set()
    for link in ids:
        if link in seen:
            raise InputError(f"duplicate link_id {link!r}")
        seen.add(link)
    for s in segs:
        if not s.origin_id or not s.destination_id:
            raise InputError(f"segment {s.link_id!r} has an empty endpoint id")

    by_endpoint: dict[str, set[int]] = {}
    for k, s in enumerate(segs):
        by_endpoint.setdefault(s.origin_id, set()).add(k)
        by_endpoint.setdefault(s.destination_id, set()).add(k)
    A = np.zeros((len(segs), len(segs)))
    for members in by_endpoint.values():
        idx = sorted(members)
        for a in idx:
            for b in idx:
                if a != b:
                    A[a, b] = 1.0
    return RoadGraph(ids, A)


def normalize_propagation(g: RoadGraph) -> np.ndarray:
    """Return ``D^-1/2 (A + I) D^-1/2`` with ``D = diag(degree + 1)``."""
    A_hat = g.adjacency + np.eye(g.n)
    d = 1.0 / np.sqrt(g.adjacency.sum(axis=1) + 1.0)
    return d[:, None] * A_hat * d[None, :]


def ring_graph(n: int, prefix: str = "n") -> RoadGraph:
    A = np.zeros((n, n))
    for i in range(n):
        j = (i + 1) % n
        if i != j:
            A[i, j] = A[j, i] = 1.0
    return RoadGraph([f"{prefix}{i}" for i in range(n)], A)


def path_graph(n: int, prefix: str = "n") -> RoadGraph:
    A = np.zeros((n, n))
    for i in range(n - 1):
        A[i, i + 1] = A[i + 1, i] = 1.0
    return RoadGraph([f"{prefix}{i}" for i in range(n)], A)


# ---- file formats ---------------------------------------------------------

def read_segments(path) -> list[Segment]:
    rows = _read_csv_rows(path)
    if rows and rows[0][:1] == ["link_id"]:
        rows = rows[1:]
    out = []
    for lineno, row in enumerate(rows, 1):
        if len(row) != 3:
            raise InputError(f"{path}: segment line {lineno} needs 3 fields, got {len(row)}")
        out.append(Segment(*(f.strip() for f in row)))
    return out


def write_segments(path, segments: Iterable[Segment]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("link_id,origin_id,destination_id\n")
        for s in segments:
            fh.write(f"{s.link_id},{s.origin_id},{s.destination_id}\n")


def write_edge_list(g: RoadGraph, edges_path, nodes_path) -> None:
    Path(nodes_path).write_text("".join(f"{v}\n" for v in g.node_ids))
    Path(edges_path).write_text("".join(f"{a},{b}\n" for a, b in g.edges))


def read_edge_list(edges_path, nodes_path) -> RoadGraph:
    nodes = [ln.strip() for ln in Path(nodes_path).read_text().splitlines() if ln.strip()]
    index = {v: k for k, v in enumerate(nodes)}
    A = np.zeros((len(nodes), len(nodes)))
    for lineno, row in enumerate(_read_csv_rows(edges_path), 1):
        if len(row) != 2:
            raise InputError(f"{edges_path}: line {lineno} is not a src,dst pair")
        a, b = (x.strip() for x in row)
        if a not in index or b not in index:
            raise InputError(f"{edges_path}: line {lineno} references unknown node")
        if a == b:
            raise InputError(f"{edges_path}: line {lineno} is a self-loop")
        A[index[a], index[b]] = A[index[b], index[a]] = 1.0
    return RoadGraph(nodes, A)


def write_dense(g: RoadGraph, path) -> None:
    buf = io.StringIO()
    buf.write("node_id," + ",".join(g.node_ids) + "\n")
    for v, row in zip(g.node_ids, g.adjacency):
        buf.write(v + "," + ",".join(str(int(x)) for x in row) + "\n")
    Path(path).write_text(buf.getvalue())


def read_dense(path) -> RoadGraph:
    rows = _read_csv_rows(path)
    if not rows:
        raise InputError(f"{path}: empty adjacency file")
    header = [x.strip() for x in rows[0][1:]]
    body = rows[1:]
    if [r[0].strip() for r in body] != header:
        raise InputError(f"{path}: row labels do not match the header")
    try:
        A = np.array([[float(x) for x in r[1:]] for r in body])
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    return RoadGraph(header, A.reshape(len(header), len(header)))


def _read_csv_rows(path) -> list[list[str]]:
    with open(path, newline="") as fh:
        return [row for row in csv.reader(fh) if row and any(f.strip() for f in row)]
