"""Generate the 6-link pipeline fixture and its golden outputs.

Run once from the repository root::

    python tests/fixtures/make_pipeline_fixture.py

The golden files are produced by the plain-Python reference pipeline below,
which deliberately shares no code with ``mls2s.pipeline``.
"""
import csv
import itertools
import math
import random
from pathlib import Path

HERE = Path(__file__).parent / "pipeline"
START = 1546819200  # Monday 2019-01-07 00:00 UTC
DAYS = 14
INTERVAL = 300
FACTOR = 3
TAU = 1000
PERIOD = 672
LOOKBACK = 4
SIGMA = 1.0

SEGMENTS = [
    ("L1", "A", "B"),
    ("L2", "B", "C"),
    ("L3", "C", "D"),
    ("L4", "E", "B"),
    ("L5", "F", "G"),
    ("L6", "G", "A"),
]


def in_gap(link, t):
    day = (t - START) / 86400.0
    hour = ((t - START) % 86400) / 3600.0
    if link == "L2" and int(day) == 9 and 14 <= hour < 16:
        return True  # previous week is observed: historical-average fill
    if link == "L3" and int(day) == 1 and 2 <= hour < 5:
        return True  # no earlier week: forward fill
    if link == "L4" and t < START + 3600:
        return True  # leading gap: back fill
    if link == "L6" and 3 <= day < 7:
        return True  # > tau consecutive missing slots: link dropped
    return False


def generate():
    rnd = random.Random(20190107)
    end_all = START + DAYS * 86400
    trips = []
    for k, (link, _, _) in enumerate(SEGMENTS + [("L9", "X", "Y")]):
        t = START + rnd.randint(0, 300)
        while True:
            t += int(rnd.expovariate(1 / 420.0)) + 30
            dur = rnd.randint(60, 1100)
            if t + dur > end_all:
                break
            if in_gap(link, t) or in_gap(link, t + dur - 1):
                continue
            hour = ((t - START) % 86400) / 3600.0
            speed = 32 + 14 * math.sin(2 * math.pi * (hour - 6 - k) / 24) + rnd.uniform(-6, 6)
            trips.append((link, t, t + dur, round(max(speed, 3.0), 2)))
    trips.sort(key=lambda r: (r[1], r[0]))
    return trips


# ---- reference pipeline ---------------------------------------------------

def reference(trips, segments):
    links = [s[0] for s in segments]
    known = set(links)
    trips = [t for t in trips if t[0] in known]

    pieces = []
    for link, s, e, v in trips:
        n_full = max(0, math.ceil((e - s) / INTERVAL) - 1)
        for k in range(n_full):
            pieces.append((link, s + k * INTERVAL, s + (k + 1) * INTERVAL, v))
        pieces.append((link, s + n_full * INTERVAL, e, v))

    t0 = min(p[1] for p in pieces) // INTERVAL * INTERVAL
    t1 = math.ceil(max(p[2] for p in pieces) / INTERVAL) * INTERVAL
    T = (t1 - t0) // INTERVAL
    cells = {link: [[] for _ in range(T)] for link in links}
    for link, s, e, v in pieces:
        lo = (s - t0) // INTERVAL
        hi = math.ceil((e - t0) / INTERVAL)
        for slot in range(lo, hi):
            cells[link][slot].append(v)
    grid = {link: [max(c) if c else None for c in cells[link]] for link in links}

    def longest_gap(row):
        return max([len(list(g)) for missing, g in itertools.groupby(row, key=lambda x: x is None) if missing] or [0])

    kept = [link for link in links if longest_gap(grid[link]) <= TAU]

    adj = []
    seg = {s[0]: s for s in segments}
    for a in kept:
        for b in kept:
            _, oa, da = seg[a]
            _, ob, db = seg[b]
            if a != b and len({oa, da} & {ob, db}) > 0:
                adj.append((a, b))

    G = T // FACTOR
    coarse = {}
    for link in kept:
        row = grid[link]
        out = []
        for g in range(G):
            vals = [x for x in row[g * FACTOR:(g + 1) * FACTOR] if x is not None]
            out.append(max(vals) if vals else None)
        coarse[link] = out

    filled = {}
    for link in kept:
        orig = coarse[link]
        row = list(orig)
        for s in range(G):
            if orig[s] is None:
                lagged = [orig[s - k * PERIOD] for k in range(1, LOOKBACK + 1)
                          if s - k * PERIOD >= 0 and orig[s - k * PERIOD] is not None]
                row[s] = sum(lagged) / len(lagged) if lagged else None
        last = None
        for s in range(G):
            if row[s] is None:
                row[s] = last
            else:
                last = row[s]
        first = next(x for x in row if x is not None)
        row = [first if x is None else x for x in row]
        filled[link] = row

    radius = math.ceil(4 * SIGMA)
    weights = [math.exp(-0.5 * (j / SIGMA) ** 2) for j in range(-radius, radius + 1)]
    total = sum(weights)
    weights = [w / total for w in weights]

    def mirror(i):
        while i < 0 or i >= G:
            i = -i - 1 if i < 0 else 2 * G - i - 1
        return i

    smooth = {}
    for link in kept:
        row = filled[link]
        smooth[link] = [sum(w * row[mirror(s + j)] for j, w in zip(range(-radius, radius + 1), weights))
                        for s in range(G)]
    stamps = [t0 + g * INTERVAL * FACTOR for g in range(G)]
    return kept, adj, stamps, smooth


def main():
    HERE.mkdir(parents=True, exist_ok=True)
    trips = generate()
    with open(HERE / "trips.csv", "w", newline="") as fh:
        fh.write("link_id,start_time,end_time,speed\n")
        for link, s, e, v in trips:
            fh.write(f"{link},{s},{e},{v}\n")
    with open(HERE / "segments.csv", "w", newline="") as fh:
        fh.write("link_id,origin_id,destination_id\n")
        for row in SEGMENTS:
            fh.write(",".join(row) + "\n")

    trips_back = []
    with open(HERE / "trips.csv", newline="") as fh:
        for row in list(csv.reader(fh))[1:]:
            trips_back.append((row[0], int(row[1]), int(row[2]), float(row[3])))
    kept, adj, stamps, smooth = reference(trips_back, SEGMENTS)

    golden = HERE / "golden"
    golden.mkdir(exist_ok=True)
    with open(golden / "speed_matrix.csv", "w", newline="") as fh:
        fh.write("node_id," + ",".join(str(s) for s in stamps) + "\n")
        for link in kept:
            fh.write(link + "," + ",".join(f"{x:.6f}" for x in smooth[link]) + "\n")
    (golden / "nodes.txt").write_text("".join(f"{v}\n" for v in kept))
    order = {v: k for k, v in enumerate(kept)}
    edges = sorted({tuple(sorted(e, key=order.get)) for e in adj}, key=lambda e: (order[e[0]], order[e[1]]))
    (golden / "edges.csv").write_text("".join(f"{a},{b}\n" for a, b in edges))
    print(f"{len(trips)} trips, kept {kept}, {len(stamps)} slots")


if __name__ == "__main__":
    main()
