"""Command-line entry point: ``mls2s {prepare,synth,train,eval,compare}``.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .baselines import HAModel, VARModel, ha_predict, var_fit, var_predict
from .config import RunConfig
from .errors import ContractError, InputError, NumericalError, ShapeError
from .graph import RoadGraph, normalize_propagation, read_edge_list, write_edge_list
from .metrics import evaluate, format_report
from .pipeline import SpeedMatrix, read_speed_matrix, run_pipeline, write_speed_matrix
from .seq2seq import init_params, load_checkpoint, save_checkpoint
from .synth import generate
from .trainer import (Scaler, format_history, format_timing, make_windows, predict_windows, split_dataset,
                      train, truth_of, zscore)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
HA_FORMAT = "mls2s-ha/1"
VAR_FORMAT = "mls2s-var/1"

GROUPS = {
    "prepare": ("io", "pipeline"),
    "synth": ("io", "synth"),
    "train": ("io", "model", "train", "baseline"),
    "eval": ("io", "eval"),
    "compare": ("io", "model", "train", "baseline", "eval"),
}
IO_KEYS = {
    "prepare": ("trips", "segments", "out_dir"),
    "synth": ("out_dir",),
    "train": ("data", "out_dir"),
    "eval": ("data", "checkpoint", "out_dir"),
    "compare": ("data", "out_dir"),
}
# synth shares the seed with training
EXTRA_KEYS = {"synth": ("seed",)}


class UsageError(Exception):
    pass


def _require(path: str, what: str) -> Path:
    if not path:
        raise UsageError(f"--{what.replace('_', '-')} is required")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what}: file not found: {p}")
    return p


def load_dataset(directory: str) -> tuple[SpeedMatrix, RoadGraph]:
    d = _require(directory, "data")
    for name in ("speed_matrix.csv", "edges.csv", "nodes.txt"):
        _require(str(d / name), "data")
    m = read_speed_matrix(d / "speed_matrix.csv")
    g = read_edge_list(d / "edges.csv", d / "nodes.txt")
    if sorted(m.node_ids) != sorted(g.node_ids):
        raise InputError(f"{d}: speed matrix and graph list different nodes")
    return m.take_nodes(g.node_ids), g


def _splits(m: SpeedMatrix, history: int, horizon: int):
    return split_dataset(make_windows(m, history, horizon))


def _scaler_doc(s: Scaler) -> dict:
    return {"mean": s.mean, "std": s.std}


def _write(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=1) + "\n")


# ---- model fitting and forecasting ----------------------------------------

def fit_mls2s(cfg: RunConfig, m: SpeedMatrix, g: RoadGraph, out: Path, echo) -> Path:
    P = normalize_propagation(g)
    train_w, val_w, _ = _splits(m, cfg.history, cfg.horizon)
    scaler = zscore(train_w)
    mc = cfg.model_config()
    params = init_params(mc, cfg.seed)

    def report(r):
        echo(f"epoch {r.epoch}/{cfg.epochs} train_mae={r.train_mae:.4f} val_mae={r.val_mae:.4f} "
             f"lr={r.lr:g} seconds={r.seconds:.2f}")

    result = train(params, P, train_w, val_w, mc, cfg.train_config(), scaler, on_epoch=report)
    path = out / "checkpoint.json"
    save_checkpoint(path, result.params, mc, extra={
        "scaler": _scaler_doc(scaler), "best_epoch": result.best_epoch,
        "best_val_mae": None if result.best_epoch == 0 else result.best_val_mae})
    (out / "history.csv").write_text(format_history(result.history))
    (out / "timing.csv").write_text(format_timing(result.history))
    return path


def _ha_period(cfg: RunConfig, m: SpeedMatrix) -> int:
    return cfg.ha_period or 7 * 86400 // m.interval_seconds


def fit_ha(cfg: RunConfig, m: SpeedMatrix, out: Path) -> Path:
    model = HAModel(_ha_period(cfg, m), cfg.ha_lookback)
    path = out / "ha.json"
    _write(path, {"format": HA_FORMAT, "period": model.period, "lookback": model.lookback_cycles,
                  "weights": model.weights.tolist(), "history": cfg.history, "horizon": cfg.horizon})
    return path


def fit_var(cfg: RunConfig, m: SpeedMatrix, out: Path) -> Path:
    train_w, _, _ = _splits(m, cfg.history, cfg.horizon)
    scaler = zscore(train_w)
    end = train_w[-1].t_anchor + cfg.horizon + 1
    series = np.where(m.mask[:, :end], m.values[:, :end], np.nan)
    model = var_fit(scaler.apply(series), cfg.var_order, cfg.var_ridge)
    path = out / "var.json"
    _write(path, {"format": VAR_FORMAT, "order": model.order, "ridge": model.ridge,
                  "coefs": [A.tolist() for A in model.coefs], "intercept": model.intercept.tolist(),
                  "scaler": _scaler_doc(scaler), "history": cfg.history, "horizon": cfg.horizon})
    return path


def load_model(path: Path):
    """Return ``(kind, model, history, horizon, scaler)`` for any model file."""
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not a model file ({exc})") from None
    fmt = doc.get("format")
    if fmt == HA_FORMAT:
        return "ha", HAModel(doc["period"], doc["lookback"], doc["weights"]), doc["history"], doc["horizon"], None
    if fmt == VAR_FORMAT:
        model = VARModel([np.array(A) for A in doc["coefs"]], np.array(doc["intercept"]), doc["ridge"])
        return "var", model, doc["history"], doc["horizon"], Scaler(**doc["scaler"])
    params, mc = load_checkpoint(path)
    return "mls2s", (params, mc), mc.history, mc.horizon, Scaler(**doc["meta"]["scaler"])


def forecast(kind: str, model, scaler, m: SpeedMatrix, g: RoadGraph, windows, horizon: int) -> np.ndarray:
    """Predictions ``len(windows) x n x horizon`` in original units."""
    if kind == "mls2s":
        params, mc = model
        return predict_windows(normalize_propagation(g), params, mc, windows, scaler)
    if kind == "ha":
        return np.stack([ha_predict(model, m.values, m.mask, w.t_anchor, horizon)[0] for w in windows])
    p = model.order
    if p > windows[0].X.shape[1]:
        raise ContractError(f"VAR order {p} exceeds the history length {windows[0].X.shape[1]}")
    return np.stack([scaler.invert(var_predict(model, scaler.apply(w.X[:, -p:]), horizon)) for w in windows])


def _check_horizons(cfg: RunConfig, horizon: int) -> list[int]:
    bad = [k for k in cfg.horizons if k > horizon]
    if bad:
        raise UsageError(f"horizons {bad} exceed the trained horizon {horizon}")
    return list(cfg.horizons) or list(range(1, horizon + 1))


def _report(kind, model, scaler, cfg, m, g, history, horizon):
    parts = dict(zip(cfgmod.SPLITS, _splits(m, history, horizon)))
    windows = parts[cfg.split]
    pred = forecast(kind, model, scaler, m, g, windows, horizon)
    Y, mask = truth_of(windows)
    return evaluate(kind, pred, Y, mask, floor=cfg.mape_floor, zeros_missing=cfg.zeros_missing)


# ---- commands ---------------------------------------------------------------

def cmd_prepare(cfg: RunConfig, echo) -> int:
    trips = _require(cfg.trips, "trips")
    segments = _require(cfg.segments, "segments")
    out = Path(cfg.out_dir or ".")
    _, _, report = run_pipeline(trips, segments, out, cfg.pipeline())
    echo(report.render().rstrip())
    return EXIT_OK


def cmd_synth(cfg: RunConfig, echo) -> int:
    out = Path(cfg.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    m, g = generate(cfg.synth())
    write_speed_matrix(m, out / "speed_matrix.csv")
    write_edge_list(g, out / "edges.csv", out / "nodes.txt")
    echo(f"wrote {m.n} nodes x {m.T} slots to {out}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, echo) -> int:
    m, g = load_dataset(cfg.data)
    out = Path(cfg.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    fit = {"mls2s": lambda: fit_mls2s(cfg, m, g, out, echo),
           "ha": lambda: fit_ha(cfg, m, out),
           "var": lambda: fit_var(cfg, m, out)}[cfg.model]
    path = fit()
    (out / "config.txt").write_text(cfgmod.render(cfg))
    echo(f"wrote {path}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, echo) -> int:
    path = _require(cfg.checkpoint, "checkpoint")
    m, g = load_dataset(cfg.data)
    kind, model, history, horizon, scaler = load_model(path)
    horizons = _check_horizons(cfg, horizon)
    text = format_report([_report(kind, model, scaler, cfg, m, g, history, horizon)], horizons)
    if cfg.out_dir:
        Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(cfg.out_dir) / "metrics.csv").write_text(text)
    echo(text.rstrip())
    return EXIT_OK


def cmd_compare(cfg: RunConfig, echo) -> int:
    m, g = load_dataset(cfg.data)
    horizons = _check_horizons(cfg, cfg.horizon)
    out = Path(cfg.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    paths = [fit_mls2s(cfg, m, g, out, echo), fit_ha(cfg, m, out), fit_var(cfg, m, out)]
    reports = []
    for path in paths:
        kind, model, history, horizon, scaler = load_model(path)
        reports.append(_report(kind, model, scaler, cfg, m, g, history, horizon))
    text = format_report(reports, horizons)
    (out / "compare.csv").write_text(text)
    (out / "config.txt").write_text(cfgmod.render(cfg))
    echo(text.rstrip())
    return EXIT_OK


COMMANDS = {"prepare": cmd_prepare, "synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
            "compare": cmd_compare}
SUMMARIES = {
    "prepare": "build a speed matrix and road graph from raw trips",
    "synth": "generate a seeded synthetic ring-road dataset",
    "train": "train MLS2S or fit a baseline on a dataset",
    "eval": "report per-step metrics of a trained model",
    "compare": "train MLS2S, HA and VAR and write one combined metrics table",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mls2s", description="Multilevel seq2seq graph-convolutional "
                                     "GRU traffic forecasting.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, groups in GROUPS.items():
        p = sub.add_parser(name, help=SUMMARIES[name], description=SUMMARIES[name])
        p.add_argument("--config", help="key=value file read before command-line flags")
        keys = [f.name for f in cfgmod.FIELDS.values()
                if f.metadata["group"] in groups and (f.metadata["group"] != "io" or f.name in IO_KEYS[name])]
        keys += EXTRA_KEYS.get(name, ())
        for key in keys:
            f = cfgmod.FIELDS[key]
            default = f.default
            shown = ",".join(map(str, default)) if isinstance(default, tuple) else default
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=argparse.SUPPRESS,
                           choices=f.metadata.get("choices"), metavar=None if f.metadata.get("choices") else "X",
                           help=f"{f.metadata['help']} (default: {shown!r})")
    return parser


def main(argv=None, echo=print) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        file_values = cfgmod.read_config_file(_require(args.config, "config")) if args.config else {}
        cfg = cfgmod.build_config(file_values, overrides)
        return COMMANDS[args.command](cfg, echo)
    except (UsageError, ContractError) as exc:
        print(f"mls2s {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"mls2s {args.command}: error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_USAGE
    except (InputError, ShapeError) as exc:
        print(f"mls2s {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"mls2s {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
