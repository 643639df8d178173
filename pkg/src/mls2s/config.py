"""Flat ``key=value`` run configuration shared by every CLI command.

Values come from the dataclass defaults, then an optional config file, then
command-line flags. Keys are validated against :class:`RunConfig`; unknown
keys are rejected.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ContractError
from .pipeline import AGGREGATIONS, PipelineConfig
from .seq2seq import MLS2SConfig
from .synth import SynthConfig
from .trainer import TrainConfig

MODELS = ("mls2s", "ha", "var")
SPLITS = ("train", "val", "test")


def _opt(default, group, help, **kw):
    return field(default=default, metadata={"group": group, "help": help, **kw})


@dataclass
class RunConfig:
    # inputs and outputs
    trips: str = _opt("", "io", "raw trip records (link_id,start_time,end_time,speed)")
    segments: str = _opt("", "io", "road segments (link_id,origin_id,destination_id)")
    data: str = _opt("", "io", "dataset directory holding speed_matrix.csv, edges.csv and nodes.txt")
    checkpoint: str = _opt("", "io", "model file written by train")
    out_dir: str = _opt("", "io", "output directory")
    # dataset preparation
    interval: int = _opt(300, "pipeline", "raw slot width in seconds")
    aggregation: str = _opt("max", "pipeline", "per-slot aggregation", choices=tuple(AGGREGATIONS))
    tau: int = _opt(1000, "pipeline", "drop links whose longest missing run exceeds this many slots")
    top_k: int = _opt(0, "pipeline", "keep the k links with most trips after filtering (0 keeps all)")
    reaggregate_factor: int = _opt(3, "pipeline", "raw slots merged into one output slot")
    impute_period: int = _opt(672, "pipeline", "imputation cycle length in output slots")
    impute_lookback: int = _opt(4, "pipeline", "earlier cycles averaged when imputing")
    sigma: float = _opt(1.0, "pipeline", "Gaussian smoothing width in output slots")
    # synthetic data
    nodes: int = _opt(8, "synth", "ring size")
    days: int = _opt(14, "synth", "number of simulated days")
    synth_interval: int = _opt(900, "synth", "slot width of the synthetic series in seconds")
    coupling: float = _opt(SynthConfig.coupling, "synth", "neighbour diffusion strength of congestion shocks")
    noise: float = _opt(SynthConfig.noise, "synth", "shock amplitude (0 gives exactly periodic series)")
    decay: float = _opt(SynthConfig.decay, "synth", "per-slot persistence of congestion shocks")
    event_rate: float = _opt(SynthConfig.event_rate, "synth", "per-node per-slot shock probability")
    # model
    model: str = _opt("mls2s", "model", "forecaster to train", choices=MODELS)
    levels: int = _opt(2, "model", "number of encoder levels")
    hidden_dim: int = _opt(64, "model", "GC-GRU hidden units")
    history: int = _opt(12, "model", "input window length in slots")
    horizon: int = _opt(4, "model", "forecast length in slots")
    gconv_hops: int = _opt(1, "model", "graph convolution hops")
    # training
    epochs: int = _opt(60, "train", "training epochs")
    batch_size: int = _opt(16, "train", "windows per mini-batch")
    base_lr: float = _opt(0.01, "train", "initial Adam learning rate")
    decay_ratio: float = _opt(0.1, "train", "learning-rate multiplier at each milestone")
    decay_epochs: tuple = _opt((20, 40), "train", "comma-separated learning-rate milestones")
    tf_prob: float = _opt(0.5, "train", "per-step teacher forcing probability")
    seed: int = _opt(0, "train", "random seed for initialisation, shuffling and synthetic data")
    # baselines
    ha_period: int = _opt(0, "baseline", "HA cycle length in slots (0 means one week)")
    ha_lookback: int = _opt(4, "baseline", "earlier cycles averaged by HA")
    var_order: int = _opt(3, "baseline", "VAR lag order")
    var_ridge: float = _opt(1e-4, "baseline", "ridge penalty on VAR lag coefficients")
    # evaluation
    horizons: tuple = _opt((), "eval", "comma-separated forecast steps to report (empty reports all)")
    split: str = _opt("test", "eval", "split to evaluate", choices=SPLITS)
    mape_floor: float = _opt(1.0, "eval", "ignore |truth| below this in MAPE")
    zeros_missing: bool = _opt(False, "eval", "treat zero readings as missing")

    def __post_init__(self):
        for f in fields(self):
            choices = f.metadata.get("choices")
            if choices and getattr(self, f.name) not in choices:
                raise ContractError(f"{f.name}={getattr(self, f.name)!r} is not one of {', '.join(choices)}")
        if any(k < 1 for k in self.horizons):
            raise ContractError(f"horizons must be >= 1, got {self.horizons}")

    # ---- views onto module configs ------------------------------------------

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(interval_seconds=self.interval, aggregation=self.aggregation, tau=self.tau,
                              top_k_by_trip_count=self.top_k, reaggregate_factor=self.reaggregate_factor,
                              ha_period=self.impute_period, ha_lookback=self.impute_lookback,
                              sigma_slots=self.sigma)

    def synth(self) -> SynthConfig:
        return SynthConfig(nodes=self.nodes, days=self.days, interval_seconds=self.synth_interval,
                           seed=self.seed, coupling=self.coupling, noise=self.noise, decay=self.decay,
                           event_rate=self.event_rate)

    def model_config(self) -> MLS2SConfig:
        return MLS2SConfig(levels=self.levels, hidden_dim=self.hidden_dim, horizon=self.horizon,
                           history=self.history, teacher_forcing_prob=self.tf_prob, gconv_hops=self.gconv_hops)

    def train_config(self) -> TrainConfig:
        return TrainConfig(base_lr=self.base_lr, decay_ratio=self.decay_ratio, decay_epochs=self.decay_epochs,
                           epochs=self.epochs, batch_size=self.batch_size, seed=self.seed,
                           history=self.history, horizon=self.horizon, tf_prob=self.tf_prob)


FIELDS = {f.name: f for f in fields(RunConfig)}


def parse_value(key: str, text: str):
    """Convert ``text`` to the type of the ``key`` default."""
    if key not in FIELDS:
        raise ContractError(f"unknown config key {key!r}")
    kind = type(FIELDS[key].default)
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if kind is tuple:
            return tuple(int(x) for x in text.split(",") if x.strip())
        return kind(text)
    except ValueError:
        raise ContractError(f"{key}: cannot read {text!r} as {kind.__name__}") from None


def read_config_file(path) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ContractError(f"{path}: line {lineno} is not key=value")
        key = key.strip()
        if key not in FIELDS:
            raise ContractError(f"{path}: line {lineno}: unknown config key {key!r}")
        values[key] = parse_value(key, value)
    return values


def build_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then file values, then overrides (raw strings or typed values)."""
    merged = dict(file_values or {})
    for key, value in (overrides or {}).items():
        merged[key] = parse_value(key, value) if isinstance(value, str) else value
    unknown = sorted(set(merged) - set(FIELDS))
    if unknown:
        raise ContractError(f"unknown config keys: {', '.join(unknown)}")
    return replace(RunConfig(), **merged)


def render(cfg: RunConfig) -> str:
    def fmt(v):
        return ",".join(str(x) for x in v) if isinstance(v, tuple) else str(v)
    return "".join(f"{f.name}={fmt(getattr(cfg, f.name))}\n" for f in fields(cfg))
