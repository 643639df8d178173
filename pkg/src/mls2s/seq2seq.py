"""Multilevel sequence-to-sequence forecaster.

``L`` encoders of depth 1..L read the same history. The top-layer final state
of the level-``l`` encoder initialises layer ``l`` of an L-layer decoder, which
then rolls forward ``horizon`` steps, feeding back its own predictions.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numeric as nm
from .cell import GCGRUParams, gcgru_step, init_gcgru, zeros_gcgru
from .errors import ContractError, InputError, ShapeError
from .numeric import Tensor

CHECKPOINT_FORMAT = "mls2s-checkpoint/1"


@dataclass
class MLS2SConfig:
    levels: int = 2
    hidden_dim: int = 64
    input_dim: int = 1
    horizon: int = 4
    history: int = 12
    teacher_forcing_prob: float = 0.5
    gconv_hops: int = 1

    def __post_init__(self):
        for name in ("levels", "hidden_dim", "input_dim", "horizon", "history", "gconv_hops"):
            if getattr(self, name) < 1:
                raise ContractError(f"MLS2SConfig.{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.teacher_forcing_prob <= 1.0:
            raise ContractError("MLS2SConfig.teacher_forcing_prob must lie in [0, 1]")


class MLS2SParams:
    """All trainable tensors of the network, addressable by dotted path names."""

    def __init__(self, encoder: list[list[GCGRUParams]], decoder: list[GCGRUParams],
                 out_W: Tensor, out_b: Tensor):
        if len(encoder) != len(decoder):
            raise ShapeError(f"{len(encoder)} encoder levels but {len(decoder)} decoder layers")
        for depth, level in enumerate(encoder, 1):
            if len(level) != depth:
                raise ShapeError(f"encoder level {depth} has {len(level)} layers")
        self.encoder = encoder
        self.decoder = decoder
        self.out_W = out_W
        self.out_b = out_b

    @property
    def levels(self) -> int:
        return len(self.decoder)

    def named(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for lv, level in enumerate(self.encoder, 1):
            for ly, cell in enumerate(level, 1):
                out.update(cell.named(f"encoder.level{lv}.layer{ly}."))
        for ly, cell in enumerate(self.decoder, 1):
            out.update(cell.named(f"decoder.layer{ly}."))
        out["output.W"] = self.out_W
        out["output.b"] = self.out_b
        for name, t in out.items():
            t.name = name
        return out

    def clone(self) -> "MLS2SParams":
        def cp(c: GCGRUParams) -> GCGRUParams:
            gates = [type(g)(Tensor(g.W.data, requires_grad=True), Tensor(g.b.data, requires_grad=True))
                     for g in (c.reset, c.update, c.candidate)]
            return GCGRUParams(*gates, c.d_in, c.d_hidden)
        return MLS2SParams([[cp(c) for c in lv] for lv in self.encoder], [cp(c) for c in self.decoder],
                           Tensor(self.out_W.data, requires_grad=True), Tensor(self.out_b.data, requires_grad=True))


def _structure(config: MLS2SConfig, make) -> MLS2SParams:
    H = config.hidden_dim
    encoder = [[make(config.input_dim if k == 0 else H, H) for k in range(depth)]
               for depth in range(1, config.levels + 1)]
    decoder = [make(1 if k == 0 else H, H) for k in range(config.levels)]
    return encoder, decoder


def init_params(config: MLS2SConfig, seed: int | np.random.Generator = 0) -> MLS2SParams:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    encoder, decoder = _structure(config, lambda i, h: init_gcgru(i, h, rng))
    bound = np.sqrt(1.0 / config.hidden_dim)
    out_W = Tensor(rng.uniform(-bound, bound, size=(config.hidden_dim, 1)), requires_grad=True)
    return MLS2SParams(encoder, decoder, out_W, Tensor(np.zeros((1, 1)), requires_grad=True))


def zero_params(config: MLS2SConfig) -> MLS2SParams:
    encoder, decoder = _structure(config, zeros_gcgru)
    return MLS2SParams(encoder, decoder, Tensor(np.zeros((config.hidden_dim, 1)), requires_grad=True),
                       Tensor(np.zeros((1, 1)), requires_grad=True))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def encode_level(P, inputs: Sequence, layers: Sequence[GCGRUParams], hops: int = 1) -> Tensor:
    """Run a stacked encoder over ``inputs``; return the top layer's final state."""
    if not layers:
        raise ContractError("encode_level: no layers")
    if len(inputs) == 0:
        raise ContractError("encode_level: empty input sequence")
    rows = inputs[0].shape[0]
    states = [Tensor(np.zeros((rows, cell.d_hidden))) for cell in layers]
    for x in inputs:
        below = _as_tensor(x)
        for k, cell in enumerate(layers):
            states[k] = gcgru_step(P, below, states[k], cell, hops)
            below = states[k]
    return states[-1]


def multilevel_encode(P, inputs: Sequence, params: MLS2SParams, hops: int = 1) -> list[Tensor]:
    inputs = [_as_tensor(x) for x in inputs]
    return [encode_level(P, inputs, level, hops) for level in params.encoder]


def project(h: Tensor, params: MLS2SParams) -> Tensor:
    return nm.add_bias(nm.matmul(h, params.out_W), params.out_b)


def decode(P, init_states: Sequence[Tensor], first_input, params: MLS2SParams, steps: int,
           targets: Sequence | None = None, tf_prob: float = 0.0,
           rng: np.random.Generator | None = None, hops: int = 1) -> list[Tensor]:
    """Roll the decoder forward ``steps`` times.

    Layer 1 consumes the previous prediction, or with probability ``tf_prob``
    the previous ground truth from ``targets``. The first step always consumes
    ``first_input``.
    """
    if len(init_states) != params.levels:
        raise ContractError(f"decode: {len(init_states)} initial states for {params.levels} decoder layers")
    if steps < 1:
        raise ContractError("decode: steps must be >= 1")
    if targets is not None and len(targets) < steps:
        raise ContractError(f"decode: {len(targets)} targets supplied for {steps} steps")
    if targets is not None and tf_prob > 0 and rng is None:
        rng = np.random.default_rng(0)
    states = list(init_states)
    x = _as_tensor(first_input)
    preds = []
    for s in range(steps):
        if s > 0:
            x = preds[-1]
            if targets is not None and tf_prob > 0 and rng.random() < tf_prob:
                x = _as_tensor(targets[s - 1])
        below = x
        for k, cell in enumerate(params.decoder):
            states[k] = gcgru_step(P, below, states[k], cell, hops)
            below = states[k]
        preds.append(project(below, params))
    return preds


def _frames(X, config: MLS2SConfig) -> tuple[list[Tensor], np.ndarray]:
    X = X.data if isinstance(X, Tensor) else np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[:, :, None]
    if X.ndim != 3 or X.shape[1] != config.history or X.shape[2] != config.input_dim:
        raise ShapeError(f"forward: input shape {X.shape} does not match history={config.history}, "
                         f"input_dim={config.input_dim}")
    return [Tensor(X[:, t, :]) for t in range(X.shape[1])], X[:, -1, :1]


def forward(P, X, params: MLS2SParams, config: MLS2SConfig, targets=None,
            tf_prob: float = 0.0, rng: np.random.Generator | None = None) -> Tensor:
    """Predict the next ``config.horizon`` values for every node.

    ``X`` is ``rows x history`` (or ``rows x history x input_dim``); rows may
    stack several samples of ``n`` nodes each. ``targets`` (``rows x horizon``)
    is only consulted for teacher forcing.
    """
    frames, last = _frames(X, config)
    init = multilevel_encode(P, frames, params, config.gconv_hops)
    tgt = None
    if targets is not None:
        T = targets.data if isinstance(targets, Tensor) else np.asarray(targets, dtype=np.float64)
        tgt = [T[:, s:s + 1] for s in range(T.shape[1])]
    preds = decode(P, init, last, params, config.horizon, tgt, tf_prob, rng, config.gconv_hops)
    out = preds[0]
    for p in preds[1:]:
        out = nm.concat_cols(out, p)
    return out


def predict(P, X, params: MLS2SParams, config: MLS2SConfig) -> np.ndarray:
    """Forward pass without recording gradients; returns a plain array."""
    return forward(P, X, params, config).data


# ---- checkpoints ----------------------------------------------------------

def save_checkpoint(path, params: MLS2SParams, config: MLS2SConfig, extra: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(config),
        "params": {name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
                   for name, t in params.named().items()},
    }
    if extra:
        doc["meta"] = extra
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_checkpoint(path) -> tuple[MLS2SParams, MLS2SConfig]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not a checkpoint ({exc})") from None
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise InputError(f"{path}: unsupported checkpoint format {doc.get('format')!r}")
    known = {f.name for f in fields(MLS2SConfig)}
    config = MLS2SConfig(**{k: v for k, v in doc["config"].items() if k in known})
    params = zero_params(config)
    named = params.named()
    stored = doc["params"]
    if set(stored) != set(named):
        missing = sorted(set(named) - set(stored))
        extra = sorted(set(stored) - set(named))
        raise InputError(f"{path}: parameter names mismatch (missing {missing}, unexpected {extra})")
    for name, t in named.items():
        entry = stored[name]
        if tuple(entry["shape"]) != t.shape:
            raise InputError(f"{path}: {name} has shape {entry['shape']}, expected {list(t.shape)}")
        t.data = np.array(entry["data"], dtype=np.float64).reshape(t.shape)
    return params, config
