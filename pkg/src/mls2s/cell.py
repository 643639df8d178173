"""Graph-convolutional GRU cell.

Each gate of a standard GRU is computed by a one-hop graph convolution
``act(P @ [x, h] @ W + b)`` instead of a dense layer, so a node's state mixes
with those of its neighbours at every step.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numeric as nm
from .errors import ShapeError
from .numeric import Tensor

ACTIVATIONS = {"sigmoid": nm.sigmoid, "tanh": nm.tanh, "none": None}


@dataclass
class GConvParams:
    W: Tensor  # (d_in + d_hidden) x d_out
    b: Tensor  # 1 x d_out

    @property
    def d_out(self) -> int:
        return self.W.shape[1]

    @property
    def width(self) -> int:
        return self.W.shape[0]


@dataclass
class GCGRUParams:
    reset: GConvParams
    update: GConvParams
    candidate: GConvParams
    d_in: int
    d_hidden: int

    def __post_init__(self):
        for gate in (self.reset, self.update, self.candidate):
            if gate.W.shape != (self.d_in + self.d_hidden, self.d_hidden) or gate.b.shape != (1, self.d_hidden):
                raise ShapeError(
                    f"gate shapes {gate.W.shape}/{gate.b.shape} inconsistent with "
                    f"d_in={self.d_in}, d_hidden={self.d_hidden}")

    def named(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for gate in ("reset", "update", "candidate"):
            p = getattr(self, gate)
            out[f"{prefix}{gate}.W"] = p.W
            out[f"{prefix}{gate}.b"] = p.b
        return out


def init_gcgru(d_in: int, d_hidden: int, rng: np.random.Generator) -> GCGRUParams:
    """Weights uniform in +-sqrt(1/(d_in + d_hidden)), zero biases."""
    bound = np.sqrt(1.0 / (d_in + d_hidden))

    def gate():
        W = Tensor(rng.uniform(-bound, bound, size=(d_in + d_hidden, d_hidden)), requires_grad=True)
        return GConvParams(W, Tensor(np.zeros((1, d_hidden)), requires_grad=True))

    return GCGRUParams(gate(), gate(), gate(), d_in, d_hidden)


def zeros_gcgru(d_in: int, d_hidden: int) -> GCGRUParams:
    def gate():
        return GConvParams(Tensor(np.zeros((d_in + d_hidden, d_hidden)), requires_grad=True),
                           Tensor(np.zeros((1, d_hidden)), requires_grad=True))
    return GCGRUParams(gate(), gate(), gate(), d_in, d_hidden)


def gconv(P, H_in: Tensor, params: GConvParams, activation: str = "none", hops: int = 1) -> Tensor:
    """``activation(P^hops @ H_in @ W + b)``; the bias is added before the activation."""
    if H_in.shape[1] != params.width:
        raise ShapeError(f"gconv: input width {H_in.shape[1]} != weight rows {params.W.shape[0]}")
    try:
        act = ACTIVATIONS[activation]
    except KeyError:
        raise ValueError(f"unknown activation {activation!r}") from None
    H = H_in
    for _ in range(hops):
        H = nm.propagate(P, H)
    out = nm.add_bias(nm.matmul(H, params.W), params.b)
    return out if act is None else act(out)


def gcgru_step(P, x_t: Tensor, h_prev: Tensor, params: GCGRUParams, hops: int = 1) -> Tensor:
    """One recurrence step; returns the new hidden state ``u*h + (1-u)*c``."""
    if x_t.shape[1] != params.d_in or h_prev.shape[1] != params.d_hidden:
        raise ShapeError(
            f"gcgru_step: got x {x_t.shape} and h {h_prev.shape} for "
            f"d_in={params.d_in}, d_hidden={params.d_hidden}")
    if x_t.shape[0] != h_prev.shape[0]:
        raise ShapeError(f"gcgru_step: x {x_t.shape} and h {h_prev.shape} row counts differ")
    xh = nm.concat_cols(x_t, h_prev)
    r = gconv(P, xh, params.reset, "sigmoid", hops)
    u = gconv(P, xh, params.update, "sigmoid", hops)
    c = gconv(P, nm.concat_cols(x_t, nm.mul(r, h_prev)), params.candidate, "tanh", hops)
    # u*h + (1-u)*c rewritten as c + u*(h - c)
    return nm.add(c, nm.mul(u, nm.sub(h_prev, c)))
