"""Small building blocks shared by the audio and vision encoders."""

from __future__ import annotations

import math

import numpy as np

from . import numerics as nx
from .decoder import apply_fractional_rope
from .errors import ConfigurationError
from .numerics import SplitMix64, Tensor


def init_linear(params: dict, rng: SplitMix64, name: str, in_dim: int, out_dim: int):
    params[f"{name}.weight"] = Tensor(rng.fork(name).normal((out_dim, in_dim), in_dim**-0.5))
    params[f"{name}.bias"] = Tensor(np.zeros(out_dim))


def init_norm(params: dict, name: str, dim: int):
    params[f"{name}.gain"] = Tensor(np.ones(dim))
    params[f"{name}.bias"] = Tensor(np.zeros(dim))


def linear(params: dict, name: str, x) -> Tensor:
    return nx.linear(x, params[f"{name}.weight"], params[f"{name}.bias"])


def norm(params: dict, name: str, x) -> Tensor:
    return nx.layer_norm(x, params[f"{name}.gain"], params[f"{name}.bias"])


def init_self_attention(params, rng, name, dim):
    for proj in ("q", "k", "v", "o"):
        init_linear(params, rng, f"{name}.{proj}", dim, dim)


def self_attention(params: dict, name: str, x, n_heads: int, rotary: bool = True) -> Tensor:
    """Bidirectional multi-head self-attention over x [..., T, D]."""
    t, dim = x.shape[-2], x.shape[-1]
    lead = x.shape[:-2]
    hd = dim // n_heads
    n = len(lead)

    def heads(proj):
        return linear(params, f"{name}.{proj}", x).reshape(*lead, t, n_heads, hd)

    q, k, v = heads("q"), heads("k"), heads("v")
    if rotary:
        positions = np.arange(t)
        q = apply_fractional_rope(q, positions, hd)
        k = apply_fractional_rope(k, positions, hd)
    perm = tuple(range(n)) + (n + 1, n, n + 2)  # [..., H, T, hd]
    q, k, v = q.transpose(perm), k.transpose(perm), v.transpose(perm)
    kt = k.swapaxes(-1, -2)
    probs = nx.softmax(nx.matmul(q, kt) * (1.0 / math.sqrt(hd)), axis=-1)
    ctx = nx.matmul(probs, v).transpose(perm).reshape(*lead, t, dim)
    return linear(params, f"{name}.o", ctx)


class MLPProjector:
    """Two-layer MLP (linear, GELU, linear) from encoder width to ``d_model``."""

    def __init__(self, in_dim: int, d_model: int, seed: int = 0, name: str = "projector"):
        self.in_dim, self.d_model = in_dim, d_model
        rng = SplitMix64(seed).fork(name)
        self.params = {}
        init_linear(self.params, rng, "fc1", in_dim, d_model)
        init_linear(self.params, rng, "fc2", d_model, d_model)

    def __call__(self, x) -> Tensor:
        x = nx.as_tensor(x)
        if x.shape[-1] != self.in_dim:
            raise ConfigurationError(f"projector expects width {self.in_dim}, got {x.shape[-1]}")
        return linear(self.params, "fc2", nx.gelu(linear(self.params, "fc1", x)))
