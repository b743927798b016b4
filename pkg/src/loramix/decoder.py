"""Frozen decoder-only language core.

Pre-norm transformer blocks with grouped-query attention, rotary position
embedding on a leading fraction of each head, an append-only KV cache, and an
output projection that reuses the input embedding matrix.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import numerics as nx
from .errors import AlignmentError, CapacityError, ConfigurationError, DomainError
from .numerics import SplitMix64, Tensor

ROPE_BASE = 10000.0
MASK_VALUE = -1e30


@dataclass(frozen=True)
class DecoderConfig:
    d_model: int = 64
    n_layers: int = 2
    n_q_heads: int = 8
    n_kv_heads: int = 2
    rotary_fraction: float = 0.75
    vocab_size: int = 512
    max_context: int = 512
    mlp_hidden: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.mlp_hidden is None:
            object.__setattr__(self, "mlp_hidden", 4 * self.d_model)
        if self.d_model % self.n_q_heads:
            raise ConfigurationError("d_model must be divisible by n_q_heads")
        if self.n_q_heads % self.n_kv_heads:
            raise ConfigurationError("n_q_heads must be divisible by n_kv_heads")
        if not 0.0 <= self.rotary_fraction <= 1.0:
            raise ConfigurationError("rotary_fraction must lie in [0, 1]")
        if self.rotary_dims % 2:
            raise ConfigurationError(f"rotary dim count {self.rotary_dims} must be even")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_q_heads

    @property
    def rotary_dims(self) -> int:
        return int(round(self.rotary_fraction * self.head_dim))

    @property
    def group_size(self) -> int:
        return self.n_q_heads // self.n_kv_heads

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "DecoderConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigurationError(f"unknown decoder config keys: {sorted(unknown)}")
        return cls(**data)


# Reference widths of the full-size backbone. Only used for arithmetic
# (cache sizes, adapter parameter counts); never instantiated.
FULL_SCALE = DecoderConfig(
    d_model=3072,
    n_layers=32,
    n_q_heads=24,
    n_kv_heads=8,
    rotary_fraction=0.75,
    vocab_size=200_064,
    max_context=131_072,
    mlp_hidden=8192,
)

TOY = DecoderConfig()


def peak_lr(B: float, D: float) -> float:
    """Peak learning rate ``B * D**-0.32`` for a run over ``D`` training tokens."""
    if B <= 0 or D <= 0:
        raise DomainError("peak_lr needs B > 0 and D > 0")
    return B * D**-0.32


# -- rotary embedding ---------------------------------------------------------


def rope_angles(positions, rotary_dims: int, base: float = ROPE_BASE) -> np.ndarray:
    """Angles [T, rotary_dims/2] for pairwise rotation."""
    positions = np.asarray(positions, dtype=np.float64)
    i = np.arange(rotary_dims // 2, dtype=np.float64)
    theta = base ** (-2.0 * i / rotary_dims)
    return positions[:, None] * theta[None, :]


def _rotate(x: np.ndarray, cos: np.ndarray, sin: np.ndarray, rotary_dims: int) -> np.ndarray:
    out = x.copy()
    even = x[..., 0:rotary_dims:2]
    odd = x[..., 1:rotary_dims:2]
    out[..., 0:rotary_dims:2] = even * cos - odd * sin
    out[..., 1:rotary_dims:2] = even * sin + odd * cos
    return out


def apply_fractional_rope(x, positions, rotary_dims: int, base: float = ROPE_BASE) -> Tensor:
    """Rotate the first ``rotary_dims`` of each head in ``x`` [..., T, heads, head_dim].

    Dimension pairs (2i, 2i+1) turn by ``position * base**(-2i/rotary_dims)``;
    everything past ``rotary_dims`` is copied through untouched.
    """
    x = nx.as_tensor(x)
    if rotary_dims % 2:
        raise ConfigurationError("rotary_dims must be even")
    if rotary_dims == 0:
        return x
    positions = np.asarray(positions)
    if positions.shape != (x.shape[-3],):
        raise ConfigurationError(f"need {x.shape[-3]} positions, got shape {positions.shape}")
    angles = rope_angles(positions, rotary_dims, base)[:, None, :]
    cos, sin = np.cos(angles), np.sin(angles)
    out = _rotate(x.data, cos, sin, rotary_dims)
    return nx.make_op(out, (x,), lambda g: (_rotate(g, cos, -sin, rotary_dims),), "rope")


# -- KV cache -----------------------------------------------------------------


class KVCache:
    """Preallocated per-layer key/value store; keys are stored already rotated."""

    def __init__(self, config: DecoderConfig, capacity: int | None = None):
        self.config = config
        self.capacity = config.max_context if capacity is None else min(capacity, config.max_context)
        shape = (config.n_layers, self.capacity, config.n_kv_heads, config.head_dim)
        self.keys = np.zeros(shape)
        self.values = np.zeros(shape)
        self.length = 0

    @property
    def num_elements(self) -> int:
        return self.keys.size + self.values.size

    def check_room(self, n: int):
        if self.length + n > self.capacity:
            raise CapacityError(
                f"KV cache holds {self.length}/{self.capacity} tokens; cannot append {n}"
            )

    def write(self, layer: int, k: np.ndarray, v: np.ndarray):
        t = k.shape[0]
        self.keys[layer, self.length : self.length + t] = k
        self.values[layer, self.length : self.length + t] = v

    def view(self, layer: int, upto: int):
        return self.keys[layer, :upto], self.values[layer, :upto]


def kv_cache_elements(config: DecoderConfig, tokens: int) -> int:
    return 2 * config.n_layers * tokens * config.n_kv_heads * config.head_dim


# -- parameters ---------------------------------------------------------------


def linear_shapes(config: DecoderConfig) -> dict:
    """Every linear layer of the decoder as ``{path: (out, in)}``."""
    d, hd = config.d_model, config.head_dim
    shapes = {}
    for i in range(config.n_layers):
        p = f"layers.{i}"
        shapes[f"{p}.attn.q"] = (config.n_q_heads * hd, d)
        shapes[f"{p}.attn.k"] = (config.n_kv_heads * hd, d)
        shapes[f"{p}.attn.v"] = (config.n_kv_heads * hd, d)
        shapes[f"{p}.attn.o"] = (d, config.n_q_heads * hd)
        shapes[f"{p}.mlp.in"] = (config.mlp_hidden, d)
        shapes[f"{p}.mlp.out"] = (d, config.mlp_hidden)
    return shapes


def init_decoder_params(config: DecoderConfig) -> dict:
    rng = SplitMix64(config.seed)
    d = config.d_model
    params = {"embed": rng.fork("embed").normal((config.vocab_size, d), d**-0.5)}
    for path, (out_dim, in_dim) in linear_shapes(config).items():
        params[f"{path}.weight"] = rng.fork(path).normal((out_dim, in_dim), in_dim**-0.5)
        params[f"{path}.bias"] = np.zeros(out_dim)
    for i in range(config.n_layers):
        for norm in ("ln1", "ln2"):
            params[f"layers.{i}.{norm}.gain"] = np.ones(d)
            params[f"layers.{i}.{norm}.bias"] = np.zeros(d)
    params["final_norm.gain"] = np.ones(d)
    params["final_norm.bias"] = np.zeros(d)
    return {name: Tensor(value) for name, value in params.items()}


class DecoderModel:
    """Decoder weights plus the LoRA adapters attached to them.

    Adapters never touch ``params``; which ones are applied is chosen per call
    through the ``adapters`` argument of :meth:`forward`.
    """

    def __init__(self, config: DecoderConfig = TOY, params: dict | None = None):
        self.config = config
        self.params = params if params is not None else init_decoder_params(config)
        self.adapters = {}
        self.placeholder_ids = frozenset()

    # tied: the unembedding is this very matrix
    @property
    def embedding(self) -> Tensor:
        return self.params["embed"]

    def fingerprint(self) -> str:
        return nx.fingerprint(self.params)

    def linear(self, x, path: str, adapters=()) -> Tensor:
        y = nx.linear(x, self.params[f"{path}.weight"], self.params[f"{path}.bias"])
        for name in adapters:
            adapter = self.adapters[name]
            if path in adapter.A:
                delta = nx.linear(nx.linear(x, adapter.A[path]), adapter.B[path])
                y = y + delta * adapter.scale
        return y

    def attention(self, x, layer: int, positions, adapters=(), cache: KVCache | None = None):
        """Causal grouped-query self-attention for ``x`` [..., T, d_model]."""
        cfg = self.config
        p = f"layers.{layer}.attn"
        t = x.shape[-2]
        lead = x.shape[:-2]
        hd, g, hkv = cfg.head_dim, cfg.group_size, cfg.n_kv_heads

        q = self.linear(x, f"{p}.q", adapters).reshape(*lead, t, cfg.n_q_heads, hd)
        k = self.linear(x, f"{p}.k", adapters).reshape(*lead, t, hkv, hd)
        v = self.linear(x, f"{p}.v", adapters).reshape(*lead, t, hkv, hd)
        q = apply_fractional_rope(q, positions, cfg.rotary_dims)
        k = apply_fractional_rope(k, positions, cfg.rotary_dims)

        offset = int(positions[0])
        if cache is not None:
            if lead:
                raise ConfigurationError("KV cache decoding works on a single unbatched sequence")
            cache.write(layer, k.data, v.data)
            keys, values = cache.view(layer, offset + t)
            k, v = Tensor(keys), Tensor(values)
        s = k.shape[-3]

        # contiguous grouping: query head h reads kv head h // group_size
        q = q.reshape(*lead, t, hkv, g, hd).transpose(_perm(len(lead), (1, 2, 0, 3)))
        kt = k.transpose(_perm(len(lead), (1, 2, 0)))  # [..., hkv, hd, S]
        kt = kt.reshape(*lead, hkv, 1, hd, s)
        scores = nx.matmul(q, kt) * (1.0 / math.sqrt(hd))  # [..., hkv, g, T, S]
        causal = np.where(
            np.arange(s)[None, :] > (offset + np.arange(t))[:, None], MASK_VALUE, 0.0
        )
        probs = nx.softmax(scores + causal, axis=-1)
        vv = v.transpose(_perm(len(lead), (1, 0, 2))).reshape(*lead, hkv, 1, s, hd)
        ctx = nx.matmul(probs, vv)  # [..., hkv, g, T, hd]
        ctx = ctx.transpose(_perm(len(lead), (2, 0, 1, 3))).reshape(*lead, t, cfg.n_q_heads * hd)
        return self.linear(ctx, f"{p}.o", adapters)

    def mlp(self, x, layer: int, adapters=()):
        p = f"layers.{layer}.mlp"
        return self.linear(nx.gelu(self.linear(x, f"{p}.in", adapters)), f"{p}.out", adapters)

    def _norm(self, x, name):
        return nx.layer_norm(x, self.params[f"{name}.gain"], self.params[f"{name}.bias"])

    def embed_tokens(self, tokens, injected=None) -> Tensor:
        tokens = np.asarray(tokens, dtype=np.int64)
        h = nx.embedding(self.embedding, tokens)
        if injected:
            h = inject_spans(h, tokens, injected, self.placeholder_ids, self.config.d_model)
        return h

    def forward(self, tokens, injected=None, adapters=(), cache: KVCache | None = None) -> Tensor:
        """Logits [..., T, vocab] for ``tokens`` [..., T].

        ``injected`` is a list of ``(start, Tensor[..., n, d_model])`` spans that
        overwrite placeholder-token embeddings. With a ``cache``, ``tokens`` is
        the new suffix only and the cache grows by its length.
        """
        tokens = np.asarray(tokens, dtype=np.int64)
        t = tokens.shape[-1]
        start = 0
        if cache is not None:
            cache.check_room(t)
            start = cache.length
        elif t > self.config.max_context:
            raise CapacityError(f"sequence of {t} tokens exceeds max_context {self.config.max_context}")
        for name in adapters:
            if name not in self.adapters:
                raise ConfigurationError(f"adapter {name!r} is not attached")
        positions = np.arange(start, start + t)
        h = self.embed_tokens(tokens, injected)
        for i in range(self.config.n_layers):
            h = h + self.attention(self._norm(h, f"layers.{i}.ln1"), i, positions, adapters, cache)
            h = h + self.mlp(self._norm(h, f"layers.{i}.ln2"), i, adapters)
        if cache is not None:
            cache.length += t
        h = self._norm(h, "final_norm")
        return nx.matmul(h, nx.transpose(self.embedding))

    def decode_step(self, token: int, cache: KVCache, adapters=()) -> np.ndarray:
        """Next-token logits after appending one token to ``cache``."""
        with nx.no_grad():
            return self.forward([int(token)], adapters=adapters, cache=cache).data[-1]

    def generate(
        self,
        prompt,
        max_new_tokens: int,
        injected=None,
        adapters=(),
        stop_id: int | None = None,
    ) -> list:
        """Greedy (top-1) continuation of ``prompt`` using the KV cache."""
        prompt = np.asarray(prompt, dtype=np.int64)
        cache = KVCache(self.config)
        with nx.no_grad():
            logits = self.forward(prompt, injected=injected, adapters=adapters, cache=cache).data[-1]
            out = []
            for _ in range(max_new_tokens):
                nxt = greedy(logits)
                out.append(nxt)
                if nxt == stop_id or cache.length >= cache.capacity:
                    break
                logits = self.decode_step(nxt, cache, adapters)
        return out

    # -- checkpoints ----------------------------------------------------------
    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        nx.save_tensors(directory / "decoder.p4tz", self.params)
        (directory / "decoder_config.json").write_text(json.dumps(self.config.to_json(), indent=2))

    @classmethod
    def load(cls, directory) -> "DecoderModel":
        directory = Path(directory)
        config = DecoderConfig.from_json(json.loads((directory / "decoder_config.json").read_text()))
        arrays, _ = nx.load_tensors(directory / "decoder.p4tz")
        return cls(config, {k: Tensor(v) for k, v in arrays.items()})


def greedy(logits) -> int:
    return int(np.argmax(np.asarray(logits)))


def _perm(n_lead: int, tail) -> tuple:
    return tuple(range(n_lead)) + tuple(n_lead + a for a in tail)


def inject_spans(h: Tensor, tokens: np.ndarray, spans, placeholder_ids, width: int) -> Tensor:
    covered = np.zeros(tokens.shape[-1], dtype=bool)
    for start, rows in spans:
        rows = nx.as_tensor(rows)
        n = rows.shape[-2]
        if rows.shape[-1] != width:
            raise AlignmentError(f"injected span width {rows.shape[-1]} != d_model {width}")
        if start < 0 or start + n > tokens.shape[-1]:
            raise AlignmentError(f"span [{start}, {start + n}) falls outside the sequence")
        window = tokens[..., start : start + n]
        if not np.isin(window, list(placeholder_ids)).all():
            raise AlignmentError(f"span [{start}, {start + n}) does not cover placeholder tokens only")
        covered[start : start + n] = True
        h = nx.scatter_rows(h, rows, np.arange(start, start + n))
    is_placeholder = np.isin(tokens, list(placeholder_ids))
    if (is_placeholder & ~covered).any():
        raise AlignmentError("placeholder tokens left without injected embeddings")
    return h
