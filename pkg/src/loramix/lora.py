"""Modality-specific LoRA adapters over the frozen decoder, and the modality router."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .decoder import DecoderConfig, DecoderModel, linear_shapes
from .errors import ConfigurationError
from .numerics import SplitMix64, Tensor

LORA_V = "LoRA_V"
LORA_A = "LoRA_A"


def attention_mlp_points(config: DecoderConfig) -> list:
    """Attach set of the audio adapter: every attention and MLP projection."""
    return [p for p in linear_shapes(config) if ".attn." in p or ".mlp." in p]


def all_linear_points(config: DecoderConfig) -> list:
    """Attach set of the vision adapter: every linear layer of the decoder.

    In this decoder the two sets coincide (the unembedding is the tied
    embedding, not a linear layer), so the functions differ only in intent.
    """
    return list(linear_shapes(config))


def lora_parameter_count(config: DecoderConfig, rank: int, points) -> int:
    """Sum of ``rank * (in + out)`` over the attach points."""
    shapes = linear_shapes(config)
    return sum(rank * (shapes[p][0] + shapes[p][1]) for p in points)


@dataclass
class LoraAdapter:
    name: str
    rank: int
    alpha: float
    attach_points: list
    A: dict = field(default_factory=dict)
    B: dict = field(default_factory=dict)

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    @classmethod
    def create(cls, name, config: DecoderConfig, rank: int, attach_points, alpha=None, seed: int = 0):
        """A ~ N(0, 1/in_dim), B = 0, so a fresh adapter is an exact identity."""
        if rank < 1:
            raise ConfigurationError("LoRA rank must be >= 1")
        shapes = linear_shapes(config)
        unknown = [p for p in attach_points if p not in shapes]
        if unknown:
            raise ConfigurationError(f"unknown attach points: {unknown}")
        rng = SplitMix64(seed).fork(name)
        adapter = cls(name, rank, float(rank if alpha is None else alpha), list(attach_points))
        for p in attach_points:
            out_dim, in_dim = shapes[p]
            adapter.A[p] = Tensor(rng.fork(p).normal((rank, in_dim), in_dim**-0.5))
            adapter.B[p] = Tensor(np.zeros((out_dim, rank)))
        return adapter

    def parameters(self) -> dict:
        out = {}
        for p in self.attach_points:
            out[f"{self.name}.{p}.A"] = self.A[p]
            out[f"{self.name}.{p}.B"] = self.B[p]
        return out

    def manifest(self) -> dict:
        return {
            "name": self.name,
            "rank": self.rank,
            "alpha": self.alpha,
            "attach_points": list(self.attach_points),
        }

    def save(self, path):
        path = Path(path)
        nx.save_tensors(path, self.parameters(), metadata=self.manifest())

    @classmethod
    def load(cls, path) -> "LoraAdapter":
        arrays, manifest = nx.load_tensors(path)
        adapter = cls(manifest["name"], int(manifest["rank"]), float(manifest["alpha"]),
                      list(manifest["attach_points"]))
        for p in adapter.attach_points:
            adapter.A[p] = Tensor(arrays[f"{adapter.name}.{p}.A"])
            adapter.B[p] = Tensor(arrays[f"{adapter.name}.{p}.B"])
        return adapter


def trainable_parameters(adapter: LoraAdapter) -> list:
    """``(name, tensor)`` pairs of the adapter's A and B matrices only."""
    return list(adapter.parameters().items())


def attach(adapter: LoraAdapter, model: DecoderModel) -> DecoderModel:
    """Register ``adapter`` on ``model``; base weights are left as they are."""
    shapes = linear_shapes(model.config)
    for p in adapter.attach_points:
        if p not in shapes:
            raise ConfigurationError(f"attach point {p!r} does not exist in the model")
        out_dim, in_dim = shapes[p]
        if adapter.A[p].shape != (adapter.rank, in_dim) or adapter.B[p].shape != (out_dim, adapter.rank):
            raise ConfigurationError(f"adapter matrices at {p!r} do not fit a {out_dim}x{in_dim} layer")
    model.adapters[adapter.name] = adapter
    return model


def _merged(adapter: LoraAdapter, model: DecoderModel, sign: float) -> DecoderModel:
    params = dict(model.params)
    for p in adapter.attach_points:
        delta = adapter.B[p].data @ adapter.A[p].data
        params[f"{p}.weight"] = Tensor(params[f"{p}.weight"].data + sign * adapter.scale * delta)
    out = DecoderModel(model.config, params)
    out.placeholder_ids = model.placeholder_ids
    out.adapters = {k: v for k, v in model.adapters.items() if k != adapter.name}
    return out


def merge(adapter: LoraAdapter, model: DecoderModel) -> DecoderModel:
    """New model whose weights are ``W + (alpha/r) B A``; ``model`` is not modified."""
    return _merged(adapter, model, 1.0)


def unmerge(adapter: LoraAdapter, model: DecoderModel) -> DecoderModel:
    return _merged(adapter, model, -1.0)


MODALITIES = ("text", "image", "audio")

DEFAULT_RULE = {
    frozenset({"text"}): (),
    frozenset({"text", "audio"}): (LORA_A,),
    frozenset({"text", "image"}): (LORA_V,),
    frozenset({"text", "image", "audio"}): (LORA_V,),
}


class ModalityRouter:
    """Maps the set of modalities present in a request to the adapters to apply.

    Every request carries at least a chat template, so ``text`` is always
    implied; ``{"audio"}`` routes like ``{"text", "audio"}``.
    """

    def __init__(self, rule: dict | None = None):
        rule = DEFAULT_RULE if rule is None else {frozenset(k): tuple(v) for k, v in rule.items()}
        missing = [set(k) for k in DEFAULT_RULE if k not in rule]
        if missing:
            raise ConfigurationError(f"router rule is not total; missing {missing}")
        self.rule = rule

    def route(self, modalities) -> list:
        mods = frozenset(modalities)
        if not mods:
            raise ConfigurationError("route() needs at least one modality")
        bad = mods - set(MODALITIES)
        if bad:
            raise ConfigurationError(f"unknown modalities {sorted(bad)}")
        return list(self.rule[mods | {"text"}])


def route(modalities, router: ModalityRouter | None = None) -> list:
    return (router or ModalityRouter()).route(modalities)

