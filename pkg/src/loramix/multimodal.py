"""The full model: frozen decoder, two LoRA adapters, audio and vision encoders with projectors."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .audio import AudioEncoder, AudioProjector, ConformerConfig, log_mel, subsampled_length
from .decoder import TOY, DecoderConfig, DecoderModel
from .errors import DataError
from .lora import LORA_A, LORA_V, LoraAdapter, ModalityRouter, all_linear_points, attach, attention_mlp_points
from .numerics import Tensor
from .tokenizer import Tokenizer
from .vision import TOY_VISION, PatchEncoder, VisionEncoderConfig, VisionProjector, image_patches

GROUPS = (
    "decoder",
    "audio_encoder",
    "audio_projector",
    "vision_encoder",
    "vision_projector",
    LORA_A,
    LORA_V,
)


@dataclass(frozen=True)
class MultimodalConfig:
    decoder: DecoderConfig = TOY
    conformer: ConformerConfig = ConformerConfig()
    vision: VisionEncoderConfig = TOY_VISION
    lora_a_rank: int = 8
    lora_v_rank: int = 8
    seed: int = 0

    def to_json(self) -> dict:
        return {
            "decoder": self.decoder.to_json(),
            "conformer": asdict(self.conformer),
            "vision": asdict(self.vision),
            "lora_a_rank": self.lora_a_rank,
            "lora_v_rank": self.lora_v_rank,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, data: dict) -> "MultimodalConfig":
        conformer = dict(data["conformer"])
        conformer["subsample_strides"] = tuple(conformer["subsample_strides"])
        return cls(
            decoder=DecoderConfig.from_json(data["decoder"]),
            conformer=ConformerConfig(**conformer),
            vision=VisionEncoderConfig(**data["vision"]),
            lora_a_rank=data["lora_a_rank"],
            lora_v_rank=data["lora_v_rank"],
            seed=data["seed"],
        )


@dataclass
class Payload:
    """A non-text input, already converted to encoder-ready arrays.

    audio: log-Mel frames [T, n_mels]; image: patch vectors [n_crops, n_patches, 3*p*p].
    """

    modality: str
    data: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_tokens(self) -> int:
        if self.data is None:
            raise DataError(f"{self.modality} payload has no data to resolve")
        if self.modality == "audio":
            return subsampled_length(self.data.shape[0])
        if self.modality == "image":
            return self.data.shape[0] * self.data.shape[1]
        raise DataError(f"unknown payload modality {self.modality!r}")

    @classmethod
    def from_waveform(cls, waveform) -> "Payload":
        return cls("audio", log_mel(waveform).frames)

    @classmethod
    def from_image(cls, image, encoder: PatchEncoder, max_crops: int) -> "Payload":
        return cls("image", image_patches(image, encoder, max_crops), {"hw": image.shape[:2]})

    def truncated(self, max_tokens: int | None) -> "Payload":
        if self.modality != "audio" or max_tokens is None or self.n_tokens <= max_tokens:
            return self
        return Payload("audio", self.data[: 8 * max_tokens], dict(self.meta))


class MultimodalModel:
    def __init__(self, config: MultimodalConfig = MultimodalConfig(), tokenizer: Tokenizer | None = None):
        self.config = config
        self.tokenizer = tokenizer or Tokenizer.build(size=config.decoder.vocab_size)
        if len(self.tokenizer) > config.decoder.vocab_size:
            raise DataError("tokenizer vocabulary is larger than the decoder vocabulary")
        seed = config.seed
        self.decoder = DecoderModel(config.decoder)
        self.decoder.placeholder_ids = self.tokenizer.placeholder_ids
        attach(LoraAdapter.create(LORA_A, config.decoder, config.lora_a_rank,
                                  attention_mlp_points(config.decoder), seed=seed), self.decoder)
        attach(LoraAdapter.create(LORA_V, config.decoder, config.lora_v_rank,
                                  all_linear_points(config.decoder), seed=seed), self.decoder)
        self.audio_encoder = AudioEncoder(config.conformer, seed)
        self.audio_projector = AudioProjector(config.conformer.attn_dim, config.decoder.d_model, seed)
        self.vision_encoder = PatchEncoder(config.vision, seed)
        self.vision_projector = VisionProjector(config.vision.width, config.decoder.d_model, seed)
        self.router = ModalityRouter()

    def parameter_groups(self) -> dict:
        return {
            "decoder": self.decoder.params,
            "audio_encoder": self.audio_encoder.params,
            "audio_projector": self.audio_projector.params,
            "vision_encoder": self.vision_encoder.params,
            "vision_projector": self.vision_projector.params,
            LORA_A: self.decoder.adapters[LORA_A].parameters(),
            LORA_V: self.decoder.adapters[LORA_V].parameters(),
        }

    def fingerprints(self) -> dict:
        return {g: nx.fingerprint(p) for g, p in self.parameter_groups().items()}

    def route(self, modalities) -> list:
        return self.router.route(modalities)

    def embed_payload(self, modality: str, data) -> Tensor:
        """Projector output [..., n_tokens, d_model] for batched payload arrays."""
        if modality == "audio":
            return self.audio_projector(self.audio_encoder(Tensor(data)))
        if modality == "image":
            data = np.asarray(data)
            feats = self.vision_encoder.encode_patches(Tensor(data))
            lead = data.shape[:-3]
            feats = feats.reshape(*lead, data.shape[-3] * data.shape[-2], self.config.vision.width)
            return self.vision_projector(feats)
        raise DataError(f"unknown payload modality {modality!r}")

    def forward(self, ids, spans=(), adapters=()) -> Tensor:
        """Logits for ``ids`` [..., T] with ``spans`` of ``(start, modality, data)``."""
        injected = [(start, self.embed_payload(mod, data)) for start, mod, data in spans]
        return self.decoder.forward(ids, injected=injected, adapters=adapters)

    def generate(self, prompt_ids, spans=(), adapters=None, max_new_tokens: int = 16) -> list:
        if adapters is None:
            adapters = self.route({"text", *(mod for _, mod, _ in spans)})
        with nx.no_grad():
            injected = [(start, self.embed_payload(mod, data)) for start, mod, data in spans]
        end = self.tokenizer.vocab["<|end|>"]
        return self.decoder.generate(prompt_ids, max_new_tokens, injected, adapters, stop_id=end)

    # -- checkpoints ------------------------------------------------------------
    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.decoder.save(directory)
        for name in (LORA_A, LORA_V):
            self.decoder.adapters[name].save(directory / f"{name}.p4tz")
        groups = self.parameter_groups()
        modules = {}
        for g in ("audio_encoder", "audio_projector", "vision_encoder", "vision_projector"):
            for k, v in groups[g].items():
                modules[f"{g}/{k}"] = v
        nx.save_tensors(directory / "modules.p4tz", modules)
        (directory / "multimodal.json").write_text(json.dumps(self.config.to_json(), indent=2))
        self.tokenizer.to_json(directory / "vocab.json")

    @classmethod
    def load(cls, directory) -> "MultimodalModel":
        directory = Path(directory)
        config = MultimodalConfig.from_json(json.loads((directory / "multimodal.json").read_text()))
        model = cls(config, Tokenizer.from_json(directory / "vocab.json"))
        loaded = DecoderModel.load(directory)
        model.decoder.params = loaded.params
        for name in (LORA_A, LORA_V):
            attach(LoraAdapter.load(directory / f"{name}.p4tz"), model.decoder)
        arrays, _ = nx.load_tensors(directory / "modules.p4tz")
        groups = model.parameter_groups()
        for key, value in arrays.items():
            group, name = key.split("/", 1)
            groups[group][name].data = value
        return model
