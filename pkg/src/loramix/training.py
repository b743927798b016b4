"""Staged training: which parameter groups learn in which stage, SFT rendering
with loss masks, an Adam loop, and byte-level proof that frozen groups stayed put."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .audio import read_wav
from .errors import ConfigurationError, DataError, FrozenParameterError
from .lora import LORA_A, LORA_V
from .multimodal import GROUPS, MultimodalModel, Payload
from .numerics import SplitMix64
from .tokenizer import ASSISTANT, AUDIO, END, IMAGE, USER, Tokenizer
from .vision import load_image

FULL_STAGE_STEPS = 50_000
DESK_STEP_SCALE = 0.04  # 50k -> 2k
DEFAULT_MAX_AUDIO_TOKENS = 375  # 30 s
SUMMARY_MAX_AUDIO_TOKENS = 22_500  # 30 min


@dataclass(frozen=True)
class StageSpec:
    name: str
    trainable_groups: tuple
    frozen_groups: tuple
    learning_rate: float
    steps: int
    data_source: str
    max_audio_tokens: int | None = None

    def __post_init__(self):
        trainable, frozen = set(self.trainable_groups), set(self.frozen_groups)
        if trainable & frozen:
            raise ConfigurationError(f"{self.name}: groups both trainable and frozen: {sorted(trainable & frozen)}")
        if trainable | frozen != set(GROUPS) or len(self.trainable_groups) + len(self.frozen_groups) != len(GROUPS):
            raise ConfigurationError(f"{self.name}: trainable and frozen groups must partition {GROUPS}")
        if self.steps < 0 or self.learning_rate <= 0:
            raise ConfigurationError(f"{self.name}: steps must be >= 0 and learning_rate > 0")

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "trainable_groups": list(self.trainable_groups),
            "learning_rate": self.learning_rate,
            "steps": self.steps,
            "data_source": self.data_source,
            "max_audio_tokens": self.max_audio_tokens,
        }

    @classmethod
    def from_json(cls, data: dict) -> "StageSpec":
        trainable = tuple(data["trainable_groups"])
        frozen = tuple(g for g in GROUPS if g not in trainable)
        return cls(data["name"], trainable, frozen, float(data["learning_rate"]), int(data["steps"]),
                   data.get("data_source", "synthetic"), data.get("max_audio_tokens"))


def make_stage(name, trainable, lr, steps, data_source, max_audio_tokens=None) -> StageSpec:
    trainable = tuple(g for g in GROUPS if g in set(trainable))
    frozen = tuple(g for g in GROUPS if g not in trainable)
    return StageSpec(name, trainable, frozen, lr, steps, data_source, max_audio_tokens)


VISION_LR = 1e-4
SPEECH_PRETRAIN_LR = 4e-5
SPEECH_POSTTRAIN_LR = 1e-4

_SCHEDULE = (
    ("vision_projector_alignment", ("vision_projector",), VISION_LR, "caption"),
    ("vision_joint", ("vision_projector", "vision_encoder"), VISION_LR, "caption"),
    ("vision_generative", (LORA_V, "vision_encoder", "vision_projector"), VISION_LR, "image_sft"),
    ("vision_multiframe", (LORA_V, "vision_projector"), VISION_LR, "multiframe"),
    ("speech_pretrain", ("audio_encoder", "audio_projector"), SPEECH_PRETRAIN_LR, "asr"),
    ("speech_posttrain", ("audio_projector", LORA_A), SPEECH_POSTTRAIN_LR, "speech_sft"),
    ("vision_speech_joint", (LORA_V, "vision_encoder", "vision_projector"), VISION_LR, "vision_speech"),
)


def standard_schedules(steps_scale: float = DESK_STEP_SCALE) -> list:
    """The seven stages in training order; every stage is 50k steps times ``steps_scale``."""
    if steps_scale < 0:
        raise ConfigurationError("steps_scale must be >= 0")
    steps = int(round(FULL_STAGE_STEPS * steps_scale))
    out = []
    for name, trainable, lr, source in _SCHEDULE:
        max_audio = DEFAULT_MAX_AUDIO_TOKENS if "speech" in name else None
        out.append(make_stage(name, trainable, lr, steps, source, max_audio))
    return out


def stage_by_name(name: str, steps_scale: float = DESK_STEP_SCALE) -> StageSpec:
    for stage in standard_schedules(steps_scale):
        if stage.name == name:
            return stage
    raise ConfigurationError(f"unknown stage {name!r}")


# -- freeze masks ---------------------------------------------------------------


@dataclass(frozen=True)
class FreezeMask:
    fingerprints: dict
    frozen: tuple

    @classmethod
    def capture(cls, model: MultimodalModel, frozen=GROUPS) -> "FreezeMask":
        return cls(model.fingerprints(), tuple(frozen))


@dataclass(frozen=True)
class FreezeCheck:
    passed: bool
    changed: list

    def __bool__(self):
        return self.passed


def verify_frozen(mask: FreezeMask, model: MultimodalModel) -> FreezeCheck:
    now = model.fingerprints()
    changed = [g for g in mask.frozen if now[g] != mask.fingerprints[g]]
    return FreezeCheck(not changed, changed)


# -- SFT rendering --------------------------------------------------------------


@dataclass
class SftSample:
    task_prompt: str
    label: str
    payloads: list = field(default_factory=list)
    task: str = "asr"
    lang: str = "en"

    def __post_init__(self):
        if not self.label:
            raise DataError("SFT label must be nonempty")

    @property
    def modalities(self) -> set:
        return {"text", *(p.modality for p in self.payloads)}


@dataclass
class RenderedSft:
    ids: np.ndarray
    loss_mask: np.ndarray
    spans: list  # (start, modality, data)

    @property
    def signature(self) -> tuple:
        return (self.ids.shape, tuple((s, m, d.shape) for s, m, d in self.spans))


_PLACEHOLDER = {"audio": AUDIO, "image": IMAGE}


def format_sft(sample: SftSample) -> str:
    """The chat-formatted text with one placeholder per payload."""
    marks = "".join(_PLACEHOLDER.get(p.modality, f"<{p.modality}>") for p in sample.payloads)
    return f"{USER}{marks}{sample.task_prompt}{END}{ASSISTANT}{sample.label}{END}"


def render_sft(sample: SftSample, tokenizer: Tokenizer, max_audio_tokens: int | None = None) -> RenderedSft:
    """Token ids with every placeholder expanded to its payload's token count.

    The loss mask is 1 on the label tokens and the closing end marker only.
    """
    ids, spans = [tokenizer.id(USER)], []
    for payload in sample.payloads:
        if payload.modality not in _PLACEHOLDER:
            raise DataError(f"no placeholder for modality {payload.modality!r}")
        payload = payload.truncated(max_audio_tokens)
        n = payload.n_tokens
        spans.append((len(ids), payload.modality, payload.data))
        ids.extend([tokenizer.id(_PLACEHOLDER[payload.modality])] * n)
    ids.extend(tokenizer.encode(sample.task_prompt))
    ids.extend([tokenizer.id(END), tokenizer.id(ASSISTANT)])
    label_start = len(ids)
    ids.extend(tokenizer.encode(sample.label))
    ids.append(tokenizer.id(END))
    mask = np.zeros(len(ids), dtype=bool)
    mask[label_start:] = True
    return RenderedSft(np.array(ids, dtype=np.int64), mask, spans)


def prompt_ids(sample: SftSample, tokenizer: Tokenizer, max_audio_tokens: int | None = None):
    """Rendered user turn plus the assistant tag: the generation prefix, and its spans."""
    r = render_sft(sample, tokenizer, max_audio_tokens)
    cut = int(np.argmax(r.loss_mask))
    return r.ids[:cut], r.spans, r.ids[cut:]


def sft_loss(model: MultimodalModel, batch: RenderedSft, adapters) -> nx.Tensor:
    """Next-token loss over a stacked batch; ``batch.ids`` is [B, T]."""
    logits = model.forward(batch.ids[..., :-1], batch.spans, adapters)
    return nx.cross_entropy_masked(logits, batch.ids[..., 1:], batch.loss_mask[..., 1:])


def stack_rendered(items: list) -> RenderedSft:
    first = items[0]
    spans = [
        (s, m, np.stack([it.spans[k][2] for it in items]))
        for k, (s, m, _) in enumerate(first.spans)
    ]
    return RenderedSft(np.stack([it.ids for it in items]), np.stack([it.loss_mask for it in items]), spans)


def make_batches(model: MultimodalModel, samples, max_audio_tokens=None) -> list:
    """Group samples with identical layout into stacked batches, keeping first-seen order.

    Returns ``(batch, adapters, n_supervised_tokens)`` triples.
    """
    groups: dict = {}
    for sample in samples:
        r = render_sft(sample, model.tokenizer, max_audio_tokens)
        key = (r.signature, tuple(model.route(sample.modalities)))
        groups.setdefault(key, []).append(r)
    return [
        (stack_rendered(items), list(key[1]), int(sum(it.loss_mask[1:].sum() for it in items)))
        for key, items in groups.items()
    ]


# -- optimisation ---------------------------------------------------------------


class Adam:
    """Adam without weight decay at a constant learning rate."""

    def __init__(self, params, lr: float, betas=(0.9, 0.95), eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.betas, self.eps = lr, betas, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1**self.t, 1 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= b1
            m += (1 - b1) * p.grad
            v *= b2
            v += (1 - b2) * p.grad**2
            # in place keeps every alias of the tensor in sync
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


@dataclass
class StageReport:
    name: str
    steps: int
    losses: list
    fingerprints_before: dict
    fingerprints_after: dict
    grad_norms: dict  # group -> list of per-step gradient norms
    trainable_groups: tuple

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "steps": self.steps,
            "losses": self.losses,
            "fingerprints_before": self.fingerprints_before,
            "fingerprints_after": self.fingerprints_after,
            "trainable_groups": list(self.trainable_groups),
            "final_grad_norms": {g: (v[-1] if v else 0.0) for g, v in self.grad_norms.items()},
        }


def _set_trainable(model: MultimodalModel, trainable):
    for group, params in model.parameter_groups().items():
        for t in params.values():
            t.requires_grad = group in trainable
            t.grad = None


def run_stage(stage: StageSpec, model: MultimodalModel, data, *, batch_size: int | None = None,
              seed: int = 0, log_every: int = 0, log=print) -> StageReport:
    """Train ``stage.trainable_groups`` on ``data`` (SftSamples) for ``stage.steps`` steps.

    Without ``batch_size`` every step sees the whole dataset. Raises
    FrozenParameterError if any frozen group's bytes changed.
    """
    mask = FreezeMask.capture(model, stage.frozen_groups)
    batches = make_batches(model, data, stage.max_audio_tokens) if stage.steps else []
    groups = model.parameter_groups()
    trainable = [t for g in stage.trainable_groups for t in groups[g].values()]
    opt = Adam(trainable, stage.learning_rate)
    rng = SplitMix64(seed).fork(stage.name)
    losses, grad_norms = [], {g: [] for g in GROUPS}
    _set_trainable(model, set(stage.trainable_groups))
    try:
        for step in range(stage.steps):
            chosen = batches
            if batch_size is not None and len(batches) > 1:
                order = rng.integers(0, len(batches), (min(batch_size, len(batches)),))
                chosen = [batches[i] for i in order]
            total = sum(n for _, _, n in chosen)
            opt.zero_grad()
            step_loss = 0.0
            for batch, adapters, n in chosen:
                loss = sft_loss(model, batch, adapters) * (n / total)
                loss.backward()
                step_loss += loss.item()
            for g, params in groups.items():
                sq = sum(float((t.grad**2).sum()) for t in params.values() if t.grad is not None)
                grad_norms[g].append(float(np.sqrt(sq)))
            opt.step()
            losses.append(step_loss)
            if log_every and (step + 1) % log_every == 0:
                log(f"{stage.name} step {step + 1}/{stage.steps} loss {step_loss:.4f}")
    finally:
        _set_trainable(model, ())
    check = verify_frozen(mask, model)
    if not check:
        raise FrozenParameterError(f"stage {stage.name} modified frozen groups {check.changed}", check.changed)
    return StageReport(stage.name, stage.steps, losses, mask.fingerprints, model.fingerprints(), grad_norms,
                       stage.trainable_groups)


# -- accuracy -------------------------------------------------------------------


def greedy_token_accuracy(model: MultimodalModel, samples, max_audio_tokens=None) -> float:
    """Share of label tokens (plus the closing end marker) reproduced by greedy decoding, position by position."""
    hits = total = 0
    for sample in samples:
        prefix, spans, target = prompt_ids(sample, model.tokenizer, max_audio_tokens)
        out = model.generate(prefix, spans, max_new_tokens=len(target))
        total += len(target)
        hits += sum(int(a == b) for a, b in zip(out, target))
    return hits / total


# -- synthetic data ---------------------------------------------------------------

NUMBER_WORDS = ("zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine")
COLOURS = {
    "red": (220, 30, 30),
    "green": (30, 200, 40),
    "blue": (30, 40, 220),
    "yellow": (230, 220, 30),
    "black": (10, 10, 10),
    "white": (245, 245, 245),
}
TRANSCRIBE = "Transcribe the audio clip into text."


def tone_waveform(freq: float, duration_s: float, rng: SplitMix64, sample_rate: int = 16000) -> np.ndarray:
    t = np.arange(int(round(duration_s * sample_rate))) / sample_rate
    u = rng.uniform((2,))
    amp, phase = 0.3 + 0.5 * u[0], 2 * np.pi * u[1]
    return amp * np.sin(2 * np.pi * freq * t + phase) + 0.01 * rng.normal(t.shape)


def tone_frequencies(n_classes: int = 10) -> np.ndarray:
    """Log-spaced pitches between 250 Hz and 4 kHz, one per class."""
    return np.geomspace(250.0, 4000.0, n_classes)


def tone_dataset(n_samples: int = 50, n_classes: int = 10, duration_s: float = 0.3,
                 seed: int = 0, prompt: str = TRANSCRIBE) -> list:
    """Pure tones labelled with the number word of their pitch class, classes round-robin."""
    if not 1 <= n_classes <= len(NUMBER_WORDS):
        raise ConfigurationError(f"n_classes must be in [1, {len(NUMBER_WORDS)}]")
    rng = SplitMix64(seed).fork("tones")
    freqs = tone_frequencies(n_classes)
    out = []
    for i in range(n_samples):
        k = i % n_classes
        wave = tone_waveform(freqs[k], duration_s, rng.fork(str(i)))
        out.append(SftSample(prompt, NUMBER_WORDS[k], [Payload.from_waveform(wave)], task="asr"))
    return out


def colour_dataset(model: MultimodalModel, n_samples: int = 24, size=(40, 56), seed: int = 0,
                   prompt: str = "What is in this image?") -> list:
    """Flat-colour images with mild noise, labelled by colour name."""
    rng = SplitMix64(seed).fork("colours")
    names = list(COLOURS)
    cfg = model.config.vision
    out = []
    for i in range(n_samples):
        name = names[i % len(names)]
        noise = rng.fork(str(i)).normal((*size, 3), 12.0)
        img = np.clip(np.array(COLOURS[name], dtype=np.float64) + noise, 0, 255).astype(np.uint8)
        payload = Payload.from_image(img, model.vision_encoder, cfg.max_crops_pretrain)
        out.append(SftSample(prompt, name, [payload], task="caption"))
    return out


def vision_speech_dataset(model: MultimodalModel, n_samples: int = 12, seed: int = 0) -> list:
    """A colour image plus a spoken-style tone per sample; the label is the colour."""
    images = colour_dataset(model, n_samples, seed=seed)
    tones = tone_dataset(n_samples, seed=seed)
    return [
        SftSample("What is in this image?", im.label, [*im.payloads, *tone.payloads], task="vision_speech")
        for im, tone in zip(images, tones)
    ]


def synthetic_data(stage: StageSpec, model: MultimodalModel, seed: int = 0) -> list:
    """Stand-in training set for a stage, chosen by its data source."""
    if stage.data_source in ("asr", "speech_sft"):
        return tone_dataset(seed=seed)
    if stage.data_source == "vision_speech":
        return vision_speech_dataset(model, seed=seed)
    return colour_dataset(model, seed=seed)


def load_sft_jsonl(path, model: MultimodalModel, max_crops: int | None = None) -> list:
    """One JSON object per line: task, prompt, audio?, images?, label, lang. Paths are file-relative."""
    path = Path(path)
    max_crops = max_crops or model.config.vision.max_crops_sft
    samples = []
    for n, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            payloads = [
                Payload.from_image(load_image(path.parent / img), model.vision_encoder, max_crops)
                for img in rec.get("images") or []
            ]
            if rec.get("audio"):
                payloads.append(Payload.from_waveform(read_wav(path.parent / rec["audio"])))
            samples.append(SftSample(rec.get("prompt") or "", rec["label"], payloads,
                                     rec.get("task", "asr"), rec.get("lang", "en")))
        except (KeyError, ValueError, OSError) as exc:
            raise DataError(f"{path}:{n}: {exc}") from exc
    return samples
