"""Speech path: waveform to log-Mel frames, 8x convolutional subsampling,
conformer encoder and the projector into decoder embedding space."""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import get_window

from . import numerics as nx
from .errors import ConfigurationError, InputTooShortError
from .layers import MLPProjector, init_linear, init_norm, init_self_attention, linear, norm, self_attention
from .numerics import SplitMix64, Tensor

FRAME_MS = 10
TOKEN_MS = 80


@dataclass(frozen=True)
class MelFrontendConfig:
    sample_rate: int = 16000
    n_mels: int = 80
    hop: int = 160
    window: int = 400
    n_fft: int = 512
    floor: float = -11.5

    def __post_init__(self):
        if self.hop > self.window:
            raise ConfigurationError("hop must not exceed the window length")
        if self.n_mels < 1:
            raise ConfigurationError("n_mels must be >= 1")


@dataclass
class AudioFeatures:
    frames: np.ndarray  # [T, n_mels]
    duration_ms: float

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def frame_count(n_samples: int, cfg: MelFrontendConfig = MelFrontendConfig()) -> int:
    if n_samples < cfg.window:
        raise InputTooShortError(f"{n_samples} samples is shorter than one {cfg.window}-sample window")
    return 1 + (n_samples - cfg.window) // cfg.hop


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: MelFrontendConfig = MelFrontendConfig()) -> np.ndarray:
    """Triangular HTK-scale filters [n_mels, n_fft//2 + 1] spanning 0 Hz to Nyquist."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(cfg.sample_rate / 2), cfg.n_mels + 2))
    freqs = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft
    lo, centre, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (centre - lo)
    falling = (hi - freqs) / (hi - centre)
    return np.maximum(0.0, np.minimum(rising, falling))


def log_mel(waveform, cfg: MelFrontendConfig = MelFrontendConfig()) -> AudioFeatures:
    """Hann-windowed magnitude spectrum through the mel filterbank, natural log clamped at ``floor``."""
    x = np.asarray(waveform, dtype=np.float64).reshape(-1)
    t = frame_count(x.size, cfg)
    idx = cfg.hop * np.arange(t)[:, None] + np.arange(cfg.window)[None, :]
    frames = x[idx] * get_window("hann", cfg.window)
    magnitude = np.abs(np.fft.rfft(frames, n=cfg.n_fft, axis=-1))
    energies = magnitude @ mel_filterbank(cfg).T
    logmel = np.maximum(np.log(np.maximum(energies, np.finfo(float).tiny)), cfg.floor)
    return AudioFeatures(logmel, 1000.0 * x.size / cfg.sample_rate)


# -- token-rate arithmetic ---------------------------------------------------


def subsampled_length(n_frames: int, strides=(2, 2, 2)) -> int:
    """Output length of the stride-2, kernel-3, padding-1 conv stack: ceil at every stage."""
    for s in strides:
        n_frames = -(-n_frames // s)
    return n_frames


@dataclass(frozen=True)
class AudioBudget:
    frames: int
    tokens: int
    fits: bool


def audio_token_budget(duration_s: float, context_tokens: int, reserved_text: int = 0) -> AudioBudget:
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    frames = math.ceil(round(duration_s * 1000 / FRAME_MS, 9))
    tokens = subsampled_length(frames)
    return AudioBudget(frames, tokens, tokens + reserved_text <= context_tokens)


def max_audio_seconds(context_tokens: int, reserved_text: int = 0) -> float:
    """Longest audio whose tokens still fit beside ``reserved_text`` text tokens."""
    return max(context_tokens - reserved_text, 0) * TOKEN_MS / 1000.0


# -- encoder -----------------------------------------------------------------


@dataclass(frozen=True)
class ConformerConfig:
    n_blocks: int = 2
    attn_dim: int = 64
    ff_dim: int = 96
    n_heads: int = 4
    conv_kernel: int = 15
    subsample_strides: tuple = (2, 2, 2)
    n_mels: int = 80

    def __post_init__(self):
        if self.attn_dim % self.n_heads:
            raise ConfigurationError("attn_dim must be divisible by n_heads")
        if math.prod(self.subsample_strides) != 8:
            raise ConfigurationError("subsample strides must multiply to 8")
        if self.conv_kernel % 2 == 0:
            raise ConfigurationError("conformer conv_kernel must be odd")
        if (self.attn_dim // self.n_heads) % 2:
            raise ConfigurationError("attention head width must be even for rotary embedding")


FULL_SCALE_CONFORMER = ConformerConfig(n_blocks=24, attn_dim=1024, ff_dim=1536, n_heads=16)

# zeroing these makes every conformer sub-module contribute nothing to the residual stream
OUTPUT_PROJECTIONS = ("ff1.out", "attn.o", "conv.pw2", "ff2.out")


class AudioEncoder:
    """Three stride-2 convolutions followed by conformer blocks."""

    def __init__(self, config: ConformerConfig = ConformerConfig(), seed: int = 0):
        self.config = config
        rng = SplitMix64(seed).fork("audio_encoder")
        d = config.attn_dim
        p = {}
        in_ch = config.n_mels
        for i in range(len(config.subsample_strides)):
            name = f"subsample.{i}"
            p[f"{name}.weight"] = Tensor(rng.fork(name).normal((d, in_ch, 3), (3 * in_ch) ** -0.5))
            p[f"{name}.bias"] = Tensor(np.zeros(d))
            in_ch = d
        for b in range(config.n_blocks):
            pre = f"blocks.{b}"
            for ff in ("ff1", "ff2"):
                init_norm(p, f"{pre}.{ff}.ln", d)
                init_linear(p, rng, f"{pre}.{ff}.in", d, config.ff_dim)
                init_linear(p, rng, f"{pre}.{ff}.out", config.ff_dim, d)
            init_norm(p, f"{pre}.attn.ln", d)
            init_self_attention(p, rng, f"{pre}.attn", d)
            init_norm(p, f"{pre}.conv.ln", d)
            init_linear(p, rng, f"{pre}.conv.pw1", d, 2 * d)
            p[f"{pre}.conv.dw.weight"] = Tensor(
                rng.fork(f"{pre}.conv.dw").normal((d, config.conv_kernel), config.conv_kernel**-0.5)
            )
            p[f"{pre}.conv.dw.bias"] = Tensor(np.zeros(d))
            init_norm(p, f"{pre}.conv.norm", d)
            init_linear(p, rng, f"{pre}.conv.pw2", d, d)
            init_norm(p, f"{pre}.final_ln", d)
        self.params = p

    def subsample(self, features) -> Tensor:
        """[..., T, n_mels] -> [..., ceil(T/8), attn_dim]."""
        x = nx.as_tensor(features)
        n = len(self.config.subsample_strides)
        for i, stride in enumerate(self.config.subsample_strides):
            x = nx.conv1d(
                x, self.params[f"subsample.{i}.weight"], self.params[f"subsample.{i}.bias"],
                stride=stride, padding=1,
            )
            if i < n - 1:
                x = nx.gelu(x)
        return x

    def _feed_forward(self, x, name):
        h = nx.silu(linear(self.params, f"{name}.in", norm(self.params, f"{name}.ln", x)))
        return linear(self.params, f"{name}.out", h)

    def _conv_module(self, x, name):
        d = self.config.attn_dim
        h = linear(self.params, f"{name}.pw1", norm(self.params, f"{name}.ln", x))
        h = h[..., :d] * nx.sigmoid(h[..., d:])  # GLU
        h = nx.depthwise_conv1d(
            h, self.params[f"{name}.dw.weight"], self.params[f"{name}.dw.bias"],
            padding=self.config.conv_kernel // 2,
        )
        h = nx.silu(norm(self.params, f"{name}.norm", h))
        return linear(self.params, f"{name}.pw2", h)

    def block(self, x, b: int) -> Tensor:
        pre = f"blocks.{b}"
        x = x + self._feed_forward(x, f"{pre}.ff1") * 0.5
        x = x + self_attention(
            self.params, f"{pre}.attn", norm(self.params, f"{pre}.attn.ln", x), self.config.n_heads
        )
        x = x + self._conv_module(x, f"{pre}.conv")
        x = x + self._feed_forward(x, f"{pre}.ff2") * 0.5
        return norm(self.params, f"{pre}.final_ln", x)

    def conformer_encode(self, x) -> Tensor:
        x = nx.as_tensor(x)
        if x.shape[-1] != self.config.attn_dim:
            raise ConfigurationError(f"conformer expects width {self.config.attn_dim}, got {x.shape[-1]}")
        for b in range(self.config.n_blocks):
            x = self.block(x, b)
        return x

    def __call__(self, features) -> Tensor:
        return self.conformer_encode(self.subsample(features))


class AudioProjector(MLPProjector):
    def __init__(self, attn_dim: int, d_model: int, seed: int = 0):
        super().__init__(attn_dim, d_model, seed, name="audio_projector")


# -- WAV input ---------------------------------------------------------------


def read_wav(path, sample_rate: int = 16000) -> np.ndarray:
    """PCM16 mono WAV to float samples in [-1, 1)."""
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1 or fh.getsampwidth() != 2 or fh.getframerate() != sample_rate:
            raise ConfigurationError(f"{path}: expected PCM16 mono at {sample_rate} Hz")
        raw = fh.readframes(fh.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def wav_duration(path) -> float:
    """Duration in seconds from the WAV header alone."""
    with wave.open(str(path), "rb") as fh:
        return fh.getnframes() / fh.getframerate()


def write_wav(path, samples, sample_rate: int = 16000):
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(Path(path)), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sample_rate)
        fh.writeframes(pcm.tobytes())
