"""A small numpy model with one frozen decoder, per-modality LoRA adapters,
a conformer speech encoder and a multi-crop image encoder."""

from .decoder import FULL_SCALE, TOY, DecoderConfig, DecoderModel, KVCache, peak_lr
from .errors import *  # noqa: F401,F403
from .lora import LORA_A, LORA_V, LoraAdapter, ModalityRouter, attach, merge, route, unmerge
from .multimodal import GROUPS, MultimodalConfig, MultimodalModel, Payload
from .tokenizer import Tokenizer

__version__ = "0.1.0"
