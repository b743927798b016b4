"""Word-level toy tokenizer with a pluggable JSON vocabulary.

Real deployments map text to ids with an external BPE vocabulary; here token
ids are opaque integers and the vocabulary file is a plain
``{"token": id}`` JSON object.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

USER = "<|user|>"
ASSISTANT = "<|assistant|>"
END = "<|end|>"
IMAGE = "<image>"
AUDIO = "<audio>"
SEP = "<sep>"
UNK = "<unk>"
PAD = "<pad>"
SPECIAL_TOKENS = (PAD, UNK, USER, ASSISTANT, END, IMAGE, AUDIO, SEP)

_SPECIAL_RE = "|".join(re.escape(t) for t in SPECIAL_TOKENS)
_TOKEN_RE = re.compile(rf"{_SPECIAL_RE}|\w+|[^\w\s]")

BASE_WORDS = (
    "transcribe the audio clip into text . translate to and then use as a separator between "
    "original transcript translation describe image what is in this hello world yes no "
    "summarize conversation answer question english french german "
    "zero one two three four five six seven eight nine red green blue yellow black white"
).split()


class Tokenizer:
    def __init__(self, vocab: dict):
        missing = [t for t in SPECIAL_TOKENS if t not in vocab]
        if missing:
            raise ValueError(f"vocabulary lacks special tokens {missing}")
        self.vocab = dict(vocab)
        self.inverse = {i: t for t, i in self.vocab.items()}

    @classmethod
    def build(cls, words=(), size: int | None = None) -> "Tokenizer":
        """Specials, then the base words, then ``words``; optionally padded with filler tokens."""
        vocab = {}
        for tok in (*SPECIAL_TOKENS, *BASE_WORDS, *words):
            vocab.setdefault(tok, len(vocab))
        if size is not None:
            if size < len(vocab):
                raise ValueError(f"vocabulary needs {len(vocab)} entries, size={size}")
            for i in range(len(vocab), size):
                vocab[f"<extra_{i}>"] = i
        return cls(vocab)

    @classmethod
    def from_json(cls, path) -> "Tokenizer":
        return cls(json.loads(Path(path).read_text()))

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.vocab, indent=1, ensure_ascii=False))

    def __len__(self):
        return len(self.vocab)

    def id(self, token: str) -> int:
        return self.vocab.get(token, self.vocab[UNK])

    def tokenize(self, text: str) -> list:
        return [t if t in SPECIAL_TOKENS else t.lower() for t in _TOKEN_RE.findall(text)]

    def encode(self, text: str) -> list:
        return [self.id(t) for t in self.tokenize(text)]

    def decode(self, ids, skip_special: bool = False) -> str:
        out = []
        for i in ids:
            tok = self.inverse.get(int(i), UNK)
            if skip_special and tok in SPECIAL_TOKENS:
                continue
            out.append(tok)
        return " ".join(out)

    @property
    def placeholder_ids(self) -> frozenset:
        return frozenset((self.vocab[IMAGE], self.vocab[AUDIO]))
