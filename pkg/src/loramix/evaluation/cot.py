"""Splitting chain-of-thought translation output into transcript and translation."""

from __future__ import annotations

from dataclasses import dataclass

SEPARATOR = "<sep>"


@dataclass(frozen=True)
class CotSplit:
    transcript: str | None
    translation: str
    separator_found: bool


def cot_split(output: str) -> CotSplit:
    """Split on the first separator. Without one the whole output counts as the translation."""
    head, sep, tail = output.partition(SEPARATOR)
    if not sep:
        return CotSplit(None, output.strip(), False)
    return CotSplit(head.strip(), tail.strip(), True)
