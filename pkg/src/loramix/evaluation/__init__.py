"""Evaluation: error rates, BLEU, chain-of-thought splitting, judge prompts and score reports."""

from .cot import SEPARATOR, CotSplit, cot_split
from .judge import (
    HttpTransport,
    JudgeRequest,
    ScoreCache,
    StubTransport,
    extract_scores,
    fill_judge_template,
    judge_many,
    judge_score,
    judge_transport,
    template_fields,
)
from .metrics import (
    bleu,
    cer,
    corpus_error_rate,
    edit_distance,
    error_rate,
    normalize_text,
    tokenize_13a,
    tokenize_char,
    uses_cer,
    wer,
)
from .report import TASKS, ItemScore, ScoreReport, aggregate, evaluate, load_manifest
from .templates import TEMPLATES

__all__ = [name for name in dir() if not name.startswith("_")]
