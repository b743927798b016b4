"""Error rates and corpus BLEU."""

from __future__ import annotations

import math
import re
import string
from collections import Counter

from ..errors import DimensionError, UndefinedMetricError

CER_LANGUAGES = frozenset({"ja", "zh"})

_PUNCT = re.compile(f"[{re.escape(string.punctuation)}、。，！？]")


def normalize_text(text: str) -> str:
    """Lowercase, drop punctuation, squeeze whitespace."""
    return " ".join(_PUNCT.sub(" ", text.lower()).split())


def edit_distance(hyp, ref) -> int:
    """Levenshtein distance between two sequences (unit costs)."""
    prev = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, 1):
        cur = [i]
        for j, r in enumerate(ref, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (h != r)))
        prev = cur
    return prev[-1]


def word_errors(hypothesis: str, reference: str, normalizer=normalize_text) -> tuple:
    """(edits, reference word count)."""
    if normalizer is not None:
        hypothesis, reference = normalizer(hypothesis), normalizer(reference)
    return edit_distance(hypothesis.split(), reference.split()), len(reference.split())


def char_errors(hypothesis: str, reference: str, normalizer=None) -> tuple:
    if normalizer is not None:
        hypothesis, reference = normalizer(hypothesis), normalizer(reference)
    hyp = "".join(hypothesis.split())
    ref = "".join(reference.split())
    return edit_distance(hyp, ref), len(ref)


def wer(hypothesis: str, reference: str, normalizer=normalize_text) -> float:
    edits, n = word_errors(hypothesis, reference, normalizer)
    if n == 0:
        raise UndefinedMetricError("WER is undefined for an empty reference")
    return edits / n


def cer(hypothesis: str, reference: str, normalizer=None) -> float:
    edits, n = char_errors(hypothesis, reference, normalizer)
    if n == 0:
        raise UndefinedMetricError("CER is undefined for an empty reference")
    return edits / n


def uses_cer(lang: str) -> bool:
    return lang.lower() in CER_LANGUAGES


def error_rate(hypothesis: str, reference: str, lang: str) -> float:
    """CER for Japanese and Chinese, WER otherwise."""
    return cer(hypothesis, reference) if uses_cer(lang) else wer(hypothesis, reference)


def corpus_error_rate(hypotheses, references, lang: str) -> float:
    """Total edits over total reference length."""
    count = char_errors if uses_cer(lang) else word_errors
    edits = length = 0
    for h, r in zip(hypotheses, references, strict=True):
        e, n = count(h, r)
        edits, length = edits + e, length + n
    if length == 0:
        raise UndefinedMetricError("error rate is undefined for an empty reference corpus")
    return edits / length


# -- BLEU ---------------------------------------------------------------------

_13A_RULES = [
    (re.compile(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])"), r" \1 "),
    (re.compile(r"([^0-9])([\.,])"), r"\1 \2 "),
    (re.compile(r"([\.,])([^0-9])"), r" \1 \2"),
    (re.compile(r"([0-9])(-)"), r"\1 \2 "),
]


def tokenize_13a(line: str) -> list:
    """The mteval-v13a tokenization used by WMT."""
    line = line.replace("<skipped>", "").replace("-\n", "").replace("\n", " ")
    if "&" in line:
        for entity, char in (("&quot;", '"'), ("&amp;", "&"), ("&lt;", "<"), ("&gt;", ">")):
            line = line.replace(entity, char)
    line = f" {line} "
    for pattern, repl in _13A_RULES:
        line = pattern.sub(repl, line)
    return line.split()


def tokenize_char(line: str) -> list:
    """One token per non-space character; stands in for morphological Japanese/Chinese tokenizers."""
    return [c for c in line if not c.isspace()]


TOKENIZERS = {"13a": tokenize_13a, "t13a": tokenize_13a, "char": tokenize_char}


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_statistics(hypotheses, references, tokenizer: str = "13a", max_order: int = 4) -> dict:
    if tokenizer not in TOKENIZERS:
        raise ValueError(f"unknown BLEU tokenizer {tokenizer!r}; choose from {sorted(TOKENIZERS)}")
    if len(hypotheses) != len(references):
        raise DimensionError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    tok = TOKENIZERS[tokenizer]
    matches, totals = [0] * max_order, [0] * max_order
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        h, r = tok(hyp), tok(ref)
        hyp_len, ref_len = hyp_len + len(h), ref_len + len(r)
        for n in range(1, max_order + 1):
            hc, rc = _ngrams(h, n), _ngrams(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    return {"matches": matches, "totals": totals, "hyp_len": hyp_len, "ref_len": ref_len}


def bleu(hypotheses, references, tokenizer: str = "13a", max_order: int = 4) -> float:
    """Unsmoothed corpus BLEU on a 0-100 scale, one reference per hypothesis."""
    if not hypotheses:
        raise UndefinedMetricError("BLEU is undefined for an empty corpus")
    s = bleu_statistics(hypotheses, references, tokenizer, max_order)
    if s["hyp_len"] == 0 or min(s["matches"]) == 0:
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(s["matches"], s["totals"])) / max_order
    bp = 1.0 if s["hyp_len"] >= s["ref_len"] else math.exp(1.0 - s["ref_len"] / s["hyp_len"])
    return 100.0 * bp * math.exp(log_p)
