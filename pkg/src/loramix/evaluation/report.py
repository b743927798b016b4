"""Per-task scoring of evaluation manifests and macro-averaged score reports."""

from __future__ import annotations

import json
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import DataError
from .cot import cot_split
from .judge import extract_scores, fill_judge_template, judge_many
from .metrics import bleu, corpus_error_rate, error_rate, uses_cer

TASKS = ("ASR", "AST", "SQQA", "SSUM", "AU")

CHAR_BLEU_NOTE = "ja/zh BLEU uses per-character tokenization instead of a morphological tokenizer"

# hypothesis goes into this field of each judge template
ANSWER_FIELD = {
    "mt_bench_turn1": "answer",
    "mt_bench_turn1_math": "answer",
    "mt_bench_turn2": "answer_2",
    "mt_bench_turn2_math": "answer_2",
    "airbench_chat": "ai_response",
    "summarization": "tgt",
}
DEFAULT_TEMPLATE = {"SQQA": "mt_bench_turn1", "SSUM": "summarization", "AU": "airbench_chat"}


@dataclass
class ItemScore:
    id: str
    subcategory: str
    score: float | None  # None: the judge declined (N/A)


@dataclass
class ScoreReport:
    task: str
    items: list
    subcategories: dict  # name -> aggregate
    overall: float | None
    excluded: int = 0
    notes: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "overall": self.overall,
            "subcategories": self.subcategories,
            "excluded_na": self.excluded,
            "notes": self.notes,
            "items": [vars(it) for it in self.items],
        }

    def table(self) -> str:
        """Aligned plain-text table: one row per subcategory and an Average row."""
        rows = [(name, f"{v:.2f}") for name, v in self.subcategories.items()]
        rows.append(("Average", "n/a" if self.overall is None else f"{self.overall:.2f}"))
        width = max(len(r[0]) for r in rows + [(self.task, "")])
        lines = [f"# {n}" for n in self.notes]
        lines.append(f"{self.task:<{width}}  score")
        lines.append("-" * (width + 8))
        lines.extend(f"{n:<{width}}  {v:>6}" for n, v in rows)
        if self.excluded:
            lines.append(f"({self.excluded} N/A replies excluded)")
        return "\n".join(lines)

    def write(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=2))
        path.with_suffix(".txt").write_text(self.table() + "\n")


def _mean(xs):
    return sum(xs) / len(xs)


def aggregate(items, task: str, subcategory_scores: dict | None = None) -> ScoreReport:
    """Macro average: each subcategory counts once, whatever its item count.

    Subcategory values default to the mean of their items' scores;
    ``subcategory_scores`` overrides them (corpus-level rates, corpus BLEU).
    Items scored None are excluded and counted.
    """
    items = list(items)
    if not items:
        raise DataError("aggregate needs at least one item")
    grouped = defaultdict(list)
    excluded = 0
    for it in items:
        if it.score is None:
            excluded += 1
        else:
            grouped[it.subcategory].append(it.score)
    subs = {name: _mean(v) for name, v in grouped.items()}
    if subcategory_scores:
        subs.update(subcategory_scores)
    overall = _mean(list(subs.values())) if subs else None
    return ScoreReport(task, items, subs, overall, excluded)


# -- manifests -------------------------------------------------------------------


def load_manifest(path) -> list:
    items, seen = [], set()
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{n}: {exc}") from exc
        rec.setdefault("id", str(n))
        if rec["id"] in seen:
            raise DataError(f"{path}:{n}: duplicate id {rec['id']!r}")
        seen.add(rec["id"])
        items.append(rec)
    return items


def _output(rec):
    for key in ("hypothesis", "output"):
        if key in rec:
            return rec[key]
    raise DataError(f"item {rec['id']}: no hypothesis/output field")


def score_asr(items) -> ScoreReport:
    """Error rates in percent; each language's value is its corpus-level rate.

    Items carrying a ready ``score`` (already in percent) are averaged as they are.
    """
    by_lang = defaultdict(lambda: ([], []))
    scored = []
    for rec in items:
        lang = rec.get("lang", "en")
        if "score" in rec and "reference" not in rec:
            scored.append(ItemScore(rec["id"], lang, float(rec["score"])))
            continue
        hyp = _output(rec)
        if "reference" in rec:
            scored.append(ItemScore(rec["id"], lang, 100 * error_rate(hyp, rec["reference"], lang)))
            by_lang[lang][0].append(hyp)
            by_lang[lang][1].append(rec["reference"])
    subs = {lang: 100 * corpus_error_rate(h, r, lang) for lang, (h, r) in by_lang.items()}
    report = aggregate(scored, "ASR", subs)
    report.notes.append("CER for ja/zh, WER otherwise")
    return report


def score_ast(items) -> ScoreReport:
    """Corpus BLEU per direction; translations are taken after the first <sep>."""
    by_dir = defaultdict(lambda: ([], []))
    scored, unsplit = [], 0
    for rec in items:
        if "direction" not in rec:
            raise DataError(f"item {rec['id']}: AST items need a direction")
        split = cot_split(_output(rec))
        unsplit += not split.separator_found
        hyps, refs = by_dir[rec["direction"]]
        hyps.append(split.translation)
        refs.append(rec["reference"])
        scored.append(ItemScore(rec["id"], rec["direction"], None))
    subs = {}
    for direction, (h, r) in by_dir.items():
        target = direction.split("-")[-1].lower()
        subs[direction] = bleu(h, r, "char" if uses_cer(target) else "13a")
    report = aggregate(scored, "AST", subs)
    report.excluded = 0
    report.notes.append(CHAR_BLEU_NOTE)
    if unsplit:
        report.notes.append(f"{unsplit} outputs had no <sep>; whole output used as translation")
    return report


_CHOICE = re.compile(r"\b([A-J])\b")


def choice_letter(text: str):
    m = _CHOICE.search(text.strip().upper()) if text else None
    return m.group(1) if m else None


def score_judged(items, task: str, transport=None, cache=None, max_in_flight: int = 4) -> ScoreReport:
    """Judge-scored or multiple-choice tasks.

    An item may carry a ready ``score``; a ``choice`` item is exact-matched on its
    answer letter; anything else is sent to the judge with ``template`` and ``fields``.
    """
    scored, pending = [], []
    for rec in items:
        sub = rec.get("subcategory", rec.get("turn", rec.get("dataset", task)))
        if "score" in rec:
            scored.append(ItemScore(rec["id"], sub, rec["score"]))
        elif "choice" in rec:
            hit = choice_letter(_output(rec)) == rec["choice"].upper()
            scored.append(ItemScore(rec["id"], sub, 100.0 * hit))
        else:
            template = rec.get("template", DEFAULT_TEMPLATE[task])
            fields = dict(rec.get("fields", {}))
            fields.setdefault(ANSWER_FIELD[template], _output(rec))
            pending.append((rec["id"], sub, template, fill_judge_template(template, fields)))
    if pending:
        replies = judge_many([p[3] for p in pending], transport, cache, max_in_flight)
        for (rid, sub, template, _), reply in zip(pending, replies):
            scored.append(ItemScore(rid, sub, extract_scores(reply, template)))
    return aggregate(scored, task)


def evaluate(items, task: str, transport=None, cache=None) -> ScoreReport:
    task = task.upper()
    if task == "ASR":
        return score_asr(items)
    if task == "AST":
        return score_ast(items)
    if task in ("SQQA", "SSUM", "AU"):
        return score_judged(items, task, transport, cache)
    raise DataError(f"unknown task {task!r}; choose from {TASKS}")
