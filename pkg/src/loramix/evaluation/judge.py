"""Judge prompts: filling templates, sending them to a scoring endpoint, reading scores back."""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from ..errors import ConfigurationError, ExtractionError, TemplateError, TransportError
from .templates import TEMPLATES

ENDPOINT_ENV = "LORAMIX_JUDGE_URL"
KEY_ENV = "LORAMIX_JUDGE_KEY"

_FIELD = re.compile(r"\{\{|\}\}|\{(\w+)\}")


@dataclass(frozen=True)
class JudgeRequest:
    template_id: str
    prompt: str
    system: str | None = None

    @property
    def key(self) -> str:
        digest = hashlib.sha256(f"{self.system}\x00{self.prompt}".encode()).hexdigest()
        return f"{self.template_id}:{digest}"


def template_fields(template_id: str) -> set:
    tpl = _template(template_id)
    text = (tpl["system"] or "") + tpl["user"]
    return {m.group(1) for m in _FIELD.finditer(text) if m.group(1)}


def _template(template_id: str) -> dict:
    try:
        return TEMPLATES[template_id]
    except KeyError:
        raise TemplateError(f"unknown template {template_id!r}; known: {sorted(TEMPLATES)}") from None


def _fill(text: str, fields: dict) -> str:
    def sub(m):
        if m.group(0) == "{{":
            return "{"
        if m.group(0) == "}}":
            return "}"
        return str(fields[m.group(1)])

    return _FIELD.sub(sub, text)


def fill_judge_template(template_id: str, fields: dict) -> JudgeRequest:
    """Substitute every ``{field}``; a missing field raises TemplateError. Extra fields are ignored."""
    tpl = _template(template_id)
    missing = template_fields(template_id) - set(fields)
    if missing:
        raise TemplateError(f"template {template_id!r} is missing fields {sorted(missing)}")
    system = _fill(tpl["system"], fields) if tpl["system"] else None
    return JudgeRequest(template_id, _fill(tpl["user"], fields), system)


# -- score extraction ------------------------------------------------------------

_RATING = re.compile(r"\[\[(\d+(?:\.\d+)?)\]\]")
_NUMBER = re.compile(r"-?\d+(?:\.\d+)?")


def _json_object(reply: str):
    start, end = reply.find("{"), reply.rfind("}")
    if start < 0 or end <= start:
        return None
    try:
        return json.loads(reply[start : end + 1])
    except json.JSONDecodeError:
        return None


def _bounded(value, lo, hi, reply):
    if not lo <= value <= hi:
        raise ExtractionError(f"score {value} outside [{lo}, {hi}]", reply)
    return value


def _json_score(reply: str):
    obj = _json_object(reply)
    if isinstance(obj, dict) and "score" in obj:
        return obj["score"]
    m = re.search(r'"score"\s*:\s*("N/A"|N/A|-?\d+(?:\.\d+)?)', reply)
    if m:
        return m.group(1).strip('"')
    raise ExtractionError("no score field in reply", reply)


def extract_scores(reply: str, template_id: str):
    """Numeric score from a judge reply.

    MT-Bench templates give an int from ``[[n]]``; AirBench gives the second of two
    numbers; summarization gives the JSON ``score`` (None for "N/A").
    ``summarization_hallucination`` and ``summarization_adherence`` read a 0/1 flag
    and a 1-7 score from the same reply shapes.
    """
    if template_id.startswith("mt_bench"):
        m = _RATING.search(reply)
        if not m:
            raise ExtractionError("no [[rating]] in reply", reply)
        return _bounded(int(float(m.group(1))), 1, 10, reply)
    if template_id == "airbench_chat":
        for line in reply.strip().splitlines():
            nums = _NUMBER.findall(line)
            if len(nums) >= 2:
                return _bounded(float(nums[1]), 1, 10, reply)
        raise ExtractionError("expected two space-separated scores", reply)
    if template_id in ("summarization", "summarization_adherence", "summarization_hallucination"):
        try:
            raw = _json_score(reply)
        except ExtractionError:
            nums = _NUMBER.findall(reply)
            if "N/A" in reply and not nums:
                return None
            if not nums:
                raise
            raw = nums[0]
        if raw in ("N/A", None):
            return None
        value = float(raw)
        if template_id == "summarization_hallucination":
            if value not in (0.0, 1.0):
                raise ExtractionError(f"hallucination flag must be 0 or 1, got {raw}", reply)
            return int(value)
        return _bounded(value, 1, 7, reply)
    raise TemplateError(f"no score extraction rule for {template_id!r}")


# -- transport -------------------------------------------------------------------


class StubTransport:
    """Offline judge: a fixed reply, a callable of the request, or a queue of replies."""

    def __init__(self, reply="Rating: [[5]]"):
        self.reply = reply
        self.calls = []
        self._lock = threading.Lock()

    def __call__(self, request: JudgeRequest) -> str:
        with self._lock:
            self.calls.append(request)
            if callable(self.reply):
                return self.reply(request)
            if isinstance(self.reply, list):
                return self.reply.pop(0)
            return self.reply


class HttpTransport:
    """POST ``{"prompt", "system"}`` as JSON, expect ``{"text"}`` back.

    Transient failures (connection errors, HTTP 5xx and 429) are retried up to
    ``retries`` times with exponential backoff.
    """

    def __init__(self, url: str | None = None, api_key: str | None = None, retries: int = 3,
                 backoff: float = 0.5, timeout: float = 60.0, sleep=time.sleep):
        url = url or os.environ.get(ENDPOINT_ENV)
        if not url:
            raise ConfigurationError(f"no judge endpoint; pass a URL or set {ENDPOINT_ENV}")
        parsed = urllib.parse.urlparse(url)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise ConfigurationError(f"malformed judge endpoint URL {url!r}")
        self.url = url
        self.api_key = api_key if api_key is not None else os.environ.get(KEY_ENV)
        self.retries, self.backoff, self.timeout, self.sleep = retries, backoff, timeout, sleep

    def _post(self, request: JudgeRequest) -> str:
        body = json.dumps({"prompt": request.prompt, "system": request.system}).encode()
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        req = urllib.request.Request(self.url, data=body, headers=headers, method="POST")
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            return json.loads(resp.read().decode())["text"]

    def __call__(self, request: JudgeRequest) -> str:
        last = None
        for attempt in range(self.retries + 1):
            try:
                return self._post(request)
            except urllib.error.HTTPError as exc:
                if exc.code < 500 and exc.code != 429:
                    raise TransportError(f"judge endpoint returned HTTP {exc.code}") from exc
                last = exc
            except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
                last = exc
            except (KeyError, json.JSONDecodeError) as exc:
                raise TransportError(f"judge endpoint sent an unreadable reply: {exc}") from exc
            if attempt < self.retries:
                self.sleep(self.backoff * 2**attempt)
        raise TransportError(f"judge endpoint failed after {self.retries} retries: {last}")


class ScoreCache:
    """Replies keyed by template id and prompt hash, optionally persisted as JSON."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self.entries = {}
        if self.path and self.path.exists():
            self.entries = json.loads(self.path.read_text())

    def get(self, request: JudgeRequest):
        with self._lock:
            return self.entries.get(request.key)

    def put(self, request: JudgeRequest, reply: str):
        with self._lock:
            self.entries[request.key] = reply
            if self.path:
                self.path.write_text(json.dumps(self.entries, indent=1, sort_keys=True))


def judge_transport(request: JudgeRequest, transport=None, cache: ScoreCache | None = None) -> str:
    if cache is not None:
        hit = cache.get(request)
        if hit is not None:
            return hit
    reply = (transport or HttpTransport())(request)
    if cache is not None:
        cache.put(request, reply)
    return reply


def judge_many(requests, transport=None, cache: ScoreCache | None = None, max_in_flight: int = 4) -> list:
    """Replies in request order with at most ``max_in_flight`` concurrent calls."""
    transport = transport or HttpTransport()
    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        return list(pool.map(lambda r: judge_transport(r, transport, cache), requests))


def judge_score(template_id: str, fields: dict, transport=None, cache=None):
    request = fill_judge_template(template_id, fields)
    return extract_scores(judge_transport(request, transport, cache), template_id)
