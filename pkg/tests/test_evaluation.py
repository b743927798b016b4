import json
import random
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loramix.errors import (
    ConfigurationError,
    DataError,
    DimensionError,
    ExtractionError,
    TemplateError,
    TransportError,
    UndefinedMetricError,
)
from loramix.evaluation import (
    TEMPLATES,
    HttpTransport,
    ItemScore,
    ScoreCache,
    StubTransport,
    aggregate,
    bleu,
    cer,
    cot_split,
    error_rate,
    evaluate,
    extract_scores,
    fill_judge_template,
    judge_score,
    load_manifest,
    template_fields,
    wer,
)

# -- error rates -------------------------------------------------------------------


def dp_oracle(a, b):
    """Full-table Levenshtein distance."""
    d = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) + 1):
        d[i][0] = i
    for j in range(len(b) + 1):
        d[0][j] = j
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] != b[j - 1]))
    return d[-1][-1]


def test_wer_cer_match_dp_oracle_on_random_pairs():
    rng = random.Random(0)
    vocab = ["a", "b", "c", "dd", "ee"]
    for _ in range(1000):
        hyp = " ".join(rng.choice(vocab) for _ in range(rng.randint(0, 8)))
        ref = " ".join(rng.choice(vocab) for _ in range(rng.randint(1, 8)))
        assert wer(hyp, ref) == dp_oracle(hyp.split(), ref.split()) / len(ref.split())
        h, r = hyp.replace(" ", ""), ref.replace(" ", "")
        assert cer(hyp, ref) == dp_oracle(h, r) / len(r)


def test_error_rate_examples():
    assert wer("a b c", "a b c") == 0.0
    assert wer("a x c", "a b c") == 1 / 3
    assert wer("", "a b") == 1.0
    assert cer("ab", "ab") == 0.0
    assert cer("ax", "ab") == 0.5
    assert wer("Hello, World!", "hello world") == 0.0
    for bad in ("", "  ", "!!"):
        with pytest.raises(UndefinedMetricError):
            wer("x", bad)
    with pytest.raises(UndefinedMetricError):
        cer("x", " ")


def test_language_dispatch():
    # one wrong character out of four; as a single word it would be a 100% WER
    for lang in ("ja", "zh", "ZH"):
        assert error_rate("今日晴れ", "今日雨れ", lang) == 0.25
    for lang in ("en", "de", "fr"):
        assert error_rate("今日晴れ", "今日雨れ", lang) == 1.0


# -- BLEU --------------------------------------------------------------------------

FIXTURE_13A = (
    ["The cat sat on the mat, quietly.", "There is a dog in the park today."],
    ["The cat sat on the red mat quietly.", "A dog is in the park today."],
)
FIXTURE_CHAR = (["今日は良い天気です", "我喜欢喝茶和咖啡"], ["今日はいい天気です", "我喜欢喝咖啡和茶"])
# scored with sacrebleu 2.6.0 (smooth_method="none") before the implementation existed
FROZEN_13A = 50.86989136546122
FROZEN_CHAR = 53.01259545520435


def test_bleu_matches_frozen_reference_values():
    assert abs(bleu(*FIXTURE_13A) - FROZEN_13A) <= 1e-6
    assert abs(bleu(*FIXTURE_CHAR, tokenizer="char") - FROZEN_CHAR) <= 1e-6


def test_bleu_matches_reference_implementation_live():
    sacrebleu = pytest.importorskip("sacrebleu")
    rng = random.Random(1)
    words = "the a cat dog sat ran on in mat park , . today".split()
    for _ in range(30):
        refs = [" ".join(rng.choice(words) for _ in range(rng.randint(4, 12))) for _ in range(3)]
        hyps = [" ".join(w if rng.random() < 0.8 else rng.choice(words) for w in r.split()) for r in refs]
        want = sacrebleu.corpus_bleu(hyps, [refs], smooth_method="none", tokenize="13a").score
        assert abs(bleu(hyps, refs) - want) <= 1e-6


def test_bleu_edges():
    assert bleu(["a b c d e"], ["a b c d e"]) == 100.0
    assert bleu([""], ["a b c d"]) == 0.0
    with pytest.raises(UndefinedMetricError):
        bleu([], [])
    with pytest.raises(DimensionError):
        bleu(["a"], ["a", "b"])
    with pytest.raises(ValueError):
        bleu(["a"], ["a"], tokenizer="mecab")


sentences = st.lists(st.sampled_from("ab cd ef gh ij , .".split()), min_size=4, max_size=10).map(" ".join)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(sentences, sentences), min_size=1, max_size=5), st.randoms())
def test_bleu_is_order_invariant(pairs, rnd):
    hyps, refs = zip(*pairs)
    assert bleu(list(refs), list(refs)) == 100.0
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    h2, r2 = zip(*shuffled)
    assert abs(bleu(list(hyps), list(refs)) - bleu(list(h2), list(r2))) <= 1e-9


# -- chain-of-thought split --------------------------------------------------------


def test_cot_examples():
    out = cot_split("hello world <sep> bonjour le monde")
    assert (out.transcript, out.translation, out.separator_found) == ("hello world", "bonjour le monde", True)
    out = cot_split("  just a translation ")
    assert (out.transcript, out.translation, out.separator_found) == (None, "just a translation", False)
    assert cot_split("a <sep> b <sep> c").translation == "b <sep> c"


@given(st.text().filter(lambda s: "<sep>" not in s), st.text().filter(lambda s: "<sep>" not in s))
def test_cot_split_property(a, b):
    assert cot_split(a + "<sep>" + b).translation == b.strip()


# -- judge templates and extraction ----------------------------------------------


def test_template_literals():
    req = fill_judge_template("mt_bench_turn1", {"question": "Q?", "answer": "A."})
    assert "you must rate the response on a scale of 1 to 10" in req.prompt
    assert "[Question]\nQ?\n" in req.prompt and req.system == "You are a helpful assistant."
    req = fill_judge_template("summarization", {"src": "doc", "instruction": "be brief", "tgt": "sum"})
    assert "assign a overall score of summary in the scale 1-7" in req.prompt
    assert req.prompt.endswith('"score": THE_SCORE_VALUE\n}') and req.system is None


def test_template_fill_is_byte_stable_and_only_substitutes():
    for tid in TEMPLATES:
        fields = {f: f"<{f}-value>" for f in template_fields(tid)}
        a, b = fill_judge_template(tid, fields), fill_judge_template(tid, dict(fields, extra="x"))
        assert a.prompt.encode() == b.prompt.encode() and a.key == b.key
        stripped = a.prompt
        for f, v in fields.items():
            stripped = stripped.replace(v, "{" + f + "}")
        assert stripped == TEMPLATES[tid]["user"].replace("{{", "{").replace("}}", "}")


def test_missing_field_is_a_template_error():
    fields = {f: "x" for f in template_fields("mt_bench_turn2_math") - {"ref_answer_1"}}
    with pytest.raises(TemplateError):
        fill_judge_template("mt_bench_turn2_math", fields)
    with pytest.raises(TemplateError):
        fill_judge_template("nope", {})


def test_extract_examples():
    assert extract_scores("The answer is fine. Rating: [[5]]", "mt_bench_turn1") == 5
    assert extract_scores("7 9", "airbench_chat") == 9
    assert extract_scores('{"explanation": "ok", "score": 6}', "summarization") == 6
    assert extract_scores('{"explanation": "none", "score": "N/A"}', "summarization") is None
    assert extract_scores("N/A", "summarization") is None


@pytest.mark.parametrize("reply,tid", [
    ("no rating here", "mt_bench_turn1"),
    ("Rating: [[11]]", "mt_bench_turn2"),
    ("just 7", "airbench_chat"),
    ("nothing", "summarization"),
    ('{"score": 9}', "summarization"),
])
def test_extraction_errors_carry_reply(reply, tid):
    with pytest.raises(ExtractionError) as info:
        extract_scores(reply, tid)
    assert info.value.raw_reply == reply


# -- aggregation fixtures --------------------------------------------------------

PER_LANGUAGE = {
    "cv15": ({"en": 7.61, "de": 5.13, "es": 4.47, "fr": 8.08, "it": 3.78, "ja": 10.98, "pt": 6.97, "zh": 7.35}, 6.80),
    "fleurs": ({"en": 3.38, "de": 3.96, "es": 3.02, "fr": 4.35, "it": 1.98, "ja": 4.50, "pt": 3.98, "zh": 6.83}, 4.00),
    "openasr": (
        {"ami": 11.69, "earnings22": 10.16, "gigaspeech": 9.78, "spgispeech": 3.13, "tedlium": 2.90,
         "ls_clean": 1.68, "ls_other": 3.83, "voxpopuli": 5.91},
        6.14,
    ),
}


@pytest.mark.parametrize("name", sorted(PER_LANGUAGE))
def test_asr_average_rows(name):
    rows, want = PER_LANGUAGE[name]
    report = aggregate([ItemScore(k, k, v) for k, v in rows.items()], "ASR")
    assert abs(report.overall - want) <= 0.005
    assert report.table().splitlines()[-1].startswith("Average")


def test_two_turn_average():
    # uneven turn sizes: the macro mean of turn means, not the item mean
    items = [ItemScore(f"a{i}", "turn-1", 7.42) for i in range(3)] + [ItemScore("b", "turn-2", 6.67)]
    report = aggregate(items, "SQQA")
    assert report.subcategories == pytest.approx({"turn-1": 7.42, "turn-2": 6.67}, abs=1e-12)
    assert abs(report.overall - 7.05) <= 0.005


def test_aggregate_excludes_na_and_rejects_empty():
    report = aggregate([ItemScore("1", "s", 6.0), ItemScore("2", "s", None)], "SSUM")
    assert report.overall == 6.0 and report.excluded == 1
    assert aggregate([ItemScore("1", "s", None)], "SSUM").overall is None
    with pytest.raises(DataError):
        aggregate([], "ASR")


def test_asr_report_end_to_end():
    items = [
        {"id": "1", "hypothesis": "a b c", "reference": "a b c", "lang": "en"},
        {"id": "2", "hypothesis": "a x", "reference": "a b", "lang": "en"},
        {"id": "3", "output": "今日", "reference": "今天", "lang": "zh"},
    ]
    report = evaluate(items, "asr")
    assert report.subcategories == {"en": 20.0, "zh": 50.0}
    assert report.overall == 35.0


def test_ast_report_uses_text_after_separator():
    items = [
        {"id": "1", "output": "guten tag <sep> good day to you", "reference": "good day to you", "direction": "DE-EN"},
        {"id": "2", "output": "hello <sep> 你好世界", "reference": "你好世界", "direction": "EN-ZH"},
    ]
    report = evaluate(items, "AST")
    assert report.subcategories == {"DE-EN": 100.0, "EN-ZH": 100.0}
    assert any("per-character" in n for n in report.notes)
    with pytest.raises(DataError):
        evaluate([{"id": "1", "output": "x", "reference": "x"}], "AST")


def test_choice_items_and_unknown_task():
    items = [
        {"id": "1", "output": "The answer is B", "choice": "b", "dataset": "mmmlu"},
        {"id": "2", "output": "C", "choice": "D", "dataset": "mmmlu"},
    ]
    assert evaluate(items, "SQQA").overall == 50.0
    with pytest.raises(DataError):
        evaluate(items, "VQA")


def test_manifest_loading(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text('{"id": "a", "reference": "x"}\n\n{"reference": "y"}\n')
    assert [r["id"] for r in load_manifest(path)] == ["a", "3"]
    path.write_text('{"id": "a"}\n{"id": "a"}\n')
    with pytest.raises(DataError):
        load_manifest(path)


# -- transport -------------------------------------------------------------------


def test_stub_pipeline_end_to_end():
    stub = StubTransport("Good answer. Rating: [[5]]")
    assert judge_score("mt_bench_turn1", {"question": "q", "answer": "a"}, stub) == 5
    items = [{"id": str(i), "output": f"answer {i}", "turn": "turn-1", "fields": {"question": "q"}} for i in range(3)]
    report = evaluate(items, "SQQA", stub)
    assert report.overall == 5.0 and len(stub.calls) == 4


def test_cache_skips_the_transport(tmp_path):
    stub = StubTransport(["Rating: [[8]]"])
    cache = ScoreCache(tmp_path / "cache.json")
    fields = {"question": "q", "answer": "a"}
    assert judge_score("mt_bench_turn1", fields, stub, cache) == 8
    # the queue is now empty, so a second call would fail without the cache
    assert judge_score("mt_bench_turn1", fields, stub, ScoreCache(tmp_path / "cache.json")) == 8
    assert len(stub.calls) == 1


class _Flaky(BaseHTTPRequestHandler):
    statuses = []
    bodies = []

    def do_POST(self):
        self.bodies.append(json.loads(self.rfile.read(int(self.headers["Content-Length"]))))
        status = self.statuses.pop(0)
        self.send_response(status)
        self.end_headers()
        if status == 200:
            self.wfile.write(json.dumps({"text": "Rating: [[7]]"}).encode())

    def log_message(self, *args):
        pass


@pytest.fixture
def flaky_server():
    server = HTTPServer(("127.0.0.1", 0), _Flaky)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server
    server.shutdown()
    server.server_close()


def test_http_transport_retries_then_succeeds(flaky_server):
    _Flaky.statuses, _Flaky.bodies = [500, 500, 200], []
    sleeps = []
    transport = HttpTransport(f"http://127.0.0.1:{flaky_server.server_port}/judge", sleep=sleeps.append)
    assert judge_score("mt_bench_turn1", {"question": "q", "answer": "a"}, transport) == 7
    assert len(_Flaky.bodies) == 3 and sleeps == [0.5, 1.0]
    assert "[Question]\nq\n" in _Flaky.bodies[0]["prompt"]


def test_http_transport_gives_up(flaky_server):
    _Flaky.statuses, _Flaky.bodies = [500] * 4, []
    transport = HttpTransport(f"http://127.0.0.1:{flaky_server.server_port}/", sleep=lambda s: None)
    with pytest.raises(TransportError):
        judge_score("mt_bench_turn1", {"question": "q", "answer": "a"}, transport)
    assert len(_Flaky.bodies) == 4


def test_http_transport_configuration(monkeypatch):
    monkeypatch.delenv("LORAMIX_JUDGE_URL", raising=False)
    for url in ("not a url", "ftp://host/x", "http://"):
        with pytest.raises(ConfigurationError):
            HttpTransport(url)
    with pytest.raises(ConfigurationError):
        HttpTransport()
    monkeypatch.setenv("LORAMIX_JUDGE_URL", "http://localhost:1/x")
    assert HttpTransport().url == "http://localhost:1/x"
