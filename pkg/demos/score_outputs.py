"""Score a small ASR manifest and a translation manifest with chain-of-thought outputs."""

from loramix.evaluation import StubTransport, evaluate

asr = [
    {"id": "1", "hypothesis": "the quick brown fox", "reference": "The quick brown fox.", "lang": "en"},
    {"id": "2", "hypothesis": "a slow brown fox", "reference": "the quick brown fox", "lang": "en"},
    {"id": "3", "hypothesis": "今天天气很好", "reference": "今天天气不错", "lang": "zh"},
]
print(evaluate(asr, "ASR").table(), "\n")

ast = [
    {"id": "1", "output": "guten morgen <sep> good morning everyone", "reference": "good morning everyone",
     "direction": "DE-EN"},
    {"id": "2", "output": "the weather is really nice today in berlin",
     "reference": "the weather is nice today in berlin", "direction": "DE-EN"},
]
print(evaluate(ast, "AST").table(), "\n")

judge = StubTransport(lambda req: "Clear and correct. Rating: [[8]]")
sqqa = [{"id": str(i), "output": f"answer {i}", "turn": "turn-1", "fields": {"question": "why?"}} for i in range(3)]
print(evaluate(sqqa, "SQQA", judge).table())
