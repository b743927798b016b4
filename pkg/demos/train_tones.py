"""Teach the toy model to name tones, then check the text path never moved.

Runs speech pretraining (encoder + projector) and post-training (projector + speech
adapter) on 50 synthetic tones. Takes a minute or two on one core.
"""

import sys

from loramix.multimodal import MultimodalModel
from loramix.training import SftSample, greedy_token_accuracy, prompt_ids, run_stage, stage_by_name, tone_dataset

scale = float(sys.argv[1]) if len(sys.argv) > 1 else 0.01
model = MultimodalModel()
tones = tone_dataset(n_samples=50)
prefix, _, _ = prompt_ids(SftSample("hello", "-", []), model.tokenizer)
text_before = model.generate(prefix, max_new_tokens=8)
print(f"accuracy before training: {greedy_token_accuracy(model, tones):.2f}")

for name in ("speech_pretrain", "speech_posttrain"):
    report = run_stage(stage_by_name(name, scale), model, tones, log_every=100)
    print(f"{name}: {report.steps} steps, loss {report.losses[0]:.3f} -> {report.losses[-1]:.3f}")
    for group, fp in report.fingerprints_after.items():
        moved = "moved" if fp != report.fingerprints_before[group] else "frozen"
        print(f"  {group:<17} {moved}")

print(f"accuracy after training: {greedy_token_accuracy(model, tones):.2f}")
print("text-only output unchanged:", model.generate(prefix, max_new_tokens=8) == text_before)
