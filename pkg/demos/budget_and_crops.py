"""How many decoder tokens do audio clips and images cost?"""

from loramix.audio import audio_token_budget, max_audio_seconds
from loramix.vision import VisionEncoderConfig, plan_crops

CONTEXT = 131_072

for seconds in (1, 30, 60, 1800):
    b = audio_token_budget(seconds, CONTEXT)
    print(f"{seconds:>5} s of audio: {b.frames:>6} frames -> {b.tokens:>5} tokens")
print(f"longest clip in a 128k context: {max_audio_seconds(128_000) / 3600:.2f} h")

per_crop = VisionEncoderConfig().n_patches
for h, w in [(28, 448), (896, 896), (2000, 3000), (5000, 800)]:
    plan = plan_crops(h, w, 448, 16)
    how = "fallback" if plan.fallback_used else "direct"
    print(f"{h}x{w}: {plan.rows}x{plan.cols} {how}, resized to {plan.resize_h}x{plan.resize_w}, "
          f"{plan.n_crops * per_crop} patch tokens")
