"""Command-line entry point: train, infer, budget, eval.

Exit codes: 0 success, 2 usage, 3 bad data or input, 4 invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .audio import audio_token_budget, max_audio_seconds, read_wav, wav_duration
from .errors import (
    AlignmentError,
    CapacityError,
    ConfigurationError,
    DataError,
    FrozenParameterError,
    InputTooShortError,
    LoramixError,
    TemplateError,
    UndefinedMetricError,
)
from .numerics import load_tensors
from .multimodal import MultimodalConfig, MultimodalModel, Payload
from .vision import VisionEncoderConfig, load_image, plan_crops

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 2, 3, 4
FULL_CONTEXT = 131_072


class UsageError(LoramixError):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="loramix", description="Toy mixture-of-LoRAs multimodal model.")
    p.add_argument("--config", help="JSON file of option defaults; explicit flags win")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help=argparse.SUPPRESS)
        sp.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="run training stages on synthetic or JSONL data")
    common(t)
    t.add_argument("--stages", default="speech_pretrain,speech_posttrain",
                   help="comma-separated stage names, in order")
    t.add_argument("--steps-scale", type=float, default=None, help="stage steps = 50000 * scale")
    t.add_argument("--schedule", help="JSON list of stage definitions overriding the standard ones")
    t.add_argument("--data", help="JSONL samples; default is the synthetic set for each stage")
    t.add_argument("--checkpoint", help="start from this checkpoint directory")
    t.add_argument("--out", default="runs/train")
    t.add_argument("--log-every", type=int, default=0)

    i = sub.add_parser("infer", help="greedy generation for one request")
    common(i)
    i.add_argument("--checkpoint")
    i.add_argument("--audio", help="PCM16 mono 16 kHz WAV")
    i.add_argument("--features", help="tensor container holding log-Mel frames [T, 80], instead of --audio")
    i.add_argument("--image", action="append", default=[])
    i.add_argument("--prompt", default="")
    i.add_argument("--context-tokens", type=int, default=None,
                   help="context budget checked before loading audio; default: the decoder's")
    i.add_argument("--max-new-tokens", type=int, default=16)

    b = sub.add_parser("budget", help="token budget for audio or an image")
    common(b)
    b.add_argument("--audio-seconds", type=float)
    b.add_argument("--image", help="HxW, e.g. 2000x3000")
    b.add_argument("--max-crops", type=int, default=36)
    b.add_argument("--crop-size", type=int, default=448)
    b.add_argument("--context-tokens", type=int, default=FULL_CONTEXT)

    e = sub.add_parser("eval", help="score a manifest of model outputs")
    common(e)
    e.add_argument("--task", required=True, type=str.upper, choices=["ASR", "AST", "SQQA", "SSUM", "AU"])
    e.add_argument("--manifest", required=True)
    e.add_argument("--out", default="report.json")
    e.add_argument("--judge-url", help="judge endpoint; defaults to $LORAMIX_JUDGE_URL")
    e.add_argument("--judge-stub", help="offline judge that always answers this text")
    e.add_argument("--judge-cache", help="JSON file caching judge replies")
    e.add_argument("--max-in-flight", type=int, default=4)
    return p


def parse_args(argv):
    parser = _parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            overrides = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read --config: {exc}") from exc
        overrides = {k.replace("-", "_"): v for k, v in overrides.items()}
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(overrides) - known
        if unknown:
            raise UsageError(f"unknown keys in --config: {sorted(unknown)}")
        sub.set_defaults(**overrides)
        args = parser.parse_args(argv)
    return args


# -- commands ---------------------------------------------------------------------


def _model(args) -> MultimodalModel:
    if getattr(args, "checkpoint", None):
        return MultimodalModel.load(args.checkpoint)
    return MultimodalModel(MultimodalConfig(seed=args.seed))


def cmd_train(args, out=print) -> list:
    from . import training as tr

    scale = tr.DESK_STEP_SCALE if args.steps_scale is None else args.steps_scale
    if args.schedule:
        stages = {s["name"]: tr.StageSpec.from_json(s) for s in json.loads(Path(args.schedule).read_text())}
    else:
        stages = {s.name: s for s in tr.standard_schedules(scale)}
    names = [n.strip() for n in args.stages.split(",") if n.strip()]
    unknown = [n for n in names if n not in stages]
    if unknown or not names:
        raise UsageError(f"unknown stages {unknown}; choose from {list(stages)}")
    model = _model(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    custom = tr.load_sft_jsonl(args.data, model) if args.data else None
    reports = []
    for name in names:
        stage = stages[name]
        data = custom if custom is not None else tr.synthetic_data(stage, model, args.seed)
        report = tr.run_stage(stage, model, data, seed=args.seed, log_every=args.log_every, log=out)
        reports.append(report)
        (out_dir / f"{name}.report.json").write_text(json.dumps(report.to_json(), indent=2))
        final = f"{report.losses[-1]:.4f}" if report.losses else "n/a"
        out(f"{name}: {report.steps} steps, final loss {final}, trained {list(stage.trainable_groups)}")
        for group, fp in report.fingerprints_after.items():
            flag = "changed" if fp != report.fingerprints_before[group] else "same"
            out(f"  {group:<17} {fp}  {flag}")
    model.save(out_dir / "checkpoint")
    (out_dir / "fingerprints.json").write_text(json.dumps(model.fingerprints(), indent=2))
    return reports


def cmd_infer(args, out=print) -> str:
    model = _model(args)
    context = args.context_tokens or model.config.decoder.max_context
    if args.audio and args.features:
        raise UsageError("pass --audio or --features, not both")
    prompt_tokens = len(model.tokenizer.encode(args.prompt)) + 4  # user, end, assistant, end
    if args.audio:
        duration = wav_duration(args.audio)
        budget = audio_token_budget(duration, context, prompt_tokens)
        if not budget.fits:
            raise CapacityError(
                f"audio_token_budget: {duration:.1f} s needs {budget.tokens} tokens, but only "
                f"{context - prompt_tokens} of {context} context tokens are free "
                f"(at most {max_audio_seconds(context, prompt_tokens):.1f} s)"
            )
    payloads = [Payload.from_image(load_image(p), model.vision_encoder, model.config.vision.max_crops_sft)
                for p in args.image]
    if args.audio:
        payloads.append(Payload.from_waveform(read_wav(args.audio)))
    elif args.features:
        arrays, _ = load_tensors(args.features)
        frames = arrays.get("features", next(iter(arrays.values()), None))
        if frames is None or frames.ndim != 2:
            raise DataError(f"{args.features}: expected one [T, n_mels] tensor")
        payloads.append(Payload("audio", frames))

    from .training import SftSample, prompt_ids

    sample = SftSample(args.prompt, "-", payloads)
    prefix, spans, _ = prompt_ids(sample, model.tokenizer)
    if len(prefix) + args.max_new_tokens > context:
        raise CapacityError(f"request needs {len(prefix)} prompt tokens plus {args.max_new_tokens} new tokens; "
                            f"context is {context}")
    adapters = model.route(sample.modalities)
    ids = model.generate(prefix, spans, adapters, args.max_new_tokens)
    text = model.tokenizer.decode(ids, skip_special=True)
    out(f"adapters: {json.dumps(adapters)}")
    out(f"output: {text}")
    return text


def _parse_hw(text: str):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"--image expects HxW, got {text!r}") from None
    return h, w


def cmd_budget(args, out=print) -> dict:
    if args.audio_seconds is None and args.image is None:
        raise UsageError("budget needs --audio-seconds and/or --image")
    result = {}
    if args.audio_seconds is not None:
        b = audio_token_budget(args.audio_seconds, args.context_tokens)
        result["audio"] = {"frames": b.frames, "tokens": b.tokens, "fits": b.fits}
        out(f"audio: {args.audio_seconds:g} s -> {b.frames} frames -> {b.tokens} tokens")
        out(f"context {args.context_tokens}: {'fits' if b.fits else 'does not fit'}; "
            f"max audio {max_audio_seconds(args.context_tokens) / 3600:.2f} h")
    if args.image is not None:
        h, w = _parse_hw(args.image)
        plan = plan_crops(h, w, args.crop_size, args.max_crops)
        per_crop = VisionEncoderConfig(crop_size=args.crop_size).n_patches
        result["image"] = {"rows": plan.rows, "cols": plan.cols, "crops": plan.n_crops,
                           "resize": [plan.resize_h, plan.resize_w], "fallback": plan.fallback_used}
        kind = "fallback grid" if plan.fallback_used else "grid"
        out(f"image: {h}x{w} -> {kind} {plan.rows}x{plan.cols} = {plan.n_crops} crops "
            f"(resized to {plan.resize_h}x{plan.resize_w}); {plan.n_crops * per_crop} patch tokens "
            f"at {per_crop} per crop")
    return result


def cmd_eval(args, out=print):
    from .evaluation import HttpTransport, ScoreCache, StubTransport, evaluate, load_manifest

    items = load_manifest(args.manifest)
    transport = None
    if args.task in ("SQQA", "SSUM", "AU"):
        transport = StubTransport(args.judge_stub) if args.judge_stub else None
        if transport is None and any("score" not in r and "choice" not in r for r in items):
            transport = HttpTransport(args.judge_url)
    cache = ScoreCache(args.judge_cache) if args.judge_cache else None
    report = evaluate(items, args.task, transport, cache)
    report.write(args.out)
    out(report.table())
    out(f"wrote {args.out}")
    return report


COMMANDS = {"train": cmd_train, "infer": cmd_infer, "budget": cmd_budget, "eval": cmd_eval}


def main(argv=None) -> int:
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
        COMMANDS[args.command](args)
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code or 0)
    except (UsageError, ConfigurationError, TemplateError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FrozenParameterError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (DataError, CapacityError, InputTooShortError, AlignmentError, UndefinedMetricError,
            FileNotFoundError, LoramixError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
