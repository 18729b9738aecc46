"""Command-line entry point.

Subcommands: plan, lr-dump, mix, pack, inspect, audit, score. Exit codes
are script-friendly: 0 success, 1 spec validation failure, 2 I/O or format
failure, 3 audit bound violation. Reports go to stdout, diagnostics to
stderr. All randomness flows from one seed (the spec's, unless --seed
overrides it).
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import yaml

from . import budget, evalagg, mixer, packer, runspec, schedule, shardio

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_AUDIT = 3


class _CliError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        self.message = message


def _load_spec(args: argparse.Namespace) -> runspec.RunSpec:
    if getattr(args, "preset", None):
        try:
            spec = runspec.parse_preset(args.preset)
        except runspec.UnknownPresetError as exc:
            raise _CliError(EXIT_VALIDATION, str(exc))
    elif getattr(args, "spec", None):
        try:
            spec = runspec.load(args.spec)
        except OSError as exc:
            raise _CliError(EXIT_IO, f"cannot read spec: {exc}")
        except runspec.SpecFormatError as exc:
            raise _CliError(EXIT_VALIDATION, f"bad spec file: {exc}")
    else:
        raise _CliError(EXIT_VALIDATION, "one of --spec or --preset is required")
    if getattr(args, "seed", None) is not None:
        spec = runspec.replace(spec, seed=args.seed)
    try:
        return runspec.validate(spec)
    except runspec.ValidationError as exc:
        raise _CliError(EXIT_VALIDATION, str(exc))


def _branch_for(spec: runspec.RunSpec) -> schedule.BranchSchedule:
    parent = schedule.parent_schedule(spec)
    duration = budget.chinchilla_tokens(spec.scale.param_count, spec.token_multiplier)
    return schedule.branch(parent, spec.checkpoint_fraction, duration, spec)


def cmd_plan(args: argparse.Namespace) -> int:
    spec = _load_spec(args)
    stage = budget.stage_plan(spec, ft_examples=args.ft_examples)
    plan = budget.spec_mix_plan(spec)
    b = _branch_for(spec)
    doc: dict = {
        "run": {
            "param_count": spec.scale.param_count,
            "checkpoint_fraction": spec.checkpoint_fraction,
            "image_ratio": spec.image_ratio,
            "instruction_fraction": spec.instruction_fraction,
            "ft_epochs": spec.ft_epochs,
            "seed": spec.seed,
        },
        "stage_plan": {
            "pretrain_resume_tokens": stage.pretrain_resume_tokens,
            "mm_tokens": stage.mm_tokens,
            "mm_steps": stage.mm_steps,
            "ft_steps_per_epoch": stage.ft_steps_per_epoch,
            "ft_total_steps": stage.ft_total_steps,
        },
        "mix_plan": {
            "total_tokens": plan.total_tokens,
            "text_tokens": plan.text_tokens,
            "caption_tokens": plan.caption_tokens,
            "instruction_tokens": plan.instruction_tokens,
        },
        "branch_schedule": {
            "mode": b.mode,
            "duration_tokens": b.duration_tokens,
            "end_lr": b.end_lr,
        },
        "ft_schedule": {
            "peak_lr": schedule.FT_PEAK_LR_DEFAULT,
            "warmup_ratio": schedule.FT_WARMUP_RATIO_DEFAULT,
        },
    }
    if b.mode == schedule.CONTINUED:
        doc["branch_schedule"]["start_lr"] = b.start_lr
    else:
        doc["branch_schedule"]["peak_lr"] = b.peak_lr
        doc["branch_schedule"]["warmup_tokens"] = b.warmup_tokens
    print(yaml.safe_dump(doc, sort_keys=False), end="")
    if args.emit_spec:
        runspec.save(spec, args.emit_spec)
        print(f"spec written to {args.emit_spec}", file=sys.stderr)
    return EXIT_OK


def _fmt_tokens(t: float) -> str:
    return str(int(t)) if float(t).is_integer() else format(t, ".17g")


def cmd_lr_dump(args: argparse.Namespace) -> int:
    spec = _load_spec(args)
    n = args.samples
    if n < 2:
        raise _CliError(EXIT_VALIDATION, "--samples must be at least 2")
    if args.which == "ft":
        stage = budget.stage_plan(spec)
        sched = schedule.FtSchedule(
            peak_lr=schedule.FT_PEAK_LR_DEFAULT,
            warmup_ratio=schedule.FT_WARMUP_RATIO_DEFAULT,
            steps_per_epoch=stage.ft_steps_per_epoch,
            epochs=spec.ft_epochs,
        )
        span = args.span if args.span is not None else sched.total_steps
        print("step,lr")
        for i in range(n):
            step = round(i * span / (n - 1))
            print(f"{step},{schedule.ft_lr_at(sched, step):.17g}")
        return EXIT_OK
    if args.which == "parent":
        parent = schedule.parent_schedule(spec)
        span = args.span if args.span is not None else parent.total_tokens
        fn = lambda t: schedule.lr_at(parent, t)
    else:
        b = _branch_for(spec)
        span = args.span if args.span is not None else b.duration_tokens
        fn = lambda t: schedule.branch_lr_at(b, t)
    print("tokens,lr")
    for i in range(n):
        t = i * span / (n - 1)
        print(f"{_fmt_tokens(t)},{fn(t):.17g}")
    return EXIT_OK


def _load_streams(args: argparse.Namespace, spec: runspec.RunSpec):
    paths = {
        "text": args.text,
        "caption": args.captions,
        "instruction": args.instructions,
    }
    streams = []
    load_stats = packer.LoadStats()
    for source in packer.SOURCES:
        path = paths[source]
        docs: list[packer.Document] = []
        if path is not None:
            try:
                docs = [
                    d
                    for d in packer.read_documents(path, spec, load_stats)
                    if d.source == source
                ]
            except OSError as exc:
                raise _CliError(EXIT_IO, f"cannot read {source} corpus: {exc}")
            except packer.DocumentError as exc:
                raise _CliError(EXIT_IO, str(exc))
        streams.append(
            mixer.SourceStream(
                source_id=source,
                documents=docs,
                permutation_seed=spec.seed,
                repeatable=not args.no_cycle,
            )
        )
    if load_stats.skipped_invalid:
        print(
            f"skipped {load_stats.skipped_invalid} invalid documents on load",
            file=sys.stderr,
        )
        for msg in load_stats.messages[:10]:
            print(f"  {msg}", file=sys.stderr)
    return streams


def _plan_for(args: argparse.Namespace, spec: runspec.RunSpec) -> budget.MixPlan:
    return budget.spec_mix_plan(spec, total=args.total_tokens)


def cmd_mix(args: argparse.Namespace) -> int:
    spec = _load_spec(args)
    streams = _load_streams(args, spec)
    plan = _plan_for(args, spec)
    try:
        docs = list(mixer.mix(streams, plan, spec.seed))
    except mixer.SourceExhaustedError as exc:
        raise _CliError(EXIT_IO, str(exc))
    if args.emit_docs:
        for doc in docs:
            print(json.dumps(packer.document_to_obj(doc), separators=(",", ":")))
    emitted = {s: 0 for s in packer.SOURCES}
    for doc in docs:
        emitted[doc.source] += packer.layout_token_count(doc)
    print(
        f"mixed {len(docs)} documents; tokens per source: "
        + ", ".join(f"{s}={emitted[s]}" for s in packer.SOURCES),
        file=sys.stderr,
    )
    return EXIT_OK


def _build_shard(payload) -> dict:
    """Mix, pack, and write one shard; runs in a worker process."""
    spec, streams, sub_plan, shard_seed, out_path = payload
    docs = mixer.mix(streams, sub_plan, shard_seed)
    stats = packer.PackStats()
    sequences = packer.pack(docs, spec, stats)
    manifest = shardio.write_shard(sequences, out_path, seed=shard_seed)
    return {"manifest": manifest, "stats": stats}


def cmd_pack(args: argparse.Namespace) -> int:
    spec = _load_spec(args)
    streams = _load_streams(args, spec)
    plan = _plan_for(args, spec)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.shard_tokens:
        totals = []
        remaining = plan.total_tokens
        while remaining > 0:
            take = min(args.shard_tokens, remaining)
            totals.append(take)
            remaining -= take
    else:
        totals = [plan.total_tokens]

    jobs = []
    for index, total in enumerate(totals):
        sub_plan = budget.mix_plan(total, spec.image_ratio, spec.instruction_fraction)
        shard_seed = spec.seed ^ index
        out_path = out_dir / f"shard_{index:04d}{shardio.SHARD_SUFFIX}"
        jobs.append((spec, streams, sub_plan, shard_seed, out_path))

    try:
        if args.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=args.workers) as pool:
                outcomes = list(pool.map(_build_shard, jobs))
        else:
            outcomes = [_build_shard(job) for job in jobs]
    except mixer.SourceExhaustedError as exc:
        raise _CliError(EXIT_IO, str(exc))
    except OSError as exc:
        raise _CliError(EXIT_IO, str(exc))

    manifests = [o["manifest"] for o in outcomes]
    skipped_empty = sum(o["stats"].skipped_empty_caption for o in outcomes)
    skipped_oversized = sum(o["stats"].skipped_oversized for o in outcomes)
    skipped_invalid = sum(o["stats"].skipped_invalid for o in outcomes)
    sequences = sum(m.sequence_count for m in manifests)
    print(f"shards: {len(manifests)}  sequences: {sequences}")
    print(
        f"skipped: empty_caption={skipped_empty} oversized={skipped_oversized} "
        f"invalid={skipped_invalid}"
    )
    if args.max_oversized >= 0 and skipped_oversized > args.max_oversized:
        raise _CliError(
            EXIT_IO,
            f"{skipped_oversized} oversized image layouts exceed the "
            f"--max-oversized threshold {args.max_oversized}",
        )
    tolerance = None
    if len(manifests) > 1:
        # Each shard can overshoot independently; scale the bound.
        grand = sum(sum(m.tokens_per_source.values()) for m in manifests)
        max_layout = max(m.max_layout_tokens for m in manifests)
        tolerance = len(manifests) * max_layout / grand if grand else 0.0
    report = shardio.audit(manifests, plan, tolerance=tolerance)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.ok else EXIT_AUDIT


def cmd_inspect(args: argparse.Namespace) -> int:
    try:
        seq_len, seed, sequences = shardio.read_shard(args.shard)
    except OSError as exc:
        raise _CliError(EXIT_IO, str(exc))
    except shardio.ShardFormatError as exc:
        raise _CliError(EXIT_IO, str(exc))
    counts = shardio.write_counts(sequences, seq_len)
    print(f"shard: {args.shard}")
    print(f"seq_len: {seq_len}")
    print(f"seed: {seed}")
    print(f"sequences: {counts['sequence_count']}")
    for s, n in counts["tokens_per_source"].items():
        print(f"tokens[{s}]: {n}")
    print(f"pad_tokens: {counts['pad_tokens']}")
    print(f"loss_targets: {counts['loss_targets']}")
    print(f"image_spans: {counts['image_spans']}")
    if args.verify:
        try:
            shardio.verify_shard(args.shard)
        except shardio.ShardFormatError as exc:
            raise _CliError(EXIT_IO, str(exc))
        print("verify: ok")
    return EXIT_OK


def cmd_audit(args: argparse.Namespace) -> int:
    try:
        manifests = [shardio.read_manifest(p) for p in args.manifests]
    except OSError as exc:
        raise _CliError(EXIT_IO, str(exc))
    except (shardio.ShardFormatError, json.JSONDecodeError, TypeError) as exc:
        raise _CliError(EXIT_IO, f"bad manifest: {exc}")
    plan = None
    if args.spec or args.preset:
        spec = _load_spec(args)
        plan = budget.spec_mix_plan(spec, total=args.total_tokens)
    try:
        report = shardio.audit(manifests, plan, tolerance=args.tolerance)
    except (ValueError, shardio.ShardFormatError) as exc:
        raise _CliError(EXIT_IO, str(exc))
    for line in report.lines():
        print(line)
    return EXIT_OK if report.ok else EXIT_AUDIT


def cmd_score(args: argparse.Namespace) -> int:
    if args.baselines:
        try:
            table = evalagg.BaselineTable.load(args.baselines)
        except OSError as exc:
            raise _CliError(EXIT_IO, f"cannot read baselines: {exc}")
        except ValueError as exc:
            raise _CliError(EXIT_VALIDATION, str(exc))
    else:
        table = evalagg.default_baselines()
    try:
        report = evalagg.score_report(args.results, table)
    except OSError as exc:
        raise _CliError(EXIT_IO, str(exc))
    except evalagg.UnknownTaskError as exc:
        raise _CliError(EXIT_VALIDATION, str(exc))
    except (ValueError, json.JSONDecodeError) as exc:
        raise _CliError(EXIT_IO, f"bad results file: {exc}")
    for line in report.lines():
        print(line)
    if args.ndjson:
        Path(args.ndjson).write_text(report.to_ndjson(), encoding="utf-8")
    return EXIT_OK


def _add_spec_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spec", help="run-spec YAML file")
    p.add_argument(
        "--preset",
        help="named preset, e.g. 'ratio-sweep-80(0.10)' (alternative to --spec)",
    )
    p.add_argument("--seed", type=int, help="override the spec's seed")


def _add_source_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--text", help="text corpus NDJSON")
    p.add_argument("--captions", help="caption corpus NDJSON")
    p.add_argument("--instructions", help="instruction corpus NDJSON")
    p.add_argument(
        "--total-tokens",
        type=int,
        help="mix budget for this run (default: the spec's multimodal budget)",
    )
    p.add_argument(
        "--no-cycle",
        action="store_true",
        help="fail instead of cycling a source that runs out of documents",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmpipe",
        description="Deterministic multimodal pre-training pipeline tools",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="print phase durations, token targets, and schedule endpoints")
    _add_spec_args(p)
    p.add_argument("--ft-examples", type=int, default=budget.FT_DATASET_EXAMPLES_DEFAULT)
    p.add_argument("--emit-spec", help="also write the resolved spec to this path")
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("lr-dump", help="sample a schedule as CSV")
    _add_spec_args(p)
    p.add_argument("--samples", type=int, default=101, help="number of rows (endpoints included)")
    p.add_argument("--which", choices=("branch", "parent", "ft"), default="branch")
    p.add_argument("--span", type=int, help="dump over [0, span] instead of the full duration")
    p.set_defaults(fn=cmd_lr_dump)

    p = sub.add_parser("mix", help="interleave corpora to the spec's ratios")
    _add_spec_args(p)
    _add_source_args(p)
    p.add_argument("--emit-docs", action="store_true", help="write mixed documents as NDJSON to stdout")
    p.set_defaults(fn=cmd_mix)

    p = sub.add_parser("pack", help="mix, pack, and write shards with manifests")
    _add_spec_args(p)
    _add_source_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--shard-tokens", type=int, help="partition the budget into sub-plans of this many tokens")
    p.add_argument("--workers", type=int, default=1, help="parallel shard builders (output is independent of N)")
    p.add_argument(
        "--max-oversized",
        type=int,
        default=-1,
        help="fail if more than this many oversized image layouts were skipped",
    )
    p.set_defaults(fn=cmd_pack)

    p = sub.add_parser("inspect", help="decode a shard and print its counts")
    p.add_argument("shard")
    p.add_argument("--verify", action="store_true", help="also check the manifest and checksum")
    p.set_defaults(fn=cmd_inspect)

    p = sub.add_parser("audit", help="aggregate manifests into a realized-mix report")
    _add_spec_args(p)
    p.add_argument("manifests", nargs="+")
    p.add_argument("--total-tokens", type=int)
    p.add_argument("--tolerance", type=float)
    p.set_defaults(fn=cmd_audit)

    p = sub.add_parser("score", help="stable-score an NDJSON results file")
    p.add_argument("--results", required=True)
    p.add_argument("--baselines", help="baseline table YAML (default: built-in tables)")
    p.add_argument("--ndjson", help="also write the report as NDJSON to this path")
    p.set_defaults(fn=cmd_score)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _CliError as exc:
        print(exc.message, file=sys.stderr)
        return exc.code


def entrypoint() -> None:
    sys.exit(main())
