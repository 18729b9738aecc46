"""reftrainer command line: run a certification training loop."""

from __future__ import annotations

import argparse
import sys

from . import model as model_mod
from . import shards, specfile, train


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="reftrainer",
        description="Toy trainer certifying shard masking, freezing, and LR consumption",
    )
    parser.add_argument("--spec", required=True, help="run-spec YAML")
    parser.add_argument("--shards", required=True, help="directory of .mmshard files")
    parser.add_argument("--lr-csv", required=True, help="lr-dump CSV from the pipeline")
    parser.add_argument("--steps", type=int, required=True)
    parser.add_argument("--batch", type=int, default=4, help="sequences per step")
    parser.add_argument("--out", help="write TrainStepReport NDJSON here")
    parser.add_argument("--vocab", type=int, default=64)
    parser.add_argument("--d-model", type=int, default=16)
    parser.add_argument("--hidden", type=int, default=32)
    parser.add_argument("--seed", type=int, help="model init seed (default: spec seed)")
    args = parser.parse_args(argv)

    try:
        spec = specfile.load(args.spec)
        stream = shards.read_shard_dir(args.shards)
        table = train.LrTable.load(args.lr_csv)
    except (specfile.SpecError, shards.ShardError, train.LrTableError, OSError) as exc:
        print(exc, file=sys.stderr)
        return 2

    seed = args.seed if args.seed is not None else spec.seed
    toy = model_mod.ToyModel.create(
        spec,
        vocab=args.vocab,
        d_model=args.d_model,
        hidden=args.hidden,
        seed=seed,
    )
    counters = train.RunCounters()
    try:
        reports = list(
            train.run(toy, stream, spec, table, args.steps, args.batch, counters)
        )
    except (ValueError, model_mod.BatchError) as exc:
        print(exc, file=sys.stderr)
        return 2
    if args.out:
        train.write_reports(reports, args.out)
    for report in reports:
        print(report.to_json())
    if counters.zero_target_batches:
        print(
            f"warning: {counters.zero_target_batches} batches had zero loss targets",
            file=sys.stderr,
        )
    return 0


def entrypoint() -> None:
    sys.exit(main())
