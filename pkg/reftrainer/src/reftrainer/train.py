"""Training loop: consume shards, apply the dumped LR schedule, report.

The learning rate never comes from an in-process schedule: it is read from
the pipeline's lr-dump CSV and linearly interpolated, which is exact at the
dumped sample points. The LR applied at a step is the schedule value at the
cumulative token count reached by the end of that step, so dumping the
schedule at one row per step makes the comparison exact.

Each step emits a TrainStepReport; the stream serializes as NDJSON.
"""

from __future__ import annotations

import json
from bisect import bisect_left
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from .model import Batch, ToyModel, make_batch
from .shards import Shard
from .specfile import TrainerSpec


class LrTableError(ValueError):
    pass


@dataclass(frozen=True)
class LrTable:
    tokens: tuple[float, ...]
    lrs: tuple[float, ...]

    @classmethod
    def load(cls, path: str | Path) -> "LrTable":
        lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
        if not lines or lines[0] != "tokens,lr":
            raise LrTableError(f"{path}: expected a 'tokens,lr' header")
        tokens: list[float] = []
        lrs: list[float] = []
        for line in lines[1:]:
            t_str, lr_str = line.split(",")
            tokens.append(float(t_str))
            lrs.append(float(lr_str))
        if len(tokens) < 2 or sorted(tokens) != tokens:
            raise LrTableError(f"{path}: need at least two rows in token order")
        return cls(tokens=tuple(tokens), lrs=tuple(lrs))

    def lr_at(self, t: float) -> float:
        """Linear interpolation; exact at the dumped sample points."""
        if not self.tokens[0] <= t <= self.tokens[-1]:
            raise LrTableError(
                f"token count {t} outside the dumped range "
                f"[{self.tokens[0]}, {self.tokens[-1]}]"
            )
        i = bisect_left(self.tokens, t)
        if self.tokens[i] == t:
            return self.lrs[i]
        lo, hi = i - 1, i
        w = (t - self.tokens[lo]) / (self.tokens[hi] - self.tokens[lo])
        return self.lrs[lo] + w * (self.lrs[hi] - self.lrs[lo])


@dataclass(frozen=True)
class TrainStepReport:
    step: int
    tokens_consumed: int
    lr: float
    loss: float
    target_positions: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "step": self.step,
                "tokens_consumed": self.tokens_consumed,
                "lr": self.lr,
                "loss": self.loss,
                "target_positions": self.target_positions,
            },
            sort_keys=True,
        )


@dataclass
class RunCounters:
    zero_target_batches: int = 0


def batches(shard: Shard, spec: TrainerSpec, batch_size: int, vocab: int, steps: int) -> Iterator[Batch]:
    """Fixed-size batches in shard order, cycling when the data runs out."""
    n = len(shard.sequences)
    if n == 0:
        raise ValueError("shard stream holds no sequences")
    cursor = 0
    for _ in range(steps):
        rows = [shard.sequences[(cursor + j) % n] for j in range(batch_size)]
        cursor = (cursor + batch_size) % n
        yield make_batch(rows, spec, vocab)


def run(
    model: ToyModel,
    shard: Shard,
    spec: TrainerSpec,
    lr_table: LrTable,
    steps: int,
    batch_size: int,
    counters: RunCounters | None = None,
) -> Iterator[TrainStepReport]:
    """Train for a fixed number of steps, yielding one report per step."""
    if shard.seq_len != spec.mm_seq_len:
        raise ValueError(
            f"shard seq_len {shard.seq_len} does not match spec mm_seq_len "
            f"{spec.mm_seq_len}"
        )
    if counters is None:
        counters = RunCounters()
    tokens_per_step = batch_size * spec.mm_seq_len
    consumed = 0
    for step, batch in enumerate(
        batches(shard, spec, batch_size, model.vocab, steps)
    ):
        consumed += tokens_per_step
        lr = lr_table.lr_at(consumed)
        loss, n_targets, grads = model.loss_and_grads(batch)
        if n_targets == 0:
            counters.zero_target_batches += 1
        model.sgd_step(grads, lr)
        yield TrainStepReport(
            step=step,
            tokens_consumed=consumed,
            lr=lr,
            loss=loss,
            target_positions=n_targets,
        )


def write_reports(reports, path: str | Path) -> list[TrainStepReport]:
    out = list(reports)
    with open(path, "w", encoding="utf-8") as fh:
        for report in out:
            fh.write(report.to_json() + "\n")
    return out
