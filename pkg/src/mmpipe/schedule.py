"""Pure learning-rate arithmetic.

Three schedule families, all parameterized in tokens rather than steps so
they stay unambiguous across stages with different sequence lengths
(step-based callers convert via batch_size * seq_len):

* WarmupCosine — the parent pre-training schedule: linear warmup to the
  peak, cosine decay to the final LR.
* BranchSchedule — what a run resumed mid-pre-training follows. If the
  parent LR at the resume point is still above the spec's threshold, the
  branch continues the cosine as a cooldown from that value; otherwise it
  falls back to a fresh linear warmup-cosine with its own peak.
* FtSchedule — per-epoch fine-tuning: linear warmup over a fixed ratio of
  total steps, cosine decay to zero. Each epoch count is its own schedule.

Every function here is pure; callers may evaluate them concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

from .runspec import RunSpec

FT_PEAK_LR_DEFAULT = 3e-4
FT_WARMUP_RATIO_DEFAULT = 0.05

CONTINUED = "continued-cooldown"
REWARMUP = "rewarmup"

BranchMode = Literal["continued-cooldown", "rewarmup"]


class ScheduleRangeError(ValueError):
    """Evaluation point outside the schedule's domain."""


@dataclass(frozen=True)
class WarmupCosine:
    peak_lr: float
    final_lr: float
    warmup_tokens: int
    total_tokens: int


@dataclass(frozen=True)
class BranchSchedule:
    """A schedule resumed from a parent WarmupCosine.

    continued-cooldown uses start_lr/end_lr; rewarmup uses
    peak_lr/end_lr/warmup_tokens. Unused fields are zero.
    """

    mode: BranchMode
    duration_tokens: int
    end_lr: float
    start_lr: float = 0.0
    peak_lr: float = 0.0
    warmup_tokens: int = 0


@dataclass(frozen=True)
class FtSchedule:
    peak_lr: float
    warmup_ratio: float
    steps_per_epoch: int
    epochs: int

    @property
    def total_steps(self) -> int:
        return self.steps_per_epoch * self.epochs


def parent_schedule(spec: RunSpec) -> WarmupCosine:
    """The text pre-training schedule implied by the spec's model scale."""
    sc = spec.scale
    return WarmupCosine(
        peak_lr=sc.peak_lr,
        final_lr=sc.final_lr,
        warmup_tokens=sc.warmup_tokens,
        total_tokens=sc.total_pretrain_tokens,
    )


def _cosine(start: float, end: float, progress: float) -> float:
    return end + 0.5 * (start - end) * (1.0 + math.cos(math.pi * progress))


def lr_at(sched: WarmupCosine, t: float) -> float:
    """Parent LR after t tokens: linear warmup, then cosine decay.

    Exact at the endpoints: 0 at t=0, peak at the end of warmup, final_lr
    at total_tokens.
    """
    if not 0 <= t <= sched.total_tokens:
        raise ScheduleRangeError(
            f"t={t} outside [0, {sched.total_tokens}]"
        )
    if t <= sched.warmup_tokens:
        return sched.peak_lr * t / sched.warmup_tokens
    progress = (t - sched.warmup_tokens) / (sched.total_tokens - sched.warmup_tokens)
    return _cosine(sched.peak_lr, sched.final_lr, progress)


def branch(
    parent: WarmupCosine,
    fraction: float,
    duration_tokens: int,
    spec: RunSpec,
) -> BranchSchedule:
    """Derive the schedule for a run resumed at fraction of the parent.

    Resuming strictly inside the parent schedule with an LR at or above
    spec.min_resume_lr continues the cosine as a cooldown from that value
    down to the parent's final LR. From-scratch (fraction 0), fully trained
    (fraction 1), or too-cold checkpoints re-warm to spec.rewarmup_peak_lr
    instead and cool to the same final LR.
    """
    if duration_tokens <= 0:
        raise ValueError(f"duration_tokens must be positive, got {duration_tokens}")
    resume_tokens = round(fraction * parent.total_tokens)
    resume_lr = lr_at(parent, resume_tokens)
    if 0.0 < fraction < 1.0 and resume_lr >= spec.min_resume_lr:
        return BranchSchedule(
            mode=CONTINUED,
            duration_tokens=duration_tokens,
            end_lr=parent.final_lr,
            start_lr=resume_lr,
        )
    # Rewarmup length: the parent's warmup fraction scaled to the branch,
    # floored at 100 steps' worth of tokens, capped so it stays inside the
    # branch.
    scaled = round(parent.warmup_tokens * duration_tokens / parent.total_tokens)
    floor = 100 * spec.scale.batch_size * spec.mm_seq_len
    warmup = min(max(scaled, floor), duration_tokens // 2)
    return BranchSchedule(
        mode=REWARMUP,
        duration_tokens=duration_tokens,
        end_lr=parent.final_lr,
        peak_lr=spec.rewarmup_peak_lr,
        warmup_tokens=max(warmup, 1),
    )


def branch_lr_at(b: BranchSchedule, t: float) -> float:
    """Branch LR after t tokens into the branch.

    Continued mode returns start_lr exactly at t=0 and end_lr exactly at
    t=duration_tokens.
    """
    if not 0 <= t <= b.duration_tokens:
        raise ScheduleRangeError(f"t={t} outside [0, {b.duration_tokens}]")
    if b.mode == CONTINUED:
        if t == 0:
            return b.start_lr
        if t == b.duration_tokens:
            return b.end_lr
        return _cosine(b.start_lr, b.end_lr, t / b.duration_tokens)
    if t <= b.warmup_tokens:
        return b.peak_lr * t / b.warmup_tokens
    if t == b.duration_tokens:
        return b.end_lr
    progress = (t - b.warmup_tokens) / (b.duration_tokens - b.warmup_tokens)
    return _cosine(b.peak_lr, b.end_lr, progress)


def ft_lr_at(f: FtSchedule, step: int) -> float:
    """Fine-tuning LR at an optimizer step: warmup then cosine decay to 0."""
    total = f.total_steps
    if not 0 <= step <= total:
        raise ScheduleRangeError(f"step={step} outside [0, {total}]")
    if total == 0:
        return 0.0
    warmup = math.ceil(f.warmup_ratio * total)
    if step <= warmup:
        return f.peak_lr * step / warmup if warmup else f.peak_lr
    if step == total:
        return 0.0
    progress = (step - warmup) / (total - warmup)
    return _cosine(f.peak_lr, 0.0, progress)
