"""Token and step accounting.

Converts the declarative knobs of a RunSpec into exact integer budgets:
resume position in the parent schedule, multimodal-stage token budget from
the Chinchilla-style multiplier, per-source token targets for the mix, and
fine-tuning step counts. All arithmetic is integer-exact; rounding
remainders land in the text component, the dominant source in every
supported setting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .runspec import RunSpec

FT_DATASET_EXAMPLES_DEFAULT = 665_000


@dataclass(frozen=True)
class MixPlan:
    """Per-source token targets; components always sum exactly to total."""

    total_tokens: int
    text_tokens: int
    caption_tokens: int
    instruction_tokens: int

    def target_share(self, source: str) -> float:
        if self.total_tokens == 0:
            return 0.0
        per = {
            "text": self.text_tokens,
            "caption": self.caption_tokens,
            "instruction": self.instruction_tokens,
        }
        return per[source] / self.total_tokens

    def target_tokens(self, source: str) -> int:
        return {
            "text": self.text_tokens,
            "caption": self.caption_tokens,
            "instruction": self.instruction_tokens,
        }[source]


@dataclass(frozen=True)
class StagePlan:
    """Durations of the three run phases in tokens and optimizer steps."""

    pretrain_resume_tokens: int
    mm_tokens: int
    mm_steps: int
    ft_steps_per_epoch: int
    ft_total_steps: int


def chinchilla_tokens(param_count: int, multiplier: float) -> int:
    """Training-token budget: multiplier times the parameter count."""
    if param_count <= 0 or multiplier <= 0:
        raise ValueError("param_count and multiplier must be positive")
    return round(param_count * multiplier)


def checkpoint_tokens(fraction: float, total_pretrain_tokens: int) -> int:
    """Tokens seen by the checkpoint taken at fraction of pre-training."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    return round(fraction * total_pretrain_tokens)


def mix_plan(total: int, image_ratio: float, instruction_fraction: float) -> MixPlan:
    """Split a token budget into text/caption/instruction targets.

    image_ratio is the share of the budget drawn from image-bearing sources;
    instruction_fraction is the share of that image budget drawn from
    instruction data. Image-side token counts include the image-placeholder
    and separator positions, not just the caption text.
    """
    if not 0.0 <= image_ratio <= 1.0:
        raise ValueError(f"image_ratio must lie in [0, 1], got {image_ratio}")
    if not 0.0 <= instruction_fraction <= 1.0:
        raise ValueError(
            f"instruction_fraction must lie in [0, 1], got {instruction_fraction}"
        )
    if total < 0:
        raise ValueError(f"total must be nonnegative, got {total}")
    image_tokens = round(total * image_ratio)
    instruction = round(image_tokens * instruction_fraction)
    caption = image_tokens - instruction
    text = total - image_tokens
    return MixPlan(
        total_tokens=total,
        text_tokens=text,
        caption_tokens=caption,
        instruction_tokens=instruction,
    )


def spec_mix_plan(spec: RunSpec, total: int | None = None) -> MixPlan:
    """MixPlan for a spec; total defaults to the spec's multimodal budget."""
    if total is None:
        total = chinchilla_tokens(spec.scale.param_count, spec.token_multiplier)
    return mix_plan(total, spec.image_ratio, spec.instruction_fraction)


def stage_plan(spec: RunSpec, ft_examples: int = FT_DATASET_EXAMPLES_DEFAULT) -> StagePlan:
    """Phase durations for one run."""
    sc = spec.scale
    mm_tokens = chinchilla_tokens(sc.param_count, spec.token_multiplier)
    per_epoch = math.ceil(ft_examples / sc.batch_size)
    return StagePlan(
        pretrain_resume_tokens=checkpoint_tokens(
            spec.checkpoint_fraction, sc.total_pretrain_tokens
        ),
        mm_tokens=mm_tokens,
        mm_steps=math.ceil(mm_tokens / (sc.batch_size * spec.mm_seq_len)),
        ft_steps_per_epoch=per_epoch,
        ft_total_steps=spec.ft_epochs * per_epoch,
    )
