import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmpipe.budget import (
    MixPlan,
    checkpoint_tokens,
    chinchilla_tokens,
    mix_plan,
    spec_mix_plan,
    stage_plan,
)
from mmpipe.runspec import SCALE_1_4B, RunSpec, preset


def test_chinchilla_budget_for_1_4b():
    assert chinchilla_tokens(1_400_000_000, 20) == 28_000_000_000


def test_chinchilla_budget_for_79m_at_4x():
    assert chinchilla_tokens(79_000_000, 80) == 6_320_000_000


def test_chinchilla_identity():
    assert chinchilla_tokens(1, 1) == 1


def test_chinchilla_rejects_nonpositive():
    with pytest.raises(ValueError):
        chinchilla_tokens(0, 20)
    with pytest.raises(ValueError):
        chinchilla_tokens(1_000_000, 0)


@pytest.mark.parametrize(
    "fraction,expected",
    [
        (0.2, 860_000_000_000),
        (0.4, 1_720_000_000_000),
        (0.6, 2_580_000_000_000),
        (0.8, 3_440_000_000_000),
        (0.0, 0),
        (1.0, 4_300_000_000_000),
    ],
)
def test_checkpoint_tokens_exact(fraction, expected):
    assert checkpoint_tokens(fraction, 4_300_000_000_000) == expected


def test_checkpoint_tokens_rejects_bad_fraction():
    with pytest.raises(ValueError):
        checkpoint_tokens(1.5, 100)


@settings(max_examples=200, deadline=None)
@given(
    a=st.floats(min_value=0, max_value=1),
    b=st.floats(min_value=0, max_value=1),
    total=st.integers(min_value=1, max_value=10**13),
)
def test_checkpoint_tokens_monotone(a, b, total):
    lo, hi = sorted((a, b))
    assert checkpoint_tokens(lo, total) <= checkpoint_tokens(hi, total)


def test_mix_plan_ratio_10_no_instruction():
    plan = mix_plan(28_000_000_000, 0.10, 0.0)
    assert plan.text_tokens == 25_200_000_000
    assert plan.caption_tokens == 2_800_000_000
    assert plan.instruction_tokens == 0


def test_mix_plan_pure_instruction_image_budget():
    plan = mix_plan(28_000_000_000, 0.10, 1.0)
    assert plan.caption_tokens == 0
    assert plan.instruction_tokens == 2_800_000_000


def test_mix_plan_all_text():
    plan = mix_plan(12345, 0.0, 0.7)
    assert plan.text_tokens == 12345
    assert plan.caption_tokens == 0
    assert plan.instruction_tokens == 0


@settings(max_examples=500, deadline=None)
@given(
    total=st.integers(min_value=0, max_value=10**12),
    ratio=st.floats(min_value=0, max_value=1),
    instr=st.floats(min_value=0, max_value=1),
)
def test_mix_plan_components_sum_exactly(total, ratio, instr):
    plan = mix_plan(total, ratio, instr)
    assert plan.text_tokens + plan.caption_tokens + plan.instruction_tokens == total
    assert plan.text_tokens >= 0
    assert plan.caption_tokens >= 0
    assert plan.instruction_tokens >= 0


@settings(max_examples=300, deadline=None)
@given(
    total=st.integers(min_value=1, max_value=10**12),
    ratio=st.floats(min_value=0, max_value=1),
)
def test_mix_plan_caption_share_close_to_ratio(total, ratio):
    plan = mix_plan(total, ratio, 0.0)
    assert ratio - 1 / total <= plan.caption_tokens / total <= ratio + 1 / total


def test_target_share_sums_to_one():
    plan = mix_plan(1000, 0.3, 0.5)
    shares = [plan.target_share(s) for s in ("text", "caption", "instruction")]
    assert sum(shares) == pytest.approx(1.0)


def test_stage_plan_ft_steps():
    spec = RunSpec(scale=SCALE_1_4B, checkpoint_fraction=0.8)
    plan = stage_plan(spec, ft_examples=665_000)
    assert plan.ft_steps_per_epoch == 2598  # ceil(665000 / 256)
    assert plan.ft_total_steps == 10_392


def test_stage_plan_zero_epochs():
    spec = RunSpec(scale=SCALE_1_4B, checkpoint_fraction=0.8, ft_epochs=0)
    assert stage_plan(spec).ft_total_steps == 0


def test_stage_plan_resume_and_mm_tokens():
    spec = preset("ratio-sweep-80", 0.10)
    plan = stage_plan(spec)
    assert plan.pretrain_resume_tokens == 3_440_000_000_000
    assert plan.mm_tokens == 28_000_000_000
    # ceil(28e9 / (256 * 1024))
    assert plan.mm_steps == 106_812


def test_spec_mix_plan_uses_chinchilla_budget():
    spec = preset("ratio-sweep-80", 0.10)
    plan = spec_mix_plan(spec)
    assert plan == MixPlan(
        total_tokens=28_000_000_000,
        text_tokens=25_200_000_000,
        caption_tokens=2_800_000_000,
        instruction_tokens=0,
    )
