"""Declarative run specification: one object that pins down a whole run.

A RunSpec captures everything a training run needs to be reproduced exactly:
the model scale and its parent pre-training schedule, how far through
pre-training the checkpoint sits, the image/text token mix, fine-tuning
epochs, sequence geometry, reserved token ids, and the seed. Specs are
immutable after validation and safe to share across threads.

Run specs serialize to a YAML key/value tree with explicit units in key
names so experiment logs stay human-auditable. Files carry a
``spec_version`` integer (currently 1); unknown keys are rejected rather
than ignored so typos never silently change a run.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

import yaml

SPEC_VERSION = 1

REWARMUP_PEAK_LR_DEFAULT = 3e-3
TOKEN_MULTIPLIER_DEFAULT = 20.0
IMAGE_PATCH_COUNT_DEFAULT = 729
MM_SEQ_LEN_DEFAULT = 1024


@dataclass(frozen=True)
class ModelScale:
    """Architecture and parent pre-training hyperparameters for one scale."""

    param_count: int
    n_layers: int
    n_heads: int
    d_model: int
    d_head: int
    peak_lr: float
    final_lr: float
    warmup_steps: int
    batch_size: int
    pretrain_seq_len: int
    total_pretrain_tokens: int

    @property
    def warmup_tokens(self) -> int:
        return self.warmup_steps * self.batch_size * self.pretrain_seq_len


# The two scales used throughout: the 1.4B open-weights text model whose
# checkpoints the pipeline resumes, and the 79M search-scale model.
# The 79M run's final LR is unpublished; 3e-6 keeps the same peak:final
# ratio as the 1.4B schedule.
SCALE_1_4B = ModelScale(
    param_count=1_400_000_000,
    n_layers=24,
    n_heads=16,
    d_model=2048,
    d_head=128,
    peak_lr=1e-2,
    final_lr=1e-5,
    warmup_steps=5000,
    batch_size=256,
    pretrain_seq_len=2048,
    total_pretrain_tokens=4_300_000_000_000,
)

SCALE_79M = ModelScale(
    param_count=79_000_000,
    n_layers=8,
    n_heads=4,
    d_model=512,
    d_head=128,
    peak_lr=3e-3,
    final_lr=3e-6,
    warmup_steps=400,
    batch_size=512,
    pretrain_seq_len=2048,
    total_pretrain_tokens=237_000_000_000,
)


@dataclass(frozen=True)
class RunSpec:
    """Complete declarative description of one training run."""

    scale: ModelScale
    checkpoint_fraction: float
    token_multiplier: float = TOKEN_MULTIPLIER_DEFAULT
    image_ratio: float = 0.10
    instruction_fraction: float = 0.0
    ft_epochs: int = 4
    mm_seq_len: int = MM_SEQ_LEN_DEFAULT
    image_patch_count: int = IMAGE_PATCH_COUNT_DEFAULT
    separator_token_id: int = 65533
    pad_token_id: int = 65534
    image_placeholder_token_id: int = 65535
    seed: int = 7
    # Resume threshold: branch only continues the parent cosine if the
    # checkpoint LR is at least this. Default is 2x the parent's final LR.
    min_resume_lr: float = -1.0
    rewarmup_peak_lr: float = REWARMUP_PEAK_LR_DEFAULT
    freeze_encoder: bool = True

    def __post_init__(self) -> None:
        if self.min_resume_lr < 0:
            object.__setattr__(self, "min_resume_lr", 2.0 * self.scale.final_lr)

    @property
    def reserved_id_floor(self) -> int:
        """Lowest reserved token id; document token ids must stay below it."""
        return min(
            self.separator_token_id,
            self.pad_token_id,
            self.image_placeholder_token_id,
        )


@dataclass(frozen=True)
class Violation:
    name: str
    detail: str

    def __str__(self) -> str:
        return f"{self.name}: {self.detail}"


class ValidationError(ValueError):
    """Raised by validate(); carries every violated invariant, not just the first."""

    def __init__(self, violations: list[Violation]):
        self.violations = violations
        super().__init__(
            "invalid run spec:\n" + "\n".join(f"  - {v}" for v in violations)
        )


class SpecFormatError(ValueError):
    """Malformed spec document: unknown/missing keys, wrong version, bad types."""


def violations(spec: RunSpec) -> list[Violation]:
    """Check every invariant and return all violations (empty list = valid)."""
    out: list[Violation] = []
    sc = spec.scale

    def bad(name: str, detail: str) -> None:
        out.append(Violation(name, detail))

    if sc.param_count <= 0:
        bad("param count not positive", f"param_count={sc.param_count}")
    if not (0.0 < sc.final_lr < sc.peak_lr):
        bad(
            "lr endpoints out of order",
            f"need 0 < final_lr < peak_lr, got final={sc.final_lr} peak={sc.peak_lr}",
        )
    if sc.warmup_steps < 1:
        bad("warmup steps below one", f"warmup_steps={sc.warmup_steps}")
    if sc.batch_size < 1:
        bad("batch size below one", f"batch_size={sc.batch_size}")
    if sc.pretrain_seq_len < 1:
        bad("pretrain seq len below one", f"pretrain_seq_len={sc.pretrain_seq_len}")
    if (
        sc.warmup_steps >= 1
        and sc.batch_size >= 1
        and sc.pretrain_seq_len >= 1
        and sc.warmup_tokens >= sc.total_pretrain_tokens
    ):
        bad(
            "warmup exceeds pretrain budget",
            f"warmup_tokens={sc.warmup_tokens} >= total={sc.total_pretrain_tokens}",
        )

    if not (0.0 <= spec.checkpoint_fraction <= 1.0):
        bad("checkpoint fraction out of range", f"got {spec.checkpoint_fraction}")
    if spec.token_multiplier <= 0:
        bad("token multiplier not positive", f"got {spec.token_multiplier}")
    if not (0.0 <= spec.image_ratio <= 1.0):
        bad("image ratio out of range", f"got {spec.image_ratio}")
    if not (0.0 <= spec.instruction_fraction <= 1.0):
        bad("instruction fraction out of range", f"got {spec.instruction_fraction}")
    if spec.ft_epochs < 0:
        bad("negative ft epochs", f"got {spec.ft_epochs}")
    if spec.image_patch_count < 1:
        bad("image patch count below one", f"got {spec.image_patch_count}")
    if spec.mm_seq_len <= spec.image_patch_count + 1:
        bad(
            "image block cannot fit",
            f"mm_seq_len={spec.mm_seq_len} must exceed image block + separator "
            f"({spec.image_patch_count + 1})",
        )
    ids = (
        spec.separator_token_id,
        spec.pad_token_id,
        spec.image_placeholder_token_id,
    )
    if len(set(ids)) != 3:
        bad("token ids not distinct", f"separator/pad/placeholder = {ids}")
    if not (0 <= spec.seed < 2**64):
        bad("seed out of 64-bit range", f"got {spec.seed}")
    if spec.min_resume_lr <= 0:
        bad("min resume lr not positive", f"got {spec.min_resume_lr}")
    if spec.rewarmup_peak_lr <= 0:
        bad("rewarmup peak lr not positive", f"got {spec.rewarmup_peak_lr}")
    return out


def validate(spec: RunSpec) -> RunSpec:
    """Return the spec unchanged iff every invariant holds, else raise.

    Validation never stops at the first failure; the raised ValidationError
    lists every violated invariant by name.
    """
    problems = violations(spec)
    if problems:
        raise ValidationError(problems)
    return spec


# -- serialization ------------------------------------------------------------

_SCALE_FIELDS = tuple(f.name for f in fields(ModelScale))
_SPEC_FIELDS = tuple(f.name for f in fields(RunSpec) if f.name != "scale")
_INT_SPEC_FIELDS = {
    "ft_epochs",
    "mm_seq_len",
    "image_patch_count",
    "separator_token_id",
    "pad_token_id",
    "image_placeholder_token_id",
    "seed",
}


def to_mapping(spec: RunSpec) -> dict[str, Any]:
    doc: dict[str, Any] = {"spec_version": SPEC_VERSION}
    doc["scale"] = {name: getattr(spec.scale, name) for name in _SCALE_FIELDS}
    for name in _SPEC_FIELDS:
        doc[name] = getattr(spec, name)
    return doc


def _reject_unknown(given: dict[str, Any], allowed: tuple[str, ...], where: str) -> None:
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise SpecFormatError(f"unknown {where} fields: {', '.join(unknown)}")


def from_mapping(doc: dict[str, Any]) -> RunSpec:
    if not isinstance(doc, dict):
        raise SpecFormatError("spec document must be a mapping")
    version = doc.get("spec_version")
    if version != SPEC_VERSION:
        raise SpecFormatError(
            f"unsupported spec_version {version!r} (expected {SPEC_VERSION})"
        )
    _reject_unknown(doc, ("spec_version", "scale") + _SPEC_FIELDS, "spec")
    scale_doc = doc.get("scale")
    if not isinstance(scale_doc, dict):
        raise SpecFormatError("spec is missing the scale mapping")
    _reject_unknown(scale_doc, _SCALE_FIELDS, "scale")
    missing = sorted(set(_SCALE_FIELDS) - set(scale_doc))
    if missing:
        raise SpecFormatError(f"scale is missing fields: {', '.join(missing)}")
    if "checkpoint_fraction" not in doc:
        raise SpecFormatError("spec is missing checkpoint_fraction")

    try:
        scale = ModelScale(**{k: scale_doc[k] for k in _SCALE_FIELDS})
        kwargs = {k: doc[k] for k in _SPEC_FIELDS if k in doc}
        for key in _INT_SPEC_FIELDS & set(kwargs):
            if not isinstance(kwargs[key], int) or isinstance(kwargs[key], bool):
                raise SpecFormatError(f"field {key} must be an integer")
        return RunSpec(scale=scale, **kwargs)
    except TypeError as exc:
        raise SpecFormatError(str(exc)) from exc


def dumps(spec: RunSpec) -> str:
    return yaml.safe_dump(to_mapping(spec), sort_keys=False)


def loads(text: str) -> RunSpec:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SpecFormatError(f"unparseable spec document: {exc}") from exc
    return from_mapping(doc)


def save(spec: RunSpec, path: str | Path) -> None:
    Path(path).write_text(dumps(spec), encoding="utf-8")


def load(path: str | Path) -> RunSpec:
    return loads(Path(path).read_text(encoding="utf-8"))


# -- presets ------------------------------------------------------------------

# Each preset mirrors one experiment family: a fixed setup with a single
# swept variable. The instruction sweep's argument is the instruction share
# of *total* tokens (0 .. image_ratio), so instruction-sweep(0.10) sends the
# entire 10% image budget to instruction data.

PRESET_NAMES = (
    "text-fraction-sweep",
    "ratio-sweep-80",
    "ratio-sweep-scratch",
    "instruction-sweep",
    "epoch-sweep",
    "79m-chinchilla",
)


class UnknownPresetError(ValueError):
    pass


def preset(name: str, value: float | int | None = None) -> RunSpec:
    """Build the RunSpec for one named experiment setup.

    value is the swept variable: checkpoint fraction, image ratio,
    instruction share of total tokens, fine-tuning epochs, or Chinchilla
    multiple, depending on the preset.
    """
    if name not in PRESET_NAMES:
        raise UnknownPresetError(f"unknown preset {name!r}; known: {', '.join(PRESET_NAMES)}")
    if value is None:
        raise UnknownPresetError(f"preset {name!r} requires a value argument")

    if name == "text-fraction-sweep":
        return RunSpec(scale=SCALE_1_4B, checkpoint_fraction=float(value))
    if name == "ratio-sweep-80":
        return RunSpec(scale=SCALE_1_4B, checkpoint_fraction=0.8, image_ratio=float(value))
    if name == "ratio-sweep-scratch":
        return RunSpec(scale=SCALE_1_4B, checkpoint_fraction=0.0, image_ratio=float(value))
    if name == "instruction-sweep":
        share = float(value)
        if not 0.0 <= share <= 0.10:
            raise UnknownPresetError(
                f"instruction-sweep share must lie in [0, 0.10], got {share}"
            )
        return RunSpec(
            scale=SCALE_1_4B,
            checkpoint_fraction=0.8,
            image_ratio=0.10,
            instruction_fraction=share / 0.10,
        )
    if name == "epoch-sweep":
        return RunSpec(scale=SCALE_1_4B, checkpoint_fraction=0.8, ft_epochs=int(value))
    # 79m-chinchilla(c): search-scale model at c times the compute-optimal
    # token budget (multiplier 20c), resumed from the 60% checkpoint.
    mult = float(value)
    if mult <= 0:
        raise UnknownPresetError(f"chinchilla multiple must be positive, got {mult}")
    return RunSpec(
        scale=SCALE_79M,
        checkpoint_fraction=0.6,
        token_multiplier=20.0 * mult,
    )


_PRESET_CALL = re.compile(r"^\s*([a-z0-9-]+)\s*\(\s*([^)]+)\s*\)\s*$")


def parse_preset(text: str) -> RunSpec:
    """Parse 'name(value)' preset syntax, e.g. 'ratio-sweep-80(0.10)'."""
    m = _PRESET_CALL.match(text)
    if not m:
        raise UnknownPresetError(
            f"preset must look like name(value), got {text!r}"
        )
    name, raw = m.group(1), m.group(2)
    value: float | int
    if name == "epoch-sweep":
        value = int(raw)
    else:
        value = float(raw)
    return preset(name, value)


def replace(spec: RunSpec, **changes: Any) -> RunSpec:
    """Functional update helper; presets are immutable."""
    return dataclasses.replace(spec, **changes)
