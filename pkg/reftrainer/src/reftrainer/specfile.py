"""Run-spec file reader: just the fields the trainer consumes.

The pipeline owns the full spec schema; the trainer reads the shared file
format and picks out sequence geometry, reserved token ids, the freeze
flag, and the batch size. The spec_version gate matches the writer's.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import yaml

SPEC_VERSION = 1


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class TrainerSpec:
    mm_seq_len: int
    image_patch_count: int
    separator_token_id: int
    pad_token_id: int
    image_placeholder_token_id: int
    freeze_encoder: bool
    seed: int
    batch_size: int


def load(path: str | Path) -> TrainerSpec:
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise SpecError(f"{path}: spec must be a mapping")
    if doc.get("spec_version") != SPEC_VERSION:
        raise SpecError(
            f"{path}: unsupported spec_version {doc.get('spec_version')!r}"
        )
    try:
        return TrainerSpec(
            mm_seq_len=int(doc["mm_seq_len"]),
            image_patch_count=int(doc["image_patch_count"]),
            separator_token_id=int(doc["separator_token_id"]),
            pad_token_id=int(doc["pad_token_id"]),
            image_placeholder_token_id=int(doc["image_placeholder_token_id"]),
            freeze_encoder=bool(doc["freeze_encoder"]),
            seed=int(doc["seed"]),
            batch_size=int(doc["scale"]["batch_size"]),
        )
    except KeyError as exc:
        raise SpecError(f"{path}: missing spec field {exc}") from exc
