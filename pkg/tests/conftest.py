"""Shared builders: a desk-scale spec and deterministic document factories."""

import dataclasses

import pytest

from mmpipe.packer import Document
from mmpipe.rng import SplitMix64
from mmpipe.runspec import SCALE_1_4B, RunSpec

# Desk-scale geometry: tiny image blocks so corpora stay small and fast.
DESK_PATCH = 8
DESK_SEQ_LEN = 64


@pytest.fixture
def desk_spec():
    return RunSpec(
        scale=SCALE_1_4B,
        checkpoint_fraction=0.8,
        mm_seq_len=DESK_SEQ_LEN,
        image_patch_count=DESK_PATCH,
        separator_token_id=1021,
        pad_token_id=1022,
        image_placeholder_token_id=1023,
        seed=7,
    )


@pytest.fixture
def paper_spec():
    """Full-scale geometry: 729-token image blocks in 1024-token sequences."""
    return RunSpec(scale=SCALE_1_4B, checkpoint_fraction=0.8)


def text_doc(n_tokens, doc_id=0, token=5):
    return Document(
        source="text",
        has_image=False,
        segments=(("model", (token,) * n_tokens),),
        doc_id=doc_id,
    )


def caption_doc(n_caption, doc_id=0, patch=DESK_PATCH, token=6):
    return Document(
        source="caption",
        has_image=True,
        segments=(("caption", (token,) * n_caption),),
        image_patch_count=patch,
        doc_id=doc_id,
    )


def instruction_doc(turn_lens, doc_id=0, patch=DESK_PATCH, system=0, has_image=True, token=7):
    segments = []
    if system:
        segments.append(("system", (token,) * system))
    role = "human"
    for n in turn_lens:
        segments.append((role, (token,) * n))
        role = "model" if role == "human" else "human"
    return Document(
        source="instruction",
        has_image=has_image,
        segments=tuple(segments),
        image_patch_count=patch if has_image else 0,
        doc_id=doc_id,
    )


def fuzz_documents(count, seed, patch=DESK_PATCH, max_tokens=40):
    """Deterministic stream of random well-formed documents of all kinds."""
    rng = SplitMix64(seed)
    docs = []
    for doc_id in range(count):
        kind = rng.bounded(3)
        if kind == 0:
            docs.append(text_doc(1 + rng.bounded(max_tokens), doc_id=doc_id, token=rng.bounded(1000)))
        elif kind == 1:
            docs.append(
                caption_doc(1 + rng.bounded(max_tokens), doc_id=doc_id, patch=patch, token=rng.bounded(1000))
            )
        else:
            turns = []
            for _ in range(1 + rng.bounded(3)):
                turns.append(1 + rng.bounded(max_tokens))  # human
                turns.append(1 + rng.bounded(max_tokens))  # model
            docs.append(
                instruction_doc(
                    turns,
                    doc_id=doc_id,
                    patch=patch,
                    system=rng.bounded(6),
                    has_image=rng.bounded(2) == 1,
                    token=rng.bounded(1000),
                )
            )
    return docs


def with_patch(spec: RunSpec, patch: int) -> RunSpec:
    return dataclasses.replace(spec, image_patch_count=patch)
