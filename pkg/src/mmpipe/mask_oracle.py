"""Independent loss-mask oracle used by the test suite.

Recomputes a document's loss mask by a different route than the packer:
first annotate every layout position with a label describing what sits
there, then map labels to mask bits through a single target set. Shares no
code with the layout functions on purpose; agreement between the two is a
checked property, not a tautology.
"""

from __future__ import annotations

from .packer import (
    Document,
    ROLE_HUMAN,
    ROLE_MODEL,
    ROLE_SYSTEM,
    SOURCE_CAPTION,
    SOURCE_INSTRUCTION,
)

# Positions whose label is in this set are loss targets. The separator after
# an image is a target in caption documents (it leads straight into unmasked
# text) but prompt material in instruction documents.
_TARGET_LABELS = frozenset(
    {"caption_text", "caption_image_separator", "model_turn", "model_separator", "plain_text"}
)


def _labels(doc: Document) -> list[str]:
    out: list[str] = []
    if doc.source == SOURCE_CAPTION:
        out += ["image_patch"] * doc.image_patch_count
        out.append("caption_image_separator")
        out += ["caption_text"] * len(doc.segments[0][1])
        return out
    if doc.source == SOURCE_INSTRUCTION:
        if doc.has_image:
            out += ["image_patch"] * doc.image_patch_count
            out.append("instruction_image_separator")
        for role, tokens in doc.segments:
            if role == ROLE_SYSTEM:
                out += ["system_prompt"] * len(tokens)
            elif role == ROLE_HUMAN:
                out += ["human_turn"] * len(tokens)
                out.append("human_separator")
            elif role == ROLE_MODEL:
                out += ["model_turn"] * len(tokens)
                out.append("model_separator")
        return out
    for _, tokens in doc.segments:
        out += ["plain_text"] * len(tokens)
    return out


def derive_mask_oracle(doc: Document) -> tuple[int, ...]:
    """Loss-mask bits for the document's layout, derived from roles alone."""
    return tuple(1 if label in _TARGET_LABELS else 0 for label in _labels(doc))
