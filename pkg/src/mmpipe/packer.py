"""Document layout and fixed-length sequence packing.

Documents arrive pre-tokenized (this pipeline never tokenizes text or
decodes pixels). Three kinds flow through:

* text — one or more ``model`` segments of plain LM tokens; every position
  is a loss target; may split across sequence boundaries.
* caption — one image block followed by a separator and the caption text.
  The image block is a fixed run of placeholder ids that a trainer replaces
  with encoder outputs; placeholders are never loss targets. The separator
  and caption tokens are targets.
* instruction — optional image block (+ separator), optional system
  segment, then alternating human/model turns, each turn closed by a
  separator. Only model-response tokens and the separators that close them
  are targets; the image block, its separator, system prompt, human turns,
  and their separators are masked out.

Caption and instruction layouts are atomic: an image block never splits
across sequences. When an atomic layout does not fit in the room left, the
current sequence is padded out (pads masked) and the layout opens the next
one.

NDJSON input schema, one object per line, unknown keys rejected:

    {"source": "text|caption|instruction", "image_patches": int,
     "segments": [{"role": "system|human|model|caption", "tokens": [uint32...]}]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

from .runspec import RunSpec

SOURCE_TEXT = "text"
SOURCE_CAPTION = "caption"
SOURCE_INSTRUCTION = "instruction"
SOURCES = (SOURCE_TEXT, SOURCE_CAPTION, SOURCE_INSTRUCTION)

ROLE_SYSTEM = "system"
ROLE_HUMAN = "human"
ROLE_MODEL = "model"
ROLE_CAPTION = "caption"
ROLES = (ROLE_SYSTEM, ROLE_HUMAN, ROLE_MODEL, ROLE_CAPTION)


class DocumentError(ValueError):
    """A document violates the schema or a layout precondition."""


class EmptyCaptionError(DocumentError):
    """Caption document with no caption tokens; skipped, not fatal."""


@dataclass(frozen=True)
class Document:
    """One pre-tokenized training sample with role-tagged segments."""

    source: str
    has_image: bool
    segments: tuple[tuple[str, tuple[int, ...]], ...]
    image_patch_count: int = 0
    doc_id: int = 0


class SegmentRef(NamedTuple):
    """Provenance of a contiguous run of positions in a packed sequence."""

    source: str
    doc_id: int
    start: int
    length: int


@dataclass(frozen=True)
class PackedSequence:
    tokens: tuple[int, ...]
    loss_mask: tuple[int, ...]
    image_spans: tuple[tuple[int, int], ...]
    segments: tuple[SegmentRef, ...]


@dataclass(frozen=True)
class Layout:
    """A laid-out document: tokens, mask bits, image span offset if any."""

    tokens: tuple[int, ...]
    mask: tuple[int, ...]
    image_span: tuple[int, int] | None = None


@dataclass
class PackStats:
    """Skip and warning counters accumulated by pack()."""

    packed_docs: int = 0
    skipped_empty_caption: int = 0
    skipped_oversized: int = 0
    skipped_invalid: int = 0
    sequences: int = 0
    pad_tokens: int = 0


def validate_document(doc: Document, spec: RunSpec) -> None:
    """Raise DocumentError unless the document is well-formed for this spec."""
    if doc.source not in SOURCES:
        raise DocumentError(f"doc {doc.doc_id}: unknown source {doc.source!r}")
    if not doc.segments:
        raise DocumentError(f"doc {doc.doc_id}: no segments")
    for role, tokens in doc.segments:
        if role not in ROLES:
            raise DocumentError(f"doc {doc.doc_id}: unknown role {role!r}")
        for tok in tokens:
            if not 0 <= tok < spec.reserved_id_floor:
                raise DocumentError(
                    f"doc {doc.doc_id}: token id {tok} collides with the "
                    f"reserved range (>= {spec.reserved_id_floor})"
                )
    if doc.has_image and doc.image_patch_count != spec.image_patch_count:
        raise DocumentError(
            f"doc {doc.doc_id}: image_patches={doc.image_patch_count} does not "
            f"match the spec's {spec.image_patch_count}"
        )
    if not doc.has_image and doc.image_patch_count != 0:
        raise DocumentError(
            f"doc {doc.doc_id}: image_patches must be 0 without an image"
        )

    if doc.source == SOURCE_TEXT:
        if doc.has_image:
            raise DocumentError(f"doc {doc.doc_id}: text documents carry no image")
        if any(role != ROLE_MODEL for role, _ in doc.segments):
            raise DocumentError(
                f"doc {doc.doc_id}: text documents use only model segments"
            )
    elif doc.source == SOURCE_CAPTION:
        if not doc.has_image:
            raise DocumentError(f"doc {doc.doc_id}: caption documents carry an image")
        if len(doc.segments) != 1 or doc.segments[0][0] != ROLE_CAPTION:
            raise DocumentError(
                f"doc {doc.doc_id}: caption documents have exactly one caption segment"
            )
    else:
        _check_turn_roles(doc)


def _check_turn_roles(doc: Document) -> None:
    roles = [role for role, _ in doc.segments]
    if ROLE_CAPTION in roles:
        raise DocumentError(
            f"doc {doc.doc_id}: instruction documents have no caption segment"
        )
    turns = roles[1:] if roles and roles[0] == ROLE_SYSTEM else roles
    if not turns:
        raise DocumentError(f"doc {doc.doc_id}: instruction document has no turns")
    expected = ROLE_HUMAN
    for role in turns:
        if role == ROLE_SYSTEM:
            raise DocumentError(
                f"doc {doc.doc_id}: system segment only allowed first"
            )
        if role != expected:
            raise DocumentError(
                f"doc {doc.doc_id}: malformed role alternation "
                f"(expected {expected}, got {role})"
            )
        expected = ROLE_MODEL if expected == ROLE_HUMAN else ROLE_HUMAN


def lay_out_caption(doc: Document, spec: RunSpec) -> Layout:
    """Image block, separator, caption text; loss on separator and text."""
    validate_document(doc, spec)
    if doc.source != SOURCE_CAPTION:
        raise DocumentError(f"doc {doc.doc_id}: not a caption document")
    caption = doc.segments[0][1]
    if not caption:
        raise EmptyCaptionError(f"doc {doc.doc_id}: empty caption")
    n = doc.image_patch_count
    tokens = (spec.image_placeholder_token_id,) * n + (spec.separator_token_id,) + tuple(caption)
    mask = (0,) * n + (1,) + (1,) * len(caption)
    return Layout(tokens=tokens, mask=mask, image_span=(0, n))


def lay_out_instruction(doc: Document, spec: RunSpec) -> Layout:
    """Optional image block, system prompt, then separator-closed turns.

    Targets are the model-response tokens and the separator closing each
    model response; everything else (image block and its separator, system
    prompt, human turns and their separators) is masked out.
    """
    validate_document(doc, spec)
    if doc.source != SOURCE_INSTRUCTION:
        raise DocumentError(f"doc {doc.doc_id}: not an instruction document")
    tokens: list[int] = []
    mask: list[int] = []
    span: tuple[int, int] | None = None
    if doc.has_image:
        n = doc.image_patch_count
        tokens += [spec.image_placeholder_token_id] * n + [spec.separator_token_id]
        mask += [0] * (n + 1)
        span = (0, n)
    for role, seg in doc.segments:
        if role == ROLE_SYSTEM:
            tokens += list(seg)
            mask += [0] * len(seg)
            continue
        bit = 1 if role == ROLE_MODEL else 0
        tokens += list(seg) + [spec.separator_token_id]
        mask += [bit] * (len(seg) + 1)
    return Layout(tokens=tuple(tokens), mask=tuple(mask), image_span=span)


def _lay_out_text(doc: Document, spec: RunSpec) -> Layout:
    validate_document(doc, spec)
    tokens = tuple(tok for _, seg in doc.segments for tok in seg)
    return Layout(tokens=tokens, mask=(1,) * len(tokens))


def lay_out(doc: Document, spec: RunSpec) -> Layout:
    if doc.source == SOURCE_CAPTION:
        return lay_out_caption(doc, spec)
    if doc.source == SOURCE_INSTRUCTION:
        return lay_out_instruction(doc, spec)
    return _lay_out_text(doc, spec)


def layout_token_count(doc: Document) -> int:
    """Layout length without building it; the mixer weighs documents by this.

    Counts image placeholders and separators, matching how the budget's
    image share is defined.
    """
    body = sum(len(seg) for _, seg in doc.segments)
    if doc.source == SOURCE_CAPTION:
        return doc.image_patch_count + 1 + body
    if doc.source == SOURCE_INSTRUCTION:
        turns = sum(1 for role, _ in doc.segments if role != ROLE_SYSTEM)
        image = doc.image_patch_count + 1 if doc.has_image else 0
        return image + body + turns
    return body


class _SequenceBuffer:
    def __init__(self, spec: RunSpec) -> None:
        self.spec = spec
        self.reset()

    def reset(self) -> None:
        self.tokens: list[int] = []
        self.mask: list[int] = []
        self.spans: list[tuple[int, int]] = []
        self.segments: list[SegmentRef] = []

    @property
    def fill(self) -> int:
        return len(self.tokens)

    @property
    def room(self) -> int:
        return self.spec.mm_seq_len - len(self.tokens)

    def place(self, doc: Document, tokens, mask, span=None) -> None:
        start = len(self.tokens)
        self.tokens += tokens
        self.mask += mask
        if span is not None:
            self.spans.append((start + span[0], span[1]))
        self.segments.append(SegmentRef(doc.source, doc.doc_id, start, len(tokens)))

    def flush(self, stats: PackStats) -> PackedSequence:
        pad = self.spec.mm_seq_len - len(self.tokens)
        stats.pad_tokens += pad
        stats.sequences += 1
        seq = PackedSequence(
            tokens=tuple(self.tokens) + (self.spec.pad_token_id,) * pad,
            loss_mask=tuple(self.mask) + (0,) * pad,
            image_spans=tuple(self.spans),
            segments=tuple(self.segments),
        )
        self.reset()
        return seq


def pack(
    docs: Iterable[Document],
    spec: RunSpec,
    stats: PackStats | None = None,
) -> Iterator[PackedSequence]:
    """Greedily fill fixed-length sequences from a document stream.

    Deterministic: an identical input stream yields an identical sequence
    stream. Oversized atomic layouts and empty captions are skipped and
    counted in stats, never silently dropped.
    """
    if stats is None:
        stats = PackStats()
    buf = _SequenceBuffer(spec)
    seq_len = spec.mm_seq_len
    for doc in docs:
        try:
            layout = lay_out(doc, spec)
        except EmptyCaptionError:
            stats.skipped_empty_caption += 1
            continue
        except DocumentError:
            stats.skipped_invalid += 1
            continue
        if doc.source == SOURCE_TEXT:
            # Text splits freely across sequence boundaries.
            off = 0
            n = len(layout.tokens)
            while off < n:
                take = min(buf.room, n - off)
                buf.place(doc, layout.tokens[off : off + take], layout.mask[off : off + take])
                off += take
                if buf.room == 0:
                    yield buf.flush(stats)
            stats.packed_docs += 1
            continue
        # Atomic layouts: never split an image block (or a conversation).
        if len(layout.tokens) > seq_len:
            stats.skipped_oversized += 1
            continue
        if len(layout.tokens) > buf.room:
            yield buf.flush(stats)
        buf.place(doc, layout.tokens, layout.mask, layout.image_span)
        stats.packed_docs += 1
        if buf.room == 0:
            yield buf.flush(stats)
    if buf.fill:
        yield buf.flush(stats)


# -- NDJSON document IO --------------------------------------------------------

_DOC_KEYS = {"source", "image_patches", "segments"}
_SEG_KEYS = {"role", "tokens"}


def document_from_obj(obj: dict, doc_id: int) -> Document:
    """Decode one NDJSON object; exact schema, unknown keys rejected."""
    if not isinstance(obj, dict):
        raise DocumentError(f"doc {doc_id}: expected an object")
    unknown = sorted(set(obj) - _DOC_KEYS)
    if unknown:
        raise DocumentError(f"doc {doc_id}: unknown keys {', '.join(unknown)}")
    missing = sorted(_DOC_KEYS - set(obj))
    if missing:
        raise DocumentError(f"doc {doc_id}: missing keys {', '.join(missing)}")
    source = obj["source"]
    patches = obj["image_patches"]
    if not isinstance(patches, int) or isinstance(patches, bool) or patches < 0:
        raise DocumentError(f"doc {doc_id}: image_patches must be a nonnegative int")
    raw_segments = obj["segments"]
    if not isinstance(raw_segments, list):
        raise DocumentError(f"doc {doc_id}: segments must be a list")
    segments = []
    for seg in raw_segments:
        if not isinstance(seg, dict):
            raise DocumentError(f"doc {doc_id}: segment must be an object")
        seg_unknown = sorted(set(seg) - _SEG_KEYS)
        if seg_unknown:
            raise DocumentError(
                f"doc {doc_id}: unknown segment keys {', '.join(seg_unknown)}"
            )
        if set(seg) != _SEG_KEYS:
            raise DocumentError(f"doc {doc_id}: segment needs role and tokens")
        tokens = seg["tokens"]
        if not isinstance(tokens, list) or any(
            not isinstance(t, int) or isinstance(t, bool) or not 0 <= t < 2**32
            for t in tokens
        ):
            raise DocumentError(f"doc {doc_id}: tokens must be uint32 values")
        segments.append((seg["role"], tuple(tokens)))
    return Document(
        source=source,
        has_image=patches > 0,
        segments=tuple(segments),
        image_patch_count=patches,
        doc_id=doc_id,
    )


def document_to_obj(doc: Document) -> dict:
    return {
        "source": doc.source,
        "image_patches": doc.image_patch_count,
        "segments": [
            {"role": role, "tokens": list(tokens)} for role, tokens in doc.segments
        ],
    }


@dataclass
class LoadStats:
    loaded: int = 0
    skipped_invalid: int = 0
    messages: list[str] = field(default_factory=list)


def read_documents(
    path: str | Path,
    spec: RunSpec,
    stats: LoadStats | None = None,
) -> list[Document]:
    """Load and validate an NDJSON corpus; invalid documents are skipped
    and counted, schema-level garbage (unparseable JSON) is fatal."""
    if stats is None:
        stats = LoadStats()
    docs: list[Document] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DocumentError(f"{path}:{lineno + 1}: unparseable JSON: {exc}")
            try:
                doc = document_from_obj(obj, doc_id=lineno)
                validate_document(doc, spec)
                if doc.source == SOURCE_CAPTION and not doc.segments[0][1]:
                    raise EmptyCaptionError(f"doc {lineno}: empty caption")
            except DocumentError as exc:
                stats.skipped_invalid += 1
                stats.messages.append(str(exc))
                continue
            docs.append(doc)
            stats.loaded += 1
    return docs


def write_documents(docs: Iterable[Document], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(document_to_obj(doc), separators=(",", ":")) + "\n")
