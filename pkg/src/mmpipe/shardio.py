"""Bit-exact binary shard format plus manifest sidecars.

Shards are exchange artifacts, so the layout is little-endian by mandate,
never host-endian. One shard file is:

    header:   magic "MMSHARD1" (8 bytes)
              version   u32 LE (currently 1)
              seq_len   u32 LE
              count     u64 LE (number of sequences)
              seed      u64 LE
    records:  per sequence, in order:
              tokens        seq_len x u32 LE
              loss mask     ceil(seq_len / 8) bytes, LSB-first
                            (bit i of byte b covers position 8*b + i)
              span count    u16 LE
              spans         (start u32 LE, length u32 LE) each
              segment count u16 LE
              segments      (source u8, doc_id u64 LE, start u32 LE,
                             length u32 LE) each

Each shard gets a JSON-lines manifest sidecar (`<name>.manifest.json`)
recording sequence and token counts per source, pad/loss-target/span
totals, and a SHA-256 of the whole shard file, so downstream consumers can
audit realized mix ratios and detect corruption without trusting the
producer.
"""

from __future__ import annotations

import hashlib
import json
import struct
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from array import array

from .budget import MixPlan
from .packer import PackedSequence, SegmentRef, SOURCES

MAGIC = b"MMSHARD1"
VERSION = 1
_HEADER = struct.Struct("<8sIIQQ")
HEADER_SIZE = _HEADER.size  # 32 bytes
_U16 = struct.Struct("<H")
_SPAN = struct.Struct("<II")
_SEGMENT = struct.Struct("<BQII")

SHARD_SUFFIX = ".mmshard"
MANIFEST_SUFFIX = ".manifest.json"

_SOURCE_CODE = {name: i for i, name in enumerate(SOURCES)}
_SOURCE_NAME = {i: name for name, i in _SOURCE_CODE.items()}


class ShardFormatError(ValueError):
    pass


class BadMagicError(ShardFormatError):
    pass


class VersionMismatchError(ShardFormatError):
    pass


class TruncatedShardError(ShardFormatError):
    def __init__(self, sequence_index: int, detail: str):
        self.sequence_index = sequence_index
        super().__init__(f"shard truncated in sequence {sequence_index}: {detail}")


class ChecksumMismatchError(ShardFormatError):
    pass


@dataclass(frozen=True)
class ShardManifest:
    shard: str
    sequence_count: int
    seq_len: int
    seed: int
    tokens_per_source: dict[str, int]
    pad_tokens: int
    loss_targets: int
    image_spans: int
    max_layout_tokens: int
    sha256: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "shard": self.shard,
                "sequence_count": self.sequence_count,
                "seq_len": self.seq_len,
                "seed": self.seed,
                "tokens_per_source": self.tokens_per_source,
                "pad_tokens": self.pad_tokens,
                "loss_targets": self.loss_targets,
                "image_spans": self.image_spans,
                "max_layout_tokens": self.max_layout_tokens,
                "sha256": self.sha256,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "ShardManifest":
        obj = json.loads(line)
        return cls(**obj)

    def check_consistent(self) -> None:
        """Per-source tokens must cover exactly the non-pad positions."""
        covered = sum(self.tokens_per_source.values())
        expected = self.sequence_count * self.seq_len - self.pad_tokens
        if covered != expected:
            raise ShardFormatError(
                f"manifest inconsistent: sources cover {covered} tokens, "
                f"non-pad positions are {expected}"
            )


def _pack_mask(mask: Sequence[int]) -> bytes:
    out = bytearray((len(mask) + 7) // 8)
    for pos, bit in enumerate(mask):
        if bit:
            out[pos >> 3] |= 1 << (pos & 7)
    return bytes(out)


def _unpack_mask(raw: bytes, seq_len: int) -> tuple[int, ...]:
    return tuple((raw[pos >> 3] >> (pos & 7)) & 1 for pos in range(seq_len))


def _tokens_bytes(tokens: Sequence[int]) -> bytes:
    arr = array("I", tokens)
    if arr.itemsize != 4:  # pragma: no cover - no mainstream platform hits this
        return b"".join(struct.pack("<I", t) for t in tokens)
    if sys.byteorder == "big":  # pragma: no cover
        arr.byteswap()
    return arr.tobytes()


def _tokens_from_bytes(raw: bytes) -> tuple[int, ...]:
    arr = array("I")
    arr.frombytes(raw)
    if sys.byteorder == "big":  # pragma: no cover
        arr.byteswap()
    return tuple(arr)


def encode_sequence(seq: PackedSequence) -> bytes:
    parts = [
        _tokens_bytes(seq.tokens),
        _pack_mask(seq.loss_mask),
        _U16.pack(len(seq.image_spans)),
    ]
    parts += [_SPAN.pack(start, length) for start, length in seq.image_spans]
    parts.append(_U16.pack(len(seq.segments)))
    parts += [
        _SEGMENT.pack(_SOURCE_CODE[s.source], s.doc_id, s.start, s.length)
        for s in seq.segments
    ]
    return b"".join(parts)


def write_shard(
    sequences: Iterable[PackedSequence],
    path: str | Path,
    *,
    seed: int = 0,
) -> ShardManifest:
    """Write sequences to path and its manifest sidecar; returns the manifest."""
    path = Path(path)
    seqs = list(sequences)
    seq_len = None
    for seq in seqs:
        if seq_len is None:
            seq_len = len(seq.tokens)
        elif len(seq.tokens) != seq_len:
            raise ShardFormatError(
                f"mixed sequence lengths: {seq_len} then {len(seq.tokens)}"
            )
    if seq_len is None:
        seq_len = 0

    per_source = {s: 0 for s in SOURCES}
    pad_tokens = 0
    loss_targets = 0
    span_count = 0
    max_layout = 0
    body = bytearray()
    for seq in seqs:
        covered = 0
        for seg in seq.segments:
            per_source[seg.source] += seg.length
            covered += seg.length
            max_layout = max(max_layout, seg.length)
        pad_tokens += seq_len - covered
        loss_targets += sum(seq.loss_mask)
        span_count += len(seq.image_spans)
        body += encode_sequence(seq)

    blob = _HEADER.pack(MAGIC, VERSION, seq_len, len(seqs), seed) + bytes(body)
    path.write_bytes(blob)
    manifest = ShardManifest(
        shard=path.name,
        sequence_count=len(seqs),
        seq_len=seq_len,
        seed=seed,
        tokens_per_source=per_source,
        pad_tokens=pad_tokens,
        loss_targets=loss_targets,
        image_spans=span_count,
        max_layout_tokens=max_layout,
        sha256=hashlib.sha256(blob).hexdigest(),
    )
    manifest_path(path).write_text(manifest.to_json() + "\n", encoding="utf-8")
    return manifest


def manifest_path(shard_path: str | Path) -> Path:
    shard_path = Path(shard_path)
    name = shard_path.name
    if name.endswith(SHARD_SUFFIX):
        name = name[: -len(SHARD_SUFFIX)]
    return shard_path.with_name(name + MANIFEST_SUFFIX)


def read_manifest(path: str | Path) -> ShardManifest:
    text = Path(path).read_text(encoding="utf-8").strip()
    if not text:
        raise ShardFormatError(f"empty manifest: {path}")
    return ShardManifest.from_json(text.splitlines()[0])


def read_shard(
    path: str | Path,
    *,
    expected_sha256: str | None = None,
) -> tuple[int, int, list[PackedSequence]]:
    """Decode a shard; returns (seq_len, seed, sequences).

    The inverse of write_shard: read(write(x)) == x field for field. With
    expected_sha256 supplied, any corruption raises ChecksumMismatchError.
    """
    blob = Path(path).read_bytes()
    if expected_sha256 is not None:
        digest = hashlib.sha256(blob).hexdigest()
        if digest != expected_sha256:
            raise ChecksumMismatchError(
                f"{path}: sha256 {digest} != manifest {expected_sha256}"
            )
    if len(blob) < HEADER_SIZE:
        raise TruncatedShardError(0, "file shorter than header")
    magic, version, seq_len, count, seed = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatchError(f"{path}: version {version}, expected {VERSION}")

    mask_bytes = (seq_len + 7) // 8
    off = HEADER_SIZE
    sequences: list[PackedSequence] = []

    def need(n: int, index: int, what: str) -> None:
        if off + n > len(blob):
            raise TruncatedShardError(index, f"{what} needs {n} bytes")

    for index in range(count):
        need(4 * seq_len, index, "token block")
        tokens = _tokens_from_bytes(blob[off : off + 4 * seq_len])
        off += 4 * seq_len
        need(mask_bytes, index, "loss mask")
        mask = _unpack_mask(blob[off : off + mask_bytes], seq_len)
        off += mask_bytes
        need(_U16.size, index, "span count")
        (n_spans,) = _U16.unpack_from(blob, off)
        off += _U16.size
        need(n_spans * _SPAN.size, index, "image spans")
        spans = tuple(
            _SPAN.unpack_from(blob, off + i * _SPAN.size) for i in range(n_spans)
        )
        off += n_spans * _SPAN.size
        need(_U16.size, index, "segment count")
        (n_segs,) = _U16.unpack_from(blob, off)
        off += _U16.size
        need(n_segs * _SEGMENT.size, index, "segments")
        segments = []
        for i in range(n_segs):
            code, doc_id, start, length = _SEGMENT.unpack_from(
                blob, off + i * _SEGMENT.size
            )
            if code not in _SOURCE_NAME:
                raise ShardFormatError(f"{path}: unknown source code {code}")
            segments.append(SegmentRef(_SOURCE_NAME[code], doc_id, start, length))
        off += n_segs * _SEGMENT.size
        sequences.append(
            PackedSequence(
                tokens=tokens,
                loss_mask=mask,
                image_spans=spans,
                segments=tuple(segments),
            )
        )
    if off != len(blob):
        raise ShardFormatError(f"{path}: {len(blob) - off} trailing bytes")
    return seq_len, seed, sequences


def verify_shard(path: str | Path) -> ShardManifest:
    """Re-derive the manifest from the shard and check it against the sidecar."""
    manifest = read_manifest(manifest_path(path))
    seq_len, seed, sequences = read_shard(path, expected_sha256=manifest.sha256)
    recomputed = write_counts(sequences, seq_len)
    for key, value in recomputed.items():
        if getattr(manifest, key) != value:
            raise ShardFormatError(
                f"{path}: manifest {key}={getattr(manifest, key)} but shard has {value}"
            )
    manifest.check_consistent()
    return manifest


def write_counts(sequences: Sequence[PackedSequence], seq_len: int) -> dict:
    per_source = {s: 0 for s in SOURCES}
    pad = 0
    targets = 0
    spans = 0
    for seq in sequences:
        covered = sum(seg.length for seg in seq.segments)
        for seg in seq.segments:
            per_source[seg.source] += seg.length
        pad += seq_len - covered
        targets += sum(seq.loss_mask)
        spans += len(seq.image_spans)
    return {
        "tokens_per_source": per_source,
        "pad_tokens": pad,
        "loss_targets": targets,
        "image_spans": spans,
        "sequence_count": len(sequences),
    }


@dataclass(frozen=True)
class AuditReport:
    total_nonpad_tokens: int
    realized_share: dict[str, float]
    target_share: dict[str, float] | None
    max_deviation: float | None
    tolerance: float | None
    ok: bool

    def lines(self) -> list[str]:
        out = [f"non-pad tokens: {self.total_nonpad_tokens}"]
        for s in SOURCES:
            line = f"{s}: realized {self.realized_share[s]:.6f}"
            if self.target_share is not None:
                line += f" target {self.target_share[s]:.6f}"
            out.append(line)
        if self.max_deviation is not None:
            out.append(
                f"max deviation {self.max_deviation:.6f}"
                f" (tolerance {self.tolerance:.6f})"
            )
        out.append("audit: " + ("ok" if self.ok else "FAILED"))
        return out


def audit(
    manifests: Sequence[ShardManifest],
    plan: MixPlan | None = None,
    tolerance: float | None = None,
) -> AuditReport:
    """Aggregate manifests into realized shares and compare against a plan.

    Default tolerance is the scheduling bound: the largest single layout
    seen, relative to the total. With no plan, only shares are reported.
    """
    if not manifests:
        raise ValueError("audit requires at least one manifest")
    for m in manifests:
        m.check_consistent()
    totals = {s: 0 for s in SOURCES}
    max_layout = 0
    for m in manifests:
        for s in SOURCES:
            totals[s] += m.tokens_per_source.get(s, 0)
        max_layout = max(max_layout, m.max_layout_tokens)
    grand = sum(totals.values())
    realized = {s: (totals[s] / grand if grand else 0.0) for s in SOURCES}
    if plan is None:
        return AuditReport(grand, realized, None, None, None, True)
    target = {s: plan.target_share(s) for s in SOURCES}
    deviation = max(abs(realized[s] - target[s]) for s in SOURCES)
    if tolerance is None:
        tolerance = max_layout / grand if grand else 0.0
    return AuditReport(
        total_nonpad_tokens=grand,
        realized_share=realized,
        target_share=target,
        max_deviation=deviation,
        tolerance=tolerance,
        ok=deviation <= tolerance,
    )
