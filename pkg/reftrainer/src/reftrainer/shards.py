"""Independent `.mmshard` decoder.

Re-implemented from the documented byte layout (little-endian throughout):

    header: "MMSHARD1" | version u32 | seq_len u32 | count u64 | seed u64
    record: tokens seq_len x u32 | mask ceil(seq_len/8) bytes LSB-first |
            span count u16 | spans (start u32, len u32) |
            segment count u16 | segments (source u8, doc u64, start u32, len u32)

Decodes straight into numpy arrays since that is what the model consumes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"MMSHARD1"
VERSION = 1
_HEADER = struct.Struct("<8sIIQQ")


class ShardError(ValueError):
    pass


@dataclass(frozen=True)
class ShardSequence:
    tokens: np.ndarray  # (L,) uint32
    loss_mask: np.ndarray  # (L,) uint8 in {0, 1}
    image_spans: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class Shard:
    seq_len: int
    seed: int
    sequences: list[ShardSequence]


def read_shard(path: str | Path) -> Shard:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise ShardError(f"{path}: shorter than the header")
    magic, version, seq_len, count, seed = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise ShardError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ShardError(f"{path}: unsupported version {version}")
    mask_bytes = (seq_len + 7) // 8
    off = _HEADER.size
    sequences: list[ShardSequence] = []
    for index in range(count):
        end = off + 4 * seq_len
        if end > len(blob):
            raise ShardError(f"{path}: truncated in sequence {index}")
        tokens = np.frombuffer(blob, dtype="<u4", count=seq_len, offset=off)
        off = end
        if off + mask_bytes > len(blob):
            raise ShardError(f"{path}: truncated in sequence {index}")
        packed = np.frombuffer(blob, dtype=np.uint8, count=mask_bytes, offset=off)
        mask = np.unpackbits(packed, bitorder="little")[:seq_len]
        off += mask_bytes
        (n_spans,) = struct.unpack_from("<H", blob, off)
        off += 2
        spans = []
        for _ in range(n_spans):
            start, length = struct.unpack_from("<II", blob, off)
            spans.append((start, length))
            off += 8
        (n_segs,) = struct.unpack_from("<H", blob, off)
        off += 2
        off += n_segs * 17  # provenance is not needed for training
        if off > len(blob):
            raise ShardError(f"{path}: truncated in sequence {index}")
        sequences.append(
            ShardSequence(
                tokens=tokens.astype(np.int64),
                loss_mask=mask.astype(np.uint8),
                image_spans=tuple(spans),
            )
        )
    if off != len(blob):
        raise ShardError(f"{path}: {len(blob) - off} trailing bytes")
    return Shard(seq_len=seq_len, seed=seed, sequences=sequences)


def read_shard_dir(path: str | Path) -> Shard:
    """All `.mmshard` files in a directory, in name order, as one stream."""
    files = sorted(Path(path).glob("*.mmshard"))
    if not files:
        raise ShardError(f"no .mmshard files under {path}")
    shards = [read_shard(f) for f in files]
    seq_len = shards[0].seq_len
    for shard, f in zip(shards, files):
        if shard.seq_len != seq_len:
            raise ShardError(f"{f}: seq_len {shard.seq_len} != {seq_len}")
    sequences = [seq for shard in shards for seq in shard.sequences]
    return Shard(seq_len=seq_len, seed=shards[0].seed, sequences=sequences)
