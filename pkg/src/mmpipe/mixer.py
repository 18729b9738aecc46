"""Deterministic document interleaving.

Realizes a MixPlan's per-source token targets by greedy deficit scheduling
at document granularity: at each step the non-finished source with the
largest deficit (target share of tokens emitted so far minus tokens it has
actually emitted) goes next, ties broken text < caption < instruction. This
keeps every prefix of the output within one maximum document length of the
target shares, which random sampling cannot guarantee.

All randomness comes from SplitMix64 (see rng); a mix is byte-identical for
identical (streams, plan, seed) on every platform. Sources marked
repeatable are re-shuffled with seed + cycle_index and cycled, so a small
corpus can satisfy a large plan; each document appears exactly once per
cycle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

from .budget import MixPlan
from .packer import Document, SOURCES, layout_token_count
from .rng import derive_seed, permutation

_MASK64 = (1 << 64) - 1


class SourceExhaustedError(RuntimeError):
    """A source ran out of documents before meeting its target."""

    def __init__(self, source: str):
        self.source = source
        super().__init__(
            f"source {source!r} exhausted before its token target was met "
            "(mark it repeatable to cycle)"
        )


@dataclass
class SourceStream:
    """One corpus: an ordered document collection plus its shuffle seed."""

    source_id: str
    documents: Sequence[Document]
    permutation_seed: int
    repeatable: bool = False

    def __post_init__(self) -> None:
        if self.source_id not in SOURCES:
            raise ValueError(f"unknown source_id {self.source_id!r}")
        for doc in self.documents:
            if doc.source != self.source_id:
                raise ValueError(
                    f"doc {doc.doc_id} tagged {doc.source!r} inside "
                    f"{self.source_id!r} stream"
                )


def shuffle(stream: SourceStream) -> list[Document]:
    """Fisher-Yates permutation of the stream, driven by its seed."""
    order = permutation(len(stream.documents), stream.permutation_seed)
    return [stream.documents[i] for i in order]


@dataclass
class MixState:
    """Running counters of the greedy scheduler."""

    target_share: dict[str, float]
    emitted_tokens: dict[str, int] = field(
        default_factory=lambda: {s: 0 for s in SOURCES}
    )
    cursor: dict[str, int] = field(default_factory=lambda: {s: 0 for s in SOURCES})

    @property
    def total_emitted(self) -> int:
        return sum(self.emitted_tokens.values())

    def deficit(self, source: str) -> float:
        return (
            self.target_share[source] * self.total_emitted
            - self.emitted_tokens[source]
        )


def next_source(state: MixState, active: Sequence[str] | None = None) -> str:
    """The non-exhausted source with the largest deficit; fixed tie order."""
    candidates = list(active) if active is not None else list(SOURCES)
    if not candidates:
        raise SourceExhaustedError("<all>")
    best = candidates[0]
    for source in candidates[1:]:
        if state.deficit(source) > state.deficit(best):
            best = source
    return best


def mix(
    streams: Sequence[SourceStream],
    plan: MixPlan,
    seed: int,
) -> Iterator[Document]:
    """Interleave the three sources until every target is met.

    Each source emits documents until its token count first meets or
    exceeds its plan target, so realized totals overshoot by at most one
    document. Per-source shuffle seeds are the first SplitMix64 outputs of
    seed (in source order), so one seed pins down the whole stream.
    """
    by_source = {s.source_id: s for s in streams}
    missing = [s for s in SOURCES if s not in by_source]
    if missing:
        raise ValueError(f"missing streams for: {', '.join(missing)}")

    targets = {s: plan.target_tokens(s) for s in SOURCES}
    state = MixState(target_share={s: plan.target_share(s) for s in SOURCES})
    base_seed = {s: derive_seed(seed, i) for i, s in enumerate(SOURCES)}
    order: dict[str, list[Document]] = {}
    cycle = {s: 0 for s in SOURCES}

    def reshuffle(source: str) -> None:
        stream = by_source[source]
        eff = SourceStream(
            source_id=source,
            documents=stream.documents,
            permutation_seed=(base_seed[source] + cycle[source]) & _MASK64,
        )
        order[source] = shuffle(eff)
        state.cursor[source] = 0

    for s in SOURCES:
        reshuffle(s)

    active = [s for s in SOURCES if state.emitted_tokens[s] < targets[s]]
    emitted_at_cycle_start = dict(state.emitted_tokens)
    while active:
        source = next_source(state, active)
        docs = order[source]
        if state.cursor[source] >= len(docs):
            no_progress = state.emitted_tokens[source] == emitted_at_cycle_start[source]
            if not by_source[source].repeatable or not docs or no_progress:
                raise SourceExhaustedError(source)
            cycle[source] += 1
            emitted_at_cycle_start[source] = state.emitted_tokens[source]
            reshuffle(source)
            docs = order[source]
        doc = docs[state.cursor[source]]
        state.cursor[source] += 1
        state.emitted_tokens[source] += layout_token_count(doc)
        yield doc
        if state.emitted_tokens[source] >= targets[source]:
            active.remove(source)
