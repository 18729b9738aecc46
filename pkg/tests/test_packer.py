import pytest

from mmpipe.mask_oracle import derive_mask_oracle
from mmpipe.packer import (
    Document,
    DocumentError,
    EmptyCaptionError,
    LoadStats,
    PackStats,
    document_from_obj,
    document_to_obj,
    lay_out,
    lay_out_caption,
    lay_out_instruction,
    layout_token_count,
    pack,
    read_documents,
    validate_document,
    write_documents,
)

from conftest import caption_doc, fuzz_documents, instruction_doc, text_doc


def test_caption_layout_counts(paper_spec):
    doc = caption_doc(10, patch=729)
    layout = lay_out_caption(doc, paper_spec)
    assert len(layout.tokens) == 740
    assert layout.mask.count(0) == 729
    assert sum(layout.mask) == 11  # separator + 10 caption tokens
    assert layout.image_span == (0, 729)
    assert layout.tokens[729] == paper_spec.separator_token_id
    assert all(t == paper_spec.image_placeholder_token_id for t in layout.tokens[:729])


def test_caption_layout_minimal(paper_spec):
    layout = lay_out_caption(caption_doc(1, patch=729), paper_spec)
    assert len(layout.tokens) == 731
    assert sum(layout.mask) == 2


def test_caption_empty_is_skippable_error(paper_spec):
    with pytest.raises(EmptyCaptionError):
        lay_out_caption(caption_doc(0, patch=729), paper_spec)
    stats = PackStats()
    out = list(pack([caption_doc(0, patch=729)], paper_spec, stats))
    assert out == []
    assert stats.skipped_empty_caption == 1


def test_instruction_layout_with_system_and_image(paper_spec):
    doc = instruction_doc([7, 4], system=5, patch=729)
    layout = lay_out_instruction(doc, paper_spec)
    # 729 image + 1 sep + 5 system + (7 human + 1 sep) + (4 model + 1 sep)
    assert len(layout.tokens) == 748
    assert sum(layout.mask) == 5  # 4 response tokens + trailing separator
    # The five targets are exactly the model turn and its separator.
    assert layout.mask[-5:] == (1, 1, 1, 1, 1)
    assert all(bit == 0 for bit in layout.mask[:-5])


def test_instruction_layout_no_system_no_image(paper_spec):
    doc = instruction_doc([3, 6], has_image=False)
    layout = lay_out_instruction(doc, paper_spec)
    assert len(layout.tokens) == 11  # 3 + sep + 6 + sep
    assert sum(layout.mask) == 7  # 6 response tokens + separator
    assert layout.mask[:4] == (0, 0, 0, 0)
    assert layout.image_span is None


def test_instruction_separator_placement(paper_spec):
    doc = instruction_doc([2, 3, 1, 2], has_image=False)
    layout = lay_out_instruction(doc, paper_spec)
    sep = paper_spec.separator_token_id
    sep_positions = [i for i, t in enumerate(layout.tokens) if t == sep]
    # One separator at the end of every turn: after 2, 2+1+3, ...
    assert sep_positions == [2, 6, 8, 11]
    # Separators after human turns masked, after model turns targets.
    assert [layout.mask[i] for i in sep_positions] == [0, 1, 0, 1]


def test_instruction_role_alternation_enforced(paper_spec):
    doc = Document(
        source="instruction",
        has_image=False,
        segments=(("human", (1, 2)), ("human", (3,))),
    )
    with pytest.raises(DocumentError, match="role alternation"):
        lay_out_instruction(doc, paper_spec)


def test_instruction_system_only_first(paper_spec):
    doc = Document(
        source="instruction",
        has_image=False,
        segments=(("human", (1,)), ("system", (2,))),
    )
    with pytest.raises(DocumentError):
        validate_document(doc, paper_spec)


def test_text_documents_use_model_segments_only(paper_spec):
    doc = Document(source="text", has_image=False, segments=(("human", (1,)),))
    with pytest.raises(DocumentError, match="model segments"):
        validate_document(doc, paper_spec)


def test_reserved_ids_rejected_in_document_tokens(desk_spec):
    doc = text_doc(1, token=desk_spec.pad_token_id)
    with pytest.raises(DocumentError, match="reserved"):
        validate_document(doc, desk_spec)


def test_patch_count_must_match_spec(paper_spec):
    doc = caption_doc(5, patch=100)
    with pytest.raises(DocumentError, match="image_patches"):
        validate_document(doc, paper_spec)


def test_layout_token_count_matches_layouts(desk_spec):
    for doc in fuzz_documents(500, seed=11):
        assert layout_token_count(doc) == len(lay_out(doc, desk_spec).tokens)


def test_pack_two_captions_pad_then_new_sequence(paper_spec):
    docs = [caption_doc(10, doc_id=1, patch=729), caption_doc(10, doc_id=2, patch=729)]
    out = list(pack(docs, paper_spec))
    assert len(out) == 2
    first, second = out
    assert len(first.tokens) == 1024
    assert first.tokens[740:] == (paper_spec.pad_token_id,) * 284
    assert first.loss_mask[740:] == (0,) * 284
    assert first.image_spans == ((0, 729),)
    assert second.image_spans == ((0, 729),)
    assert second.segments[0].doc_id == 2


def test_pack_splits_text_across_sequences(paper_spec):
    stats = PackStats()
    out = list(pack([text_doc(3000)], paper_spec, stats))
    assert len(out) == 3
    assert sum(1 for s in out if all(t != paper_spec.pad_token_id for t in s.tokens)) == 2
    assert stats.pad_tokens == 3 * 1024 - 3000
    # Provenance covers the split pieces.
    assert [seg.length for seq in out for seg in seq.segments] == [1024, 1024, 952]


def test_pack_exact_fill_no_pads(paper_spec):
    stats = PackStats()
    out = list(pack([text_doc(1024), text_doc(1024, doc_id=1)], paper_spec, stats))
    assert len(out) == 2
    assert stats.pad_tokens == 0


def test_pack_oversized_image_layout_skipped(desk_spec):
    # Desk geometry: seq len 64, so an instruction layout > 64 cannot fit.
    big = instruction_doc([30, 30], patch=8)  # 8+1+30+1+30+1 = 71 > 64
    stats = PackStats()
    out = list(pack([big], desk_spec, stats))
    assert out == []
    assert stats.skipped_oversized == 1


def test_pack_atomicity_of_image_blocks(desk_spec):
    docs = fuzz_documents(2000, seed=23)
    for seq in pack(docs, desk_spec):
        for start, length in seq.image_spans:
            assert length == desk_spec.image_patch_count
            assert start + length <= desk_spec.mm_seq_len


def test_pack_no_loss_targets_on_image_or_pad(desk_spec):
    docs = fuzz_documents(2000, seed=29)
    for seq in pack(docs, desk_spec):
        for start, length in seq.image_spans:
            assert not any(seq.loss_mask[start : start + length])
        for pos, tok in enumerate(seq.tokens):
            if tok == desk_spec.pad_token_id:
                assert seq.loss_mask[pos] == 0


def test_pack_token_conservation(desk_spec):
    docs = fuzz_documents(3000, seed=31)
    stats = PackStats()
    sequences = list(pack(docs, desk_spec, stats))
    packed_layout_total = sum(
        layout_token_count(d)
        for d in docs
        if layout_token_count(d) <= desk_spec.mm_seq_len or d.source == "text"
    )
    nonpad = sum(
        1 for seq in sequences for t in seq.tokens if t != desk_spec.pad_token_id
    )
    # Non-pad positions == sum of layout lengths of every packed document.
    assert nonpad == packed_layout_total
    assert nonpad + stats.pad_tokens == len(sequences) * desk_spec.mm_seq_len


def test_pack_deterministic(desk_spec):
    docs = fuzz_documents(1000, seed=37)
    assert list(pack(docs, desk_spec)) == list(pack(docs, desk_spec))


def test_pack_provenance_lengths_cover_nonpad(desk_spec):
    docs = fuzz_documents(1000, seed=41)
    for seq in pack(docs, desk_spec):
        covered = sum(seg.length for seg in seq.segments)
        nonpad = sum(1 for t in seq.tokens if t != desk_spec.pad_token_id)
        assert covered == nonpad
        # Segments are disjoint and in order.
        cursor = 0
        for seg in seq.segments:
            assert seg.start == cursor
            cursor += seg.length


def test_mask_oracle_agrees_on_handmade_docs(paper_spec):
    for doc in [
        caption_doc(10, patch=729),
        instruction_doc([7, 4], system=5, patch=729),
        instruction_doc([3, 6], has_image=False),
    ]:
        assert derive_mask_oracle(doc) == lay_out(doc, paper_spec).mask


def test_mask_oracle_agrees_on_fuzzed_corpus(desk_spec):
    for doc in fuzz_documents(10_000, seed=43):
        assert derive_mask_oracle(doc) == lay_out(doc, desk_spec).mask


def test_mask_oracle_all_model_turns(paper_spec):
    doc = instruction_doc([1, 5], has_image=False)
    mask = derive_mask_oracle(doc)
    # Single human token + separator masked; everything after is a target.
    assert mask == (0, 0, 1, 1, 1, 1, 1, 1)


def test_ndjson_round_trip(tmp_path, desk_spec):
    docs = fuzz_documents(200, seed=47)
    path = tmp_path / "docs.ndjson"
    write_documents(docs, path)
    loaded = read_documents(path, desk_spec)
    assert [document_to_obj(d) for d in loaded] == [document_to_obj(d) for d in docs]


def test_ndjson_unknown_keys_rejected():
    with pytest.raises(DocumentError, match="unknown keys"):
        document_from_obj(
            {"source": "text", "image_patches": 0, "segments": [], "extra": 1},
            doc_id=0,
        )


def test_ndjson_unknown_segment_keys_rejected():
    with pytest.raises(DocumentError, match="unknown segment keys"):
        document_from_obj(
            {
                "source": "text",
                "image_patches": 0,
                "segments": [{"role": "model", "tokens": [1], "lang": "en"}],
            },
            doc_id=0,
        )


def test_ndjson_invalid_docs_skipped_and_counted(tmp_path, desk_spec):
    good = text_doc(4)
    bad = {"source": "caption", "image_patches": 0, "segments": [{"role": "caption", "tokens": [1]}]}
    path = tmp_path / "docs.ndjson"
    import json

    with open(path, "w") as fh:
        fh.write(json.dumps(document_to_obj(good)) + "\n")
        fh.write(json.dumps(bad) + "\n")
    stats = LoadStats()
    loaded = read_documents(path, desk_spec, stats)
    assert len(loaded) == 1
    assert stats.skipped_invalid == 1
