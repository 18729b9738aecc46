"""Fixtures: real pipeline artifacts for the trainer to consume.

The pipeline (mmpipe) is driven through its public CLI to produce the three
file interfaces the trainer understands: a run-spec YAML, a directory of
`.mmshard` files, and an lr-dump CSV whose rows land exactly on the
trainer's step boundaries.
"""

import contextlib
import io

import pytest

from reftrainer import shards, specfile

TOY_VOCAB = 64
SEQ_LEN = 64
PATCH = 8
BATCH = 4
STEPS = 100
TOKENS_PER_STEP = BATCH * SEQ_LEN


def _build_corpora(root):
    from mmpipe.packer import Document, write_documents
    from mmpipe.rng import SplitMix64

    rng = SplitMix64(4242)

    def tok():
        return rng.bounded(60)  # ids stay below the separator (61)

    texts = [
        Document(
            source="text",
            has_image=False,
            segments=(("model", tuple(tok() for _ in range(5 + rng.bounded(40)))),),
            doc_id=i,
        )
        for i in range(400)
    ]
    captions = [
        Document(
            source="caption",
            has_image=True,
            image_patch_count=PATCH,
            segments=(("caption", tuple(tok() for _ in range(1 + rng.bounded(30)))),),
            doc_id=i,
        )
        for i in range(300)
    ]
    instructions = [
        Document(
            source="instruction",
            has_image=True,
            image_patch_count=PATCH,
            segments=(
                ("human", tuple(tok() for _ in range(1 + rng.bounded(8)))),
                ("model", tuple(tok() for _ in range(1 + rng.bounded(8)))),
            ),
            doc_id=i,
        )
        for i in range(200)
    ]
    paths = {}
    for name, docs in (("text", texts), ("captions", captions), ("instructions", instructions)):
        paths[name] = root / f"{name}.ndjson"
        write_documents(docs, paths[name])
    return paths


@pytest.fixture(scope="session")
def pipeline_files(tmp_path_factory):
    from mmpipe import runspec
    from mmpipe.cli import main as mmpipe_main
    from mmpipe.runspec import SCALE_1_4B, RunSpec

    root = tmp_path_factory.mktemp("pipeline")
    spec = RunSpec(
        scale=SCALE_1_4B,
        checkpoint_fraction=0.8,
        image_ratio=0.2,
        instruction_fraction=0.25,
        mm_seq_len=SEQ_LEN,
        image_patch_count=PATCH,
        separator_token_id=61,
        pad_token_id=62,
        image_placeholder_token_id=63,
        seed=7,
    )
    spec_path = root / "spec.yaml"
    runspec.save(spec, spec_path)

    corpora = _build_corpora(root)
    shard_dir = root / "shards"
    code = mmpipe_main(
        [
            "pack",
            "--spec",
            str(spec_path),
            "--text",
            str(corpora["text"]),
            "--captions",
            str(corpora["captions"]),
            "--instructions",
            str(corpora["instructions"]),
            "--total-tokens",
            "60000",
            "--out",
            str(shard_dir),
        ]
    )
    assert code == 0

    # One CSV row per step boundary: span = steps x batch x seq_len.
    span = STEPS * TOKENS_PER_STEP
    buffer = io.StringIO()
    with contextlib.redirect_stdout(buffer):
        code = mmpipe_main(
            [
                "lr-dump",
                "--spec",
                str(spec_path),
                "--samples",
                str(STEPS + 1),
                "--span",
                str(span),
            ]
        )
    assert code == 0
    csv_path = root / "branch_lr.csv"
    csv_path.write_text(buffer.getvalue(), encoding="utf-8")
    return {"spec": spec_path, "shards": shard_dir, "lr_csv": csv_path}


@pytest.fixture(scope="session")
def trainer_spec(pipeline_files):
    return specfile.load(pipeline_files["spec"])


@pytest.fixture(scope="session")
def shard_stream(pipeline_files):
    return shards.read_shard_dir(pipeline_files["shards"])
