"""Reference trainer for mmpipe shards.

A deliberately tiny autoregressive model plus a training loop whose only
job is to certify, numerically, the contracts a real trainer would rely
on: loss-mask semantics (image patches, pads, and prompt material never
contribute to the loss), frozen-encoder updates (bit-identical parameters),
and learning-rate consumption (per-step LR matches the pipeline's dumped
schedule exactly).

The trainer talks to the pipeline through files only: `.mmshard` shards,
`lr-dump` CSV, and the run-spec YAML. It deliberately re-implements the
shard decoder from the documented byte layout, so a shard written by one
component and read by the other exercises the format end to end.
"""

__version__ = "0.1.0"
