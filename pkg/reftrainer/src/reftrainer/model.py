"""Toy autoregressive model with hand-written backprop (numpy, float64).

Architecture: token embedding, a stand-in "encoder" (one learned vector per
image-patch position, substituted at placeholder positions), learned
positional embedding, a single-head causal attention + tanh-MLP block, and
an output projection. A learned start vector shifts the inputs right, so
the logits at position i are conditioned on positions < i and every
loss-mask position is a predictable target.

The encoder table carries the frozen flag: when frozen, optimizer steps
never touch it (its gradient is still defined; it is simply not applied).

Everything runs in float64 and the backward pass is written out manually,
so central-difference gradient checks are meaningful rather than circular.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .shards import ShardSequence
from .specfile import TrainerSpec

PARAM_NAMES = ("E", "enc", "pos", "bos", "Wq", "Wk", "Wv", "Wo", "W1", "W2", "Wout")


class BatchError(ValueError):
    pass


@dataclass
class Batch:
    tokens: np.ndarray  # (B, L) int64
    loss_mask: np.ndarray  # (B, L) uint8
    patch_mask: np.ndarray  # (B, L) bool
    patch_offset: np.ndarray  # (B, L) int64, position within the image block

    @property
    def target_positions(self) -> int:
        return int(self.loss_mask.sum())

    @property
    def token_count(self) -> int:
        return int(self.tokens.size)


def make_batch(sequences: Sequence[ShardSequence], spec: TrainerSpec, vocab: int) -> Batch:
    """Assemble shard sequences into one batch, validating id ranges."""
    if not sequences:
        raise BatchError("empty batch")
    seq_len = len(sequences[0].tokens)
    if seq_len != spec.mm_seq_len:
        raise BatchError(
            f"shard seq_len {seq_len} does not match spec mm_seq_len {spec.mm_seq_len}"
        )
    tokens = np.stack([s.tokens for s in sequences])
    mask = np.stack([s.loss_mask for s in sequences])
    patch = np.zeros_like(tokens, dtype=bool)
    offset = np.zeros_like(tokens)
    for row, seq in enumerate(sequences):
        for start, length in seq.image_spans:
            if length > spec.image_patch_count:
                raise BatchError(
                    f"span length {length} exceeds encoder table {spec.image_patch_count}"
                )
            patch[row, start : start + length] = True
            offset[row, start : start + length] = np.arange(length)
            if not (tokens[row, start : start + length] == spec.image_placeholder_token_id).all():
                raise BatchError("image span does not hold placeholder ids")
    if (tokens[~patch] >= vocab).any():
        raise BatchError(f"token ids outside the toy vocabulary ({vocab})")
    if (mask[patch] != 0).any():
        raise BatchError("loss mask set inside an image span")
    return Batch(tokens=tokens, loss_mask=mask, patch_mask=patch, patch_offset=offset)


@dataclass
class ToyModel:
    vocab: int
    d_model: int
    hidden: int
    patch_count: int
    seq_len: int
    frozen: frozenset = field(default_factory=frozenset)
    params: dict = field(default_factory=dict)

    @classmethod
    def create(
        cls,
        spec: TrainerSpec,
        vocab: int = 64,
        d_model: int = 16,
        hidden: int = 32,
        seed: int = 0,
    ) -> "ToyModel":
        rng = np.random.default_rng(seed)
        d = d_model

        def w(*shape):
            return rng.normal(0.0, 0.5 / np.sqrt(d), size=shape)

        params = {
            "E": w(vocab, d),
            "enc": w(spec.image_patch_count, d),
            "pos": w(spec.mm_seq_len, d),
            "bos": w(d),
            "Wq": w(d, d),
            "Wk": w(d, d),
            "Wv": w(d, d),
            "Wo": w(d, d),
            "W1": w(d, hidden),
            "W2": w(hidden, d),
            "Wout": w(d, vocab),
        }
        frozen = frozenset({"enc"}) if spec.freeze_encoder else frozenset()
        return cls(
            vocab=vocab,
            d_model=d,
            hidden=hidden,
            patch_count=spec.image_patch_count,
            seq_len=spec.mm_seq_len,
            frozen=frozen,
            params=params,
        )

    def zero_output(self) -> None:
        """Force uniform logits (cross-entropy becomes exactly ln(vocab))."""
        self.params["Wout"][:] = 0.0

    # -- forward / backward ----------------------------------------------

    def _embed(self, batch: Batch) -> np.ndarray:
        p = self.params
        # Placeholder ids can sit outside the toy vocabulary; gather through
        # a safe id and overwrite those positions from the encoder table.
        safe = np.where(batch.patch_mask, 0, batch.tokens)
        inp = p["E"][safe]
        inp[batch.patch_mask] = p["enc"][batch.patch_offset[batch.patch_mask]]
        return inp

    def forward(self, batch: Batch) -> dict:
        p = self.params
        B, L = batch.tokens.shape
        d = self.d_model
        inp = self._embed(batch)
        shifted = np.empty_like(inp)
        shifted[:, 0, :] = p["bos"]
        shifted[:, 1:, :] = inp[:, :-1, :]
        h = shifted + p["pos"][None, :L, :]

        q = h @ p["Wq"]
        k = h @ p["Wk"]
        v = h @ p["Wv"]
        scores = q @ k.transpose(0, 2, 1) / np.sqrt(d)
        causal = np.triu(np.ones((L, L), dtype=bool), k=1)
        scores = np.where(causal[None, :, :], -1e30, scores)
        scores -= scores.max(axis=-1, keepdims=True)
        exps = np.exp(scores)
        attn = exps / exps.sum(axis=-1, keepdims=True)
        ctx = attn @ v
        h2 = h + ctx @ p["Wo"]

        act = h2 @ p["W1"]
        tanh = np.tanh(act)
        h3 = h2 + tanh @ p["W2"]
        logits = h3 @ p["Wout"]
        return {
            "inp": inp,
            "h": h,
            "q": q,
            "k": k,
            "v": v,
            "attn": attn,
            "ctx": ctx,
            "h2": h2,
            "tanh": tanh,
            "h3": h3,
            "logits": logits,
        }

    def masked_loss(self, batch: Batch) -> tuple[float, int]:
        """Mean next-token cross-entropy over loss-mask positions only.

        A batch with zero target positions has loss 0 by definition.
        """
        loss, n_targets, _, _ = self._loss_with_cache(batch)
        return loss, n_targets

    def _loss_with_cache(self, batch: Batch):
        cache = self.forward(batch)
        logits = cache["logits"]
        shiftmax = logits - logits.max(axis=-1, keepdims=True)
        logsumexp = np.log(np.exp(shiftmax).sum(axis=-1, keepdims=True))
        logprobs = shiftmax - logsumexp
        selected = batch.loss_mask.astype(bool)
        n_targets = int(selected.sum())
        if n_targets == 0:
            return 0.0, 0, cache, logprobs
        targets = batch.tokens[selected]
        picked = logprobs[selected][np.arange(n_targets), targets]
        return float(-picked.mean()), n_targets, cache, logprobs

    def loss_and_grads(self, batch: Batch) -> tuple[float, int, dict]:
        p = self.params
        loss, n_targets, cache, logprobs = self._loss_with_cache(batch)
        grads = {name: np.zeros_like(p[name]) for name in PARAM_NAMES}
        if n_targets == 0:
            return loss, 0, grads
        B, L = batch.tokens.shape
        d = self.d_model
        selected = batch.loss_mask.astype(bool)

        probs = np.exp(logprobs)
        dlogits = np.zeros_like(cache["logits"])
        dlogits[selected] = probs[selected]
        rows = np.where(selected)
        dlogits[rows[0], rows[1], batch.tokens[selected]] -= 1.0
        dlogits /= n_targets

        grads["Wout"] = np.einsum("bld,blv->dv", cache["h3"], dlogits)
        dh3 = dlogits @ p["Wout"].T

        dtanh = dh3 @ p["W2"].T
        dact = dtanh * (1.0 - cache["tanh"] ** 2)
        grads["W2"] = np.einsum("blh,bld->hd", cache["tanh"], dh3)
        grads["W1"] = np.einsum("bld,blh->dh", cache["h2"], dact)
        dh2 = dh3 + dact @ p["W1"].T

        grads["Wo"] = np.einsum("bld,ble->de", cache["ctx"], dh2)
        dctx = dh2 @ p["Wo"].T
        dattn = dctx @ cache["v"].transpose(0, 2, 1)
        dv = cache["attn"].transpose(0, 2, 1) @ dctx
        attn = cache["attn"]
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        dscores /= np.sqrt(d)
        dq = dscores @ cache["k"]
        dk = dscores.transpose(0, 2, 1) @ cache["q"]

        h = cache["h"]
        grads["Wq"] = np.einsum("bld,ble->de", h, dq)
        grads["Wk"] = np.einsum("bld,ble->de", h, dk)
        grads["Wv"] = np.einsum("bld,ble->de", h, dv)
        dh = dh2 + dq @ p["Wq"].T + dk @ p["Wk"].T + dv @ p["Wv"].T

        grads["pos"] = dh.sum(axis=0)
        grads["bos"] = dh[:, 0, :].sum(axis=0)
        dinp = np.zeros_like(cache["inp"])
        dinp[:, :-1, :] = dh[:, 1:, :]

        patch = batch.patch_mask
        np.add.at(grads["E"], batch.tokens[~patch], dinp[~patch])
        np.add.at(grads["enc"], batch.patch_offset[patch], dinp[patch])
        return loss, n_targets, grads

    def sgd_step(self, grads: dict, lr: float) -> None:
        """Plain SGD; frozen parameter tensors are never touched."""
        for name in PARAM_NAMES:
            if name in self.frozen:
                continue
            self.params[name] -= lr * grads[name]

    def snapshot(self, names: Iterable[str] | None = None) -> dict:
        names = PARAM_NAMES if names is None else tuple(names)
        return {name: self.params[name].copy() for name in names}


def manual_masked_loss(model: ToyModel, batch: Batch) -> float:
    """Oracle: gather target positions one by one and average explicitly.

    Shares the forward pass but not the selection/averaging arithmetic.
    """
    logits = model.forward(batch)["logits"]
    values = []
    B, L = batch.tokens.shape
    for b in range(B):
        for i in range(L):
            if batch.loss_mask[b, i]:
                row = logits[b, i]
                shifted = row - row.max()
                log_z = np.log(np.exp(shifted).sum())
                values.append(log_z - shifted[batch.tokens[b, i]])
    if not values:
        return 0.0
    return float(sum(values) / len(values))


def gradient_check(
    model: ToyModel,
    batch: Batch,
    n_coords: int = 120,
    step: float = 1e-4,
    seed: int = 0,
) -> float:
    """Max relative error of analytic vs central-difference gradients.

    Samples coordinates across every parameter tensor. A coordinate passes
    on relative error against max(|analytic|, |numeric|), with an absolute
    floor of 1e-8 for near-zero gradients.
    """
    rng = np.random.default_rng(seed)
    _, _, grads = model.loss_and_grads(batch)
    sizes = np.array([model.params[n].size for n in PARAM_NAMES])
    total = sizes.sum()
    worst = 0.0
    for _ in range(n_coords):
        flat = int(rng.integers(total))
        idx = int(np.searchsorted(np.cumsum(sizes), flat, side="right"))
        name = PARAM_NAMES[idx]
        local = flat - int(np.concatenate(([0], np.cumsum(sizes)))[idx])
        coord = np.unravel_index(local, model.params[name].shape)

        original = model.params[name][coord]
        model.params[name][coord] = original + step
        up, _ = model.masked_loss(batch)
        model.params[name][coord] = original - step
        down, _ = model.masked_loss(batch)
        model.params[name][coord] = original

        numeric = (up - down) / (2.0 * step)
        analytic = grads[name][coord]
        diff = abs(analytic - numeric)
        if diff <= 1e-8:
            continue
        worst = max(worst, diff / max(abs(analytic), abs(numeric)))
    return worst
