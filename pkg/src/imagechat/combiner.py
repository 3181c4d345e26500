"""Multimodal fusion and candidate scoring.

Two combiners over the modality encodings (image, style, dialogue):
the elementwise sum, and an attention-based reweighting where a small
Transformer over the stacked modality vectors produces convex weights
that recombine the original vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoders import (EncodedContext, add_attention_params, add_ffn_params,
                       add_layer_norm_params, attention, ffn,
                       layer_norm_affine)
from .tensor import ShapeError, Tensor

MODALITIES = ("image", "style", "dialogue")


def all_modality_masks():
    """The 7 nonempty modality subsets, in a stable order."""
    out = []
    for bits in range(1, 8):
        out.append(frozenset(m for i, m in enumerate(MODALITIES) if (bits >> i) & 1))
    return out


@dataclass
class FusedContext:
    r_fused: Tensor  # (B, N)
    combiner_kind: str
    modality_mask: frozenset


def _active(ctx: EncodedContext, mask):
    mask = frozenset(mask)
    if not mask:
        raise ShapeError("modality mask must be nonempty")
    unknown = mask - set(MODALITIES)
    if unknown:
        raise ValueError(f"unknown modalities in mask: {sorted(unknown)}")
    return [m for m in MODALITIES if m in mask]


def mm_sum_fuse(ctx: EncodedContext, mask) -> FusedContext:
    """Sum of the masked-in modality vectors; excluded ones contribute
    nothing (equivalent to substituting zero vectors)."""
    active = _active(ctx, mask)
    vecs = [ctx.vector(m) for m in active]
    out = vecs[0]
    for v in vecs[1:]:
        out = T.add(out, v)
    return FusedContext(out, "mm_sum", frozenset(mask))


class AttentionCombiner:
    """Stacked-Transformer fusion: self-attention over the modality
    vectors plus a learned aggregation query; the query's final-layer
    attention distribution (head-averaged, renormalized over the
    modality positions) reweights the original vectors."""

    def __init__(self, store, prefix, dim=500, n_layers=2, n_heads=4,
                 ffn_mult=4, use_contextual_states=False):
        if dim % n_heads != 0:
            raise ValueError("combiner dim must be divisible by n_heads")
        self.store = store
        self.prefix = prefix
        self.dim = dim
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.use_contextual_states = use_contextual_states
        store.add(f"{prefix}.agg_query", (dim,), init="embedding")
        for i in range(n_layers):
            add_attention_params(store, f"{prefix}.l{i}.attn", dim)
            add_ffn_params(store, f"{prefix}.l{i}.ffn", dim, dim * ffn_mult)
            add_layer_norm_params(store, f"{prefix}.l{i}.ln1", dim)
            add_layer_norm_params(store, f"{prefix}.l{i}.ln2", dim)

    def fuse(self, ctx: EncodedContext, mask) -> FusedContext:
        active = _active(ctx, mask)
        vecs = [ctx.vector(m) for m in active]
        B = vecs[0].shape[0]
        for v in vecs:
            if v.shape != (B, self.dim):
                raise ShapeError("modality vector width mismatch in combiner")
        M = len(vecs)
        dtype = vecs[0].data.dtype
        # sequence: M modality positions + 1 aggregation query; no
        # position embeddings (modalities are a set)
        q = T.add(T.reshape(self.store[f"{self.prefix}.agg_query"], (1, self.dim)),
                  T.constant(np.zeros((B, self.dim), dtype=dtype)))
        seq = T.transpose(T.stack_axis0(vecs), (1, 0, 2))  # (B, M, dim)
        x = T.transpose(T.stack_axis0(vecs + [q]), (1, 0, 2))  # (B, M+1, dim)
        p, pre = self.store, self.prefix
        probs = None
        for i in range(self.n_layers):
            a, probs = attention(p, f"{pre}.l{i}.attn", self.n_heads, x)
            x = layer_norm_affine(p, f"{pre}.l{i}.ln1", T.add(x, a))
            x = layer_norm_affine(p, f"{pre}.l{i}.ln2",
                                  T.add(x, ffn(p, f"{pre}.l{i}.ffn", x)))
        # query row of the final layer's attention, head-averaged, kept
        # on the modality positions and renormalized to a convex weight
        head_avg = T.mean_axis(probs, 1)          # (B, M+1, M+1)
        q_row = T.select_index(head_avg, 1, M)    # (B, M+1)
        w = T.slice_axis(q_row, 1, 0, M)          # (B, M)
        w = T.div(w, T.reshape(T.sum_axis(w, 1), (B, 1)))
        source = (T.slice_axis(x, 1, 0, M) if self.use_contextual_states
                  else seq)
        weighted = T.mul(source, T.reshape(w, (B, M, 1)))
        return FusedContext(T.sum_axis(weighted, 1), "mm_att", frozenset(mask))


def score_candidates(fused: FusedContext, candidates: Tensor) -> Tensor:
    """Dot-product scores, no normalization.

    candidates: (M, N) rows of response encodings. Returns (B, M) for a
    batch of fused contexts.
    """
    if candidates.ndim != 2 or candidates.shape[0] == 0:
        raise ShapeError("need a nonempty (n_candidates, width) matrix")
    if candidates.shape[1] != fused.r_fused.shape[-1]:
        raise ShapeError("candidate width does not match fused context")
    return T.matmul(fused.r_fused, T.transpose(candidates, (1, 0)))
