"""Modality encoders: dialogue/response Transformers, style embedding,
and the two image-feature projections (MLP for retrieval, linear for
the generative decoder's extra token)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

IMAGE_FEATURE_DIM = 2048
ATTN_MASK_VALUE = -1e9


@dataclass
class TextEncoderConfig:
    vocab_size: int
    max_len: int = 64
    n_layers: int = 4
    hidden: int = 300
    n_heads: int = 6
    output_dim: int = 500
    ffn_mult: int = 4
    shared_response_encoder: bool = False

    def __post_init__(self):
        if self.hidden % self.n_heads != 0:
            raise ValueError("hidden must be divisible by n_heads")
        if self.output_dim <= 0:
            raise ValueError("output_dim must be positive")


class VocabularyError(ValueError):
    """Token id outside the embedding table."""


def attention(store, attn_prefix, n_heads, x, key_mask=None, causal=False,
              memory=None):
    """Multi-head attention block. x: (B, Lq, H); key_mask: (B, Lk) of 0/1.

    With `memory` set this is cross-attention (queries from x, keys and
    values from memory). Returns (out, probs) with probs (B, nh, Lq, Lk).
    """
    p = store
    B, Lq, H = x.shape
    dh = H // n_heads
    kv = memory if memory is not None else x
    Lk = kv.shape[1]

    def heads(t, L):
        return T.transpose(T.reshape(t, (B, L, n_heads, dh)), (0, 2, 1, 3))

    q = heads(T.add(T.matmul(x, p[f"{attn_prefix}.wq"]), p[f"{attn_prefix}.bq"]), Lq)
    k = heads(T.add(T.matmul(kv, p[f"{attn_prefix}.wk"]), p[f"{attn_prefix}.bk"]), Lk)
    v = heads(T.add(T.matmul(kv, p[f"{attn_prefix}.wv"]), p[f"{attn_prefix}.bv"]), Lk)

    scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    bias = np.zeros((B, 1, 1, Lk), dtype=x.data.dtype)
    if key_mask is not None:
        bias = bias + (1.0 - np.asarray(key_mask)[:, None, None, :]) * ATTN_MASK_VALUE
    if causal:
        tri = np.triu(np.ones((Lq, Lk), dtype=x.data.dtype), k=1)
        bias = bias + tri[None, None, :, :] * ATTN_MASK_VALUE
    scores = T.add(scores, T.constant(bias, dtype=x.data.dtype))
    probs = T.softmax_lastdim(scores)
    ctx = T.matmul(probs, v)  # (B, nh, Lq, dh)
    ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (B, Lq, H))
    out = T.add(T.matmul(ctx, p[f"{attn_prefix}.wo"]), p[f"{attn_prefix}.bo"])
    return out, probs


def ffn(store, ffn_prefix, x):
    h = T.relu(T.add(T.matmul(x, store[f"{ffn_prefix}.w1"]),
                     store[f"{ffn_prefix}.b1"]))
    return T.add(T.matmul(h, store[f"{ffn_prefix}.w2"]),
                 store[f"{ffn_prefix}.b2"])


def layer_norm_affine(store, ln_prefix, x):
    return T.add(T.mul(T.layer_norm(x), store[f"{ln_prefix}.gain"]),
                 store[f"{ln_prefix}.bias"])


def add_attention_params(store, attn_prefix, hidden):
    for w in ("wq", "wk", "wv", "wo"):
        store.add(f"{attn_prefix}.{w}", (hidden, hidden))
    for b in ("bq", "bk", "bv", "bo"):
        store.add(f"{attn_prefix}.{b}", (hidden,), init="zeros")


def add_ffn_params(store, ffn_prefix, hidden, inner):
    store.add(f"{ffn_prefix}.w1", (hidden, inner))
    store.add(f"{ffn_prefix}.b1", (inner,), init="zeros")
    store.add(f"{ffn_prefix}.w2", (inner, hidden))
    store.add(f"{ffn_prefix}.b2", (hidden,), init="zeros")


def add_layer_norm_params(store, ln_prefix, hidden):
    g = store.add(f"{ln_prefix}.gain", (hidden,), init="zeros")
    g.data += 1.0
    store.add(f"{ln_prefix}.bias", (hidden,), init="zeros")


class TransformerTextEncoder:
    """Token + learned position embeddings, post-norm self-attention
    stack, masked mean pooling, and a final linear projection."""

    def __init__(self, cfg: TextEncoderConfig, store, prefix):
        self.cfg = cfg
        self.store = store
        self.prefix = prefix
        H = cfg.hidden
        store.add(f"{prefix}.tok_emb", (cfg.vocab_size, H), init="embedding")
        store.add(f"{prefix}.pos_emb", (cfg.max_len, H), init="embedding")
        for i in range(cfg.n_layers):
            self._add_layer(i)
        store.add(f"{prefix}.out.w", (H, cfg.output_dim))
        store.add(f"{prefix}.out.b", (cfg.output_dim,), init="zeros")

    def _add_layer(self, i):
        s, H, pre = self.store, self.cfg.hidden, self.prefix
        add_attention_params(s, f"{pre}.l{i}.attn", H)
        add_ffn_params(s, f"{pre}.l{i}.ffn", H, H * self.cfg.ffn_mult)
        add_layer_norm_params(s, f"{pre}.l{i}.ln1", H)
        add_layer_norm_params(s, f"{pre}.l{i}.ln2", H)

    def _check_ids(self, token_ids):
        token_ids = np.asarray(token_ids, dtype=np.int64)
        if token_ids.ndim != 2:
            raise ShapeError("token ids must be (batch, length)")
        if token_ids.shape[1] == 0:
            raise ShapeError("empty token sequence")
        if token_ids.shape[1] > self.cfg.max_len:
            raise ShapeError(f"sequence length {token_ids.shape[1]} exceeds "
                             f"max_len {self.cfg.max_len}")
        if token_ids.min() < 0 or token_ids.max() >= self.cfg.vocab_size:
            raise VocabularyError("token id outside vocabulary")
        return token_ids

    def states(self, token_ids, mask) -> Tensor:
        """Contextual states (B, L, hidden) over non-pad positions."""
        token_ids = self._check_ids(token_ids)
        B, L = token_ids.shape
        mask = np.asarray(mask, dtype=self.store.dtype)
        p, pre = self.store, self.prefix
        x = T.embedding_lookup(p[f"{pre}.tok_emb"], token_ids)
        pos = T.embedding_lookup(p[f"{pre}.pos_emb"], np.arange(L))
        x = T.add(x, pos)
        for i in range(self.cfg.n_layers):
            a, _ = attention(p, f"{pre}.l{i}.attn", self.cfg.n_heads, x, mask)
            x = layer_norm_affine(p, f"{pre}.l{i}.ln1", T.add(x, a))
            x = layer_norm_affine(p, f"{pre}.l{i}.ln2",
                                  T.add(x, ffn(p, f"{pre}.l{i}.ffn", x)))
        return x

    def encode(self, token_ids, mask) -> Tensor:
        """Pooled fixed-width encoding (B, output_dim)."""
        x = self.states(token_ids, mask)
        pooled = T.masked_mean_pool(x, np.asarray(mask, dtype=self.store.dtype))
        return T.add(T.matmul(pooled, self.store[f"{self.prefix}.out.w"]),
                     self.store[f"{self.prefix}.out.b"])


class StyleEncoder:
    """Learned embedding table, one row per style trait."""

    def __init__(self, store, prefix, n_traits, dim):
        self.store = store
        self.prefix = prefix
        self.n_traits = n_traits
        store.add(f"{prefix}.style_emb", (n_traits, dim), init="embedding")

    def encode(self, trait_ids) -> Tensor:
        trait_ids = np.asarray(trait_ids, dtype=np.int64)
        if trait_ids.size and (trait_ids.min() < 0 or trait_ids.max() >= self.n_traits):
            raise VocabularyError("style trait id outside catalog")
        return T.embedding_lookup(self.store[f"{self.prefix}.style_emb"], trait_ids)


class ImageProjectorRetrieval:
    """MLP with one ReLU hidden layer ending in the retrieval width."""

    def __init__(self, store, prefix, out_dim=500, hidden=1024):
        self.store = store
        self.prefix = prefix
        store.add(f"{prefix}.w1", (IMAGE_FEATURE_DIM, hidden))
        store.add(f"{prefix}.b1", (hidden,), init="zeros")
        store.add(f"{prefix}.w2", (hidden, out_dim))
        store.add(f"{prefix}.b2", (out_dim,), init="zeros")

    def project(self, feats) -> Tensor:
        feats = _check_feats(feats, self.store.dtype)
        p, pre = self.store, self.prefix
        h = T.relu(T.add(T.matmul(feats, p[f"{pre}.w1"]), p[f"{pre}.b1"]))
        return T.add(T.matmul(h, p[f"{pre}.w2"]), p[f"{pre}.b2"])


class ImageProjectorGenerative:
    """Single linear map from the 2048-d feature to the decoder token width."""

    def __init__(self, store, prefix, out_dim=300):
        self.store = store
        self.prefix = prefix
        store.add(f"{prefix}.w", (IMAGE_FEATURE_DIM, out_dim))
        store.add(f"{prefix}.b", (out_dim,), init="zeros")

    def project(self, feats) -> Tensor:
        feats = _check_feats(feats, self.store.dtype)
        p, pre = self.store, self.prefix
        return T.add(T.matmul(feats, p[f"{pre}.w"]), p[f"{pre}.b"])


def _check_feats(feats, dtype):
    if not isinstance(feats, Tensor):
        feats = T.constant(np.asarray(feats, dtype=dtype), dtype=dtype)
    if feats.shape[-1] != IMAGE_FEATURE_DIM:
        raise ShapeError(f"image feature must be {IMAGE_FEATURE_DIM}-d, "
                         f"got {feats.shape[-1]}")
    return feats


@dataclass
class EncodedContext:
    """Per-modality encodings for a batch; absent modalities stay None."""
    r_image: Tensor | None = None
    r_style: Tensor | None = None
    r_dialogue: Tensor | None = None
    present: frozenset = field(default_factory=frozenset)

    def vector(self, modality) -> Tensor:
        v = {"image": self.r_image, "style": self.r_style,
             "dialogue": self.r_dialogue}[modality]
        if v is None:
            raise ValueError(f"modality {modality!r} not encoded")
        return v
