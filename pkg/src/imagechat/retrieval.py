"""Retrieval dialogue model: encoders + combiner trained with in-batch
negatives, next-utterance pretraining, candidate ranking, and the
R@k/100 evaluation protocol."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .combiner import (MODALITIES, AttentionCombiner, FusedContext,
                       all_modality_masks, mm_sum_fuse, score_candidates)
from .data import SEP, TurnContext, tokenize
from .encoders import (EncodedContext, ImageProjectorRetrieval, StyleEncoder,
                       TextEncoderConfig, TransformerTextEncoder)
from .metrics import MetricReport, recall_at_k
from .optim import Adam
from .params import ParameterStore
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class RetrievalConfig:
    vocab_size: int
    n_styles: int
    dim: int = 500
    n_layers: int = 4
    hidden: int = 300
    n_heads: int = 6
    max_len: int = 64
    ffn_mult: int = 4
    image_mlp_hidden: int = 1024
    combiner_kind: str = "mm_sum"          # or "mm_att"
    combiner_layers: int = 2
    combiner_heads: int = 4
    shared_text_encoders: bool = False
    modality_mask: frozenset = field(
        default_factory=lambda: frozenset(MODALITIES))
    batch_size: int = 500
    lr: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 for in-batch negatives")
        if self.combiner_kind not in ("mm_sum", "mm_att"):
            raise ValueError(f"unknown combiner kind: {self.combiner_kind}")
        self.modality_mask = frozenset(self.modality_mask)
        if not self.modality_mask:
            raise ValueError("modality mask must be nonempty")


def pad_batch(token_lists, pad_id, max_len=None):
    """Right-pad variable-length id lists; returns (ids, mask) arrays."""
    if not token_lists:
        raise ValueError("empty batch")
    longest = max(len(t) for t in token_lists)
    if max_len is not None:
        longest = min(longest, max_len)
    ids = np.full((len(token_lists), max(longest, 1)), pad_id, dtype=np.int64)
    mask = np.zeros_like(ids, dtype=np.float32)
    for i, toks in enumerate(token_lists):
        toks = toks[-longest:] if max_len is not None else toks
        ids[i, :len(toks)] = toks
        mask[i, :len(toks)] = 1.0
    return ids, mask


def inbatch_nll(scores: Tensor) -> Tensor:
    """Mean -log softmax of the diagonal of a square score matrix."""
    B = scores.shape[0]
    if scores.shape != (B, B):
        raise ValueError("in-batch loss needs a square score matrix")
    logp = T.log_softmax_lastdim(scores)
    diag = T.gather(logp, np.arange(B), np.arange(B))
    return T.scale(T.tmean(diag), -1.0)


class RetrievalModel:
    def __init__(self, cfg: RetrievalConfig, vocab, catalog, features):
        self.cfg = cfg
        self.vocab = vocab
        self.catalog = catalog
        self.features = features
        self.store = ParameterStore(seed=cfg.seed)
        enc_cfg = TextEncoderConfig(
            vocab_size=cfg.vocab_size, max_len=cfg.max_len,
            n_layers=cfg.n_layers, hidden=cfg.hidden, n_heads=cfg.n_heads,
            output_dim=cfg.dim, ffn_mult=cfg.ffn_mult,
            shared_response_encoder=cfg.shared_text_encoders)
        self.dialogue_encoder = TransformerTextEncoder(
            enc_cfg, self.store, "dialogue_encoder")
        if cfg.shared_text_encoders:
            self.response_encoder = self.dialogue_encoder
        else:
            self.response_encoder = TransformerTextEncoder(
                enc_cfg, self.store, "response_encoder")
        self.style_encoder = StyleEncoder(self.store, "style_encoder",
                                          cfg.n_styles, cfg.dim)
        self.image_projector = ImageProjectorRetrieval(
            self.store, "image_projector", out_dim=cfg.dim,
            hidden=cfg.image_mlp_hidden)
        if cfg.combiner_kind == "mm_att":
            self.att_combiner = AttentionCombiner(
                self.store, "mm_att", dim=cfg.dim,
                n_layers=cfg.combiner_layers, n_heads=cfg.combiner_heads)
        else:
            self.att_combiner = None
        self._cand_cache = {}

    # -- tokenization helpers ---------------------------------------------

    def history_ids(self, context: TurnContext):
        """Dialogue history token ids with separators between utterances.

        Empty history is legal only at turn 1 (the dialogue modality is
        simply absent there); a lone separator token stands in so the
        encoder contract (nonempty input) holds when the modality mask
        still requests dialogue at turn 1.
        """
        if not context.history and context.turn_index > 1:
            raise ValueError("empty history is legal only at turn 1")
        ids = []
        for i, utt in enumerate(context.history):
            if i:
                ids.append(self.vocab.sep_id)
            ids.extend(self.vocab.encode(tokenize(utt)))
        if not ids:
            ids = [self.vocab.sep_id]
        return ids[-self.cfg.max_len:]

    def response_ids(self, text):
        ids = self.vocab.encode(tokenize(text))
        if not ids:
            raise ValueError("empty candidate response")
        return ids[:self.cfg.max_len]

    # -- encoding ----------------------------------------------------------

    def encode_contexts(self, contexts, mask=None) -> EncodedContext:
        mask = frozenset(mask if mask is not None else self.cfg.modality_mask)
        enc = EncodedContext(present=mask)
        if "image" in mask:
            feats = self.features.batch([c.image_id for c in contexts])
            enc.r_image = self.image_projector.project(feats)
        if "style" in mask:
            ids = np.array([self.catalog.trait_id(c.responder_style)
                            for c in contexts])
            enc.r_style = self.style_encoder.encode(ids)
        if "dialogue" in mask:
            ids, pad_mask = pad_batch([self.history_ids(c) for c in contexts],
                                      self.vocab.pad_id, self.cfg.max_len)
            enc.r_dialogue = self.dialogue_encoder.encode(ids, pad_mask)
        return enc

    def fuse(self, enc: EncodedContext, mask=None) -> FusedContext:
        mask = frozenset(mask if mask is not None else self.cfg.modality_mask)
        if self.cfg.combiner_kind == "mm_att":
            return self.att_combiner.fuse(enc, mask)
        return mm_sum_fuse(enc, mask)

    def encode_candidates(self, texts) -> Tensor:
        ids, pad_mask = pad_batch([self.response_ids(t) for t in texts],
                                  self.vocab.pad_id, self.cfg.max_len)
        return self.response_encoder.encode(ids, pad_mask)

    def encode_candidates_cached(self, texts):
        """Frozen-parameter candidate encodings with caching.

        Cache key is (store version, token sequence); any parameter
        update invalidates it.
        """
        ver = self.store.version
        missing = [t for t in texts if (ver, t) not in self._cand_cache]
        if missing:
            with T.no_grad():
                enc = self.encode_candidates(missing)
            for t, row in zip(missing, enc.data):
                self._cand_cache[(ver, t)] = row
            if len(self._cand_cache) > 4 * len(texts) + 10_000:
                self._cand_cache = {k: v for k, v in self._cand_cache.items()
                                    if k[0] == ver}
        return np.stack([self._cand_cache[(ver, t)] for t in texts])

    # -- training ------------------------------------------------------------

    def train_step(self, batch, optimizer: Adam, mask=None):
        """One in-batch-negatives update. batch: list of (TurnContext, gold)."""
        if len(batch) < 2:
            raise ValueError("in-batch training needs batch size >= 2")
        golds = [g for _, g in batch]
        dup = [g for g, c in Counter(golds).items() if c > 1]
        if dup:
            log.info("batch has %d duplicated gold responses (label noise)",
                     len(dup))
        self.store.zero_grad()
        enc = self.encode_contexts([c for c, _ in batch], mask=mask)
        fused = self.fuse(enc, mask=mask)
        cands = self.encode_candidates(golds)
        scores = score_candidates(fused, cands)
        loss = inbatch_nll(scores)
        loss.backward()
        optimizer.step()
        self._cand_cache.clear()
        return float(loss.data)

    def pretrain_step(self, pairs, optimizer: Adam, k, rng):
        """Next-utterance pretraining: dialogue encoder vs response
        encoder, each positive scored against k batch-sampled negatives."""
        B = len(pairs)
        if not 1 <= k <= B - 1:
            raise ValueError(f"k must be in [1, batch_size-1], got {k}")
        self.store.zero_grad()
        ctx_ids, ctx_mask = pad_batch(
            [self.response_ids(c) for c, _ in pairs],
            self.vocab.pad_id, self.cfg.max_len)
        r_ctx = self.dialogue_encoder.encode(ctx_ids, ctx_mask)
        r_cand = self.encode_candidates([n for _, n in pairs])
        full = T.matmul(r_ctx, T.transpose(r_cand, (1, 0)))  # (B, B)
        rows, cols = [], []
        for i in range(B):
            others = [j for j in range(B) if j != i]
            negs = rng.choice(others, size=k, replace=False)
            for j in (i, *negs):
                rows.append(i)
                cols.append(j)
        picked = T.reshape(T.gather(full, rows, cols), (B, k + 1))
        logp = T.log_softmax_lastdim(picked)
        loss = T.scale(T.tmean(T.slice_axis(logp, 1, 0, 1)), -1.0)
        loss.backward()
        optimizer.step()
        self._cand_cache.clear()
        return float(loss.data)

    # -- inference ------------------------------------------------------------

    def score(self, context: TurnContext, candidates, mask=None):
        """Scores for one context against a candidate list (frozen params)."""
        with T.no_grad():
            enc = self.encode_contexts([context], mask=mask)
            fused = self.fuse(enc, mask=mask)
            cand_rows = self.encode_candidates_cached(candidates)
            scores = score_candidates(
                fused, T.constant(cand_rows, dtype=cand_rows.dtype))
        return scores.data[0]

    def rank_candidates(self, context: TurnContext, candidates, mask=None):
        return rank_by_scores(candidates, self.score(context, candidates,
                                                     mask=mask),
                              gold=context.gold)


@dataclass
class RankingResult:
    ordered: list       # of (candidate, score), scores non-increasing
    gold_rank: int | None

    def top(self):
        return self.ordered[0][0]


def rank_by_scores(candidates, scores, gold=None):
    """Stable descending sort; ties broken by candidate position."""
    order = sorted(range(len(candidates)),
                   key=lambda i: (-float(scores[i]), i))
    ordered = [(candidates[i], float(scores[i])) for i in order]
    gold_rank = None
    if gold is not None:
        for pos, (c, _) in enumerate(ordered, 1):
            if c == gold:
                gold_rank = pos
                break
    return RankingResult(ordered=ordered, gold_rank=gold_rank)


def sample_candidate_set(gold, pool, n_candidates, rng):
    """Gold plus n-1 distractors sampled without replacement from the
    pool (gold excluded). The gold appears exactly once."""
    distractor_pool = [p for p in pool if p != gold]
    if len(distractor_pool) < n_candidates - 1:
        raise ValueError(
            f"candidate pool too small: need {n_candidates - 1} distractors, "
            f"have {len(distractor_pool)}")
    idx = rng.choice(len(distractor_pool), size=n_candidates - 1,
                     replace=False)
    cands = [distractor_pool[i] for i in idx]
    cands.insert(int(rng.integers(0, n_candidates)), gold)
    return cands


def recall_protocol(contexts, scorer, pool_by_turn, n_candidates=100,
                    ks=(1, 5), seed=0):
    """R@k evaluation: each gold is ranked among n_candidates - 1 seeded
    same-split distractors.

    scorer(context, candidates) -> score array. Returns a MetricReport
    with per-turn and overall R@k.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for ctx in contexts:
        pool = pool_by_turn.get(ctx.turn_index, [])
        cands = sample_candidate_set(ctx.gold, pool, n_candidates, rng)
        result = rank_by_scores(cands, scorer(ctx, cands), gold=ctx.gold)
        rows.append((ctx.turn_index,
                     {f"r{k}": 1.0 if result.gold_rank <= k else 0.0
                      for k in ks}))
    report = MetricReport.from_per_example(
        rows, metadata={"seed": seed, "n_candidates": n_candidates,
                        "protocol": "recall"})
    return report


def evaluate_recall(model: RetrievalModel, contexts, pool_by_turn,
                    n_candidates=100, ks=(1, 5), seed=0, mask=None):
    return recall_protocol(
        contexts, lambda c, cands: model.score(c, cands, mask=mask),
        pool_by_turn, n_candidates=n_candidates, ks=ks, seed=seed)


def run_ablation_matrix(model: RetrievalModel, contexts, pool_by_turn,
                        n_candidates=100, seed=0):
    """Per-turn R@1 for all 7 modality masks (single checkpoint, mask
    applied at evaluation time)."""
    table = {}
    for mask in all_modality_masks():
        name = " + ".join(m for m in MODALITIES if m in mask)
        try:
            report = evaluate_recall(model, contexts, pool_by_turn,
                                     n_candidates=n_candidates, ks=(1,),
                                     seed=seed, mask=mask)
            table[name] = {
                **{f"turn{t}": v["r1"] for t, v in report.per_turn.items()},
                "all": report.overall["r1"]}
        except Exception as e:  # missing checkpoint/modality: absent row
            log.warning("ablation row %s unavailable: %s", name, e)
            table[name] = None
    return table
