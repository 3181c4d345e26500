"""Generative dialogue model: style-prefixed seq2seq Transformer with
the projected image feature appended as an extra encoder state, teacher
forcing, and beam search with tri-gram blocking."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .combiner import MODALITIES
from .data import TurnContext, tokenize
from .encoders import (ImageProjectorGenerative, TextEncoderConfig,
                       TransformerTextEncoder, add_attention_params,
                       add_ffn_params, add_layer_norm_params, attention, ffn,
                       layer_norm_affine)
from .metrics import MetricReport, rouge_l, token_f1
from .optim import Adam
from .params import ParameterStore
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class GenConfig:
    vocab_size: int
    hidden: int = 300            # token width, matches the image projection
    n_layers: int = 4
    n_heads: int = 6
    max_len: int = 64
    ffn_mult: int = 4
    beam_size: int = 2
    trigram_block: bool = True
    max_decode_len: int = 32
    batch_size: int = 32
    lr: float = 1e-4
    seed: int = 0
    modality_mask: frozenset = field(
        default_factory=lambda: frozenset(MODALITIES))

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        self.modality_mask = frozenset(self.modality_mask)


class GenerativeModel:
    def __init__(self, cfg: GenConfig, vocab, catalog, features):
        self.cfg = cfg
        self.vocab = vocab
        self.catalog = catalog
        self.features = features
        self.store = ParameterStore(seed=cfg.seed)
        enc_cfg = TextEncoderConfig(
            vocab_size=cfg.vocab_size, max_len=cfg.max_len,
            n_layers=cfg.n_layers, hidden=cfg.hidden, n_heads=cfg.n_heads,
            output_dim=cfg.hidden, ffn_mult=cfg.ffn_mult)
        self.encoder = TransformerTextEncoder(enc_cfg, self.store, "encoder")
        self.image_projector = ImageProjectorGenerative(
            self.store, "image_projector", out_dim=cfg.hidden)
        s, H = self.store, cfg.hidden
        s.add("decoder.tok_emb", (cfg.vocab_size, H), init="embedding")
        s.add("decoder.pos_emb", (cfg.max_decode_len + 2, H), init="embedding")
        for i in range(cfg.n_layers):
            add_attention_params(s, f"decoder.l{i}.self_attn", H)
            add_attention_params(s, f"decoder.l{i}.cross_attn", H)
            add_ffn_params(s, f"decoder.l{i}.ffn", H, H * cfg.ffn_mult)
            for ln in ("ln1", "ln2", "ln3"):
                add_layer_norm_params(s, f"decoder.l{i}.{ln}", H)
        s.add("decoder.out.w", (H, cfg.vocab_size))
        s.add("decoder.out.b", (cfg.vocab_size,), init="zeros")

    # -- encoder side --------------------------------------------------------

    def encoder_token_ids(self, context: TurnContext, mask=None):
        """Style-prefixed history tokens.

        The style trait is one reserved vocab token prepended to the
        history; utterances are joined with separators. Overflow drops
        the oldest history tokens first (the style prefix survives).
        """
        mask = frozenset(mask if mask is not None else self.cfg.modality_mask)
        prefix = []
        if "style" in mask:
            prefix = [self.vocab.style_token_id(context.responder_style)]
        body = []
        if "dialogue" in mask:
            for i, utt in enumerate(context.history):
                if i:
                    body.append(self.vocab.sep_id)
                body.extend(self.vocab.encode(tokenize(utt)))
        budget = self.cfg.max_len - len(prefix)
        if len(body) > budget:
            body = body[len(body) - budget:]
        ids = prefix + body
        if not ids:
            ids = [self.vocab.sep_id]  # image-only degenerate case
        return ids

    def build_encoder_memory(self, contexts, mask=None):
        """Run the text encoder and append the projected image feature
        as one extra state. Returns (memory (B, L+1, H), key mask)."""
        mask = frozenset(mask if mask is not None else self.cfg.modality_mask)
        from .retrieval import pad_batch
        ids, pad_mask = pad_batch(
            [self.encoder_token_ids(c, mask=mask) for c in contexts],
            self.vocab.pad_id, self.cfg.max_len)
        states = self.encoder.states(ids, pad_mask)  # (B, L, H)
        if "image" in mask:
            feats = self.features.batch([c.image_id for c in contexts])
            img = self.image_projector.project(feats)  # (B, H)
            B, H = img.shape
            memory = T.transpose(T.concat_lastdim(
                [T.transpose(states, (0, 2, 1)),
                 T.transpose(T.reshape(img, (B, 1, H)), (0, 2, 1))]),
                (0, 2, 1))
            key_mask = np.concatenate(
                [pad_mask, np.ones((B, 1), dtype=pad_mask.dtype)], axis=1)
        else:
            memory, key_mask = states, pad_mask
        return memory, key_mask

    # -- decoder side ----------------------------------------------------------

    def decoder_logits(self, target_ids, memory, memory_mask):
        """Teacher-forced logits (B, Lt, vocab) for shifted targets."""
        target_ids = np.asarray(target_ids, dtype=np.int64)
        B, Lt = target_ids.shape
        p = self.store
        x = T.embedding_lookup(p["decoder.tok_emb"], target_ids)
        pos = T.embedding_lookup(p["decoder.pos_emb"], np.arange(Lt))
        x = T.add(x, pos)
        for i in range(self.cfg.n_layers):
            a, _ = attention(p, f"decoder.l{i}.self_attn", self.cfg.n_heads,
                             x, causal=True)
            x = layer_norm_affine(p, f"decoder.l{i}.ln1", T.add(x, a))
            c, _ = attention(p, f"decoder.l{i}.cross_attn", self.cfg.n_heads,
                             x, key_mask=memory_mask, memory=memory)
            x = layer_norm_affine(p, f"decoder.l{i}.ln2", T.add(x, c))
            x = layer_norm_affine(p, f"decoder.l{i}.ln3",
                                  T.add(x, ffn(p, f"decoder.l{i}.ffn", x)))
        return T.add(T.matmul(x, p["decoder.out.w"]), p["decoder.out.b"])

    def target_ids(self, text):
        ids = self.vocab.encode(tokenize(text))[:self.cfg.max_decode_len]
        return [self.vocab.start_id] + ids + [self.vocab.end_id]

    def train_step_gen(self, batch, optimizer: Adam, mask=None):
        """Teacher-forced cross-entropy, mean over non-pad target tokens.

        batch: list of (TurnContext, gold response text).
        """
        from .retrieval import pad_batch
        kept = [(c, g) for c, g in batch if tokenize(g)]
        if len(kept) < len(batch):
            log.warning("skipping %d examples with empty targets",
                        len(batch) - len(kept))
        if not kept:
            raise ValueError("no non-empty targets in batch")
        self.store.zero_grad()
        memory, memory_mask = self.build_encoder_memory(
            [c for c, _ in kept], mask=mask)
        tgt = [self.target_ids(g) for _, g in kept]
        ids, tmask = pad_batch(tgt, self.vocab.pad_id)
        inputs, labels = ids[:, :-1], ids[:, 1:]
        label_mask = tmask[:, 1:]
        logits = self.decoder_logits(inputs, memory, memory_mask)
        logp = T.log_softmax_lastdim(logits)
        B, Lt = labels.shape
        flat = T.reshape(logp, (B * Lt, self.cfg.vocab_size))
        picked = T.gather(flat, np.arange(B * Lt), labels.reshape(-1))
        weights = label_mask.reshape(-1)
        total = T.tsum(T.mul(picked, T.constant(weights, dtype=picked.data.dtype)))
        loss = T.scale(total, -1.0 / weights.sum())
        loss.backward()
        optimizer.step()
        return float(loss.data)

    # -- decoding ---------------------------------------------------------------

    def next_log_probs(self, prefix_ids, memory, memory_mask):
        """Log distribution over the next token given a decoded prefix."""
        ids = np.asarray([prefix_ids], dtype=np.int64)
        logits = self.decoder_logits(ids, memory, memory_mask)
        logp = T.log_softmax_lastdim(logits)
        return logp.data[0, -1]

    def decode_beam(self, context: TurnContext, mask=None, beam_size=None,
                    trigram_block=None, max_decode_len=None):
        """Length-bounded beam search returning the highest cumulative
        log-prob finished hypothesis (no length normalization)."""
        cfg = self.cfg
        beam_size = beam_size or cfg.beam_size
        blocking = cfg.trigram_block if trigram_block is None else trigram_block
        # the position table only covers cfg.max_decode_len steps
        limit = min(max_decode_len or cfg.max_decode_len, cfg.max_decode_len)
        with T.no_grad():
            memory, memory_mask = self.build_encoder_memory([context],
                                                            mask=mask)
            beams = [BeamHypothesis([self.vocab.start_id], 0.0)]
            finished = []
            for _ in range(limit):
                live = [b for b in beams if not b.finished]
                if not live:
                    break
                expansions = []
                for hyp in live:
                    logp = self.next_log_probs(hyp.tokens, memory,
                                               memory_mask)
                    logp = logp.copy()
                    logp[self.vocab.pad_id] = -np.inf
                    logp[self.vocab.start_id] = -np.inf
                    if blocking:
                        blocked = blocked_continuations(hyp.tokens)
                        for t in blocked:
                            logp[t] = -np.inf
                        if not np.any(np.isfinite(logp)):
                            log.info("all continuations blocked; "
                                     "falling back to end-of-sequence")
                            expansions.append(hyp.extend(
                                self.vocab.end_id, 0.0, self.vocab.end_id))
                            continue
                    top = np.argsort(-logp)[:beam_size]
                    for t in top:
                        expansions.append(hyp.extend(
                            int(t), float(logp[t]), self.vocab.end_id))
                expansions.sort(key=lambda h: -h.log_prob)
                beams = []
                for h in expansions:
                    if h.finished:
                        finished.append(h)
                    else:
                        beams.append(h)
                    if len(beams) >= beam_size:
                        break
            for h in beams:
                finished.append(h.extend(self.vocab.end_id, 0.0,
                                         self.vocab.end_id))
            best = max(finished, key=lambda h: h.log_prob)
        return best

    def decode_text(self, context, **kwargs):
        hyp = self.decode_beam(context, **kwargs)
        return " ".join(self.vocab.decode(hyp.tokens)), hyp.log_prob


@dataclass
class BeamHypothesis:
    tokens: list
    log_prob: float
    finished: bool = False

    def extend(self, token, token_log_prob, end_id):
        if self.finished:
            raise ValueError("finished hypotheses are never extended")
        if token_log_prob > 0:
            raise ValueError("log-probabilities must be <= 0")
        return BeamHypothesis(self.tokens + [token],
                              self.log_prob + token_log_prob,
                              finished=(token == end_id))


def blocked_continuations(tokens):
    """Tokens that would repeat a trigram already in the sequence."""
    if len(tokens) < 2:
        return set()
    last_two = (tokens[-2], tokens[-1])
    out = set()
    for i in range(len(tokens) - 2):
        if (tokens[i], tokens[i + 1]) == last_two:
            out.add(tokens[i + 2])
    return out


def has_repeated_trigram(tokens):
    seen = set()
    for i in range(len(tokens) - 2):
        tri = tuple(tokens[i:i + 3])
        if tri in seen:
            return True
        seen.add(tri)
    return False


def decode_corpus(model: GenerativeModel, contexts, mask=None):
    """Decode every context; rows are {context_id, output_text, logprob}."""
    rows = []
    for i, ctx in enumerate(contexts):
        text, logprob = model.decode_text(ctx, mask=mask)
        rows.append({"context_id": f"{ctx.image_id}:t{ctx.turn_index}:{i}",
                     "output_text": text, "logprob": logprob})
    return rows


def evaluate_generation(model: GenerativeModel, contexts, mask=None,
                        metadata=None, decodes=None):
    """Decode every context and report ROUGE-L, BLEU-4 (x100), and token
    F1 per turn and overall. BLEU-4 is corpus-level, computed over each
    turn's examples and example-weighted into the overall number."""
    from .metrics import bleu4
    if decodes is None:
        decodes = decode_corpus(model, contexts, mask=mask)
    rows = []
    decoded_by_turn = {}
    for ctx, dec in zip(contexts, decodes):
        hyp, ref = tokenize(dec["output_text"]), tokenize(ctx.gold)
        rows.append((ctx.turn_index, {"rouge_l": rouge_l(hyp, ref),
                                      "f1": token_f1(hyp, ref)}))
        decoded_by_turn.setdefault(ctx.turn_index, ([], []))
        decoded_by_turn[ctx.turn_index][0].append(hyp)
        decoded_by_turn[ctx.turn_index][1].append(ref)
    report = MetricReport.from_per_example(rows, metadata=metadata or {})
    total = sum(report.counts.values())
    overall_bleu = 0.0
    for t, (hyps, refs) in decoded_by_turn.items():
        b = bleu4(hyps, refs, scale=100.0)
        report.per_turn[t]["bleu4"] = b
        overall_bleu += b * report.counts[t] / total
    report.overall["bleu4"] = overall_bleu
    return report
