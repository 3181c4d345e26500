"""Evaluation statistics: R@k, ROUGE-L, BLEU-4, token F1, the weighted
word-overlap retrieval baseline, and the exact two-tailed binomial
preference test."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field


def lcs_length(a, b):
    """Longest common subsequence length (single-row DP)."""
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(hypothesis, reference):
    """LCS F-measure with beta=1. Empty hypothesis scores 0."""
    if not reference:
        raise ValueError("reference must be nonempty")
    if not hypothesis:
        return 0.0
    lcs = lcs_length(hypothesis, reference)
    if lcs == 0:
        return 0.0
    p = lcs / len(hypothesis)
    r = lcs / len(reference)
    return 2 * p * r / (p + r)


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(hypotheses, references, smooth=True, scale=1.0):
    """Corpus-level BLEU with n=1..4 modified precision, geometric mean,
    and brevity penalty. With smooth=True, add-one smoothing is applied
    to the order >= 2 counts; scale=100 gives the conventional x100
    presentation."""
    if not hypotheses or len(hypotheses) != len(references):
        raise ValueError("need nonempty aligned corpora")
    match = [0] * 4
    total = [0] * 4
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, 5):
            h = _ngrams(hyp, n)
            r = _ngrams(ref, n)
            match[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            total[n - 1] += max(len(hyp) - n + 1, 0)
    log_prec = 0.0
    for n in range(1, 5):
        m, t = match[n - 1], total[n - 1]
        if smooth and n >= 2:
            m, t = m + 1, t + 1
        if m == 0 or t == 0:
            return 0.0
        log_prec += math.log(m / t) / 4
    bp = 1.0 if hyp_len > ref_len else (
        0.0 if hyp_len == 0 else math.exp(1 - ref_len / hyp_len))
    return scale * bp * math.exp(log_prec)


def token_f1(hypothesis, reference):
    """Harmonic mean of multiset-overlap precision and recall."""
    if not reference:
        raise ValueError("reference must be nonempty")
    if not hypothesis:
        return 0.0
    overlap = sum((Counter(hypothesis) & Counter(reference)).values())
    if overlap == 0:
        return 0.0
    p = overlap / len(hypothesis)
    r = overlap / len(reference)
    return 2 * p * r / (p + r)


def recall_at_k(gold_ranks, k, n_candidates):
    """Fraction of gold ranks <= k (ranks are 1-based)."""
    if not gold_ranks:
        raise ValueError("no ranks given")
    for r in gold_ranks:
        if not 1 <= r <= n_candidates:
            raise ValueError(f"rank {r} outside [1, {n_candidates}]")
    return sum(1 for r in gold_ranks if r <= k) / len(gold_ranks)


def binomial_two_tailed(wins, n):
    """Exact two-sided binomial test at p = 0.5.

    Sums P(X = i) over every i whose point probability does not exceed
    P(X = wins); computed in integer arithmetic, so the result is the
    correctly rounded float of an exact rational.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 <= wins <= n:
        raise ValueError("wins must lie in [0, n]")
    # the point mass at p = 0.5 is strictly unimodal and symmetric, so
    # {i : comb(n, i) <= comb(n, wins)} is exactly the two mirrored tails
    # {0..w} and {n-w..n} with w = min(wins, n - wins)
    w = min(wins, n - wins)
    if n % 2 == 0 and w == n // 2:
        return 1.0
    c = 1
    tail = 1
    for i in range(1, w + 1):
        c = c * (n - i + 1) // i
        tail += c
    # exact rational 2*tail / 2^n rounded to float
    return _ratio_to_float(2 * tail, 1 << n)


def _ratio_to_float(num, den):
    try:
        return num / den
    except OverflowError:
        return math.exp(math.log(num) - math.log(den)) if num else 0.0


def min_trials_for_significance(win_rate, alpha):
    """Smallest even n with binomial_two_tailed(round(win_rate*n), n) < alpha."""
    n = 2
    while n < 10_000_000:
        if binomial_two_tailed(round(win_rate * n), n) < alpha:
            return n
        n = max(n + 2, int(n * 1.2) // 2 * 2)
    raise ValueError("no n found below search bound")


class IrBaseline:
    """Rank candidates by weighted word-type overlap with the context.

    Weight of token t: 1 / (1 + log(1 + train_frequency(t))), computed
    over the training responses.
    """

    def __init__(self, train_responses, tokenizer):
        self.tokenizer = tokenizer
        freq = Counter()
        for resp in train_responses:
            freq.update(tokenizer(resp))
        self.freq = freq

    def weight(self, token):
        return 1.0 / (1.0 + math.log(1.0 + self.freq[token]))

    def score(self, context_text, candidate_text):
        ctx = set(self.tokenizer(context_text))
        cand = set(self.tokenizer(candidate_text))
        return sum(self.weight(t) for t in ctx & cand)

    def rank(self, context_text, candidates):
        """Descending scores; ties broken by candidate position (stable)."""
        if not candidates:
            raise ValueError("need at least one candidate")
        scored = [(self.score(context_text, c), i, c)
                  for i, c in enumerate(candidates)]
        scored.sort(key=lambda t: (-t[0], t[1]))
        return [(c, s) for s, _, c in scored]


@dataclass
class PreferenceTally:
    wins_model: int
    wins_human: int

    def __post_init__(self):
        if self.wins_model < 0 or self.wins_human < 0:
            raise ValueError("tallies must be nonnegative")
        if self.n < 1:
            raise ValueError("need at least one judgement")

    @property
    def n(self):
        return self.wins_model + self.wins_human

    @property
    def win_rate(self):
        return self.wins_model / self.n

    def p_value(self):
        return binomial_two_tailed(self.wins_model, self.n)


@dataclass
class MetricReport:
    """Per-turn and overall metric maps plus run metadata.

    Overall values are example-weighted means of the per-turn values.
    """
    per_turn: dict = field(default_factory=dict)   # turn -> {metric: value}
    overall: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)     # turn -> n examples
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_per_example(cls, rows, metadata=None):
        """rows: list of (turn_index, {metric: value})."""
        by_turn, counts = {}, {}
        for turn, values in rows:
            counts[turn] = counts.get(turn, 0) + 1
            acc = by_turn.setdefault(turn, {})
            for k, v in values.items():
                acc[k] = acc.get(k, 0.0) + v
        per_turn = {t: {k: v / counts[t] for k, v in acc.items()}
                    for t, acc in by_turn.items()}
        total = sum(counts.values())
        overall = {}
        if total:
            keys = next(iter(per_turn.values())).keys()
            for k in keys:
                overall[k] = sum(per_turn[t][k] * counts[t]
                                 for t in per_turn) / total
        return cls(per_turn=per_turn, overall=overall, counts=counts,
                   metadata=metadata or {})

    def to_dict(self):
        out = {f"turn{t}": dict(v) for t, v in sorted(self.per_turn.items())}
        out["all"] = dict(self.overall)
        out["counts"] = {str(t): c for t, c in sorted(self.counts.items())}
        out.update(self.metadata)
        return out

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)

    def table(self, metrics=None):
        """Human-readable turn x metric table."""
        turns = sorted(self.per_turn)
        metrics = metrics or sorted(self.overall)
        lines = ["{:<12}".format("") + "".join(f"{m:>12}" for m in metrics)]
        for t in turns:
            lines.append(f"{'turn ' + str(t):<12}" + "".join(
                f"{self.per_turn[t].get(m, float('nan')):>12.4f}"
                for m in metrics))
        lines.append(f"{'all':<12}" + "".join(
            f"{self.overall.get(m, float('nan')):>12.4f}" for m in metrics))
        return "\n".join(lines)
