"""Dataset schema, tokenization, vocabulary, style catalog, candidate
stores, turn-context construction, and the IGC transfer adapter.

Dataset lines are JSONL:
{"v":1,"image_id":"...","style_a":"Peaceful","style_b":"Absentminded",
 "split":"train","turns":[{"speaker":"A","text":"..."}, ...]}
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field

PAD, START, END, SEP, UNK = "<pad>", "<start>", "<end>", "<sep>", "<unk>"
RESERVED = (PAD, START, END, SEP, UNK)

_PUNCT = set(".,!?'\"")

QUESTION_STARTERS = ("who", "what", "when", "where", "why", "how")


def tokenize(text):
    """Lowercase, whitespace-split, with . , ! ? ' \" as standalone tokens."""
    out = []
    for chunk in text.lower().split():
        buf = ""
        for ch in chunk:
            if ch in _PUNCT:
                if buf:
                    out.append(buf)
                    buf = ""
                out.append(ch)
            else:
                buf += ch
        if buf:
            out.append(buf)
    return out


def detokenize(tokens):
    return " ".join(tokens)


def is_question(text):
    """Question heuristic: contains '?' or starts with a wh-word/how."""
    if "?" in text:
        return True
    toks = tokenize(text)
    return bool(toks) and toks[0] in QUESTION_STARTERS


@dataclass
class StyleCatalog:
    """Ordered trait list; each trait belongs to one of three classes."""
    traits: list  # of (name, class) with class in {positive, neutral, negative}

    CLASSES = ("positive", "neutral", "negative")

    def __post_init__(self):
        names = [n for n, _ in self.traits]
        if not names:
            raise ValueError("style catalog is empty")
        if len(set(names)) != len(names):
            raise ValueError("duplicate trait names in style catalog")
        bad = [c for _, c in self.traits if c not in self.CLASSES]
        if bad:
            raise ValueError(f"unknown trait class: {bad[0]}")
        self._index = {n: i for i, (n, _) in enumerate(self.traits)}

    def __len__(self):
        return len(self.traits)

    def __contains__(self, name):
        return name in self._index

    def names(self):
        return [n for n, _ in self.traits]

    def trait_id(self, name):
        if name not in self._index:
            raise KeyError(f"style trait not in catalog: {name!r}")
        return self._index[name]

    def trait_class(self, name):
        return self.traits[self.trait_id(name)][1]

    @classmethod
    def load(cls, path):
        """One `name<TAB>class` per line; blank lines and # comments skipped."""
        traits = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                name, klass = line.split("\t")
                traits.append((name, klass))
        return cls(traits)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for name, klass in self.traits:
                f.write(f"{name}\t{klass}\n")


class Vocabulary:
    """Token <-> id bijection with stable reserved ids.

    Reserved: pad=0, start=1, end=2, sep=3, unk=4, then (generative mode)
    one token per style trait, then content tokens.
    """

    def __init__(self, tokens, style_traits=()):
        self._tokens = list(RESERVED)
        self._tokens += [f"<style:{t}>" for t in style_traits]
        self._tokens += list(tokens)
        if len(set(self._tokens)) != len(self._tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self._ids = {t: i for i, t in enumerate(self._tokens)}

    def __len__(self):
        return len(self._tokens)

    def __contains__(self, token):
        return token in self._ids

    @property
    def pad_id(self):
        return 0

    @property
    def start_id(self):
        return 1

    @property
    def end_id(self):
        return 2

    @property
    def sep_id(self):
        return 3

    @property
    def unk_id(self):
        return 4

    def id_of(self, token):
        return self._ids.get(token, self.unk_id)

    def token_of(self, idx):
        return self._tokens[idx]

    def style_token_id(self, trait):
        key = f"<style:{trait}>"
        if key not in self._ids:
            raise KeyError(f"no style token for trait {trait!r}")
        return self._ids[key]

    def encode(self, tokens):
        return [self.id_of(t) for t in tokens]

    def decode(self, ids, strip_special=True):
        toks = [self._tokens[i] for i in ids]
        if strip_special:
            toks = [t for t in toks
                    if t not in RESERVED and not t.startswith("<style:")]
        return toks

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump({"tokens": self._tokens}, f)

    @classmethod
    def load_file(cls, path):
        with open(path, encoding="utf-8") as f:
            tokens = json.load(f)["tokens"]
        v = cls.__new__(cls)
        v._tokens = tokens
        v._ids = {t: i for i, t in enumerate(tokens)}
        return v


def build_vocab(examples, min_freq=1, style_traits=()):
    """Frequency cutoff vocabulary; ordering is freq desc then lexicographic."""
    counts = Counter()
    for ex in examples:
        for turn in ex.turns:
            counts.update(tokenize(turn["text"]))
    kept = sorted((t for t, c in counts.items() if c >= min_freq),
                  key=lambda t: (-counts[t], t))
    return Vocabulary(kept, style_traits=style_traits)


@dataclass
class DialogueExample:
    image_id: str
    style_a: str
    style_b: str
    turns: list  # of {"speaker": "A"|"B", "text": str}
    split: str = "train"

    def style_for_turn(self, turn_index):
        return self.style_a if turn_index % 2 == 1 else self.style_b


@dataclass
class TurnContext:
    image_id: str
    responder_style: str
    history: list  # prior utterances, oldest first
    turn_index: int
    gold: str | None = None

    def __post_init__(self):
        if self.turn_index != len(self.history) + 1:
            raise ValueError("turn_index must equal len(history) + 1")


@dataclass
class LoadReport:
    examples: list
    errors: list = field(default_factory=list)  # of (line_no, message)


def _validate_example(obj, catalog: StyleCatalog | None):
    for key in ("image_id", "style_a", "style_b", "turns"):
        if key not in obj:
            return f"missing field {key!r}"
    turns = obj["turns"]
    if not 1 <= len(turns) <= 3:
        return f"expected 1-3 turns, got {len(turns)}"
    for i, t in enumerate(turns):
        if t.get("speaker") != ("A" if i % 2 == 0 else "B"):
            return f"turn {i + 1}: speakers must alternate starting with A"
        if not isinstance(t.get("text"), str):
            return f"turn {i + 1}: missing text"
    if catalog is not None:
        for s in (obj["style_a"], obj["style_b"]):
            if s not in catalog:
                return f"unknown style {s!r}"
    return None


def load_dataset(path, catalog: StyleCatalog | None = None) -> LoadReport:
    """Load JSONL; malformed lines go to the error report, loading continues."""
    examples, errors = [], []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                errors.append((line_no, f"bad JSON: {e}"))
                continue
            problem = _validate_example(obj, catalog)
            if problem:
                errors.append((line_no, problem))
                continue
            examples.append(DialogueExample(
                image_id=obj["image_id"], style_a=obj["style_a"],
                style_b=obj["style_b"], turns=obj["turns"],
                split=obj.get("split", "train")))
    return LoadReport(examples, errors)


def save_dataset(examples, path):
    with open(path, "w", encoding="utf-8") as f:
        for ex in examples:
            f.write(json.dumps({
                "v": 1, "image_id": ex.image_id, "style_a": ex.style_a,
                "style_b": ex.style_b, "split": ex.split,
                "turns": ex.turns}) + "\n")


def make_turn_contexts(example: DialogueExample):
    """One (context, gold response) per turn of the example."""
    out = []
    for t in range(1, len(example.turns) + 1):
        out.append(TurnContext(
            image_id=example.image_id,
            responder_style=example.style_for_turn(t),
            history=[u["text"] for u in example.turns[:t - 1]],
            turn_index=t,
            gold=example.turns[t - 1]["text"]))
    return out


def build_candidate_store(examples, turn):
    """All turn-t responses from the given examples, deduplicated, in
    first-seen order."""
    seen, out = set(), []
    for ex in examples:
        if len(ex.turns) >= turn:
            text = ex.turns[turn - 1]["text"]
            if text not in seen:
                seen.add(text)
                out.append(text)
    return out


@dataclass
class IgcExample:
    image_id: str
    context_utterance: str
    question: str
    gold_response: str

    def __post_init__(self):
        for f_ in (self.image_id, self.context_utterance, self.question,
                   self.gold_response):
            if not f_:
                raise ValueError("IGC example fields must be nonempty")


def load_igc(path) -> LoadReport:
    examples, errors = [], []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                examples.append(IgcExample(
                    image_id=obj["image_id"], context_utterance=obj["context"],
                    question=obj["question"], gold_response=obj["response"]))
            except (json.JSONDecodeError, KeyError, ValueError) as e:
                errors.append((line_no, str(e)))
    return LoadReport(examples, errors)


def igc_adapt(ex: IgcExample, responder_style) -> TurnContext:
    """Map an IGC tuple to a turn-3 context: history is the context
    utterance followed by the question; the style is caller-supplied."""
    return TurnContext(
        image_id=ex.image_id, responder_style=responder_style,
        history=[ex.context_utterance, ex.question], turn_index=3,
        gold=ex.gold_response)


def dataset_stats(examples):
    """Counts mirroring the dataset-statistics table row set."""
    images = {ex.image_id for ex in examples}
    utterances = [t["text"] for ex in examples for t in ex.turns]
    styles = {s for ex in examples for s in (ex.style_a, ex.style_b)}
    token_counts = [len(tokenize(u)) for u in utterances]
    vocab = set()
    for u in utterances:
        vocab.update(tokenize(u))
    return {
        "images": len(images),
        "dialogues": len(examples),
        "utterances": len(utterances),
        "style_types_used": len(styles),
        "vocab_size": len(vocab),
        "mean_tokens_per_utterance":
            (sum(token_counts) / len(token_counts)) if token_counts else 0.0,
    }


_STARTER_RE = re.compile(r"^\s*(who|what|when|where|why|how)($|[\s.,!?'\"])",
                         re.IGNORECASE)


def is_question_regex(text):
    """Independent regex formulation of the question heuristic (oracle)."""
    return "?" in text or bool(_STARTER_RE.match(text))
