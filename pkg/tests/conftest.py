import numpy as np
import pytest

from imagechat.data import DialogueExample, StyleCatalog, build_vocab
from imagechat.features import FeatureStore

TRAIT_NAMES = ["Peaceful", "Sweet", "Curious", "Absentminded", "Skeptical",
               "Fearful", "Cheerful", "Blunt", "Dreamy", "Gloomy"]
TRAIT_CLASSES = ["positive", "positive", "neutral", "neutral", "neutral",
                 "negative", "positive", "negative", "neutral", "negative"]

WORDS = [f"w{i}" for i in range(40)]


def make_catalog():
    return StyleCatalog(list(zip(TRAIT_NAMES, TRAIT_CLASSES)))


def make_examples(n, seed=0, n_turns=3, words=WORDS, min_len=3, max_len=6):
    """Synthetic dialogues with distinct utterances per example."""
    rng = np.random.default_rng(seed)
    examples = []
    for i in range(n):
        turns = []
        for t in range(n_turns):
            length = int(rng.integers(min_len, max_len + 1))
            toks = list(rng.choice(words, size=length))
            # keep golds unique across the corpus so ranking is unambiguous
            toks.append(f"u{i}t{t}")
            turns.append({"speaker": "AB"[t % 2], "text": " ".join(toks)})
        examples.append(DialogueExample(
            image_id=f"img{i}",
            style_a=TRAIT_NAMES[i % len(TRAIT_NAMES)],
            style_b=TRAIT_NAMES[(i + 3) % len(TRAIT_NAMES)],
            turns=turns))
    return examples


def make_features(image_ids, seed=0):
    rng = np.random.default_rng(seed)
    return FeatureStore(list(image_ids),
                        rng.normal(size=(len(image_ids), 2048))
                        .astype(np.float32))


@pytest.fixture(scope="session")
def catalog():
    return make_catalog()


@pytest.fixture(scope="session")
def toy_corpus(catalog):
    examples = make_examples(20, seed=1)
    vocab = build_vocab(examples, style_traits=catalog.names())
    features = make_features([ex.image_id for ex in examples], seed=2)
    return examples, vocab, features
