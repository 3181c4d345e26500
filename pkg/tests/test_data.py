"""Data-layer tests: tokenization, vocabulary, dataset I/O, turn contexts,
candidate stores, the question heuristic, the transfer adapter, and the
image-feature container."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imagechat.data import (DialogueExample, IgcExample, StyleCatalog,
                            TurnContext, Vocabulary, build_candidate_store,
                            build_vocab, dataset_stats, detokenize,
                            igc_adapt, is_question, is_question_regex,
                            load_dataset, load_igc, make_turn_contexts,
                            save_dataset, tokenize)
from imagechat.features import FeatureStore

from conftest import make_catalog, make_examples


class TestTokenize:
    def test_punctuation_split(self):
        assert tokenize("I'm so thankful!") == \
            ["i", "'", "m", "so", "thankful", "!"]

    def test_lowercase_and_whitespace(self):
        assert tokenize("The  CAT\tsat") == ["the", "cat", "sat"]

    def test_quotes_and_question(self):
        assert tokenize('"Really?"') == ['"', "really", "?", '"']

    def test_empty(self):
        assert tokenize("") == []

    def test_detokenize_inverse_on_own_output(self):
        # detokenize . tokenize is idempotent: re-tokenizing the joined
        # form reproduces the same token list
        toks = tokenize("Wow, what a day! Isn't it?")
        assert tokenize(detokenize(toks)) == toks

    @given(st.text(alphabet="abc .,!?'\" ", max_size=30))
    @settings(max_examples=100, deadline=None)
    def test_tokenize_idempotent_property(self, text):
        toks = tokenize(text)
        assert tokenize(detokenize(toks)) == toks


class TestIsQuestion:
    # 30-string labelled fixture exercising both detection branches
    FIXTURE = [
        ("What is that?", True),
        ("what a view", True),
        ("Who took this", True),
        ("When was this taken", True),
        ("Where are we", True),
        ("Why so serious", True),
        ("How did you find it", True),
        ("Is this real?", True),
        ("tell me more?", True),
        ("HOW interesting", True),
        ("  what now", True),
        ("what?", True),
        ("who's there", True),
        ("when, exactly", True),
        ("really? no way", True),
        ("I wonder what it is?", True),
        ("how.", True),
        ("Whereabouts did you go?", True),
        ("That is lovely", False),
        ("I love this photo", False),
        ("whatever you say", False),
        ("whoever did this is great", False),
        ("howling wind tonight", False),
        ("wherever we go", False),
        ("the weather is nice", False),
        ("amazing shot!", False),
        ("so peaceful here.", False),
        ("i know the answer", False),
        ("", False),
        ("nice", False),
    ]

    def test_fixture_labels(self):
        for text, expected in self.FIXTURE:
            assert is_question(text) == expected, text

    def test_regex_oracle_agrees_on_fixture(self):
        for text, _ in self.FIXTURE:
            assert is_question(text) == is_question_regex(text), text

    @given(st.text(alphabet="abcdefghijklmnopqrstuvwxyz ?.,'\"!", max_size=40))
    @settings(max_examples=200, deadline=None)
    def test_regex_oracle_agrees_property(self, text):
        assert is_question(text) == is_question_regex(text)


class TestStyleCatalog:
    def test_roundtrip(self, tmp_path):
        cat = make_catalog()
        path = tmp_path / "styles.tsv"
        cat.save(path)
        loaded = StyleCatalog.load(path)
        assert loaded.traits == cat.traits

    def test_trait_lookup(self):
        cat = StyleCatalog([("Sweet", "positive"), ("Gloomy", "negative")])
        assert cat.trait_id("Gloomy") == 1
        assert cat.trait_class("Sweet") == "positive"
        assert "Sweet" in cat and "Bold" not in cat

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError):
            StyleCatalog([("Sweet", "positive"), ("Sweet", "positive")])

    def test_unknown_class_rejected(self):
        with pytest.raises(ValueError):
            StyleCatalog([("Sweet", "happy")])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            StyleCatalog([])


class TestVocabulary:
    def test_reserved_ids(self):
        v = Vocabulary(["cat", "dog"], style_traits=["Sweet"])
        assert (v.pad_id, v.start_id, v.end_id, v.sep_id, v.unk_id) \
            == (0, 1, 2, 3, 4)
        assert v.style_token_id("Sweet") == 5
        assert v.id_of("cat") == 6

    def test_unknown_maps_to_unk(self):
        v = Vocabulary(["cat"])
        assert v.id_of("zebra") == v.unk_id

    def test_decode_strips_special(self):
        v = Vocabulary(["cat"], style_traits=["Sweet"])
        ids = [v.start_id, v.style_token_id("Sweet"), v.id_of("cat"),
               v.end_id]
        assert v.decode(ids) == ["cat"]
        assert len(v.decode(ids, strip_special=False)) == 4

    def test_build_vocab_order_freq_then_lex(self):
        ex = DialogueExample(
            image_id="i", style_a="Sweet", style_b="Sweet",
            turns=[{"speaker": "A", "text": "b b a c c"}])
        v = build_vocab([ex])
        # b and c both appear twice -> lexicographic; a appears once
        assert v.id_of("b") == 5
        assert v.id_of("c") == 6
        assert v.id_of("a") == 7

    def test_min_freq_cutoff(self):
        ex = DialogueExample(
            image_id="i", style_a="S", style_b="S",
            turns=[{"speaker": "A", "text": "a a b"}])
        v = build_vocab([ex], min_freq=2)
        assert "a" in v and "b" not in v

    def test_save_load_roundtrip(self, tmp_path):
        v = Vocabulary(["cat", "dog"], style_traits=["Sweet"])
        path = tmp_path / "vocab.json"
        v.save(path)
        w = Vocabulary.load_file(path)
        assert len(w) == len(v)
        assert w.id_of("dog") == v.id_of("dog")
        assert w.style_token_id("Sweet") == v.style_token_id("Sweet")


class TestDataset:
    def test_roundtrip(self, tmp_path):
        examples = make_examples(5, seed=1)
        path = tmp_path / "data.jsonl"
        save_dataset(examples, path)
        report = load_dataset(path, make_catalog())
        assert not report.errors
        assert report.examples == examples

    def test_malformed_lines_reported_not_fatal(self, tmp_path):
        good = make_examples(1, seed=0)[0]
        path = tmp_path / "data.jsonl"
        lines = [
            "not json at all",
            json.dumps({"v": 1, "image_id": "x", "style_a": "Sweet",
                        "style_b": "Sweet",
                        "turns": [{"speaker": "B", "text": "hi"}]}),
            json.dumps({"v": 1, "image_id": "x", "style_a": "NoSuchStyle",
                        "style_b": "Sweet",
                        "turns": [{"speaker": "A", "text": "hi"}]}),
            json.dumps({"v": 1, "image_id": good.image_id,
                        "style_a": good.style_a, "style_b": good.style_b,
                        "split": good.split, "turns": good.turns}),
        ]
        path.write_text("\n".join(lines) + "\n")
        report = load_dataset(path, make_catalog())
        assert len(report.examples) == 1
        assert report.examples[0] == good
        assert [ln for ln, _ in report.errors] == [1, 2, 3]

    def test_speaker_alternation_enforced(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text(json.dumps({
            "image_id": "i", "style_a": "Sweet", "style_b": "Sweet",
            "turns": [{"speaker": "A", "text": "a"},
                      {"speaker": "A", "text": "b"}]}) + "\n")
        report = load_dataset(path)
        assert not report.examples and len(report.errors) == 1

    def test_stats(self):
        examples = make_examples(4, seed=2)
        stats = dataset_stats(examples)
        assert stats["dialogues"] == 4
        assert stats["utterances"] == sum(len(e.turns) for e in examples)
        assert stats["images"] == len({e.image_id for e in examples})
        assert stats["mean_tokens_per_utterance"] > 0


class TestTurnContexts:
    def test_three_turns(self):
        ex = make_examples(1, seed=3)[0]
        ctxs = make_turn_contexts(ex)
        assert len(ctxs) == 3
        assert ctxs[0].history == []
        assert ctxs[1].history == [ex.turns[0]["text"]]
        assert ctxs[2].history == [t["text"] for t in ex.turns[:2]]
        assert [c.gold for c in ctxs] == [t["text"] for t in ex.turns]

    def test_style_alternates_speakers(self):
        ex = make_examples(1, seed=3)[0]
        ctxs = make_turn_contexts(ex)
        assert ctxs[0].responder_style == ex.style_a
        assert ctxs[1].responder_style == ex.style_b
        assert ctxs[2].responder_style == ex.style_a

    def test_turn_index_consistency_enforced(self):
        with pytest.raises(ValueError):
            TurnContext(image_id="i", responder_style="Sweet",
                        history=["a", "b"], turn_index=2)


class TestCandidateStore:
    def test_dedup_first_seen_order(self):
        t = lambda s: [{"speaker": "A", "text": s}]
        exs = [DialogueExample("i1", "S", "S", t("hello")),
               DialogueExample("i2", "S", "S", t("world")),
               DialogueExample("i3", "S", "S", t("hello"))]
        assert build_candidate_store(exs, 1) == ["hello", "world"]

    def test_turn_selects_row(self):
        ex = make_examples(1, seed=4)[0]
        assert build_candidate_store([ex], 2) == [ex.turns[1]["text"]]

    def test_short_dialogues_skipped(self):
        ex = DialogueExample("i", "S", "S",
                             [{"speaker": "A", "text": "only"}])
        assert build_candidate_store([ex], 3) == []


class TestIgc:
    def test_load_and_adapt(self, tmp_path):
        path = tmp_path / "igc.jsonl"
        path.write_text(json.dumps({
            "image_id": "img9", "context": "a lovely beach",
            "question": "where is this?", "response": "hawaii"}) + "\n")
        report = load_igc(path)
        assert not report.errors
        ctx = igc_adapt(report.examples[0], "Sweet")
        assert ctx.turn_index == 3
        assert ctx.history == ["a lovely beach", "where is this?"]
        assert ctx.responder_style == "Sweet"
        assert ctx.gold == "hawaii"

    def test_empty_field_reported(self, tmp_path):
        path = tmp_path / "igc.jsonl"
        path.write_text(json.dumps({
            "image_id": "i", "context": "", "question": "q",
            "response": "r"}) + "\n")
        report = load_igc(path)
        assert not report.examples and len(report.errors) == 1


class TestFeatureStore:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(5)
        ids = [f"img{i}" for i in range(6)]
        mat = rng.normal(size=(6, 32)).astype(np.float32)
        store = FeatureStore(ids, mat)
        path = tmp_path / "feats.bin"
        store.save(path)
        loaded = FeatureStore.load(path)
        assert loaded.image_ids == ids
        assert np.array_equal(loaded.matrix, mat)
        assert loaded.matrix.dtype == np.float32

    def test_magic_header(self, tmp_path):
        store = FeatureStore(["a"], np.zeros((1, 4), dtype=np.float32))
        path = tmp_path / "f.bin"
        store.save(path)
        assert path.read_bytes()[:8] == b"IMFEAT01"

    def test_lookup(self):
        mat = np.arange(8, dtype=np.float32).reshape(2, 4)
        store = FeatureStore(["a", "b"], mat)
        assert np.array_equal(store.get("b"), mat[1])
        assert np.array_equal(store.batch(["b", "a"]), mat[[1, 0]])
        with pytest.raises(KeyError):
            store.get("c")

    def test_nonfinite_rejected(self):
        mat = np.zeros((1, 4), dtype=np.float32)
        mat[0, 0] = np.nan
        with pytest.raises(ValueError):
            FeatureStore(["a"], mat)

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError):
            FeatureStore(["a", "a"], np.zeros((2, 4), dtype=np.float32))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"WRONGMAG" + b"\x00" * 32)
        with pytest.raises(ValueError):
            FeatureStore.load(path)
