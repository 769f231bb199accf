import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selftrain.corpus import (
    MASK, PAD, SPECIALS, UNK, Example, LabeledDataset, Vocab, build_vocab, load_jsonl,
    sample_labeled_subset, sample_pool, tokenize, vectorize, write_jsonl,
)
from selftrain.errors import EmptyText, InsufficientClass, MalformedLine, UnknownLabel


def _write(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write((row if isinstance(row, str) else json.dumps(row)) + "\n")
    return path


class TestTokenize:
    @pytest.mark.parametrize("text, expected", [
        ("Good movie!", ["good", "movie", "!"]),
        ("", []),
        ("don't stop", ["don't", "stop"]),
        ("  (Wow),  ", ["(", "wow", ")", ","]),
        ("...", [".", ".", "."]),
        ("«Bonjour»", ["«", "bonjour", "»"]),
    ])
    def test_rules(self, text, expected):
        assert tokenize(text) == expected

    @given(st.text(max_size=60))
    def test_pure_and_lowercase(self, text):
        toks = tokenize(text)
        assert toks == tokenize(text)
        assert all(t and t == t.lower() and not any(c.isspace() for c in t) for t in toks)


class TestBuildVocab:
    def test_enumeration(self):
        v = build_vocab([tokenize("a a b")], max_size=10, min_freq=1)
        assert v.itos == list(SPECIALS) + ["a", "b"]

    def test_min_freq_filter(self):
        assert build_vocab([tokenize("a b")], max_size=10, min_freq=2).itos == list(SPECIALS)

    def test_lexicographic_tie_break(self):
        v = build_vocab([["y", "x"] * 3], max_size=4, min_freq=1)
        assert v.itos == list(SPECIALS) + ["x"]

    def test_specials_in_text_map_to_unk(self):
        v = build_vocab([["<pad>", "<mask>", "a"]], max_size=10)
        assert v["<pad>"] == UNK and v["<mask>"] == UNK and v["a"] == 3

    def test_round_trip(self, tmp_path):
        v = build_vocab([tokenize("the cat sat on the mat")])
        v.save(tmp_path / "v.json")
        w = Vocab.load(tmp_path / "v.json")
        assert w.itos == v.itos and w.hash == v.hash

    @given(st.lists(st.lists(st.sampled_from("abcdefg"), max_size=8), max_size=8),
           st.integers(4, 8), st.integers(1, 3))
    def test_invariants(self, corpus, max_size, min_freq):
        v = build_vocab(corpus, max_size, min_freq)
        counts = {}
        for doc in corpus:
            for t in doc:
                counts[t] = counts.get(t, 0) + 1
        assert v.itos[:3] == list(SPECIALS)
        assert len(v) <= max_size
        assert all(counts[t] >= min_freq for t in v.itos[3:])
        assert [v[t] for t in v.itos[3:]] == list(range(3, len(v)))


class TestLoadJsonl:
    def test_labeled(self, tmp_path):
        p = _write(tmp_path / "d.jsonl", [{"text": "good movie", "label": "pos"},
                                          {"text": "bad movie", "label": "neg"},
                                          {"text": "fine", "label": "pos"}])
        ds = load_jsonl(p, True)
        assert len(ds) == 3 and ds.num_classes == 2
        assert ds.label_names == ("neg", "pos")
        assert ds.labels.tolist() == [1, 0, 1]
        assert ds.ids == ["d.jsonl:1", "d.jsonl:2", "d.jsonl:3"]

    def test_deterministic(self, tmp_path):
        p = _write(tmp_path / "d.jsonl", [{"id": "x", "text": "a", "label": "p"}])
        a, b = load_jsonl(p, True), load_jsonl(p, True)
        assert a.content_hash() == b.content_hash()

    @pytest.mark.parametrize("row", ['{"text": "no label"}', "not json", '{"label": "pos"}'])
    def test_malformed(self, tmp_path, row):
        p = _write(tmp_path / "d.jsonl", [row])
        with pytest.raises(MalformedLine) as exc:
            load_jsonl(p, True)
        assert exc.value.line_no == 1

    def test_duplicate_id(self, tmp_path):
        p = _write(tmp_path / "d.jsonl", [{"id": "a", "text": "x"}, {"id": "a", "text": "y"}])
        with pytest.raises(MalformedLine):
            load_jsonl(p, False)

    def test_unknown_label(self, tmp_path):
        p = _write(tmp_path / "d.jsonl", [{"text": "x", "label": "meh"}])
        with pytest.raises(UnknownLabel):
            load_jsonl(p, True, ["neg", "pos"])

    def test_empty_text(self, tmp_path):
        p = _write(tmp_path / "d.jsonl", [{"text": "ok", "label": "a"}, {"text": "   ", "label": "a"}])
        with pytest.raises(EmptyText) as exc:
            load_jsonl(p, True)
        assert exc.value.line_no == 2

    def test_label_map_order(self, tmp_path):
        p = _write(tmp_path / "d.jsonl", [{"text": "x", "label": "pos"}])
        ds = load_jsonl(p, True, ["pos", "neg"])
        assert ds.labels.tolist() == [0] and ds.num_classes == 2


class TestVectorize:
    def test_unk(self):
        vocab = build_vocab([["good"]])
        ds = vectorize(LabeledDataset((Example("a", "good zzz"),), [0], 1), vocab)
        assert ds.examples[0].tokens.tolist() == [vocab["good"], UNK]

    def test_truncation(self):
        vocab = build_vocab([["w"]])
        text = " ".join(["w"] * 300)
        ds = vectorize(LabeledDataset((Example("a", text),), [0], 1), vocab)
        assert len(ds.examples[0].tokens) == 256

    @given(st.lists(st.text(alphabet="ab c!<>", min_size=1, max_size=20), min_size=1, max_size=5))
    def test_no_pad_or_mask(self, texts):
        texts = [t for t in texts if tokenize(t)]
        if not texts:
            return
        vocab = build_vocab(tokenize(t) for t in texts[:2])
        ds = vectorize(LabeledDataset(tuple(Example(str(i), t) for i, t in enumerate(texts)),
                                      [0] * len(texts), 1), vocab)
        flat, _ = ds.packed
        assert PAD not in flat and MASK not in flat


class TestSampling:
    def _balanced(self, n, C=2):
        return LabeledDataset(tuple(Example(str(i), "t") for i in range(n)), np.arange(n) % C, C)

    def test_stratified(self):
        sub = sample_labeled_subset(self._balanced(100), 10, seed=7)
        assert sub.class_counts().tolist() == [5, 5]

    def test_deterministic(self):
        ds = self._balanced(100)
        assert sample_labeled_subset(ds, 10, 7).ids == sample_labeled_subset(ds, 10, 7).ids

    def test_floor_per_class(self):
        sub = sample_labeled_subset(self._balanced(30, C=3), 10, seed=0)
        assert len(sub) == 9 and sub.class_counts().tolist() == [3, 3, 3]

    def test_insufficient_class(self):
        ds = LabeledDataset(tuple(Example(str(i), "t") for i in range(10)), [0] * 9 + [1], 2)
        with pytest.raises(InsufficientClass):
            sample_labeled_subset(ds, 6, 0)

    @settings(max_examples=50)
    @given(st.integers(2, 4), st.integers(1, 10), st.integers(0, 2**32 - 1))
    def test_exact_stratification(self, C, per, seed):
        ds = self._balanced(C * 12, C)
        sub = sample_labeled_subset(ds, per * C, seed)
        assert sub.class_counts().tolist() == [per] * C
        assert len(set(sub.ids)) == len(sub)

    def test_pool_sample(self):
        from selftrain.corpus import UnlabeledPool
        pool = UnlabeledPool(tuple(Example(str(i), "t") for i in range(50)))
        a = sample_pool(pool, 20, 3)
        assert len(a) == 20 and a.ids == sample_pool(pool, 20, 3).ids
        assert sample_pool(pool, 80, 3) is pool


def test_write_jsonl_round_trip(tmp_path):
    rows = [{"id": "a", "text": "héllo", "label": "x"}]
    write_jsonl(tmp_path / "r.jsonl", rows)
    ds = load_jsonl(tmp_path / "r.jsonl", True)
    assert ds.examples[0].text == "héllo"
