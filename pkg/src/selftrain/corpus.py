"""Dataset ingestion, tokenization, vocabulary and stratified subsampling."""

from __future__ import annotations

import hashlib
import json
import os
import string
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyText, InsufficientClass, MalformedLine, UnknownLabel

PAD, UNK, MASK = 0, 1, 2
SPECIALS = ("<pad>", "<unk>", "<mask>")
DEFAULT_MAX_LEN = 256


@dataclass(frozen=True, eq=False)
class Example:
    id: str
    text: str
    tokens: np.ndarray | None = None


def _pack(examples: Sequence[Example]):
    lens = np.array([len(ex.tokens) for ex in examples], dtype=np.int64)
    offsets = np.zeros(len(examples) + 1, dtype=np.int64)
    np.cumsum(lens, out=offsets[1:])
    if examples:
        flat = np.concatenate([ex.tokens for ex in examples]).astype(np.int64)
    else:
        flat = np.zeros(0, dtype=np.int64)
    return flat, offsets


class _Examples:
    examples: tuple

    def __len__(self):
        return len(self.examples)

    @property
    def ids(self) -> list[str]:
        return [ex.id for ex in self.examples]

    @property
    def vectorized(self) -> bool:
        return all(ex.tokens is not None for ex in self.examples)

    @cached_property
    def packed(self) -> tuple[np.ndarray, np.ndarray]:
        """Concatenated token ids and per-document offsets (len n+1)."""
        if not self.vectorized:
            raise ValueError("dataset is not vectorized")
        return _pack(self.examples)


@dataclass(frozen=True, eq=False)
class LabeledDataset(_Examples):
    examples: tuple
    labels: np.ndarray
    num_classes: int
    label_names: tuple | None = None

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        labels.setflags(write=False)
        object.__setattr__(self, "examples", tuple(self.examples))
        object.__setattr__(self, "labels", labels)
        if len(labels) != len(self.examples):
            raise ValueError("labels and examples differ in length")
        if len(labels) and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, indices) -> LabeledDataset:
        indices = list(indices)
        return LabeledDataset(
            tuple(self.examples[i] for i in indices),
            self.labels[indices] if indices else np.zeros(0, dtype=np.int64),
            self.num_classes,
            self.label_names,
        )

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for ex, y in zip(self.examples, self.labels):
            h.update(f"{ex.id}\x1f{ex.text}\x1f{int(y)}\x1e".encode())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class UnlabeledPool(_Examples):
    examples: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))

    def subset(self, indices) -> UnlabeledPool:
        return UnlabeledPool(tuple(self.examples[i] for i in indices))

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for ex in self.examples:
            h.update(f"{ex.id}\x1f{ex.text}\x1e".encode())
        return h.hexdigest()


def _is_punct(ch: str) -> bool:
    return ch in string.punctuation or unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, peel leading/trailing punctuation.

    Each peeled punctuation character becomes its own token; punctuation
    inside a word (``don't``) is kept.

    >>> tokenize("Good movie!")
    ['good', 'movie', '!']
    """
    out = []
    for chunk in text.lower().split():
        i, j = 0, len(chunk)
        while i < j and _is_punct(chunk[i]):
            i += 1
        while j > i and _is_punct(chunk[j - 1]):
            j -= 1
        out.extend(chunk[:i])
        if i < j:
            out.append(chunk[i:j])
        out.extend(chunk[j:])
    return out


class Vocab:
    def __init__(self, tokens: Sequence[str], max_size: int | None = None, min_freq: int = 1):
        tokens = list(tokens)
        if tuple(tokens[:3]) != SPECIALS:
            raise ValueError("vocab must start with the special tokens")
        self.itos = tokens
        self.stoi = {t: i for i, t in enumerate(tokens)}
        if len(self.stoi) != len(tokens):
            raise ValueError("duplicate tokens in vocab")
        self.max_size = max_size if max_size is not None else len(tokens)
        self.min_freq = min_freq

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi and self.stoi[token] >= len(SPECIALS)

    def __getitem__(self, token) -> int:
        return self.stoi.get(token, UNK) if token not in SPECIALS else UNK

    def encode(self, tokens: Iterable[str]) -> np.ndarray:
        return np.array([self[t] for t in tokens], dtype=np.int64)

    @cached_property
    def hash(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode()).hexdigest()

    def to_dict(self) -> dict:
        return {"tokens": self.itos, "max_size": self.max_size, "min_freq": self.min_freq}

    @classmethod
    def from_dict(cls, data: dict) -> Vocab:
        return cls(data["tokens"], data.get("max_size"), data.get("min_freq", 1))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, ensure_ascii=False)

    @classmethod
    def load(cls, path) -> Vocab:
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def build_vocab(corpus: Iterable[Sequence[str]], max_size: int = 20000, min_freq: int = 1) -> Vocab:
    """Rank by (frequency desc, token asc), keep ``max_size - 3`` after the min_freq cut."""
    if max_size < 4:
        raise ValueError("max_size must be >= 4")
    counts = Counter()
    for seq in corpus:
        counts.update(seq)
    for special in SPECIALS:
        counts.pop(special, None)
    ranked = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    return Vocab(list(SPECIALS) + ranked[: max_size - len(SPECIALS)], max_size, min_freq)


def load_jsonl(path, labeled: bool, label_map=None):
    """Read a JSONL corpus into a LabeledDataset or an UnlabeledPool.

    ``label_map`` is an ordered list of class names (index = position) or a
    name->index dict. Without one, classes are the sorted distinct labels.
    """
    name = os.path.basename(str(path))
    rows = []
    seen = set()
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLine(line_no, str(exc)) from None
            if not isinstance(obj, dict) or not isinstance(obj.get("text"), str):
                raise MalformedLine(line_no, "missing string field 'text'")
            if labeled and "label" not in obj:
                raise MalformedLine(line_no, "missing field 'label'")
            ex_id = str(obj["id"]) if "id" in obj else f"{name}:{line_no}"
            if ex_id in seen:
                raise MalformedLine(line_no, f"duplicate id {ex_id!r}")
            seen.add(ex_id)
            if not tokenize(obj["text"]):
                raise EmptyText(line_no)
            rows.append((Example(ex_id, obj["text"]), obj.get("label")))

    examples = tuple(ex for ex, _ in rows)
    if not labeled:
        return UnlabeledPool(examples)

    if label_map is None:
        names = sorted({str(lab) for _, lab in rows})
        index = {n: i for i, n in enumerate(names)}
    elif isinstance(label_map, dict):
        index = dict(label_map)
        names = [n for n, _ in sorted(index.items(), key=lambda kv: kv[1])]
    else:
        names = list(label_map)
        index = {n: i for i, n in enumerate(names)}
    labels = []
    for _, lab in rows:
        if str(lab) not in index:
            raise UnknownLabel(lab)
        labels.append(index[str(lab)])
    return LabeledDataset(examples, np.array(labels, dtype=np.int64), len(index), tuple(names))


def vectorize(dataset, vocab: Vocab, max_len: int = DEFAULT_MAX_LEN):
    """Return a copy of ``dataset`` whose examples carry token ids."""
    out = []
    for n, ex in enumerate(dataset.examples, start=1):
        ids = vocab.encode(tokenize(ex.text)[:max_len])
        if len(ids) == 0:
            raise EmptyText(n)
        ids.setflags(write=False)
        out.append(Example(ex.id, ex.text, ids))
    if isinstance(dataset, LabeledDataset):
        return LabeledDataset(tuple(out), dataset.labels, dataset.num_classes, dataset.label_names)
    return UnlabeledPool(tuple(out))


def sample_labeled_subset(dataset: LabeledDataset, n: int, seed: int) -> LabeledDataset:
    """Exactly ``n // C`` examples per class, drawn by a seeded shuffle of each class.

    A remainder ``n % C`` is dropped. Output keeps the source order.
    """
    if n > len(dataset):
        raise ValueError(f"requested {n} examples from a dataset of {len(dataset)}")
    per_class = n // dataset.num_classes
    rng = np.random.default_rng(seed)
    chosen = []
    for label in range(dataset.num_classes):
        members = np.flatnonzero(dataset.labels == label)
        if len(members) < per_class:
            raise InsufficientClass(label, len(members), per_class)
        chosen.extend(rng.permutation(members)[:per_class].tolist())
    return dataset.subset(sorted(chosen))


def sample_pool(pool: UnlabeledPool, n: int, seed: int) -> UnlabeledPool:
    """Seeded uniform sample of ``n`` pool examples, kept in pool order."""
    if n >= len(pool):
        return pool
    rng = np.random.default_rng(seed)
    return pool.subset(sorted(rng.choice(len(pool), size=n, replace=False).tolist()))


def write_jsonl(path, rows: Iterable[dict]):
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False) + "\n")
