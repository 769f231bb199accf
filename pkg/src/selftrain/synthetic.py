"""Synthetic binary (or C-class) bag-of-words task for trend experiments.

Each class c draws tokens i.i.d. from

    p_c = shared_mass * z + (1 - shared_mass) * q_c,
    q_c(w) ∝ z(w) * exp(signal * polarity_c * s(w))

over a fixed vocabulary, where z is a Zipf base distribution, s(w) a
per-token standard-normal score and polarity_c spreads classes evenly over
[-1, 1]. Document lengths are uniform in ``doc_len``. ``signal`` sets task
difficulty; the default keeps small-|D| teachers well below the Bayes rate.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .corpus import Example, LabeledDataset, UnlabeledPool, write_jsonl


@dataclass
class SyntheticTask:
    vocab_size: int = 2000
    num_classes: int = 2
    shared_mass: float = 0.3
    signal: float = 0.25
    zipf_exponent: float = 1.0
    doc_len: tuple = (30, 80)
    seed: int = 0

    def __post_init__(self):
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0xD15C]))
        ranks = rng.permutation(self.vocab_size) + 1
        z = ranks.astype(float) ** -self.zipf_exponent
        self.base = z / z.sum()
        self.scores = rng.standard_normal(self.vocab_size)
        polarity = np.linspace(-1.0, 1.0, self.num_classes) if self.num_classes > 1 else np.zeros(1)
        dists = []
        for pol in polarity:
            q = self.base * np.exp(self.signal * pol * self.scores)
            q /= q.sum()
            dists.append(self.shared_mass * self.base + (1 - self.shared_mass) * q)
        self.dists = np.array(dists)
        self.cdfs = np.cumsum(self.dists, axis=1)
        self.cdfs[:, -1] = 1.0
        self.tokens = [f"w{i:04d}" for i in range(self.vocab_size)]

    def sample(self, n: int, stream: str, balanced: bool = True):
        """Draw ``n`` documents; returns (token-index lists, labels)."""
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, *stream.encode()]))
        if balanced:
            labels = np.resize(np.arange(self.num_classes), n)
            rng.shuffle(labels)
        else:
            labels = rng.integers(0, self.num_classes, size=n)
        lens = rng.integers(self.doc_len[0], self.doc_len[1] + 1, size=n)
        docs = [np.searchsorted(self.cdfs[y], rng.random(k), side="right") for y, k in zip(labels, lens)]
        return docs, labels

    def _examples(self, docs, prefix):
        return tuple(Example(f"{prefix}-{i:06d}", " ".join(self.tokens[t] for t in doc))
                     for i, doc in enumerate(docs))

    def labeled(self, n: int, stream: str) -> LabeledDataset:
        docs, labels = self.sample(n, stream)
        names = tuple(f"c{c}" for c in range(self.num_classes))
        return LabeledDataset(self._examples(docs, stream), labels, self.num_classes, names)

    def pool(self, n: int, stream: str = "pool") -> UnlabeledPool:
        docs, _ = self.sample(n, stream, balanced=False)
        return UnlabeledPool(self._examples(docs, stream))

    def pool_with_labels(self, n: int, stream: str = "pool") -> LabeledDataset:
        """The pool together with its hidden generating classes (oracle use only)."""
        docs, labels = self.sample(n, stream, balanced=False)
        names = tuple(f"c{c}" for c in range(self.num_classes))
        return LabeledDataset(self._examples(docs, stream), labels, self.num_classes, names)

    def bayes_accuracy(self, docs, labels) -> float:
        logp = np.log(self.dists)
        scores = np.array([logp[:, doc].sum(axis=1) for doc in docs])
        return float(np.mean(np.argmax(scores, axis=1) == labels))

    def write(self, out_dir, n_train=4000, n_dev=500, n_test=2000, n_pool=20000):
        """Write train/dev/test/pool JSONL files; returns their paths."""
        os.makedirs(out_dir, exist_ok=True)
        paths = {}
        for name, n in (("train", n_train), ("dev", n_dev), ("test", n_test)):
            ds = self.labeled(n, name)
            paths[name] = os.path.join(out_dir, f"{name}.jsonl")
            write_jsonl(paths[name], ({"id": ex.id, "text": ex.text, "label": ds.label_names[y]}
                                      for ex, y in zip(ds.examples, ds.labels)))
        pool = self.pool(n_pool)
        paths["pool"] = os.path.join(out_dir, "pool.jsonl")
        write_jsonl(paths["pool"], ({"id": ex.id, "text": ex.text} for ex in pool.examples))
        return paths
