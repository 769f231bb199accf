"""Teacher scoring of the unlabeled pool and construction of the pseudo-labeled set D'."""

from __future__ import annotations

import hashlib
import json
import os
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .corpus import Example, LabeledDataset, UnlabeledPool
from .errors import IdCollision
from .model import ClassifierModel, argmax_lowest, predict_proba


@dataclass(frozen=True, eq=False)
class ScoredPool:
    ids: tuple
    labels: np.ndarray
    confidence: np.ndarray
    probs: np.ndarray
    examples: tuple = ()

    def __len__(self):
        return len(self.ids)

    @property
    def num_classes(self) -> int:
        return self.probs.shape[1]


@dataclass(frozen=True, eq=False)
class PseudoLabeledDataset:
    examples: tuple
    labels: np.ndarray
    confidence: np.ndarray
    num_classes: int
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.examples)

    @property
    def ids(self) -> list[str]:
        return [ex.id for ex in self.examples]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for ex, y in zip(self.examples, self.labels):
            h.update(f"{ex.id}\x1f{int(y)}\x1e".encode())
        return h.hexdigest()

    def as_labeled(self, label_names=None) -> LabeledDataset:
        return LabeledDataset(self.examples, self.labels, self.num_classes, label_names)


def label_pool(teacher: ClassifierModel, pool: UnlabeledPool) -> ScoredPool:
    """Score every pool example; label = argmax (ties to the lowest class)."""
    if len(pool) == 0:
        probs = np.zeros((0, teacher.num_classes))
    else:
        probs = predict_proba(teacher, pool)
    labels = argmax_lowest(probs) if len(pool) else np.zeros(0, dtype=np.int64)
    confidence = probs.max(axis=1) if len(pool) else np.zeros(0)
    return ScoredPool(tuple(pool.ids), labels, confidence, probs, tuple(pool.examples))


def _provenance(scored: ScoredPool, strategy: str, k, teacher_hash: str | None, pool_hash):
    return {"teacher": teacher_hash, "strategy": strategy, "k": k, "pool": pool_hash,
            "pool_size": len(scored)}


def select_naive(scored: ScoredPool, teacher_hash: str | None = None,
                 pool_hash: str | None = None) -> PseudoLabeledDataset:
    """D' = the whole pool with the teacher's argmax labels."""
    return PseudoLabeledDataset(scored.examples, scored.labels.copy(), scored.confidence.copy(),
                                scored.num_classes,
                                _provenance(scored, "naive", None, teacher_hash, pool_hash))


def rank_by_class(scored: ScoredPool) -> list[np.ndarray]:
    """Per class l, pool indices ordered by P(l) descending, then id ascending."""
    id_rank = np.empty(len(scored), dtype=np.int64)
    id_rank[np.argsort(np.array(scored.ids, dtype=object), kind="stable")] = np.arange(len(scored))
    return [np.lexsort((id_rank, -scored.probs[:, c])) for c in range(scored.num_classes)]


def top_k_assignment(scored: ScoredPool, k: int) -> list[list[int]]:
    """Per-class selected pool indices, in rank order.

    Every class takes its top ``k`` of ``rank_by_class``. An example claimed
    by several classes stays with the class giving it the higher probability
    (ties to the lower class index); the losing class moves on to its next
    candidate. Repeats until no example is claimed twice.
    """
    if k < 1:
        raise ValueError("K must be >= 1")
    n, C = len(scored), scored.num_classes
    ranked = rank_by_class(scored)
    probs = scored.probs
    holder = np.full(n, -1, dtype=np.int64)
    ptr = [0] * C
    count = [0] * C
    queue = deque(range(C))
    while queue:
        c = queue.popleft()
        while count[c] < min(k, n) and ptr[c] < n:
            e = int(ranked[c][ptr[c]])
            ptr[c] += 1
            h = holder[e]
            if h == -1:
                holder[e] = c
                count[c] += 1
            elif probs[e, c] > probs[e, h] or (probs[e, c] == probs[e, h] and c < h):
                holder[e] = c
                count[c] += 1
                count[h] -= 1
                queue.append(h)
    rank_pos = [np.empty(n, dtype=np.int64) for _ in range(C)]
    for c in range(C):
        rank_pos[c][ranked[c]] = np.arange(n)
    selected = []
    for c in range(C):
        members = np.flatnonzero(holder == c)
        selected.append(members[np.argsort(rank_pos[c][members])].tolist())
    return selected


def select_top_k(scored: ScoredPool, k: int, teacher_hash: str | None = None,
                 pool_hash: str | None = None) -> PseudoLabeledDataset:
    """Top-K most probable examples per class; label = the class selected for."""
    selected = top_k_assignment(scored, k)
    order = [(e, c) for c, members in enumerate(selected) for e in members]
    idx = np.array([e for e, _ in order], dtype=np.int64)
    labels = np.array([c for _, c in order], dtype=np.int64)
    examples = tuple(scored.examples[e] for e in idx) if scored.examples else ()
    return PseudoLabeledDataset(examples, labels, scored.confidence[idx], scored.num_classes,
                                _provenance(scored, "top_k", k, teacher_hash, pool_hash))


def merge(d: LabeledDataset, d_prime: PseudoLabeledDataset) -> LabeledDataset:
    """D followed by D' (pseudo labels), as one labeled dataset."""
    clash = set(d.ids) & set(d_prime.ids)
    if clash:
        raise IdCollision(clash)
    if len(d_prime) and d_prime.num_classes != d.num_classes:
        raise ValueError("D and D' disagree on the number of classes")
    labels = np.concatenate([d.labels, d_prime.labels]).astype(np.int64)
    return LabeledDataset(d.examples + tuple(d_prime.examples), labels, d.num_classes, d.label_names)


def save_pseudo(d_prime: PseudoLabeledDataset, path, label_names=None):
    """Write D' as JSONL plus a ``<path>.provenance.json`` sidecar."""
    with open(path, "w", encoding="utf-8") as f:
        for ex, y, conf in zip(d_prime.examples, d_prime.labels, d_prime.confidence):
            label = label_names[y] if label_names else int(y)
            f.write(json.dumps({"id": ex.id, "text": ex.text, "pseudo_label": label,
                                "confidence": float(conf)}, ensure_ascii=False) + "\n")
    side = {**d_prime.provenance, "num_classes": d_prime.num_classes, "size": len(d_prime),
            "label_names": list(label_names) if label_names else None}
    with open(sidecar_path(path), "w", encoding="utf-8") as f:
        json.dump(side, f, indent=2, sort_keys=True)


def sidecar_path(path) -> str:
    root, _ = os.path.splitext(str(path))
    return root + ".provenance.json"


def load_pseudo(path) -> PseudoLabeledDataset:
    with open(sidecar_path(path), encoding="utf-8") as f:
        side = json.load(f)
    names = side.pop("label_names")
    num_classes = side.pop("num_classes")
    side.pop("size", None)
    index = {n: i for i, n in enumerate(names)} if names else None
    examples, labels, conf = [], [], []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            row = json.loads(line)
            examples.append(Example(row["id"], row["text"]))
            labels.append(index[row["pseudo_label"]] if index else int(row["pseudo_label"]))
            conf.append(row["confidence"])
    return PseudoLabeledDataset(tuple(examples), np.array(labels, dtype=np.int64),
                                np.array(conf, dtype=float), num_classes, side)
