"""Masked-token pretraining of the embedding table on an unlabeled pool.

For every document a seeded subset of ``ceil(mask_rate * len)`` positions is
masked. Each masked token is predicted from the mean embedding of the
unmasked tokens within ``context_window`` positions, scored against the
target and ``negative_samples`` noise tokens (unigram^0.75) with a softmax
over those ``k + 1`` candidates. Masks and negatives are redrawn every epoch
from ``(seed, epoch)``.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint, kernels
from .corpus import SPECIALS, UnlabeledPool, Vocab, vectorize
from .errors import EmptyPool, ShapeMismatch, VocabHashMismatch
from .model import INIT_SCALE, ClassifierModel

log = logging.getLogger(__name__)


@dataclass
class PretrainConfig:
    mask_rate: float = 0.15
    context_window: int = 5
    epochs: int = 5
    learning_rate: float = 0.05
    seed: int = 0
    negative_samples: int = 10
    dim: int = 64

    def __post_init__(self):
        if not 0 < self.mask_rate < 1:
            raise ValueError("mask_rate must lie in (0, 1)")
        if self.context_window < 1:
            raise ValueError("context_window must be >= 1")
        if self.negative_samples < 1 or self.epochs < 0:
            raise ValueError("negative_samples must be >= 1 and epochs >= 0")


@dataclass(eq=False)
class PretrainedInit:
    E: np.ndarray
    vocab_hash: str
    provenance: list = field(default_factory=list)
    final_loss: float = float("nan")
    loss_history: list = field(default_factory=list)
    out: np.ndarray | None = None

    def to_bytes(self) -> bytes:
        meta = {"provenance": self.provenance, "final_loss": self.final_loss,
                "loss_history": self.loss_history, "has_out": self.out is not None}
        arrays = [self.E] + ([self.out] if self.out is not None else [])
        return checkpoint.dumps(checkpoint.INIT_TAG, self.vocab_hash, meta, arrays)

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def save_init(init: PretrainedInit, path):
    with open(path, "wb") as f:
        f.write(init.to_bytes())


def load_init(path, vocab: Vocab | None = None) -> PretrainedInit:
    vocab_hash, meta, arrays = checkpoint.read(path, checkpoint.INIT_TAG,
                                               vocab.hash if vocab is not None else None)
    out = arrays[1] if meta.get("has_out") else None
    return PretrainedInit(arrays[0], vocab_hash, list(meta["provenance"]), meta["final_loss"],
                          list(meta["loss_history"]), out)


def noise_distribution(flat: np.ndarray, vocab_size: int, power: float = 0.75) -> np.ndarray:
    counts = np.bincount(flat, minlength=vocab_size).astype(float)
    counts[: len(SPECIALS)] = 0.0
    if counts.sum() == 0:
        counts[len(SPECIALS):] = 1.0
    weights = counts ** power
    return weights / weights.sum()


def draw_masks(offsets: np.ndarray, mask_rate: float, rng) -> np.ndarray:
    """Boolean mask with exactly ceil(mask_rate * len) positions per document."""
    lens = np.diff(offsets)
    doc_of = np.repeat(np.arange(len(lens)), lens)
    keys = rng.random(offsets[-1])
    order = np.lexsort((keys, doc_of))
    rank = np.empty(offsets[-1], dtype=np.int64)
    rank[order] = np.arange(offsets[-1]) - np.repeat(offsets[:-1], lens)
    n_mask = np.ceil(mask_rate * lens).astype(np.int64)
    return rank < np.repeat(n_mask, lens)


def pretrain(pool: UnlabeledPool, vocab: Vocab, cfg: PretrainConfig,
             init: PretrainedInit | None = None) -> PretrainedInit:
    """Return embeddings trained on ``pool``; ``init`` continues from earlier pretraining.

    ``loss_history[0]`` is the loss of the starting embeddings on epoch 0's
    masks, before any update; entry ``e >= 1`` is the mean training loss of
    epoch ``e``.
    """
    if len(pool) == 0:
        raise EmptyPool("cannot pretrain on an empty pool")
    if not pool.vectorized:
        pool = vectorize(pool, vocab)
    flat, offsets = pool.packed
    V = len(vocab)
    if init is not None:
        if init.vocab_hash != vocab.hash:
            raise VocabHashMismatch("init was trained on a different vocabulary")
        if init.E.shape != (V, cfg.dim):
            raise ShapeMismatch(f"init shape {init.E.shape} != {(V, cfg.dim)}")
        emb = init.E.copy()
        out = init.out.copy() if init.out is not None else np.zeros_like(emb)
    else:
        rng0 = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xE4B]))
        emb = rng0.uniform(-INIT_SCALE, INIT_SCALE, size=(V, cfg.dim))
        out = np.zeros_like(emb)

    noise_cdf = np.cumsum(noise_distribution(flat, V))
    noise_cdf[-1] = 1.0
    doc_of = np.repeat(np.arange(len(pool), dtype=np.int64), np.diff(offsets))
    k = cfg.negative_samples

    def epoch_inputs(epoch):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch]))
        masked = draw_masks(offsets, cfg.mask_rate, rng)
        positions = rng.permutation(np.flatnonzero(masked)).astype(np.int64)
        negatives = np.searchsorted(noise_cdf, rng.random((len(positions), k)), side="right")
        return masked.astype(np.uint8), positions, negatives.astype(np.int64)

    masked, positions, negatives = epoch_inputs(0)
    total, used = kernels.cbow_epoch(emb, out, flat, doc_of, offsets, masked, positions, negatives,
                                     cfg.context_window, 0.0, 0.0, False)
    history = [float(total / max(used, 1))]
    floor = cfg.learning_rate * 1e-4
    for epoch in range(cfg.epochs):
        if epoch > 0:
            masked, positions, negatives = epoch_inputs(epoch)
        lr_a = max(floor, cfg.learning_rate * (1 - epoch / cfg.epochs))
        lr_b = max(floor, cfg.learning_rate * (1 - (epoch + 1) / cfg.epochs))
        total, used = kernels.cbow_epoch(emb, out, flat, doc_of, offsets, masked, positions,
                                         negatives, cfg.context_window, lr_a, lr_b, True)
        history.append(float(total / max(used, 1)))
        if not (math.isfinite(history[-1]) and np.isfinite(emb).all()):
            raise FloatingPointError(f"pretraining diverged in epoch {epoch}")
        log.debug("pretrain epoch %d loss %.4f", epoch + 1, history[-1])

    provenance = (list(init.provenance) if init is not None else []) + [pool.content_hash()]
    return PretrainedInit(emb, vocab.hash, provenance, history[-1], history, out)


def apply_init(model: ClassifierModel, init: PretrainedInit) -> ClassifierModel:
    """Copy of ``model`` with its embedding table replaced by ``init.E``."""
    if init.vocab_hash != model.vocab_hash:
        raise VocabHashMismatch("init and model use different vocabularies")
    if init.E.shape != model.E.shape:
        raise ShapeMismatch(f"init embeddings {init.E.shape} != model {model.E.shape}")
    new = model.copy()
    new.E = np.array(init.E, dtype=np.float64, order="C", copy=True)
    new.init = "pretrained"
    new.provenance = list(init.provenance)
    return new
