"""Bag-of-embeddings classifier used as teacher and student.

Architecture: mean-pooled token embeddings -> dropout -> tanh hidden layer
-> softmax. Gradients are analytic; optimisation is Adam with linear warmup
and linear decay.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import checkpoint, kernels
from .corpus import LabeledDataset, Vocab
from .errors import EmptyDataset, NonFiniteLoss, ShapeMismatch, VocabMismatch

log = logging.getLogger(__name__)

PARAM_NAMES = ("E", "W1", "b1", "W2", "b2")
DECAYED = ("W1", "W2")
INIT_SCALE = 0.08


@dataclass(eq=False)
class ClassifierModel:
    E: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    vocab_hash: str
    num_classes: int
    init: str = "random"
    provenance: list = field(default_factory=list)

    @property
    def vocab_size(self) -> int:
        return self.E.shape[0]

    @property
    def dim(self) -> int:
        return self.E.shape[1]

    @property
    def hidden(self) -> int:
        return self.W1.shape[1]

    def params(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> ClassifierModel:
        return copy.deepcopy(self)

    def to_bytes(self) -> bytes:
        meta = {"num_classes": self.num_classes, "init": self.init, "provenance": self.provenance}
        return checkpoint.dumps(checkpoint.MODEL_TAG, self.vocab_hash, meta,
                                [self.E, self.W1, self.b1, self.W2, self.b2])

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    batch_size: int = 16
    max_epochs: int = 40
    early_stop_patience: int = 5
    dropout_rate: float = 0.2
    weight_decay: float = 1e-3
    seed: int = 0
    betas: tuple = (0.9, 0.98)
    eps: float = 1e-6
    warmup_frac: float = 0.03
    max_grad_norm: float | None = None

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.max_epochs < 1 or self.early_stop_patience < 1:
            raise ValueError("max_epochs and early_stop_patience must be >= 1")

    def replace(self, **changes) -> TrainConfig:
        return TrainConfig(**{**asdict(self), **changes})


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    dev_accuracy: list = field(default_factory=list)
    best_epoch: int = -1
    steps: int = 0
    stopped_early: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def init_random(vocab: Vocab | str, num_classes: int, d: int = 64, h: int = 64, seed: int = 0,
                vocab_size: int | None = None) -> ClassifierModel:
    """All parameters i.i.d. uniform in [-0.08, 0.08]."""
    if isinstance(vocab, Vocab):
        vocab_hash, vocab_size = vocab.hash, len(vocab)
    else:
        vocab_hash = vocab
    rng = np.random.default_rng(seed)

    def u(*shape):
        return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)

    return ClassifierModel(u(vocab_size, d), u(d, h), u(h), u(h, num_classes), u(num_classes),
                           vocab_hash, num_classes)


def _check_tokens(model, flat):
    if len(flat) and (flat.min() < 0 or flat.max() >= model.vocab_size):
        raise VocabMismatch(f"token id outside [0, {model.vocab_size})")


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def _forward(model, flat, offsets, docs, drop=None):
    pooled = kernels.pool_forward(model.E, flat, offsets, docs)
    x = pooled * drop if drop is not None else pooled
    hid = np.tanh(x @ model.W1 + model.b1)
    logits = hid @ model.W2 + model.b2
    return x, hid, logits


def predict_proba_packed(model, flat, offsets, docs=None) -> np.ndarray:
    _check_tokens(model, flat)
    if docs is None:
        docs = np.arange(len(offsets) - 1, dtype=np.int64)
    return _softmax(_forward(model, flat, offsets, docs)[2])


def predict_proba(model: ClassifierModel, data) -> np.ndarray:
    """Class probabilities for one example (vector) or a dataset/pool (matrix)."""
    if hasattr(data, "packed"):
        flat, offsets = data.packed
        return predict_proba_packed(model, flat, offsets)
    tokens = data.tokens if hasattr(data, "tokens") else data
    tokens = np.asarray(tokens, dtype=np.int64)
    return predict_proba_packed(model, tokens, np.array([0, len(tokens)], dtype=np.int64))[0]


def argmax_lowest(probs: np.ndarray) -> np.ndarray:
    """Row-wise argmax; np.argmax already returns the first (lowest) index on ties."""
    return np.argmax(probs, axis=-1)


def evaluate(model: ClassifierModel, dataset: LabeledDataset) -> float:
    if len(dataset) == 0:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    pred = argmax_lowest(predict_proba(model, dataset))
    return float(np.mean(pred == dataset.labels))


def loss_and_grad(model, flat, offsets, docs, labels, weight_decay=0.0, drop=None):
    """Mean cross-entropy (+ L2 on W1, W2) and its analytic gradient."""
    n = len(docs)
    x, hid, logits = _forward(model, flat, offsets, docs, drop)
    probs = _softmax(logits)
    picked = probs[np.arange(n), labels]
    data_loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))
    reg = 0.5 * weight_decay * (np.sum(model.W1 ** 2) + np.sum(model.W2 ** 2))

    dlogits = probs
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    grads = {
        "W2": hid.T @ dlogits + weight_decay * model.W2,
        "b2": dlogits.sum(axis=0),
    }
    da = (dlogits @ model.W2.T) * (1.0 - hid ** 2)
    grads["W1"] = x.T @ da + weight_decay * model.W1
    grads["b1"] = da.sum(axis=0)
    dx = da @ model.W1.T
    if drop is not None:
        dx *= drop
    gE = np.zeros_like(model.E)
    kernels.pool_backward(np.ascontiguousarray(dx), flat, offsets, docs, gE)
    grads["E"] = gE
    return data_loss + reg, data_loss, grads


def gradient(model: ClassifierModel, batch: LabeledDataset, weight_decay: float = 0.0) -> dict:
    """Gradient of mean cross-entropy plus ``weight_decay/2 * (|W1|^2 + |W2|^2)``."""
    if len(batch) == 0:
        raise EmptyDataset("empty batch")
    flat, offsets = batch.packed
    _check_tokens(model, flat)
    docs = np.arange(len(batch), dtype=np.int64)
    return loss_and_grad(model, flat, offsets, docs, batch.labels, weight_decay)[2]


def objective(model: ClassifierModel, batch: LabeledDataset, weight_decay: float = 0.0) -> float:
    flat, offsets = batch.packed
    docs = np.arange(len(batch), dtype=np.int64)
    return loss_and_grad(model, flat, offsets, docs, batch.labels, weight_decay)[0]


class Adam:
    def __init__(self, params: dict, betas=(0.9, 0.98), eps=1e-6):
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict, lr: float):
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            kernels.adam_update(p.reshape(-1), grads[name].reshape(-1), self.m[name].reshape(-1),
                                self.v[name].reshape(-1), lr, self.beta1, self.beta2, self.eps,
                                bias1, bias2)


def lr_at(step: int, total: int, cfg: TrainConfig) -> float:
    warmup = max(1, int(round(cfg.warmup_frac * total)))
    if step < warmup:
        return cfg.learning_rate * (step + 1) / warmup
    return cfg.learning_rate * max(0.0, (total - step) / max(1, total - warmup))


def train(model: ClassifierModel, train_set: LabeledDataset, dev_set: LabeledDataset,
          cfg: TrainConfig, on_batch=None) -> tuple[ClassifierModel, TrainReport]:
    """Train a copy of ``model``; return the best-dev-accuracy checkpoint and a report.

    ``on_batch(ids)`` is called with the example ids of every mini-batch.
    """
    if len(train_set) == 0 or len(dev_set) == 0:
        raise EmptyDataset("train and dev sets must be non-empty")
    if train_set.num_classes != model.num_classes:
        raise ShapeMismatch("dataset and model disagree on the number of classes")
    model = model.copy()
    flat, offsets = train_set.packed
    _check_tokens(model, flat)
    labels = train_set.labels
    ids = train_set.ids
    n, bs = len(train_set), cfg.batch_size
    per_epoch = math.ceil(n / bs)
    total = per_epoch * cfg.max_epochs
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7E41]))
    params = model.params()
    opt = Adam(params, cfg.betas, cfg.eps)
    report = TrainReport()
    best_acc, best_params, stale, step = -1.0, None, 0, 0
    keep = 1.0 - cfg.dropout_rate

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        losses = []
        for b in range(per_epoch):
            docs = order[b * bs:(b + 1) * bs].astype(np.int64)
            if on_batch is not None:
                on_batch([ids[i] for i in docs])
            drop = None
            if cfg.dropout_rate > 0:
                drop = (rng.random((len(docs), model.dim)) < keep) / keep
            loss, data_loss, grads = loss_and_grad(model, flat, offsets, docs, labels[docs],
                                                   cfg.weight_decay, drop)
            if not math.isfinite(loss):
                raise NonFiniteLoss(step)
            if cfg.max_grad_norm is not None:
                norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                if norm > cfg.max_grad_norm:
                    for g in grads.values():
                        g *= cfg.max_grad_norm / norm
            opt.step(params, grads, lr_at(step, total, cfg))
            step += 1
            losses.append(data_loss)
        acc = evaluate(model, dev_set)
        report.train_loss.append(float(np.mean(losses)))
        report.dev_accuracy.append(acc)
        if acc > best_acc:
            best_acc, best_params, stale = acc, {k: v.copy() for k, v in params.items()}, 0
            report.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                report.stopped_early = True
                break
    report.steps = step
    for k, v in best_params.items():
        setattr(model, k, v)
    log.debug("trained %d steps, best epoch %d dev acc %.4f", step, report.best_epoch, best_acc)
    return model, report


def save(model: ClassifierModel, path):
    with open(path, "wb") as f:
        f.write(model.to_bytes())


def load(path, vocab: Vocab | None = None) -> ClassifierModel:
    vocab_hash, meta, arrays = checkpoint.read(path, checkpoint.MODEL_TAG,
                                               vocab.hash if vocab is not None else None)
    E, W1, b1, W2, b2 = arrays
    if vocab is not None and E.shape[0] != len(vocab):
        raise ShapeMismatch("embedding rows differ from vocab size")
    return ClassifierModel(E, W1, b1, W2, b2, vocab_hash, meta["num_classes"], meta["init"],
                           list(meta["provenance"]))
