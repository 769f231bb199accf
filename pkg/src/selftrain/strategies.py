"""Student-training strategies, iterative self-training and the combined pipeline.

Strategy names follow the T(.)/F(.) notation: T(X) trains a fresh student on
X, F(D) fine-tunes the current model on the gold set D.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from enum import Enum

from .corpus import LabeledDataset, UnlabeledPool, Vocab
from .errors import EmptyDPrime, EmptyPool, NonFiniteLoss
from .model import ClassifierModel, TrainConfig, evaluate, init_random, train
from .pretrain import PretrainConfig, PretrainedInit, apply_init, pretrain
from .pseudo import PseudoLabeledDataset, label_pool, merge, select_naive, select_top_k

log = logging.getLogger(__name__)


class Kind(str, Enum):
    TEACHER_ONLY = "T(D)"
    TRAIN_DPRIME = "T(D')"
    TRAIN_UNION = "T(D+D')"
    TRAIN_DPRIME_FINETUNE_D = "T(D')F(D)"
    TRAIN_UNION_FINETUNE_D = "T(D+D')F(D)"

    @property
    def needs_dprime(self) -> bool:
        return self is not Kind.TEACHER_ONLY

    @property
    def finetunes(self) -> bool:
        return self in (Kind.TRAIN_DPRIME_FINETUNE_D, Kind.TRAIN_UNION_FINETUNE_D)


ALIASES = {
    "teacheronly": Kind.TEACHER_ONLY,
    "traindprime": Kind.TRAIN_DPRIME,
    "trainunion": Kind.TRAIN_UNION,
    "traindprimefinetuned": Kind.TRAIN_DPRIME_FINETUNE_D,
    "trainunionfinetuned": Kind.TRAIN_UNION_FINETUNE_D,
}


def parse_kind(name: str | Kind) -> Kind:
    if isinstance(name, Kind):
        return name
    compact = name.replace(" ", "")
    for kind in Kind:
        if kind.value == compact:
            return kind
    key = compact.replace("_", "").lower()
    if key in ALIASES:
        return ALIASES[key]
    raise ValueError(f"unknown strategy {name!r}")


@dataclass
class Strategy:
    kind: Kind
    student_init: str = "random"
    finetune_cfg: TrainConfig | None = None

    def __post_init__(self):
        self.kind = parse_kind(self.kind)
        if self.student_init not in ("random", "teacher"):
            raise ValueError("student_init must be 'random' or 'teacher'")
        if self.finetune_cfg is not None and not self.kind.finetunes:
            raise ValueError(f"{self.kind.value} has no F(D) phase for finetune_cfg")

    @property
    def name(self) -> str:
        return self.kind.value


@dataclass
class Arch:
    d: int = 64
    h: int = 64


@dataclass
class IterationRecord:
    iteration: int
    dev_acc: float
    test_acc: float | None
    teacher_hash: str
    d_prime_hash: str | None
    d_prime_size: int

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class PipelineResult:
    teacher: ClassifierModel
    teacher_dev_acc: float
    teacher_test_acc: float | None
    student: ClassifierModel
    student_dev_acc: float
    student_test_acc: float | None
    iterations: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    aborted: bool = False

    def to_dict(self) -> dict:
        return {
            "teacher": {"hash": self.teacher.digest(), "dev_acc": self.teacher_dev_acc,
                        "test_acc": self.teacher_test_acc, "init": self.teacher.init},
            "student": {"hash": self.student.digest(), "dev_acc": self.student_dev_acc,
                        "test_acc": self.student_test_acc, "init": self.student.init},
            "iterations": [r.to_dict() for r in self.iterations],
            "provenance": self.provenance,
            "aborted": self.aborted,
        }


def _fresh(like: ClassifierModel | None, vocab: Vocab | None, num_classes: int, arch: Arch,
           seed: int, init: PretrainedInit | None) -> ClassifierModel:
    if like is not None:
        model = init_random(like.vocab_hash, num_classes, like.dim, like.hidden, seed,
                            vocab_size=like.vocab_size)
    else:
        model = init_random(vocab, num_classes, arch.d, arch.h, seed)
    return apply_init(model, init) if init is not None else model


def train_teacher(D: LabeledDataset, dev: LabeledDataset, cfg: TrainConfig, vocab: Vocab,
                  init: PretrainedInit | None = None, arch: Arch | None = None,
                  reports: list | None = None) -> ClassifierModel:
    """init_random(seed=cfg.seed), optional pretrained embeddings, then train on D."""
    model = _fresh(None, vocab, D.num_classes, arch or Arch(), cfg.seed, init)
    model, report = train(model, D, dev, cfg)
    if reports is not None:
        reports.append(("T(D)", report))
    return model


def run_strategy(strategy: Strategy, teacher: ClassifierModel, D: LabeledDataset,
                 dev: LabeledDataset, d_prime: PseudoLabeledDataset | None, cfg: TrainConfig,
                 init: PretrainedInit | None = None, on_batch=None,
                 reports: list | None = None) -> ClassifierModel:
    """Train a student according to ``strategy``; returns the last phase's best checkpoint.

    ``on_batch(phase, ids)`` observes every mini-batch (phase 1 or 2).
    """
    kind = strategy.kind
    if kind.needs_dprime:
        if d_prime is None or len(d_prime) == 0:
            raise EmptyDPrime(f"{kind.value} needs a non-empty D'")
        claimed = d_prime.provenance.get("teacher")
        if claimed is not None and claimed != teacher.digest():
            warnings.warn("D' was labeled by a different teacher than the one supplied",
                          stacklevel=2)

    if strategy.student_init == "teacher":
        student = teacher.copy()
        student.init = "teacher"
    else:
        student = _fresh(teacher, None, teacher.num_classes, Arch(), cfg.seed, init)

    def phase(model, data, phase_cfg, number, label):
        hook = (lambda ids: on_batch(number, ids)) if on_batch is not None else None
        model, report = train(model, data, dev, phase_cfg, on_batch=hook)
        if reports is not None:
            reports.append((label, report))
        return model

    if kind is Kind.TEACHER_ONLY:
        return phase(student, D, cfg, 1, "T(D)")
    if kind in (Kind.TRAIN_DPRIME, Kind.TRAIN_DPRIME_FINETUNE_D):
        first, label = d_prime.as_labeled(D.label_names), "T(D')"
    else:
        first, label = merge(D, d_prime), "T(D+D')"
    student = phase(student, first, cfg, 1, label)
    if kind.finetunes:
        student = phase(student, D, strategy.finetune_cfg or cfg, 2, "F(D)")
    return student


def _select(scored, k, teacher, pool):
    if k is None:
        return select_naive(scored, teacher.digest(), pool.content_hash())
    return select_top_k(scored, k, teacher.digest(), pool.content_hash())


def iterative_self_train(D: LabeledDataset, dev: LabeledDataset, pool: UnlabeledPool, K: int | None,
                         strategy: Strategy, N: int, cfg: TrainConfig, vocab: Vocab,
                         init: PretrainedInit | None = None, test: LabeledDataset | None = None,
                         arch: Arch | None = None, teacher: ClassifierModel | None = None,
                         reuse_student_weights: bool = False) -> PipelineResult:
    """Teacher on D, then N rounds of relabel -> reselect top-K -> train student -> promote.

    ``K=None`` selects the whole pool (naive strategy). With
    ``reuse_student_weights`` the next round's student starts from the current
    teacher's weights; by default every student starts from scratch.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if teacher is None:
        teacher = train_teacher(D, dev, cfg, vocab, init, arch)
    first_teacher = teacher
    teacher_dev = evaluate(teacher, dev)
    teacher_test = evaluate(teacher, test) if test is not None else None
    records, dprime_provenance = [], []
    student, aborted = teacher, False
    for it in range(1, N + 1):
        step_strategy = strategy
        if reuse_student_weights and it > 1:
            step_strategy = Strategy(strategy.kind, "teacher", strategy.finetune_cfg)
        d_prime = None
        try:
            if strategy.kind.needs_dprime:
                d_prime = _select(label_pool(teacher, pool), K, teacher, pool)
                dprime_provenance.append(d_prime.provenance)
            if strategy.kind is Kind.TEACHER_ONLY and step_strategy.student_init == "random":
                # identical bytes to retraining: same seed, same data, same config
                student = first_teacher
            else:
                student = run_strategy(step_strategy, teacher, D, dev, d_prime, cfg, init)
        except (EmptyDPrime, NonFiniteLoss) as exc:
            if it == 1:
                raise
            log.warning("iteration %d aborted: %s", it, exc)
            aborted = True
            break
        records.append(IterationRecord(
            it, evaluate(student, dev), evaluate(student, test) if test is not None else None,
            teacher.digest(), d_prime.content_hash() if d_prime is not None else None,
            len(d_prime) if d_prime is not None else 0))
        teacher = student
    provenance = {"pool": pool.content_hash(), "d_prime": dprime_provenance,
                  "pretrain": list(init.provenance) if init is not None else []}
    last = records[-1]
    return PipelineResult(first_teacher, teacher_dev, teacher_test, student, last.dev_acc,
                          last.test_acc, records, provenance, aborted)


def pretrain_init(pool: UnlabeledPool, vocab: Vocab, pretrain_cfg: PretrainConfig,
                  general_pool: UnlabeledPool | None = None) -> PretrainedInit:
    """Optional general-corpus stage followed by the in-domain stage."""
    init = pretrain(general_pool, vocab, pretrain_cfg) if general_pool is not None else None
    return pretrain(pool, vocab, pretrain_cfg, init)


def combined_pipeline(D: LabeledDataset, dev: LabeledDataset, pool: UnlabeledPool,
                      general_pool: UnlabeledPool | None, K: int | None, strategy: Strategy,
                      pretrain_cfg: PretrainConfig | None, train_cfg: TrainConfig, vocab: Vocab,
                      test: LabeledDataset | None = None, N: int = 1,
                      init: PretrainedInit | None = None, arch: Arch | None = None) -> PipelineResult:
    """Pretrain on the pool (after ``general_pool`` if given), then pseudo-label the same pool.

    ``pretrain_cfg=None`` disables pretraining. A precomputed ``init`` skips
    the pretraining step.
    """
    if len(pool) == 0:
        raise EmptyPool("combined pipeline needs a non-empty pool")
    if init is None and pretrain_cfg is not None:
        if arch is not None and arch.d != pretrain_cfg.dim:
            raise ValueError("pretraining dim differs from classifier dim")
        init = pretrain_init(pool, vocab, pretrain_cfg, general_pool)
    return iterative_self_train(D, dev, pool, K, strategy, N, train_cfg, vocab, init, test, arch)
