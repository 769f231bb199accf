"""Command-line entry point: ``selftrain <subcommand> [flags]``.

Exit codes: 0 success, 1 usage or config error, 2 runtime failure.
Log verbosity comes from the SELFTRAIN_LOG environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import __version__
from .corpus import UnlabeledPool, Vocab, build_vocab, load_jsonl, sample_labeled_subset, tokenize, vectorize
from .errors import ConfigInvalid, SelftrainError
from .harness import ExperimentConfig, ResultGrid, render_series, render_table, run_experiment
from .model import TrainConfig, evaluate, load, save
from .pretrain import PretrainConfig, load_init, save_init
from .pseudo import label_pool, load_pseudo, save_pseudo, select_naive, select_top_k
from .strategies import Arch, Strategy, parse_kind, pretrain_init, run_strategy, train_teacher

log = logging.getLogger("selftrain")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> Parser:
    common = Parser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, default=0, help="global seed (default 0)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="max concurrent experiment cells")

    parser = Parser(prog="selftrain", description="Self-training and in-domain pretraining for "
                    "few-label text classification.", parents=[common])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("pretrain", parents=[common], help="masked-token pretraining on a pool")
    p.add_argument("--pool", required=True)
    p.add_argument("--general-pool")
    p.add_argument("--vocab", help="vocab.json; built from the pool if omitted")

    p = sub.add_parser("train-teacher", parents=[common], help="train T(D)")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--vocab", help="vocab.json; built from --train (and --pool) if omitted")
    p.add_argument("--pool", help="extra text for vocabulary building")
    p.add_argument("--init", help="pretrained embeddings file")
    p.add_argument("--n", type=int, help="balanced subsample size of --train")

    p = sub.add_parser("pseudo-label", parents=[common], help="label a pool and select D'")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--pool", required=True)
    sel = p.add_mutually_exclusive_group(required=True)
    sel.add_argument("--k", type=int, help="top-K per class")
    sel.add_argument("--naive", action="store_true", help="keep the whole pool")
    p.add_argument("--labels", nargs="+", help="label names in class-index order")

    p = sub.add_parser("train-student", parents=[common], help="train a student on D' (and D)")
    p.add_argument("--strategy", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--d-prime", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--init", help="pretrained embeddings for a random-init student")
    p.add_argument("--student-init", choices=("random", "teacher"), default="random")
    p.add_argument("--n", type=int, help="balanced subsample size of --train (same --seed as the teacher)")

    p = sub.add_parser("experiment", parents=[common], help="run a config-driven grid")

    p = sub.add_parser("evaluate", parents=[common], help="accuracy of a model on a labeled file")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--labels", nargs="+")

    p = sub.add_parser("render", parents=[common], help="re-render tables and series from a grid")
    p.add_argument("--grid", required=True)
    p.add_argument("--iteration", type=int)
    p.add_argument("--axis", action="append", choices=("d_size", "k", "u_size", "iteration"))
    return parser


def _read_config(path) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid("<root>", f"invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigInvalid("<root>", "config must be a JSON object")
    return raw


def _block(raw: dict, name: str, factory, **overrides):
    try:
        return factory(**{**raw.get(name, {}), **overrides})
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(name, str(exc)) from None


def _require_out(args) -> str:
    if not args.out:
        raise UsageError("--out is required for this command")
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)


def cmd_pretrain(args, raw):
    out = _require_out(args)
    cfg = _block(raw, "pretrain", PretrainConfig, seed=args.seed)
    pool = load_jsonl(args.pool, False)
    general = load_jsonl(args.general_pool, False) if args.general_pool else None
    if args.vocab:
        vocab = Vocab.load(args.vocab)
    else:
        texts = [ex.text for ex in pool.examples + (general.examples if general else ())]
        vocab = build_vocab(tokenize(t) for t in texts)
        vocab.save(os.path.join(out, "vocab.json"))
    init = pretrain_init(vectorize(pool, vocab), vocab, cfg,
                         vectorize(general, vocab) if general else None)
    save_init(init, os.path.join(out, "init.stpi"))
    _write_json(os.path.join(out, "pretrain.json"),
                {"config": dict(cfg.__dict__), "loss_history": init.loss_history, "provenance": init.provenance,
                 "digest": init.digest()})
    print(f"final loss {init.final_loss:.4f} -> {os.path.join(out, 'init.stpi')}")


def cmd_train_teacher(args, raw):
    out = _require_out(args)
    cfg = _block(raw, "train", TrainConfig, seed=args.seed)
    arch = _block(raw, "model", Arch)
    labels = raw.get("labels")
    train_set = load_jsonl(args.train, True, labels)
    dev = load_jsonl(args.dev, True, list(train_set.label_names))
    if args.vocab:
        vocab = Vocab.load(args.vocab)
    else:
        texts = [ex.text for ex in train_set.examples]
        if args.pool:
            texts += [ex.text for ex in load_jsonl(args.pool, False).examples]
        vocab = build_vocab(tokenize(t) for t in texts)
        vocab.save(os.path.join(out, "vocab.json"))
    D = vectorize(train_set, vocab)
    if args.n is not None:
        D = sample_labeled_subset(D, args.n, args.seed)
    dev = vectorize(dev, vocab)
    init = load_init(args.init, vocab) if args.init else None
    reports = []
    teacher = train_teacher(D, dev, cfg, vocab, init, arch, reports)
    save(teacher, os.path.join(out, "teacher.stck"))
    acc = evaluate(teacher, dev)
    _write_json(os.path.join(out, "teacher.json"),
                {"dev_acc": acc, "labels": list(D.label_names), "size": len(D),
                 "report": reports[0][1].to_dict(), "digest": teacher.digest()})
    print(f"dev accuracy {acc:.4f} -> {os.path.join(out, 'teacher.stck')}")


def cmd_pseudo_label(args, raw):
    out = _require_out(args)
    vocab = Vocab.load(args.vocab)
    teacher = load(args.model, vocab)
    pool = vectorize(load_jsonl(args.pool, False), vocab)
    scored = label_pool(teacher, pool)
    if args.naive:
        d_prime = select_naive(scored, teacher.digest(), pool.content_hash())
    else:
        if args.k < 1:
            raise UsageError("--k must be >= 1")
        d_prime = select_top_k(scored, args.k, teacher.digest(), pool.content_hash())
    labels = args.labels or raw.get("labels")
    path = os.path.join(out, "d_prime.jsonl")
    save_pseudo(d_prime, path, labels)
    print(f"{len(d_prime)} pseudo-labeled examples -> {path}")


def cmd_train_student(args, raw):
    out = _require_out(args)
    try:
        kind = parse_kind(args.strategy)
    except ValueError as exc:
        raise UsageError(f"--strategy: {exc}") from None
    cfg = _block(raw, "train", TrainConfig, seed=args.seed)
    finetune = _block(raw, "finetune", TrainConfig, seed=args.seed) \
        if "finetune" in raw and kind.finetunes else None
    vocab = Vocab.load(args.vocab)
    teacher = load(args.teacher, vocab)
    d_prime = load_pseudo(args.d_prime)
    names = raw.get("labels") or d_prime.provenance.get("label_names")
    train_set = load_jsonl(args.train, True, names)
    D = vectorize(train_set, vocab)
    if args.n is not None:
        D = sample_labeled_subset(D, args.n, args.seed)
    dev = vectorize(load_jsonl(args.dev, True, list(train_set.label_names)), vocab)
    examples = vectorize(UnlabeledPool(d_prime.examples), vocab).examples
    d_prime = type(d_prime)(examples, d_prime.labels, d_prime.confidence, d_prime.num_classes,
                            d_prime.provenance)
    init = load_init(args.init, vocab) if args.init else None
    reports = []
    student = run_strategy(Strategy(kind, args.student_init, finetune), teacher, D, dev, d_prime,
                           cfg, init, reports=reports)
    save(student, os.path.join(out, "student.stck"))
    acc = evaluate(student, dev)
    _write_json(os.path.join(out, "student.json"),
                {"strategy": kind.value, "dev_acc": acc, "digest": student.digest(),
                 "phases": [{"phase": name, **r.to_dict()} for name, r in reports]})
    print(f"{kind.value} dev accuracy {acc:.4f} -> {os.path.join(out, 'student.stck')}")


def cmd_experiment(args, raw):
    if not args.config:
        raise UsageError("--config is required for experiment")
    cfg = ExperimentConfig.from_dict(raw, os.path.dirname(os.path.abspath(args.config)))
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    grid = run_experiment(cfg, args.seed, args.jobs, args.out)
    out = args.out or cfg.output_dir
    failed = len({r["cell"] for r in grid.failed()})
    print(f"{len({r['cell'] for r in grid})} cells ({failed} failed) -> {out}")
    table = os.path.join(out, "table.txt")
    if os.path.exists(table):
        with open(table, encoding="utf-8") as f:
            print(f.read())


def cmd_evaluate(args, raw):
    vocab = Vocab.load(args.vocab)
    model = load(args.model, vocab)
    data = vectorize(load_jsonl(args.data, True, args.labels or raw.get("labels")), vocab)
    acc = evaluate(model, data)
    print(json.dumps({"accuracy": acc, "n": len(data)}))


def cmd_render(args, raw):
    grid = ResultGrid.read(args.grid)
    if not grid.ok():
        raise SelftrainError(f"{args.grid} has no successful cells")
    out = args.out or os.path.dirname(os.path.abspath(args.grid))
    os.makedirs(out, exist_ok=True)
    text, table_csv = render_table(grid, args.iteration)
    with open(os.path.join(out, "table.txt"), "w", encoding="utf-8") as f:
        f.write(text)
    with open(os.path.join(out, "table.csv"), "w", encoding="utf-8") as f:
        f.write(table_csv)
    for axis in args.axis or ():
        with open(os.path.join(out, f"series_{axis}.csv"), "w", encoding="utf-8") as f:
            f.write(render_series(grid, axis))
    print(text)


COMMANDS = {
    "pretrain": cmd_pretrain,
    "train-teacher": cmd_train_teacher,
    "pseudo-label": cmd_pseudo_label,
    "train-student": cmd_train_student,
    "experiment": cmd_experiment,
    "evaluate": cmd_evaluate,
    "render": cmd_render,
}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SELFTRAIN_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        raw = _read_config(args.config)
        COMMANDS[args.command](args, raw)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (SelftrainError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0
