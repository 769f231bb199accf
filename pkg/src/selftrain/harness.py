"""Config-driven experiment grids, resumable result files and table/series rendering.

A grid cell is (strategy, |D|, K, |U|, seed) and yields one record per
self-training iteration. Cells sharing (seed, |D|, |U|) share the labeled
subset, the pool sample, the pretrained init and the teacher, so deltas
against T(D) are paired. Seeds are derived from the global seed and a stable
hash of the cell's data axes, so editing the strategy or K lists never
changes the randomness of the cells that remain.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import statistics
import warnings
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, fields

from threadpoolctl import threadpool_limits

from . import __version__, kernels
from .corpus import build_vocab, load_jsonl, sample_labeled_subset, sample_pool, tokenize, vectorize
from .errors import AxisDegenerate, ConfigInvalid, SelftrainError
from .model import TrainConfig, evaluate
from .pretrain import PretrainConfig
from .strategies import Arch, Kind, Strategy, iterative_self_train, parse_kind, pretrain_init, train_teacher

log = logging.getLogger(__name__)

AXES = ("d_size", "k", "u_size", "iteration")
KEY_FIELDS = ("strategy", "d_size", "k", "u_size", "seed", "iteration")


def stable_hash(obj) -> int:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


def derive_seed(global_seed: int, *key) -> int:
    """``global_seed XOR stable_hash(key)``, folded to 63 bits."""
    return (int(global_seed) ^ stable_hash(list(key))) & (2**63 - 1)


@dataclass
class ExperimentConfig:
    train: str
    dev: str
    test: str
    pool: str
    labels: list | None = None
    general_pool: str | None = None
    d_sizes: list = field(default_factory=lambda: [50])
    k_values: list = field(default_factory=lambda: [500])
    u_sizes: list = field(default_factory=lambda: [20000])
    strategies: list = field(default_factory=lambda: ["T(D)", "T(D+D')F(D)"])
    iterations: int = 1
    seeds: list = field(default_factory=lambda: [0])
    selection: str = "top_k"
    student_init: str = "random"
    reuse_student_weights: bool = False
    d: int = 64
    h: int = 64
    max_len: int = 256
    vocab_max_size: int = 20000
    vocab_min_freq: int = 1
    train_cfg: dict = field(default_factory=dict)
    finetune_cfg: dict | None = None
    pretrain_cfg: dict | None = None
    output_dir: str = "runs/experiment"

    @classmethod
    def from_dict(cls, raw: dict, base_dir: str = ".") -> ExperimentConfig:
        if not isinstance(raw, dict):
            raise ConfigInvalid("<root>", "config must be a JSON object")
        data = raw.get("data", {})
        grid = raw.get("grid", {})
        model = raw.get("model", {})
        flat = {**data, **grid, **model}
        for key in ("labels", "selection", "student_init", "reuse_student_weights", "output_dir"):
            if key in raw:
                flat[key] = raw[key]
        for section, name in (("train", "train_cfg"), ("finetune", "finetune_cfg"),
                              ("pretrain", "pretrain_cfg")):
            if section in raw:
                flat[name] = raw[section]
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(flat) - known)
        if unknown:
            raise ConfigInvalid(unknown[0], "unknown field")
        for req in ("train", "dev", "test", "pool"):
            if req not in flat:
                raise ConfigInvalid(f"data.{req}", "required")
        for key in ("train", "dev", "test", "pool", "general_pool"):
            if flat.get(key) is not None:
                flat[key] = os.path.normpath(os.path.join(base_dir, flat[key]))
        if "output_dir" in flat:
            flat["output_dir"] = os.path.join(base_dir, flat["output_dir"])
        cfg = cls(**flat)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        try:
            with open(path, encoding="utf-8") as f:
                raw = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid("<root>", f"invalid JSON: {exc}") from None
        return cls.from_dict(raw, os.path.dirname(os.path.abspath(path)))

    def validate(self):
        for axis in ("d_sizes", "k_values", "u_sizes", "strategies", "seeds"):
            value = getattr(self, axis)
            if not isinstance(value, list) or not value:
                raise ConfigInvalid(f"grid.{axis}", "must be a non-empty list")
        for i, s in enumerate(self.strategies):
            try:
                parse_kind(s)
            except ValueError as exc:
                raise ConfigInvalid(f"grid.strategies[{i}]", str(exc)) from None
        for axis in ("d_sizes", "k_values", "u_sizes"):
            for i, v in enumerate(getattr(self, axis)):
                if not isinstance(v, int) or v < 1:
                    raise ConfigInvalid(f"grid.{axis}[{i}]", "must be a positive integer")
        if not isinstance(self.iterations, int) or self.iterations < 1:
            raise ConfigInvalid("grid.iterations", "must be an integer >= 1")
        if self.selection not in ("top_k", "naive"):
            raise ConfigInvalid("selection", "must be 'top_k' or 'naive'")
        if self.student_init not in ("random", "teacher"):
            raise ConfigInvalid("student_init", "must be 'random' or 'teacher'")
        for name, block, factory in (("train", self.train_cfg, TrainConfig),
                                     ("finetune", self.finetune_cfg, TrainConfig),
                                     ("pretrain", self.pretrain_block(), PretrainConfig)):
            if block is None:
                continue
            try:
                factory(**block)
            except (TypeError, ValueError) as exc:
                raise ConfigInvalid(name, str(exc)) from None
        if self.pretrain_cfg is not None and self.pretrain_block() is not None:
            if self.pretrain_block().get("dim", self.d) != self.d:
                raise ConfigInvalid("pretrain.dim", "must equal model.d")

    def pretrain_block(self) -> dict | None:
        if not self.pretrain_cfg or not self.pretrain_cfg.get("enabled", True):
            return None
        return {k: v for k, v in self.pretrain_cfg.items() if k != "enabled"}

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        body = {k: v for k, v in self.to_dict().items() if k != "output_dir"}
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------- data loading

_DATA_CACHE: dict = {}
_INIT_CACHE: dict = {}


def prepare_data(cfg: ExperimentConfig):
    """Load, build the vocabulary over train + pool, vectorize. Cached per process."""
    key = (cfg.train, cfg.dev, cfg.test, cfg.pool, cfg.general_pool, tuple(cfg.labels or ()),
           cfg.max_len, cfg.vocab_max_size, cfg.vocab_min_freq)
    if key in _DATA_CACHE:
        return _DATA_CACHE[key]
    train = load_jsonl(cfg.train, True, cfg.labels)
    labels = list(train.label_names)
    dev = load_jsonl(cfg.dev, True, labels)
    test = load_jsonl(cfg.test, True, labels)
    pool = load_jsonl(cfg.pool, False)
    general = load_jsonl(cfg.general_pool, False) if cfg.general_pool else None
    texts = [ex.text for ex in train.examples + pool.examples]
    vocab = build_vocab((tokenize(t) for t in texts), cfg.vocab_max_size, cfg.vocab_min_freq)
    data = {
        "vocab": vocab,
        "train": vectorize(train, vocab, cfg.max_len),
        "dev": vectorize(dev, vocab, cfg.max_len),
        "test": vectorize(test, vocab, cfg.max_len),
        "pool": vectorize(pool, vocab, cfg.max_len),
        "general": vectorize(general, vocab, cfg.max_len) if general is not None else None,
    }
    _DATA_CACHE.clear()
    _DATA_CACHE[key] = data
    return data


def check_against_data(cfg: ExperimentConfig, data):
    train_ids = set(data["train"].ids) | set(data["dev"].ids) | set(data["test"].ids)
    if train_ids & set(data["pool"].ids):
        raise ConfigInvalid("data.pool", "pool ids overlap labeled ids")
    for i, n in enumerate(cfg.d_sizes):
        if n > len(data["train"]):
            raise ConfigInvalid(f"grid.d_sizes[{i}]", f"{n} exceeds |train|={len(data['train'])}")
    C = data["train"].num_classes
    if cfg.selection == "top_k" and max(cfg.k_values) * C > max(cfg.u_sizes):
        warnings.warn("k_values * C exceeds the largest u_size; D' will be capped by the pool",
                      stacklevel=2)


# ---------------------------------------------------------------- grid model


def cell_key(strategy, d_size, k, u_size, seed) -> dict:
    return {"strategy": strategy, "d_size": d_size, "k": k, "u_size": u_size, "seed": seed}


def cell_id(key: dict) -> str:
    return format(stable_hash(key), "016x")


def record_key(rec: dict) -> tuple:
    return tuple(rec[f] if rec[f] is not None else -1 for f in KEY_FIELDS)


def _sort_key(rec):
    return tuple(str(v) if isinstance(v, str) else v for v in record_key(rec))


class ResultGrid:
    """Cell records keyed by (strategy, |D|, K, |U|, seed, iteration)."""

    def __init__(self, records=()):
        self.records: dict = {}
        for rec in records:
            self.add(rec)

    def add(self, rec: dict):
        self.records[record_key(rec)] = rec

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(sorted(self.records.values(), key=_sort_key))

    def ok(self):
        return [r for r in self if r.get("status") == "ok"]

    def failed(self):
        return [r for r in self if r.get("status") != "ok"]

    def completed_cells(self) -> set:
        return {r["cell"] for r in self.records.values() if r.get("status") == "ok"}

    @classmethod
    def read(cls, path) -> ResultGrid:
        grid = cls()
        if not os.path.exists(path):
            return grid
        with open(path, encoding="utf-8") as f:
            for line in f:
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    continue  # torn final line from an interrupted run
                if isinstance(rec, dict) and "cell" in rec:
                    grid.add(rec)
        return grid

    def write(self, path):
        tmp = f"{path}.tmp"
        with open(tmp, "w", encoding="utf-8") as f:
            for rec in self:
                f.write(json.dumps(rec, sort_keys=True) + "\n")
        os.replace(tmp, path)

    def aggregate(self) -> list[dict]:
        """Mean and sample stdev over seeds for every (strategy, |D|, K, |U|, iteration)."""
        groups = defaultdict(list)
        for rec in self.ok():
            groups[(rec["strategy"], rec["d_size"], rec["k"], rec["u_size"], rec["iteration"])].append(rec)
        out = []
        for (strategy, d, k, u, it), recs in groups.items():
            accs = [r["student_acc"] for r in recs]
            teach = [r["teacher_acc"] for r in recs]
            out.append({
                "strategy": strategy, "d_size": d, "k": k, "u_size": u, "iteration": it,
                "d_prime_size": statistics.mean(r["d_prime_size"] for r in recs),
                "mean": statistics.mean(accs),
                "stdev": statistics.stdev(accs) if len(accs) > 1 else 0.0,
                "teacher_mean": statistics.mean(teach),
                "n": len(accs),
            })
        return sorted(out, key=lambda a: (a["u_size"], a["d_size"], a["strategy"], a["k"] or -1,
                                          a["iteration"]))


# ---------------------------------------------------------------- execution


def _train_cfg(cfg: ExperimentConfig, seed: int) -> TrainConfig:
    return TrainConfig(**{**cfg.train_cfg, "seed": seed})


def run_group(cfg: ExperimentConfig, global_seed: int, seed: int, d_size: int, u_size: int,
              cells: list) -> list[dict]:
    """Run every pending (strategy, k) cell of one (seed, |D|, |U|) group."""
    with threadpool_limits(limits=1):
        return _run_group(cfg, global_seed, seed, d_size, u_size, cells)


def _run_group(cfg, global_seed, seed, d_size, u_size, cells):
    data = prepare_data(cfg)
    vocab = data["vocab"]
    d_seed = derive_seed(global_seed, "D", seed, d_size)
    u_seed = derive_seed(global_seed, "U", seed, u_size)
    D = sample_labeled_subset(data["train"], d_size, d_seed)
    U = sample_pool(data["pool"], u_size, u_seed)
    train_cfg = _train_cfg(cfg, d_seed)
    finetune = TrainConfig(**{**cfg.train_cfg, **cfg.finetune_cfg, "seed": d_seed}) \
        if cfg.finetune_cfg else None
    arch = Arch(cfg.d, cfg.h)
    block = cfg.pretrain_block()
    init = None
    if block is not None:
        pcfg = PretrainConfig(**{**block, "seed": u_seed, "dim": cfg.d})
        key = (U.content_hash(), json.dumps(asdict(pcfg), sort_keys=True))
        if key not in _INIT_CACHE:
            if len(_INIT_CACHE) >= 4:
                _INIT_CACHE.pop(next(iter(_INIT_CACHE)))
            _INIT_CACHE[key] = pretrain_init(U, vocab, pcfg, data["general"])
        init = _INIT_CACHE[key]
    teacher = train_teacher(D, data["dev"], train_cfg, vocab, init, arch)
    teacher_acc = evaluate(teacher, data["test"])
    teacher_dev = evaluate(teacher, data["dev"])
    records = []
    for strategy_name, k in cells:
        key = cell_key(strategy_name, d_size, k, u_size, seed)
        base = {**key, "cell": cell_id(key), "pretrained": init is not None,
                "teacher_acc": teacher_acc, "teacher_dev_acc": teacher_dev,
                "teacher_hash": teacher.digest()}
        try:
            kind = parse_kind(strategy_name)
            strategy = Strategy(kind, cfg.student_init, finetune if kind.finetunes else None)
            result = iterative_self_train(D, data["dev"], U, k, strategy, cfg.iterations, train_cfg,
                                          vocab, init, data["test"], arch, teacher,
                                          cfg.reuse_student_weights)
            for it in result.iterations:
                records.append({
                    **base, "iteration": it.iteration, "status": "ok", "error": None,
                    "student_acc": it.test_acc, "student_dev_acc": it.dev_acc,
                    "delta": it.test_acc - teacher_acc, "d_prime_size": it.d_prime_size,
                    "d_prime_hash": it.d_prime_hash, "aborted": result.aborted,
                    "student_hash": result.student.digest() if it is result.iterations[-1] else None,
                })
        except SelftrainError as exc:
            log.error("cell %s failed: %s", key, exc)
            for it in range(1, cfg.iterations + 1):
                records.append({**base, "iteration": it, "status": "failed",
                                "error": f"{type(exc).__name__}: {exc}", "student_acc": None,
                                "student_dev_acc": None, "delta": None, "d_prime_size": None,
                                "d_prime_hash": None, "aborted": True, "student_hash": None})
    return records


def plan_cells(cfg: ExperimentConfig) -> dict:
    """(seed, |D|, |U|) -> [(strategy, k), ...] over the whole grid."""
    groups = defaultdict(list)
    for seed in cfg.seeds:
        for d_size in cfg.d_sizes:
            for u_size in cfg.u_sizes:
                for strategy in cfg.strategies:
                    kind = parse_kind(strategy)
                    if kind is Kind.TEACHER_ONLY:
                        ks = [None]
                    elif cfg.selection == "naive":
                        ks = [None]
                    else:
                        ks = list(cfg.k_values)
                    for k in ks:
                        cell = (kind.value, k)
                        if cell not in groups[(seed, d_size, u_size)]:
                            groups[(seed, d_size, u_size)].append(cell)
    return groups


def run_experiment(cfg: ExperimentConfig, global_seed: int = 0, jobs: int = 1,
                   out_dir: str | None = None, stop_after: int | None = None) -> ResultGrid:
    """Run (or resume) the grid, writing ``grid.jsonl`` incrementally.

    ``stop_after`` ends the run after that many groups (used to exercise
    resumption); the grid file is then left in its incremental state.
    """
    out_dir = out_dir or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    data = prepare_data(cfg)
    check_against_data(cfg, data)
    grid_path = os.path.join(out_dir, "grid.jsonl")
    grid = ResultGrid.read(grid_path)
    grid.write(grid_path)  # drops any torn trailing line before appending
    done = grid.completed_cells()
    pending = {}
    for (seed, d_size, u_size), cells in plan_cells(cfg).items():
        todo = [c for c in cells if cell_id(cell_key(c[0], d_size, c[1], u_size, seed)) not in done]
        if todo:
            pending[(seed, d_size, u_size)] = todo
    log.info("%d groups pending (%d cells complete)", len(pending), len(done))

    finished = 0
    with open(grid_path, "a", encoding="utf-8") as sink:
        def emit(records):
            blob = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
            sink.write(blob)
            sink.flush()
            os.fsync(sink.fileno())
            for r in records:
                grid.add(r)

        if jobs <= 1:
            for (seed, d_size, u_size), cells in pending.items():
                emit(run_group(cfg, global_seed, seed, d_size, u_size, cells))
                finished += 1
                if stop_after is not None and finished >= stop_after:
                    return grid
        else:
            with ProcessPoolExecutor(max_workers=jobs) as ex:
                futures = [ex.submit(run_group, cfg, global_seed, s, d, u, cells)
                           for (s, d, u), cells in pending.items()]
                for fut in as_completed(futures):
                    emit(fut.result())
                    finished += 1
                    if stop_after is not None and finished >= stop_after:
                        for other in futures:
                            other.cancel()
                        return grid

    grid.write(grid_path)
    write_outputs(grid, cfg, data, out_dir, global_seed)
    return grid


def write_outputs(grid: ResultGrid, cfg: ExperimentConfig, data, out_dir: str, global_seed: int):
    if grid.ok():
        text, table_csv = render_table(grid)
        with open(os.path.join(out_dir, "table.txt"), "w", encoding="utf-8") as f:
            f.write(text)
        with open(os.path.join(out_dir, "table.csv"), "w", encoding="utf-8") as f:
            f.write(table_csv)
        for axis in AXES:
            try:
                series = render_series(grid, axis)
            except AxisDegenerate:
                continue
            with open(os.path.join(out_dir, f"series_{axis}.csv"), "w", encoding="utf-8") as f:
                f.write(series)
    manifest = {
        "config_hash": cfg.digest(),
        "config": {k: v for k, v in cfg.to_dict().items() if k != "output_dir"},
        "global_seed": global_seed,
        "corpus_hashes": {name: data[name].content_hash()
                          for name in ("train", "dev", "test", "pool", "general")
                          if data.get(name) is not None},
        "vocab_hash": data["vocab"].hash,
        "tool_version": __version__,
        "kernel_backend": kernels.BACKEND,
        "cells": len({r["cell"] for r in grid}),
        "failed_cells": len({r["cell"] for r in grid.failed()}),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


# ---------------------------------------------------------------- rendering


def _pct(x: float) -> str:
    return f"{100 * x:.2f}"


def _signed(x: float) -> str:
    return f"({100 * x:+.2f})"


def table_rows(grid: ResultGrid, iteration: int | None = None) -> list[dict]:
    """Aggregated cells at one iteration (default: the last), with row baselines and bests."""
    agg = grid.aggregate()
    if not agg:
        raise ValueError("grid has no successful cells")
    if iteration is None:
        iteration = max(a["iteration"] for a in agg)
    rows = [a for a in agg if a["iteration"] == iteration]
    baseline = {}
    for rec in grid.ok():
        if rec["iteration"] == iteration:
            baseline.setdefault((rec["u_size"], rec["d_size"]), {})[rec["seed"]] = rec["teacher_acc"]
    out = []
    for a in rows:
        base = statistics.mean(baseline[(a["u_size"], a["d_size"])].values())
        out.append({**a, "baseline": base, "delta": a["mean"] - base})
    best = defaultdict(lambda: -math.inf)
    for r in out:
        best[(r["u_size"], r["d_size"])] = max(best[(r["u_size"], r["d_size"])], r["mean"])
    for r in out:
        r["row_best"] = r["mean"] == best[(r["u_size"], r["d_size"])]
    return out


def render_table(grid: ResultGrid, iteration: int | None = None) -> tuple[str, str]:
    """Table-1-style text (bold = row max) and the matching CSV."""
    rows = table_rows(grid, iteration)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = ["u_size", "d_size", "strategy", "k", "d_prime_size", "mean_acc", "stdev", "n_seeds",
            "baseline_acc", "delta", "row_best"]
    writer.writerow(cols)
    for r in rows:
        writer.writerow([r["u_size"], r["d_size"], r["strategy"], "" if r["k"] is None else r["k"],
                         repr(r["d_prime_size"]), repr(r["mean"]), repr(r["stdev"]), r["n"],
                         repr(r["baseline"]), repr(r["delta"]), int(r["row_best"])])

    order = [k.value for k in Kind]
    lines = []
    for u_size in sorted({r["u_size"] for r in rows}):
        block = [r for r in rows if r["u_size"] == u_size]
        columns = sorted({(r["strategy"], r["k"]) for r in block},
                         key=lambda c: (order.index(c[0]), c[1] or -1))
        by_cell = {(r["d_size"], r["strategy"], r["k"]): r for r in block}
        header = ["|D|"] + [s if k is None else f"{s} |D'|={_dprime(block, s, k)}" for s, k in columns]
        table = [header]
        for d_size in sorted({r["d_size"] for r in block}):
            line = [str(d_size)]
            for s, k in columns:
                r = by_cell.get((d_size, s, k))
                if r is None:
                    line.append("--")
                    continue
                cell = f"{_pct(r['mean'])} {_signed(r['delta'])}"
                line.append(f"**{cell}**" if r["row_best"] else cell)
            table.append(line)
        widths = [max(len(row[i]) for row in table) for i in range(len(header))]
        lines.append(f"|U| = {u_size}")
        for row in table:
            lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        lines.append("")
    return "\n".join(lines), buf.getvalue()


def _dprime(block, strategy, k):
    sizes = {r["d_prime_size"] for r in block if r["strategy"] == strategy and r["k"] == k}
    size = max(sizes)
    return int(size) if float(size).is_integer() else round(size, 1)


def render_series(grid: ResultGrid, x_axis: str) -> str:
    """CSV of (x, mean, stdev) per strategy, other axes held as series identifiers."""
    if x_axis not in AXES:
        raise ValueError(f"x_axis must be one of {AXES}")
    agg = grid.aggregate()
    if len({a[x_axis] for a in agg}) < 2:
        raise AxisDegenerate(f"grid has fewer than two values on {x_axis}")
    others = [a for a in AXES if a != x_axis]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["strategy", *others, x_axis, "mean", "stdev", "n"])

    def sort_key(a):
        return (a["strategy"], *[(-1 if a[o] is None else a[o]) for o in others],
                -1 if a[x_axis] is None else a[x_axis])

    for a in sorted(agg, key=sort_key):
        writer.writerow([a["strategy"], *["" if a[o] is None else a[o] for o in others],
                         "" if a[x_axis] is None else a[x_axis], repr(a["mean"]), repr(a["stdev"]),
                         a["n"]])
    return buf.getvalue()
