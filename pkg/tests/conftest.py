import numpy as np
import pytest

from selftrain.corpus import build_vocab, tokenize, vectorize
from selftrain.synthetic import SyntheticTask

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def report():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""

    def record(name, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


@pytest.fixture(scope="session")
def small_task():
    """A small synthetic corpus: vocab plus vectorized train/dev/test/pool."""
    task = SyntheticTask(vocab_size=300, doc_len=(10, 20), seed=3)
    train = task.labeled(200, "train")
    dev = task.labeled(100, "dev")
    test = task.labeled(200, "test")
    pool = task.pool(400)
    vocab = build_vocab(tokenize(ex.text) for ex in train.examples + pool.examples)
    return {
        "task": task,
        "vocab": vocab,
        "train": vectorize(train, vocab),
        "dev": vectorize(dev, vocab),
        "test": vectorize(test, vocab),
        "pool": vectorize(pool, vocab),
    }


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
