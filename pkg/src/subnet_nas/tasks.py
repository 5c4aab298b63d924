"""Deterministic synthetic sequence-classification tasks.

majority  label = the token class (token id mod C) that occurs most often;
          sequences with a tied count are never generated
match     label = 1 iff the first and last token are equal
pattern   label = 1 iff the trigram ``PATTERN`` occurs contiguously
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .model import Batch

TASK_NAMES = ("majority", "match", "pattern")
PATTERN = (1, 2, 3)
TRAIN_FRACTION = 0.7


@dataclass(frozen=True)
class SyntheticTask:
    name: str = "majority"
    vocab_size: int = 32
    seq_len: int = 16
    n_classes: int = 2
    n_examples: int = 2000
    n_test: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.name not in TASK_NAMES:
            raise ValueError(f"unknown task {self.name!r}; expected one of {TASK_NAMES}")
        if self.vocab_size < self.n_classes:
            raise ValueError("vocab_size must be >= n_classes")
        if self.seq_len < 3:
            raise ValueError("seq_len must be >= 3")
        if self.name != "majority" and self.n_classes != 2:
            raise ValueError(f"task {self.name!r} is binary; n_classes must be 2")
        if self.name == "pattern" and self.vocab_size <= max(PATTERN):
            raise ValueError(f"pattern task needs vocab_size > {max(PATTERN)}")
        if self.n_examples < 10:
            raise ValueError("n_examples must be >= 10")

    def to_json(self) -> dict:
        return asdict(self)


def label_of(task: SyntheticTask, tokens: np.ndarray) -> np.ndarray:
    """Ground-truth labels; a pure function of the tokens."""
    tokens = np.atleast_2d(tokens)
    if task.name == "majority":
        counts = np.stack([(tokens % task.n_classes == c).sum(1) for c in range(task.n_classes)], 1)
        return counts.argmax(1)
    if task.name == "match":
        return (tokens[:, 0] == tokens[:, -1]).astype(int)
    return _has_pattern(tokens).astype(int)


def _has_pattern(tokens):
    a, b, c = PATTERN
    return ((tokens[:, :-2] == a) & (tokens[:, 1:-1] == b) & (tokens[:, 2:] == c)).any(1)


def _majority_tied(task, tokens):
    counts = np.sort(np.stack([(tokens % task.n_classes == c).sum(1) for c in range(task.n_classes)], 1), 1)
    return counts[:, -1] == counts[:, -2]


def _generate(task: SyntheticTask, n: int, rng: np.random.Generator):
    V, L = task.vocab_size, task.seq_len
    want = rng.integers(0, task.n_classes, size=n)
    tokens = rng.integers(0, V, size=(n, L))
    if task.name == "majority":
        redo = _majority_tied(task, tokens) | (label_of(task, tokens) != want)
        while redo.any():
            tokens[redo] = rng.integers(0, V, size=(int(redo.sum()), L))
            redo = _majority_tied(task, tokens) | (label_of(task, tokens) != want)
    elif task.name == "match":
        pos = want == 1
        tokens[pos, -1] = tokens[pos, 0]
        neg = ~pos & (tokens[:, 0] == tokens[:, -1])
        while neg.any():
            tokens[neg, -1] = rng.integers(0, V, size=int(neg.sum()))
            neg = ~pos & (tokens[:, 0] == tokens[:, -1])
    else:
        pos = np.flatnonzero(want == 1)
        starts = rng.integers(0, L - 2, size=len(pos))
        for i, s in zip(pos, starts):
            tokens[i, s : s + 3] = PATTERN
        neg = (want == 0) & _has_pattern(tokens)
        while neg.any():
            tokens[neg] = rng.integers(0, V, size=(int(neg.sum()), L))
            neg = (want == 0) & _has_pattern(tokens)
    labels = label_of(task, tokens)
    assert np.array_equal(labels, want)
    return Batch(tokens.astype(np.int64), labels.astype(np.int64))


@dataclass(frozen=True)
class Dataset:
    task: SyntheticTask
    train: Batch
    valid: Batch
    test: Batch

    def train_batches(self, rng: np.random.Generator, batch_size: int = 16):
        """One epoch of shuffled training mini-batches."""
        order = rng.permutation(len(self.train))
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            yield Batch(self.train.tokens[idx], self.train.labels[idx])

    def steps_per_epoch(self, batch_size: int = 16) -> int:
        return -(-len(self.train) // batch_size)


def generate_task(task: SyntheticTask) -> Dataset:
    rng = np.random.default_rng([task.seed, TASK_NAMES.index(task.name)])
    data = _generate(task, task.n_examples, rng)
    n_train = int(round(TRAIN_FRACTION * task.n_examples))
    train = Batch(data.tokens[:n_train], data.labels[:n_train])
    valid = Batch(data.tokens[n_train:], data.labels[n_train:])
    test = _generate(task, task.n_test, rng) if task.n_test else Batch(
        np.zeros((0, task.seq_len), dtype=np.int64), np.zeros(0, dtype=np.int64)
    )
    return Dataset(task, train, valid, test)
