"""Super-network fine-tuning strategies and sub-network evaluation."""

from __future__ import annotations

import enum
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .model import AdamState, Batch, MaskPair, NumericalError, SuperNetwork, adam_step, add_grads, forward_masked, loss_and_grads
from .pareto import ObjectiveVector
from .spaces import SearchSpace, SubNetConfig
from .tasks import Dataset


class Strategy(str, enum.Enum):
    STANDARD = "standard"
    RANDOM = "random"
    RANDOM_LINEAR = "random_linear"
    SANDWICH = "sandwich"
    KD = "kd"
    FULL = "full"


@dataclass(frozen=True)
class TrainStrategy:
    kind: Strategy = Strategy.FULL
    k: int = 2
    temperature: float = 10.0
    lr: float = 1e-3
    batch_size: int = 16

    def __post_init__(self):
        object.__setattr__(self, "kind", Strategy(self.kind))
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if not self.lr > 0 or self.batch_size < 1:
            raise ValueError("lr must be > 0 and batch_size >= 1")


@dataclass
class TrainReport:
    strategy: str
    seed: int | None
    epochs: int
    steps: int = 0
    passes: int = 0            # masked forward+backward passes
    teacher_forwards: int = 0  # gradient-free forwards of the full network
    random_steps: int = 0      # RANDOM_LINEAR: steps that used a random sub-network
    losses: list[float] = field(default_factory=list)
    wallclock_s: float = 0.0
    checkpoint: str | None = None

    def to_json(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))


def _as_rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def train_supernet(
    net: SuperNetwork,
    data: Dataset,
    strategy: TrainStrategy,
    epochs: int,
    rng,
    space: SearchSpace,
    *,
    seed: int | None = None,
    checkpoint: str | Path | None = None,
) -> TrainReport:
    """Fine-tune ``net`` in place; random sub-networks are drawn from ``space``.

    Gradients of all sub-networks used in one step are summed before a single
    Adam update. Teacher logits are plain arrays, so distillation never sends
    gradient into the teacher.
    """
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    if space.dims != net.dims:
        raise ValueError("search space and network dims differ")
    rng = _as_rng(rng)
    batch_rng, arch_rng = rng.spawn(2)
    kind = strategy.kind
    report = TrainReport(kind.value, seed, epochs)
    opt = AdamState(lr=strategy.lr)
    T = strategy.temperature
    full_mask = MaskPair.ones(net.dims)
    min_mask = space.create_mask(space.min_config())
    total_steps = epochs * data.steps_per_epoch(strategy.batch_size)
    start = time.perf_counter()

    def sample_mask():
        return space.create_mask(space.sample(arch_rng))

    for _ in range(epochs):
        for batch in data.train_batches(batch_rng, strategy.batch_size):
            step = report.steps
            terms: list[tuple[MaskPair, np.ndarray | None]] = []
            teacher = None
            if kind is Strategy.STANDARD:
                terms.append((full_mask, None))
            elif kind is Strategy.RANDOM:
                terms.append((sample_mask(), None))
            elif kind is Strategy.RANDOM_LINEAR:
                p = step / (total_steps - 1) if total_steps > 1 else 0.0
                if arch_rng.random() < p:
                    report.random_steps += 1
                    terms.append((sample_mask(), None))
                else:
                    terms.append((full_mask, None))
            elif kind is Strategy.SANDWICH:
                terms += [(full_mask, None), (min_mask, None)]
                terms += [(sample_mask(), None) for _ in range(strategy.k)]
            elif kind is Strategy.KD:
                teacher = forward_masked(net, full_mask, batch)
                report.teacher_forwards += 1
                terms += [(sample_mask(), teacher) for _ in range(strategy.k)]
            elif kind is Strategy.FULL:
                terms.append((full_mask, None))
            grads = None
            losses = []
            try:
                for mask, t in terms:
                    loss, g, logits = loss_and_grads(net, mask, batch, t, T)
                    report.passes += 1
                    losses.append(loss)
                    grads = add_grads(grads, g)
                if kind is Strategy.FULL:
                    # same-step logits of the largest network act as teacher
                    teacher = logits
                    for mask in [min_mask] + [sample_mask() for _ in range(strategy.k)]:
                        loss, g, _ = loss_and_grads(net, mask, batch, teacher, T)
                        report.passes += 1
                        losses.append(loss)
                        grads = add_grads(grads, g)
                adam_step(net, grads, opt)
            except NumericalError as exc:
                raise NumericalError(f"training diverged: {exc}", step=step) from exc
            report.losses.append(float(np.mean(losses)))
            report.steps += 1
    report.wallclock_s = time.perf_counter() - start
    if checkpoint is not None:
        net.save(checkpoint)
        report.checkpoint = str(checkpoint)
    return report


def error_rate(net: SuperNetwork, mask: MaskPair, batch: Batch, chunk: int = 512) -> float:
    wrong = 0
    for s in range(0, len(batch), chunk):
        logits = forward_masked(net, mask, batch.tokens[s : s + chunk])
        wrong += int((logits.argmax(1) != batch.labels[s : s + chunk]).sum())
    return wrong / len(batch)


def evaluate_subnet(net: SuperNetwork, cfg: SubNetConfig, data: Dataset, split: str = "valid") -> ObjectiveVector:
    """(validation error, parameter count) of ``cfg`` under the shared weights."""
    batch = getattr(data, split)
    mask = cfg.space.create_mask(cfg)
    return ObjectiveVector(error_rate(net, mask, batch), float(cfg.space.param_count(cfg)))


class StandaloneRun:
    """Fine-tuning of one sub-network from a copy of the pre-trained weights.

    ``advance(epochs)`` continues training up to a cumulative epoch count, so a
    multi-fidelity scheduler can resume a config at a higher rung.
    """

    def __init__(self, pretrained: SuperNetwork, cfg: SubNetConfig, data: Dataset, seed=0,
                 lr: float = 1e-3, batch_size: int = 16):
        self.net = pretrained.copy()
        self.cfg = cfg
        self.data = data
        self.mask = cfg.space.create_mask(cfg)
        self.opt = AdamState(lr=lr)
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)
        self.epochs_done = 0
        self.steps = 0

    def advance(self, epochs: int) -> ObjectiveVector:
        while self.epochs_done < epochs:
            for batch in self.data.train_batches(self.rng, self.batch_size):
                try:
                    _, g, _ = loss_and_grads(self.net, self.mask, batch)
                    adam_step(self.net, g, self.opt)
                except NumericalError as exc:
                    raise NumericalError(f"fine-tuning diverged: {exc}", step=self.steps) from exc
                self.steps += 1
            self.epochs_done += 1
        return self.objectives()

    def objectives(self) -> ObjectiveVector:
        return evaluate_subnet(self.net, self.cfg, self.data)


def finetune_subnet_standalone(pretrained: SuperNetwork, cfg: SubNetConfig, data: Dataset, epochs: int,
                               seed=0, lr: float = 1e-3, batch_size: int = 16) -> ObjectiveVector:
    return StandaloneRun(pretrained, cfg, data, seed, lr, batch_size).advance(epochs)
