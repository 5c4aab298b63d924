"""Multi-objective search strategies over a ``SearchSpace``.

Every searcher drives an evaluator through a ``Runner`` that enforces the
budget, memoizes repeated configs and stamps each observation with the
(virtual or real) wallclock at which it completed.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .gp import GPFitError, GPModel
from .model import NumericalError, SuperNetwork
from .pareto import (
    REF_POINT,
    ObjectiveVector,
    ParetoArchive,
    QuantileNormalizer,
    hv_contributions,
    hypervolume_improvement,
    nondominated_sort,
    pareto_mask,
)
from .spaces import SearchSpace, SubNetConfig
from .tasks import Dataset
from .training import StandaloneRun, evaluate_subnet

log = logging.getLogger(__name__)

# Virtual clock: the cost a physically pruned network would have, i.e.
# proportional to active parameters. Calibrated on one CPU core so that a
# validation pass of the full toy network (600 x 16 tokens) takes ~0.15 s.
# A training step (forward + backward) counts 3 forward units.
SECONDS_PER_TOKEN_PARAM = 4.5e-10
EVAL_OVERHEAD_S = 0.005


# ----------------------------------------------------------------------------
# evaluators


class Evaluator:
    """Maps (config, fidelity) to objectives. Subclasses implement ``_evaluate``.

    ``cost`` is the virtual duration of an evaluation; runs driven by a
    virtual clock are exactly reproducible.
    """

    mode = "abstract"

    def __call__(self, cfg: SubNetConfig, fidelity=None) -> ObjectiveVector:
        return self._evaluate(cfg, fidelity)

    def _evaluate(self, cfg, fidelity) -> ObjectiveVector:
        raise NotImplementedError

    def cost(self, cfg: SubNetConfig, fidelity=None) -> float:
        return 1.0


class FunctionEvaluator(Evaluator):
    """Objectives from a plain function ``fn(cfg, fidelity) -> (f0, f1)``."""

    mode = "function"

    def __init__(self, fn, cost=1.0):
        self.fn = fn
        self._cost = cost

    def _evaluate(self, cfg, fidelity):
        return ObjectiveVector(*map(float, self.fn(cfg, fidelity)))

    def cost(self, cfg, fidelity=None):
        return self._cost(cfg, fidelity) if callable(self._cost) else float(self._cost)


class SharedWeightsEvaluator(Evaluator):
    """One validation pass of the masked super-network (no training)."""

    mode = "shared-weights"

    def __init__(self, net: SuperNetwork, data: Dataset):
        self.net = net
        self.data = data

    def _evaluate(self, cfg, fidelity):
        return evaluate_subnet(self.net, cfg, self.data)

    def cost(self, cfg, fidelity=None):
        tokens = self.data.valid.tokens.size
        return EVAL_OVERHEAD_S + SECONDS_PER_TOKEN_PARAM * tokens * cfg.space.param_count(cfg)


class StandaloneEvaluator(Evaluator):
    """Fine-tunes each config from the pre-trained weights; fidelity = epochs.

    Runs are kept per config, so asking for more epochs resumes training.
    """

    mode = "standalone"

    def __init__(self, pretrained: SuperNetwork, data: Dataset, epochs: int = 5, seed: int = 0,
                 lr: float = 1e-3, batch_size: int = 16):
        self.pretrained = pretrained
        self.data = data
        self.epochs = epochs
        self.seed = seed
        self.lr = lr
        self.batch_size = batch_size
        self.runs: dict[SubNetConfig, StandaloneRun] = {}

    def _run(self, cfg):
        if cfg not in self.runs:
            self.runs[cfg] = StandaloneRun(self.pretrained, cfg, self.data, self.seed, self.lr, self.batch_size)
        return self.runs[cfg]

    def _evaluate(self, cfg, fidelity):
        return self._run(cfg).advance(int(fidelity if fidelity is not None else self.epochs))

    def cost(self, cfg, fidelity=None):
        target = int(fidelity if fidelity is not None else self.epochs)
        done = self.runs[cfg].epochs_done if cfg in self.runs else 0
        params = cfg.space.param_count(cfg)
        train = 3 * SECONDS_PER_TOKEN_PARAM * self.data.train.tokens.size * params * max(target - done, 0)
        valid = SECONDS_PER_TOKEN_PARAM * self.data.valid.tokens.size * params
        return EVAL_OVERHEAD_S + train + valid


# ----------------------------------------------------------------------------
# budget bookkeeping


@dataclass
class Budget:
    """Stop after any limit is hit. ``max_evaluations`` counts distinct evaluations."""

    max_evaluations: int | None = None
    max_seconds: float | None = None
    max_proposals: int | None = None

    def __post_init__(self):
        if self.max_evaluations is None and self.max_seconds is None:
            raise ValueError("budget needs max_evaluations or max_seconds")
        if self.max_proposals is None:
            base = self.max_evaluations if self.max_evaluations is not None else 1000
            self.max_proposals = 50 * base + 1000


@dataclass
class Runner:
    space: SearchSpace
    evaluator: Evaluator
    budget: Budget
    clock: str = "virtual"
    seed: int | None = None
    archive: ParetoArchive = field(default_factory=ParetoArchive)
    elapsed: float = 0.0
    n_evaluations: int = 0
    n_proposals: int = 0
    n_failures: int = 0
    cache: dict = field(default_factory=dict)
    seen: set = field(default_factory=set)

    def __post_init__(self):
        if self.clock not in ("virtual", "wall"):
            raise ValueError(f"clock must be 'virtual' or 'wall', got {self.clock!r}")
        self.n_distinct = self.space.n_distinct

    def out_of_budget(self) -> bool:
        b = self.budget
        return (
            (b.max_evaluations is not None and self.n_evaluations >= b.max_evaluations)
            or (b.max_seconds is not None and self.elapsed >= b.max_seconds)
            or self.n_proposals >= b.max_proposals
        )

    def exhausted(self) -> bool:
        """Out of budget, or every distinct config of the space has been evaluated."""
        return self.out_of_budget() or len(self.seen) >= self.n_distinct

    def measure(self, cfg, fidelity=None):
        """Evaluate without archiving; returns ``(objectives, duration)`` or ``(None, duration)``."""
        cfg = self.space.canonical(cfg)
        key = (cfg, fidelity)
        if key in self.cache:
            return self.cache[key], 0.0
        cost = self.evaluator.cost(cfg, fidelity)
        start = time.perf_counter()
        try:
            y = self.evaluator(cfg, fidelity)
        except (NumericalError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("evaluation of %r failed: %s", cfg, exc)
            self.n_failures += 1
            y = None
        if self.clock == "wall":
            cost = time.perf_counter() - start
        self.cache[key] = y
        self.seen.add(cfg)
        self.n_evaluations += 1
        return y, cost

    def evaluate(self, cfg, fidelity=None):
        """Evaluate, advance the clock and archive; returns objectives or None."""
        self.n_proposals += 1
        cfg = self.space.canonical(cfg)
        fresh = (cfg, fidelity) not in self.cache
        y, cost = self.measure(cfg, fidelity)
        self.elapsed += cost
        if fresh and y is not None:
            self.archive.add(cfg, y, self.elapsed, fidelity, self.seed)
        return y


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


# ----------------------------------------------------------------------------
# random search / local search / regularized evolution


def random_search(space, evaluator, budget, rng, *, clock="virtual", seed=None) -> ParetoArchive:
    rng = _rng(rng)
    run = Runner(space, evaluator, budget, clock, seed)
    while not run.exhausted():
        run.evaluate(space.sample(rng))
    return run.archive


def local_search(space, evaluator, budget, rng, start=None, *, clock="virtual", seed=None) -> ParetoArchive:
    """Mutate a uniformly chosen member of the current Pareto front, repeat."""
    rng = _rng(rng)
    run = Runner(space, evaluator, budget, clock, seed)
    start = space.max_config() if start is None else start
    run.evaluate(start)
    while not run.exhausted():
        front = run.archive.front_entries()
        if not front:
            parent = space.sample(rng)
        else:
            parent = front[int(rng.integers(len(front)))].config
        run.evaluate(space.mutate(parent, rng))
    return run.archive


def mo_rea(space, evaluator, budget, rng, population_size=20, sample_size=5, *, clock="virtual", seed=None) -> ParetoArchive:
    """Regularized evolution with non-dominated-sorting selection."""
    if not population_size >= sample_size >= 1:
        raise ValueError("need population_size >= sample_size >= 1")
    rng = _rng(rng)
    run = Runner(space, evaluator, budget, clock, seed)
    population: list[tuple[SubNetConfig, ObjectiveVector]] = []
    while len(population) < population_size and not run.exhausted():
        cfg = space.canonical(space.sample(rng))
        y = run.evaluate(cfg)
        if y is not None:
            population.append((cfg, y))
    while not run.exhausted() and population:
        idx = rng.choice(len(population), size=min(sample_size, len(population)), replace=False)
        parent = select_lowest_rank([population[i] for i in idx], rng)
        child = space.canonical(space.mutate(parent, rng))
        y = run.evaluate(child)
        if y is None:
            continue
        population.append((child, y))
        if len(population) > population_size:
            population.pop(0)
    return run.archive


def select_lowest_rank(members, rng) -> SubNetConfig:
    """Config from the first non-dominated front of ``members``, ties broken uniformly."""
    fronts = nondominated_sort([y for _, y in members])
    best = fronts[0]
    return members[best[int(rng.integers(len(best)))]][0]


# ----------------------------------------------------------------------------
# EHVI


def expected_hvi(front, mean, std, z, ref=REF_POINT) -> np.ndarray:
    """Monte-Carlo expected hypervolume improvement.

    ``mean``/``std`` are (n, 2) posterior moments and ``z`` an (S, 2) array of
    standard normal draws shared by all candidates.
    """
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    samples = mean[:, None, :] + std[:, None, :] * z[None, :, :]
    hvi = hypervolume_improvement(front, samples.reshape(-1, 2), ref)
    return hvi.reshape(len(mean), len(z)).mean(1)


def ehvi_search(space, evaluator, budget, rng, init_points=5, candidates_per_iter=256, mc_samples=512,
                *, clock="virtual", seed=None) -> ParetoArchive:
    """Bayesian optimization with a shared-kernel GP and MC expected HV improvement.

    Objectives are modelled after quantile normalization against all data seen
    so far; the reference point is (2, 2) in that normalized space.
    """
    if init_points < 2:
        raise ValueError("init_points must be >= 2")
    rng = _rng(rng)
    run = Runner(space, evaluator, budget, clock, seed)
    while len(run.archive) < init_points and not run.exhausted():
        run.evaluate(space.sample(rng))
    while not run.exhausted():
        run.evaluate(_ehvi_proposal(space, run, rng, candidates_per_iter, mc_samples))
    return run.archive


def _ehvi_proposal(space, run, rng, n_candidates, mc_samples):
    entries = run.archive.entries
    seen = set(run.seen)
    candidates = []
    for _ in range(4 * n_candidates):
        c = space.canonical(space.sample(rng))
        if c not in seen:
            seen.add(c)
            candidates.append(c)
            if len(candidates) >= n_candidates:
                break
    if not candidates:
        return space.sample(rng)
    if len(entries) < 2:
        return candidates[0]
    X = np.array([space.encode(e.config) for e in entries])
    Y = np.array([e.objectives for e in entries], dtype=float)
    Yn = QuantileNormalizer(Y).transform(Y)
    try:
        gp = GPModel(X, Yn)
    except GPFitError as exc:
        log.warning("GP fit failed (%s); proposing a random config", exc)
        return candidates[0]
    mean, var = gp.predict(np.array([space.encode(c) for c in candidates]))
    z = rng.standard_normal((mc_samples, 2))
    front = Yn[pareto_mask(Yn)]
    scores = expected_hvi(front, mean, np.sqrt(var), z)
    return candidates[int(np.argmax(scores))]


# ----------------------------------------------------------------------------
# MO-ASHA


@dataclass(frozen=True)
class RungSchedule:
    r_min: int = 1
    r_max: int = 4
    eta: int = 2

    def __post_init__(self):
        if self.eta < 2 or self.r_min < 1 or self.r_max < self.r_min:
            raise ValueError("need eta >= 2 and 1 <= r_min <= r_max")
        K = round(math.log(self.r_max / self.r_min, self.eta))
        if self.r_min * self.eta**K != self.r_max:
            raise ValueError("r_max / r_min must be an integer power of eta")

    @property
    def rungs(self) -> list[int]:
        out = [self.r_min]
        while out[-1] < self.r_max:
            out.append(out[-1] * self.eta)
        return out


class MOASHAScheduler:
    """Asynchronous successive halving with non-dominated-sorting promotion.

    A config that completed rung k is promotable if it ranks among the top
    ``floor(n_k / eta)`` of the ``n_k`` configs completed at rung k, has not
    been promoted yet, and fewer than ``floor(n_k / eta)`` configs have been
    promoted from rung k so far. Ranking: non-domination rank, then exclusive
    hypervolume contribution (quantile-normalized within the rung), then a
    random key drawn when the result arrived.
    """

    def __init__(self, schedule: RungSchedule, rng, sampler):
        self.schedule = schedule
        self.rng = _rng(rng)
        self.sampler = sampler
        n = len(schedule.rungs)
        self.results: list[dict] = [dict() for _ in range(n)]
        self.promoted: list[set] = [set() for _ in range(n)]
        self.tiebreak: dict = {}
        self.started: set = set()
        self.trace: list[tuple[SubNetConfig, int]] = []

    def ranking(self, k: int) -> list:
        done = self.results[k]
        cfgs = list(done)
        if not cfgs:
            return []
        Y = np.array([done[c] for c in cfgs], dtype=float)
        Yn = QuantileNormalizer(Y).transform(Y) if len(Y) > 1 else np.zeros_like(Y)
        order = []
        for front in nondominated_sort(Y):
            contrib = hv_contributions(Yn[front])
            keyed = sorted(zip(front, contrib), key=lambda t: (-t[1], self.tiebreak[cfgs[t[0]]]))
            order += [cfgs[i] for i, _ in keyed]
        return order

    def promotable(self, k: int) -> list:
        n_top = len(self.results[k]) // self.schedule.eta
        if len(self.promoted[k]) >= n_top:
            # the top set can change as results arrive; cap the total promotions
            return []
        return [c for c in self.ranking(k)[:n_top] if c not in self.promoted[k]]

    def get_job(self):
        """Next ``(config, rung_index)`` to run, or None when nothing is left."""
        for k in reversed(range(len(self.schedule.rungs) - 1)):
            cands = self.promotable(k)
            if cands:
                self.promoted[k].add(cands[0])
                self.trace.append((cands[0], k + 1))
                return cands[0], k + 1
        for _ in range(100):
            cfg = self.sampler()
            if cfg is None:
                return None
            if cfg not in self.started:
                self.started.add(cfg)
                self.trace.append((cfg, 0))
                return cfg, 0
        return None

    def report(self, cfg, k: int, objectives) -> None:
        self.results[k][cfg] = tuple(objectives)
        self.tiebreak.setdefault(cfg, float(self.rng.random()))


def mo_asha(space, evaluator, budget, rng, schedule: RungSchedule | None = None, n_workers: int = 1,
            sampler=None, *, clock="virtual", seed=None, return_scheduler=False):
    """Run MO-ASHA on a simulated pool of ``n_workers`` workers.

    Jobs complete in order of (virtual) finish time; the archive keeps each
    config's objectives at its highest completed rung.
    """
    schedule = schedule or RungSchedule()
    rng = _rng(rng)
    run = Runner(space, evaluator, budget, clock, seed)
    if sampler is None:
        def sampler():
            return space.canonical(space.sample(rng))
    sched = MOASHAScheduler(schedule, rng, sampler)
    rungs = schedule.rungs
    in_flight: list = []
    seq = itertools.count()
    now = 0.0
    while True:
        while len(in_flight) < n_workers and not run.out_of_budget():
            job = sched.get_job()
            if job is None:
                break
            cfg, k = job
            run.n_proposals += 1
            y, duration = run.measure(cfg, rungs[k])
            heapq.heappush(in_flight, (now + duration, next(seq), cfg, k, y))
        if not in_flight:
            break
        now, _, cfg, k, y = heapq.heappop(in_flight)
        run.elapsed = max(run.elapsed, now)
        if y is not None:
            sched.report(cfg, k, y)
            run.archive.add(cfg, y, now, rungs[k], seed)
    if return_scheduler:
        return run.archive, sched
    return run.archive


SEARCHERS = {
    "rs": random_search,
    "ls": local_search,
    "rea": mo_rea,
    "ehvi": ehvi_search,
    "moasha": mo_asha,
}
