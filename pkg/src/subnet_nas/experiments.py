"""Desk-scale directional experiments shared by ``scripts/`` and the acceptance tests."""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .harness import layer_drop_baseline, param_count_samples
from .model import ModelDims, SuperNetwork
from .pareto import ParetoArchive, QuantileNormalizer, hypervolume, pareto_mask, weakly_dominates
from .searchers import (
    Budget,
    Evaluator,
    FunctionEvaluator,
    SharedWeightsEvaluator,
    ehvi_search,
    local_search,
    mo_rea,
    random_search,
)
from .spaces import SearchSpace, SpaceKind
from .tasks import SyntheticTask, generate_task
from .training import TrainStrategy, evaluate_subnet, train_supernet

# ----------------------------------------------------------------------------
# sampling distributions


def ks_uniform_continuous(x, lo: float, hi: float) -> float:
    x = np.sort((np.asarray(x, dtype=float) - lo) / (hi - lo))
    n = len(x)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - x), np.max(x - (i - 1) / n)))


def ks_uniform_discrete(x, atoms) -> float:
    """Sup distance between the empirical CDF and a uniform law on ``atoms``."""
    atoms = np.sort(np.unique(atoms))
    x = np.asarray(x)
    emp = np.array([(x <= a).mean() for a in atoms])
    ref = np.arange(1, len(atoms) + 1) / len(atoms)
    return float(np.max(np.abs(emp - ref)))


@dataclass
class SamplerStats:
    space: str
    median_frac: float      # median param count, as a fraction of [min, max]
    mid_half_mass: float    # share of samples in the middle half of [min, max]
    ks_continuous: float
    ks_discrete: float | None


def sampler_stats(dims: ModelDims | None = None, n: int = 500, seed: int = 0) -> dict[str, SamplerStats]:
    dims = dims or ModelDims()
    out = {}
    for kind in SpaceKind:
        space = SearchSpace(kind, dims)
        counts = param_count_samples(space, n, seed)
        lo, hi = space.param_count(space.min_config()), space.param_count(space.max_config())
        frac = (counts - lo) / (hi - lo)
        ks_d = None
        if kind is SpaceKind.LAYER:
            atoms = [space.param_count(space.config([1] * j + [0] * (dims.n_layers - j)))
                     for j in range(dims.n_layers + 1)]
            ks_d = ks_uniform_discrete(counts, atoms)
        out[kind.value] = SamplerStats(
            kind.value,
            float(np.median(frac)),
            float(np.mean((frac >= 0.25) & (frac <= 0.75))),
            ks_uniform_continuous(counts, lo, hi),
            ks_d,
        )
    return out


# ----------------------------------------------------------------------------
# exhaustive LAYER oracle


def layer_oracle_evaluator(dims: ModelDims, seed: int = 0):
    """Deterministic shared-weights evaluator on the LAYER space.

    The super-network is a random init; errors on a small validation set are
    cached per config, so the objective is a fixed function of the config.
    """
    space = SearchSpace(SpaceKind.LAYER, dims)
    task = SyntheticTask("majority", dims.vocab_size, min(dims.max_len, 16), dims.n_classes,
                         n_examples=200, n_test=50, seed=seed)
    net = SuperNetwork.init(dims, seed)
    return space, SharedWeightsEvaluator(net, generate_task(task))


def true_front(space: SearchSpace, evaluator) -> set:
    cfgs = list(space.enumerate())
    Y = np.array([evaluator(c) for c in cfgs], dtype=float)
    mask = pareto_mask(Y)
    return {tuple(map(float, y)) for y in Y[mask]}


def recovers_front(archive: ParetoArchive, front: set) -> bool:
    return {tuple(map(float, y)) for y in archive.front_objectives()} == front


def exhaustive_oracle(seeds=range(10), budget: int = 30) -> dict[str, list[bool]]:
    dims = ModelDims(n_layers=3)
    space, ev = layer_oracle_evaluator(dims)
    cache = {}

    def fn(cfg, fid):
        if cfg not in cache:
            cache[cfg] = tuple(ev(cfg))
        return cache[cfg]

    fev = FunctionEvaluator(fn)
    front = true_front(space, fev)
    out = {"rs": [], "ls": [], "rea": []}
    for s in seeds:
        out["rs"].append(recovers_front(random_search(space, fev, Budget(max_evaluations=budget), s), front))
        out["ls"].append(recovers_front(local_search(space, fev, Budget(max_evaluations=budget), s), front))
        out["rea"].append(recovers_front(
            mo_rea(space, fev, Budget(max_evaluations=budget), s, population_size=4, sample_size=2), front))
    return out


# ----------------------------------------------------------------------------
# training strategies


@functools.lru_cache(maxsize=64)
def _majority(seed: int = 0):
    return generate_task(SyntheticTask("majority", seed=seed))


@functools.lru_cache(maxsize=64)
def trained_supernet(strategy: str, seed: int, epochs: int = 5, space: str = "small", data_seed: int = 0):
    """Cached so that several experiments can share one super-network per seed."""
    dims = ModelDims()
    net = SuperNetwork.init(dims, seed)
    train_supernet(net, _majority(data_seed), TrainStrategy(strategy), epochs, seed, SearchSpace(space, dims))
    return net


def strategy_comparison(seed: int, strategies=("standard", "random", "full"), epochs: int = 5,
                        n_subnets: int = 100) -> dict[str, float]:
    """HV of the same ``n_subnets`` random SMALL sub-networks under each strategy's weights.

    Objectives are quantile-normalized over the pooled evaluations of all
    strategies for this seed.
    """
    dims = ModelDims()
    space = SearchSpace(SpaceKind.SMALL, dims)
    data = _majority()
    rng = np.random.default_rng([seed, 100])
    cfgs = [space.sample(rng) for _ in range(n_subnets)]
    objs = {}
    for strat in strategies:
        net = trained_supernet(strat, seed, epochs)
        objs[strat] = np.array([evaluate_subnet(net, c, data) for c in cfgs], dtype=float)
    qn = QuantileNormalizer(np.concatenate(list(objs.values())))
    return {s: hypervolume(qn.transform(y)) for s, y in objs.items()}


# ----------------------------------------------------------------------------
# EHVI vs random search


def smooth_objective(space: SearchSpace):
    """Deterministic bi-objective over SMALL: a smooth error surrogate and the parameter count."""
    d = space.dims
    H, U, L = d.n_heads, d.n_units, d.n_layers

    def fn(cfg, fidelity=None):
        h, u, l = cfg.values
        f0 = 0.5 * np.exp(-2.0 * (h / H + 2 * u / U) * l / L) + 0.02 * np.cos(3 * np.pi * u / U)
        return float(f0), float(space.param_count(cfg))

    return fn


def evaluations_to_fraction(archive: ParetoArchive, qn: QuantileNormalizer, target: float,
                            missing: int = 10**6) -> int:
    Y = np.array([r.objectives for r in archive.records], dtype=float)
    Yn = qn.transform(Y).reshape(-1, 2)
    for i in range(len(Yn)):
        if hypervolume(Yn[: i + 1]) >= target:
            return i + 1
    return missing


def ehvi_vs_random(seeds=range(10), fraction: float = 0.9, ehvi_evals: int = 40, rs_evals: int = 200,
                   init_points: int = 3, candidates: int = 1024, mc_samples: int = 512):
    """Evaluations needed to reach ``fraction`` of the best HV, per seed and method."""
    space = SearchSpace(SpaceKind.SMALL, ModelDims())
    fn = smooth_objective(space)
    ev = FunctionEvaluator(fn)
    allc = list({space.canonical(c) for c in space.enumerate()})
    Y = np.array([fn(c) for c in allc])
    qn = QuantileNormalizer(Y)
    best = hypervolume(qn.transform(Y)[pareto_mask(Y)])
    target = fraction * best
    rs, eh = [], []
    for s in seeds:
        rs.append(evaluations_to_fraction(random_search(space, ev, Budget(max_evaluations=rs_evals), s), qn, target))
        eh.append(evaluations_to_fraction(
            ehvi_search(space, ev, Budget(max_evaluations=ehvi_evals), s, init_points=init_points,
                        candidates_per_iter=candidates, mc_samples=mc_samples), qn, target))
    return rs, eh


# ----------------------------------------------------------------------------
# layer dropping vs weight-sharing NAS


def front_weakly_dominated(front, by) -> bool:
    """True if every point of ``front`` is weakly dominated by some point of ``by``."""
    by = np.asarray(by, dtype=float).reshape(-1, 2)
    return all(any(weakly_dominates(b, p) for b in by) for p in np.asarray(front, dtype=float).reshape(-1, 2))


class MemoEvaluator(Evaluator):
    """Shares results of a deterministic evaluator between searchers; costs are unchanged."""

    def __init__(self, inner: Evaluator):
        self.inner = inner
        self.memo: dict = {}

    def _evaluate(self, cfg, fidelity):
        key = (cfg, fidelity)
        if key not in self.memo:
            self.memo[key] = self.inner(cfg, fidelity)
        return self.memo[key]

    def cost(self, cfg, fidelity=None):
        return self.inner.cost(cfg, fidelity)


@dataclass
class LayerDropResult:
    seed: int
    ld: ParetoArchive
    ws_front: np.ndarray
    budget_s: float

    @property
    def dominated(self) -> bool:
        return front_weakly_dominated(self.ld.front_objectives(), self.ws_front)


def layer_drop_vs_ws(seed: int, epochs: int = 5, strategy: str = "full",
                     methods=("rs", "ls", "rea")) -> LayerDropResult:
    """Layer dropping against WS-NAS search with the same virtual wallclock.

    Each WS searcher gets the full virtual time the layer-dropping baseline
    spent on fine-tuning; the fronts of all searchers are merged.
    """
    dims = ModelDims()
    data = _majority()
    pretrained = SuperNetwork.init(dims, seed)
    ld = layer_drop_baseline(pretrained, data, epochs, seed)
    budget_s = max(e.wallclock for e in ld.records)
    net = trained_supernet(strategy, seed, epochs)
    space = SearchSpace(SpaceKind.SMALL, dims)
    ev = MemoEvaluator(SharedWeightsEvaluator(net, data))
    search = {"rs": random_search, "ls": local_search, "rea": mo_rea, "ehvi": ehvi_search}
    fronts = []
    for i, m in enumerate(methods):
        arch = search[m](space, ev, Budget(max_seconds=budget_s), np.random.default_rng([seed, i]), seed=seed)
        fronts.append(arch.front_objectives())
    union = np.concatenate(fronts)
    return LayerDropResult(seed, ld, union[pareto_mask(union)], budget_s)


def exhaustive_ws_front(seed: int, epochs: int = 5, strategy: str = "full") -> np.ndarray:
    """Pareto front of every distinct SMALL sub-network under the shared weights.

    No searcher can return a better front from the same super-network, which
    makes this an upper bound for the WS side of the layer-dropping comparison.
    """
    space = SearchSpace(SpaceKind.SMALL, ModelDims())
    ev = SharedWeightsEvaluator(trained_supernet(strategy, seed, epochs), _majority())
    cfgs = sorted({space.canonical(c) for c in space.enumerate()}, key=lambda c: c.values)
    Y = np.array([ev(c) for c in cfgs], dtype=float)
    return Y[pareto_mask(Y)]
