"""Dominance, non-dominated sorting, quantile normalization and 2-D hypervolume.

Both objectives are minimized throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.stats import rankdata

REF_POINT = (2.0, 2.0)


class ObjectiveVector(NamedTuple):
    f0: float  # validation error
    f1: float  # parameter count (raw) or its normalized value


def dominates(a, b) -> bool:
    """True iff ``a`` is no worse than ``b`` everywhere and strictly better somewhere."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return bool(np.all(a <= b) and np.any(a < b))


def weakly_dominates(a, b) -> bool:
    return bool(np.all(np.asarray(a, dtype=float) <= np.asarray(b, dtype=float)))


def nondominated_sort(points) -> list[list[int]]:
    """Fast non-dominated sort. Returns fronts as lists of indices into ``points``."""
    Y = np.asarray(points, dtype=float).reshape(len(points), -1)
    n = len(Y)
    if n == 0:
        return []
    le = np.all(Y[:, None, :] <= Y[None, :, :], axis=-1)
    lt = np.any(Y[:, None, :] < Y[None, :, :], axis=-1)
    dom = le & lt  # dom[i, j]: i dominates j
    count = dom.sum(0)
    fronts = []
    current = np.flatnonzero(count == 0)
    while current.size:
        fronts.append(current.tolist())
        count = count - dom[current].sum(0)
        count[current] = -1
        current = np.flatnonzero(count == 0)
    return fronts


def pareto_mask(points) -> np.ndarray:
    """Boolean mask of points not dominated by any other point."""
    Y = np.asarray(points, dtype=float).reshape(len(points), -1)
    if len(Y) == 0:
        return np.zeros(0, dtype=bool)
    le = np.all(Y[:, None, :] <= Y[None, :, :], axis=-1)
    lt = np.any(Y[:, None, :] < Y[None, :, :], axis=-1)
    return ~(le & lt).any(0)


def nondominated_ranks(points) -> np.ndarray:
    ranks = np.empty(len(points), dtype=int)
    for r, front in enumerate(nondominated_sort(points)):
        ranks[front] = r
    return ranks


# ----------------------------------------------------------------------------
# hypervolume


def _staircase(front: np.ndarray):
    """Non-dominated points sorted by f0 ascending (f1 then strictly descending)."""
    front = front[pareto_mask(front)]
    order = np.lexsort((front[:, 1], front[:, 0]))
    front = front[order]
    # drop exact duplicates
    keep = np.ones(len(front), dtype=bool)
    keep[1:] = np.any(np.diff(front, axis=0) != 0, axis=1)
    return front[keep]


def hypervolume(front, ref=REF_POINT) -> float:
    """Exact area dominated by ``front`` inside the box bounded by ``ref``."""
    ref = np.asarray(ref, dtype=float)
    Y = np.asarray(front, dtype=float).reshape(-1, 2)
    if len(Y) == 0:
        return 0.0
    if np.any(Y > ref):
        raise ValueError("every point must be <= the reference point")
    S = _staircase(Y)
    prev_f1 = np.concatenate(([ref[1]], S[:-1, 1]))
    return float(np.sum((ref[0] - S[:, 0]) * (prev_f1 - S[:, 1])))


def hypervolume_improvement(front, candidates, ref=REF_POINT) -> np.ndarray:
    """HV(front + y) - HV(front) for each row y of ``candidates`` (vectorized).

    Candidates outside the reference box are clipped to it, so they score zero
    improvement in the coordinates that exceed it.
    """
    ref = np.asarray(ref, dtype=float)
    Y = np.asarray(candidates, dtype=float).reshape(-1, 2)
    Y = np.minimum(Y, ref)
    F = np.asarray(front, dtype=float).reshape(-1, 2)
    if len(F):
        S = _staircase(F)
        left = np.concatenate(([-np.inf], S[:, 0]))
        right = np.concatenate((S[:, 0], [ref[0]]))
        height = np.concatenate(([ref[1]], S[:, 1]))
    else:
        left, right, height = np.array([-np.inf]), np.array([ref[0]]), np.array([ref[1]])
    width = np.clip(right[None, :] - np.maximum(left[None, :], Y[:, :1]), 0.0, None)
    tall = np.clip(height[None, :] - Y[:, 1:], 0.0, None)
    return (width * tall).sum(1)


def hv_contributions(points, ref=REF_POINT) -> np.ndarray:
    """Exclusive hypervolume contribution of each point (0 for dominated or duplicated points)."""
    Y = np.asarray(points, dtype=float).reshape(-1, 2)
    total = hypervolume(Y, ref)
    out = np.empty(len(Y))
    for i in range(len(Y)):
        out[i] = total - hypervolume(np.delete(Y, i, axis=0), ref)
    return out


# ----------------------------------------------------------------------------
# normalization


class QuantileNormalizer:
    """Maps each objective onto [0, 1] by its mid-rank among pooled observations.

    In-sample values map to ``(mid_rank) / (N - 1)`` (0-based ranks). Values
    not seen during fitting are linearly interpolated between neighbouring
    pooled values and clipped to [0, 1].
    """

    def __init__(self, pooled):
        Y = np.asarray(pooled, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if len(Y) < 2:
            raise ValueError("quantile normalization needs at least 2 pooled values")
        self.knots = []
        for j in range(Y.shape[1]):
            col = Y[:, j]
            q = (rankdata(col, method="average") - 1.0) / (len(col) - 1.0)
            xs, idx = np.unique(col, return_index=True)
            self.knots.append((xs, q[idx]))

    def transform(self, values) -> np.ndarray:
        Y = np.asarray(values, dtype=float)
        single = Y.ndim == 1 and len(Y) == len(self.knots) and len(self.knots) > 1
        Y = Y.reshape(-1, len(self.knots))
        out = np.empty_like(Y)
        for j, (xs, qs) in enumerate(self.knots):
            if len(xs) == 1:
                out[:, j] = np.where(Y[:, j] < xs[0], 0.0, np.where(Y[:, j] > xs[0], 1.0, qs[0]))
            else:
                out[:, j] = np.interp(Y[:, j], xs, qs, left=0.0, right=1.0)
        return out[0] if single else out


def quantile_normalize(values) -> np.ndarray:
    """Mid-rank / (N - 1) of each value among ``values`` (1-D)."""
    v = np.asarray(values, dtype=float).ravel()
    if len(v) < 2:
        raise ValueError("quantile normalization needs at least 2 values")
    return (rankdata(v, method="average") - 1.0) / (len(v) - 1.0)


# ----------------------------------------------------------------------------
# archive


@dataclass
class ArchiveEntry:
    config: object
    objectives: ObjectiveVector
    wallclock: float
    fidelity: float | None = None
    seed: int | None = None


@dataclass
class ParetoArchive:
    """Evaluation history plus its non-dominated subset.

    ``add`` with a config that is already present replaces its objectives
    (used for multi-fidelity runs where a config is re-observed at a higher
    rung); ``records`` keeps every single observation in arrival order.
    """

    entries: list[ArchiveEntry] = field(default_factory=list)
    records: list[ArchiveEntry] = field(default_factory=list)
    _front: list[int] = field(default_factory=list)
    _index: dict = field(default_factory=dict)

    def add(self, config, objectives, wallclock: float, fidelity=None, seed=None) -> ArchiveEntry:
        entry = ArchiveEntry(config, ObjectiveVector(*map(float, objectives)), float(wallclock), fidelity, seed)
        self.records.append(entry)
        if config in self._index:
            self.entries[self._index[config]] = entry
            self._rebuild_front()
        else:
            self._index[config] = len(self.entries)
            self.entries.append(entry)
            self._insert(len(self.entries) - 1)
        return entry

    def _insert(self, i: int) -> None:
        y = self.entries[i].objectives
        if any(weakly_dominates(self.entries[j].objectives, y) and self.entries[j].objectives != y
               for j in self._front):
            return
        self._front = [j for j in self._front if not dominates(y, self.entries[j].objectives)]
        self._front.append(i)

    def _rebuild_front(self) -> None:
        if not self.entries:
            self._front = []
            return
        self._front = np.flatnonzero(pareto_mask(self.objectives())).tolist()

    def __len__(self):
        return len(self.entries)

    def __contains__(self, config):
        return config in self._index

    def get(self, config) -> ArchiveEntry | None:
        i = self._index.get(config)
        return None if i is None else self.entries[i]

    @property
    def front(self) -> list[int]:
        return sorted(self._front)

    def front_entries(self) -> list[ArchiveEntry]:
        return [self.entries[i] for i in self.front]

    def objectives(self) -> np.ndarray:
        return np.array([e.objectives for e in self.entries], dtype=float).reshape(-1, 2)

    def front_objectives(self) -> np.ndarray:
        return np.array([self.entries[i].objectives for i in self.front], dtype=float).reshape(-1, 2)


# ----------------------------------------------------------------------------
# traces, regret and ranks


def hv_trace(records, normalizer: QuantileNormalizer, ref=REF_POINT):
    """Running (wallclock, hypervolume) of the front formed by ``records``.

    Each record is ``(config, objectives, wallclock)``-like; a later record
    for the same config replaces the earlier one.
    """
    latest: dict = {}
    times, hvs = [], []
    for r in records:
        latest[r.config] = r.objectives
        Y = normalizer.transform(np.array(list(latest.values()), dtype=float))
        times.append(r.wallclock)
        hvs.append(hypervolume(Y, ref))
    return np.asarray(times), np.asarray(hvs)


def hypervolume_regret(archive_or_front, best_possible_hv: float, normalizer=None, ref=REF_POINT) -> float:
    if isinstance(archive_or_front, ParetoArchive):
        Y = archive_or_front.front_objectives()
    else:
        Y = np.asarray(archive_or_front, dtype=float).reshape(-1, 2)
    if normalizer is not None and len(Y):
        Y = normalizer.transform(Y)
    regret = best_possible_hv - hypervolume(Y, ref)
    if regret < -1e-9:
        raise ValueError(
            f"negative hypervolume regret ({regret:.3g}): best_possible_hv is below the archive's HV"
        )
    return max(regret, 0.0)


def step_interpolate(times, values, grid, fill=0.0) -> np.ndarray:
    """Last-value-carried-forward resampling of a trace onto ``grid``."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(times) == 0:
        return np.full(len(grid), fill, dtype=float)
    idx = np.searchsorted(times, grid, side="right") - 1
    return np.where(idx >= 0, values[np.clip(idx, 0, None)], fill)


def _ranks_desc(hv: np.ndarray) -> np.ndarray:
    """Rank methods along axis 0 (higher HV -> rank 1, ties share the mean rank)."""
    return rankdata(-hv, method="average", axis=0)


def average_ranks(results, grid, bootstrap_samples: int = 1000, rng=None) -> dict[str, np.ndarray]:
    """Bootstrap average rank per method on a shared time grid.

    ``results[method][task]`` is a list (one per seed) of ``(times, hvs)``
    traces. Each bootstrap draw picks one seed per (task, method), ranks the
    methods per task and time step, and averages over tasks; the result
    averages over draws.
    """
    if not results:
        raise ValueError("average_ranks needs at least one method")
    methods = sorted(results)
    if len(methods) < 2:
        raise ValueError("average_ranks needs at least two methods")
    tasks = sorted(results[methods[0]])
    if not tasks:
        raise ValueError("no tasks in results")
    grid = np.asarray(grid, dtype=float)
    rng = np.random.default_rng(rng)
    # curves[task] : list over methods of (n_seeds, T)
    curves = {
        t: [np.array([step_interpolate(tr[0], tr[1], grid) for tr in results[m][t]]) for m in methods]
        for t in tasks
    }
    total = np.zeros((len(methods), len(grid)))
    for _ in range(bootstrap_samples):
        per_task = np.zeros_like(total)
        for t in tasks:
            picks = np.stack([c[rng.integers(len(c))] for c in curves[t]])
            per_task += _ranks_desc(picks)
        total += per_task / len(tasks)
    total /= bootstrap_samples
    return {m: total[i] for i, m in enumerate(methods)}
