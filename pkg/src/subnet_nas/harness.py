"""Experiment configuration, orchestration, persistence and plot data."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import shutil
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelDims, SuperNetwork
from .pareto import (
    REF_POINT,
    ParetoArchive,
    QuantileNormalizer,
    average_ranks,
    hv_trace,
    hypervolume,
    pareto_mask,
)
from .searchers import (
    SEARCHERS,
    Budget,
    RungSchedule,
    SharedWeightsEvaluator,
    StandaloneEvaluator,
    mo_asha,
)
from .spaces import SearchSpace, SpaceKind
from .tasks import Dataset, SyntheticTask, generate_task
from .training import TrainStrategy, train_supernet

log = logging.getLogger(__name__)

WS_METHODS = ("ws-rs", "ws-ls", "ws-rea", "ws-ehvi")
SNAS_METHODS = ("snas-rs", "snas-ls", "snas-rea", "snas-ehvi", "snas-moasha")
METHODS = WS_METHODS + SNAS_METHODS + ("ld",)
OUTPUTS = ("config.json", "failures.jsonl", "histories", "checkpoints", "metrics", "plots")
N_GRID = 50


@dataclass
class ExperimentConfig:
    """Everything a benchmark run depends on. Serialized as plain JSON."""

    name: str = "experiment"
    task: SyntheticTask = field(default_factory=SyntheticTask)
    space: str = "small"
    dims: ModelDims = field(default_factory=ModelDims)
    methods: list[str] = field(default_factory=lambda: ["ws-rs", "ws-ehvi"])
    strategy: TrainStrategy = field(default_factory=TrainStrategy)
    epochs: int = 5
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    ws_seconds: float = 60.0
    snas_seconds: float = 300.0
    max_evaluations: int | None = None
    clock: str = "virtual"
    searcher_options: dict = field(default_factory=dict)
    output_dir: str = "results"

    def __post_init__(self):
        if isinstance(self.task, dict):
            self.task = SyntheticTask(**self.task)
        if isinstance(self.dims, dict):
            self.dims = ModelDims.from_dict(self.dims)
        if isinstance(self.strategy, dict):
            self.strategy = TrainStrategy(**self.strategy)
        SpaceKind(self.space)
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; choose from {list(METHODS)}")
        if not self.methods:
            raise ValueError("methods must not be empty")
        if len(set(self.seeds)) != len(self.seeds) or not self.seeds:
            raise ValueError("seeds must be a non-empty list of distinct integers")
        if self.task.vocab_size != self.dims.vocab_size or self.task.n_classes != self.dims.n_classes:
            raise ValueError("task vocab_size/n_classes must match dims")
        if self.task.seq_len > self.dims.max_len:
            raise ValueError("task seq_len exceeds dims.max_len")
        if self.clock not in ("virtual", "wall"):
            raise ValueError("clock must be 'virtual' or 'wall'")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def to_json(self) -> dict:
        d = asdict(self)
        d["strategy"]["kind"] = self.strategy.kind.value
        return d

    @classmethod
    def from_json(cls, doc: dict) -> ExperimentConfig:
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        return cls(**doc)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read a JSON config; ``SUBNET_NAS_OUT`` overrides ``output_dir``."""
    doc = json.loads(Path(path).read_text())
    if os.environ.get("SUBNET_NAS_OUT"):
        doc["output_dir"] = os.environ["SUBNET_NAS_OUT"]
    doc.update(overrides or {})
    return ExperimentConfig.from_json(doc)


# ----------------------------------------------------------------------------
# records


def record(method: str, task: str, seed: int, entry) -> dict:
    return {
        "method": method,
        "task": task,
        "seed": seed,
        "space": entry.config.space.kind.value,
        "config": list(entry.config.values),
        "f0": entry.objectives.f0,
        "f1": entry.objectives.f1,
        "fidelity_epochs": entry.fidelity,
        "wallclock_s": entry.wallclock,
    }


def write_jsonl(path: Path, rows) -> None:
    with open(path, "w") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_jsonl(path: Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    return buf.getvalue()


# ----------------------------------------------------------------------------
# baselines


def layer_drop_baseline(pretrained: SuperNetwork, data: Dataset, epochs: int, seed: int = 0,
                        lr: float = 1e-3, batch_size: int = 16) -> ParetoArchive:
    """Fine-tune the network with its top n layers removed, for n = 0 .. L-1."""
    L = pretrained.dims.n_layers
    if L < 2:
        raise ValueError("layer dropping needs at least 2 layers")
    space = SearchSpace(SpaceKind.LAYER, pretrained.dims)
    evaluator = StandaloneEvaluator(pretrained, data, epochs, seed, lr, batch_size)
    archive = ParetoArchive()
    clock = 0.0
    for n in range(L):
        cfg = space.config([1] * (L - n) + [0] * n)
        clock += evaluator.cost(cfg, epochs)
        y = evaluator(cfg, epochs)
        archive.add(cfg, y, clock, epochs, seed)
    return archive


# ----------------------------------------------------------------------------
# orchestration


def _budget(cfg: ExperimentConfig, seconds: float) -> Budget:
    if cfg.max_evaluations is not None:
        return Budget(max_evaluations=cfg.max_evaluations, max_seconds=seconds)
    return Budget(max_seconds=seconds)


def _searcher_kwargs(cfg: ExperimentConfig, name: str) -> dict:
    opts = dict(cfg.searcher_options.get(name, {}))
    if name == "moasha":
        sched = RungSchedule(**{k: opts.pop(k) for k in ("r_min", "r_max", "eta") if k in opts})
        opts["schedule"] = sched
    return opts


def supernet_path(out: Path, seed: int) -> Path:
    return out / "checkpoints" / f"supernet_seed{seed}.json"


def train_seed_supernet(cfg: ExperimentConfig, seed: int, data: Dataset, out: Path | None = None):
    net = SuperNetwork.init(cfg.dims, seed)
    space = SearchSpace(cfg.space, cfg.dims)
    ckpt = supernet_path(out, seed) if out is not None else None
    report = train_supernet(net, data, cfg.strategy, cfg.epochs, seed, space, seed=seed, checkpoint=ckpt)
    if out is not None:
        report.save(out / "checkpoints" / f"train_report_seed{seed}.json")
    return net, report


def run_method(cfg: ExperimentConfig, method: str, seed: int, data: Dataset,
               supernet: SuperNetwork | None) -> ParetoArchive:
    space = SearchSpace(cfg.space, cfg.dims)
    pretrained = SuperNetwork.init(cfg.dims, seed)
    rng = np.random.default_rng([seed, METHODS.index(method)])
    if method == "ld":
        return layer_drop_baseline(pretrained, data, cfg.epochs, seed, cfg.strategy.lr, cfg.strategy.batch_size)
    family, name = method.split("-", 1)
    kwargs = _searcher_kwargs(cfg, name)
    if family == "ws":
        evaluator = SharedWeightsEvaluator(supernet, data)
        budget = _budget(cfg, cfg.ws_seconds)
    else:
        evaluator = StandaloneEvaluator(pretrained, data, cfg.epochs, seed, cfg.strategy.lr, cfg.strategy.batch_size)
        budget = _budget(cfg, cfg.snas_seconds)
    search = mo_asha if name == "moasha" else SEARCHERS[name]
    return search(space, evaluator, budget, rng, clock=cfg.clock, seed=seed, **kwargs)


def run_seed(cfg: ExperimentConfig, seed: int, out: Path | None):
    """All configured methods for one seed; failures are isolated per method."""
    data = generate_task(cfg.task)
    histories, failures = {}, []
    supernet = None
    if any(m.startswith("ws-") for m in cfg.methods):
        try:
            supernet, _ = train_seed_supernet(cfg, seed, data, out)
        except Exception as exc:  # noqa: BLE001 - recorded, other cells proceed
            failures += [{"method": m, "seed": seed, "error": f"supernet: {exc!r}"}
                         for m in cfg.methods if m.startswith("ws-")]
    for method in cfg.methods:
        if method.startswith("ws-") and supernet is None:
            continue
        try:
            archive = run_method(cfg, method, seed, data, supernet)
            histories[method] = [record(method, cfg.task.name, seed, e) for e in archive.records]
        except Exception as exc:  # noqa: BLE001
            log.error("%s seed %d failed: %s", method, seed, exc)
            failures.append({"method": method, "seed": seed, "error": repr(exc),
                             "traceback": traceback.format_exc(limit=3)})
    return seed, histories, failures


def _prepare_output(out: Path, force: bool) -> None:
    existing = [name for name in OUTPUTS if (out / name).exists()]
    if existing and not force:
        raise FileExistsError(f"{out} already holds results ({', '.join(existing)}); use --force to overwrite")
    for name in existing:
        p = out / name
        shutil.rmtree(p) if p.is_dir() else p.unlink()
    (out / "histories").mkdir(parents=True, exist_ok=True)
    (out / "checkpoints").mkdir(exist_ok=True)
    (out / "metrics").mkdir(exist_ok=True)


def run_experiment(cfg: ExperimentConfig, out: str | Path | None = None, force: bool = False,
                   threads: int | None = None) -> Path:
    """Run every (method, seed) cell, then compute pooled metrics. Returns the output dir."""
    out = Path(out or cfg.output_dir)
    threads = threads or int(os.environ.get("SUBNET_NAS_THREADS", "1"))
    _prepare_output(out, force)
    (out / "config.json").write_text(json.dumps(cfg.to_json(), indent=1, sort_keys=True))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_seed, [cfg] * len(cfg.seeds), cfg.seeds, [out] * len(cfg.seeds)))
    else:
        results = [run_seed(cfg, s, out) for s in cfg.seeds]
    failures = []
    for seed, histories, fails in sorted(results, key=lambda r: r[0]):
        failures += fails
        for method, rows in histories.items():
            write_jsonl(out / "histories" / f"{method}__seed{seed}.jsonl", rows)
    write_jsonl(out / "failures.jsonl", failures)
    compute_metrics(out)
    return out


# ----------------------------------------------------------------------------
# metrics


def load_histories(results_dir: Path) -> dict[tuple[str, int], list[dict]]:
    hist_dir = Path(results_dir) / "histories"
    files = sorted(hist_dir.glob("*.jsonl")) if hist_dir.is_dir() else []
    if not files:
        raise FileNotFoundError(f"no history files in {hist_dir}")
    out = {}
    for f in files:
        rows = read_jsonl(f)
        if rows:
            out[(rows[0]["method"], int(rows[0]["seed"]))] = rows
    if not out:
        raise FileNotFoundError(f"all history files in {hist_dir} are empty")
    return out


class _Rec:
    __slots__ = ("config", "objectives", "wallclock")

    def __init__(self, row):
        self.config = (row["space"], tuple(row["config"]))
        self.objectives = (row["f0"], row["f1"])
        self.wallclock = row["wallclock_s"]


def pooled_normalizer(histories) -> QuantileNormalizer:
    pool = np.array([(r["f0"], r["f1"]) for rows in histories.values() for r in rows], dtype=float)
    return QuantileNormalizer(pool)


def compute_metrics(results_dir: Path) -> None:
    """Pooled quantile normalization, HV/regret traces and bootstrap average ranks."""
    results_dir = Path(results_dir)
    histories = load_histories(results_dir)
    qn = pooled_normalizer(histories)
    tasks = sorted({rows[0]["task"] for rows in histories.values()})
    metrics = results_dir / "metrics"
    metrics.mkdir(exist_ok=True)
    rank_input: dict = {}
    t_max = 0.0
    for task in tasks:
        cells = {k: v for k, v in histories.items() if v[0]["task"] == task}
        union = np.concatenate([qn.transform(np.array([(r["f0"], r["f1"]) for r in rows])) for rows in cells.values()])
        best = hypervolume(union[pareto_mask(union)], REF_POINT)
        rows_out = []
        for (method, seed), rows in sorted(cells.items()):
            times, hvs = hv_trace([_Rec(r) for r in rows], qn, REF_POINT)
            for t, hv in zip(times, hvs):
                rows_out.append((method, seed, t, hv, max(best - hv, 0.0)))
            rank_input.setdefault(method, {}).setdefault(task, []).append((times, hvs))
            t_max = max(t_max, float(times[-1]))
        (metrics / f"hv_{task}.csv").write_text(
            _csv_text(("method", "seed", "wallclock_s", "hv", "regret"), rows_out))
    rank_rows = []
    if len(rank_input) >= 2 and all(set(v) == set(tasks) for v in rank_input.values()):
        grid = np.linspace(0.0, t_max, N_GRID)
        ranks = average_ranks(rank_input, grid, bootstrap_samples=1000, rng=0)
        for method in sorted(ranks):
            rank_rows += [(method, t, r) for t, r in zip(grid, ranks[method])]
    (metrics / "ranks.csv").write_text(_csv_text(("method", "time", "mean_rank"), rank_rows))


# ----------------------------------------------------------------------------
# plot data


def param_count_samples(space: SearchSpace, n: int = 500, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.array([space.param_count(space.sample(rng)) for _ in range(n)])


def emit_plot_data(results_dir: str | Path, n_samples: int = 500, bins: int = 20) -> Path:
    """Write the CSVs behind the front, regret, rank and sampling-histogram plots."""
    results_dir = Path(results_dir)
    missing = [p for p in ("config.json", "metrics/ranks.csv") if not (results_dir / p).exists()]
    if missing:
        raise FileNotFoundError(f"missing inputs in {results_dir}: {', '.join(missing)}")
    histories = load_histories(results_dir)
    hv_files = sorted((results_dir / "metrics").glob("hv_*.csv"))
    if not hv_files:
        raise FileNotFoundError(f"missing inputs in {results_dir}: metrics/hv_<task>.csv")
    cfg = ExperimentConfig.from_json(json.loads((results_dir / "config.json").read_text()))
    qn = pooled_normalizer(histories)

    files = {}
    front_rows = []
    for (method, seed), rows in sorted(histories.items()):
        latest = {}
        for r in rows:
            latest[(r["space"], tuple(r["config"]))] = (r["f0"], r["f1"])
        Y = np.array(list(latest.values()), dtype=float)
        Yn = qn.transform(Y)
        for y, yn in zip(Y[pareto_mask(Y)], Yn[pareto_mask(Y)]):
            front_rows.append((method, seed, y[0], y[1], yn[0], yn[1]))
    files["pareto_fronts.csv"] = _csv_text(("method", "seed", "f0", "f1", "f0_norm", "f1_norm"), front_rows)

    regret_rows = []
    for f in hv_files:
        with open(f) as fh:
            for r in csv.DictReader(fh):
                regret_rows.append((r["method"], r["seed"], r["wallclock_s"], r["regret"]))
    files["regret.csv"] = _csv_text(("method", "seed", "wallclock_s", "regret"), regret_rows)
    files["ranks.csv"] = (results_dir / "metrics" / "ranks.csv").read_text()

    hist_rows = []
    for kind in SpaceKind:
        space = SearchSpace(kind, cfg.dims)
        counts = param_count_samples(space, n_samples)
        lo, hi = space.param_count(space.min_config()), space.param_count(space.max_config())
        hist, edges = np.histogram(counts, bins=bins, range=(lo, hi))
        hist_rows += [(kind.value, int(a), int(b), int(c)) for a, b, c in zip(edges[:-1], edges[1:], hist)]
    files["param_count_hist.csv"] = _csv_text(("space", "bin_lo", "bin_hi", "count"), hist_rows)

    plots = results_dir / "plots"
    plots.mkdir(exist_ok=True)
    for name, text in files.items():
        (plots / name).write_text(text)
    return plots
