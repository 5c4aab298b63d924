import csv
import json
import shutil

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from subnet_nas import harness
from subnet_nas.experiments import ks_uniform_continuous, sampler_stats
from subnet_nas.harness import (
    ExperimentConfig,
    compute_metrics,
    emit_plot_data,
    layer_drop_baseline,
    load_config,
    load_histories,
    pooled_normalizer,
    read_jsonl,
    run_experiment,
)
from subnet_nas.model import ModelDims, SuperNetwork
from subnet_nas.tasks import PATTERN, SyntheticTask, generate_task, label_of

DIMS = {"n_layers": 2, "n_heads": 2, "n_units": 8, "d_model": 16, "d_head": 8, "vocab_size": 12,
        "max_len": 8, "n_classes": 2}
TASK = {"name": "majority", "vocab_size": 12, "seq_len": 8, "n_examples": 120, "n_test": 20, "seed": 0}


def tiny_config(**kw):
    doc = dict(name="tiny", task=TASK, dims=DIMS, methods=["ws-rs", "ld"], epochs=1, seeds=[0, 1],
               ws_seconds=0.2, snas_seconds=0.1, output_dir="unused")
    doc.update(kw)
    return ExperimentConfig.from_json(doc)


# ----------------------------------------------------------------------------
# tasks


def test_same_seed_same_dataset():
    a = generate_task(SyntheticTask("majority", seed=7))
    b = generate_task(SyntheticTask("majority", seed=7))
    ba = next(a.train_batches(np.random.default_rng(0)))
    bb = next(b.train_batches(np.random.default_rng(0)))
    assert ba.tokens.tobytes() == bb.tokens.tobytes() and ba.labels.tobytes() == bb.labels.tobytes()
    c = generate_task(SyntheticTask("majority", seed=8))
    assert not np.array_equal(a.train.tokens, c.train.tokens)


def test_match_all_identical_tokens():
    t = SyntheticTask("match")
    assert label_of(t, np.full((1, 16), 5))[0] == 1
    assert label_of(t, np.array([[1] * 15 + [2]]))[0] == 0


def test_pattern_label():
    t = SyntheticTask("pattern")
    seq = np.zeros((1, 16), dtype=int)
    assert label_of(t, seq)[0] == 0
    seq[0, 7:10] = PATTERN
    assert label_of(t, seq)[0] == 1


def test_majority_balance():
    d = generate_task(SyntheticTask("majority", n_examples=10_000, n_test=0))
    frac = np.concatenate([d.train.labels, d.valid.labels]).mean()
    assert 0.48 <= frac <= 0.52


@pytest.mark.parametrize("name", ["majority", "match", "pattern"])
def test_labels_are_function_of_tokens_and_split(name):
    task = SyntheticTask(name, n_examples=1000, n_test=100)
    d = generate_task(task)
    for b in (d.train, d.valid, d.test):
        np.testing.assert_array_equal(label_of(task, b.tokens), b.labels)
    assert len(d.train) == 700 and len(d.valid) == 300
    assert 0.45 < d.train.labels.mean() < 0.55


def test_multiclass_majority():
    task = SyntheticTask("majority", vocab_size=12, n_classes=3, n_examples=300)
    d = generate_task(task)
    assert set(np.unique(d.train.labels)) == {0, 1, 2}


def test_task_validation():
    with pytest.raises(ValueError):
        SyntheticTask(vocab_size=2, n_classes=3)
    with pytest.raises(ValueError):
        SyntheticTask(seq_len=2)
    with pytest.raises(ValueError):
        SyntheticTask("match", n_classes=3)
    with pytest.raises(ValueError):
        SyntheticTask("unknown")


@given(st.integers(0, 10**6))
def test_train_batches_cover_epoch(seed):
    d = generate_task(SyntheticTask("match", n_examples=50, n_test=0))
    batches = list(d.train_batches(np.random.default_rng(seed), 16))
    assert sum(len(b) for b in batches) == len(d.train) == 35
    assert len(batches) == d.steps_per_epoch(16)


# ----------------------------------------------------------------------------
# layer dropping


def test_layer_drop_baseline():
    data = generate_task(SyntheticTask(**TASK))
    dims4 = ModelDims(**{**DIMS, "n_layers": 4})
    arch = layer_drop_baseline(SuperNetwork.init(dims4, 0), data, 1)
    assert len(arch) == len(arch.records) == 4
    f1 = [e.objectives.f1 for e in arch.records]
    assert all(a > b for a, b in zip(f1, f1[1:]))
    assert arch.records[0].config.values == (1, 1, 1, 1)
    assert arch.records[-1].config.values == (1, 0, 0, 0)
    ts = [e.wallclock for e in arch.records]
    assert ts == sorted(ts)
    with pytest.raises(ValueError):
        layer_drop_baseline(SuperNetwork.init(ModelDims(**{**DIMS, "n_layers": 1}), 0), data, 1)


# ----------------------------------------------------------------------------
# config


def test_config_validation():
    with pytest.raises(ValueError):
        tiny_config(methods=["ws-nope"])
    with pytest.raises(ValueError):
        tiny_config(seeds=[1, 1])
    with pytest.raises(ValueError):
        tiny_config(space="huge")
    with pytest.raises(ValueError):
        ExperimentConfig.from_json({"bogus": 1})
    with pytest.raises(ValueError):
        tiny_config(task={**TASK, "vocab_size": 20})
    assert ExperimentConfig().seeds == list(range(10))


def test_config_json_round_trip(tmp_path, monkeypatch):
    cfg = tiny_config()
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_json()))
    assert load_config(path) == cfg
    monkeypatch.setenv("SUBNET_NAS_OUT", str(tmp_path / "elsewhere"))
    assert load_config(path).output_dir == str(tmp_path / "elsewhere")


# ----------------------------------------------------------------------------
# orchestration


@pytest.fixture(scope="module")
def results(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    run_experiment(tiny_config(), out)
    return out


def test_file_accounting(results):
    hist = sorted(p.name for p in (results / "histories").glob("*.jsonl"))
    assert hist == ["ld__seed0.jsonl", "ld__seed1.jsonl", "ws-rs__seed0.jsonl", "ws-rs__seed1.jsonl"]
    for name in ("hv_majority.csv", "ranks.csv"):
        text = (results / "metrics" / name).read_text().splitlines()
        assert len(text) > 1
    assert (results / "metrics" / "hv_majority.csv").read_text().startswith("method,seed,wallclock_s,hv,regret\n")
    assert read_jsonl(results / "failures.jsonl") == []


def test_records_schema_and_round_trip(results):
    for path in (results / "histories").glob("*.jsonl"):
        lines = path.read_text().splitlines()
        rows = [json.loads(line) for line in lines]
        assert [json.dumps(r, sort_keys=True) for r in rows] == lines
        for r in rows:
            assert set(r) == {"method", "task", "seed", "space", "config", "f0", "f1", "fidelity_epochs",
                              "wallclock_s"}
        ts = [r["wallclock_s"] for r in rows]
        assert ts == sorted(ts)


def test_refuses_overwrite_and_force(results, tmp_path):
    with pytest.raises(FileExistsError):
        run_experiment(tiny_config(), results)
    out = tmp_path / "again"
    run_experiment(tiny_config(), out)
    (out / "keep.txt").write_text("mine")
    run_experiment(tiny_config(), out, force=True)
    assert (out / "keep.txt").read_text() == "mine"
    for name in ("hv_majority.csv", "ranks.csv"):
        assert (out / "metrics" / name).read_bytes() == (results / "metrics" / name).read_bytes()


def test_partial_failure_isolation(tmp_path, monkeypatch):
    real = harness.run_method

    def flaky(cfg, method, seed, data, supernet):
        if method == "ld" and seed == 1:
            raise RuntimeError("simulated crash")
        return real(cfg, method, seed, data, supernet)

    monkeypatch.setattr(harness, "run_method", flaky)
    out = run_experiment(tiny_config(), tmp_path / "f")
    fails = read_jsonl(out / "failures.jsonl")
    assert [(f["method"], f["seed"]) for f in fails] == [("ld", 1)]
    assert len(list((out / "histories").glob("*.jsonl"))) == 3


def test_regret_non_negative_and_normalized_range(results):
    hist = load_histories(results)
    qn = pooled_normalizer(hist)
    Y = np.array([(r["f0"], r["f1"]) for rows in hist.values() for r in rows])
    Yn = qn.transform(Y)
    assert Yn.min() >= 0 and Yn.max() <= 1
    with open(results / "metrics" / "hv_majority.csv") as fh:
        assert all(float(r["regret"]) >= 0 for r in csv.DictReader(fh))


def test_pooled_normalization_is_uniform(tmp_path):
    cfg = tiny_config(methods=["ws-rs", "snas-rs"], max_evaluations=60, ws_seconds=1e9, snas_seconds=1e9,
                      seeds=[0, 1])
    out = run_experiment(cfg, tmp_path / "u")
    hist = load_histories(out)
    Y = np.array([(r["f0"], r["f1"]) for rows in hist.values() for r in rows])
    assert len(Y) >= 200
    Yn = pooled_normalizer(hist).transform(Y)
    # parameter counts take many distinct values; errors are heavily tied
    assert ks_uniform_continuous(Yn[:, 1], 0, 1) < 0.1


def test_metrics_recompute_is_stable(results, tmp_path):
    copy = tmp_path / "copy"
    shutil.copytree(results, copy)
    compute_metrics(copy)
    assert (copy / "metrics" / "ranks.csv").read_bytes() == (results / "metrics" / "ranks.csv").read_bytes()


# ----------------------------------------------------------------------------
# plot data


def test_emit_plot_data(results):
    plots = emit_plot_data(results)
    names = sorted(p.name for p in plots.iterdir())
    assert names == ["param_count_hist.csv", "pareto_fronts.csv", "ranks.csv", "regret.csv"]
    hist = (plots / "param_count_hist.csv").read_text().splitlines()
    assert hist[0] == "space,bin_lo,bin_hi,count"
    per_space = {}
    for line in hist[1:]:
        space, _, _, c = line.split(",")
        per_space[space] = per_space.get(space, 0) + int(c)
    assert per_space == {"small": 500, "layer": 500, "medium": 500, "large": 500}


def test_emit_plot_data_missing_inputs(tmp_path):
    with pytest.raises(FileNotFoundError, match="config.json"):
        emit_plot_data(tmp_path)
    assert list(tmp_path.iterdir()) == []


def test_sampler_histograms():
    stats = sampler_stats()
    assert stats["large"].ks_continuous < 0.1
    assert stats["layer"].ks_discrete < 0.1
    assert stats["medium"].mid_half_mass > 0.8
    assert stats["small"].median_frac < 0.5
