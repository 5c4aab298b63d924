"""Command-line entry point: ``subnet-nas <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .harness import (
    ExperimentConfig,
    emit_plot_data,
    load_config,
    read_jsonl,
    record,
    run_experiment,
    run_method,
    train_seed_supernet,
    write_jsonl,
)
from .model import SuperNetwork
from .spaces import SearchSpace
from .tasks import generate_task


MAX_ENUMERATE = 1_000_000


class CLIError(Exception):
    pass


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.out:
        cfg.output_dir = args.out
    if args.seed is not None:
        cfg.seeds = [args.seed]
    return cfg


def _ensure_free(paths, force: bool) -> None:
    taken = [str(p) for p in paths if p.exists()]
    if taken and not force:
        raise CLIError(f"refusing to overwrite {', '.join(taken)}; use --force")


def cmd_train_supernet(args) -> dict:
    cfg = _config(args)
    out = Path(cfg.output_dir)
    data = generate_task(cfg.task)
    written = []
    for seed in cfg.seeds:
        ckpt = out / "checkpoints" / f"supernet_seed{seed}.json"
        _ensure_free([ckpt], args.force)
        ckpt.parent.mkdir(parents=True, exist_ok=True)
        _, report = train_seed_supernet(cfg, seed, data, out)
        written.append({"seed": seed, "checkpoint": str(ckpt), "final_loss": report.losses[-1] if report.losses else None})
    return {"trained": written}


def cmd_search(args) -> dict:
    cfg = _config(args)
    out = Path(cfg.output_dir)
    data = generate_task(cfg.task)
    hist = out / "histories"
    hist.mkdir(parents=True, exist_ok=True)
    written = []
    for seed in cfg.seeds:
        supernet = None
        if any(m.startswith("ws-") for m in cfg.methods):
            ckpt = out / "checkpoints" / f"supernet_seed{seed}.json"
            if ckpt.exists():
                supernet = SuperNetwork.load(ckpt)
                if supernet.dims != cfg.dims:
                    raise CLIError(f"{ckpt} dims do not match the config")
            else:
                ckpt.parent.mkdir(parents=True, exist_ok=True)
                supernet, _ = train_seed_supernet(cfg, seed, data, out)
        for method in cfg.methods:
            path = hist / f"{method}__seed{seed}.jsonl"
            _ensure_free([path], args.force)
            archive = run_method(cfg, method, seed, data, supernet)
            write_jsonl(path, [record(method, cfg.task.name, seed, e) for e in archive.records])
            written.append(str(path))
    return {"histories": written}


def cmd_benchmark(args) -> dict:
    cfg = _config(args)
    try:
        out = run_experiment(cfg, cfg.output_dir, force=args.force, threads=args.threads)
    except FileExistsError as exc:
        raise CLIError(str(exc)) from exc
    failures = read_jsonl(out / "failures.jsonl")
    return {"results": str(out), "failures": len(failures)}


def cmd_emit_plots(args) -> dict:
    results = args.out or (load_config(args.config).output_dir if args.config else None)
    if results is None:
        raise CLIError("emit-plots needs --out <results dir> or --config")
    return {"plots": str(emit_plot_data(results))}


def cmd_enumerate_space(args) -> dict:
    cfg = _config(args)
    space = SearchSpace(args.space or cfg.space, cfg.dims)
    if args.count_only:
        return {"space": space.kind.value, "cardinality": space.cardinality}
    if space.cardinality > MAX_ENUMERATE:
        raise CLIError(f"{space.kind.value} has {space.cardinality} configs; use --count-only")
    rows = [{"config": list(c.values), "param_count": space.param_count(c)} for c in space.enumerate()]
    if args.out:
        path = Path(args.out)
        _ensure_free([path], args.force)
        write_jsonl(path, rows)
        return {"space": space.kind.value, "written": str(path), "n": len(rows)}
    for r in rows:
        print(json.dumps(r))
    return {"space": space.kind.value, "n": len(rows)}


COMMANDS = {
    "train-supernet": cmd_train_supernet,
    "search": cmd_search,
    "benchmark": cmd_benchmark,
    "emit-plots": cmd_emit_plots,
    "enumerate-space": cmd_enumerate_space,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="subnet-nas", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="experiment JSON config")
        sp.add_argument("--seed", type=int, help="run only this seed")
        sp.add_argument("--out", help="output directory (file for enumerate-space)")
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")
        sp.add_argument("--threads", type=int, default=None, help="worker processes")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "enumerate-space":
            sp.add_argument("--space", choices=["small", "layer", "medium", "large"])
            sp.add_argument("--count-only", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = COMMANDS[args.command](args)
    except (CLIError, ValueError, FileNotFoundError, FileExistsError, OSError, KeyError) as exc:
        print(json.dumps({"status": "error", "command": args.command,
                          "error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps({"status": "ok", "command": args.command, **summary}), file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
