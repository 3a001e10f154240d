"""Command line entry point.

Exit codes: 0 success, 1 configuration error, 2 runtime fault.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bandit import SchemaMismatch
from .data import DatasetError, PRESETS, generate_synthetic, graph_summary, load_dataset, preset, spec_for_totals
from .detector import NodeEncoder, RgcnModel, TrainConfig, evaluate, save_model, train
from .experiment import (
    CREDIT_MODES,
    METHODS,
    ConfigError,
    ExperimentConfig,
    RlVariant,
    feature_importance_report,
    format_summary,
    read_results,
    run_experiment,
)
from .graph import message_influence, pagerank

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def cmd_gen(args) -> int:
    if args.nodes is not None:
        if args.components is None:
            raise ConfigError("--nodes needs --components")
        spec = spec_for_totals(args.nodes, args.components, args.edges, seed=args.seed)
    else:
        spec = preset(args.preset, seed=args.seed)
    ds = generate_synthetic(spec)
    ds.save(args.out)
    print(json.dumps(graph_summary(ds.to_graph()), sort_keys=True))
    return EXIT_OK


def cmd_train_detector(args) -> int:
    spec, g = load_dataset(args.data)
    print(json.dumps(graph_summary(g), sort_keys=True))
    enc = NodeEncoder.fit(g)
    init = RgcnModel.init(enc.dim, args.hidden, 3, np.random.default_rng(args.seed))
    cfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs, hidden=args.hidden, optimizer=args.optimizer)
    model, history = train(init, g, enc, spec.labels("train"), cfg)
    save_model(model, enc, args.out)
    weights = message_influence(g, pagerank(g)).message
    rep = evaluate(model, g, enc, spec.labels("test"), weights)
    print(f"final loss {history[-1]:.4f}" if history else "no training epochs")
    print(f"test accuracy {rep.accuracy:.4f} recall {rep.recall:.4f} ndcg {rep.ndcg:.4f}")
    return EXIT_OK


def config_from_args(args) -> ExperimentConfig:
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from e
        cfg = ExperimentConfig.from_dict(doc)
    else:
        cfg = ExperimentConfig()
    overrides = {
        "dataset": args.dataset,
        "seeds": args.seeds,
        "T": args.T,
        "alpha": args.alpha,
        "episodes": args.episodes,
        "last": args.last,
        "methods": args.methods,
        "controllable_fraction": args.fraction,
        "cutoff": args.m,
        "action_cap": args.cap,
        "repetitions": args.reps,
        "optimizer": args.optimizer,
    }
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    if args.baseline or args.credit:
        baselines = args.baseline or ["time"]
        credits = args.credit or ["step"]
        cfg.variants = [RlVariant(b, c) for b in baselines for c in credits]
    if args.no_traces:
        cfg.write_traces = False
    cfg.validate()
    return cfg


def cmd_attack(args) -> int:
    cfg = config_from_args(args)
    run_experiment(cfg, args.out, progress=lambda r: print(f"{r.method} seed={r.seed} delta_ndcg={r.delta:.6f}", flush=True))
    print(format_summary(read_results(Path(args.out) / "results.csv")))
    return EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.results)
    if path.is_dir():
        path = path / "results.csv"
    if not path.exists():
        raise ConfigError(f"no results file at {path}")
    print(format_summary(read_results(path)))
    return EXIT_OK


def cmd_feature_importance(args) -> int:
    ckpts = {}
    if args.subgraph:
        ckpts["subgraph"] = args.subgraph
    if args.node:
        ckpts["node"] = args.node
    if not ckpts:
        raise ConfigError("give --subgraph and/or --node checkpoint files")
    for p in ckpts.values():
        if not Path(p).exists():
            raise ConfigError(f"no checkpoint at {p}")
    top = None if args.top_k <= 0 else args.top_k
    print(feature_importance_report(ckpts, top))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rumorlab", description="Edge-injection attacks on a graph rumor detector.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--preset", default="weibo-mini", choices=sorted(PRESETS))
    g.add_argument("--nodes", type=int)
    g.add_argument("--components", type=int)
    g.add_argument("--edges", type=int)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train-detector", help="train the detector on a dataset file")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--hidden", type=int, default=64)
    t.add_argument("--optimizer", choices=["gd", "adam"], default="gd")
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train_detector)

    a = sub.add_parser("attack", help="run attackers and write reports")
    a.add_argument("--config", help="JSON experiment config; flags override it")
    a.add_argument("--dataset", help="preset name or dataset file")
    a.add_argument("--seeds", type=int, nargs="+")
    a.add_argument("--T", type=int)
    a.add_argument("--alpha", type=float)
    a.add_argument("--episodes", type=int)
    a.add_argument("--last", type=int)
    a.add_argument("--methods", nargs="+", choices=METHODS)
    a.add_argument("--baseline", nargs="+")
    a.add_argument("--credit", nargs="+", choices=CREDIT_MODES)
    a.add_argument("--fraction", type=float)
    a.add_argument("--m", type=int)
    a.add_argument("--cap", type=int)
    a.add_argument("--reps", type=int)
    a.add_argument("--optimizer", choices=["gd", "adam"])
    a.add_argument("--no-traces", action="store_true")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_attack)

    r = sub.add_parser("report", help="summarise a results CSV")
    r.add_argument("results", help="results.csv or a run directory")
    r.set_defaults(func=cmd_report)

    f = sub.add_parser("feature-importance", help="rank feature slots by learned weight")
    f.add_argument("--subgraph")
    f.add_argument("--node")
    f.add_argument("--top-k", type=int, default=8, help="0 lists every slot")
    f.set_defaults(func=cmd_feature_importance)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DatasetError, SchemaMismatch, FileNotFoundError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001
        print(f"runtime fault: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
