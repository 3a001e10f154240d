"""Baseline and credit-assignment ablation for the LinUCB attacker.

Runs the time-dependent baseline with step credit against the constant
baseline, no baseline, and delayed credit, then reports per-seed wins.

    python3 scripts/run_ablation.py --out runs/ablation
"""
import argparse
import json
from pathlib import Path

from rumorlab.experiment import ExperimentConfig, RlVariant, format_summary, read_results, run_experiment


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--dataset", default="weibo-mini")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--T", type=int, default=20)
    p.add_argument("--episodes", type=int, default=300)
    p.add_argument("--last", type=int, default=50)
    p.add_argument("--out", required=True)
    args = p.parse_args()
    variants = [RlVariant("time", "step"), RlVariant("constant", "step"), RlVariant("none", "step"), RlVariant("time", "delayed")]
    cfg = ExperimentConfig(
        dataset=args.dataset,
        seeds=args.seeds,
        T=args.T,
        episodes=args.episodes,
        last=args.last,
        methods=["linucb"],
        variants=variants,
    )
    run_experiment(cfg, args.out, progress=lambda r: print(f"{r.method:<24} seed {r.seed} {100 * r.delta:8.3f}", flush=True))
    rows = read_results(Path(args.out) / "results.csv")
    print(format_summary(rows))
    score = {(r["method"], r["seed"]): r["delta_ndcg"] for r in rows}
    ref = variants[0].label
    for v in variants[1:]:
        wins = sum(score[(ref, s)] >= score[(v.label, s)] for s in args.seeds)
        print(f"{ref} >= {v.label}: {wins}/{len(args.seeds)} seeds")
    diags = json.loads((Path(args.out) / "diagnostics.json").read_text())
    print(f"variance reduced in {sum(d['variance_reduced'] for d in diags)}/{len(diags)} runs")


if __name__ == "__main__":
    main()
