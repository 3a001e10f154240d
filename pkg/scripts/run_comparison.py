"""Compare rule attackers and the hierarchical LinUCB attacker on a preset.

    python3 scripts/run_comparison.py --out runs/comparison [--episodes 300 --last 50]
"""
import argparse
import time

from rumorlab.experiment import ExperimentConfig, format_summary, read_results, run_experiment


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--dataset", default="weibo-mini")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--T", type=int, default=20)
    p.add_argument("--episodes", type=int, default=300)
    p.add_argument("--last", type=int, default=50)
    p.add_argument("--out", required=True)
    args = p.parse_args()
    cfg = ExperimentConfig(
        dataset=args.dataset,
        seeds=args.seeds,
        T=args.T,
        episodes=args.episodes,
        last=args.last,
        methods=["random", "random+", "degree", "influence", "dcg", "linucb"],
    )
    t0 = time.perf_counter()
    run_experiment(cfg, args.out, progress=lambda r: print(f"{r.method:<12} seed {r.seed} {100 * r.delta:8.3f}", flush=True))
    print(format_summary(read_results(f"{args.out}/results.csv")))
    print(f"{time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main()
