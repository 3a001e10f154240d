"""Experiment orchestration: data, detector, calibration, attackers, reports.

Each seed gets four independent random streams (generator, detector-init,
controllable-sampling, exploration) so changing one stage leaves the
others untouched.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .bandit import (
    BASELINE_MODES,
    LinUcbPolicy,
    MinMax,
    RewardShaper,
    beta_ml,
    make_baseline,
    pooled_variance,
    variance_check,
)
from .data import (
    PRESETS,
    DatasetSpec,
    generate_synthetic,
    load_dataset,
    preset,
    split_and_controllables,
)
from .detector import (
    BlackBoxDetector,
    NodeEncoder,
    RgcnModel,
    TrainConfig,
    evaluate,
    save_model,
    train,
)
from .env import AttackEnv, EnvConfig, EpisodeTrace, run_episode, write_trace_log
from .features import NODE_SLOTS, SUBGRAPH_SLOTS, pair_slot_names, schema_hash
from .graph import MESSAGE
from .rules import STRATEGIES, VARIANTS, RuleStrategy, run_rule_attack

log = logging.getLogger(__name__)

RL_METHOD = "linucb"
METHODS = (*STRATEGIES, RL_METHOD)
CREDIT_MODES = ("step", "delayed")
CSV_COLUMNS = ["method", "dataset", "T", "seed", "delta_ndcg", "delta_ndcg_x100", "episodes", "notes"]
STREAMS = {"generator": 0, "detector-init": 1, "controllable-sampling": 2, "exploration": 3}


class ConfigError(ValueError):
    pass


def stream_seed(seed: int, name: str) -> int:
    """Integer seed for a named stream of a run seed."""
    return int(np.random.SeedSequence([seed, STREAMS[name]]).generate_state(1)[0])


@dataclass
class RlVariant:
    baseline: str = "time"
    credit: str = "step"

    @property
    def label(self) -> str:
        if (self.baseline, self.credit) == ("time", "step"):
            return RL_METHOD
        return f"{RL_METHOD}:{self.baseline}:{self.credit}"


@dataclass
class ExperimentConfig:
    dataset: str = "weibo-mini"  # preset name or dataset file
    seeds: list[int] = field(default_factory=lambda: [0])
    T: int = 20
    alpha: float = 1.0
    episodes: int = 1000
    last: int = 100  # RL score = mean over the last `last` episodes
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    variants: list[RlVariant] = field(default_factory=lambda: [RlVariant()])
    controllable_fraction: float = 0.2
    train_ratio: float = 0.7
    cutoff: Optional[int] = None
    action_cap: int = 5000
    repetitions: int = 30
    calibration_episodes: int = 30
    widen: float = 0.1
    indicator_as_printed: bool = False
    induced_l3: bool = False
    detector_epochs: int = 200
    learning_rate: float = 0.01
    hidden: int = 64
    optimizer: str = "gd"
    write_traces: bool = True

    def validate(self) -> None:
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.T < 0:
            raise ConfigError("T must be >= 0")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.episodes < 1 or self.last < 1 or self.repetitions < 1 or self.calibration_episodes < 1:
            raise ConfigError("episodes, last, repetitions and calibration_episodes must be >= 1")
        if not 0 < self.controllable_fraction <= 1:
            raise ConfigError("controllable fraction must be in (0, 1]")
        if not 0 < self.train_ratio < 1:
            raise ConfigError("train ratio must be in (0, 1)")
        if self.cutoff is not None and self.cutoff < 1:
            raise ConfigError("cutoff m must be >= 1")
        if self.action_cap < 1:
            raise ConfigError("action cap must be >= 1")
        if self.widen < 0:
            raise ConfigError("widen must be >= 0")
        if self.detector_epochs < 0 or self.learning_rate <= 0 or self.hidden < 1:
            raise ConfigError("invalid detector training settings")
        if self.optimizer not in ("gd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {METHODS}")
        for v in self.variants:
            if v.baseline not in BASELINE_MODES:
                raise ConfigError(f"unknown baseline mode {v.baseline!r}")
            if v.credit not in CREDIT_MODES:
                raise ConfigError(f"unknown credit mode {v.credit!r}")
        if self.dataset not in PRESETS and not Path(self.dataset).exists():
            raise ConfigError(f"dataset {self.dataset!r} is neither a preset nor a file")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        if "variants" in doc:
            doc["variants"] = [RlVariant(**v) for v in doc["variants"]]
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**doc)


# --------------------------------------------------------------------------
# per-seed setup


@dataclass
class SeedContext:
    seed: int
    dataset: DatasetSpec
    env: AttackEnv
    model: RgcnModel
    encoder: NodeEncoder
    detector_report: dict
    shaper_bounds: tuple[MinMax, MinMax]


def dataset_name(cfg: ExperimentConfig) -> str:
    return cfg.dataset if cfg.dataset in PRESETS else Path(cfg.dataset).stem


def load_or_generate(cfg: ExperimentConfig, seed: int) -> DatasetSpec:
    if cfg.dataset in PRESETS:
        return generate_synthetic(preset(cfg.dataset, seed=stream_seed(seed, "generator")))
    spec, _ = load_dataset(cfg.dataset)
    return spec


def train_detector(cfg: ExperimentConfig, spec: DatasetSpec, seed: int):
    g = spec.to_graph()
    enc = NodeEncoder.fit(g)
    rng = np.random.default_rng(stream_seed(seed, "detector-init"))
    init = RgcnModel.init(enc.dim, cfg.hidden, 3, rng)
    tc = TrainConfig(learning_rate=cfg.learning_rate, epochs=cfg.detector_epochs, hidden=cfg.hidden, optimizer=cfg.optimizer)
    model, history = train(init, g, enc, spec.labels("train"), tc)
    return g, enc, model, history


def calibrate(env: AttackEnv, cfg: ExperimentConfig, seed: int) -> tuple[MinMax, MinMax]:
    """Reward bounds from Dcg rollouts (both variants), widened on each side."""
    steps, totals = [], []
    for v in VARIANTS:
        _, tot, st = run_rule_attack(env, RuleStrategy("dcg", v), cfg.calibration_episodes, seed)
        totals.extend(tot)
        steps.extend(d for s in st for d in s)
    if not steps:
        steps, totals = [0.0], [0.0]
    return MinMax.from_samples(steps, cfg.widen), MinMax.from_samples(totals, cfg.widen)


def prepare_seed(cfg: ExperimentConfig, seed: int) -> SeedContext:
    spec = load_or_generate(cfg, seed)
    g, enc, model, history = train_detector(cfg, spec, seed)
    setup = split_and_controllables(
        spec, g, cfg.train_ratio, cfg.controllable_fraction, stream_seed(seed, "controllable-sampling")
    )
    env_cfg = EnvConfig(
        horizon=cfg.T,
        cutoff=cfg.cutoff,
        indicator_as_printed=cfg.indicator_as_printed,
        induced_l3=cfg.induced_l3,
        action_cap=cfg.action_cap,
    )
    env = AttackEnv(g, BlackBoxDetector(model, enc), setup, env_cfg, seed=stream_seed(seed, "exploration"))
    n_msg = len(g.nodes_of_kind(MESSAGE))
    rep = evaluate(model, g, enc, spec.labels("test"), env.influence.message, max(1, int(np.ceil(0.1 * n_msg))))
    report = {
        "final_loss": history[-1] if history else None,
        "test_accuracy": rep.accuracy,
        "test_recall": rep.recall,
        "n_targets": len(setup.targets),
        "n_controllable_users": len(setup.controllable_users),
        "j_clean": env.j_clean,
        "cutoff": env.targets.cutoff,
    }
    bounds = calibrate(env, cfg, stream_seed(seed, "exploration"))
    return SeedContext(seed, spec, env, model, enc, report, bounds)


# --------------------------------------------------------------------------
# runs


@dataclass
class RunResult:
    method: str
    seed: int
    delta: float
    episodes: int
    notes: str
    curve: list[float]
    trace_records: list[dict] = field(default_factory=list)
    diagnostics: Optional[dict] = None
    policies: Optional[tuple[LinUcbPolicy, LinUcbPolicy]] = None


def run_rules(ctx: SeedContext, name: str, cfg: ExperimentConfig) -> RunResult:
    seed = stream_seed(ctx.seed, "exploration")
    strategies = [RuleStrategy("random")] if name == "random" else [RuleStrategy(name, v) for v in VARIANTS]
    per, curves, records = {}, {}, []
    for s in strategies:
        mean, totals, steps = run_rule_attack(ctx.env, s, cfg.repetitions, seed)
        per[s.label] = mean
        curves[s.label] = totals
        for ep, deltas in enumerate(steps):
            for t, d in enumerate(deltas, start=1):
                records.append({"method": s.label, "episode": ep, "t": t, "level": "rule", "delta_ndcg": d})
    best = max(per, key=lambda k: (per[k], k))
    notes = f"j0={ctx.env.j_clean:.6f};" + ";".join(f"{k}={per[k]:.6f}" for k in sorted(per))
    if len(per) > 1:
        notes += f";best={best}"
    return RunResult(name, ctx.seed, per[best], cfg.repetitions, notes, curves[best], records)


def _reward_matrix(traces: list[EpisodeTrace], T: int, attr: str) -> np.ndarray:
    rows = [[getattr(s, attr) for s in tr.steps] for tr in traces if len(tr.steps) == T]
    return np.array(rows, dtype=float) if rows else np.zeros((0, T))


def run_rl(ctx: SeedContext, variant: RlVariant, cfg: ExperimentConfig) -> RunResult:
    env = ctx.env
    d_g, d_n = 2 * len(SUBGRAPH_SLOTS), 2 * len(NODE_SLOTS)
    shash = schema_hash()
    pol_g = LinUcbPolicy(d_g, cfg.alpha, shash)
    pol_n = LinUcbPolicy(d_n, cfg.alpha, shash)
    shaper = RewardShaper(*ctx.shaper_bounds, make_baseline(variant.baseline, cfg.T, d_g, d_n))
    curve, records, traces = [], [], []
    tdrop, rrise, truncated, capped = [], [], 0, 0
    for ep in range(cfg.episodes):
        tr = run_episode(env, pol_g, pol_n, shaper, credit=variant.credit)
        curve.append(tr.delta_total)
        traces.append(tr)
        truncated += tr.truncated
        capped += tr.capped
        tdrop.append(sum(s.tdrop for s in tr.steps))
        rrise.append(sum(s.rrise for s in tr.steps))
        if cfg.write_traces:
            records.extend(tr.log_records(ep, {"method": variant.label}))
    window = curve[-cfg.last:]
    delta = float(np.mean(window))

    diag = {"method": variant.label, "seed": ctx.seed, "baseline": variant.baseline, "credit": variant.credit}
    # Var(r) vs Var(r~) with final per-step means, on full-length episodes
    R = _reward_matrix(traces, cfg.T, "reward")
    if R.size:
        vc = variance_check(R)
        diag.update(sigma2=vc.sigma2, sigma2_prime=vc.sigma2_adjusted, variance_reduced=vc.ok, n_full_episodes=len(R))
    r_all = np.array([s.reward for tr in traces for s in tr.steps])
    diag["var_reward"] = pooled_variance(r_all) if len(r_all) else 0.0
    for level, attr, pol in (("subgraph", "adjusted_g", pol_g), ("node", "adjusted_n", pol_n)):
        # what the policy actually saw: rewards minus the online baseline
        adj = np.array([getattr(s, attr) for tr in traces for s in tr.steps])
        diag[f"online_var_adjusted_{level}"] = pooled_variance(adj) if len(adj) else 0.0
        X, r = pol.history()
        diag[f"inv_beta_ml_{level}"] = beta_ml(X, r, pol.theta) if len(r) >= 2 else None
    diag["tdrop_mean"] = float(np.mean(tdrop[-cfg.last:]))
    diag["rrise_mean"] = float(np.mean(rrise[-cfg.last:]))
    diag["truncated_episodes"] = int(truncated)
    diag["capped_episodes"] = int(capped)
    notes = f"j0={env.j_clean:.6f};last{len(window)};baseline={variant.baseline};credit={variant.credit}"
    if truncated:
        notes += f";truncated={truncated}"
    return RunResult(variant.label, ctx.seed, delta, cfg.episodes, notes, curve, records, diag, (pol_g, pol_n))


# --------------------------------------------------------------------------
# reporting


def _fmt(x: float) -> str:
    return f"{x:.10f}"


def write_results(path: Path, rows: list[RunResult], cfg: ExperimentConfig) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([r.method, dataset_name(cfg), cfg.T, r.seed, _fmt(r.delta), f"{100 * r.delta:.4f}", r.episodes, r.notes])


def write_curves(path: Path, rows: list[RunResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "seed", "episode", "delta_ndcg"])
        for r in rows:
            for ep, d in enumerate(r.curve):
                w.writerow([r.method, r.seed, ep, _fmt(d)])


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["T"] = int(row["T"])
        row["seed"] = int(row["seed"])
        row["delta_ndcg"] = float(row["delta_ndcg"])
        row["delta_ndcg_x100"] = float(row["delta_ndcg_x100"])
        row["episodes"] = int(row["episodes"])
    return rows


def summarize(rows: list[dict]) -> list[tuple[str, float, float, int]]:
    """Per-method (mean, std, n) of delta_ndcg across seeds, best first."""
    by: dict[str, list[float]] = {}
    for row in rows:
        by.setdefault(row["method"], []).append(row["delta_ndcg"])
    out = [(m, float(np.mean(v)), float(np.std(v)), len(v)) for m, v in by.items()]
    return sorted(out, key=lambda x: (-x[1], x[0]))


def format_summary(rows: list[dict]) -> str:
    lines = [f"{'method':<32} {'dNDCG(x1e-2)':>13} {'std':>8} {'n':>3}"]
    for m, mu, sd, n in summarize(rows):
        lines.append(f"{m:<32} {100 * mu:>13.3f} {100 * sd:>8.3f} {n:>3}")
    return "\n".join(lines)


def feature_importance(policy: LinUcbPolicy, level: str, top_k: Optional[int] = 8) -> list[tuple[str, float]]:
    """Slots sorted by |theta| descending; ties keep schema order."""
    names = pair_slot_names(level)
    if len(names) != policy.d:
        raise ConfigError(f"{level} policy has {policy.d} weights but the schema has {len(names)} slots")
    order = sorted(range(len(names)), key=lambda i: (-abs(policy.theta[i]), i))
    ranked = [(names[i], float(policy.theta[i])) for i in order]
    return ranked if top_k is None else ranked[:top_k]


def feature_importance_report(checkpoints: dict[str, str], top_k: Optional[int] = 8) -> str:
    """Render ranked slot weights per level from saved policy files.

    ``checkpoints`` maps level ("subgraph" or "node") to a policy file;
    files written under a different feature schema are rejected.
    """
    blocks, rank = [], 0
    for level in ("subgraph", "node"):
        if level not in checkpoints:
            continue
        pol = LinUcbPolicy.load(checkpoints[level], expected_schema=schema_hash())
        blocks.append(f"[{level}]")
        # numbering runs on across levels (1-8 subgraph, 9-16 node)
        for name, w in feature_importance(pol, level, top_k):
            rank += 1
            blocks.append(f"{rank}. {name} {w:.3f}")
    return "\n".join(blocks)


# --------------------------------------------------------------------------
# driver


def run_experiment(cfg: ExperimentConfig, out_dir, progress=None) -> list[RunResult]:
    """Run every configured method on every seed and write all artifacts.

    Files: results.csv, curves.csv, diagnostics.json, detector.json,
    config.json, traces/*.ndjson and policies/*.json.
    """
    cfg.validate()
    out = Path(out_dir)
    (out / "policies").mkdir(parents=True, exist_ok=True)
    if cfg.write_traces:
        (out / "traces").mkdir(exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")

    rows: list[RunResult] = []
    diagnostics, detectors = [], {}
    for seed in cfg.seeds:
        t0 = time.perf_counter()
        ctx = prepare_seed(cfg, seed)
        detectors[str(seed)] = ctx.detector_report
        save_model(ctx.model, ctx.encoder, out / f"detector_seed{seed}.json")
        for name in cfg.methods:
            if name == RL_METHOD:
                results = [run_rl(ctx, v, cfg) for v in cfg.variants]
            else:
                results = [run_rules(ctx, name, cfg)]
            for res in results:
                rows.append(res)
                if res.diagnostics is not None:
                    diagnostics.append(res.diagnostics)
                if res.policies is not None:
                    tag = res.method.replace(":", "_")
                    res.policies[0].save(out / "policies" / f"{tag}_seed{seed}_subgraph.json")
                    res.policies[1].save(out / "policies" / f"{tag}_seed{seed}_node.json")
                if cfg.write_traces:
                    tag = res.method.replace(":", "_").replace("+", "plus")
                    with open(out / "traces" / f"{tag}_seed{seed}.ndjson", "w") as fh:
                        write_trace_log(fh, res.trace_records)
                if progress:
                    progress(res)
                res.trace_records = []
        log.info("seed %d done in %.1fs", seed, time.perf_counter() - t0)

    write_results(out / "results.csv", rows, cfg)
    write_curves(out / "curves.csv", rows)
    (out / "diagnostics.json").write_text(json.dumps(diagnostics, indent=2, sort_keys=True) + "\n")
    (out / "detector.json").write_text(json.dumps(detectors, indent=2, sort_keys=True) + "\n")
    return rows
