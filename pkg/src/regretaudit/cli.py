"""Command-line entry point: simulate markets, audit transcripts, reproduce figures.

Exit codes: 0 for PASS (or successful non-audit commands), 2 for FAIL, 1 for
errors, so the tool is scriptable.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import figures
from .aggregate import DriftAssumption, InsufficientData, audit_aggregated, read_price_series
from .audit import audit, minimize_over_cost, regret_curve
from .core import (
    AuditConfig,
    CostRange,
    PriceGrid,
    TranscriptParseError,
    TranscriptValidationError,
    read_transcript,
    write_transcript,
)
from .market import (
    DiscreteValuationTable,
    UniformDuopoly,
    best_pure_equilibrium,
    expected_payoff_matrix,
    manipulation_valuation_table,
)
from .oracles import (
    best_in_hindsight_regret,
    materialize_truth,
    true_calibrated_regret,
)
from .sellers import (
    ManipulatorSchedule,
    ManipulatorStrategy,
    MWUStrategy,
    mean_based_gamma,
    is_mean_based_violation,
    MWULearnerState,
    reward_bounds,
    simulate,
    strategy_from_config,
)

DEFAULT_THRESHOLD = 6e-3  # the worked example's threshold
DUOPOLY_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))
MANIPULATION_GRID = (0.0, 1.0, 2.0, 3.0)
MANIPULATION_ETA = 2.0
MANIPULATION_EPSILON = 0.005


@dataclass
class ExperimentConfig:
    """One simulation experiment: environment, strategies, horizon, replications."""

    environment: dict
    strategies: list[dict]
    rounds: int
    replications: int = 1
    seed: int = 0
    out: str = "out"
    feedback: str = "expected"
    audit: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.replications < 1 or self.rounds < 1:
            raise ValueError("rounds and replications must be at least 1")

    @staticmethod
    def from_json(path: str) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        return ExperimentConfig(**obj)


def duopoly_config(rounds: int = 200_000, replications: int = 20, seed: int = 0, out: str = "out") -> ExperimentConfig:
    return ExperimentConfig(
        environment={"kind": "uniform", "cost1": 0.1, "cost2": 0.2},
        strategies=[{"kind": "q"}, {"kind": "q"}],
        rounds=rounds,
        replications=replications,
        seed=seed,
        out=out,
        audit={"cost_lo": 0.1, "cost_hi": 0.9, "r": DEFAULT_THRESHOLD, "alpha": 0.05},
    )


def manipulation_config(phase1_rounds: int = 10_000, seed: int = 0, out: str = "out") -> ExperimentConfig:
    schedule = ManipulatorSchedule.standard(phase1_rounds)
    return ExperimentConfig(
        environment={"kind": "table", "epsilon": MANIPULATION_EPSILON},
        strategies=[
            {"kind": "manipulator", "phase1_rounds": phase1_rounds},
            {"kind": "mwu", "step_size": MANIPULATION_ETA},
        ],
        rounds=schedule.total_rounds,
        replications=1,
        seed=seed,
        out=out,
    )


def build_environment(spec: dict):
    """Returns (grid, oracle, costs) for an environment spec."""
    kind = spec.get("kind")
    if kind == "uniform":
        env = UniformDuopoly(spec.get("cost1", 0.1), spec.get("cost2", 0.2))
        grid = PriceGrid(spec.get("grid", DUOPOLY_GRID), spec.get("h"))
        return grid, env, (env.cost1, env.cost2)
    if kind == "table":
        table = manipulation_valuation_table(spec.get("epsilon", MANIPULATION_EPSILON))
        grid = PriceGrid(spec.get("grid", MANIPULATION_GRID), spec.get("h"))
        return grid, table, (spec.get("cost1", 0.0), spec.get("cost2", 0.0))
    if kind == "table_file":
        table = DiscreteValuationTable.from_json(spec["path"])
        levels = spec.get("grid", [float(v) for v in table.price_levels])
        return PriceGrid(levels, spec.get("h")), table, (spec.get("cost1", 0.0), spec.get("cost2", 0.0))
    raise ValueError(f"unknown environment kind {kind!r}")


def replication_seed(base: int, replication: int) -> int:
    """Stable per-replication stream key, independent of execution order."""
    return int(np.random.SeedSequence(entropy=(int(base), int(replication))).generate_state(1, np.uint64)[0])


def run_replication(config: ExperimentConfig, replication: int):
    grid, oracle, costs = build_environment(config.environment)
    strategies = tuple(
        strategy_from_config(spec, grid, oracle, costs, i, config.rounds, config.feedback)
        for i, spec in enumerate(config.strategies)
    )
    seed = replication_seed(config.seed, replication)
    return grid, oracle, costs, simulate(
        grid, strategies, oracle, costs, config.rounds, config.feedback, seed
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    config = _config_from_args(args)
    os.makedirs(config.out, exist_ok=True)
    payoff_rows = []
    for rep in range(config.replications):
        grid, oracle, costs, result = run_replication(config, rep)
        for i, transcript in enumerate(result.transcripts):
            path = os.path.join(config.out, f"transcript_rep{rep}_seller{i + 1}.jsonl")
            write_transcript(transcript, path)
            payoff = result.payoffs[i]
            payoff_rows.append(
                [rep, i + 1, config.rounds, float(payoff.sum()), float(payoff.mean())]
            )
        if args.emit_truth:
            for i in range(2):
                opp = [r.posted_index for r in result.transcripts[1 - i].records]
                truth = materialize_truth(oracle, grid.levels, opp, i)
                figures.write_truth(
                    truth, os.path.join(config.out, f"truth_rep{rep}_seller{i + 1}.jsonl")
                )
        print(f"replication {rep}: wrote transcripts for {config.rounds} rounds")
    figures.write_csv(
        os.path.join(config.out, "payoffs.csv"),
        ["replication", "seller", "rounds", "total_payoff", "mean_payoff"],
        payoff_rows,
    )
    return 0


def _audit_config_from_args(args) -> AuditConfig:
    return AuditConfig(
        cost_range=CostRange(args.cost_lo, args.cost_hi),
        threshold_r=args.r,
        confidence_alpha=args.alpha,
        endogenous=args.endogenous,
    )


def cmd_audit(args) -> int:
    transcript = read_transcript(args.transcript)
    if args.h is not None:
        transcript = type(transcript)(
            PriceGrid(transcript.grid.levels, args.h), transcript.records
        )
    config = _audit_config_from_args(args)
    report = audit(transcript, config)
    print(report.to_json(indent=2))
    if args.sweep:
        curve = regret_curve(transcript)
        truth = dists = None
        header = ["cost", "estimated_regret"]
        if args.truth:
            truth = figures.read_truth(args.truth)
            from .audit import _densify

            dists = _densify(transcript).probs
            header.append("true_regret")
        rows = figures.cost_sweep_rows(
            curve, args.cost_lo, args.cost_hi, args.sweep_points, truth, dists
        )
        figures.write_csv(args.sweep, header, rows)
    return 0 if report.verdict == "PASS" else 2


def cmd_audit_aggregated(args) -> int:
    grid, posted, allocations = read_price_series(args.transcript)
    if args.h is not None:
        grid = PriceGrid(grid.levels, args.h)
    if args.drift_eps is not None:
        drift = DriftAssumption.explicit(args.drift_eps, args.support_floor)
    elif args.drift_gamma is not None:
        drift = DriftAssumption.rate(args.drift_gamma, args.support_floor)
    else:
        raise ValueError("aggregated audit needs --drift-eps or --drift-gamma")
    result = audit_aggregated(posted, allocations, grid, drift, _audit_config_from_args(args))
    if isinstance(result, InsufficientData):
        print(result.message, file=sys.stderr)
        return 1
    print(result.to_json(indent=2))
    return 0 if result.verdict == "PASS" else 2


def cmd_figures(args) -> int:
    config = _config_from_args(args)
    os.makedirs(config.out, exist_ok=True)
    grid, oracle, costs = build_environment(config.environment)
    results = [run_replication(config, rep)[3] for rep in range(config.replications)]
    levels = grid.levels

    # Strategy-pair heatmap over the last 10 rounds of every replication.
    pairs = [r.transcripts for r in results]
    counts = figures.pair_heatmap_counts(pairs, last_rounds=10)
    eq = best_pure_equilibrium(expected_payoff_matrix(oracle, levels, costs))
    highlight = eq[2] if eq else None
    rows = [
        [levels[i], levels[j], int(counts[i, j])]
        for i in range(len(levels))
        for j in range(len(levels))
        if counts[i, j]
    ]
    figures.write_csv(
        os.path.join(config.out, "fig1_pairs.csv"),
        ["seller1_price", "seller2_price", "count"],
        rows,
    )
    _write(
        os.path.join(config.out, "fig1_heatmap.svg"),
        figures.svg_heatmap(
            counts, levels, "Strategy pairs over the last 10 rounds", highlight=highlight
        ),
    )

    # Estimated and true regret against the assumed cost, first replication.
    first = results[0]
    audit_cfg = config.audit or {"cost_lo": 0.1, "cost_hi": 0.9}
    lo, hi = audit_cfg.get("cost_lo", 0.1), audit_cfg.get("cost_hi", 0.9)
    curve = regret_curve(first.transcripts[0])
    opp = [r.posted_index for r in first.transcripts[1].records]
    truth = materialize_truth(oracle, levels, opp, 0)
    from .audit import _densify

    dists = _densify(first.transcripts[0]).probs
    sweep = figures.cost_sweep_rows(curve, lo, hi, args.sweep_points, truth, dists)
    figures.write_csv(
        os.path.join(config.out, "fig2_regret_vs_cost.csv"),
        ["cost", "estimated_regret", "true_regret"],
        sweep,
    )
    cs = [row[0] for row in sweep]
    _write(
        os.path.join(config.out, "fig2_regret_vs_cost.svg"),
        figures.svg_line_chart(
            [
                ("estimated", cs, [row[1] for row in sweep]),
                ("true", cs, [row[2] for row in sweep]),
            ],
            "Regret against assumed cost",
            "assumed cost",
            "per-round regret",
        ),
    )

    # True regret at the true and plausible costs across horizons.
    c_true = costs[0]
    c_plausible, _ = minimize_over_cost(curve, CostRange(lo, hi))
    horizons = figures.log_spaced_horizons(config.rounds)
    hrows = figures.horizon_rows(first.transcripts[0], truth, [c_true, c_plausible], horizons)
    figures.write_csv(
        os.path.join(config.out, "fig3_regret_vs_horizon.csv"),
        ["horizon", f"true_regret_cost_{c_true:g}", f"true_regret_cost_{c_plausible:g}"],
        hrows,
    )
    _write(
        os.path.join(config.out, "fig3_regret_vs_horizon.svg"),
        figures.svg_line_chart(
            [
                (f"cost {c_true:g}", [r[0] for r in hrows], [r[1] for r in hrows]),
                (f"cost {c_plausible:g}", [r[0] for r in hrows], [r[2] for r in hrows]),
            ],
            "True regret against horizon",
            "rounds",
            "per-round regret",
            log_x=True,
        ),
    )
    print(f"figures written to {config.out}")
    return 0


def cmd_manipulate_demo(args) -> int:
    phase1 = args.rounds
    schedule = ManipulatorSchedule.standard(phase1)
    total = schedule.total_rounds
    epsilon = args.epsilon
    table = manipulation_valuation_table(epsilon)
    grid = PriceGrid(MANIPULATION_GRID)
    lo, hi = reward_bounds(table, grid, (0.0, 0.0))
    learner = MWUStrategy.fresh(len(grid), args.eta, lo, hi)
    manipulator = ManipulatorStrategy(schedule, grid)
    result = simulate(grid, (manipulator, learner), table, (0.0, 0.0), total, "expected", args.seed)

    posted2 = np.array([r.posted_index for r in result.transcripts[1].records])
    top = grid.levels.index(schedule.phase2_price)
    window_start = phase1 + math.ceil(3 * epsilon * phase1)
    freq_top = float((posted2[window_start - 1 :] == top).mean())

    matrix = expected_payoff_matrix(table, grid.levels, (0.0, 0.0))
    eq = best_pure_equilibrium(matrix)
    bench = (total * float(eq[1][0]), total * float(eq[1][1]))
    totals = (float(result.payoffs[0].sum()), float(result.payoffs[1].sum()))

    lv = np.asarray(grid.levels)
    regrets = []
    for i in range(2):
        opp = [r.posted_index for r in result.transcripts[1 - i].records]
        truth = materialize_truth(table, grid.levels, opp, i)
        util = lv[None, :] * truth.as_array()
        regrets.append(best_in_hindsight_regret(util, result.payoffs[i]))
    opp = [r.posted_index for r in result.transcripts[1].records]
    truth1 = materialize_truth(table, grid.levels, opp, 0)
    dists1 = np.zeros((total, len(grid)))
    for t, rec in enumerate(result.transcripts[0].records):
        dists1[t, list(rec.distribution.support)] = rec.distribution.probs
    from .oracles import GroundTruth

    cal1 = true_calibrated_regret(dists1, GroundTruth(grid.levels, truth1.as_array()), 0.0)

    gamma = mean_based_gamma(args.eta, total)
    violations = 0
    from .sellers import payoff_tables

    _, _, _, util2 = payoff_tables(table, grid, (0.0, 0.0))
    posted1 = np.array([r.posted_index for r in result.transcripts[0].records])
    state = MWULearnerState(np.zeros(len(grid)), args.eta)
    norm = 1.0 / (hi - lo)
    for t in range(total):
        if is_mean_based_violation(state, int(posted2[t]), gamma, total):
            violations += 1
        rewards = (util2[:, posted1[t]] - lo) * norm
        state = MWULearnerState(state.cumulative_rewards + rewards, args.eta)

    summary = {
        "phase1_rounds": phase1,
        "total_rounds": total,
        "epsilon": epsilon,
        "eta": args.eta,
        "top_price_frequency_in_window": freq_top,
        "window_start_round": window_start,
        "cumulative_payoffs": totals,
        "equilibrium_benchmark": bench,
        "best_in_hindsight_regret": regrets,
        "manipulator_calibrated_regret": cal1,
        "mean_based_gamma": gamma,
        "mean_based_violations": violations,
    }
    print(json.dumps(summary, indent=2))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        for i, transcript in enumerate(result.transcripts):
            write_transcript(
                transcript, os.path.join(args.out, f"manipulation_seller{i + 1}.jsonl")
            )
        with open(os.path.join(args.out, "manipulation_summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2)
    return 0


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _config_from_args(args) -> ExperimentConfig:
    if args.config:
        config = ExperimentConfig.from_json(args.config)
    elif args.preset == "manipulation":
        config = manipulation_config()
    else:
        config = duopoly_config()
    if args.rounds is not None:
        config.rounds = args.rounds
        if config.strategies and config.strategies[0].get("kind") == "manipulator":
            # Keep the two-phase structure: interpret --rounds as the total.
            phase1 = math.ceil(args.rounds / 2.1)
            spec = {k: v for k, v in config.strategies[0].items() if k != "phase2_rounds"}
            config.strategies[0] = {**spec, "phase1_rounds": phase1}
            config.rounds = ManipulatorSchedule.standard(phase1).total_rounds
    if args.replications is not None:
        config.replications = args.replications
    if args.seed is not None:
        config.seed = args.seed
    if args.out is not None:
        config.out = args.out
    if getattr(args, "feedback", None):
        config.feedback = args.feedback
    return config


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=["duopoly", "manipulation"], default="duopoly")
    p.add_argument("--config", help="experiment config JSON file")
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--replications", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--sweep-points", type=int, default=81)


def _add_audit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cost-lo", type=float, required=True)
    p.add_argument("--cost-hi", type=float, required=True)
    p.add_argument("--r", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--endogenous", action="store_true")
    p.add_argument("--h", type=float, default=None, help="continuum upper bound for endogenous grids")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regretaudit",
        description="Audit pricing transcripts for non-collusion; simulate markets that generate them.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a market simulation, write transcripts")
    _add_experiment_flags(p)
    p.add_argument("--feedback", choices=["expected", "realized"], default=None)
    p.add_argument("--emit-truth", action="store_true", help="write ground-truth sidecar files")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("audit", help="audit one transcript file")
    p.add_argument("transcript")
    _add_audit_flags(p)
    p.add_argument("--sweep", help="write a cost-sweep CSV to this path")
    p.add_argument("--sweep-points", type=int, default=81)
    p.add_argument("--truth", help="ground-truth sidecar for true-regret columns")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("audit-aggregated", help="audit without recorded price distributions")
    p.add_argument("transcript")
    _add_audit_flags(p)
    p.add_argument("--drift-eps", type=float, default=None)
    p.add_argument("--drift-gamma", type=float, default=None)
    p.add_argument("--support-floor", type=float, default=0.3)
    p.set_defaults(func=cmd_audit_aggregated)

    p = sub.add_parser("figures", help="simulate and emit figure CSV/SVG files")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_figures)

    p = sub.add_parser("manipulate-demo", help="steer a mean-based learner to supra-competitive prices")
    p.add_argument("--rounds", type=int, default=10_000, help="phase-1 length; total is 2.1x")
    p.add_argument("--eta", type=float, default=MANIPULATION_ETA)
    p.add_argument("--epsilon", type=float, default=MANIPULATION_EPSILON)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_manipulate_demo)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (TranscriptParseError, TranscriptValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
