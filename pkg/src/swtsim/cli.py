"""Command-line experiment runner.

Subcommands: `run` executes one scenario/policy and writes per-step CSV plus
a JSON summary; `compare` runs several policies on shared truth streams and
tabulates them against the random baseline; `verify` executes the built-in
oracle suites. Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass

from .scenario import ScenarioError, load_scenario
from .sim import CSV_HEADER, ExperimentResult, run_experiment
from .verify import run_suite

DIAG_HEADER = ("run,step,cell,gain_discovered,gain_undiscovered,"
               "r_discovered,r_undiscovered,overlap_violation")


@dataclass
class RunConfig:
    scenario_path: str
    policy: str | None = None
    seed: int | None = None
    runs: int | None = None
    out_dir: str = "out"
    diagnostics: bool = False
    verbose: bool = False


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as handle:
        handle.write(text)
    os.replace(tmp, path)


def _apply_overrides(scenario, config: RunConfig):
    if config.policy is not None:
        scenario = scenario.with_policy(config.policy)
    if config.seed is not None:
        scenario = dataclasses.replace(scenario, master_seed=config.seed)
    if config.runs is not None:
        scenario = dataclasses.replace(scenario, mc_runs=config.runs)
    return scenario


def _result_csv(result: ExperimentResult) -> str:
    lines = [CSV_HEADER]
    for run, records in enumerate(result.runs):
        for record in records:
            lines.append(record.csv_row(result.policy, run))
    return "\n".join(lines) + "\n"


def _diagnostics_csv(result: ExperimentResult) -> str:
    lines = [DIAG_HEADER]
    for row in result.diagnostics.rows:
        run, step, cell, gd, gu, rv, rw, viol = row
        lines.append(f"{run},{step},{cell},{gd:.9g},{gu:.9g},{rv:.9g},"
                     f"{rw:.9g},{viol:.9g}")
    return "\n".join(lines) + "\n"


def cmd_run(config: RunConfig) -> int:
    try:
        scenario = _apply_overrides(load_scenario(config.scenario_path), config)
    except (ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    result = run_experiment(scenario, collect_diagnostics=config.diagnostics)
    os.makedirs(config.out_dir, exist_ok=True)
    _atomic_write(os.path.join(config.out_dir, "results.csv"), _result_csv(result))
    summary = result.summary()
    _atomic_write(os.path.join(config.out_dir, "summary.json"),
                  json.dumps(summary, indent=2) + "\n")
    if config.diagnostics:
        _atomic_write(os.path.join(config.out_dir, "diagnostics.csv"),
                      _diagnostics_csv(result))
    if config.verbose:
        print(json.dumps(summary, indent=2))
    else:
        print(f"{result.policy}: mean GOSPA {summary['gospa']['mean']:.3f} "
              f"over {summary['runs']} runs -> {config.out_dir}/results.csv")
    return 0


def _improvement(baseline: float, value: float) -> float:
    if value == 0.0:
        return 0.0
    return (baseline - value) / value * 100.0


def cmd_compare(config: RunConfig, policies: list[str]) -> int:
    if len(policies) < 2:
        print("error: compare needs at least two policies", file=sys.stderr)
        return 2
    try:
        scenario = _apply_overrides(load_scenario(config.scenario_path), config)
    except (ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    summaries = {}
    results = {}
    for kind in policies:
        result = run_experiment(scenario.with_policy(kind))
        results[kind] = result
        summaries[kind] = result.summary()
    baseline = summaries.get("random", summaries[policies[0]])

    header = (f"{'policy':>8} | {'GOSPA':>10} | {'missed':>9} | {'false':>9} | "
              f"{'vs random':>9}")
    lines = [header, "-" * len(header)]
    csv_lines = ["policy,gospa,missed,false,improvement_pct"]
    for kind in policies:
        s = summaries[kind]
        imp = _improvement(baseline["gospa"]["mean"], s["gospa"]["mean"])
        lines.append(f"{kind:>8} | {s['gospa']['mean']:>10.3f} | "
                     f"{s['missed']['mean']:>9.3f} | {s['false']['mean']:>9.3f} | "
                     f"{imp:>8.1f}%")
        csv_lines.append(f"{kind},{s['gospa']['mean']:.6f},"
                         f"{s['missed']['mean']:.6f},{s['false']['mean']:.6f},"
                         f"{imp:.3f}")
    table = "\n".join(lines)
    print(table)
    os.makedirs(config.out_dir, exist_ok=True)
    _atomic_write(os.path.join(config.out_dir, "compare.csv"),
                  "\n".join(csv_lines) + "\n")
    _atomic_write(os.path.join(config.out_dir, "compare_summary.json"),
                  json.dumps(summaries, indent=2) + "\n")
    for kind, result in results.items():
        _atomic_write(os.path.join(config.out_dir, f"results_{kind}.csv"),
                      _result_csv(result))
    return 0


def cmd_verify(suite: str) -> int:
    try:
        results = run_suite(suite)
    except KeyError:
        print(f"error: unknown verify suite {suite!r}; known: "
              "thm1, prop1, additivity, nullgain, gospa, all", file=sys.stderr)
        return 2
    for check in results:
        print(check.line())
    return 0 if all(check.passed for check in results) else 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swtsim",
        description="Sensor FoV control simulator for search-while-tracking")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--scenario", required=True, help="scenario YAML path")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--runs", type=int, default=None, help="MC run override")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--verbose", "-v", action="store_true")

    run_p = sub.add_parser("run", help="run one scenario")
    add_common(run_p)
    run_p.add_argument("--policy", choices=["cellmb", "pims", "random"],
                       default=None, help="policy override")
    run_p.add_argument("--diagnostics", action="store_true",
                       help="dump per-cell gain arrays per step")

    cmp_p = sub.add_parser("compare", help="run several policies on shared truth")
    add_common(cmp_p)
    cmp_p.add_argument("--policies", default="cellmb,pims,random",
                       help="comma-separated policy list")

    ver_p = sub.add_parser("verify", help="run oracle suites")
    ver_p.add_argument("suite", nargs="?", default="all",
                       help="thm1|prop1|additivity|nullgain|gospa|all")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 2
    if args.command == "verify":
        return cmd_verify(args.suite)
    config = RunConfig(scenario_path=args.scenario,
                       policy=getattr(args, "policy", None),
                       seed=args.seed, runs=args.runs, out_dir=args.out,
                       diagnostics=getattr(args, "diagnostics", False),
                       verbose=args.verbose)
    if args.command == "run":
        return cmd_run(config)
    policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    return cmd_compare(config, policies)


if __name__ == "__main__":
    sys.exit(main())
