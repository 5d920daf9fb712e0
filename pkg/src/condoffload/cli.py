"""Command line interface.

Exit codes: 0 success, 1 validation error, 2 solver refusal.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .harness import ExperimentPlan, IngestError, gen_scenario, ingest_profile, run_experiment
from .manager import POLICIES, SolverError, solve_baseline, solve_heuristic, solve_oracle
from .scales import (
    DEFAULT_DELTA,
    DEFAULT_LAMBDA,
    DEFAULT_TARGET_HW,
    DEFAULT_THETA,
    FeatureError,
    InferenceCostModel,
    estimate_scales,
    preprocess_feature,
    read_tensor,
)
from .workload import ScenarioError, ShapeError, dumps_scenario, load_scenario

EXIT_OK, EXIT_INVALID, EXIT_REFUSED = 0, 1, 2


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _cmd_solve(args) -> None:
    rep = solve_heuristic(load_scenario(args.scenario), args.max_iter, args.seed)
    if args.trace_csv:
        Path(args.trace_csv).write_text(rep.trace_csv())
    _emit(rep.to_json(), args.out)


def _cmd_oracle(args) -> None:
    _emit(solve_oracle(load_scenario(args.scenario), args.y_grid).to_json(), args.out)


def _cmd_baseline(args) -> None:
    _emit(solve_baseline(load_scenario(args.scenario), args.policy, args.seed).to_json(), args.out)


def _cmd_gen(args) -> None:
    profile = ingest_profile(args.profile)
    scn = gen_scenario(profile, args.k, (args.nk_min, args.nk_max), args.seed)
    _emit(dumps_scenario(scn), args.out)


def _cmd_experiment(args) -> None:
    plan = ExperimentPlan.load(args.plan)
    if args.seed is not None:
        plan = replace(plan, seed=args.seed)
    _emit(run_experiment(plan).to_csv(), args.out)


def _cmd_scales(args) -> None:
    feats = []
    for j, path in enumerate(args.tensors):
        raw = read_tensor(path)
        if args.no_preprocess:
            feats.append(preprocess_feature(raw, raw.shape[1:], j))
            continue
        h, w = args.target
        feats.append(preprocess_feature(raw, (min(h, raw.shape[1]), min(w, raw.shape[2])), j))
    cost = None
    if args.cost_base is not None or args.cost_branch is not None:
        cost = InferenceCostModel(
            args.cost_base if args.cost_base is not None else InferenceCostModel.base_denoise_s,
            args.cost_branch if args.cost_branch is not None else InferenceCostModel.per_branch_s,
            args.steps,
            args.steps_ref,
        )
    _emit(estimate_scales(feats, args.lam, args.delta, args.theta, cost).to_json(), args.out)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="condoffload", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run the offloading/bandwidth heuristic")
    s.add_argument("scenario")
    s.add_argument("--max-iter", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trace-csv")
    s.add_argument("--out")
    s.set_defaults(fn=_cmd_solve)

    s = sub.add_parser("oracle", help="exhaustive search (small instances only)")
    s.add_argument("scenario")
    s.add_argument("--y-grid", type=int)
    s.add_argument("--out")
    s.set_defaults(fn=_cmd_oracle)

    s = sub.add_parser("baseline", help="local / edge / random reference policy")
    s.add_argument("scenario")
    s.add_argument("--policy", choices=POLICIES, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(fn=_cmd_baseline)

    s = sub.add_parser("gen-scenario", help="draw a scenario from a profile table")
    s.add_argument("--profile", help="profile CSV (default: bundled table)")
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--nk-min", type=int, default=1)
    s.add_argument("--nk-max", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(fn=_cmd_gen)

    s = sub.add_parser("experiment", help="run a sweep plan and write the result CSV")
    s.add_argument("--plan", required=True)
    s.add_argument("--seed", type=int, help="override the plan seed")
    s.add_argument("--out")
    s.set_defaults(fn=_cmd_experiment)

    s = sub.add_parser("scales", help="estimate conditioning scales from FMCT tensor files")
    s.add_argument("tensors", nargs="+")
    s.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)
    s.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    s.add_argument("--theta", type=float, default=DEFAULT_THETA)
    s.add_argument("--cost-base", type=float)
    s.add_argument("--cost-branch", type=float)
    s.add_argument("--steps", type=int, default=20)
    s.add_argument("--steps-ref", type=int, default=20)
    s.add_argument("--target", type=int, nargs=2, default=DEFAULT_TARGET_HW, metavar=("H", "W"))
    s.add_argument("--no-preprocess", action="store_true", help="only standardize, keep spatial dims")
    s.add_argument("--out")
    s.set_defaults(fn=_cmd_scales)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage; keep 2 reserved for solver refusal
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.fn(args)
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except (ScenarioError, ShapeError, IngestError, FeatureError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
