"""
Kernel Selection Command Line
Runs experiments from JSON config files and writes CSV/JSON artifacts.

    kernel-selection reproduce-table2 --reps 1 --budget 5 --out results
    kernel-selection verify --draws 200
    kernel-selection simulate --model perfect
    kernel-selection select --mode closed-loop --seed 3
    kernel-selection bo-demo
    kernel-selection schema
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from pydantic import ValidationError

from .bo import run_quadratic_demo
from .config import ExperimentConfig, RuntimeSettings, config_schema, load_config
from .errors import ConfigError, KernelSelectionError
from .gp import fit
from .kernels import KernelFamily, KernelSpec, default_domain
from .plant import ModelHandle, rollout, trace_summary
from .reporting import (errors_frame, first_trace, metadata_block, table2_payload, write_csv,
                        write_json)
from .rkhs import random_scaling_draws
from .selection import (closed_loop_selection, data_based_after_trials, data_based_selection,
                        repeated_study, rollout_selection)
from .svr import train_svr

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PIPELINE = 1
EXIT_CONFIG = 2
DEMO_MINIMIZER = 0.3
DEMO_TOLERANCE = 1e-2


def cmd_reproduce_table2(config: ExperimentConfig, out_dir: Path, workers: int = 1) -> Dict[str, Path]:
    """
    Data-based, data-based after trials and closed-loop rows of the comparison table

    Writes table2.json, fig2_curve.csv (incumbent mean/std per trial) and
    fig1_errors.csv (control errors of the data-based and best closed-loop models).
    """
    data, space, task, settings = config.training_data(), config.space(), config.task(), config.model_settings()
    kind, folds = config.bo.acquisition, config.cross_validation.folds
    meta = metadata_block(config.config_hash(), config.seed, "reproduce-table2")

    data_based = data_based_selection(data, space, config.bo.data_budget, config.seed, task, settings, folds, kind)
    study = repeated_study(
        config.study.reps, config.bo.closed_loop_budget, config.seed, data, space, task,
        initial=data_based.point, settings=settings, kind=kind, workers=workers,
    )
    after_trials = None
    if config.study.data_based_at:
        after_trials = data_based_after_trials(data, study.results, space, config.bo.data_budget, config.seed, task,
                                               settings, folds, kind, config.study.at_max_transitions)

    best_run = min(study.results, key=lambda r: (r.cost, r.seed))
    traces = {
        "Data-based": first_trace(data_based.traces),
        "Closed-loop": first_trace(rollout_selection(data, space, best_run.point, task, settings)),
    }
    paths = {
        "table2": write_json(out_dir / "table2.json", table2_payload(data_based, study, after_trials), meta),
        "fig2_curve": write_csv(out_dir / "fig2_curve.csv", study.to_frame(), meta),
        "fig1_errors": write_csv(out_dir / "fig1_errors.csv", errors_frame(traces, task.cost_spec), meta),
    }
    print(f"Data-based : {data_based.kernel_name:<16} cost {data_based.cost:.3f}")
    if after_trials is not None:
        print(f"Data-based AT: {after_trials.kernel_name:<14} cost {after_trials.cost:.3f}")
    print(f"Closed-loop: {study.majority_kernel:<16} mean cost {study.final_costs.mean():.3f} "
          f"(std {study.final_costs.std():.3f}, {len(study.results)} runs)")
    return paths


def cmd_verify(config: ExperimentConfig, out_dir: Path) -> bool:
    """Scaling-bound draws, the seeded UCB demo and the warm-start guarantee; True when everything passes"""
    meta = metadata_block(config.config_hash(), config.seed, "verify")
    draws = config.verify.draws
    checks = random_scaling_draws(draws, seed=config.seed)
    passed = sum(c.holds for c in checks)
    if draws == 0:
        logger.warning("⚠️ No scaling draws requested; the scaling suite passes vacuously")

    demo = run_quadratic_demo(config.seed, config.verify.demo_iterations, DEMO_MINIMIZER)
    demo_x = demo.incumbent.phi[0]
    demo_ok = abs(demo_x - DEMO_MINIMIZER) <= DEMO_TOLERANCE
    monotone = bool(np.all(np.diff(demo.incumbent_trace) <= 0.0))

    data, space, task, settings = config.training_data(), config.space(), config.task(), config.model_settings()
    kind, folds = config.bo.acquisition, config.cross_validation.folds
    data_based = data_based_selection(data, space, config.verify.corollary_data_budget, config.seed, task,
                                      settings, folds, kind)
    warm = closed_loop_selection(data, space, task, budget=config.verify.corollary_budget, seed=config.seed,
                                 initial=data_based.point, settings=settings, kind=kind, folds=folds)
    corollary_ok = warm.cost <= data_based.cost

    ok = passed == draws and demo_ok and monotone and corollary_ok
    payload = {
        "scaling": {"draws": draws, "passed": passed, "max_ratio": max((c.lhs / c.rhs for c in checks if c.rhs > 0),
                                                                        default=None)},
        "ucb_demo": {"incumbent_x": demo_x, "minimizer": DEMO_MINIMIZER, "within_tolerance": demo_ok,
                     "monotone_incumbent": monotone},
        "corollary": {"data_based_cost": data_based.cost, "closed_loop_cost": warm.cost,
                      "trials": config.verify.corollary_budget, "holds": corollary_ok},
        "passed": ok,
    }
    write_json(out_dir / "verify.json", payload, meta)
    print(f"Scaling bound: {passed}/{draws} passed")
    print(f"UCB demo: incumbent x={demo_x:.4f} ({'pass' if demo_ok and monotone else 'FAIL'})")
    print(f"Warm start: closed-loop {warm.cost:.4f} <= data-based {data_based.cost:.4f} "
          f"({'pass' if corollary_ok else 'FAIL'})")
    if ok:
        logger.info("✅ Verification suite passed")
    else:
        logger.error("❌ Verification suite failed")
    return ok


def cmd_simulate(config: ExperimentConfig, out_dir: Path, model: str = "perfect", kernel: str = "Gaussian",
                 phi: Optional[List[float]] = None, extra: float = 0.1, x0: Optional[float] = None) -> Path:
    """Single rollout exported as trace.csv"""
    meta = metadata_block(config.config_hash(), config.seed, "simulate")
    if model == "perfect":
        handle = ModelHandle.perfect()
    elif model == "zero":
        handle = ModelHandle.zero()
    else:
        family = KernelFamily(kernel)
        values = phi if phi is not None else list(default_domain(family).midpoint())
        spec = KernelSpec(family, tuple(values))
        data = config.training_data()
        if model == "svr":
            handle = ModelHandle.svr(train_svr(data, spec, extra, config.search_space.box_c, config.search_space.svr_tol))
        else:
            handle = ModelHandle.gp(fit(data, spec, extra))
    task = config.task()
    start = task.x0 if x0 is None else x0
    trace = rollout(start, task.horizon, handle, task.guard)
    summary = trace_summary(trace, task.cost_spec)
    print(f"Rollout ({model}) from x0={start}: cost {summary['cost']:.6g}, diverged={summary['diverged']}")
    return write_csv(out_dir / "trace.csv", trace.to_frame(task.cost_spec), meta)


def cmd_select(config: ExperimentConfig, out_dir: Path, mode: str = "closed-loop") -> Path:
    data, space, task, settings = config.training_data(), config.space(), config.task(), config.model_settings()
    kind, folds = config.bo.acquisition, config.cross_validation.folds
    if mode == "data":
        result = data_based_selection(data, space, config.bo.data_budget, config.seed, task, settings, folds, kind)
    else:
        result = closed_loop_selection(data, space, task, config.bo.closed_loop_budget, config.seed,
                                       settings=settings, kind=kind, folds=folds)
    meta = metadata_block(config.config_hash(), config.seed, f"select --mode {mode}")
    payload = {"selection": result.to_dict(), "bo_state": result.bo_state.to_dict()}
    print(f"{result.method}: {result.kernel_name} phi={result.kernel_phi} loss={result.loss:.4f} cost={result.cost:.4f}")
    return write_json(out_dir / f"selection_{mode.replace('-', '_')}.json", payload, meta)


def cmd_bo_demo(config: ExperimentConfig, out_dir: Path) -> Path:
    state = run_quadratic_demo(config.seed, config.verify.demo_iterations, DEMO_MINIMIZER)
    meta = metadata_block(config.config_hash(), config.seed, "bo-demo")
    best = state.incumbent
    print(f"UCB demo: best x={best.phi[0]:.5f}, cost {best.cost:.3e} after {len(state.history)} trials")
    return write_json(out_dir / "bo_demo.json", {"minimizer": DEMO_MINIMIZER, "bo_state": state.to_dict()}, meta)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Experiment config (JSON)")
    common.add_argument("--seed", type=int, help="Override the config seed")
    common.add_argument("--out", help="Output directory")
    common.add_argument("--reps", type=_positive_int, help="Override study repetitions")
    common.add_argument("--budget", type=_positive_int, help="Override both BO budgets")
    common.add_argument("--verbose", "-v", action="store_true", help="Debug logging")

    parser = argparse.ArgumentParser(prog="kernel-selection", description=__doc__.splitlines()[1])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("reproduce-table2", parents=[common], help="Data-based vs closed-loop comparison")
    verify = sub.add_parser("verify", parents=[common], help="Scaling-bound and UCB checks")
    verify.add_argument("--draws", type=int, help="Number of scaling draws")
    simulate = sub.add_parser("simulate", parents=[common], help="Single closed-loop rollout")
    simulate.add_argument("--model", choices=["perfect", "zero", "svr", "gp"], default="perfect")
    simulate.add_argument("--kernel", choices=[f.value for f in KernelFamily], default=KernelFamily.GAUSSIAN.value)
    simulate.add_argument("--phi", type=float, nargs="*", help="Kernel hyperparameters")
    simulate.add_argument("--extra", type=float, default=0.1, help="SVR epsilon or GP noise")
    simulate.add_argument("--x0", type=float, help="Initial state")
    select = sub.add_parser("select", parents=[common], help="One selection run")
    select.add_argument("--mode", choices=["data", "closed-loop"], default="closed-loop")
    sub.add_parser("bo-demo", parents=[common], help="Seeded UCB run on a 1-D quadratic")
    sub.add_parser("schema", help="Print the experiment config JSON schema")
    return parser


def _apply_overrides(config: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.budget is not None:
        updates["bo"] = config.bo.model_copy(update={"data_budget": args.budget, "closed_loop_budget": args.budget})
    if args.reps is not None:
        updates["study"] = config.study.model_copy(update={"reps": args.reps})
    if getattr(args, "draws", None) is not None:
        if args.draws < 0:
            raise ConfigError(f"--draws must be nonnegative, got {args.draws}")
        updates["verify"] = config.verify.model_copy(update={"draws": args.draws})
    return config.model_copy(update=updates)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = RuntimeSettings()
    except ValidationError as exc:
        logging.basicConfig(level=logging.INFO)
        logger.error(f"❌ Invalid KSEL_* settings: {exc}")
        return EXIT_CONFIG

    # Configure logging
    level = logging.DEBUG if getattr(args, "verbose", False) else getattr(logging, settings.log_level.upper(),
                                                                          logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    if args.command == "schema":
        print(json.dumps(config_schema(), indent=2))
        return EXIT_OK

    try:
        config = _apply_overrides(load_config(args.config), args)
    except ConfigError as exc:
        logger.error(f"❌ {exc}")
        return EXIT_CONFIG
    out_dir = Path(args.out or config.out_dir or settings.output_dir)
    workers = config.study.workers or settings.workers

    try:
        if args.command == "reproduce-table2":
            cmd_reproduce_table2(config, out_dir, workers)
        elif args.command == "verify":
            if not cmd_verify(config, out_dir):
                return EXIT_PIPELINE
        elif args.command == "simulate":
            cmd_simulate(config, out_dir, args.model, args.kernel, args.phi, args.extra, args.x0)
        elif args.command == "select":
            cmd_select(config, out_dir, args.mode)
        elif args.command == "bo-demo":
            cmd_bo_demo(config, out_dir)
    except KernelSelectionError as exc:
        logger.error(f"❌ {args.command} failed: {exc}")
        return EXIT_PIPELINE
    except Exception as exc:
        logger.exception(f"❌ Unexpected failure in {args.command}: {exc}")
        return EXIT_PIPELINE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
