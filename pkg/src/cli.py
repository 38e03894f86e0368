"""
Command-line entry point.

Usage:
    python -m src.cli run --config data/configs/mr_admm_private.json [--output results/run.csv]
    python -m src.cli bound --config data/configs/mr_admm_private.json
    python -m src.cli check --config data/configs/adult_sample.json
    python -m src.cli calibrate --beta 20 --config data/configs/r_admm_private.json
"""
import argparse
import json
import sys
from pathlib import Path

from dotenv import load_dotenv

from .analysis import (
    ConditionInputs,
    check_mr_conditions,
    check_r_conditions,
    check_schedule_conditions,
    condition_report_json,
)
from .errors import AdmmError
from .experiments import (
    accountant_report,
    calibrate_alpha,
    emit_results,
    load_config,
    prepare_experiment,
    run_experiment,
)
from .models import create_objectives
from .privacy import check_eta1_condition
from .settings import configure_logging


def cmd_run(args):
    cfg = load_config(args.config)
    trace = run_experiment(cfg, workers=args.workers, verbose=args.verbose)
    output = Path(args.output) if args.output else Path("results") / (Path(args.config).stem + ".csv")
    emit_results(trace, output)
    print(f"✓ {cfg.variant}{' (private)' if cfg.private else ''}: "
          f"L_mean(2K)={trace.L_mean[-1]:.6f}  E_mean={trace.E_mean:.4f}  beta={trace.beta:.6g}")
    print(f"✓ Results written to {output}")
    return 0


def cmd_bound(args):
    cfg = load_config(args.config)
    ctx = prepare_experiment(cfg)
    report = accountant_report(cfg, ctx)
    gate = check_eta1_condition(ctx.params, ctx.topology, ctx.schedule, ctx.partition.batch_sizes)
    payload = report.to_dict()
    payload["eta1_condition"] = gate
    print(json.dumps(payload, indent=2))
    if not gate:
        print("⚠️  eta_i(1) gate fails for this configuration", file=sys.stderr)
    return 0


def cmd_check(args):
    cfg = load_config(args.config)
    ctx = prepare_experiment(cfg)
    objectives = create_objectives(datasets=ctx.partition.train, params=ctx.params)
    lipschitz = [obj.gradient_lipschitz() for obj in objectives]
    n = ctx.topology.n_nodes

    if ctx.schedule.is_constant:
        eta = ctx.schedule.eta(0, 1, n)
        if cfg.L == 2.0 and cfg.mu == 2.0:
            result = check_r_conditions(ctx.topology, eta, cfg.gamma, lipschitz)
        else:
            result = check_mr_conditions(ConditionInputs(ctx.topology, eta, eta, cfg.gamma, lipschitz, cfg.L, cfg.mu))
    else:
        result = check_schedule_conditions(
            ctx.topology, ctx.schedule, cfg.gamma, lipschitz, cfg.outer_pairs, cfg.L, cfg.mu
        )
    print(json.dumps(condition_report_json(result, ctx.topology), indent=2))
    return 0


def cmd_calibrate(args):
    cfg = load_config(args.config)
    ctx = prepare_experiment(cfg)
    alpha = calibrate_alpha(args.beta, cfg, ctx)
    print(json.dumps({"variant": cfg.variant, "target_beta": args.beta, "alpha": alpha}, indent=2))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="python -m src.cli",
        description="Decentralized (private) ADMM experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write CSV + JSON results")
    run.add_argument("--config", required=True)
    run.add_argument("--output", default=None, help="CSV path (default: results/<config>.csv)")
    run.add_argument("--workers", type=int, default=None, help="threads per half-iteration")
    run.add_argument("--verbose", action="store_true")
    run.set_defaults(func=cmd_run)

    bound = sub.add_parser("bound", help="privacy-loss bound only")
    bound.add_argument("--config", required=True)
    bound.set_defaults(func=cmd_bound)

    check = sub.add_parser("check", help="sufficient convergence conditions")
    check.add_argument("--config", required=True)
    check.set_defaults(func=cmd_check)

    calibrate = sub.add_parser("calibrate", help="constant alpha reaching a target beta")
    calibrate.add_argument("--beta", type=float, required=True)
    calibrate.add_argument("--config", required=True)
    calibrate.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None):
    load_dotenv()
    args = build_parser().parse_args(argv)
    try:
        configure_logging()
        return args.func(args)
    except AdmmError as e:
        print(f"✗ {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"✗ {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
