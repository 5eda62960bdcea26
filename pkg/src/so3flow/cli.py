"""Command-line entry point.

Subcommands: gen-data, train, eval, ablate, selfcheck. Exit codes: 0 on
success, 1 on invariant or selfcheck failure, 2 on bad arguments or config,
3 on I/O failure (missing or corrupt files).
"""

import argparse
import os
import sys

from .config import build_section, load_config_file
from .errors import (
    BadCheckpointError,
    BadConfigError,
    EmptyDatasetError,
    ReportInvariantError,
)
from .evaluate import ABLATION_KINDS, run_ablation, run_eval, run_selfcheck
from .metrics import SUMMARY_FIELDS
from .synthdata import generate_dataset, load_dataset
from .training import train


def build_parser():
    parser = argparse.ArgumentParser(
        prog="so3flow",
        description="Rotation estimation on synthetic point clouds via "
        "reflected flow matching on SO(3).",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override config seeds")
    common.add_argument("--config", default=None, help="JSON configuration file")
    common.add_argument("--out", default=None, help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate a synthetic dataset")

    p = sub.add_parser("train", parents=[common], help="train a model on a dataset")
    p.add_argument("--data", required=True, help="dataset directory")

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint manifest path")
    p.add_argument("--data", required=True, help="dataset directory")

    p = sub.add_parser("ablate", parents=[common], help="run an ablation sweep")
    p.add_argument("--kind", required=True, choices=ABLATION_KINDS)
    p.add_argument("--data", required=True, help="dataset directory")

    sub.add_parser("selfcheck", parents=[common], help="run the math invariant suites")
    return parser


def _require_out(args):
    if args.out is None:
        raise BadConfigError(f"{args.command} requires --out")
    return args.out


def _load_raw(args):
    return load_config_file(args.config) if args.config else {}


def _dispatch(args):
    raw = _load_raw(args)
    if args.command == "gen-data":
        out = _require_out(args)
        cfg = build_section(raw, "gen", seed=args.seed)
        path = generate_dataset(cfg, out)
        print(f"wrote {cfg.n_train} train / {cfg.n_test} test instances, manifest {path}")
        return 0
    if args.command == "train":
        out = _require_out(args)
        gen_cfg, instances = load_dataset(args.data)
        train_split = [i for i in instances if i.split == "train"]
        train_cfg = build_section(raw, "train", seed=args.seed)
        model_cfg = build_section(
            raw,
            "model",
            seed=args.seed,
            extra_defaults={"n_categories": max(8, len(gen_cfg.categories))},
        )
        _, curve = train(train_split, train_cfg, model_cfg=model_cfg, out_dir=out)
        print(
            f"trained {train_cfg.epochs} epochs on {len(train_split)} instances, "
            f"final total loss {curve[-1].total:.6f}"
        )
        print(f"checkpoint {os.path.join(out, 'checkpoint.json')}")
        return 0
    if args.command == "eval":
        out = _require_out(args)
        integrator_cfg = build_section(raw, "integrator")
        report = run_eval(
            args.checkpoint,
            args.data,
            integrator_cfg=integrator_cfg,
            out_dir=out,
            rng_seed=args.seed if args.seed is not None else 0,
        )
        for key in SUMMARY_FIELDS:
            print(f"{key} = {report.summary[key]}")
        print(f"report {os.path.join(out, 'eval_report.csv')}")
        return 0
    if args.command == "ablate":
        out = _require_out(args)
        seed = args.seed
        rows = run_ablation(
            args.kind,
            args.data,
            out,
            train_cfg=build_section(raw, "train", seed=seed),
            integrator_cfg=build_section(raw, "integrator"),
            model_cfg=build_section(raw, "model", seed=seed) if "model" in raw else None,
            rng_seed=seed if seed is not None else 0,
        )
        for row in rows:
            print(
                f"{row['variant']:>16} {row['scheme']:>6} steps={row['n_steps']:>2}  "
                f"median_deg={row['median_deg']:.3f}  "
                f"success_5deg_5cm={row['success_rate_5deg_5cm']:.3f}"
            )
        print(f"table {os.path.join(out, f'ablation_{args.kind}.csv')}")
        return 0
    if args.command == "selfcheck":
        return run_selfcheck()
    raise BadConfigError(f"unknown command {args.command!r}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except BadConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ReportInvariantError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, BadCheckpointError, EmptyDatasetError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except ValueError as e:
        # Malformed dataset or report files surface as generic ValueErrors.
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
