"""Command line front end.

Subcommands: train, compare, oracle, analyze. Every configuration key is
also a flag (--epochs 20) and overrides the config file. Failures exit
nonzero with a diagnostic line, not a traceback.
"""

import argparse
import os
import sys

from . import experiment
from .config import SCHEMA, parse_config
from .errors import RepruneError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reprune",
        description="train compact conv nets with cyclic filter "
                    "drop-and-reinit, and inspect why it helps")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text, **extra):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="PATH", default=None,
                       help="key=value config file")
        for key in sorted(SCHEMA):
            p.add_argument(f"--{key}", metavar="V", default=None,
                           dest=f"cfg_{key}")
        for flag, kwargs in extra.items():
            p.add_argument(flag, **kwargs)
        return p

    command("train", "run one training job and write its artifacts",
            **{"--resume": dict(metavar="CKPT", default=None,
                                help="continue from a checkpoint")})
    command("compare", "standard vs cyclic from one shared init")
    command("oracle", "score a checkpoint's filters by ablation",
            **{"--checkpoint": dict(metavar="CKPT", required=True)})
    command("analyze", "correlation maps and metric-vs-oracle agreement",
            **{"--checkpoint": dict(metavar="CKPT", required=True)})
    return parser


def _overrides(args) -> dict:
    out = {}
    for key in SCHEMA:
        raw = getattr(args, f"cfg_{key}", None)
        if raw is not None:
            out[key] = raw
    return out


def _run_dir(cfg, command) -> str:
    return experiment.default_run_dir(cfg, command)


def _print_summary(label, summary):
    print(f"{label}: final test acc {summary['final_test_acc']:.4f}  "
          f"best {summary['best_test_acc']:.4f}  "
          f"train-test gap (last 5) {summary['gap_last5']:.4f}  "
          f"ortho sum {summary['final_ortho_sum']:.4f}")


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "train" and args.resume:
            result = experiment.resume_train(args.resume, _overrides(args))
            _finish_train(result, result.run_dir)
            return 0
        cfg = parse_config(args.config, _overrides(args))
        if args.command == "train":
            run_dir = _run_dir(cfg, "train")
            result = experiment.do_train(cfg, run_dir=run_dir)
            _finish_train(result, run_dir)
        elif args.command == "compare":
            out_dir = _run_dir(cfg, "compare")
            outcome = experiment.do_compare(cfg, out_dir=out_dir)
            _print_summary("standard", outcome["standard"])
            _print_summary("cyclic  ", outcome["repr"])
            delta = (outcome["repr"]["final_test_acc"]
                     - outcome["standard"]["final_test_acc"])
            print(f"test acc delta (cyclic - standard): {delta:+.4f}")
            print(f"wrote {os.path.join(out_dir, 'compare.csv')}")
        elif args.command == "oracle":
            out_dir = _run_dir(cfg, "oracle")
            outcome = experiment.do_oracle(cfg, args.checkpoint,
                                           out_dir=out_dir)
            print(f"scored {len(outcome['scores'])} filters")
            print(f"wrote {outcome['path']}")
        else:
            out_dir = _run_dir(cfg, "analyze")
            outcome = experiment.do_analyze(cfg, args.checkpoint,
                                            out_dir=out_dir)
            for metric, (pe, sp) in outcome["agreement"].items():
                print(f"{metric:>12} vs oracle: pearson {pe:+.4f}  "
                      f"spearman {sp:+.4f}")
            for name, path in outcome["paths"].items():
                print(f"wrote {path}")
        return 0
    except RepruneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _finish_train(result, run_dir):
    _print_summary("train", experiment.summarize(result.log))
    if run_dir:
        print(f"wrote {os.path.join(run_dir, 'metrics.csv')}")


if __name__ == "__main__":
    sys.exit(main())
