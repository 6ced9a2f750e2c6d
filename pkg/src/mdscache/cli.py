"""Command-line entry point: ``mdscache <mode> [options]``."""
from __future__ import annotations

import argparse
import sys
import traceback

from .config import PRESETS, ConfigError, ExperimentSpec, parse_config
from .experiment import run, write_csv
from .lp import NumericalFailure
from .model import ModelInconsistency
from .optimize import InfeasibleProblem

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4
EXIT_INFEASIBLE = 5


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mdscache", description=__doc__)
    p.add_argument("mode", choices=["analyze", "optimize", "simulate", "sweep", "validate"])
    p.add_argument("--config", metavar="PATH", help="key = value specification file")
    p.add_argument("--preset", choices=sorted(PRESETS), help="built-in figure specification")
    p.add_argument("--seed", type=_u64, help="root random seed (overrides the config)")
    p.add_argument("--out", metavar="PATH", help="CSV output path (default: stdout)")
    p.add_argument("--parallel", type=int, default=1, metavar="K", help="worker processes for sweeps")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded run (results are seed-determined either way)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one specification entry; may be repeated")
    return p


def load_spec(args) -> ExperimentSpec:
    base = PRESETS[args.preset] if args.preset else ExperimentSpec()
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            base = parse_config(fh.read(), base)
    if args.set:
        base = parse_config("\n".join(args.set), base)
    changes = {"mode": args.mode}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out:
        changes["output"] = args.out
    if args.mode == "sweep" and not base.values:
        raise ConfigError("sweep needs an axis and values (config, --set or --preset)")
    return parse_config("", base.with_(**changes))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = load_spec(args)
        parallel = 1 if args.deterministic else max(1, args.parallel)
        table = run(spec, parallel=parallel)
        if spec.output:
            with open(spec.output, "w", encoding="utf-8", newline="") as fh:
                write_csv(table, spec, fh)
        else:
            write_csv(table, spec, sys.stdout)
    except ConfigError as exc:
        print(f"mdscache: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"mdscache: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalFailure, ModelInconsistency) as exc:
        print(f"mdscache: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except InfeasibleProblem as exc:
        print(f"mdscache: infeasible problem: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except Exception:  # noqa: BLE001 - report anything else as an internal error
        traceback.print_exc()
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
