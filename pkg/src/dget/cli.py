"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 divergence, 4 mixing-matrix
validation failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import graph, harness
from .engine import ConfigError, DivergenceError
from .problems import ProblemError
from .theory import TheoryError

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_MIXING = 0, 2, 3, 4


def _floats(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from None


def _names(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dget", description="Decentralized gradient estimation and tracking")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="single run; writes trace.csv and summary.json")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = sub.add_parser("sweep", help="first-hit costs over several target accuracies")
    p.add_argument("--config", required=True)
    p.add_argument("--epsilons", type=_floats, required=True)
    p.add_argument("--out")

    p = sub.add_parser("compare", help="first-hit costs across algorithms")
    p.add_argument("--config", required=True)
    p.add_argument("--algorithms", type=_names, required=True)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out")

    p = sub.add_parser("validate-mixing", help="check a mixing matrix built from an edge list")
    p.add_argument("--graph", required=True)
    p.add_argument("--scheme", choices=("metropolis", "maxdegree", "laplacian"), default="metropolis")
    p.add_argument("--gamma", type=float)

    p = sub.add_parser("gradcheck", help="finite-difference check of sample gradients")
    p.add_argument("--config", required=True)
    p.add_argument("--probes", type=int, default=10)
    return parser


def _out_dir(args, cfg):
    return args.out if args.out is not None else cfg.base_dir / cfg.output["dir"]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate-mixing":
            try:
                g = graph.read_edge_list(args.graph)
            except (OSError, graph.GraphError) as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_CONFIG
            report = graph.validate_mixing(graph.weight_matrix(g, args.scheme, args.gamma))
            print(report)
            return EXIT_OK if report.passed else EXIT_MIXING

        cfg = harness.load_config(args.config)
        if args.command == "run":
            result = harness.run(cfg, seed=args.seed, out_dir=args.out)
            print(json.dumps(result.summary, indent=2))
        elif args.command == "sweep":
            result = harness.sweep(cfg, args.epsilons, out_dir=_out_dir(args, cfg))
            sys.stdout.write(result.to_csv())
            print(f"slope {result.slope:.4g}")
        elif args.command == "compare":
            result = harness.compare(cfg, args.algorithms, n_seeds=args.seeds, out_dir=_out_dir(args, cfg))
            sys.stdout.write(result.to_csv())
        elif args.command == "gradcheck":
            report = harness.gradcheck(harness.build_problem(cfg), probes=args.probes)
            print(f"{'pass' if report.passed else 'FAIL'}: max relative error {report.max_rel_error:.3g}")
            return EXIT_OK if report.passed else EXIT_CONFIG
    except (ConfigError, ProblemError, TheoryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except graph.MixingMatrixError as exc:
        print(f"mixing matrix rejected: {exc}", file=sys.stderr)
        return EXIT_MIXING
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
