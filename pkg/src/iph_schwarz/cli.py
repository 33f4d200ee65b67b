"""Command-line benchmark harness.

Usage::

    iph-schwarz run --experiment eigc [--config run.cfg] [--out results]
                    [--seed 0] [--levels 4,8,16,32] [--alpha-c 1.0] [--gate]

The optional config file holds one ``key = value`` per line with ``#``
comments; command-line flags override file values.  Exit codes: 0 success,
1 bad configuration, 2 a gated threshold was violated (with --gate),
3 internal error.
"""

from __future__ import annotations

import argparse
import sys

from .bench import EXPERIMENTS, ExperimentConfig, run_experiment

_CSV_SCHEMAS = """\
CSV schemas per experiment:
  eigc:                   level,h,n_gamma,sigma_min,sigma_max
  two-subdomain-scaling:  level,h,n_gamma,classical_iters,classical_rho,
                          optimized_iters,optimized_rho,converged
  four-subdomain:         level,h,n_subdomains,iters,rho,converged
  osm-vs-pcg:             level,h,n_subdomains,gmres_iters,pcg_iters,converged
  convergence-order:      level,h,l2_error

Config file keys (all optional; flags win): experiment, domain, levels,
alpha_c, eta, phat (ansatz | fixed:<value>), gamma, tol, krylov_tol, seed,
out, gate, strategy, coarse_m, mesh (structured | perturbed),
perturb_factor.
"""

_BOOL_TRUE = ("1", "true", "yes", "on")


def parse_config_file(path):
    """Read ``key = value`` pairs, ignoring blank lines and # comments."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()
    return values


def _config_from_sources(file_values, args):
    kw = {}

    def take(key, cast, dest=None):
        dest = dest or key
        if key in file_values:
            kw[dest] = cast(file_values[key])

    take("experiment", str)
    take("domain", str)
    take("levels", lambda s: tuple(int(t) for t in s.replace(",", " ").split()))
    take("alpha_c", float)
    take("eta", float)
    take("gamma", float)
    take("tol", float)
    take("krylov_tol", float)
    take("seed", int)
    take("out", str, "out_dir")
    take("gate", lambda s: s.lower() in _BOOL_TRUE)
    take("strategy", str)
    take("coarse_m", int)
    take("mesh", str, "mesh_kind")
    take("perturb_factor", float)
    if "phat" in file_values:
        spec = file_values["phat"]
        if spec == "ansatz":
            kw["phat_policy"] = "ansatz"
        elif spec.startswith("fixed:"):
            kw["phat_policy"] = "fixed"
            kw["phat_value"] = float(spec.split(":", 1)[1])
        else:
            raise ValueError(f"phat must be 'ansatz' or 'fixed:<value>', got {spec!r}")

    if args.experiment:
        kw["experiment"] = args.experiment
    if args.out is not None:
        kw["out_dir"] = args.out
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.levels is not None:
        kw["levels"] = tuple(int(t) for t in args.levels.replace(",", " ").split())
    if args.alpha_c is not None:
        kw["alpha_c"] = args.alpha_c
    if args.gate:
        kw["gate"] = True
    if "experiment" not in kw:
        raise ValueError("no experiment selected (flag --experiment or config key)")
    return ExperimentConfig(**kw)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="iph-schwarz",
        description="Benchmark harness for the IPH Schwarz solver stack.",
        epilog=_CSV_SCHEMAS,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment",
                         epilog=_CSV_SCHEMAS,
                         formatter_class=argparse.RawDescriptionHelpFormatter)
    run.add_argument("--experiment", choices=EXPERIMENTS)
    run.add_argument("--config", help="key = value config file")
    run.add_argument("--out", help="output directory (default: current)")
    run.add_argument("--seed", type=int)
    run.add_argument("--levels", help="comma-separated cells-per-side, e.g. 8,16,32,64")
    run.add_argument("--alpha-c", dest="alpha_c", type=float,
                     help="penalty constant c in alpha = 6c")
    run.add_argument("--gate", action="store_true",
                     help="exit 2 when a threshold gate fails")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        file_values = parse_config_file(args.config) if args.config else {}
        cfg = _config_from_sources(file_values, args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    try:
        result = run_experiment(cfg)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - unexpected faults
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3

    try:
        csv_path, summary_path = result.write()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {csv_path}")
    print(f"wrote {summary_path}")
    sys.stdout.write(result.summary)
    if cfg.gate and not result.gates_passed:
        failed = [k for k, v in result.gates.items() if not v]
        print(f"gated thresholds violated: {', '.join(failed)}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
