"""Command line entry point: ``wfem-gp {regression,classification,curve}``."""
from __future__ import annotations

import argparse
import sys

import numpy as np

from .harness import APPROXIMATIONS, SCHEMES, SWEEPS, ExperimentConfig, export_posterior_curve, rows_to_csv, sweep


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _names(text: str) -> tuple[str, ...]:
    names = tuple(v.strip() for v in text.split(",") if v.strip())
    bad = [n for n in names if n not in SCHEMES]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"schemes must be drawn from {','.join(SCHEMES)}")
    return names


def x_grid(text: str) -> np.ndarray:
    """Parse ``min:max:step`` into an inclusive grid."""
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected min:max:step, got {text!r}") from None
    if not step > 0 or hi < lo:
        raise argparse.ArgumentTypeError("need step > 0 and max >= min")
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


def _common(p: argparse.ArgumentParser, classification: bool) -> None:
    p.add_argument("--sweep", choices=SWEEPS)
    p.add_argument("--grid", type=_floats, default=())
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--alpha-equals-beta", action="store_true", help="tie alpha to beta (also along a beta sweep)")
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--n-tasks", type=int, default=20 if classification else 30)
    p.add_argument("--schemes", type=_names, default=SCHEMES)
    p.add_argument("--approx", choices=APPROXIMATIONS, default="map")
    p.add_argument("--particles", type=int, default=10)
    p.add_argument("--seeds", type=_ints, default=(0,))
    p.add_argument("--out")
    p.add_argument("--meta-data", help="JSON meta-training tasks replacing generated ones")
    p.add_argument("--test-data", help="JSON meta-test tasks; the first points of each are its training split")
    p.add_argument("--n-test-tasks", type=int, default=20)
    p.add_argument("--prior-std", type=float, default=10.0)
    p.add_argument("--iterations", type=int, default=1000 if classification else 2000)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--svgd-iterations", type=int, default=500 if classification else 2000)
    p.add_argument("--svgd-step", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--record-time", action="store_true", help="fill the wall_time column (breaks byte-identity)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wfem-gp", description="Meta-learned GP priors under environment shift.")
    sub = parser.add_subparsers(dest="command", required=True)

    reg = sub.add_parser("regression", help="sinusoid regression sweep")
    _common(reg, False)
    reg.add_argument("--mu-c", type=float, default=0.0)
    reg.add_argument("--deviation", type=float, default=0.0, help="target minus source phase mean")
    reg.add_argument("--samples", type=int, default=5)
    reg.add_argument("--sigma", type=float, default=0.1)

    cls = sub.add_parser("classification", help="synthetic 2-way classification sweep")
    _common(cls, True)
    cls.add_argument("--shift", type=float, default=0.3, help="target rotation in radians")
    cls.add_argument("--shots", type=int, default=5)

    cur = sub.add_parser("curve", help="posterior mean/std of every scheme on one meta-test task")
    _common(cur, False)
    cur.add_argument("--mu-c", type=float, default=0.0)
    cur.add_argument("--deviation", type=float, default=0.5)
    cur.add_argument("--samples", type=int, default=5)
    cur.add_argument("--sigma", type=float, default=0.1)
    cur.add_argument("--x-grid", type=x_grid, default=x_grid("-5:5:0.1"))
    cur.add_argument("--test-index", type=int, default=0)
    return parser


def config_from_args(args) -> ExperimentConfig:
    classification = args.command == "classification"
    return ExperimentConfig(
        problem="classification" if classification else "regression",
        n_tasks=args.n_tasks,
        samples=args.shots if classification else args.samples,
        sigma=0.1 if classification else args.sigma,
        alpha=args.alpha,
        beta=args.beta,
        alpha_equals_beta=args.alpha_equals_beta,
        mu_c=0.0 if classification else args.mu_c,
        deviation=args.shift if classification else args.deviation,
        seeds=args.seeds,
        sweep=args.sweep,
        grid=args.grid,
        schemes=args.schemes,
        approx=args.approx,
        particles=args.particles,
        n_test_tasks=args.n_test_tasks,
        prior_std=args.prior_std,
        map_iterations=args.iterations,
        map_lr=args.lr,
        batch_size=args.batch_size,
        svgd_iterations=args.svgd_iterations,
        svgd_step=args.svgd_step,
        meta_data=args.meta_data,
        test_data=args.test_data,
        record_time=args.record_time,
    )


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
    except ValueError as exc:
        parser.error(str(exc))
    if args.command == "curve":
        try:
            rows = export_posterior_curve(cfg, args.x_grid, args.out, test_index=args.test_index)
        except (ValueError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        if args.out is None:
            sys.stdout.write("scheme,x,mean,std,truth\n")
            for r in rows:
                sys.stdout.write(f"{r['scheme']},{r['x']!r},{r['mean']!r},{r['std']!r},{r['truth']!r}\n")
        return 0
    rows = sweep(cfg, args.out)
    if args.out is None:
        sys.stdout.write(rows_to_csv(rows))
    failed = [r for r in rows if r.error]
    for r in failed:
        print(f"error: {r.scheme} seed {r.seed} deviation {r.deviation}: {r.error}", file=sys.stderr)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
