"""Command-line front end: ``slpoly forward|inverse|roundtrip|sweep``.

Exit codes: 0 success, 1 a reported check failed, 2 invalid input,
3 direct-problem failure, 4 main equation outside its solvability ball,
5 boundary polynomial extraction failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import io
from .errors import (
    DeltaTooLarge,
    ExtractionResidual,
    ForwardError,
    SingularSystem,
    ValidationError,
)
from .forward import characteristic, spectral_data
from .inverse import DEFAULT_K, TAU_POLY, inverse_solve
from .verify import (
    CHANNELS,
    CLOSURE_TOL,
    Perturbation,
    roundtrip,
    stability_sweep,
)

EXIT_OK, EXIT_FAIL, EXIT_VALIDATION, EXIT_FORWARD, EXIT_BALL, EXIT_EXTRACTION = 0, 1, 2, 3, 4, 5

log = logging.getLogger("slpoly")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _shift(text):
    """``n:value`` with value real or ``re,im``."""
    try:
        n, v = text.split(":", 1)
        parts = [float(t) for t in v.split(",")]
        z = complex(*parts) if len(parts) == 2 else complex(parts[0])
        return int(n), z
    except (ValueError, TypeError) as exc:
        raise argparse.ArgumentTypeError(f"expected n:value or n:re,im, got {text!r}") from exc


def _perturbation(args) -> Perturbation:
    rho = dict(args.perturb_rho or [])
    alpha = dict(args.perturb_alpha or [])
    if args.random_indices:
        rng = np.random.default_rng(args.seed)
        first = args.skip_N + 1
        for n in range(first, first + args.random_indices):
            rho[n] = rho.get(n, 0) + rng.normal() * 1e-3
            alpha[n] = alpha.get(n, 0) + rng.normal() * 1e-3
    return Perturbation(rho, alpha)


def cmd_forward(args) -> int:
    problem = io.read_problem(args.problem, args.grid_m)
    data = spectral_data(problem, args.n_max, allow_multiple=args.allow_multiple)
    io.write_spectral_data(args.out, data)
    if args.delta_csv:
        lo, hi = args.delta_range
        lam = np.linspace(lo, hi, args.delta_points).astype(complex)
        io.write_delta_csv(args.delta_csv, lam, characteristic(problem, lam))
    print(f"wrote {data.count} eigenvalues to {args.out}")
    return EXIT_OK


def cmd_inverse(args) -> int:
    model = io.read_problem(args.model, args.grid_m)
    target = io.read_spectral_data(args.data)
    skip_N = args.skip_N if args.skip_N is not None else target.unperturbed_prefix
    res = inverse_solve(model, target, K=args.K, skip_N=skip_N, workers=args.workers, tau_poly=args.tol)
    io.write_problem(args.out, res.problem)
    if args.diagnostics:
        io.write_json(args.diagnostics, {k: float(v) if isinstance(v, float) else v for k, v in res.diagnostics.items()})
    print(f"reconstructed problem written to {args.out} (delta={res.distances.delta:.3e})")
    return EXIT_OK


def _line(ok: bool, text: str) -> str:
    return f"{'PASS' if ok else 'FAIL'} {text}"


def cmd_roundtrip(args) -> int:
    model = io.read_problem(args.model, args.grid_m)
    rep = roundtrip(model, _perturbation(args), K=args.K, skip_N=args.skip_N, workers=args.workers)
    if args.out:
        io.write_json(args.out, rep.to_dict())
    checks = [
        (rep.spectral_closure_error <= args.tol, f"spectral closure {rep.spectral_closure_error:.3e} <= {args.tol:.1e}"),
        (rep.extraction_residual <= TAU_POLY, f"extraction residual {rep.extraction_residual:.3e} <= {TAU_POLY:.0e}"),
    ]
    if args.skip_N:
        checks.append((rep.prefix_closure_error <= args.tol,
                       f"prefix closure {rep.prefix_closure_error:.3e} <= {args.tol:.1e}"))
    print(f"delta={rep.delta_in:.3e} sigma_L2={rep.sigma_error_L2:.3e} "
          f"r1_sup={rep.r1_error_sup:.3e} r2_sup={rep.r2_error_sup:.3e}")
    for ok, text in checks:
        print(_line(ok, text))
    return EXIT_OK if all(ok for ok, _ in checks) else EXIT_FAIL


def cmd_sweep(args) -> int:
    model = io.read_problem(args.model, args.grid_m)
    direction = _perturbation(args)
    if direction.is_zero:
        raise ValidationError("the sweep needs a nonzero perturbation direction")
    rep = stability_sweep(model, direction, args.deltas, K=args.K, skip_N=args.skip_N)
    if args.out:
        io.write_json(args.out, rep.to_dict())
    ok_all = True
    for c in CHANNELS:
        ok = rep.passed(c)
        ok_all &= ok
        print(_line(ok, f"{c} slope {rep.slopes[c]:.3f} C={rep.constants[c]:.3e}"))
    return EXIT_OK if ok_all else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slpoly", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--grid-m", type=_positive_int, default=None,
                        help="grid intervals (overrides grid_m in the problem file)")

    f = sub.add_parser("forward", help="eigenvalues and weight numbers of a problem")
    f.add_argument("problem")
    f.add_argument("--n-max", type=int, default=20)
    f.add_argument("--out", required=True)
    f.add_argument("--allow-multiple", action="store_true")
    f.add_argument("--delta-csv", help="also write Delta(lambda) on a real grid; columns: "
                   + ", ".join(io.DELTA_CSV_COLUMNS))
    f.add_argument("--delta-range", type=float, nargs=2, default=(-10.0, 400.0))
    f.add_argument("--delta-points", type=_positive_int, default=1000)
    common(f)
    f.set_defaults(func=cmd_forward)

    i = sub.add_parser("inverse", help="reconstruct a problem from spectral data")
    i.add_argument("model")
    i.add_argument("data")
    i.add_argument("--K", type=_positive_int, default=DEFAULT_K)
    i.add_argument("--skip-N", type=int, default=None,
                   help="fixed prefix length (default: N_prefix from the data file)")
    i.add_argument("--out", required=True)
    i.add_argument("--diagnostics")
    i.add_argument("--workers", type=_positive_int, default=1)
    i.add_argument("--tol", type=float, default=TAU_POLY, help="polynomial extraction tolerance")
    common(i)
    i.set_defaults(func=cmd_inverse)

    for name, func in (("roundtrip", cmd_roundtrip), ("sweep", cmd_sweep)):
        s = sub.add_parser(name, help=f"{name} experiment around a model problem")
        s.add_argument("model")
        s.add_argument("--perturb-rho", type=_shift, action="append", metavar="N:VALUE")
        s.add_argument("--perturb-alpha", type=_shift, action="append", metavar="N:VALUE")
        s.add_argument("--random-indices", type=int, default=0,
                       help="add a seeded random direction over this many indices")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--K", type=_positive_int, default=DEFAULT_K)
        s.add_argument("--skip-N", type=int, default=0)
        s.add_argument("--out")
        s.add_argument("--tol", type=float, default=CLOSURE_TOL, help="closure tolerance")
        s.add_argument("--workers", type=_positive_int, default=1)
        common(s)
        s.set_defaults(func=func)
        if name == "sweep":
            s.add_argument("--deltas", type=float, nargs="+", default=[4e-3, 2e-3, 1e-3, 5e-4])
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        if getattr(args, "n_max", 1) < 1:
            raise ValidationError("--n-max must be >= 1")
        return args.func(args)
    except (DeltaTooLarge, SingularSystem) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BALL
    except ExtractionResidual as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EXTRACTION
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ForwardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORWARD


if __name__ == "__main__":
    sys.exit(main())
