"""Command-line entry point: ``nlch <subcommand> ...``.

Exit codes: 0 success, 1 validation failure, 2 numerical failure, 64 unknown
or missing subcommand.  Failures print a JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConstructionError, ConvergenceError, DomainError, NLCHError, SizingError, ValidationError
from .expr import ExpressionError, compile_expression

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2, 64
SUBCOMMANDS = ("simulate", "elliptic", "boundary", "verify", "check-kernel")


class _ArgError(Exception):
    def __init__(self, message, usage):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgError(message, self.format_usage())


def _fail(kind: str, problems, code: int) -> int:
    if isinstance(problems, str):
        problems = [problems]
    sys.stderr.write(json.dumps({"error": kind, "problems": list(problems)}) + "\n")
    return code


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o).__name__)


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, default=_json_default) + "\n")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def _cmd_simulate(args) -> int:
    from .config import load_config
    from .io import DiagnosticsWriter, SnapshotWriter
    from .operators import assemble_coupling
    from .timestepper import Stepper, run

    cfg = load_config(args.config)
    if args.dt is not None:
        if not args.dt > 0:
            raise ValidationError("--dt must be positive")
        cfg.scheme.dt = args.dt
    if args.t_final is not None:
        if not args.t_final >= 0:
            raise ValidationError("--t-final must be nonnegative")
        cfg.T_final = args.t_final
    out = Path(args.output or cfg.output["directory"])
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.initial["seed"] if args.seed is None else args.seed
    grid = cfg.grid()
    kernel = cfg.build_kernel()
    potential = cfg.build_potential()
    state = cfg.build_initial(grid, seed)
    state.check(potential)
    coupling = assemble_coupling(grid, kernel, cfg.kernel["refinement"])
    stepper = Stepper(coupling, potential, cfg.scheme)
    csv_sink = DiagnosticsWriter(out / "diagnostics.csv", cfg.output["diagnostic_stride"])
    snap_sink = SnapshotWriter(out, grid.cells, kernel.alpha, potential.family_id, cfg.output["snapshot_stride"])
    snap_sink.write(state, 0)
    sinks = [csv_sink]
    if cfg.output["snapshot_stride"]:
        sinks.append(snap_sink)
    traj = None
    try:
        traj = run(state, stepper, cfg.T_final, sinks=sinks)
    finally:
        csv_sink.close(traj)
    if not snap_sink.written or snap_sink.written[-1].name != f"snap_{len(traj.times) - 1:07d}.nlch":
        snap_sink.write(traj.final, len(traj.times) - 1)
    meta = {
        "config": cfg.source,
        "seed": seed,
        "generator": "numpy.random.Philox",
        "grid": {"extents": list(grid.extents), "cells": list(grid.cells)},
        "kernel": {"family": kernel.family, "alpha": kernel.alpha, "amplitude": kernel.amplitude,
                   "fingerprint": kernel.fingerprint()},
        "potential": {"family": potential.family, "a": potential.a, "b": potential.b, "d": potential.d},
        "scheme": {"dt": cfg.scheme.dt, "theta_reg": cfg.scheme.theta_reg, "splitting": cfg.scheme.splitting},
        "T_final": cfg.T_final,
        "m": state.m,
        "halvings": traj.halvings,
        "steps": len(traj.times) - 1,
        "version": __version__,
    }
    (out / "metadata.json").write_text(json.dumps(meta, indent=2) + "\n")
    _emit({"status": "ok", "directory": str(out), "steps": meta["steps"], "final_energy": traj.energies[-1],
           "dissipation": traj.dissipation[-1]})
    return EXIT_OK


def _cmd_verify(args) -> int:
    from .io import certificate, read_diagnostics, write_jsonl

    d = Path(args.trajectory)
    diag = read_diagnostics(d / "diagnostics.csv")
    meta_path = d / "metadata.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    E = diag["energy"]
    mass = diag["mass"]
    m = meta.get("m", float(mass[0]))
    certs = []
    drift = float(np.max(np.abs(mass - m)))
    certs.append(certificate("mass_drift", drift, 1e-12, drift <= 1e-12))
    inc = float(np.max(np.diff(E))) if E.size > 1 else 0.0
    tol_inc = 1e-10 * (1 + float(np.max(np.abs(E))))
    monotone_required = meta.get("scheme", {}).get("splitting", "convex_split") == "convex_split"
    certs.append(certificate("energy_monotone", inc, tol_inc, inc <= tol_inc or not monotone_required))
    resid = float(abs(E[-1] + diag["dissipation_cum"][-1] - E[0]) / (1.0 + abs(E[0])))
    certs.append(certificate("energy_identity_residual", resid, args.tolerance, resid <= args.tolerance))
    pot = meta.get("potential", {})
    if "a" in pot and "b" in pot:
        margin = float(min(np.min(diag["min_c"]) - pot["a"], pot["b"] - np.max(diag["max_c"])))
        certs.append(certificate("interior", margin, 0.0, margin > 0))
    write_jsonl(certs, d / "certificates.jsonl", sys.stdout)
    return EXIT_OK if all(c["pass"] for c in certs) else EXIT_VALIDATION


def _kernel_from_args(args, dim):
    from .kernel import Kernel

    if args.family == "homogeneous":
        return Kernel(args.alpha, dim, "homogeneous", args.amplitude)
    if args.family == "modulated":
        if not args.modulation:
            raise ValidationError("--modulation is required for the modulated family")
        fn = compile_expression(args.modulation, ["x1", "x2", "y1", "y2", "x", "y"])

        def g(x, y):
            env = {"x1": x[..., 0], "y1": y[..., 0], "x": x[..., 0], "y": y[..., 0]}
            env["x2"] = x[..., 1] if dim > 1 else np.zeros_like(x[..., 0])
            env["y2"] = y[..., 1] if dim > 1 else np.zeros_like(y[..., 0])
            return fn(**env)

        g.source = args.modulation  # type: ignore[attr-defined]
        return Kernel(args.alpha, dim, "modulated", args.amplitude, modulation=g, c0=args.c0, C0=args.C0)
    raise ValidationError(f"unknown kernel family {args.family!r}")


def _cmd_check_kernel(args) -> int:
    from .kernel import check_smoothness, verify_bounds

    kernel = _kernel_from_args(args, args.dim)
    rep = verify_bounds(kernel, args.samples, args.seed)
    _emit({"samples": rep.samples, "min_ratio": rep.min_ratio, "max_ratio": rep.max_ratio,
           "worst_ratio": rep.worst_ratio, "violations": rep.violations[:20], "violation_count": len(rep.violations),
           "smoothness": check_smoothness(kernel, rng_seed=args.seed), "ok": rep.ok})
    return EXIT_OK if rep.ok else EXIT_VALIDATION


def _cmd_boundary(args) -> int:
    from .boundary import direction_vector, lemma_integral_exponent, parse_ladder

    ladder = parse_ladder(args.ladder)
    if args.x0 == "center-face":
        x0 = 0.5
    else:
        try:
            x0 = float(args.x0)
        except ValueError:
            raise ValidationError(f"--x0 must be 'center-face' or a number, got {args.x0!r}") from None
    kernel = _kernel_from_args(args, args.dim)
    out = {"alpha": kernel.alpha, "family": kernel.family, "dim": args.dim, "x0": x0}
    res = direction_vector(kernel, x0, ladder, patch_factor=args.patch_factor)
    if isinstance(res, float):
        out["direction"] = {"direction": [res], "converged": True}
    else:
        out["direction"] = res.as_dict()
        if not res.converged:
            out["direction"]["inconclusive"] = True
    if args.r is not None:
        out["lemma"] = lemma_integral_exponent(args.r, ladder, dim=args.dim).as_dict()
    _emit(out)
    return EXIT_OK


def _cmd_elliptic(args) -> int:
    from .elliptic import EllipticProblem, EllipticSolver, estimate_ratio
    from .io import certificate, read_snapshot, write_jsonl, write_snapshot
    from .operators import Grid, State, assemble_coupling, seminorm_matrix

    cells = tuple(int(c) for c in args.cells.split(","))
    extents = tuple(float(e) for e in args.extents.split(",")) if args.extents else (1.0,) * len(cells)
    grid = Grid(extents, cells)
    kernel = _kernel_from_args(args, grid.dim)
    if args.g_snapshot:
        snap = read_snapshot(args.g_snapshot)
        if tuple(snap.cells) != grid.cells:
            raise ValidationError(f"snapshot cells {snap.cells} do not match --cells {grid.cells}")
        g = snap.state.c.copy()
    else:
        fn = compile_expression(args.g, ["x1", "x2", "x"], allow_functions=True)
        X = grid.centers
        g = fn(x1=X[:, 0], x=X[:, 0], x2=X[:, 1] if grid.dim > 1 else np.zeros(grid.N))
    if not args.no_project:
        g = g - g.mean()
    problem = EllipticProblem(assemble_coupling(grid, kernel, args.refinement), g, args.theta, args.tol)
    res = EllipticSolver(problem.coupling, args.theta).solve(problem.g, args.tol)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    write_snapshot(State(res.u, float(np.mean(res.u))), out / "u.nlch", grid.cells, kernel.alpha, 0)
    W = seminorm_matrix(grid, kernel.alpha, args.refinement)
    ratio = estimate_ratio(W, res.u, g, args.theta) if np.any(g) else 0.0
    certs = [
        certificate("residual", res.residual, args.tol, res.residual <= args.tol),
        certificate("mean_zero", abs(float(np.mean(res.u))), 1e-12, abs(float(np.mean(res.u))) <= 1e-12),
        certificate("estimate_ratio", ratio, args.ratio_ceiling, ratio <= args.ratio_ceiling),
    ]
    write_jsonl(certs, out / "elliptic_report.jsonl", sys.stdout)
    return EXIT_OK if all(c["pass"] for c in certs) else EXIT_VALIDATION


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _add_kernel_flags(p, dim_default=None):
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--family", default="homogeneous", choices=("homogeneous", "modulated"))
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--modulation", default=None, help="g(x, y) over x1, x2, y1, y2")
    p.add_argument("--c0", type=float, default=None)
    p.add_argument("--C0", type=float, default=None)
    if dim_default is not None:
        p.add_argument("--dim", type=int, default=dim_default, choices=(1, 2))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nlch", description="Nonlocal Cahn-Hilliard solver and certificate checks")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="run a scenario file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--output", default=None)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--t-final", type=float, default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("verify", help="certificates for a simulation output directory")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--tolerance", type=float, default=1e-2, help="energy identity residual threshold")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("elliptic", help="solve the stationary nonlocal problem")
    _add_kernel_flags(p)
    p.add_argument("--cells", required=True, help="comma separated, e.g. 64 or 32,32")
    p.add_argument("--extents", default=None)
    p.add_argument("--theta", type=float, default=0.0)
    p.add_argument("--g", default="cos(pi*x1)")
    p.add_argument("--g-snapshot", default=None)
    p.add_argument("--no-project", action="store_true", help="do not subtract the mean of g")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--refinement", type=int, default=4)
    p.add_argument("--ratio-ceiling", type=float, default=1e3)
    p.add_argument("--output", default="elliptic_out")
    p.set_defaults(func=_cmd_elliptic)

    p = sub.add_parser("boundary", help="boundary direction vector and localized integral exponent")
    _add_kernel_flags(p, dim_default=2)
    p.add_argument("--x0", default="center-face")
    p.add_argument("--ladder", default="0.2:0.05:3")
    p.add_argument("--r", type=float, default=None)
    p.add_argument("--patch-factor", type=float, default=10.0)
    p.set_defaults(func=_cmd_boundary)

    p = sub.add_parser("check-kernel", help="audit the declared kernel bounds")
    _add_kernel_flags(p, dim_default=1)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_check_kernel)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    first = next((a for a in argv if not a.startswith("-")), None)
    if first is None and not any(a in ("-h", "--help", "--version") for a in argv):
        sys.stderr.write(parser.format_usage())
        return EXIT_USAGE
    if first is not None and first not in SUBCOMMANDS:
        sys.stderr.write(parser.format_usage())
        sys.stderr.write(json.dumps({"error": "usage", "problems": [f"unknown subcommand {first!r}"]}) + "\n")
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except _ArgError as exc:
        return _fail("validation", [str(exc)], EXIT_VALIDATION)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConvergenceError as exc:
        probs = [str(exc)] + ([f"residual={exc.residual}"] if exc.residual is not None else [])
        return _fail("numerical", probs, EXIT_NUMERICAL)
    except ValidationError as exc:
        return _fail("validation", exc.problems, EXIT_VALIDATION)
    except (ConstructionError, DomainError, SizingError, ExpressionError, NLCHError, ValueError) as exc:
        return _fail("validation", [str(exc)], EXIT_VALIDATION)
    except FileNotFoundError as exc:
        return _fail("validation", [str(exc)], EXIT_VALIDATION)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
