"""Command-line entry points: precompute, eval, run, spectrum, convergence."""
import argparse
import json
import os
import sys
import time

import numpy as np

from . import chebmap, diagnostics, frame, nematic, solve

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2

# relative shell difference that counts as divergence from the reference map
DIVERGENCE_TOL = 0.01


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _get_map(d, degree, workers=None):
    try:
        return chebmap.default_map(d, degree)
    except FileNotFoundError:
        print(f"fitting 3D map of degree {degree} (no packaged file)", file=sys.stderr)
        return chebmap.fit_map_3d(degree, workers=workers)


# -- subcommands --------------------------------------------------------------


def cmd_precompute(args):
    t0 = time.perf_counter()
    if args.dim == 2:
        cmap = chebmap.fit_map_2d(args.degree)
        pts = chebmap.first_kind_points(args.degree + 1)
        mu = 0.75 + 0.25 * pts
        resid = float(np.max(np.abs(chebmap.eval_map_2d(cmap, mu) - cmap.node_values)))
    else:
        cmap = chebmap.fit_map_3d(args.degree, workers=args.workers)
        resid = cmap.node_residual
        print(f"max solve residual {cmap.max_residual:.3e}")
    chebmap.save_map(cmap, args.out)
    print(f"max node residual {resid:.3e}")
    print(f"wrote {args.out} in {time.perf_counter() - t0:.1f} s")
    return EXIT_OK


def cmd_eval(args):
    cmap = chebmap.load_map(args.map)
    if cmap.dim == 2:
        if args.mu2 is not None:
            raise UsageError("--mu2 is only meaningful for 3D maps")
        if not 0.5 <= args.mu1 <= 1.0:
            raise UsageError("mu1 must lie in [0.5, 1] for a 2D map")
        mus = np.array([args.mu1, 1.0 - args.mu1])
        s = frame.evaluate_map(cmap, mus)
        names = ["S1111", "S1122", "S2222"]
        values = [s.s1111, s.s1122, s.s2222]
    else:
        if args.mu2 is None:
            raise UsageError("a 3D map needs --mu2")
        mu3 = 1.0 - args.mu1 - args.mu2
        if not (args.mu1 >= args.mu2 >= mu3 >= 0.0):
            raise UsageError("need mu1 >= mu2 >= 1 - mu1 - mu2 >= 0")
        mus = np.array([args.mu1, args.mu2, mu3])
        s = frame.evaluate_map(cmap, mus)
        names = ["S1111", "S1122", "S2222", "S1133", "S2233", "S3333"]
        values = [s.s1111, s.s1122, s.s2222, s.s1133, s.s2233, s.s3333]
    for name, v in zip(names, values):
        print(f"{name} {float(v):.13g}")
    B = frame.recover_B(mus, s)
    lam = np.append(np.asarray(B.lambdas, float), 0.0)
    lam -= lam.mean()
    print("lambda " + " ".join(f"{v:.13g}" for v in lam))
    return EXIT_OK


def _spectrum_path(out_dir, step):
    return os.path.join(out_dir, f"spectrum_{step:06d}.csv")


def cmd_run(args):
    cfg = nematic.SimConfig.from_file(args.config)
    out_dir = cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_text())
    every = int(round(cfg.output_every / cfg.dt)) if cfg.output_every > 0 else 0
    log = open(os.path.join(out_dir, "diagnostics.txt"), "w", encoding="utf-8")
    log.write("step t trace_drift div_u min_eig\n")

    def on_step(sim, state):
        diag = sim.diagnostics(state)
        log.write(
            f"{state.step} {state.t:.6g} {diag['trace_drift']:.3e} "
            f"{diag.get('div_u', 0.0):.3e} {diag['min_eig']:.6g}\n"
        )
        if every and state.step % every == 0:
            spec = diagnostics.shell_spectrum(sim.velocity_of(state), sim.grid, "mean")
            diagnostics.write_spectrum_csv(_spectrum_path(out_dir, state.step), spec)

    try:
        sim, state = nematic.run(cfg, on_step=on_step, snapshot_dir=out_dir)
    finally:
        log.close()
    spec = diagnostics.shell_spectrum(sim.velocity_of(state), sim.grid, "mean")
    diagnostics.write_spectrum_csv(os.path.join(out_dir, "spectrum_final.csv"), spec)
    diag = sim.diagnostics(state)
    print(f"t = {state.t:.6g} steps = {state.step} trace drift = {diag['trace_drift']:.3e}")
    return EXIT_OK


def _snapshot_state(snap, cfg):
    """Simulator and state rebuilt from a snapshot and a config for the physics."""
    cfg = nematic.SimConfig(**{**cfg.__dict__, "d": snap.d, "n": snap.n, "L": snap.L})
    sim = nematic.Simulator(cfg)
    D = nematic.sym_to_full(snap.D, snap.d)
    return sim, sim.state_from_fields(snap.c, D, snap.t)


def cmd_spectrum(args):
    snap = nematic.read_snapshot(args.snapshot)
    cfg = nematic.SimConfig.from_file(args.config) if args.config else nematic.SimConfig(d=snap.d)
    sim, state = _snapshot_state(snap, cfg)
    u_hat = sim.velocity_of(state)
    if args.mode == "velocity":
        spec = diagnostics.shell_spectrum(u_hat, sim.grid, args.average)
    else:
        spec = diagnostics.shell_spectrum(diagnostics.vorticity_hat(u_hat, sim.grid), sim.grid, args.average)
    diagnostics.write_spectrum_csv(args.out, spec)
    print(f"wrote {args.out} ({len(spec.k)} shells, {spec.meta['binning']})")
    return EXIT_OK


def divergence_wavenumber(spec, ref, tol=DIVERGENCE_TOL):
    """First shell k >= 1 where two spectra differ by more than ``tol`` relative.

    Returns one past the last shell when they agree everywhere.
    """
    for k, a, b in zip(spec.k, spec.value, ref.value):
        if k < 1 or b == 0.0:
            continue
        if abs(a - b) > tol * abs(b):
            return int(k)
    return int(spec.k[-1]) + 1


def cmd_convergence(args):
    cfg = nematic.SimConfig.from_file(args.config)
    degrees = sorted({int(v) for v in args.degrees.split(",") if v.strip()})
    if not degrees or min(degrees) < 1:
        raise UsageError("--degrees needs positive integers, e.g. 10,20,40,80")
    ref_degree = args.reference
    if ref_degree not in degrees:
        degrees.append(ref_degree)
    out_dir = cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    spectra = {}
    for M in degrees:
        run_cfg = nematic.SimConfig(**{**cfg.__dict__, "M": M, "map_file": ""})
        cmap = _get_map(cfg.d, M, cfg.workers)
        sim, state = nematic.run(run_cfg, cmap)
        spec = diagnostics.shell_spectrum(sim.velocity_of(state), sim.grid, "mean")
        diagnostics.write_spectrum_csv(os.path.join(out_dir, f"spectrum_M{M}.csv"), spec)
        spectra[M] = spec
        print(f"M = {M}: done at t = {state.t:.6g}")
    ref = spectra[ref_degree]
    report = {
        "reference_degree": ref_degree,
        "tolerance": DIVERGENCE_TOL,
        "binning": diagnostics.BINNING,
        "divergence_wavenumber": {
            str(M): divergence_wavenumber(spectra[M], ref) for M in degrees if M != ref_degree
        },
    }
    with open(os.path.join(out_dir, "convergence.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    for M, k in report["divergence_wavenumber"].items():
        print(f"M = {M}: diverges from M = {ref_degree} at shell {k}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="bingham_closure", description=__doc__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    q = sub.add_parser("precompute", help="fit a closure map and save it")
    q.add_argument("--dim", type=int, choices=(2, 3), required=True)
    q.add_argument("--degree", type=int, required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--workers", type=int, default=None)
    q.set_defaults(func=cmd_precompute)

    q = sub.add_parser("eval", help="evaluate a saved map at one point")
    q.add_argument("--map", required=True)
    q.add_argument("--mu1", type=float, required=True)
    q.add_argument("--mu2", type=float, default=None)
    q.set_defaults(func=cmd_eval)

    q = sub.add_parser("run", help="run a simulation from a key = value config")
    q.add_argument("--config", required=True)
    q.set_defaults(func=cmd_run)

    q = sub.add_parser("spectrum", help="shell spectrum of a snapshot")
    q.add_argument("--snapshot", required=True)
    q.add_argument("--mode", choices=("velocity", "vorticity"), required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--config", default=None, help="physical parameters for the velocity solve")
    q.add_argument("--average", choices=("mean", "sum-squared"), default="mean")
    q.set_defaults(func=cmd_spectrum)

    q = sub.add_parser("convergence", help="spectra at several map degrees")
    q.add_argument("--config", required=True)
    q.add_argument("--degrees", default="10,20,40,80")
    q.add_argument("--reference", type=int, default=80)
    q.set_defaults(func=cmd_convergence)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (nematic.NumericalError, solve.ConvergenceError, OverflowError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
