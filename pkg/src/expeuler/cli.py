"""Command line entry point.

    expeuler converge   <config>   convergence study -> errors.csv, slopes.csv, manifest.txt
    expeuler simulate   <config>   one trajectory    -> trajectory.csv
    expeuler stability  <config>   step-size bound   -> stability.csv
    expeuler covariance <config>   exact covariance  -> covariance_<i>.csv, diagnostics.txt

Exit status: 0 on success, 1 on configuration errors, 2 on numerical failure.
"""
import argparse
import logging
import os
import sys

import numpy as np

from . import matfun, noise as nz, stability
from .config import FULL_PATHS, FULL_REF, load_config
from .errors import ConfigError, InvalidInputError, NumericalError
from .harness import FineNoiseSource, build_problem, emit_report, run_convergence
from .integrator import integrate

log = logging.getLogger("expeuler")


def _load(args):
    cfg = load_config(args.config)
    overrides = {}
    if args.paper_scale:
        overrides.update(paths=FULL_PATHS, ref_steps=FULL_REF)
    if args.paths is not None:
        overrides["paths"] = args.paths
    overrides.update(seed=args.seed, output_dir=args.output_dir)
    return cfg.with_overrides(**overrides)


def cmd_converge(cfg):
    report = run_convergence(cfg)
    paths = emit_report(report, cfg.output_dir)
    for s in report.slopes:
        print(f"H={s.H:g}  slope={s.slope:.4f}")
    print("wrote " + ", ".join(paths))


def cmd_simulate(cfg):
    problem = build_problem(cfg)
    grid = problem.uniform_grid(cfg.ref_steps)
    block = FineNoiseSource(cfg.with_overrides(), problem, grid).block(0, 1)
    traj = integrate(problem, grid, block)
    os.makedirs(cfg.output_dir, exist_ok=True)
    out = os.path.join(cfg.output_dir, "trajectory.csv")
    traj.to_csv(out)
    print(f"wrote {out}")


def cmd_stability(cfg):
    problem = build_problem(cfg)
    K = cfg.lipschitz if cfg.lipschitz is not None else problem.constants.K
    res = stability.assess(problem.A, K)
    os.makedirs(cfg.output_dir, exist_ok=True)
    out = os.path.join(cfg.output_dir, "stability.csv")
    with open(out, "w", newline="") as fh:
        fh.write(stability.CSV_HEADER + "\n" + res.csv_row() + "\n")
    verdict = "holds" if res.condition_holds else "fails"
    print(f"K|A||A^-1| = {res.lhs:.6g}, -mu[A] = {res.rhs:.6g}: condition {verdict}")
    if res.h_star is not None:
        print(f"h* = {res.h_star:.17g}")
    print(f"wrote {out}")


def cmd_covariance(cfg):
    problem = build_problem(cfg)
    grid = problem.uniform_grid(cfg.coarse_steps[0])
    os.makedirs(cfg.output_dir, exist_ok=True)
    lines = [f"H = {problem.hurst!r}", f"N = {grid.N}", f"n = {problem.n}",
             f"quad_order = {cfg.quad_order}"]
    for i, b in enumerate(problem.noise_coeffs):
        asm = nz.assemble_covariance(problem.A, b, grid, problem.hurst,
                                     order=cfg.quad_order, cap=cfg.covariance_cap)
        np.savetxt(os.path.join(cfg.output_dir, f"covariance_{i}.csv"), asm.matrix,
                   fmt="%.17g", delimiter=",")
        recon = float(np.max(np.abs(asm.factor @ asm.factor.T - asm.matrix)))
        lines.append(f"[{i}] jitter = {asm.jitter!r} quadrature_change = {asm.quadrature_change!r} "
                     f"min_eig = {float(np.linalg.eigvalsh(asm.matrix)[0])!r} "
                     f"reconstruction = {recon!r}")
    with open(os.path.join(cfg.output_dir, "diagnostics.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    L = matfun.smallest_semigroup_constant(problem.A, np.geomspace(1e-6, 1, 61))
    print(f"wrote {problem.m} covariance matrices to {cfg.output_dir}; semigroup constant L = {L:.6g}")


COMMANDS = {"converge": cmd_converge, "simulate": cmd_simulate,
            "stability": cmd_stability, "covariance": cmd_covariance}


def build_parser():
    ap = argparse.ArgumentParser(prog="expeuler", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("config")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--paths", type=int)
    ap.add_argument("--paper-scale", action="store_true",
                    help="1000 paths and a 2048-step reference")
    ap.add_argument("--output-dir")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
    except (ConfigError, InvalidInputError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        COMMANDS[args.command](cfg)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    return 0
