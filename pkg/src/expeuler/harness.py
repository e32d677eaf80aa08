"""Monte Carlo strong-convergence study and report writing.

For every path one fine-grid noise realisation drives the reference
solution; each coarse grid receives the exact aggregation of that same
realisation, so coarse and reference solutions share their randomness.
"""
import hashlib
import logging
import os
import platform
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
import scipy

from . import __version__, noise as nz
from .config import ExperimentConfig
from .errors import DegenerateFitError, InvalidInputError, RunFailure
from .integrator import SemiLinearProblem, StepCache, builtin_laplacian_sine, integrate_batch

log = logging.getLogger(__name__)

MAX_ABORT_FRACTION = 1e-3
MIN_FIT_POINTS = 3
# errors at or below this are round-off; a slope through them means nothing
EXACT_FLOOR = 1e-12


@dataclass(frozen=True)
class ErrorRow:
    H: float
    h: float
    rmse: float
    stderr: float
    paths: int


@dataclass(frozen=True)
class SlopeRow:
    H: float
    slope: float
    residual: float


@dataclass
class ConvergenceReport:
    rows: List[ErrorRow]
    slopes: List[SlopeRow]
    config: ExperimentConfig
    noise_digests: Dict[float, str] = field(default_factory=dict)
    aborted: Dict[float, int] = field(default_factory=dict)

    @property
    def provenance(self):
        return {"config_sha256": self.config.digest(), "seed": self.config.seed}

    def rmse(self, H, N):
        h = self.config.t_end / N
        for r in self.rows:
            if r.H == H and abs(r.h - h) <= 1e-15 * h:
                return r.rmse
        raise KeyError((H, N))

    def slope(self, H):
        for s in self.slopes:
            if s.H == H:
                return s.slope
        raise KeyError(H)


def fit_slope(points, return_residual=False):
    """Least-squares slope of log(rmse) against log(h)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise DegenerateFitError("need at least two points")
    if np.any(pts <= 0):
        raise InvalidInputError("step sizes and errors must be positive")
    if np.unique(pts[:, 0]).size != pts.shape[0]:
        raise DegenerateFitError("duplicate step sizes")
    x, y = np.log(pts[:, 0]), np.log(pts[:, 1])
    xc = x - x.mean()
    slope = float(xc @ (y - y.mean()) / (xc @ xc))
    if not return_residual:
        return slope
    fitted = y.mean() + slope * xc
    return slope, float(np.sum((y - fitted) ** 2))


def build_problem(cfg, H=None):
    H = cfg.hurst_values[0] if H is None else H
    problem = builtin_laplacian_sine(cfg.dimension, H, cfg.t_end)
    if cfg.problem == "laplacian_linear":
        problem = SemiLinearProblem(problem.A, lambda t, x: np.zeros_like(x), problem.noise_coeffs,
                                    problem.u0, problem.t0, problem.T, H, problem.constants,
                                    vectorized=True, name="laplacian_linear")
    return problem


class FineNoiseSource:
    """Fine-grid noise for path ranges, per the configured noise mode."""

    def __init__(self, cfg, problem, grid):
        self.cfg, self.problem, self.grid = cfg, problem, grid
        self.mode = cfg.resolved_noise_mode
        self.assemblies = None
        if self.mode == nz.EXACT_CHOLESKY:
            self.assemblies = [nz.assemble_covariance(problem.A, b, grid, problem.hurst,
                                                      order=cfg.quad_order, cap=cfg.covariance_cap)
                               for b in problem.noise_coeffs]

    def block(self, first_path, count):
        cfg, p = self.cfg, self.problem
        if self.mode == nz.EXACT_CHOLESKY:
            blk = nz.sample_noise_exact(self.assemblies, count, cfg.seed, first_path=first_path)
        else:
            inc = nz.sample_fbm_increments(self.grid, p.hurst, p.m, count, cfg.seed,
                                           first_path=first_path)
            blk = nz.conv_riemann_oracle(p.A, p.noise_coeffs, self.grid, inc, seed=cfg.seed,
                                         hurst=p.hurst, first_path=first_path)
        if cfg.noise_scale != 1.0:
            blk = nz.NoiseBlock(grid=blk.grid, samples=blk.samples * cfg.noise_scale,
                                generator_tag=blk.generator_tag, seed=blk.seed, hurst=blk.hurst,
                                first_path=blk.first_path)
        return blk


def _path_errors(coarse_states, ref_states, stride, mode):
    with np.errstate(invalid="ignore"):  # diverged paths are masked out later
        diff = np.linalg.norm(coarse_states - ref_states[:, ::stride], axis=2)
    if mode == "endpoint":
        return diff[:, -1]
    return diff.max(axis=1)


def _study_one_hurst(cfg, H):
    problem = build_problem(cfg, H)
    fine = problem.uniform_grid(cfg.ref_steps)
    coarse = [problem.uniform_grid(N) for N in cfg.coarse_steps]
    source = FineNoiseSource(cfg, problem, fine)
    fine_cache = StepCache(problem.A)
    caches = [StepCache(problem.A) for _ in coarse]
    sq_err = [np.empty(cfg.paths) for _ in coarse]
    valid = np.ones(cfg.paths, dtype=bool)
    digest = hashlib.sha256()
    for start in range(0, cfg.paths, cfg.chunk_paths):
        count = min(cfg.chunk_paths, cfg.paths - start)
        blk = source.block(start, count)
        digest.update(blk.checksum().encode())
        ref, ok = integrate_batch(problem, fine, blk.summed(), cache=fine_cache)
        for c, (grid, cache) in enumerate(zip(coarse, caches)):
            cblk = nz.aggregate_to_coarse(blk, problem.A, grid)
            if cblk.source_checksum != blk.checksum():
                raise RunFailure("coarse noise is not derived from the reference noise")
            states, cok = integrate_batch(problem, grid, cblk.summed(), cache=cache)
            ok &= cok
            err = _path_errors(states, ref, cfg.ref_steps // grid.N, cfg.error_mode)
            sq_err[c][start:start + count] = err ** 2
        valid[start:start + count] = ok
    aborted = int((~valid).sum())
    if aborted > MAX_ABORT_FRACTION * cfg.paths:
        raise RunFailure(f"H={H}: {aborted} of {cfg.paths} paths produced non-finite states")
    if aborted:
        log.warning("H=%s: excluded %d diverged paths", H, aborted)
    rows = []
    P = int(valid.sum())
    for grid, se in zip(coarse, sq_err):
        se = se[valid]
        mse = float(se.mean())
        rmse = float(np.sqrt(mse))
        sd = float(se.std(ddof=1)) if P > 1 else 0.0
        stderr = sd / np.sqrt(P) / (2 * rmse) if rmse > 0 else 0.0
        rows.append(ErrorRow(H=H, h=cfg.t_end / grid.N, rmse=rmse, stderr=float(stderr), paths=P))
    return rows, digest.hexdigest(), aborted


def run_convergence(cfg):
    rows, slopes, digests, aborted = [], [], {}, {}
    for H in cfg.hurst_values:
        log.info("H=%s: %d paths, reference N=%d", H, cfg.paths, cfg.ref_steps)
        hrows, digests[H], aborted[H] = _study_one_hurst(cfg, H)
        rows.extend(hrows)
        pts = [(r.h, r.rmse) for r in hrows]
        if len(pts) >= MIN_FIT_POINTS and all(r > 0 for _, r in pts) \
                and max(r for _, r in pts) > EXACT_FLOOR:
            s, res = fit_slope(pts, return_residual=True)
        else:
            s, res = float("nan"), float("nan")
        slopes.append(SlopeRow(H=H, slope=s, residual=res))
    return ConvergenceReport(rows=rows, slopes=slopes, config=cfg,
                             noise_digests=digests, aborted=aborted)


def _g(x):
    return format(float(x), ".17g")


def emit_report(report, output_dir):
    """Write errors.csv, slopes.csv and manifest.txt; returns the three paths."""
    os.makedirs(output_dir, exist_ok=True)
    errors_path = os.path.join(output_dir, "errors.csv")
    slopes_path = os.path.join(output_dir, "slopes.csv")
    manifest_path = os.path.join(output_dir, "manifest.txt")
    with open(errors_path, "w", newline="") as fh:
        fh.write("H,h,rmse,stderr,paths\n")
        for r in report.rows:
            fh.write(f"{_g(r.H)},{_g(r.h)},{_g(r.rmse)},{_g(r.stderr)},{r.paths}\n")
    with open(slopes_path, "w", newline="") as fh:
        fh.write("H,slope,residual\n")
        for s in report.slopes:
            fh.write(f"{_g(s.H)},{_g(s.slope)},{_g(s.residual)}\n")
    with open(manifest_path, "w", newline="") as fh:
        fh.write(report.config.canonical_text())
        fh.write(f"config_sha256 = {report.config.digest()}\n")
        for H in sorted(report.noise_digests):
            fh.write(f"noise_sha256[{_g(H)}] = {report.noise_digests[H]}\n")
            fh.write(f"aborted_paths[{_g(H)}] = {report.aborted.get(H, 0)}\n")
        fh.write(f"expeuler = {__version__}\n")
        fh.write(f"python = {platform.python_version()}\n")
        fh.write(f"numpy = {np.__version__}\n")
        fh.write(f"scipy = {scipy.__version__}\n")
    return errors_path, slopes_path, manifest_path
