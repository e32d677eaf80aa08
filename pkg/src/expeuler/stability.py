"""Pathwise stability of the exponential Euler scheme.

Covers the step-size bound h* below which the scheme has a unique pathwise
attracting stationary solution, and the scalar fractional Ornstein-Uhlenbeck
test equation dX = -alpha X dt + sum_i b_i(t) dB^H_i.
"""
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import matfun
from .errors import InvalidInputError, NoRootError, PreconditionError, TailBoundError
from .noise import TimeGrid, _eval_b, check_hurst, sample_fbm_increments

TAIL_TOL = 1e-8
MAX_BRACKET_STEPS = 200


@dataclass(frozen=True)
class StabilityAssessment:
    condition_holds: bool
    lhs: float
    rhs: float
    h_star: Optional[float] = None
    residual: Optional[float] = None

    def csv_row(self):
        def fmt(x):
            return "" if x is None else format(x, ".17g")
        return ",".join([fmt(self.lhs), fmt(self.rhs), str(self.condition_holds).lower(),
                         fmt(self.h_star), fmt(self.residual)])


CSV_HEADER = "lhs,rhs,condition_holds,h_star,residual"


def check_condition(bundle, K):
    """K |A| |A^{-1}| < -mu[A] together with mu[A] <= 0."""
    if bundle.inv_norm is None:
        raise PreconditionError("the norm bundle needs |A^{-1}|; A must be regular")
    if K < 0:
        raise InvalidInputError("Lipschitz constant must be non-negative")
    lhs = K * bundle.op_norm * bundle.inv_norm
    rhs = -bundle.log_norm
    return StabilityAssessment(condition_holds=bool(lhs < rhs and bundle.log_norm <= 0),
                               lhs=lhs, rhs=rhs)


def threshold_function(bundle, K):
    """g(h) = 1 + h K |A^{-1}||A| e^{h(|A| - mu)} - e^{-h mu}, written cancellation-free."""
    c = K * bundle.inv_norm * bundle.op_norm
    spread = bundle.op_norm - bundle.log_norm
    mu = bundle.log_norm

    def g(h):
        return h * c * math.exp(h * spread) - math.expm1(-h * mu)
    return g


def _positive_side(bundle, K):
    """Sign test g(h) > 0 evaluated in the log domain so large h cannot overflow."""
    c = K * bundle.inv_norm * bundle.op_norm
    spread = bundle.op_norm - bundle.log_norm
    mu = bundle.log_norm

    def positive(h):
        if c == 0:
            return False
        # mu < 0 whenever the condition holds, so expm1(-h mu) > 0
        x = -h * mu
        log_rhs = x + math.log1p(-math.exp(-x)) if x > 1 else math.log(math.expm1(x))
        return math.log(h * c) + h * spread > log_rhs
    return positive


def solve_h_star(bundle, K):
    """Positive root of g; g(0) = 0 is excluded by bracketing away from the origin.

    As K -> 0 the root runs off to infinity; no sign change within 200
    doublings raises :class:`NoRootError`.
    """
    if not check_condition(bundle, K).condition_holds:
        raise PreconditionError("stability condition K|A||A^{-1}| < -mu[A] does not hold")
    g = threshold_function(bundle, K)
    positive = _positive_side(bundle, K)
    lo = hi = 1.0 / (bundle.op_norm - bundle.log_norm)
    if not positive(lo):
        for _ in range(MAX_BRACKET_STEPS):
            hi = 2 * lo
            if positive(hi):
                break
            lo = hi
        else:
            raise NoRootError("no sign change found while doubling the step; h* is unbounded")
    else:
        # the starting point already lies past the root: walk towards 0
        for _ in range(MAX_BRACKET_STEPS):
            lo = hi / 2
            if not positive(lo):
                break
            hi = lo
        else:
            raise NoRootError("g does not dip below zero near the origin")
    while hi - lo > 1e-14 * hi:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if positive(mid):
            hi = mid
        else:
            lo = mid
    return lo if abs(g(lo)) <= abs(g(hi)) else hi


def assess(A, K):
    """Condition check plus h* (when it exists) for the matrix A."""
    bundle = matfun.norm_bundle(A)
    res = check_condition(bundle, K)
    if not res.condition_holds:
        return res
    try:
        h = solve_h_star(bundle, K)
    except NoRootError:
        return res
    return StabilityAssessment(True, res.lhs, res.rhs, h_star=h,
                               residual=threshold_function(bundle, K)(h))


# --- fractional Ornstein-Uhlenbeck ----------------------------------------------

def min_truncation(alpha, tol=TAIL_TOL):
    return math.log(1 / tol) / alpha


def fou_sample(alpha, b, H, t, truncation, fine_steps, paths, seed):
    """Samples of the stationary solution X(t) = e^{-alpha t} sum_i int_{-inf}^t e^{alpha s} b_i(s) dB^H_i(s).

    The integral is cut to the window [t - truncation, t] (requires
    e^{-alpha truncation} <= 1e-8) and evaluated as a left-point
    Riemann-Stieltjes sum over ``fine_steps`` exact fBm increments.
    Returns (samples, tail_bound).
    """
    H = check_hurst(H)
    if alpha <= 0:
        raise InvalidInputError("alpha must be positive")
    tail = math.exp(-alpha * truncation)
    if tail > TAIL_TOL:
        raise TailBoundError(
            f"window {truncation} leaves tail factor {tail:.2e} > {TAIL_TOL}; "
            f"need at least {min_truncation(alpha):.4g}")
    b = list(b) if isinstance(b, (list, tuple)) else [b]
    grid = TimeGrid.uniform(t - truncation, t, fine_steps)
    left = grid.points[:-1]
    weights = np.exp(-alpha * (t - left))
    out = np.zeros(paths)
    chunk = max(1, 2 ** 22 // (fine_steps * len(b)))
    for start in range(0, paths, chunk):
        count = min(chunk, paths - start)
        inc = sample_fbm_increments(grid, H, len(b), count, seed, first_path=start)
        for i, bi in enumerate(b):
            coeff = _eval_b(bi, left, 1)[:, 0] * weights
            out[start:start + count] += inc[:, i] @ coeff
    return out, tail


@dataclass(frozen=True)
class AttractionReport:
    horizons: np.ndarray
    differences: np.ndarray
    expected: np.ndarray
    max_abs_error: float
    decay_rates: np.ndarray


def pullback_attraction_check(alpha, b, H, t0_sequence, t, seed, x0=(1.0, 0.0),
                              steps_per_unit=64):
    """Two solutions of the scalar linear SDE from different initial values, same noise.

    For every start time t0 the pair is integrated with the exponential Euler
    scheme (exact for this equation) on a shared noise realisation; the
    difference must equal e^{-alpha(t-t0)}(x0_1 - x0_2).
    """
    H = check_hurst(H)
    b = list(b) if isinstance(b, (list, tuple)) else [b]
    A = np.array([[-float(alpha)]])
    diffs, horizons = [], []
    for t0 in t0_sequence:
        span = t - t0
        if span <= 0:
            raise InvalidInputError("start times must precede t")
        N = max(1, int(math.ceil(span * steps_per_unit)))
        grid = TimeGrid.uniform(t0, t, N)
        inc = sample_fbm_increments(grid, H, len(b), 1, seed)[0]
        E, _ = matfun.exp_and_phi1(A, grid.steps[0])
        e = E[0, 0]
        left = grid.points[:-1]
        forcing = sum(inc[i] * _eval_b(bi, left, 1)[:, 0] * e for i, bi in enumerate(b))
        X = np.array(x0, dtype=float)
        for k in range(N):
            X = e * X + forcing[k]
        diffs.append(X[0] - X[1])
        horizons.append(span)
    horizons = np.array(horizons)
    diffs = np.array(diffs)
    expected = np.exp(-alpha * horizons) * (x0[0] - x0[1])
    with np.errstate(divide="ignore", invalid="ignore"):
        rates = -np.log(np.abs(diffs)) / horizons
    return AttractionReport(horizons=horizons, differences=diffs, expected=expected,
                            max_abs_error=float(np.max(np.abs(diffs - expected))),
                            decay_rates=rates)
