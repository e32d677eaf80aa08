"""Exponential Euler time stepping for dU = (A U + f(t, U)) dt + sum_i b_i(t) dB^H_i.

One step reads

    V_{k+1} = e^{A h_k} V_k + A^{-1}(e^{A h_k} - I) f(t_k, V_k) + sum_i I_{i,k}

with the stochastic increments I_{i,k} supplied by a :class:`NoiseBlock`.
"""
import csv
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import matfun
from .errors import DivergenceError, InvalidInputError, SingularMatrixError
from .noise import NoiseBlock, TimeGrid, _eval_b, check_hurst


@dataclass(frozen=True)
class DeclaredConstants:
    K: Optional[float] = None   # Lipschitz constant of f
    D: Optional[float] = None   # linear growth of f
    M: Optional[float] = None   # bound on |b_i(t)|^2
    L: Optional[float] = None   # semigroup constant


@dataclass(eq=False)
class SemiLinearProblem:
    A: np.ndarray
    f: Callable
    noise_coeffs: Sequence
    u0: np.ndarray
    t0: float
    T: float
    hurst: float
    constants: DeclaredConstants = field(default_factory=DeclaredConstants)
    # f accepts stacked states of shape (..., n) and acts row-wise
    vectorized: bool = False
    name: str = "custom"

    def __post_init__(self):
        self.A = matfun.as_matrix(self.A)
        n = self.A.shape[0]
        self.u0 = np.asarray(self.u0, dtype=float).reshape(-1)
        if self.u0.size != n:
            raise InvalidInputError(f"u0 has {self.u0.size} entries, A is {n}x{n}")
        if not self.t0 < self.T:
            raise InvalidInputError("need t0 < T")
        self.hurst = check_hurst(self.hurst)
        self.noise_coeffs = list(self.noise_coeffs)
        s = np.linalg.svd(self.A, compute_uv=False)
        if s[-1] <= n * np.finfo(float).eps * s[0]:
            raise SingularMatrixError("A must be regular")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return len(self.noise_coeffs)

    def drift(self, t, X):
        """f applied to one state (n,) or a stack of states (paths, n)."""
        if self.vectorized or X.ndim == 1:
            return np.asarray(self.f(t, X), dtype=float)
        return np.array([self.f(t, x) for x in X], dtype=float)

    def with_hurst(self, H):
        return SemiLinearProblem(self.A, self.f, self.noise_coeffs, self.u0, self.t0, self.T,
                                 H, self.constants, self.vectorized, self.name)

    def uniform_grid(self, N):
        return TimeGrid.uniform(self.t0, self.T, N)

    def check_assumptions(self, samples=64, seed=0):
        """Spot-check the declared Lipschitz (K) and noise (M) bounds.

        Returns a dict of the worst observed ratios; a ratio above 1 means
        the declared constant is violated at some sampled point.
        """
        gen = np.random.default_rng(seed)
        report = {}
        if self.constants.K is not None:
            worst = 0.0
            for _ in range(samples):
                t, s = gen.uniform(self.t0, self.T, 2)
                x, y = gen.standard_normal((2, self.n)) * 3
                lhs = np.linalg.norm(self.drift(t, x) - self.drift(s, y))
                rhs = self.constants.K * (abs(t - s) + np.linalg.norm(x - y))
                worst = max(worst, lhs / rhs)
            report["lipschitz_ratio"] = worst
        if self.constants.M is not None and self.noise_coeffs:
            ts = np.linspace(self.t0, self.T, samples)
            worst = max(float(np.max(np.sum(_eval_b(b, ts, self.n) ** 2, axis=1)))
                        for b in self.noise_coeffs)
            report["noise_bound_ratio"] = worst / self.constants.M
        return report


@dataclass(frozen=True, eq=False)
class Trajectory:
    grid: TimeGrid
    states: np.ndarray
    path_id: int = 0
    seed: int = 0

    def at(self, grid):
        """States at the points of a coarser nested grid."""
        from .noise import coarse_indices
        return self.states[coarse_indices(self.grid, grid)]

    def to_csv(self, path):
        n = self.states.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"x{j + 1}" for j in range(n)])
            for t, x in zip(self.grid.points, self.states):
                w.writerow([format(t, ".17g")] + [format(v, ".17g") for v in x])


class StepCache:
    """(e^{A h}, A^{-1}(e^{A h} - I)) per distinct step size, exact-equality keyed."""

    def __init__(self, A):
        self.A = matfun.as_matrix(A)
        self._store = {}

    def __call__(self, h):
        h = float(h)
        pair = self._store.get(h)
        if pair is None:
            pair = self._store[h] = matfun.exp_and_phi1(self.A, h)
        return pair

    def __len__(self):
        return len(self._store)


def exp_euler_step(problem, t_k, h_k, v_k, noise_k, cache=None, step_index=0):
    if not h_k > 0:
        raise InvalidInputError(f"step size must be positive, got {h_k}")
    E, P = (cache if cache is not None else StepCache(problem.A))(h_k)
    v_k = np.asarray(v_k, dtype=float)
    out = v_k @ E.T + problem.drift(t_k, v_k) @ P.T + noise_k
    if not np.all(np.isfinite(out)):
        raise DivergenceError(step_index)
    return out


def integrate_batch(problem, grid, forcing, u0=None, cache=None):
    """Integrate many paths at once.

    ``forcing`` has shape (paths, N, n) and holds sum_i I_{i,k}; returns states
    of shape (paths, N+1, n) and a boolean mask of paths that stayed finite.
    """
    forcing = np.asarray(forcing, dtype=float)
    paths, N, n = forcing.shape
    if N != grid.N or n != problem.n:
        raise InvalidInputError(f"forcing shape {forcing.shape} does not match grid/problem")
    cache = cache if cache is not None else StepCache(problem.A)
    states = np.empty((paths, N + 1, n))
    states[:, 0] = problem.u0 if u0 is None else u0
    pts, steps = grid.points, grid.steps
    V = states[:, 0]
    for k in range(N):
        E, P = cache(steps[k])
        V = V @ E.T + problem.drift(pts[k], V) @ P.T + forcing[:, k]
        states[:, k + 1] = V
    ok = np.all(np.isfinite(states), axis=(1, 2))
    return states, ok


def integrate(problem, grid, noise, path=0, cache=None):
    """Trajectory of one path of ``noise`` (path index relative to the block)."""
    if noise.grid != grid:
        raise InvalidInputError("noise block lives on a different grid")
    if noise.n != problem.n or noise.m != problem.m:
        raise InvalidInputError(
            f"noise block has (m, n) = ({noise.m}, {noise.n}), problem has ({problem.m}, {problem.n})")
    cache = cache if cache is not None else StepCache(problem.A)
    forcing = noise.samples[path].sum(axis=0)
    states = np.empty((grid.N + 1, problem.n))
    states[0] = problem.u0
    pts, steps = grid.points, grid.steps
    for k in range(grid.N):
        states[k + 1] = exp_euler_step(problem, pts[k], steps[k], states[k], forcing[k],
                                       cache=cache, step_index=k)
    return Trajectory(grid=grid, states=states, path_id=noise.first_path + path, seed=noise.seed)


def integrate_deterministic(problem, grid, cache=None):
    """Zero-noise trajectory."""
    states, ok = integrate_batch(problem, grid, np.zeros((1, grid.N, problem.n)), cache=cache)
    if not ok[0]:
        bad = int(np.argmax(~np.all(np.isfinite(states[0]), axis=1)))
        raise DivergenceError(bad - 1)
    return Trajectory(grid=grid, states=states[0])


def reference_solution(problem, fine_grid, fine_noise, path=0, cache=None):
    """Fine-grid solution standing in for the exact mild solution.

    Compare against a coarse run with ``trajectory.at(coarse_grid)``.
    """
    return integrate(problem, fine_grid, fine_noise, path=path, cache=cache)


def laplacian_matrix(n):
    """(n+1)^2 * tridiag(1, -2, 1)."""
    main = np.full(n, -2.0)
    off = np.ones(n - 1)
    return (n + 1) ** 2 * (np.diag(main) + np.diag(off, 1) + np.diag(off, -1))


def _sine_drift(t, x):
    return np.sin(x)


def builtin_laplacian_sine(n=10, H=0.75, T=0.1):
    """dU = (E U + sin U) dt + dB^H on [0, T], B^H an n-dimensional fBm.

    The initial state is the normalised lowest eigenvector of E.
    """
    if int(n) < 1:
        raise InvalidInputError("dimension must be at least 1")
    n = int(n)
    k = np.arange(1, n + 1)
    u0 = np.sqrt(2 / (n + 1)) * np.sin(k * np.pi / (n + 1))
    basis = [np.eye(n)[i] for i in range(n)]
    return SemiLinearProblem(A=laplacian_matrix(n), f=_sine_drift, noise_coeffs=basis, u0=u0,
                             t0=0.0, T=T, hurst=H, constants=DeclaredConstants(K=1.0, D=1.0, M=1.0),
                             vectorized=True, name="laplacian_sine")
