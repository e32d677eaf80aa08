"""Gaussian noise for additive fractional Brownian forcing, H in (1/2, 1).

Two constructions of the convolution increments

    I_{i,k} = int_{t_k}^{t_{k+1}} e^{A(t_{k+1}-s)} b_i(s) dB^H_i(s)

are provided:

* exact: assemble the joint covariance of all I_{i,k} by quadrature against
  the kernel H(2H-1)|u-v|^{2H-2} and draw through its Cholesky factor;
* Riemann oracle: draw exact fBm increments on a fine grid and form
  left-point Riemann-Stieltjes sums.

Fine-grid increments of either kind are mapped onto nested coarse grids with
:func:`aggregate_to_coarse`, which is exact by the semigroup property.
"""
import functools
import hashlib
import struct
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.fft
from scipy.special import roots_jacobi, roots_legendre

from . import matfun, rng
from .errors import (CovarianceSizeError, GridMismatchError, InvalidInputError,
                     NotPSDError, QuadratureAccuracyWarning, SingularKernelError)

DEFAULT_ORDER = 16
DEFAULT_CAP = 4096
QUAD_RTOL = 1e-8
REFINE_EXTRA = 8
JITTER_START = 1e-14
JITTER_CAP = 1e-8

EXACT_CHOLESKY = "exact-cholesky"
RIEMANN_ORACLE = "riemann-oracle"
AGGREGATED = "aggregated"
_TAG_CODES = {EXACT_CHOLESKY: 0, RIEMANN_ORACLE: 1, AGGREGATED: 2}

MAGIC = b"FBMN"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIIIdQB")


def check_hurst(H):
    H = float(H)
    if not 0.5 < H < 1:
        raise InvalidInputError(f"Hurst parameter must lie in (1/2, 1), got {H}")
    return H


@dataclass(frozen=True, eq=False)
class TimeGrid:
    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise InvalidInputError("a time grid needs at least two points")
        if not np.all(np.isfinite(pts)) or np.any(np.diff(pts) <= 0):
            raise InvalidInputError("grid points must be finite and strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, t0, T, N):
        if int(N) < 1:
            raise InvalidInputError(f"need at least one step, got N={N}")
        return cls(np.linspace(t0, T, int(N) + 1))

    @property
    def N(self):
        return self.points.size - 1

    @property
    def steps(self):
        return np.diff(self.points)

    @property
    def h_max(self):
        return float(self.steps.max())

    @property
    def h_min(self):
        return float(self.steps.min())

    @property
    def t0(self):
        return float(self.points[0])

    @property
    def T(self):
        return float(self.points[-1])

    def is_uniform(self):
        h = self.steps
        return bool(np.all(np.abs(h - h[0]) <= 1e-12 * h[0]))

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.points, other.points)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class NoiseBlock:
    """Samples of I_{i,k}, indexed (path, noise index, step, component)."""
    grid: TimeGrid
    samples: np.ndarray
    generator_tag: str
    seed: int
    hurst: float
    first_path: int = 0
    source_checksum: Optional[str] = None
    _checksum: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        s = np.ascontiguousarray(self.samples, dtype=float)
        if s.ndim != 4 or s.shape[2] != self.grid.N:
            raise InvalidInputError(
                f"samples of shape {s.shape} do not match a grid with {self.grid.N} steps")
        if self.generator_tag not in _TAG_CODES:
            raise InvalidInputError(f"unknown generator tag {self.generator_tag!r}")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def paths(self):
        return self.samples.shape[0]

    @property
    def m(self):
        return self.samples.shape[1]

    @property
    def n(self):
        return self.samples.shape[3]

    def summed(self):
        """Per-step forcing sum_i I_{i,k}, shape (paths, N, n)."""
        return self.samples.sum(axis=1)

    def checksum(self):
        if not self._checksum:
            self._checksum.append(hashlib.sha256(self.samples).hexdigest())
        return self._checksum[0]


# --- kernel and quadrature rules -------------------------------------------

def kernel_phi(u, v, H):
    """H(2H-1)|u-v|^{2H-2}."""
    H = check_hurst(H)
    if u == v:
        raise SingularKernelError("kernel is singular on the diagonal u == v")
    return H * (2 * H - 1) * abs(u - v) ** (2 * H - 2)


@functools.lru_cache(maxsize=64)
def _legendre01(order):
    x, w = roots_legendre(order)
    return (x + 1) / 2, w / 2


@functools.lru_cache(maxsize=64)
def _jacobi01(order, beta):
    """Nodes/weights on [0, 1] for the weight x**beta."""
    x, w = roots_jacobi(order, 0.0, beta)
    return (x + 1) / 2, w * 0.5 ** (beta + 1)


def _eval_b(b, times, n=None):
    times = np.asarray(times, dtype=float)
    if callable(b):
        vals = np.array([np.asarray(b(t), dtype=float).reshape(-1) for t in times])
    else:
        vals = np.broadcast_to(np.asarray(b, dtype=float).reshape(1, -1),
                               (times.size, np.asarray(b).size)).copy()
    if n is not None and vals.shape[1] != n:
        raise InvalidInputError(f"noise coefficient has dimension {vals.shape[1]}, expected {n}")
    return vals


def _weighted_vectors(A, b, right, times):
    """Rows e^{A(right - u)} b(u) for u in ``times``."""
    return matfun.propagate(A, right - times, _eval_b(b, times, A.shape[0]))


def _diag_block(A, b, a, c, H, order):
    h = c - a
    wj, Wj = _jacobi01(order, 2 * H - 2)
    w = h * wj
    W = Wj * h ** (2 * H - 1)
    s, om = _legendre01(order)
    v = a + np.outer(h - w, s)
    u = v + w[:, None]
    weight = (W * (h - w))[:, None] * om[None, :]
    gu = _weighted_vectors(A, b, c, u.ravel())
    gv = _weighted_vectors(A, b, c, v.ravel())
    S = (gu * weight.ravel()[:, None]).T @ gv
    return H * (2 * H - 1) * (S + S.T)


def _adjacent_block(A, b, a, c, d, H, order):
    """Covariance of the increment over [a, c] with the one over [c, d]."""
    h1, h2 = c - a, d - c
    xi, Wx = _jacobi01(order, 2 * H - 1)
    w, om = _legendre01(order)
    r = np.outer(xi, np.ones_like(w))
    q = np.outer(xi, w)
    weight = np.outer(Wx, om)
    total = np.zeros((A.shape[0], A.shape[0]))
    # two triangles: (xi >= eta, eta = xi*w) and (eta > xi, xi = eta*w)
    for xs, ys, kern in ((r, q, (h1 + h2 * w) ** (2 * H - 2)),
                         (q, r, (h1 * w + h2) ** (2 * H - 2))):
        u = c - h1 * xs.ravel()
        v = c + h2 * ys.ravel()
        wt = (weight * kern[None, :]).ravel()
        gu = _weighted_vectors(A, b, c, u)
        gv = _weighted_vectors(A, b, d, v)
        total += (gu * wt[:, None]).T @ gv
    return H * (2 * H - 1) * h1 * h2 * total


def _far_block(A, b, ik, il, H, order):
    (a, c), (e, d) = ik, il
    x, om = _legendre01(order)
    u = a + (c - a) * x
    v = e + (d - e) * x
    gu = _weighted_vectors(A, b, c, u) * (om * (c - a))[:, None]
    gv = _weighted_vectors(A, b, d, v) * (om * (d - e))[:, None]
    K = np.abs(u[:, None] - v[None, :]) ** (2 * H - 2)
    return H * (2 * H - 1) * gu.T @ K @ gv


def _block(A, b, pts, k, l, H, order):
    if k > l:
        return _block(A, b, pts, l, k, H, order).T
    if k == l:
        return _diag_block(A, b, pts[k], pts[k + 1], H, order)
    if l == k + 1:
        return _adjacent_block(A, b, pts[k], pts[k + 1], pts[k + 2], H, order)
    return _far_block(A, b, (pts[k], pts[k + 1]), (pts[l], pts[l + 1]), H, order)


def _refinement_change(A, b, pts, k, l, H, order):
    base = _block(A, b, pts, k, l, H, order)
    fine = _block(A, b, pts, k, l, H, order + REFINE_EXTRA)
    scale = np.linalg.norm(fine)
    change = np.linalg.norm(fine - base) / scale if scale > 0 else 0.0
    return base, fine, change


def conv_cov_block(A, b, grid, k, l, H, order=DEFAULT_ORDER, check=True):
    """E[I_k I_l^T] for one noise coefficient ``b`` (callable or constant vector).

    Same-interval blocks split the square along the diagonal and integrate the
    lag with a Gauss-Jacobi rule for weight w^{2H-2}; neighbouring intervals
    use a Duffy split around the shared corner; everything else is tensor
    Gauss-Legendre. With ``check`` the block is recomputed at a higher order
    and a :class:`QuadratureAccuracyWarning` is issued if the two differ by
    more than 1e-8 relative.
    """
    M = matfun.as_matrix(A)
    H = check_hurst(H)
    N = grid.N
    if not (0 <= k < N and 0 <= l < N):
        raise InvalidInputError(f"step indices ({k}, {l}) outside 0..{N - 1}")
    pts = grid.points
    if not check:
        return _block(M, b, pts, k, l, H, order)
    base, fine, change = _refinement_change(M, b, pts, k, l, H, order)
    if change > QUAD_RTOL:
        warnings.warn(QuadratureAccuracyWarning(
            f"block ({k},{l}): order {order} vs {order + REFINE_EXTRA} differ by {change:.2e}",
            base, fine), stacklevel=2)
    return base


# --- exact covariance assembly and sampling -----------------------------------

@dataclass(frozen=True, eq=False)
class CovarianceAssembly:
    """Joint covariance of (I_0, ..., I_{N-1}) for one noise coefficient.

    Flat index ``k*n + j`` addresses component j of the increment on step k.
    """
    grid: TimeGrid
    hurst: float
    n: int
    matrix: np.ndarray
    factor: np.ndarray
    jitter: float
    quadrature_change: float = 0.0

    @property
    def N(self):
        return self.grid.N

    def flat_index(self, k, j):
        return k * self.n + j

    def step_component(self, index):
        return divmod(index, self.n)


def _cholesky_with_jitter(matrix):
    size = matrix.shape[0]
    scale = np.trace(matrix) / size
    cap = JITTER_CAP * scale
    jitter = 0.0
    while True:
        try:
            L = np.linalg.cholesky(matrix + jitter * np.eye(size))
            return L, jitter
        except np.linalg.LinAlgError:
            pass
        jitter = JITTER_START * scale if jitter == 0 else jitter * 10
        if jitter > cap * (1 + 1e-12):
            raise NotPSDError(
                "covariance not positive semi-definite within the jitter cap; "
                "quadrature is likely inaccurate")


def assemble_covariance(A, b, grid, H, order=DEFAULT_ORDER, cap=DEFAULT_CAP, check=True):
    M = matfun.as_matrix(A)
    H = check_hurst(H)
    n, N = M.shape[0], grid.N
    if n * N > cap:
        raise CovarianceSizeError(
            f"n*N = {n * N} exceeds the exact-assembly cap {cap}; "
            "use the Riemann oracle (sample_fbm_increments + conv_riemann_oracle)")
    pts = grid.points
    C = np.empty((n * N, n * N))
    x, om = _legendre01(order)
    # far blocks reuse per-interval node values
    G = []
    for k in range(N):
        a, c = pts[k], pts[k + 1]
        u = a + (c - a) * x
        G.append((u, _weighted_vectors(M, b, c, u) * (om * (c - a))[:, None]))
    cH = H * (2 * H - 1)
    for k in range(N):
        for l in range(k, N):
            if l - k <= 1:
                blk = _block(M, b, pts, k, l, H, order)
            else:
                (u, gu), (v, gv) = G[k], G[l]
                blk = cH * gu.T @ (np.abs(u[:, None] - v[None, :]) ** (2 * H - 2)) @ gv
            C[k * n:(k + 1) * n, l * n:(l + 1) * n] = blk
            C[l * n:(l + 1) * n, k * n:(k + 1) * n] = blk.T
    change = 0.0
    if check:
        probes = {(0, 0), (0, min(1, N - 1)), (0, N - 1)}
        for k, l in probes:
            change = max(change, _refinement_change(M, b, pts, k, l, H, order)[2])
        if change > QUAD_RTOL:
            warnings.warn(QuadratureAccuracyWarning(
                f"covariance quadrature relative change {change:.2e} at order {order}",
                None, None), stacklevel=2)
    C = (C + C.T) / 2
    L, jitter = _cholesky_with_jitter(C)
    for arr in (C, L):
        arr.setflags(write=False)
    return CovarianceAssembly(grid=grid, hurst=H, n=n, matrix=C, factor=L,
                              jitter=jitter, quadrature_change=change)


def sample_noise_exact(assemblies, paths, seed, m=None, first_path=0):
    """Exact draws of I_{i,k}.

    ``assemblies`` is one assembly per noise index, or a single assembly
    shared by ``m`` indices. Path p and index i use their own random stream,
    so ``first_path`` lets callers generate path ranges independently.
    """
    if isinstance(assemblies, CovarianceAssembly):
        if m is None:
            raise InvalidInputError("m is required with a single shared assembly")
        assemblies = [assemblies] * m
    assemblies = list(assemblies)
    first = assemblies[0]
    m, n, N = len(assemblies), first.n, first.N
    out = np.empty((paths, m, N, n))
    if paths:
        z = rng.standard_normals(seed, rng.EXACT, range(first_path, first_path + paths), m, n * N)
        for i, asm in enumerate(assemblies):
            if asm.grid != first.grid or asm.n != n:
                raise GridMismatchError("assemblies disagree on grid or dimension")
            out[:, i] = (z[:, i] @ asm.factor.T).reshape(paths, N, n)
    return NoiseBlock(grid=first.grid, samples=out, generator_tag=EXACT_CHOLESKY,
                      seed=int(seed), hurst=first.hurst, first_path=first_path)


# --- fBm increments and the Riemann oracle -----------------------------------

def fbm_increment_covariance(grid, H):
    H = check_hurst(H)
    t = grid.points
    a, b = t[:-1], t[1:]

    def p(x):
        return np.abs(x) ** (2 * H)
    return 0.5 * (p(b[:, None] - a[None, :]) + p(a[:, None] - b[None, :])
                  - p(a[:, None] - a[None, :]) - p(b[:, None] - b[None, :]))


@functools.lru_cache(maxsize=16)
def _unit_fgn_factor(N, H):
    return _fbm_factor(fbm_increment_covariance(TimeGrid(np.arange(N + 1.0)), H))


@functools.lru_cache(maxsize=16)
def _unit_fgn_circulant(N, H):
    """sqrt of the eigenvalues 0..N of the circulant embedding of unit-step fGn.

    The embedding is non-negative definite for H >= 1/2, so the draw is exact.
    """
    k = np.arange(N + 1.0)
    gamma = 0.5 * ((k + 1) ** (2 * H) - 2 * k ** (2 * H) + np.abs(k - 1) ** (2 * H))
    lam = np.fft.rfft(np.concatenate([gamma, gamma[-2:0:-1]])).real
    if lam.min() < -1e-10 * lam.max():
        raise NotPSDError(f"circulant embedding has a negative eigenvalue {lam.min():.3e}")
    return np.sqrt(np.clip(lam, 0.0, None))


def _fgn_from_normals(z, root):
    """Unit-step fGn from 2N standard normals per row (Hermitian spectral draw)."""
    N = root.size - 1
    a = np.empty(z.shape[:-1] + (N + 1,), dtype=complex)
    half = root[1:N] * np.sqrt(0.5)
    a.real[..., 0] = z[..., 0] * root[0]
    a.real[..., N] = z[..., 1] * root[N]
    a.imag[..., 0] = a.imag[..., N] = 0.0
    a.real[..., 1:N] = z[..., 2:N + 1] * half
    a.imag[..., 1:N] = z[..., N + 1:] * half
    x = scipy.fft.irfft(a, n=2 * N, axis=-1, workers=-1)
    return x[..., :N] * np.sqrt(2.0 * N)


def _fbm_factor(cov):
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NotPSDError(f"fBm increment covariance is not positive definite: {exc}") from None


FBM_METHODS = ("auto", "cholesky", "circulant")


def sample_fbm_increments(grid, H, m, paths, seed, first_path=0, method="auto"):
    """Exact fBm increments, shape (paths, m, N).

    Uniform grids use circulant embedding (O(N log N) per path) unless
    ``method="cholesky"``; other grids always use a Cholesky factor.
    """
    H = check_hurst(H)
    if method not in FBM_METHODS:
        raise InvalidInputError(f"unknown fBm method {method!r}")
    ids = range(first_path, first_path + paths)
    N = grid.N
    if grid.is_uniform() and method != "cholesky":
        z = rng.standard_normals(seed, rng.FBM, ids, m, 2 * N)
        return _fgn_from_normals(z, _unit_fgn_circulant(N, H)) * grid.steps[0] ** H
    if method == "circulant":
        raise InvalidInputError("circulant embedding needs a uniform grid")
    if grid.is_uniform():
        # self-similarity: increments on step h are h^H times unit-step ones
        L = _unit_fgn_factor(N, H) * grid.steps[0] ** H
    else:
        L = _fbm_factor(fbm_increment_covariance(grid, H))
    z = rng.standard_normals(seed, rng.FBM, ids, m, N)
    # one 2-D product; a stacked 3-D matmul would not reach BLAS gemm
    return (z.reshape(-1, N) @ L.T).reshape(paths, m, N)


def conv_riemann_oracle(A, b, fine_grid, increments, seed=0, hurst=float("nan"),
                        first_path=0):
    """Left-point sums I_k ~ e^{A h_k} b_i(t_k) dB_{i,k} on every fine step.

    ``b`` is a sequence of m noise coefficients, ``increments`` has shape
    (paths, m, N).
    """
    M = matfun.as_matrix(A)
    n = M.shape[0]
    increments = np.asarray(increments, dtype=float)
    paths, m, N = increments.shape
    if N != fine_grid.N or len(b) != m:
        raise GridMismatchError(
            f"increments of shape {increments.shape} do not match grid ({fine_grid.N} steps) "
            f"and {len(b)} noise coefficients")
    left = fine_grid.points[:-1]
    coeff = np.stack([matfun.propagate(M, fine_grid.steps, _eval_b(bi, left, n)) for bi in b])
    samples = increments[..., None] * coeff[None]
    return NoiseBlock(grid=fine_grid, samples=samples, generator_tag=RIEMANN_ORACLE,
                      seed=int(seed), hurst=hurst, first_path=first_path)


def coarse_indices(fine_grid, coarse_grid):
    """Positions of the coarse points inside the fine grid."""
    fine, coarse = fine_grid.points, coarse_grid.points
    idx = np.searchsorted(fine, coarse)
    idx = np.clip(idx, 0, fine.size - 1)
    lower = np.clip(idx - 1, 0, fine.size - 1)
    pick = np.where(np.abs(fine[lower] - coarse) < np.abs(fine[idx] - coarse), lower, idx)
    tol = 1e-12 * max(1.0, np.max(np.abs(fine)))
    if np.any(np.abs(fine[pick] - coarse) > tol) or pick[0] != 0 or pick[-1] != fine.size - 1:
        raise GridMismatchError("coarse grid is not nested in the fine grid")
    return pick


def aggregate_to_coarse(noise, A, coarse_grid):
    """I^c_k = sum over fine steps l in [t_k, t_{k+1}] of e^{A(t_{k+1}-tau_{l+1})} I^f_l."""
    M = matfun.as_matrix(A)
    idx = coarse_indices(noise.grid, coarse_grid)
    fine = noise.samples
    P, m, Nf, n = fine.shape
    owner = np.repeat(np.arange(coarse_grid.N), np.diff(idx))
    if noise.grid.is_uniform():
        # the propagator depends only on the number of fine steps left in the block
        left = idx[owner + 1] - np.arange(Nf) - 1
        table = np.stack([matfun.expm(M, j * noise.grid.steps[0]) for j in range(left.max() + 1)])
        G = table[left]
    else:
        pts = noise.grid.points
        G = np.stack([matfun.expm(M, tau) for tau in coarse_grid.points[owner + 1] - pts[1:]])
    # one GEMM per coarse step: rows (p, i), columns (fine step, component)
    flat = fine.reshape(P * m, Nf * n)
    GT = np.swapaxes(G, 1, 2).reshape(Nf * n, n)
    out = np.empty((P, m, coarse_grid.N, n))
    for K in range(coarse_grid.N):
        lo, hi = idx[K] * n, idx[K + 1] * n
        out[:, :, K] = (flat[:, lo:hi] @ GT[lo:hi]).reshape(P, m, n)
    source = noise.source_checksum or noise.checksum()
    return NoiseBlock(grid=coarse_grid, samples=out, generator_tag=AGGREGATED,
                      seed=noise.seed, hurst=noise.hurst, first_path=noise.first_path,
                      source_checksum=source)


# --- binary dump ------------------------------------------------------------

def write_noise_block(path, block):
    """Header (magic, version, n, m, N, H, seed, tag) then float64 samples, little-endian."""
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, block.n, block.m, block.grid.N,
                          float(block.hurst), int(block.seed) & 0xFFFFFFFFFFFFFFFF,
                          _TAG_CODES[block.generator_tag])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(block.samples.astype("<f8").tobytes())


def read_noise_block(path, grid):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise InvalidInputError("file too short for a noise block header")
    magic, version, n, m, N, H, seed, code = _HEADER.unpack_from(raw)
    if magic != MAGIC or version != FORMAT_VERSION:
        raise InvalidInputError(f"not a version-{FORMAT_VERSION} noise block file")
    if N != grid.N:
        raise GridMismatchError(f"file holds {N} steps, grid has {grid.N}")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    per_path = m * N * n
    if per_path == 0 or data.size % per_path:
        raise InvalidInputError("payload size is not a whole number of paths")
    tag = {v: k for k, v in _TAG_CODES.items()}[code]
    return NoiseBlock(grid=grid, samples=data.reshape(-1, m, N, n).astype(float),
                      generator_tag=tag, seed=seed, hurst=H)
