"""Dense matrix functions used by the exponential Euler scheme.

Single matrix functions go through scaling-and-squaring
(``scipy.linalg.expm``) for every input. An eigendecomposition would be
faster for symmetric A, but its eigenvalue error of order eps*|A| lands on
the slow modes and costs several digits once |A| ~ 1e6. Only the batched
:func:`propagate`, used inside quadrature, takes the spectral route. The phi-function
``h*phi1(A h) = A^{-1}(e^{A h} - I)`` is never formed through an explicit
inverse, so singular and badly conditioned ``A`` are fine.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import InvalidInputError, SingularMatrixError

SYMMETRY_RTOL = 1e-12
PHI1_TAYLOR_CUTOFF = 1e-5


@dataclass(frozen=True)
class MatrixNormBundle:
    op_norm: float
    log_norm: float
    inv_norm: Optional[float] = None


def as_matrix(A):
    """Validate ``A`` and return it as a float (n, n) array."""
    M = np.atleast_2d(np.asarray(A, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] == 0:
        raise InvalidInputError(f"expected a non-empty square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInputError("matrix has non-finite entries")
    return M


def is_symmetric(M):
    scale = np.max(np.abs(M))
    return bool(np.max(np.abs(M - M.T)) <= SYMMETRY_RTOL * scale)


class _Spectral:
    __slots__ = ("values", "vectors")

    def __init__(self, M):
        self.values, self.vectors = np.linalg.eigh((M + M.T) / 2)

    def apply(self, g):
        Q = self.vectors
        return (Q * g) @ Q.T


def phi1_scalar(z):
    """(e^z - 1)/z, elementwise, with the removable singularity filled in."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < PHI1_TAYLOR_CUTOFF
    zs = z[small]
    out[small] = 1 + zs / 2 * (1 + zs / 3 * (1 + zs / 4))
    zl = z[~small]
    out[~small] = np.expm1(zl) / zl
    return out if out.ndim else float(out)


def expm(A, t=1.0):
    """e^{A t}."""
    M = as_matrix(A)
    if not np.isfinite(t):
        raise InvalidInputError("t must be finite")
    return scipy.linalg.expm(M * t)


def phi1(A, h):
    """A^{-1}(e^{A h} - I), computed as h*phi1(A h).

    For singular ``A`` this is the continuous extension, e.g. ``h*I`` at A = 0.
    """
    M = as_matrix(A)
    if not (np.isfinite(h) and h > 0):
        raise InvalidInputError(f"step must be positive and finite, got {h}")
    n = M.shape[0]
    # top-right block of exp([[A h, I], [0, 0]]) is phi1(A h)
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = M * h
    aug[:n, n:] = np.eye(n)
    return h * scipy.linalg.expm(aug)[:n, n:]


def exp_and_phi1(A, h):
    """(e^{A h}, h*phi1(A h)) from one factorization."""
    M = as_matrix(A)
    if not (np.isfinite(h) and h > 0):
        raise InvalidInputError(f"step must be positive and finite, got {h}")
    n = M.shape[0]
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = M * h
    aug[:n, n:] = np.eye(n)
    E = scipy.linalg.expm(aug)
    return E[:n, :n], h * E[:n, n:]


def propagate(A, taus, vectors):
    """Rows ``e^{A tau_j} v_j`` for paired ``taus`` (q,) and ``vectors`` (q, n)."""
    M = as_matrix(A)
    taus = np.asarray(taus, dtype=float)
    vectors = np.asarray(vectors, dtype=float)
    if is_symmetric(M):
        sp = _Spectral(M)
        coeff = vectors @ sp.vectors
        return (coeff * np.exp(np.outer(taus, sp.values))) @ sp.vectors.T
    out = np.empty_like(vectors)
    cache = {}
    for j, (tau, v) in enumerate(zip(taus, vectors)):
        E = cache.get(tau)
        if E is None:
            E = cache[tau] = scipy.linalg.expm(M * tau)
        out[j] = E @ v
    return out


def log_norm(A):
    """Largest eigenvalue of the symmetric part of A."""
    M = as_matrix(A)
    return float(np.linalg.eigvalsh((M + M.T) / 2)[-1])


def op_norm(A):
    return float(np.linalg.norm(as_matrix(A), 2))


def norm_bundle(A, inverse=True):
    M = as_matrix(A)
    s = np.linalg.svd(M, compute_uv=False)
    inv = None
    if inverse:
        if s[-1] <= M.shape[0] * np.finfo(float).eps * s[0]:
            raise SingularMatrixError(f"matrix is numerically singular (sigma_min={s[-1]:.3e})")
        inv = float(1 / s[-1])
    return MatrixNormBundle(op_norm=float(s[0]), log_norm=log_norm(M), inv_norm=inv)


def smallest_semigroup_constant(A, taus):
    """max over ``taus`` of tau*|A e^{A tau}|, the smallest L with |A e^{A tau}| <= L/tau."""
    M = as_matrix(A)
    return max(float(tau * op_norm(M @ expm(M, tau))) for tau in taus)
