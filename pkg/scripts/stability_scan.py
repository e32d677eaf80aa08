"""Maximal stable step size h* as a function of the Lipschitz constant K.

Scans K over (0, K_max) for a scalar decay rate and a diagonal 2x2 matrix,
where K_max = -mu[A] / (|A||A^-1|) is the edge of the admissible region,
and checks the condition for the built-in Laplacian.
"""
import numpy as np

from expeuler import matfun, stability as sb
from expeuler.integrator import laplacian_matrix


def scan(A, label):
    b = matfun.norm_bundle(A)
    k_max = -b.log_norm / (b.op_norm * b.inv_norm)
    print(f"{label}: |A|={b.op_norm:g} mu={b.log_norm:g} |A^-1|={b.inv_norm:g} K_max={k_max:.4g}")
    for frac in (0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99):
        K = frac * k_max
        h = sb.solve_h_star(b, K)
        g = sb.threshold_function(b, K)(h)
        print(f"  K={K:9.4g}  h*={h:.10g}  g(h*)={g:+.1e}")


def main():
    scan(np.array([[-1.0]]), "A = -1")
    scan(np.diag([-1.0, -4.0]), "A = diag(-1, -4)")
    E = laplacian_matrix(10)
    res = sb.assess(E, 1.0)
    print(f"Laplacian n=10, K=1: lhs={res.lhs:.4f} rhs={res.rhs:.4f} holds={res.condition_holds}")


if __name__ == "__main__":
    main()
