"""Mean-square Hoelder exponent of reference trajectories.

For the built-in problem, E|U(t+d) - U(t)|^2 should scale like d^{2H}
(the additive fBm forcing dominates small lags). Prints the fitted exponent
per H next to 2H.
"""
import argparse

import numpy as np

from expeuler import integrator as it, noise as nz


def exponent(H, N, paths, seed):
    p = it.builtin_laplacian_sine(10, H)
    g = p.uniform_grid(N)
    inc = nz.sample_fbm_increments(g, H, p.m, paths, seed)
    states, ok = it.integrate_batch(p, g, nz.conv_riemann_oracle(p.A, p.noise_coeffs, g, inc).summed())
    lags = np.array([1, 2, 4, 8, 16])
    msq = [np.mean(np.sum((states[ok, d:] - states[ok, :-d]) ** 2, axis=2)) for d in lags]
    return np.polyfit(np.log(lags * g.h_max), np.log(msq), 1)[0]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=1024)
    ap.add_argument("--paths", type=int, default=200)
    ap.add_argument("--seed", type=int, default=5)
    args = ap.parse_args()
    for H in (0.6, 0.7, 0.8, 0.9):
        print(f"H={H}: fitted {exponent(H, args.steps, args.paths, args.seed):.3f}   2H={2 * H:.1f}")


if __name__ == "__main__":
    main()
