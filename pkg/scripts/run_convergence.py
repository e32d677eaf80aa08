"""Convergence study on the stiff Laplacian + sine problem.

    python scripts/run_convergence.py                       # desk profile, ~10 s
    python scripts/run_convergence.py --paper-scale         # 1000 paths, 2048-step reference
    python scripts/run_convergence.py --config my.conf --error-mode endpoint

Writes errors.csv, slopes.csv and manifest.txt and prints the error table
next to the benchmark values.
"""
import argparse
import os
import time

from expeuler import harness
from expeuler.config import FULL_PATHS, FULL_REF, load_config

HERE = os.path.dirname(os.path.abspath(__file__))
DEFAULT_CONFIG = os.path.join(HERE, os.pardir, "configs", "convergence.conf")

# benchmark RMSE table, keyed by (H, coarse step count)
BENCHMARK = {
    0.6: {64: 1.603272e-02, 32: 3.459247e-02, 16: 7.183743e-02, 8: 1.398038e-01, 4: 2.501251e-01},
    0.7: {64: 1.038561e-02, 32: 2.241886e-02, 16: 4.817748e-02, 8: 9.778167e-02, 4: 1.846804e-01},
    0.8: {64: 6.358357e-03, 32: 1.379592e-02, 16: 3.035276e-02, 8: 6.450626e-02, 4: 1.288965e-01},
    0.9: {64: 3.938708e-03, 32: 8.542633e-03, 16: 1.887222e-02, 8: 4.162525e-02, 4: 8.866915e-02},
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=DEFAULT_CONFIG)
    ap.add_argument("--paper-scale", action="store_true")
    ap.add_argument("--paths", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--error-mode", choices=("sup", "endpoint"))
    ap.add_argument("--output-dir")
    args = ap.parse_args()

    cfg = load_config(args.config)
    over = dict(paths=args.paths, seed=args.seed, error_mode=args.error_mode,
                output_dir=args.output_dir)
    if args.paper_scale:
        over.setdefault("ref_steps", FULL_REF)
        over["paths"] = args.paths or FULL_PATHS
    cfg = cfg.with_overrides(**over)

    t0 = time.perf_counter()
    report = harness.run_convergence(cfg)
    elapsed = time.perf_counter() - t0
    harness.emit_report(report, cfg.output_dir)

    print(f"{cfg.paths} paths, reference N={cfg.ref_steps}, {cfg.resolved_noise_mode}, "
          f"{cfg.error_mode} error, {elapsed:.1f} s")
    print(f"{'H':>4} {'N':>4} {'h':>10} {'rmse':>11} {'stderr':>10} {'benchmark':>11} {'ratio':>7}")
    for r in report.rows:
        N = round(cfg.t_end / r.h)
        pub = BENCHMARK.get(r.H, {}).get(N)
        ratio = f"{r.rmse / pub:7.3f}" if pub else "      -"
        pub_s = f"{pub:11.4e}" if pub else "          -"
        print(f"{r.H:4g} {N:4d} {r.h:10.7f} {r.rmse:11.4e} {r.stderr:10.2e} {pub_s} {ratio}")
    for s in report.slopes:
        print(f"H={s.H:g}: slope {s.slope:.4f} (residual {s.residual:.2e})")
    print(f"results in {cfg.output_dir}")


if __name__ == "__main__":
    main()
