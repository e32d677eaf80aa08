import math
import os

import numpy as np
import pytest

from expeuler import harness as hs, noise as nz
from expeuler.config import ExperimentConfig
from expeuler.errors import DegenerateFitError, InvalidInputError, RunFailure

# the five H = 0.6 values of the benchmark error table
BENCH_H06 = [(0.0015625, 1.603272e-02), (0.003125, 3.459247e-02), (0.00625, 7.183743e-02),
            (0.0125, 1.398038e-01), (0.025, 2.501251e-01)]


def small(**kw):
    base = dict(hurst_values=(0.7,), coarse_steps=(4, 8, 16, 32), ref_steps=256, paths=24,
                chunk_paths=10, seed=7)
    base.update(kw)
    return ExperimentConfig(**base).with_overrides()


# --- slope fit -------------------------------------------------------------

def test_fit_slope_two_points():
    assert hs.fit_slope([(1, 1), (2, 2)]) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("C", [1e-3, 1.0, 42.0])
def test_fit_slope_power_law(C):
    pts = [(h, C * h ** 0.7) for h in (1 / 4, 1 / 8, 1 / 16)]
    s, res = hs.fit_slope(pts, return_residual=True)
    assert s == pytest.approx(0.7, abs=1e-12) and res < 1e-25


def test_fit_slope_benchmark_table():
    # oracle: numpy.polyfit on the same logs gives 0.99419910999...
    assert hs.fit_slope(BENCH_H06) == pytest.approx(0.9941991099914658, rel=1e-12)
    assert hs.fit_slope(BENCH_H06) == pytest.approx(0.99, abs=0.01)


def test_fit_slope_errors():
    with pytest.raises(DegenerateFitError):
        hs.fit_slope([(0.1, 1.0), (0.1, 2.0), (0.2, 3.0)])
    with pytest.raises(DegenerateFitError):
        hs.fit_slope([(0.1, 1.0)])
    with pytest.raises(InvalidInputError):
        hs.fit_slope([(0.1, 0.0), (0.2, 1.0)])


# --- the study --------------------------------------------------------------

@pytest.fixture(scope="module")
def small_report():
    return hs.run_convergence(small())


def test_report_shape(small_report):
    r = small_report
    assert [row.h for row in r.rows] == [0.1 / N for N in (4, 8, 16, 32)]
    assert all(row.rmse > 0 and row.stderr > 0 and row.paths == 24 for row in r.rows)
    assert r.provenance == {"config_sha256": r.config.digest(), "seed": 7}
    assert r.rmse(0.7, 8) == r.rows[1].rmse
    assert r.aborted == {0.7: 0}


def test_bitwise_rerun(small_report):
    again = hs.run_convergence(small())
    assert again.rows == small_report.rows and again.slopes == small_report.slopes
    assert again.noise_digests == small_report.noise_digests


def test_seed_changes_result(small_report):
    other = hs.run_convergence(small(seed=8))
    assert other.noise_digests != small_report.noise_digests
    assert other.rows[0].rmse != small_report.rows[0].rmse


def test_chunking_does_not_change_result(small_report):
    other = hs.run_convergence(small(chunk_paths=7))
    assert other.noise_digests != small_report.noise_digests  # digests are per chunk
    for a, b in zip(other.rows, small_report.rows):
        assert a.rmse == pytest.approx(b.rmse, rel=1e-12)


def test_endpoint_error_below_sup(small_report):
    end = hs.run_convergence(small(error_mode="endpoint"))
    for e, s in zip(end.rows, small_report.rows):
        assert 0 < e.rmse <= s.rmse


def test_zero_noise_linear_is_exact():
    r = hs.run_convergence(small(problem="laplacian_linear", noise_scale=0.0, paths=3))
    assert all(row.rmse <= 1e-12 for row in r.rows)
    assert math.isnan(r.slopes[0].slope)


def test_zero_noise_sine_first_order():
    r = hs.run_convergence(small(noise_scale=0.0, paths=2, coarse_steps=(8, 16, 32), ref_steps=1024))
    assert r.slopes[0].slope == pytest.approx(1.0, abs=0.1)


def test_exact_cholesky_mode():
    cfg = small(ref_steps=64, coarse_steps=(2, 4, 8), paths=60, chunk_paths=30)
    assert cfg.resolved_noise_mode == nz.EXACT_CHOLESKY
    r = hs.run_convergence(cfg)
    rm = [row.rmse for row in r.rows]
    assert rm[0] > rm[1] > rm[2] > 0


def test_noise_coupling_checksum(monkeypatch):
    real = nz.aggregate_to_coarse
    seen = []

    def spy(block, A, grid):
        out = real(block, A, grid)
        seen.append((block.checksum(), out.source_checksum))
        return out
    monkeypatch.setattr(hs.nz, "aggregate_to_coarse", spy)
    hs.run_convergence(small(paths=10))
    assert seen and all(a == b for a, b in seen)
    assert len({a for a, _ in seen}) == 1  # one fine block feeds all four coarse grids


def test_broken_coupling_detected(monkeypatch):
    real = nz.aggregate_to_coarse

    def fresh(block, A, grid):
        out = real(block, A, grid)
        return nz.NoiseBlock(grid=out.grid, samples=out.samples, generator_tag=out.generator_tag,
                             seed=out.seed, hurst=out.hurst)
    monkeypatch.setattr(hs.nz, "aggregate_to_coarse", fresh)
    with pytest.raises(RunFailure):
        hs.run_convergence(small(paths=4))


def test_abort_threshold(monkeypatch):
    real = hs.build_problem

    def blowing_up(cfg, H=None):
        p = real(cfg, H)
        p.f = lambda t, x: np.where(np.abs(x) > 0.9, np.inf, 0.0)
        return p
    monkeypatch.setattr(hs, "build_problem", blowing_up)
    with pytest.raises(RunFailure, match="non-finite"):
        hs.run_convergence(small(paths=10, noise_scale=50.0))


def test_monotone_error_and_floor():
    cfg = small(hurst_values=(0.6, 0.9), coarse_steps=(4, 8, 16, 32, 64), ref_steps=512,
                paths=500, chunk_paths=100)
    r = hs.run_convergence(cfg)
    for H in cfg.hurst_values:
        rm = [r.rmse(H, N) for N in cfg.coarse_steps]
        inversions = sum(b >= a for a, b in zip(rm, rm[1:]))
        assert inversions <= 1
        assert r.slope(H) >= H - 0.1


# --- report files ---------------------------------------------------------

def test_header_only_csv(tmp_path):
    rep = hs.ConvergenceReport(rows=[], slopes=[], config=ExperimentConfig())
    e, s, m = hs.emit_report(rep, tmp_path)
    assert open(e).read() == "H,h,rmse,stderr,paths\n"
    assert open(s).read() == "H,slope,residual\n"
    assert "config_sha256 = " in open(m).read()


def test_emit_report_bytes(small_report, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    pa = hs.emit_report(small_report, a)
    pb = hs.emit_report(hs.run_convergence(small()), b)
    for x, y in zip(pa, pb):
        assert open(x, "rb").read() == open(y, "rb").read()
    rows = open(pa[0]).read().splitlines()
    assert len(rows) == 1 + 4
    H, h, rmse, se, paths = rows[1].split(",")
    assert float(rmse) == small_report.rows[0].rmse and paths == "24"
    manifest = open(pa[2]).read()
    assert "seed = 7" in manifest and "numpy = " in manifest and "noise_sha256[0.69999999999999996]" in manifest


def test_full_study_has_twenty_rows(tmp_path):
    cfg = ExperimentConfig(paths=2, chunk_paths=2, ref_steps=512)
    r = hs.run_convergence(cfg)
    assert len(r.rows) == 20 and len(r.slopes) == 4
    errors, _, _ = hs.emit_report(r, tmp_path)
    assert len(open(errors).read().splitlines()) == 21


def test_unwritable_output(small_report, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        hs.emit_report(small_report, os.path.join(blocker, "sub"))
