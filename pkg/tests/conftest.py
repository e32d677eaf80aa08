import mpmath
import numpy as np
import pytest

from expeuler.integrator import builtin_laplacian_sine, laplacian_matrix

ACCEPTANCE_LINES = []


@pytest.fixture
def E10():
    return laplacian_matrix(10)


@pytest.fixture
def builtin():
    return builtin_laplacian_sine(10, 0.7)


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def sample_var_se(x):
    """Sample variance and its standard error (Gaussian, mean known to be 0)."""
    x = np.asarray(x)
    v = np.mean(x ** 2)
    return v, np.std(x ** 2, ddof=1) / np.sqrt(x.size)


def fou_variance_oracle(alpha, H, window):
    """H(2H-1) * double integral of e^{-alpha(x+y)}|x-y|^{2H-2} over [0, window]^2, reduced to 1-D."""
    with mpmath.workdps(30):
        H_, a, W = mpmath.mpf(H), mpmath.mpf(alpha), mpmath.mpf(window)
        inner = mpmath.quad(lambda r: r ** (2 * H_ - 2) * mpmath.exp(-a * r)
                            * (1 - mpmath.exp(-2 * a * (W - r))) / (2 * a), [0, 1, W])
        return float(H_ * (2 * H_ - 1) * 2 * inner)
