import numpy as np
import pytest

from panicfsv.model import MslParams


def make_theta(d_y=3, d_f=1, seed=None, **changes):
    """Weekly-percent magnitudes close to a fitted sector-ETF model."""
    if d_f == 1:
        B = np.array([1.0, 0.87824, 1.02109, 0.81926, 0.98017, 0.56708, 0.67692, 0.65767, 0.90821])[:d_y, None]
        R = np.array([1.80174, 6.61963, 0.83710, 0.55770, 1.31760, 0.65118, 2.19223, 0.67863, 0.38425])[:d_y]
        theta = MslParams(B=B, R=R, mu=[1.00294, 0.62478], phi=[0.61626, 0.67449], q=[0.40486, 0.53230],
                          lam=[0.0013], p=0.87132)
    else:
        rng = np.random.default_rng(seed if seed is not None else 0)
        B = np.tril(rng.uniform(0.4, 1.2, size=(d_y, d_f)))
        B[np.arange(d_f), np.arange(d_f)] = 1.0
        theta = MslParams(B=B, R=rng.uniform(0.5, 2.0, d_y), mu=rng.uniform(0.0, 1.0, 2 * d_f),
                          phi=rng.uniform(0.4, 0.8, 2 * d_f), q=rng.uniform(0.2, 0.5, 2 * d_f),
                          lam=rng.uniform(0.0005, 0.002, d_f), p=0.87)
    return theta.replace(**changes) if changes else theta


@pytest.fixture
def theta3():
    return make_theta(3)


@pytest.fixture
def theta2():
    return make_theta(2)


ACCEPTANCE_LINES = []


def record_criterion(number, title, ok, detail=""):
    """Print and remember one pass/fail line for the acceptance summary."""
    line = f"criterion {number:>2} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
