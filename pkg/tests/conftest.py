import numpy as np
import pytest

from cbijumps import AtomicLevyMeasure, CBIParams

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def record(n: int, passed: bool, detail: str = ""):
    ACCEPTANCE[n] = (bool(passed), detail)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())


def random_params(rng, d: int, n_atoms: int = 2, p_zero: float = 0.3) -> CBIParams:
    """Admissible parameters with random atomic measures and Metzler ``B``."""
    B = rng.uniform(0, 0.6, (d, d)) * (rng.random((d, d)) > p_zero)
    np.fill_diagonal(B, -rng.uniform(0.5, 2.0, d))

    def atoms(k):
        pts = rng.uniform(0, 1.5, (k, d)) * (rng.random((k, d)) > p_zero)
        pts[np.all(pts == 0, axis=1), 0] = 0.3
        return AtomicLevyMeasure(pts, rng.uniform(0.1, 1.0, k), dim=d)

    mu = [atoms(n_atoms) for _ in range(d)]
    return CBIParams(c=rng.uniform(0.1, 1.0, d), beta=rng.uniform(0.1, 1.0, d), B=B,
                     nu=atoms(n_atoms), mu=mu)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
