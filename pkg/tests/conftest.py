import numpy as np
import pytest

from fhenav.engine import SimulatorBackend
from fhenav.model import DESK_CONFIG, ModelConfig, generate_weights, random_inputs


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def sim():
    return SimulatorBackend.create(16, max_level=60)


@pytest.fixture(scope="session")
def desk_weights():
    return generate_weights(0, ModelConfig(**DESK_CONFIG))


@pytest.fixture(scope="session")
def desk_inputs(desk_weights):
    return random_inputs(0, desk_weights.config, 20)


def dft_oracle(x, inverse=False):
    """O(n^2) unitary DFT, summed term by term."""
    n = len(x)
    sign = 1 if inverse else -1
    out = np.zeros(n, dtype=complex)
    for k in range(n):
        for j in range(n):
            out[k] += x[j] * np.exp(sign * 2j * np.pi * j * k / n)
    return out / np.sqrt(n)


def correlate2d_oracle(x, f, stride=1):
    """Sliding-window cross-correlation over the valid region, loop by loop."""
    h, w = x.shape
    kh, kw = f.shape
    rows = range(0, h - kh + 1, stride)
    cols = range(0, w - kw + 1, stride)
    out = np.zeros((len(rows), len(cols)))
    for a, i in enumerate(rows):
        for b, j in enumerate(cols):
            out[a, b] = sum(x[i + p, j + q] * f[p, q] for p in range(kh) for q in range(kw))
    return out


ACCEPTANCE_LINES: list[str] = []


def record(criterion: int, ok: bool, detail: str) -> bool:
    line = f"acceptance {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
