import numpy as np
import pytest

ACCEPTANCE_LINES: list[str] = []


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def brute_gram(H):
    U, B = H.shape
    G = np.zeros((U, U), dtype=complex)
    for u in range(U):
        for v in range(U):
            acc = 0j
            for k in range(B):
                acc += H[u, k] * np.conj(H[v, k])
            G[u, v] = acc
    return G


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def report(criterion: str, passed: bool, detail: str):
    line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
