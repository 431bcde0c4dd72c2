import itertools

import numpy as np
import pytest

from riccilab.fields import MetricField, ScalarField, SymTensorField, TorusGrid, sym_pairs

ACCEPTANCE_LINES: list[str] = []


def trig_field(grid: TorusGrid, rng, kmax: int = 2) -> np.ndarray:
    """Random smooth periodic scalar with unit sup norm."""
    x = grid.coordinates()
    L = np.asarray(grid.periods).reshape((grid.dim,) + (1,) * grid.dim)
    out = np.zeros(grid.shape)
    for k in itertools.product(range(-kmax, kmax + 1), repeat=grid.dim):
        if not any(k):
            continue
        ph = 2 * np.pi * np.sum(np.reshape(k, (grid.dim,) + (1,) * grid.dim) * x / L, axis=0)
        out += rng.normal() * np.cos(ph) + rng.normal() * np.sin(ph)
    return out / np.abs(out).max()


def random_tensor(grid, rng, amp=1.0, kmax=2) -> SymTensorField:
    return SymTensorField(grid, amp * np.stack([trig_field(grid, rng, kmax) for _ in sym_pairs(grid.dim)]))


def random_metric(grid, rng, amp=0.1, kmax=2) -> MetricField:
    return MetricField.from_tensor(MetricField.flat(grid) + random_tensor(grid, rng, amp, kmax))


def conformal_metric(grid, rng, eps=0.05, kmax=2) -> MetricField:
    return MetricField.conformal(ScalarField(grid, eps * trig_field(grid, rng, kmax)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def record_acceptance(line: str) -> None:
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
