import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riccilab.errors import GridMismatch, SpdViolation
from riccilab.fields import (
    MetricField,
    ScalarField,
    SymTensorField,
    TorusGrid,
    VectorField,
    d_central,
    d_second,
    sym_index,
    sym_pairs,
)
from riccilab.geometry import metric_inverse

from conftest import random_metric


def test_grid_validation():
    with pytest.raises(ValueError):
        TorusGrid((7, 8))
    with pytest.raises(ValueError):
        TorusGrid((6, 6))
    with pytest.raises(ValueError):
        TorusGrid((8,))
    with pytest.raises(ValueError):
        TorusGrid((8, 8), (1.0, -1.0))
    g = TorusGrid((8, 16), (2.0, 1.0))
    assert g.spacing == (0.25, 1.0 / 16)
    assert g.node_count == 128
    assert g.coordinates().shape == (2, 8, 16)
    assert g.volume == pytest.approx(2.0)


def test_sym_storage_order():
    assert sym_pairs(3) == [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
    idx = sym_index(3)
    assert np.array_equal(idx, idx.T)


def test_fields_are_read_only():
    grid = TorusGrid((8, 8))
    f = ScalarField(grid, np.zeros(grid.shape))
    with pytest.raises(ValueError):
        f.values[0, 0] = 1.0


def test_non_finite_rejected():
    grid = TorusGrid((8, 8))
    with pytest.raises(ValueError):
        ScalarField(grid, np.full(grid.shape, np.nan))


def test_spd_violation_reports_node():
    grid = TorusGrid((8, 8))
    comps = MetricField.flat(grid).comps.copy()
    comps[0, 3, 5] = -1.0
    with pytest.raises(SpdViolation) as err:
        MetricField(grid, comps)
    assert err.value.node == (3, 5)


def test_grid_mismatch_on_arithmetic():
    a = SymTensorField.zeros(TorusGrid((8, 8)))
    b = SymTensorField.zeros(TorusGrid((10, 10)))
    with pytest.raises(GridMismatch):
        a + b


def test_metric_inverse_flat_and_scaled():
    grid = TorusGrid((8, 8))
    assert np.allclose(metric_inverse(MetricField.flat(grid)).comps, MetricField.flat(grid).comps)
    inv = metric_inverse(MetricField.flat(grid, 4.0))
    assert np.allclose(inv.comps, MetricField.flat(grid).comps / 4.0, rtol=0, atol=1e-15)


def _adjugate_inverse(m):
    a, b, c = m[0]
    d, e, f = m[1]
    g, h, i = m[2]
    adj = np.array(
        [
            [e * i - f * h, c * h - b * i, b * f - c * e],
            [f * g - d * i, a * i - c * g, c * d - a * f],
            [d * h - e * g, b * g - a * h, a * e - b * d],
        ]
    )
    det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)
    return adj / det


def test_metric_inverse_matches_adjugate_oracle(rng):
    grid = TorusGrid((8, 8, 8))
    g = random_metric(grid, rng, 0.3)
    inv = metric_inverse(g).full()
    full = g.full()
    worst = 0.0
    for node in [(0, 0, 0), (3, 1, 7), (5, 5, 2), (7, 7, 7)]:
        m = full[(slice(None), slice(None)) + node]
        oracle = _adjugate_inverse(m)
        worst = max(worst, np.abs(inv[(slice(None), slice(None)) + node] - oracle).max() / np.abs(oracle).max())
    assert worst < 1e-12


def test_second_difference_symbol():
    grid = TorusGrid((16, 8))
    x = grid.coordinates()[0]
    u = np.sin(2 * np.pi * x)
    h = grid.spacing[0]
    assert np.allclose(d_second(u, grid, 0), -(2 / h) ** 2 * np.sin(np.pi * h) ** 2 * u, atol=1e-12)
    assert np.allclose(d_central(u, grid, 0), np.sin(2 * np.pi * h) / h * np.cos(2 * np.pi * x), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(
    st.lists(st.floats(0.2, 3.0), min_size=3, max_size=3),
    st.floats(-0.15, 0.15),
)
def test_constant_metric_is_constant(diag, off):
    grid = TorusGrid((8, 8))
    m = np.array([[diag[0], off], [off, diag[1]]])
    g = MetricField.constant(grid, m)
    assert g.is_constant
    assert np.allclose(g.sqrt_det, np.sqrt(np.linalg.det(m)))


def test_vector_field_constant():
    grid = TorusGrid((8, 8))
    v = VectorField.constant(grid, [1.0, 2.0])
    assert v.comps.shape == (2, 8, 8)
    assert np.all(v.comps[1] == 2.0)
