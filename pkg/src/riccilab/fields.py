"""Periodic grids and the discrete field types that live on them.

Every field stores its component axes first and the grid axes last, so a
symmetric 2-tensor on a 32x32 torus has ``comps.shape == (3, 32, 32)``.
Arrays are marked read-only on construction; operations always allocate
fresh outputs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import GridMismatch, SpdViolation

DEFAULT_SPD_FLOOR = 1e-6


@dataclass(frozen=True)
class TorusGrid:
    """Uniform node-centred grid on the flat torus ``prod_i [0, L_i)``."""

    resolution: tuple[int, ...]
    periods: tuple[float, ...] = field(default=None)

    def __post_init__(self):
        res = tuple(int(r) for r in self.resolution)
        periods = (1.0,) * len(res) if self.periods is None else tuple(float(p) for p in self.periods)
        object.__setattr__(self, "resolution", res)
        object.__setattr__(self, "periods", periods)
        if len(res) not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {len(res)}")
        if len(periods) != len(res):
            raise ValueError("periods and resolution must have the same length")
        for r in res:
            if r < 8 or r % 2:
                raise ValueError(f"resolution entries must be even and >= 8, got {r}")
        for p in periods:
            if not (p > 0 and np.isfinite(p)):
                raise ValueError(f"periods must be positive, got {p}")

    @property
    def dim(self) -> int:
        return len(self.resolution)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.resolution

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / N for L, N in zip(self.periods, self.resolution))

    @property
    def node_count(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.periods))

    @property
    def n_sym(self) -> int:
        return self.dim * (self.dim + 1) // 2

    def axes(self) -> list[np.ndarray]:
        return [np.arange(N) * h for N, h in zip(self.resolution, self.spacing)]

    def coordinates(self) -> np.ndarray:
        """Node coordinates, shape ``(dim, *shape)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"))

    def refine(self, factor: int = 2) -> "TorusGrid":
        return TorusGrid(tuple(N * factor for N in self.resolution), self.periods)


def sym_pairs(n: int) -> list[tuple[int, int]]:
    """Upper-triangle index pairs in storage order: (0,0), (0,1), ..., (1,1), ..."""
    return [(i, j) for i in range(n) for j in range(i, n)]


def sym_index(n: int) -> np.ndarray:
    idx = np.empty((n, n), dtype=int)
    for c, (i, j) in enumerate(sym_pairs(n)):
        idx[i, j] = idx[j, i] = c
    return idx


def sym_multiplicity(n: int) -> np.ndarray:
    """Weight of each stored component in a full contraction (2 off the diagonal)."""
    return np.array([1.0 if i == j else 2.0 for i, j in sym_pairs(n)])


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


def check_same_grid(*fields_):
    grids = {f.grid for f in fields_}
    if len(grids) > 1:
        raise GridMismatch(f"fields live on different grids: {sorted(g.resolution for g in grids)}")


class ScalarField:
    __slots__ = ("grid", "values")

    def __init__(self, grid: TorusGrid, values):
        values = _frozen(np.broadcast_to(values, grid.shape))
        if not np.all(np.isfinite(values)):
            raise ValueError("scalar field has non-finite entries")
        self.grid = grid
        self.values = values

    def __add__(self, other):
        return ScalarField(self.grid, self.values + _values(other))

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - _values(other))

    def __mul__(self, other):
        return ScalarField(self.grid, self.values * _values(other))

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)


class VectorField:
    """``n`` components per node; contravariant unless ``covariant`` is set."""

    __slots__ = ("grid", "comps", "covariant")

    def __init__(self, grid: TorusGrid, comps, covariant: bool = False):
        comps = _frozen(np.broadcast_to(comps, (grid.dim, *grid.shape)))
        if not np.all(np.isfinite(comps)):
            raise ValueError("vector field has non-finite entries")
        self.grid = grid
        self.comps = comps
        self.covariant = covariant

    @classmethod
    def zeros(cls, grid, covariant=False):
        return cls(grid, np.zeros((grid.dim, *grid.shape)), covariant)

    @classmethod
    def constant(cls, grid, v, covariant=False):
        v = np.asarray(v, dtype=float).reshape((grid.dim,) + (1,) * grid.dim)
        return cls(grid, np.broadcast_to(v, (grid.dim, *grid.shape)), covariant)

    def __add__(self, other):
        return VectorField(self.grid, self.comps + other.comps, self.covariant)

    def __sub__(self, other):
        return VectorField(self.grid, self.comps - other.comps, self.covariant)

    def __mul__(self, c):
        return VectorField(self.grid, self.comps * c, self.covariant)

    __rmul__ = __mul__

    def __neg__(self):
        return VectorField(self.grid, -self.comps, self.covariant)


class SymTensorField:
    """Symmetric 2-tensor with lower indices, upper triangle stored."""

    __slots__ = ("grid", "comps")

    def __init__(self, grid: TorusGrid, comps):
        comps = _frozen(np.broadcast_to(comps, (grid.n_sym, *grid.shape)))
        if not np.all(np.isfinite(comps)):
            raise ValueError("tensor field has non-finite entries")
        self.grid = grid
        self.comps = comps

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((grid.n_sym, *grid.shape)))

    @classmethod
    def from_full(cls, grid: TorusGrid, full: np.ndarray):
        """Build from a ``(n, n, *shape)`` array, symmetrising it."""
        n = grid.dim
        return cls(grid, np.stack([0.5 * (full[i, j] + full[j, i]) for i, j in sym_pairs(n)]))

    @classmethod
    def constant(cls, grid, matrix):
        m = np.asarray(matrix, dtype=float)
        full = np.broadcast_to(m.reshape(m.shape + (1,) * grid.dim), m.shape + grid.shape)
        return cls.from_full(grid, full)

    def full(self) -> np.ndarray:
        return self.comps[sym_index(self.grid.dim)]

    def nodal(self) -> np.ndarray:
        """Nodal matrices with shape ``(*shape, n, n)``."""
        n = self.grid.dim
        return np.moveaxis(self.full(), (0, 1), (n, n + 1))

    def component(self, i: int, j: int) -> np.ndarray:
        return self.comps[sym_index(self.grid.dim)[i, j]]

    def trace_flat(self) -> np.ndarray:
        return sum(self.component(i, i) for i in range(self.grid.dim))

    def _wrap(self, comps):
        return SymTensorField(self.grid, comps)

    def __add__(self, other):
        check_same_grid(self, other)
        return SymTensorField(self.grid, self.comps + other.comps)

    def __sub__(self, other):
        check_same_grid(self, other)
        return SymTensorField(self.grid, self.comps - other.comps)

    def __mul__(self, c):
        if isinstance(c, ScalarField):
            c = c.values
        return SymTensorField(self.grid, self.comps * c)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return SymTensorField(self.grid, self.comps / c)

    def __neg__(self):
        return SymTensorField(self.grid, -self.comps)


class MetricField(SymTensorField):
    """A symmetric tensor that is positive definite at every node."""

    __slots__ = ("spd_floor", "__dict__")

    def __init__(self, grid: TorusGrid, comps, spd_floor: float = DEFAULT_SPD_FLOOR):
        super().__init__(grid, comps)
        self.spd_floor = spd_floor
        eig = np.linalg.eigvalsh(self.nodal())[..., 0]
        k = int(np.argmin(eig))
        if not eig.flat[k] >= spd_floor:
            node = np.unravel_index(k, grid.shape)
            raise SpdViolation(
                f"metric eigenvalue {eig.flat[k]:.3e} below floor {spd_floor:.1e} at node {node}",
                node=node,
                eigenvalue=float(eig.flat[k]),
            )

    @classmethod
    def flat(cls, grid: TorusGrid, scale: float = 1.0):
        return cls.constant(grid, scale * np.eye(grid.dim))

    @classmethod
    def constant(cls, grid, matrix, spd_floor=DEFAULT_SPD_FLOOR):
        return cls(grid, SymTensorField.constant(grid, matrix).comps, spd_floor)

    @classmethod
    def from_tensor(cls, t: SymTensorField, spd_floor=DEFAULT_SPD_FLOOR):
        return cls(t.grid, t.comps, spd_floor)

    @classmethod
    def conformal(cls, u: ScalarField, base: "MetricField | None" = None):
        """``e^{2u} * base`` (flat base by default)."""
        base = cls.flat(u.grid) if base is None else base
        return cls(u.grid, base.comps * np.exp(2.0 * u.values), base.spd_floor)

    @cached_property
    def sqrt_det(self) -> np.ndarray:
        return np.sqrt(np.linalg.det(self.nodal()))

    @cached_property
    def inverse_full(self) -> np.ndarray:
        """Inverse metric, shape ``(n, n, *shape)``."""
        n = self.grid.dim
        inv = np.linalg.inv(self.nodal())
        inv = 0.5 * (inv + np.swapaxes(inv, -1, -2))
        return np.moveaxis(inv, (n, n + 1), (0, 1))

    @cached_property
    def is_constant(self) -> bool:
        c = self.comps.reshape(self.grid.n_sym, -1)
        return bool(np.all(c == c[:, :1]))


def _values(x):
    return x.values if isinstance(x, ScalarField) else x


# ---------------------------------------------------------------------------
# Periodic stencils. ``axis`` counts grid axes; arrays carry leading
# component axes, so the array axis is ``a.ndim - dim + axis``.


def _ax(a: np.ndarray, grid: TorusGrid, axis: int) -> int:
    return a.ndim - grid.dim + axis


def d_central(a: np.ndarray, grid: TorusGrid, axis: int) -> np.ndarray:
    ax = _ax(a, grid, axis)
    return (np.roll(a, -1, ax) - np.roll(a, 1, ax)) / (2.0 * grid.spacing[axis])


def d_forward(a: np.ndarray, grid: TorusGrid, axis: int) -> np.ndarray:
    ax = _ax(a, grid, axis)
    return (np.roll(a, -1, ax) - a) / grid.spacing[axis]


def d_second(a: np.ndarray, grid: TorusGrid, axis: int) -> np.ndarray:
    """Compact three-point second difference."""
    ax = _ax(a, grid, axis)
    h = grid.spacing[axis]
    return (np.roll(a, -1, ax) - 2.0 * a + np.roll(a, 1, ax)) / (h * h)


def gradient(a: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Stack of central differences along every grid axis (new leading axis)."""
    return np.stack([d_central(a, grid, k) for k in range(grid.dim)])


def derivative_ladder(a: np.ndarray, grid: TorusGrid, order: int):
    """Yield every mixed central difference of ``a`` of exactly ``order``."""
    for combo in itertools.combinations_with_replacement(range(grid.dim), order):
        d = a
        for axis in combo:
            d = d_central(d, grid, axis)
        yield combo, d
