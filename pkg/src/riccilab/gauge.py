"""Torus diffeomorphisms, metric pullbacks and the divergence-free slice.

A :class:`DiffeoMap` stores the image of every node, wrapped into the
fundamental domain. Off-grid values are obtained by periodic cubic
Lagrange interpolation (4 points per axis, tensor product), which is exact
at nodes, so the identity map pulls a metric back to itself bit for bit.
"""

from __future__ import annotations

import itertools
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from .errors import JacobianCollapse, SolverStall
from .fields import (
    MetricField,
    SymTensorField,
    TorusGrid,
    VectorField,
    check_same_grid,
    d_central,
    sym_pairs,
)
from .geometry import christoffel

SNAP = 1e-12


# ---------------------------------------------------------------------------
# Periodic cubic interpolation


def _cubic_weights(s: np.ndarray) -> np.ndarray:
    """Lagrange weights for offsets -1, 0, 1, 2 at fractional position ``s``."""
    return np.stack(
        [
            -s * (s - 1.0) * (s - 2.0) / 6.0,
            (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0,
            -(s + 1.0) * s * (s - 2.0) / 2.0,
            (s + 1.0) * s * (s - 1.0) / 6.0,
        ]
    )


def interpolate_periodic(values: np.ndarray, grid: TorusGrid, points: np.ndarray) -> np.ndarray:
    """Evaluate grid data at arbitrary points.

    ``values`` has shape ``(*lead, *grid.shape)``; ``points`` has shape
    ``(dim, *pts)`` in length units. Returns ``(*lead, *pts)``. Points within
    ``1e-12`` cells of a node are snapped onto it.
    """
    dim = grid.dim
    lead = values.shape[: values.ndim - dim]
    pts_shape = points.shape[1:]
    flat_vals = values.reshape(lead + grid.shape)
    base, weights = [], []
    for a in range(dim):
        q = points[a].ravel() / grid.spacing[a]
        r = np.round(q)
        q = np.where(np.abs(q - r) < SNAP, r, q)
        i0 = np.floor(q)
        weights.append(_cubic_weights(q - i0))
        base.append(i0.astype(np.int64))
    out = np.zeros(lead + (base[0].size,))
    for offs in itertools.product(range(4), repeat=dim):
        w = np.ones(base[0].size)
        idx = []
        for a, o in enumerate(offs):
            w = w * weights[a][o]
            idx.append((base[a] + o - 1) % grid.shape[a])
        out += flat_vals[(Ellipsis, *idx)] * w
    return out.reshape(lead + pts_shape)


# ---------------------------------------------------------------------------
# Diffeomorphisms


def _wrap(x: np.ndarray, grid: TorusGrid) -> np.ndarray:
    L = np.asarray(grid.periods).reshape((grid.dim,) + (1,) * (x.ndim - 1))
    return np.mod(x, L)


def _displacement(image: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """``image - x`` unwrapped into ``[-L/2, L/2)`` per axis."""
    L = np.asarray(grid.periods).reshape((grid.dim,) + (1,) * grid.dim)
    d = image - grid.coordinates()
    return np.mod(d + 0.5 * L, L) - 0.5 * L


class DiffeoMap:
    __slots__ = ("grid", "image", "jacobian", "jacobian_floor")

    def __init__(self, grid: TorusGrid, image):
        image = np.array(np.broadcast_to(image, (grid.dim, *grid.shape)), dtype=float)
        if not np.all(np.isfinite(image)):
            raise ValueError("diffeomorphism image has non-finite entries")
        image = _wrap(image, grid)
        image.flags.writeable = False
        disp = _displacement(image, grid)
        n = grid.dim
        jac = np.empty((n, n, *grid.shape))
        for a in range(n):
            for i in range(n):
                jac[a, i] = d_central(disp[a], grid, i) + (1.0 if a == i else 0.0)
        jac.flags.writeable = False
        det = np.linalg.det(np.moveaxis(jac, (0, 1), (n, n + 1)))
        self.grid = grid
        self.image = image
        self.jacobian = jac  # jacobian[a, i] = d_i phi^a
        self.jacobian_floor = float(det.min())
        if not self.jacobian_floor > 0:
            node = np.unravel_index(int(np.argmin(det)), grid.shape)
            raise JacobianCollapse(f"det(D phi) = {self.jacobian_floor:.3e} at node {node}")

    @classmethod
    def identity(cls, grid: TorusGrid) -> "DiffeoMap":
        return cls(grid, grid.coordinates())

    @classmethod
    def translation(cls, grid: TorusGrid, v) -> "DiffeoMap":
        v = np.asarray(v, dtype=float).reshape((grid.dim,) + (1,) * grid.dim)
        return cls(grid, grid.coordinates() + v)

    def displacement(self) -> np.ndarray:
        return _displacement(self.image, self.grid)


def integrate_diffeo(
    X_provider: Callable[[float], VectorField],
    t0: float,
    t1: float,
    init: DiffeoMap | None = None,
    steps: int | None = None,
) -> DiffeoMap:
    """Solve ``d phi / dt = X(t) o phi`` node by node with RK4.

    ``X_provider(t)`` returns a contravariant vector field on the grid; it is
    evaluated at ``t0 + k dt / 2`` for the stage times. ``steps`` defaults to
    one per ``1e-3`` of elapsed time (at least one).
    """
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    if init is None:
        raise ValueError("integrate_diffeo needs an initial map")
    grid = init.grid
    if t1 == t0:
        return init
    if steps is None:
        steps = max(1, int(np.ceil((t1 - t0) / 1e-3)))
    dt = (t1 - t0) / steps
    x = grid.coordinates() + init.displacement()  # unwrapped positions

    def vel(t, p):
        X = X_provider(t)
        check_same_grid(X, init)
        if not np.any(X.comps):
            return np.zeros_like(p)
        return interpolate_periodic(X.comps, grid, _wrap(p, grid))

    for k in range(steps):
        t = t0 + k * dt
        k1 = vel(t, x)
        k2 = vel(t + 0.5 * dt, x + 0.5 * dt * k1)
        k3 = vel(t + 0.5 * dt, x + 0.5 * dt * k2)
        k4 = vel(t + dt, x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return DiffeoMap(grid, x)


def pullback_metric(phi: DiffeoMap, g: MetricField) -> MetricField:
    """``(phi^* g)_ij(x) = d_i phi^a d_j phi^b g_ab(phi(x))``."""
    check_same_grid(phi, g)
    g_at = interpolate_periodic(g.full(), g.grid, phi.image)
    J = phi.jacobian
    full = np.einsum("ai...,bj...,ab...->ij...", J, J, g_at)
    return MetricField(g.grid, SymTensorField.from_full(g.grid, full).comps, g.spd_floor)


# ---------------------------------------------------------------------------
# Slice projection


@lru_cache(maxsize=16)
def _central_matrices(grid: TorusGrid):
    n_tot = grid.node_count
    idx = np.arange(n_tot).reshape(grid.shape)
    rows = np.arange(n_tot)
    out = []
    for ax, h in enumerate(grid.spacing):
        fwd = np.roll(idx, -1, ax).ravel()
        bwd = np.roll(idx, 1, ax).ravel()
        data = np.concatenate([np.full(n_tot, 0.5 / h), np.full(n_tot, -0.5 / h)])
        out.append(
            sp.csr_matrix((data, (np.concatenate([rows, rows]), np.concatenate([fwd, bwd]))), shape=(n_tot, n_tot))
        )
    return out


def sym_derivative_matrix(g: MetricField) -> sp.csr_matrix:
    """Sparse ``delta^*`` from covector coordinates ``(dim, N)`` to stored
    tensor coordinates ``(n_sym, N)``, both flattened component-major."""
    grid = g.grid
    n = grid.dim
    D = _central_matrices(grid)
    gamma = None if g.is_constant else christoffel(g).comps
    blocks = []
    for i, j in sym_pairs(n):
        row = []
        for k in range(n):
            blk = sp.csr_matrix((grid.node_count, grid.node_count))
            if k == j:
                blk = blk + 0.5 * D[i]
            if k == i:
                blk = blk + 0.5 * D[j]
            if gamma is not None:
                blk = blk - sp.diags(gamma[k, i, j].ravel())
            row.append(blk)
        blocks.append(row)
    return sp.bmat(blocks, format="csr")


def tensor_weight_matrix(g: MetricField) -> sp.csr_matrix:
    """Gram matrix of the ``L^2(dV_g)`` tensor inner product in stored coordinates."""
    grid = g.grid
    n = grid.dim
    pairs = sym_pairs(n)
    ginv = g.inverse_full
    dens = g.sqrt_det * grid.cell_volume
    blocks = [[None] * len(pairs) for _ in pairs]
    for c, (i, j) in enumerate(pairs):
        orbit_c = {(i, j), (j, i)}
        for d, (k, l) in enumerate(pairs):
            orbit_d = {(k, l), (l, k)}
            w = sum(ginv[a, p] * ginv[b, q] for a, b in orbit_c for p, q in orbit_d)
            blocks[c][d] = sp.diags((w * dens).ravel())
    return sp.bmat(blocks, format="csr")


def slice_project(
    h: SymTensorField,
    g_hat: MetricField,
    rtol: float = 1e-10,
    max_iters: int | None = None,
) -> tuple[SymTensorField, VectorField]:
    """Split ``h = h_slice + delta^* omega`` with ``h_slice`` divergence-free.

    Solves the normal equations ``(delta^*)^T W delta^* omega = (delta^*)^T W h``
    by conjugate gradients, ``W`` being the tensor Gram matrix, so ``h_slice``
    is ``L^2(dV)``-orthogonal to the range of ``delta^*``. The discrete
    divergence is the negative adjoint of ``delta^*``; on a flat metric it
    coincides with the central-difference divergence. CG started from zero
    stays orthogonal to the kernel (parallel fields), so ``omega`` is
    mean-zero.
    """
    check_same_grid(h, g_hat)
    grid = h.grid
    S = sym_derivative_matrix(g_hat)
    W = tensor_weight_matrix(g_hat)
    StW = (S.T @ W).tocsr()
    A = (StW @ S).tocsr()
    b = StW @ h.comps.ravel()
    bnorm = float(np.linalg.norm(b))
    # roundoff level of b itself: an already divergence-free h cannot do better
    floor = 1e-13 * float(np.linalg.norm(abs(StW) @ np.abs(h.comps.ravel())))
    if bnorm <= floor:
        return h, VectorField.zeros(grid, covariant=True)
    max_iters = max_iters or 20 * A.shape[0]
    omega, info = cg(A, b, rtol=rtol, atol=floor, maxiter=max_iters)
    if info != 0:
        res = float(np.linalg.norm(A @ omega - b)) / bnorm
        raise SolverStall(f"slice projection CG stopped after {max_iters} iterations (relative residual {res:.2e})")
    comps = h.comps.ravel() - S @ omega
    h_slice = SymTensorField(grid, comps.reshape(h.comps.shape))
    return h_slice, VectorField(grid, omega.reshape(grid.dim, *grid.shape), covariant=True)


def discrete_divergence(h: SymTensorField, g_hat: MetricField) -> VectorField:
    """``-(delta^*)^T W h`` divided by the nodal volume: the divergence the slice
    condition refers to."""
    S = sym_derivative_matrix(g_hat)
    W = tensor_weight_matrix(g_hat)
    v = -(S.T @ (W @ h.comps.ravel()))
    dens = (g_hat.sqrt_det * h.grid.cell_volume).ravel()
    return VectorField(h.grid, (v.reshape(h.grid.dim, -1) / dens).reshape(h.grid.dim, *h.grid.shape), covariant=True)
