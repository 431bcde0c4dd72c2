"""Curvature, covariant derivatives, Laplacians and norms on a periodic grid.

First derivatives are second-order central differences with periodic
wraparound. The Laplace-Beltrami operator is the exception: it is assembled
in divergence form on face-centred fluxes, which makes it exactly symmetric
in the discrete ``L^2(dV_g)`` inner product and keeps constants as its only
kernel (the wide central stencil would also annihilate checkerboards).
"""

from __future__ import annotations

import enum
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import GridMismatch
from .fields import (
    MetricField,
    ScalarField,
    SymTensorField,
    TorusGrid,
    VectorField,
    check_same_grid,
    d_second,
    derivative_ladder,
    gradient,
    sym_pairs,
)


class ChristoffelField:
    """Levi-Civita symbols ``comps[k, i, j] = Gamma^k_{ij}``."""

    __slots__ = ("grid", "comps")

    def __init__(self, grid: TorusGrid, comps: np.ndarray):
        comps = np.array(comps, dtype=float)
        comps.flags.writeable = False
        self.grid = grid
        self.comps = comps

    def lowered(self, g: MetricField) -> np.ndarray:
        """``Gamma_{l,ij} = g_{lk} Gamma^k_{ij}``."""
        return np.einsum("lk...,kij...->lij...", g.full(), self.comps)


def metric_inverse(g: MetricField) -> SymTensorField:
    return SymTensorField.from_full(g.grid, g.inverse_full)


def _dg(g: MetricField) -> np.ndarray:
    """``dg[a, i, j] = d_a g_ij``."""
    return gradient(g.full(), g.grid)


def christoffel(g: MetricField) -> ChristoffelField:
    if g.is_constant:
        n = g.grid.dim
        return ChristoffelField(g.grid, np.zeros((n, n, n, *g.grid.shape)))
    dg = _dg(g)
    # Gamma_{l,ij} = (d_i g_jl + d_j g_il - d_l g_ij) / 2
    low = 0.5 * (np.einsum("ijl...->lij...", dg) + np.einsum("jil...->lij...", dg) - dg)
    return ChristoffelField(g.grid, np.einsum("kl...,lij...->kij...", g.inverse_full, low))


def _dgamma(gamma: ChristoffelField) -> np.ndarray:
    """``out[a, k, i, j] = d_a Gamma^k_{ij}``."""
    return gradient(gamma.comps, gamma.grid)


def riemann(g: MetricField, gamma: ChristoffelField | None = None) -> np.ndarray:
    """``R^r_{s m v}`` with Ricci contraction ``R_{sv} = R^r_{s r v}``.

    Returned with shape ``(n, n, n, n, *shape)`` in index order (r, s, m, v).
    """
    gamma = christoffel(g) if gamma is None else gamma
    G = gamma.comps
    dG = _dgamma(gamma)
    term = np.einsum("mrvs...->rsmv...", dG) - np.einsum("vrms...->rsmv...", dG)
    quad = np.einsum("rml...,lvs...->rsmv...", G, G)
    return term + quad - np.einsum("rsmv...->rsvm...", quad)


def ricci(g: MetricField, gamma: ChristoffelField | None = None) -> SymTensorField:
    """Ricci tensor from central differences of the Christoffel symbols.

    ``R_ij = d_k G^k_ij - d_i G^k_kj + G^k_kl G^l_ij - G^k_il G^l_kj``. The
    discrete expression is not exactly symmetric (the chain rule fails at
    O(h^2)), so the symmetric part is returned.
    """
    if g.is_constant:
        return SymTensorField.zeros(g.grid)
    gamma = christoffel(g) if gamma is None else gamma
    G = gamma.comps
    dG = _dgamma(gamma)
    ric = (
        np.einsum("kkij...->ij...", dG)
        - np.einsum("ikkj...->ij...", dG)
        + np.einsum("kkl...,lij...->ij...", G, G)
        - np.einsum("kil...,lkj...->ij...", G, G)
    )
    return SymTensorField.from_full(g.grid, ric)


def scalar_curvature(g: MetricField, ric: SymTensorField | None = None) -> ScalarField:
    ric = ricci(g) if ric is None else ric
    return ScalarField(g.grid, np.einsum("ij...,ij...->...", g.inverse_full, ric.full()))


def hessian(f: ScalarField, g: MetricField, gamma: ChristoffelField | None = None) -> SymTensorField:
    """``d_i d_j f - Gamma^k_ij d_k f``.

    Pure second derivatives use the compact three-point stencil so that the
    flat trace matches the Laplacian of the eigenproblem; mixed derivatives
    compose central differences.
    """
    check_same_grid(f, g)
    grid = g.grid
    df = gradient(f.values, grid)
    ddf = np.stack([gradient(df[i], grid) for i in range(grid.dim)])
    for i in range(grid.dim):
        ddf[i, i] = d_second(f.values, grid, i)
    if not g.is_constant:
        gamma = christoffel(g) if gamma is None else gamma
        ddf = ddf - np.einsum("kij...,k...->ij...", gamma.comps, df)
    return SymTensorField.from_full(grid, ddf)


def covariant_derivative_covector(w: np.ndarray, grid, gamma: ChristoffelField | None) -> np.ndarray:
    """``out[i, j] = nabla_i w_j = d_i w_j - Gamma^m_ij w_m``."""
    dw = gradient(w, grid)
    if gamma is not None:
        dw = dw - np.einsum("mij...,m...->ij...", gamma.comps, w)
    return dw


def covariant_derivative_sym(h: np.ndarray, grid, gamma: ChristoffelField | None) -> np.ndarray:
    """``out[k, i, j] = nabla_k h_ij`` for a full symmetric array ``h``."""
    dh = gradient(h, grid)
    if gamma is not None:
        G = gamma.comps
        dh = dh - np.einsum("mki...,mj...->kij...", G, h) - np.einsum("mkj...,im...->kij...", G, h)
    return dh


def divergence_sym(h: SymTensorField, g: MetricField, gamma: ChristoffelField | None = None) -> VectorField:
    """``(div h)_j = g^{ik} nabla_i h_kj`` as a covariant vector field."""
    check_same_grid(h, g)
    if gamma is None and not g.is_constant:
        gamma = christoffel(g)
    nh = covariant_derivative_sym(h.full(), g.grid, None if g.is_constant else gamma)
    return VectorField(g.grid, np.einsum("ik...,ikj...->j...", g.inverse_full, nh), covariant=True)


def lower(v: VectorField, g: MetricField) -> VectorField:
    if v.covariant:
        return v
    return VectorField(v.grid, np.einsum("jk...,k...->j...", g.full(), v.comps), covariant=True)


def raise_index(v: VectorField, g: MetricField) -> VectorField:
    if not v.covariant:
        return v
    return VectorField(v.grid, np.einsum("jk...,k...->j...", g.inverse_full, v.comps), covariant=False)


def gradient_vector(f: ScalarField, g: MetricField) -> VectorField:
    """Metric gradient ``g^{kl} d_l f`` (contravariant)."""
    return raise_index(VectorField(g.grid, gradient(f.values, g.grid), covariant=True), g)


def sym_derivative(w: VectorField, g: MetricField, gamma: ChristoffelField | None = None) -> SymTensorField:
    """``(delta^* w)_ij = (nabla_i w_j + nabla_j w_i) / 2`` for a covector ``w``."""
    w = lower(w, g)
    if gamma is None and not g.is_constant:
        gamma = christoffel(g)
    nw = covariant_derivative_covector(w.comps, g.grid, None if g.is_constant else gamma)
    return SymTensorField.from_full(g.grid, nw)


def lie_derivative_metric(w: VectorField, g: MetricField, gamma: ChristoffelField | None = None) -> SymTensorField:
    """``L_W g_ij = nabla_i W_j + nabla_j W_i``."""
    return 2.0 * sym_derivative(w, g, gamma)


# ---------------------------------------------------------------------------
# Divergence-form Laplace-Beltrami operator


@lru_cache(maxsize=16)
def _stencil_matrices(grid: TorusGrid):
    n_tot = grid.node_count
    idx = np.arange(n_tot).reshape(grid.shape)
    rows = np.arange(n_tot)
    eye = sp.identity(n_tot, format="csr")
    shift_fwd, shift_bwd = [], []
    for ax in range(grid.dim):
        cols_f = np.roll(idx, -1, ax).ravel()
        cols_b = np.roll(idx, 1, ax).ravel()
        shift_fwd.append(sp.csr_matrix((np.ones(n_tot), (rows, cols_f)), shape=(n_tot, n_tot)))
        shift_bwd.append(sp.csr_matrix((np.ones(n_tot), (rows, cols_b)), shape=(n_tot, n_tot)))
    forward = [(S - eye) / h for S, h in zip(shift_fwd, grid.spacing)]
    central = [(Sf - Sb) / (2 * h) for Sf, Sb, h in zip(shift_fwd, shift_bwd, grid.spacing)]
    face_avg = [0.5 * (eye + S) for S in shift_fwd]
    mixed = {}
    for i in range(grid.dim):
        for j in range(grid.dim):
            if i != j:
                mixed[i, j] = (face_avg[i] @ central[j]).tocsr()
    return forward, face_avg, mixed


@lru_cache(maxsize=16)
def _stiffness_plan(grid: TorusGrid):
    """Precomputed assembly map: ``K.data = plan @ coeff.ravel()``.

    ``K`` is linear in the nodal coefficients ``sqrt(g) g^ij``; the map is
    built once per grid from the face-flux form
    ``sum_ij P_ij^T diag(face_avg_i a_ij) Q_ij`` (symmetrised off the diagonal).
    """
    forward, face_avg, mixed = _stencil_matrices(grid)
    n_tot = grid.node_count
    dim = grid.dim
    rows, cols, coeff_idx, vals = [], [], [], []

    def add(P, Q, block, weight):
        P = P.tocsr()
        Q = Q.tocsr()
        kp = P.indptr[1] - P.indptr[0]
        kq = Q.indptr[1] - Q.indptr[0]
        Pi = P.indices.reshape(n_tot, kp)
        Pv = P.data.reshape(n_tot, kp)
        Qi = Q.indices.reshape(n_tot, kq)
        Qv = Q.data.reshape(n_tot, kq)
        f = np.arange(n_tot)
        for a in range(kp):
            for b in range(kq):
                rows.append(Pi[:, a])
                cols.append(Qi[:, b])
                coeff_idx.append(block * n_tot + f)
                vals.append(weight * Pv[:, a] * Qv[:, b])

    for i in range(dim):
        for j in range(dim):
            block = i * dim + j
            if i == j:
                add(forward[i], forward[i], block, 1.0)
            else:
                add(forward[i], mixed[i, j], block, 0.5)
                add(mixed[i, j], forward[i], block, 0.5)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    keys, pos = np.unique(rows * n_tot + cols, return_inverse=True)
    face = sp.block_diag([face_avg[b // dim] for b in range(dim * dim)], format="csr")
    plan = sp.csr_matrix(
        (np.concatenate(vals), (pos, np.concatenate(coeff_idx))), shape=(keys.size, dim * dim * n_tot)
    ) @ face
    indptr = np.searchsorted(keys // n_tot, np.arange(n_tot + 1))
    return plan.tocsr(), (keys % n_tot).astype(np.int64), indptr


def stiffness_matrix(g: MetricField) -> sp.csr_matrix:
    """Symmetric matrix ``K`` with ``u^T K v = sum sqrt(g) g^ij d_i u d_j v dx``."""
    grid = g.grid
    plan, indices, indptr = _stiffness_plan(grid)
    coeff = (g.sqrt_det * g.inverse_full).ravel()
    data = (plan @ coeff) * grid.cell_volume
    n = grid.node_count
    return sp.csr_matrix((data, indices, indptr), shape=(n, n))


def _stiffness_matrix_reference(g: MetricField) -> sp.csr_matrix:
    """Direct sparse-product assembly, kept as a cross-check for the plan."""
    grid = g.grid
    forward, face_avg, mixed = _stencil_matrices(grid)
    coeff = g.sqrt_det * g.inverse_full
    K = None
    for i in range(grid.dim):
        for j in range(grid.dim):
            a_face = face_avg[i] @ coeff[i, j].ravel()
            W = sp.diags(a_face)
            if i == j:
                term = forward[i].T @ W @ forward[i]
            else:
                B = mixed[i, j]
                term = 0.5 * (forward[i].T @ W @ B + B.T @ W @ forward[i])
            K = term if K is None else K + term
    return (K * grid.cell_volume).tocsr()


def mass_vector(g: MetricField) -> np.ndarray:
    """Diagonal of the ``dV_g`` mass matrix, flattened."""
    return (g.sqrt_det * g.grid.cell_volume).ravel()


def laplace_beltrami(u: ScalarField, g: MetricField) -> ScalarField:
    check_same_grid(u, g)
    K = stiffness_matrix(g)
    return ScalarField(g.grid, (-(K @ u.values.ravel()) / mass_vector(g)).reshape(g.grid.shape))


def _laplace_components(h: np.ndarray, g: MetricField) -> np.ndarray:
    K = stiffness_matrix(g)
    m = mass_vector(g)
    flat = h.reshape(h.shape[0], -1)
    return (-(K @ flat.T).T / m).reshape(h.shape)


# ---------------------------------------------------------------------------
# Lichnerowicz-type operators on symmetric 2-tensors


class LichnerowiczVariant(enum.Enum):
    LICHNEROWICZ = (1.0, 2.0)  # Delta + 2 Rm
    HALF_LINEARIZATION = (0.5, 1.0)  # Delta / 2 + Rm


def rough_laplacian(h: SymTensorField, g: MetricField, gamma: ChristoffelField | None = None) -> SymTensorField:
    """``g^{kl} nabla_k nabla_l h`` with the principal part in divergence form."""
    check_same_grid(h, g)
    grid = g.grid
    hf = h.full()
    n = grid.dim
    comp = _laplace_components(hf.reshape(n * n, *grid.shape), g).reshape(hf.shape)
    if g.is_constant:
        return SymTensorField.from_full(grid, comp)
    gamma = christoffel(g) if gamma is None else gamma
    G = gamma.comps
    ginv = g.inverse_full
    nh = covariant_derivative_sym(hf, grid, gamma)
    # Gamma^m_ki h_mj + Gamma^m_kj h_im, indexed [k, i, j]
    gh = np.einsum("mki...,mj...->kij...", G, hf) + np.einsum("mkj...,im...->kij...", G, hf)
    d_gh = gradient(gh, grid)  # [l, k, i, j]
    corr = -np.einsum("kl...,lkij...->ij...", ginv, d_gh)
    corr += np.einsum("kl...,plk...,pij...->ij...", ginv, G, gh)
    corr -= np.einsum("kl...,pli...,kpj...->ij...", ginv, G, nh)
    corr -= np.einsum("kl...,plj...,kip...->ij...", ginv, G, nh)
    return SymTensorField.from_full(grid, comp + corr)


def curvature_action(h: SymTensorField, g: MetricField, gamma: ChristoffelField | None = None) -> SymTensorField:
    """``Rm(h)_ij = R_{kilj} h^{kl}``, normalised so that ``Rm(g) = Ric``."""
    if g.is_constant:
        return SymTensorField.zeros(g.grid)
    R = riemann(g, gamma)
    R_low = np.einsum("ae...,ebcd...->abcd...", g.full(), R)
    ginv = g.inverse_full
    h_up = np.einsum("ka...,ab...,lb...->kl...", ginv, h.full(), ginv)
    return SymTensorField.from_full(g.grid, np.einsum("kilj...,kl...->ij...", R_low, h_up))


def lichnerowicz_apply(
    h: SymTensorField,
    g: MetricField,
    variant: LichnerowiczVariant = LichnerowiczVariant.LICHNEROWICZ,
) -> SymTensorField:
    lap_scale, rm_scale = variant.value
    gamma = None if g.is_constant else christoffel(g)
    out = lap_scale * rough_laplacian(h, g, gamma)
    if not g.is_constant:
        out = out + rm_scale * curvature_action(h, g, gamma)
    return out


# ---------------------------------------------------------------------------
# Inner products and norms


def pointwise_inner(a: SymTensorField | ScalarField, b, g: MetricField) -> np.ndarray:
    if isinstance(a, ScalarField):
        return a.values * b.values
    ginv = g.inverse_full
    return np.einsum("ik...,jl...,ij...,kl...->...", ginv, ginv, a.full(), b.full())


def pointwise_norm(a: SymTensorField, g: MetricField) -> np.ndarray:
    return np.sqrt(np.maximum(pointwise_inner(a, a, g), 0.0))


def inner_weighted(a, b, g: MetricField, f: ScalarField | None = None) -> float:
    """``sum_nodes <a, b>_g e^{-f} sqrt(det g) prod h_i``."""
    if type(a) is not type(b) and not (isinstance(a, SymTensorField) and isinstance(b, SymTensorField)):
        raise GridMismatch("inner product of mismatched field kinds")
    check_same_grid(a, b, g)
    if f is not None:
        check_same_grid(a, f)
    dens = pointwise_inner(a, b, g) * g.sqrt_det
    if f is not None:
        dens = dens * np.exp(-f.values)
    return float(np.sum(dens.ravel()) * g.grid.cell_volume)


def norm_weighted(a, g: MetricField, f: ScalarField | None = None) -> float:
    return float(np.sqrt(max(inner_weighted(a, a, g, f), 0.0)))


def norm_ck_proxy(a, k: int) -> float:
    """Discrete stand-in for a ``C^k`` norm.

    Sum over orders ``0..k`` of the largest absolute central difference of
    that order, taken over nodes, components and derivative directions.
    """
    if k not in (0, 1, 2, 3):
        raise ValueError(f"proxy order must be in 0..3, got {k}")
    grid = a.grid
    data = a.values if isinstance(a, ScalarField) else a.comps
    total = float(np.max(np.abs(data)))
    for order in range(1, k + 1):
        total += max(float(np.max(np.abs(d))) for _, d in derivative_ladder(data, grid, order))
    return total


def total_scalar_curvature(g: MetricField) -> float:
    """``int R dV_g``; zero on the 2-torus up to discretisation error."""
    R = scalar_curvature(g)
    return float(np.sum((R.values * g.sqrt_det).ravel()) * g.grid.cell_volume)


def max_ricci_norm(g: MetricField, ric: SymTensorField | None = None) -> float:
    ric = ricci(g) if ric is None else ric
    return float(np.max(pointwise_norm(ric, g)))


__all__ = [
    "ChristoffelField",
    "LichnerowiczVariant",
    "christoffel",
    "covariant_derivative_covector",
    "curvature_action",
    "divergence_sym",
    "gradient_vector",
    "hessian",
    "inner_weighted",
    "laplace_beltrami",
    "lichnerowicz_apply",
    "lie_derivative_metric",
    "lower",
    "mass_vector",
    "max_ricci_norm",
    "metric_inverse",
    "norm_ck_proxy",
    "norm_weighted",
    "pointwise_inner",
    "pointwise_norm",
    "raise_index",
    "ricci",
    "riemann",
    "rough_laplacian",
    "scalar_curvature",
    "stiffness_matrix",
    "sym_derivative",
    "sym_pairs",
    "total_scalar_curvature",
]
