"""Checks of the lambda inequalities along computed trajectories.

Everything here is a pure function of recorded data. Reports are plain
dataclasses with a ``passed`` verdict plus the numbers behind it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.sparse.linalg as spla

from .errors import InsufficientData, NoConvergence
from .fields import MetricField, SymTensorField, sym_multiplicity
from .geometry import LichnerowiczVariant, lichnerowicz_apply

LAMBDA_FLOOR = 1e-12


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    lam: float
    grad_norm: float
    velocity_l2: float
    velocity_ck: float
    dist_to_base_ck: float
    max_ric: float
    dlambda_dt: float = math.nan

    CSV_COLUMNS = (
        "t",
        "lambda",
        "grad_norm",
        "velocity_l2",
        "velocity_ck",
        "dist_to_base_ck",
        "max_ric",
        "dlambda_dt",
    )

    def row(self) -> tuple[float, ...]:
        return (
            self.t,
            self.lam,
            self.grad_norm,
            self.velocity_l2,
            self.velocity_ck,
            self.dist_to_base_ck,
            self.max_ric,
            self.dlambda_dt,
        )


def with_lambda_derivative(records: Sequence[DiagnosticsRecord]) -> list[DiagnosticsRecord]:
    """Fill ``dlambda_dt`` by centred differences on the (possibly uneven) time grid.

    The first and last records keep NaN.
    """
    out = list(records)
    for k in range(1, len(out) - 1):
        t0, t1, t2 = out[k - 1].t, out[k].t, out[k + 1].t
        l0, l1, l2 = out[k - 1].lam, out[k].lam, out[k + 1].lam
        h0, h1 = t1 - t0, t2 - t1
        # second-order derivative of the interpolating parabola at t1
        d = (-h1 / (h0 * (h0 + h1))) * l0 + ((h1 - h0) / (h0 * h1)) * l1 + (h0 / (h1 * (h0 + h1))) * l2
        out[k] = replace(out[k], dlambda_dt=d)
    return out


def _records(traj_or_records):
    return list(getattr(traj_or_records, "records", traj_or_records))


# ---------------------------------------------------------------------------
# Monotonicity


@dataclass
class MonotonicityReport:
    decreases: list[int]
    max_decrease: float
    max_relative_mismatch: float
    mismatch_window: tuple[float, float] | None
    window_size: int
    tolerance: float
    mismatch_tolerance: float

    @property
    def passed(self) -> bool:
        return not self.decreases and self.max_relative_mismatch <= self.mismatch_tolerance


def _mid_window(records, resolve_floor):
    """Interior records whose derivative is resolved, trimmed to the middle half."""
    resolved = [
        k
        for k in range(1, len(records) - 1)
        if math.isfinite(records[k].dlambda_dt) and 2.0 * records[k].grad_norm**2 >= resolve_floor
    ]
    if not resolved:
        return []
    lo = len(resolved) // 4
    hi = len(resolved) - lo
    return resolved[lo:hi]


def monotonicity_report(
    traj,
    tol: float = 1e-10,
    mismatch_tol: float = 0.05,
    resolve_floor: float = 1e-6,
) -> MonotonicityReport:
    """Check ``lambda`` is nondecreasing and ``dlambda/dt`` against ``2 |grad lambda|^2``.

    The comparison is done on the middle half of the interior records where
    ``2 |grad|^2`` exceeds ``resolve_floor``; below that the centred
    difference is dominated by eigen-solver noise divided by the step size.
    """
    records = _records(traj)
    if len(records) < 3:
        raise InsufficientData(f"need >= 3 records, got {len(records)}")
    drops = [records[k].lam - records[k + 1].lam for k in range(len(records) - 1)]
    decreases = [k + 1 for k, d in enumerate(drops) if d > tol]
    window = _mid_window(records, resolve_floor)
    worst = 0.0
    for k in window:
        target = 2.0 * records[k].grad_norm**2
        worst = max(worst, abs(records[k].dlambda_dt - target) / target)
    span = (records[window[0]].t, records[window[-1]].t) if window else None
    return MonotonicityReport(
        decreases=decreases,
        max_decrease=max(drops) if drops else 0.0,
        max_relative_mismatch=worst,
        mismatch_window=span,
        window_size=len(window),
        tolerance=tol,
        mismatch_tolerance=mismatch_tol,
    )


# ---------------------------------------------------------------------------
# Evolution inequality


@dataclass
class EvolutionReport:
    violations: list[int]
    worst_margin: float
    checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return not self.violations


def evolution_inequality_check(traj, n: int, tol: float = 1e-8) -> EvolutionReport:
    """``dlambda/dt >= (2/n) lambda^2 - tol`` at every interior record."""
    records = _records(traj)
    if len(records) < 3:
        raise InsufficientData(f"need >= 3 records, got {len(records)}")
    violations = []
    worst = math.inf
    checked = 0
    for k in range(1, len(records) - 1):
        r = records[k]
        if not math.isfinite(r.dlambda_dt):
            continue
        margin = r.dlambda_dt - (2.0 / n) * r.lam**2
        worst = min(worst, margin)
        checked += 1
        if margin < -tol:
            violations.append(k)
    return EvolutionReport(violations, worst if checked else 0.0, checked, tol)


# ---------------------------------------------------------------------------
# Lojasiewicz exponent


@dataclass
class LojasiewiczReport:
    theta_fit: float
    fit_intercept: float
    r_squared: float
    inequality_theta: float
    violations: int
    samples: int
    sigma: float | None = None
    eta: float | None = None

    @property
    def passed(self) -> bool:
        return self.violations == 0


def lojasiewicz_report(
    samples: Sequence[tuple[float, float]],
    inequality_theta: float,
    eta: float | None = None,
    floor: float = LAMBDA_FLOOR,
) -> LojasiewiczReport:
    """Fit ``log|grad| = (1 - theta) log|lambda| + b`` and count pointwise failures
    of ``|grad| >= |lambda|^(1 - inequality_theta)``.

    Samples with ``|lambda| <= floor`` are dropped. ``sigma = theta - eta +
    theta*eta`` is reported when ``eta`` is given.
    """
    kept = [(abs(l), gn) for l, gn in samples if abs(l) > floor and gn > 0]
    if len(kept) < 10:
        raise InsufficientData(f"need >= 10 samples above the lambda floor, got {len(kept)}")
    x = np.log([k[0] for k in kept])
    y = np.log([k[1] for k in kept])
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    theta = 1.0 - float(slope)
    bound = [lam ** (1.0 - inequality_theta) for lam, _ in kept]
    violations = sum(1 for (lam, gn), b in zip(kept, bound) if gn < b)
    sigma = None if eta is None else theta - eta + theta * eta
    return LojasiewiczReport(theta, float(intercept), r2, inequality_theta, violations, len(kept), sigma, eta)


def lojasiewicz_samples(traj, radius: float | None = None) -> list[tuple[float, float]]:
    """``(lambda, grad_norm)`` pairs from records inside the proxy ball."""
    return [
        (r.lam, r.grad_norm)
        for r in _records(traj)
        if radius is None or r.dist_to_base_ck <= radius
    ]


# ---------------------------------------------------------------------------
# Interpolation constant and travel


@dataclass
class TravelReport:
    c_interp: float
    travel: float
    bound: float | None
    sigma: float | None
    theta: float | None
    eta: float


def _trapezoid(t, y) -> float:
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t)))


def interpolation_and_travel(traj, eta: float = 0.1, theta: float | None = None) -> TravelReport:
    """Empirical interpolation constant and total ``C^k``-proxy travel.

    ``c_interp = max velocity_ck / velocity_l2^(1-eta)`` over records with
    nonzero velocity. With ``theta`` given, also reports
    ``(C/sigma) |lambda_0|^sigma`` using ``C = c_interp / sigma``. These are
    reported, never asserted: the constants in the continuous argument are
    not explicit.
    """
    records = _records(traj)
    if len(records) < 3:
        raise InsufficientData(f"need >= 3 records, got {len(records)}")
    if not 0.0 < eta < 1.0:
        raise ValueError("eta must lie in (0, 1)")
    ratios = [
        r.velocity_ck / r.velocity_l2 ** (1.0 - eta) for r in records if r.velocity_l2 > 0.0 and r.velocity_ck > 0.0
    ]
    c_interp = max(ratios) if ratios else 0.0
    travel = _trapezoid([r.t for r in records], [r.velocity_ck for r in records])
    sigma = bound = None
    if theta is not None:
        sigma = theta - eta + theta * eta
        if sigma > 0:
            C = c_interp / sigma
            bound = (C / sigma) * abs(records[0].lam) ** sigma
    return TravelReport(c_interp, travel, bound, sigma, theta, eta)


# ---------------------------------------------------------------------------
# Linear stability


def _node_weights(g: MetricField) -> np.ndarray:
    """Per-component weights making the upper-triangle coordinates orthonormal
    for the flat-background tensor inner product."""
    m = sym_multiplicity(g.grid.dim)
    return np.sqrt(m[:, None] * (g.sqrt_det * g.grid.cell_volume).ravel()[None, :])


def linear_stability(
    g_hat: MetricField,
    n_modes: int = 4,
    tol: float = 1e-9,
    variant: LichnerowiczVariant = LichnerowiczVariant.LICHNEROWICZ,
) -> list[float]:
    """Largest eigenvalues of the Lichnerowicz operator on divergence-free tensors.

    Each Krylov vector is projected onto the slice; the gauge complement is
    shifted far below the spectrum so it cannot contaminate the top of it.
    Intended for constant-coefficient (flat) backgrounds, where the operator
    and the projection are both symmetric in the weighted coordinates.
    """
    from .gauge import slice_project

    grid = g_hat.grid
    m = grid.n_sym
    size = m * grid.node_count
    scale = _node_weights(g_hat)
    shift = 8.0 * grid.dim / min(grid.spacing) ** 2

    def to_field(y):
        return SymTensorField(grid, (y.reshape(m, -1) / scale).reshape(m, *grid.shape))

    def to_coords(t):
        return (t.comps.reshape(m, -1) * scale).ravel()

    def matvec(y):
        h = to_field(np.asarray(y).ravel())
        p, _ = slice_project(h, g_hat)
        Lp, _ = slice_project(lichnerowicz_apply(p, g_hat, variant), g_hat)
        return to_coords(Lp) - shift * (to_coords(h) - to_coords(p))

    op = spla.LinearOperator((size, size), matvec=matvec, dtype=float)
    v0 = np.ones(size) + 1e-3 * np.cos(np.arange(size))
    try:
        vals = spla.eigsh(op, k=n_modes, which="LA", tol=tol, v0=v0, return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise NoConvergence(f"Lichnerowicz eigen-solve did not converge: {exc}") from exc
    return sorted((float(v) for v in vals), reverse=True)


def distinct_values(values: Sequence[float], rel: float = 1e-6, abs_tol: float = 1e-6) -> list[float]:
    out: list[float] = []
    for v in sorted(values, reverse=True):
        if not out or abs(v - out[-1]) > max(abs_tol, rel * abs(v)):
            out.append(v)
    return out
