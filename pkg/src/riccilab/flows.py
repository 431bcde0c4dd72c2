"""Explicit time integration of Ricci, Ricci-DeTurck and the modified flow.

* RICCI:    d/dt g = -2 Ric(g)
* DETURCK:  d/dt g = -2 Ric(g) + L_W g,  W^k = g^ij (Gamma(g)^k_ij - Gamma(g_hat)^k_ij)
* MODIFIED: d/dt g = -2 (Ric(g) + Hess_g f_g), f_g the lambda minimiser

All three are stepped with classical RK4 under a parabolic step limit.
"""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .diagnostics import DiagnosticsRecord, with_lambda_derivative
from .errors import CflViolation, RiccilabError, SpdViolation
from .fields import MetricField, SymTensorField, VectorField
from .geometry import (
    christoffel,
    lie_derivative_metric,
    max_ricci_norm,
    norm_ck_proxy,
    norm_weighted,
    ricci,
    scalar_curvature,
)
from .spectral import DEFAULT_TOL, SpectralResult, lambda_gradient, lambda_of, residual_of

logger = logging.getLogger(__name__)

DEFAULT_C_CFL = 0.2


@dataclass(frozen=True, eq=False)
class FlowKind:
    name: str
    background: MetricField | None = None

    def __post_init__(self):
        if self.name not in ("ricci", "deturck", "modified"):
            raise ValueError(f"unknown flow kind {self.name!r}")
        if self.name == "deturck":
            if self.background is None:
                raise ValueError("DeTurck flow needs a background metric")

    @classmethod
    def ricci(cls):
        return cls("ricci")

    @classmethod
    def modified(cls):
        return cls("modified")

    @classmethod
    def deturck(cls, background: MetricField):
        return cls("deturck", background)

    def __repr__(self):
        return f"FlowKind.{self.name.upper()}"


RICCI = FlowKind.ricci()
MODIFIED = FlowKind.modified()


@dataclass(frozen=True, eq=False)
class FlowState:
    t: float
    g: MetricField
    spec: SpectralResult | None = None

    def __post_init__(self):
        if self.spec is not None:
            if self.spec.w.grid != self.g.grid:
                raise ValueError("cached spectral result lives on another grid")

    def validated(self, tol: float = DEFAULT_TOL) -> "FlowState":
        """Recheck the cached eigenpair against ``g`` (residual <= 10 tol)."""
        if self.spec is not None:
            res = residual_of(self.g, self.spec)
            if res > 10.0 * tol * max(1.0, abs(self.spec.lam)):
                raise ValueError(f"cached eigenpair is stale (residual {res:.3e})")
        return self

    def with_spec(self, tol: float = DEFAULT_TOL) -> "FlowState":
        if self.spec is not None:
            return self
        return FlowState(self.t, self.g, lambda_of(self.g, tol))


class TerminalReason(str, enum.Enum):
    T_END = "T_END"
    CONVERGED = "CONVERGED"
    BALL_ESCAPE = "BALL_ESCAPE"
    RECORDED_SINGULARITY = "RECORDED_SINGULARITY"
    WALL_BUDGET = "WALL_BUDGET"


@dataclass
class Trajectory:
    states: list[FlowState]
    records: list[DiagnosticsRecord]
    kind: FlowKind | list[tuple[float, FlowKind]]
    reason: TerminalReason | None = None
    steps: int = 0
    detail: str = ""

    @property
    def final(self) -> FlowState:
        return self.states[-1]


class FlowError(RiccilabError):
    """A step failed for a reason other than blow-up; carries the partial run."""

    def __init__(self, message, trajectory: Trajectory, cause: Exception):
        super().__init__(message)
        self.trajectory = trajectory
        self.cause = cause


# ---------------------------------------------------------------------------


def cfl_limit(g: MetricField, c_cfl: float = DEFAULT_C_CFL) -> float:
    """``c_cfl * min h^2 / (4 * max eigenvalue of g^{-1})``."""
    min_eig = float(np.linalg.eigvalsh(g.nodal())[..., 0].min())
    return c_cfl * min(g.grid.spacing) ** 2 * min_eig / 4.0


def _velocity(g: MetricField, kind: FlowKind, w_guess=None, tol=DEFAULT_TOL, spec=None):
    """Velocity of ``kind`` at ``g`` plus the eigenpair used (MODIFIED only)."""
    if g.is_constant and (kind.name != "deturck" or kind.background.is_constant):
        return SymTensorField.zeros(g.grid), spec
    gamma = christoffel(g)
    ric = ricci(g, gamma)
    if kind.name == "ricci":
        return -2.0 * ric, spec
    if kind.name == "deturck":
        bg = kind.background
        diff = gamma.comps - christoffel(bg).comps
        W = VectorField(g.grid, np.einsum("ij...,kij...->k...", g.inverse_full, diff))
        return -2.0 * ric + lie_derivative_metric(W, g, gamma), spec
    if spec is None:
        spec = lambda_of(g, tol, w0=w_guess, R=scalar_curvature(g, ric))
    return 2.0 * lambda_gradient(g, spec, ric=ric, gamma=gamma), spec


def velocity(state: FlowState, kind: FlowKind, tol: float = DEFAULT_TOL) -> SymTensorField:
    v, _ = _velocity(state.g, kind, tol=tol, spec=state.spec)
    return v


def step(
    state: FlowState,
    dt: float,
    kind: FlowKind,
    c_cfl: float = DEFAULT_C_CFL,
    tol: float = DEFAULT_TOL,
) -> FlowState:
    """One classical RK4 step. The returned state carries no eigenpair."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    limit = cfl_limit(state.g, c_cfl)
    if dt > limit * (1.0 + 1e-12):
        raise CflViolation(f"dt={dt:.3e} exceeds parabolic limit {limit:.3e} (c_cfl={c_cfl})")
    g = state.g
    w = state.spec.w if state.spec is not None else None
    k1, s1 = _velocity(g, kind, w, tol, state.spec)
    w = s1.w if s1 is not None else w
    k2, s2 = _velocity(MetricField.from_tensor(g + (0.5 * dt) * k1, g.spd_floor), kind, w, tol)
    w = s2.w if s2 is not None else w
    k3, s3 = _velocity(MetricField.from_tensor(g + (0.5 * dt) * k2, g.spd_floor), kind, w, tol)
    w = s3.w if s3 is not None else w
    k4, _ = _velocity(MetricField.from_tensor(g + dt * k3, g.spd_floor), kind, w, tol)
    incr = (dt / 6.0) * (k1.comps + 2.0 * k2.comps + 2.0 * k3.comps + k4.comps)
    return FlowState(state.t + dt, MetricField(g.grid, g.comps + incr, g.spd_floor))


# ---------------------------------------------------------------------------


@dataclass
class Controls:
    dt: float | None = None  # None: use the CFL limit at every step
    c_cfl: float = DEFAULT_C_CFL
    eigen_tol: float = DEFAULT_TOL
    record_every: int = 1
    store_every: int = 200
    proxy_order: int = 2
    base: MetricField | None = None  # reference for dist_to_base_ck; flat if None
    ric_tol: float = 1e-6
    grad_tol: float = 1e-8
    converge_after: float | None = None  # None disables the convergence stop
    ball_radius: float | None = None
    ball_after: float = 0.0
    ric_ceiling: float = 1e8
    wall_budget: float | None = None


def _schedule(kind) -> list[tuple[float, FlowKind]]:
    if isinstance(kind, FlowKind):
        return [(0.0, kind)]
    phases = sorted(((float(t), k) for t, k in kind), key=lambda p: p[0])
    if not phases or phases[0][0] != 0.0:
        raise ValueError("a flow schedule must start at t = 0")
    return phases


def _kind_at(phases, t):
    current = phases[0][1]
    nxt = math.inf
    for t0, k in phases:
        if t0 <= t + 1e-12:
            current = k
        else:
            nxt = min(nxt, t0)
    return current, nxt


def make_record(state: FlowState, kind: FlowKind, controls: Controls) -> DiagnosticsRecord:
    g, spec = state.g, state.spec
    gamma = christoffel(g)
    ric = ricci(g, gamma)
    grad = lambda_gradient(g, spec, ric=ric, gamma=gamma)
    vel, _ = _velocity(g, kind, spec=spec, tol=controls.eigen_tol)
    base = controls.base if controls.base is not None else MetricField.flat(g.grid)
    return DiagnosticsRecord(
        t=state.t,
        lam=spec.lam,
        grad_norm=norm_weighted(grad, g, spec.f),
        velocity_l2=norm_weighted(vel, g, spec.f),
        velocity_ck=norm_ck_proxy(vel, controls.proxy_order),
        dist_to_base_ck=norm_ck_proxy(g - base, controls.proxy_order),
        max_ric=max_ricci_norm(g, ric),
    )


def integrate(g0: MetricField, kind, t_end: float, controls: Controls | None = None) -> Trajectory:
    """Integrate from ``g0`` to ``t_end`` under ``kind`` (a FlowKind or a list of
    ``(t_start, FlowKind)`` phases).

    A record is appended for the initial state and then every
    ``record_every`` accepted steps. Blow-up (SPD loss or curvature above the
    ceiling) ends the run with ``RECORDED_SINGULARITY``; other step failures
    raise :class:`FlowError` with the partial trajectory attached.
    """
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    controls = controls or Controls()
    phases = _schedule(kind)
    started = time.monotonic()
    tol = controls.eigen_tol

    state = FlowState(0.0, g0, lambda_of(g0, tol))
    traj = Trajectory([state], [], kind)
    traj.records.append(make_record(state, phases[0][1], controls))
    last_w = state.spec.w

    def finish(reason, detail=""):
        nonlocal state
        if state.spec is None:
            state = FlowState(state.t, state.g, lambda_of(state.g, tol, w0=last_w))
        if traj.states[-1].t != state.t:
            traj.states.append(state)
        else:
            traj.states[-1] = state
        if traj.records[-1].t != state.t:
            traj.records.append(make_record(state, _kind_at(phases, state.t)[0], controls))
        traj.records = with_lambda_derivative(traj.records)
        traj.reason = reason
        traj.detail = detail
        return traj

    eps_t = 1e-12 * max(1.0, t_end)
    while state.t < t_end - eps_t:
        current, next_switch = _kind_at(phases, state.t)
        horizon = min(t_end, next_switch)
        vel, _ = _velocity(state.g, current, spec=state.spec, tol=tol)
        try:
            stationary = not np.any(vel.comps)
            if stationary:
                # fixed point: RK4 is exact for any step length
                new = FlowState(horizon, state.g)
            else:
                dt = controls.dt if controls.dt is not None else cfl_limit(state.g, controls.c_cfl)
                dt = min(dt, horizon - state.t)
                new = step(state, dt, current, controls.c_cfl, tol)
            traj.steps += 1
            kind_now = _kind_at(phases, new.t)[0]
            due = stationary or traj.steps % controls.record_every == 0 or new.t >= t_end - eps_t
            if due or kind_now.name == "modified":
                w_prev = last_w if state.spec is None else state.spec.w
                new = FlowState(new.t, new.g, lambda_of(new.g, tol, w0=w_prev))
                last_w = new.spec.w
        except SpdViolation as exc:
            logger.info("SPD loss at t=%.6g: %s", state.t, exc)
            return finish(TerminalReason.RECORDED_SINGULARITY, str(exc))
        except RiccilabError as exc:
            finish(None, str(exc))
            raise FlowError(f"integration failed at t={state.t:.6g}: {exc}", traj, exc) from exc

        state = new
        if traj.steps % controls.store_every == 0:
            traj.states.append(state)
        if not due:
            continue
        rec = make_record(state, kind_now, controls)
        traj.records.append(rec)
        if rec.max_ric > controls.ric_ceiling:
            return finish(TerminalReason.RECORDED_SINGULARITY, f"max|Ric| = {rec.max_ric:.3e}")
        if (
            controls.ball_radius is not None
            and state.t >= controls.ball_after - eps_t
            and rec.dist_to_base_ck > controls.ball_radius
        ):
            return finish(TerminalReason.BALL_ESCAPE, f"dist = {rec.dist_to_base_ck:.3e}")
        if (
            controls.converge_after is not None
            and state.t >= controls.converge_after - eps_t
            and rec.max_ric <= controls.ric_tol
            and rec.grad_norm <= controls.grad_tol
        ):
            return finish(TerminalReason.CONVERGED)
        if controls.wall_budget is not None and time.monotonic() - started > controls.wall_budget:
            return finish(TerminalReason.WALL_BUDGET)
    return finish(TerminalReason.T_END)
