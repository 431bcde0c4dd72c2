"""The shipped experiments and their on-disk outputs.

Every run directory receives ``config.ini`` (the effective configuration),
``diagnostics.csv``, ``summary.json`` and at least one snapshot under
``snapshots/``. Failures still write whatever was computed, with the
summary verdict set to ``ERROR``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..diagnostics import (
    DiagnosticsRecord,
    distinct_values,
    evolution_inequality_check,
    interpolation_and_travel,
    linear_stability,
    lojasiewicz_report,
    lojasiewicz_samples,
    monotonicity_report,
    with_lambda_derivative,
)
from ..errors import InsufficientData, RiccilabError, SpdViolation
from ..fields import MetricField
from ..flows import (
    MODIFIED,
    RICCI,
    Controls,
    FlowError,
    FlowKind,
    FlowState,
    TerminalReason,
    Trajectory,
    cfl_limit,
    integrate,
    make_record,
    step,
)
from ..gauge import DiffeoMap, integrate_diffeo, pullback_metric
from ..geometry import gradient_vector, norm_weighted
from ..spectral import lambda_of
from .config import ExperimentConfig, dump_config
from .perturb import grid_of, make_perturbed_metric
from .snapshot import atomic_write_text, snapshot_write

logger = logging.getLogger(__name__)

PASS, FAIL, ERROR = "PASS", "FAIL", "ERROR"


# ---------------------------------------------------------------------------
# Output helpers


def format_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DiagnosticsRecord.CSV_COLUMNS)
    for r in records:
        w.writerow(["%.17g" % v for v in r.row()])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, TerminalReason):
        return obj.value
    return obj


class RunDir:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.snapshots: list[str] = []

    def write_config(self, cfg: ExperimentConfig):
        atomic_write_text(self.path / "config.ini", dump_config(cfg))

    def write_csv(self, records, name="diagnostics.csv"):
        atomic_write_text(self.path / name, format_csv(records))

    def write_snapshot(self, state: FlowState, tag: str):
        rel = f"snapshots/{tag}.snap"
        snapshot_write(state, self.path / rel)
        self.snapshots.append(rel)

    def write_summary(self, summary: dict):
        summary = dict(summary, snapshots=list(self.snapshots))
        atomic_write_text(self.path / "summary.json", json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")


def _persist_trajectory(run: RunDir, traj: Trajectory, every: int = 1):
    run.write_csv(traj.records)
    for k, s in enumerate(traj.states):
        if k == 0 or k == len(traj.states) - 1 or k % every == 0:
            run.write_snapshot(s, f"t{s.t:.6f}")


def _try(fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except InsufficientData as exc:
        logger.info("report skipped: %s", exc)
        return None


def _controls(cfg: ExperimentConfig, base: MetricField, **extra) -> Controls:
    fl, d = cfg.flow, cfg.diagnostics
    kw = dict(
        dt=fl.dt,
        c_cfl=fl.c_cfl,
        eigen_tol=fl.eigen_tol,
        record_every=fl.record_every,
        store_every=fl.snapshot_every,
        proxy_order=d.proxy_order,
        base=base,
        ric_tol=d.ric_tol,
        grad_tol=d.grad_tol,
    )
    kw.update(extra)
    return Controls(**kw)


def _report_dict(rep):
    if rep is None:
        return None
    out = asdict(rep)
    out["passed"] = rep.passed if hasattr(rep, "passed") else None
    return out


def _travel(records, eta, theta):
    rep = _try(interpolation_and_travel, records, eta, theta)
    if rep is not None:
        return rep.travel, asdict(rep)
    t = [r.t for r in records]
    v = [r.velocity_ck for r in records]
    travel = float(sum(0.5 * (v[k] + v[k + 1]) * (t[k + 1] - t[k]) for k in range(len(t) - 1)))
    return travel, {"travel": travel}


# ---------------------------------------------------------------------------
# Experiments


def _two_phase(cfg: ExperimentConfig, run: RunDir) -> Trajectory:
    """DeTurck flow up to the phase switch, then the modified flow until
    convergence, ball escape or ``t_end``."""
    g0 = make_perturbed_metric(cfg)
    base = MetricField.flat(g0.grid)
    fl, d = cfg.flow, cfg.diagnostics
    controls = _controls(
        cfg,
        base,
        converge_after=fl.phase_switch,
        ball_radius=d.eps_ball,
        ball_after=fl.phase_switch,
    )
    schedule = [(0.0, FlowKind.deturck(base)), (fl.phase_switch, MODIFIED)]
    traj = integrate(g0, schedule, fl.t_end, controls)
    _persist_trajectory(run, traj)
    return traj


def run_stability(cfg: ExperimentConfig, run: RunDir) -> dict:
    traj = _two_phase(cfg, run)
    d = cfg.diagnostics
    dim = traj.states[0].g.grid.dim
    mono = _try(monotonicity_report, traj, mismatch_tol=d.mismatch_tol)
    evo = _try(evolution_inequality_check, traj, dim)
    loj = _try(lojasiewicz_report, lojasiewicz_samples(traj, d.eps_ball), d.inequality_theta, eta=d.eta)
    theta = loj.theta_fit if loj is not None else None
    travel, travel_rep = _travel(traj.records, d.eta, theta)

    final = traj.records[-1]
    converged = traj.reason == TerminalReason.CONVERGED
    ok = converged and all(r is None or r.passed for r in (mono, evo, loj))
    return {
        "verdict": PASS if ok else FAIL,
        "terminal_reason": traj.reason,
        "converged": converged,
        "t_final": final.t,
        "lambda_final": final.lam,
        "final_max_ric": final.max_ric,
        "final_grad_norm": final.grad_norm,
        "travel": travel,
        "theta_fit": theta,
        "steps": traj.steps,
        "reports": {
            "monotonicity": _report_dict(mono),
            "evolution": _report_dict(evo),
            "lojasiewicz": _report_dict(loj),
            "travel": travel_rep,
        },
    }


def run_monotonicity(cfg: ExperimentConfig, run: RunDir) -> dict:
    """Modified flow from the perturbed start; checks both lambda identities."""
    g0 = make_perturbed_metric(cfg)
    d = cfg.diagnostics
    traj = integrate(g0, MODIFIED, cfg.flow.t_end, _controls(cfg, MetricField.flat(g0.grid)))
    _persist_trajectory(run, traj)
    mono = monotonicity_report(traj, mismatch_tol=d.mismatch_tol)
    evo = evolution_inequality_check(traj, g0.grid.dim)
    return {
        "verdict": PASS if mono.passed and evo.passed else FAIL,
        "terminal_reason": traj.reason,
        "lambda_final": traj.records[-1].lam,
        "theta_fit": None,
        "travel": _travel(traj.records, d.eta, None)[0],
        "reports": {"monotonicity": _report_dict(mono), "evolution": _report_dict(evo)},
    }


def run_lojasiewicz(cfg: ExperimentConfig, run: RunDir) -> dict:
    """Exponent fit on the two-phase trajectory, sampled inside the proxy ball.

    ``lambda`` and ``|grad lambda|`` are diffeomorphism invariant, so the
    DeTurck phase samples the same curve as the modified flow would.
    """
    traj = _two_phase(cfg, run)
    d = cfg.diagnostics
    loj = lojasiewicz_report(lojasiewicz_samples(traj, d.eps_ball), d.inequality_theta, eta=d.eta)
    travel, travel_rep = _travel(traj.records, d.eta, loj.theta_fit)
    return {
        "verdict": PASS if loj.passed and loj.r_squared >= 0.95 else FAIL,
        "terminal_reason": traj.reason,
        "lambda_final": traj.records[-1].lam,
        "theta_fit": loj.theta_fit,
        "r_squared": loj.r_squared,
        "travel": travel,
        "reports": {"lojasiewicz": _report_dict(loj), "travel": travel_rep},
    }


def run_linear_stability(cfg: ExperimentConfig, run: RunDir) -> dict:
    """Top of the Lichnerowicz spectrum on divergence-free tensors at the flat metric."""
    g_hat = MetricField.flat(grid_of(cfg))
    state = FlowState(0.0, g_hat, lambda_of(g_hat, cfg.flow.eigen_tol))
    run.write_csv([make_record(state, RICCI, _controls(cfg, g_hat))])
    run.write_snapshot(state, "flat")
    vals = linear_stability(g_hat, cfg.diagnostics.n_modes)
    distinct = distinct_values(vals)
    return {
        "verdict": PASS if vals[0] <= 1e-6 else FAIL,
        "terminal_reason": None,
        "lambda_final": state.spec.lam,
        "theta_fit": None,
        "travel": 0.0,
        "eigenvalues": vals,
        "distinct_eigenvalues": distinct,
        "fourier_first_nonzero": -4.0 * np.pi**2 / max(g_hat.grid.periods) ** 2,
    }


def roundtrip_discrepancy(g0: MetricField, t_end: float, dt: float, c_cfl: float, tol: float, checkpoints: int = 10):
    """Ricci flow two ways: directly, and as the modified flow pulled back by
    the flow of ``+grad f``.

    The step count is rounded up to a multiple of ``2 * checkpoints`` so the
    diffeomorphism can be advanced with RK4 over pairs of flow steps, reading
    its stage values at the flow's own time levels. Returns the modified-flow
    records and the discrepancy table.
    """
    n = int(math.ceil(t_end / dt))
    n += (-n) % (2 * checkpoints)
    dt = t_end / n
    per_check = n // checkpoints
    ricci = FlowState(0.0, g0)
    mod = FlowState(0.0, g0, lambda_of(g0, tol))
    phi = DiffeoMap.identity(g0.grid)
    controls = Controls(dt=dt, c_cfl=c_cfl, eigen_tol=tol)
    records = [make_record(mod, MODIFIED, controls)]
    rows = []

    def X_of(state):
        return gradient_vector(state.spec.f, state.g)

    window = [X_of(mod)]
    for k in range(1, n + 1):
        ricci = step(ricci, dt, RICCI, c_cfl, tol)
        nxt = step(mod, dt, MODIFIED, c_cfl, tol)
        mod = FlowState(nxt.t, nxt.g, lambda_of(nxt.g, tol, w0=mod.spec.w))
        window.append(X_of(mod))
        if k % 2 == 0:
            t0 = (k - 2) * dt
            fields_ = {0: window[0], 1: window[1], 2: window[2]}
            phi = integrate_diffeo(lambda t: fields_[int(round((t - t0) / dt))], t0, t0 + 2 * dt, phi, steps=1)
            window = [window[2]]
        if k % per_check == 0:
            records.append(make_record(mod, MODIFIED, controls))
            rebuilt = pullback_metric(phi, mod.g)
            ref = ricci.g
            diff = norm_weighted(rebuilt - ref, ref)
            rows.append(
                {
                    "t": k * dt,
                    "relative_l2": diff / norm_weighted(ref, ref),
                    "absolute_l2": diff,
                    "without_pullback": norm_weighted(mod.g - ref, ref) / norm_weighted(ref, ref),
                    "jacobian_floor": phi.jacobian_floor,
                }
            )
    return with_lambda_derivative(records), rows, ricci, mod, dt


def run_roundtrip(cfg: ExperimentConfig, run: RunDir) -> dict:
    g0 = make_perturbed_metric(cfg)
    fl = cfg.flow
    dt = fl.dt if fl.dt is not None else cfl_limit(g0, fl.c_cfl)
    records, rows, ricci, mod, dt = roundtrip_discrepancy(g0, fl.t_end, dt, fl.c_cfl, fl.eigen_tol)
    run.write_csv(records)
    table = io.StringIO()
    w = csv.writer(table, lineterminator="\n")
    w.writerow(list(rows[0]))
    for r in rows:
        w.writerow(["%.17g" % v for v in r.values()])
    atomic_write_text(run.path / "roundtrip.csv", table.getvalue())
    run.write_snapshot(FlowState(0.0, g0), "initial")
    run.write_snapshot(ricci, "ricci_final")
    run.write_snapshot(FlowState(mod.t, mod.g), "modified_final")
    final = rows[-1]["relative_l2"]
    return {
        "verdict": PASS if final <= cfg.diagnostics.roundtrip_tol else FAIL,
        "terminal_reason": TerminalReason.T_END,
        "lambda_final": mod.spec.lam,
        "theta_fit": None,
        "travel": _travel(records, cfg.diagnostics.eta, None)[0],
        "dt": dt,
        "relative_l2": final,
        "discrepancy": rows,
    }


EXPERIMENTS = {
    "stability": run_stability,
    "monotonicity": run_monotonicity,
    "lojasiewicz": run_lojasiewicz,
    "linear-stability": run_linear_stability,
    "roundtrip": run_roundtrip,
}


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> tuple[int, dict]:
    """Run ``cfg`` and write its outputs. Returns ``(exit_code, summary)``:
    0 on PASS, 1 on FAIL, 2 when a flow, gauge or spectral error stopped it."""
    run = RunDir(out_dir if out_dir is not None else cfg.experiment.output_dir)
    run.write_config(cfg)
    started = time.monotonic()
    base = {"experiment": cfg.experiment.name, "seed": cfg.experiment.seed}
    try:
        summary = EXPERIMENTS[cfg.experiment.name](cfg, run)
        code = 0 if summary["verdict"] == PASS else 1
    except RiccilabError as exc:
        summary = {"verdict": ERROR, "terminal_reason": None, "error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, SpdViolation):
            summary["node"] = list(exc.node) if exc.node is not None else None
            summary["eigenvalue"] = exc.eigenvalue
        if isinstance(exc, FlowError):
            summary["error"] = type(exc.cause).__name__
            summary["t_failure"] = exc.trajectory.final.t
            _persist_trajectory(run, exc.trajectory)
        if not run.snapshots:
            # aborted runs still leave their initial data behind
            try:
                g0 = make_perturbed_metric(cfg)
                run.write_snapshot(FlowState(0.0, g0), "initial")
            except RiccilabError:
                pass
        if not (run.path / "diagnostics.csv").exists():
            run.write_csv([])
        code = 2
    summary = {**base, **summary, "wall_time": time.monotonic() - started}
    run.write_summary(summary)
    return code, summary
