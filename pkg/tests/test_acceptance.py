"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The default stability run (criteria 5 to 8) is computed once per module.
"""

import csv
import json
import time
from pathlib import Path

import numpy as np
import pytest

from riccilab.diagnostics import (
    DiagnosticsRecord,
    distinct_values,
    evolution_inequality_check,
    linear_stability,
    lojasiewicz_report,
    lojasiewicz_samples,
    monotonicity_report,
)
from riccilab.fields import MetricField, TorusGrid
from riccilab.flows import FlowState
from riccilab.geometry import inner_weighted, total_scalar_curvature
from riccilab.lab.config import load_config, parse_config
from riccilab.lab.experiments import roundtrip_discrepancy, run_experiment
from riccilab.lab.perturb import conformal_perturbation
from riccilab.lab.snapshot import snapshot_read, snapshot_write
from riccilab.spectral import lambda_gradient, lambda_of

from conftest import random_metric, random_tensor, record_acceptance
from oracles import dense_oracle

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def report(number: int, ok: bool, detail: str) -> None:
    record_acceptance(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def load_records(path: Path) -> list[DiagnosticsRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == DiagnosticsRecord.CSV_COLUMNS
    return [DiagnosticsRecord(*(float(v) for v in row)) for row in rows[1:]]


@pytest.fixture(scope="module")
def stability_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("stability")
    cfg = load_config(CONFIGS / "stability.ini")
    started = time.monotonic()
    code, summary = run_experiment(cfg, out)
    wall = time.monotonic() - started
    return cfg, code, summary, load_records(out / "diagnostics.csv"), wall


def test_criterion_01_flat_lambda():
    grid = TorusGrid((32, 32))
    started = time.monotonic()
    spec = lambda_of(MetricField.flat(grid))
    wall = time.monotonic() - started
    w = spec.w.values
    w_spread = (w.max() - w.min()) / w.mean()
    f_dev = np.abs(spec.f.values).max()
    ok = abs(spec.lam) <= 1e-9 and w_spread <= 1e-9 and f_dev <= 1e-9 and wall < 1.0
    report(1, ok, f"lambda={spec.lam:.2e} w spread={w_spread:.2e} max|f|={f_dev:.2e} time={wall:.3f}s")


def test_criterion_02_scaling_law():
    g = conformal_perturbation(TorusGrid((32, 32)), 0.05, 1)
    lam = lambda_of(g).lam
    lam4 = lambda_of(MetricField.from_tensor(g * 4.0)).lam
    rel = abs(lam4 - lam / 4) / abs(lam / 4)
    report(2, rel <= 1e-8, f"lambda={lam:.6e} lambda(4g)={lam4:.6e} relative error={rel:.2e}")


def test_criterion_03_gradient_check():
    grid = TorusGrid((16, 16))
    started = time.monotonic()
    g = conformal_perturbation(grid, 0.05, 1)
    spec = lambda_of(g, 1e-11)
    grad = lambda_gradient(g, spec)
    rng = np.random.default_rng(2024)
    eps = 1e-4
    errors = []
    for _ in range(5):
        h = random_tensor(grid, rng, 1.0, 2)
        lp = lambda_of(MetricField.from_tensor(g + h * eps), 1e-11, w0=spec.w).lam
        lm = lambda_of(MetricField.from_tensor(g - h * eps), 1e-11, w0=spec.w).lam
        fd = (lp - lm) / (2 * eps)
        errors.append(abs(fd - inner_weighted(grad, h, g, spec.f)) / abs(fd))
    wall = time.monotonic() - started
    ok = max(errors) <= 1e-3 and wall < 30
    report(3, ok, "relative errors " + ", ".join(f"{e:.2e}" for e in errors) + f" time={wall:.1f}s")


def test_criterion_04_dense_oracle():
    grid = TorusGrid((16, 16))
    diffs = []
    for seed in (11, 12, 13):
        g = random_metric(grid, np.random.default_rng(seed), 0.1)
        diffs.append(abs(lambda_of(g).lam - dense_oracle(g)))
    report(4, max(diffs) <= 1e-8, "differences " + ", ".join(f"{d:.1e}" for d in diffs))


def test_criterion_05_monotonicity(stability_run):
    _, _, _, records, _ = stability_run
    lam = np.array([r.lam for r in records])
    drops = lam[:-1] - lam[1:]
    n_dec = int(np.sum(drops > 1e-10))
    rep = monotonicity_report(records, tol=1e-10, mismatch_tol=0.05)
    ok = n_dec == 0 and rep.passed
    report(
        5,
        ok,
        f"decreases={n_dec} (largest drop {drops.max():.1e}) "
        f"mid-trajectory mismatch={rep.max_relative_mismatch:.2%} over {rep.window_size} records",
    )


def test_criterion_06_stability(stability_run):
    cfg, code, summary, records, wall = stability_run
    below = [r.t for r in records if r.max_ric <= 1e-6]
    t_hit = below[0] if below else float("inf")
    ok = (
        summary["terminal_reason"] == "CONVERGED"
        and t_hit < cfg.flow.t_end
        and abs(summary["lambda_final"]) <= 1e-8
        and summary["terminal_reason"] != "BALL_ESCAPE"
        and wall < 600
    )
    report(
        6,
        ok,
        f"reason={summary['terminal_reason']} max|Ric|<=1e-6 at t={t_hit:.4f} "
        f"lambda_final={summary['lambda_final']:.2e} time={wall:.0f}s",
    )


def test_criterion_07_lojasiewicz(stability_run):
    cfg, _, _, records, _ = stability_run
    samples = lojasiewicz_samples(records, cfg.diagnostics.eps_ball)
    rep = lojasiewicz_report(samples, inequality_theta=0.1)
    pointwise = sum(1 for lam, gn in samples if abs(lam) > 1e-12 and gn < abs(lam) ** 0.9)
    theta = 0.37
    synth = [(-x, 2.0 * x ** (1 - theta)) for x in np.logspace(-11, -2, 30)]
    synth_err = abs(lojasiewicz_report(synth, 0.1).theta_fit - theta)
    ok = pointwise == 0 and rep.violations == 0 and rep.r_squared >= 0.95 and synth_err <= 1e-6
    report(
        7,
        ok,
        f"violations={pointwise}/{rep.samples} theta_fit={rep.theta_fit:.4f} r2={rep.r_squared:.4f} "
        f"synthetic theta error={synth_err:.1e}",
    )


def test_criterion_08_evolution_inequality(stability_run):
    cfg, _, _, records, _ = stability_run
    rep = evolution_inequality_check(records, n=cfg.grid.dim, tol=1e-8)
    report(8, rep.passed, f"violations={len(rep.violations)}/{rep.checked} worst margin={rep.worst_margin:.2e}")


def test_criterion_09_roundtrip():
    finals = {}
    for N in (16, 32):
        g0 = conformal_perturbation(TorusGrid((N, N)), 0.05, 1)
        _, rows, _, _, _ = roundtrip_discrepancy(g0, 0.1, 1e-4, 0.5, 1e-10)
        finals[N] = rows[-1]["relative_l2"]
    ok = finals[32] <= 5e-3 and finals[32] < finals[16]
    report(9, ok, f"relative L2 at t=0.1: N=16 {finals[16]:.2e}, N=32 {finals[32]:.2e}")


def test_criterion_10_linear_stability():
    vals = linear_stability(MetricField.flat(TorusGrid((32, 32))), n_modes=4)
    distinct = distinct_values(vals)
    target = -4 * np.pi**2
    rel = abs(distinct[1] - target) / abs(target)
    ok = vals[0] <= 1e-6 and rel <= 0.01
    report(10, ok, f"top={vals[0]:.2e} second={distinct[1]:.4f} (target {target:.4f}, off {rel:.2%})")


def test_criterion_11_infrastructure(tmp_path):
    g = random_metric(TorusGrid((16, 24)), np.random.default_rng(5), 0.2)
    state = FlowState(0.5, g)
    snapshot_write(state, tmp_path / "s.snap")
    back = snapshot_read(tmp_path / "s.snap")
    snap_ok = back.t == state.t and np.array_equal(back.g.comps, g.comps)

    cfg = parse_config("[experiment]\nname = monotonicity\nseed = 9\n[grid]\nresolution = 16, 16\n[flow]\nt_end = 0.005\n")
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    csv_ok = (tmp_path / "a" / "diagnostics.csv").read_bytes() == (tmp_path / "b" / "diagnostics.csv").read_bytes()
    csv_ok &= json.loads((tmp_path / "a" / "summary.json").read_text())["lambda_final"] == json.loads(
        (tmp_path / "b" / "summary.json").read_text()
    )["lambda_final"]

    gb = []
    for N in (16, 32, 64):
        gN = random_metric(TorusGrid((N, N)), np.random.default_rng(77), 0.2, kmax=2)
        gb.append(abs(total_scalar_curvature(gN)))
    orders = [np.log2(gb[0] / gb[1]), np.log2(gb[1] / gb[2])]
    gb_ok = min(orders) >= 1.8
    report(
        11,
        snap_ok and csv_ok and gb_ok,
        f"snapshot bit-exact={snap_ok} csv identical={csv_ok} "
        f"Gauss-Bonnet {gb[0]:.1e}/{gb[1]:.1e}/{gb[2]:.1e} orders {orders[0]:.2f}, {orders[1]:.2f}",
    )
