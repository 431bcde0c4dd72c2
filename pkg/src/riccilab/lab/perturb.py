"""Seeded initial data near the flat metric."""

from __future__ import annotations

import itertools

import numpy as np

from ..fields import MetricField, ScalarField, SymTensorField, TorusGrid, sym_pairs
from ..gauge import slice_project
from ..geometry import norm_ck_proxy
from .config import ExperimentConfig


def grid_of(cfg: ExperimentConfig) -> TorusGrid:
    return TorusGrid(cfg.grid.resolution, cfg.grid.periods)


def trig_sum(grid: TorusGrid, rng: np.random.Generator, band_limit: int) -> np.ndarray:
    """Random real trigonometric polynomial with frequencies ``0 < |k|_inf <= band_limit``.

    Coefficients are standard normal, drawn in a fixed order; the result has
    zero mean and unit sup norm over the nodes.
    """
    x = grid.coordinates()
    L = np.asarray(grid.periods).reshape((grid.dim,) + (1,) * grid.dim)
    out = np.zeros(grid.shape)
    for k in itertools.product(range(-band_limit, band_limit + 1), repeat=grid.dim):
        if not any(k):
            continue
        phase = 2.0 * np.pi * np.sum(np.reshape(k, (grid.dim,) + (1,) * grid.dim) * x / L, axis=0)
        a, b = rng.standard_normal(2)
        out += a * np.cos(phase) + b * np.sin(phase)
    out -= out.mean()
    return out / np.abs(out).max()


def conformal_perturbation(grid: TorusGrid, amplitude: float, seed: int, band_limit: int = 3) -> MetricField:
    """``e^{2u} delta`` with ``max |u| = amplitude``."""
    if amplitude == 0:
        return MetricField.flat(grid)
    u = amplitude * trig_sum(grid, np.random.default_rng(seed), band_limit)
    return MetricField.conformal(ScalarField(grid, u))


def slice_perturbation(
    grid: TorusGrid,
    amplitude: float,
    seed: int,
    band_limit: int = 3,
    proxy_order: int = 2,
    base: MetricField | None = None,
) -> MetricField:
    """``g_hat + h`` with ``h`` divergence-free and ``norm_ck_proxy(h) = amplitude``."""
    base = MetricField.flat(grid) if base is None else base
    if amplitude == 0:
        return base
    rng = np.random.default_rng(seed)
    comps = np.stack([trig_sum(grid, rng, band_limit) for _ in sym_pairs(grid.dim)])
    h, _ = slice_project(SymTensorField(grid, comps), base)
    size = norm_ck_proxy(h, proxy_order)
    return MetricField.from_tensor(base + h * (amplitude / size), base.spd_floor)


def make_perturbed_metric(cfg: ExperimentConfig) -> MetricField:
    grid = grid_of(cfg)
    p = cfg.perturbation
    if p.kind == "conformal":
        return conformal_perturbation(grid, p.amplitude, cfg.experiment.seed, p.band_limit)
    return slice_perturbation(grid, p.amplitude, cfg.experiment.seed, p.band_limit, cfg.diagnostics.proxy_order)
