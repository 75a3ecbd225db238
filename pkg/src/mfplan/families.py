"""Analytic marginal and potential families for self-contained instances.

Marginals and potentials are sampled both at cell centers and at cell
edges (nodes).  The two samplings share a single normalization constant —
the cell-sum one — so that closed-form relations like
log m = -V/eps - log Z hold exactly at the nodes as well; the dual
solver's boundary rows depend on that.
"""
from __future__ import annotations

import numpy as np

from .grids import SpaceTimeGrid


class FamilyError(ValueError):
    """Unknown family name or malformed parameters."""


def _torus_dist(x: np.ndarray, center: float, grid: SpaceTimeGrid) -> np.ndarray:
    if not grid.periodic:
        return np.abs(x - center)
    L = grid.length
    d = np.abs((x - center) % L)
    return np.minimum(d, L - d)


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------

def potential_on_grid(cfg: dict, grid: SpaceTimeGrid) -> tuple[np.ndarray, np.ndarray]:
    """(V at cells, V at nodes) for a potential config {family, ...}."""
    cfg = dict(cfg or {"family": "zero"})
    family = cfg.pop("family", "zero")
    xc, xn = grid.x_cells(), grid.x_nodes()
    if family == "zero":
        _reject_extras("potential", cfg)
        return np.zeros_like(xc), np.zeros_like(xn)
    if family == "quadratic":
        scale = float(cfg.pop("scale", 1.0))
        center = float(cfg.pop("center", 0.0))
        _reject_extras("potential", cfg)
        fn = lambda x: 0.5 * scale * (x - center) ** 2
        return fn(xc), fn(xn)
    if family == "cosine":
        amplitude = float(cfg.pop("amplitude", 1.0))
        periods = int(cfg.pop("periods", 1))
        _reject_extras("potential", cfg)
        fn = lambda x: amplitude * np.cos(
            2.0 * np.pi * periods * (x - grid.x_min) / grid.length
        )
        return fn(xc), fn(xn)
    if family == "csv":
        values = np.asarray(cfg.pop("values"), dtype=float)
        _reject_extras("potential", cfg)
        if values.shape != (grid.n_x,):
            raise FamilyError(
                f"potential.values must hold {grid.n_x} cell values"
            )
        return values, None  # nodes by interpolation (ProblemSpec default)
    raise FamilyError(f"unknown potential family {family!r}")


# ---------------------------------------------------------------------------
# marginals
# ---------------------------------------------------------------------------

def _raw_marginal(cfg: dict, grid: SpaceTimeGrid, x: np.ndarray,
                  V_of_x, epsilon: float) -> np.ndarray:
    cfg = dict(cfg)
    family = cfg.pop("family")
    if family == "uniform":
        _reject_extras("marginal", cfg)
        return np.ones_like(x)
    if family == "gaussian":
        mean = float(cfg.pop("mean", 0.5 * (grid.x_min + grid.x_max)))
        std = float(cfg.pop("std", 0.25 * grid.length))
        _reject_extras("marginal", cfg)
        if std <= 0:
            raise FamilyError("marginal.std must be positive")
        return np.exp(-0.5 * ((x - mean) / std) ** 2)
    if family == "gibbs":
        _reject_extras("marginal", cfg)
        if epsilon <= 0:
            raise FamilyError("gibbs marginal requires coupling.epsilon > 0")
        return np.exp(-V_of_x(x) / epsilon)
    if family == "bump":
        center = float(cfg.pop("center", 0.5 * (grid.x_min + grid.x_max)))
        width = float(cfg.pop("width", 0.1 * grid.length))
        floor = float(cfg.pop("floor", 1e-3))
        _reject_extras("marginal", cfg)
        if width <= 0:
            raise FamilyError("marginal.width must be positive")
        d = _torus_dist(x, center, grid)
        return np.exp(-0.5 * (d / width) ** 2) + floor
    if family == "mixture":
        components = cfg.pop("components")
        weights = np.asarray(cfg.pop("weights"), dtype=float)
        _reject_extras("marginal", cfg)
        if len(components) != len(weights) or np.any(weights < 0):
            raise FamilyError("marginal.weights must match components, >= 0")
        total = np.zeros_like(x)
        for wgt, comp in zip(weights, components):
            raw = _raw_marginal(comp, grid, x, V_of_x, epsilon)
            total += wgt * raw / np.sum(
                _raw_marginal(comp, grid, grid.x_cells(), V_of_x, epsilon)
                * grid.dx
            )
        return total
    if family == "csv":
        values = np.asarray(cfg.pop("values"), dtype=float)
        _reject_extras("marginal", cfg)
        if values.shape != x.shape:
            raise FamilyError("marginal.values length must match the sampling")
        return values
    raise FamilyError(f"unknown marginal family {family!r}")


def marginal_on_grid(cfg: dict, grid: SpaceTimeGrid, V_cells: np.ndarray,
                     V_nodes: np.ndarray | None,
                     epsilon: float) -> tuple[np.ndarray, np.ndarray | None]:
    """(cells, nodes) sampling of a marginal config, sharing one normalizer."""
    xc = grid.x_cells()

    def V_of_x(x):
        if np.array_equal(x, xc):
            return V_cells
        if V_nodes is not None and np.array_equal(x, grid.x_nodes()):
            return V_nodes
        raise FamilyError("gibbs marginal needs an analytic potential family")

    family = cfg.get("family")
    if family is None:
        raise FamilyError("marginal block needs a 'family' key")
    cells = _raw_marginal(cfg, grid, xc, V_of_x, epsilon)
    Z = float(np.sum(cells) * grid.dx)
    if Z <= 0 or not np.all(np.isfinite(cells)) or np.any(cells <= 0):
        raise FamilyError(f"marginal family {family!r} is not strictly positive")
    if family == "csv" or (family == "gibbs" and V_nodes is None):
        return cells / Z, None  # nodes by interpolation
    nodes = _raw_marginal(cfg, grid, grid.x_nodes(), V_of_x, epsilon)
    return cells / Z, nodes / Z


def _reject_extras(block: str, leftover: dict):
    if leftover:
        key = sorted(leftover)[0]
        raise FamilyError(f"unknown key {block}.{key}")
