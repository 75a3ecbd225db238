"""Staggered space-time grids and the field/problem value types.

Discretization of Q = (0,T) x Omega for Omega an interval (no-flux) or a
circle.  The grid is staggered:

* densities m live at (time-node, space-cell)            -> (n_t+1, n_x)
* momenta w = m*v live at (time-cell, space-face)        -> (n_t, n_faces)
* potentials u live at (time-node, space-node)           -> (n_t+1, n_nodes)

with n_faces = n_nodes = n_x+1 on the interval and n_x on the torus (faces
and nodes coincide with cell edges; the space index wraps).  This layout
makes the discrete continuity equation m_t = D_x w and the discrete
integration by parts exact, which the duality checks rely on.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .hamiltonian import CouplingSpec, HamiltonianSpec

INTERVAL = "interval-neumann"
TORUS = "torus"
_TOPOLOGIES = (INTERVAL, TORUS)


def _frozen(a) -> np.ndarray:
    out = np.asarray(a, dtype=float).copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform staggered grid on (0,T) x (x_min,x_max)."""

    T: float
    x_min: float
    x_max: float
    n_t: int
    n_x: int
    topology: str = INTERVAL

    def __post_init__(self):
        if not (self.T > 0 and self.x_max > self.x_min):
            raise ValueError("need T > 0 and x_max > x_min")
        if self.n_t < 2 or self.n_x < 2:
            raise ValueError("need n_t >= 2 and n_x >= 2")
        if self.topology not in _TOPOLOGIES:
            raise ValueError(f"unknown topology {self.topology!r}")

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_x

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def periodic(self) -> bool:
        return self.topology == TORUS

    @property
    def n_faces(self) -> int:
        # on the torus face i is the left edge of cell i; face n_x == face 0
        return self.n_x if self.periodic else self.n_x + 1

    @property
    def n_xnodes(self) -> int:
        return self.n_faces

    def t_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_t + 1)

    def t_cells(self) -> np.ndarray:
        return (np.arange(self.n_t) + 0.5) * self.dt

    def x_cells(self) -> np.ndarray:
        return self.x_min + (np.arange(self.n_x) + 0.5) * self.dx

    def x_faces(self) -> np.ndarray:
        return self.x_min + np.arange(self.n_faces) * self.dx

    def x_nodes(self) -> np.ndarray:
        return self.x_faces()

    def div_w(self, w_values: np.ndarray) -> np.ndarray:
        """Discrete spatial divergence, (time-cell, space-cell)."""
        if self.periodic:
            return (np.roll(w_values, -1, axis=-1) - w_values) / self.dx
        return (w_values[..., 1:] - w_values[..., :-1]) / self.dx


@dataclass(frozen=True)
class DensityField:
    grid: SpaceTimeGrid
    values: np.ndarray  # (n_t+1, n_x)

    def __post_init__(self):
        v = _frozen(self.values)
        if v.shape != (self.grid.n_t + 1, self.grid.n_x):
            raise ValueError(f"density shape {v.shape} does not match grid")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class MomentumField:
    grid: SpaceTimeGrid
    values: np.ndarray  # (n_t, n_faces)

    def __post_init__(self):
        v = _frozen(self.values)
        if v.shape != (self.grid.n_t, self.grid.n_faces):
            raise ValueError(f"momentum shape {v.shape} does not match grid")
        if not self.grid.periodic:
            if np.any(v[:, 0] != 0.0) or np.any(v[:, -1] != 0.0):
                raise ValueError("no-flux boundary faces must carry w = 0")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class PotentialField:
    grid: SpaceTimeGrid
    values: np.ndarray  # (n_t+1, n_xnodes)

    def __post_init__(self):
        v = _frozen(self.values)
        if v.shape != (self.grid.n_t + 1, self.grid.n_xnodes):
            raise ValueError(f"potential shape {v.shape} does not match grid")
        if not np.all(np.isfinite(v)):
            raise ValueError("potential must be finite at every node")
        object.__setattr__(self, "values", v)


def mass(density: DensityField, t_index: int) -> float:
    """Discrete spatial integral of the density at one time node."""
    values = density.values
    if not -values.shape[0] <= t_index < values.shape[0]:
        raise IndexError(f"t_index {t_index} out of range")
    return float(np.sum(values[t_index]) * density.grid.dx)


def _lipschitz(values: np.ndarray, dx: float, periodic: bool) -> float:
    """Max forward difference quotient of a per-cell sampled function."""
    if periodic:
        jumps = np.roll(values, -1) - values
    else:
        jumps = np.diff(values)
    return float(np.max(np.abs(jumps)) / dx) if jumps.size else 0.0


@dataclass(frozen=True)
class ProblemSpec:
    """One planning-problem instance on a fixed grid.

    Marginals and the potential are cell-sampled; node-sampled companions
    (used by the dual solver's boundary rows) may be supplied when analytic
    expressions are available, otherwise they are filled by interpolation.
    Marginals are renormalized to unit mass on construction.
    """

    grid: SpaceTimeGrid
    m0: np.ndarray  # (n_x,) cells
    m1: np.ndarray
    V: np.ndarray  # (n_x,) cells
    hamiltonian: "HamiltonianSpec"
    coupling: "CouplingSpec"
    m0_nodes: np.ndarray | None = None
    m1_nodes: np.ndarray | None = None
    V_nodes: np.ndarray | None = None
    mass_defect_m0: float = field(default=0.0, compare=False)
    mass_defect_m1: float = field(default=0.0, compare=False)

    def __post_init__(self):
        g = self.grid
        for name in ("m0", "m1", "V"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (g.n_x,):
                raise ValueError(f"{name} must be cell-sampled with shape ({g.n_x},)")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} contains non-finite values")
            object.__setattr__(self, name, v)
        for name in ("m0", "m1"):
            v = getattr(self, name)
            total = float(np.sum(v) * g.dx)
            if total > 0:
                object.__setattr__(self, f"mass_defect_{name}", abs(total - 1.0))
                object.__setattr__(self, name, _frozen(v / total))
            else:
                object.__setattr__(self, name, _frozen(v))
        object.__setattr__(self, "V", _frozen(self.V))
        for name in ("m0_nodes", "m1_nodes", "V_nodes"):
            v = getattr(self, name)
            if v is None:
                v = _cells_to_nodes(getattr(self, name[:-6]), g)
            else:
                v = np.asarray(v, dtype=float)
                if v.shape != (g.n_xnodes,):
                    raise ValueError(f"{name} must have shape ({g.n_xnodes},)")
            object.__setattr__(self, name, _frozen(v))

    @property
    def lipschitz_V(self) -> float:
        return _lipschitz(self.V, self.grid.dx, self.grid.periodic)


def _cells_to_nodes(cells: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    """Second-order interpolation of cell values to cell edges."""
    if grid.periodic:
        return 0.5 * (cells + np.roll(cells, 1))
    inner = 0.5 * (cells[1:] + cells[:-1])
    left = 1.5 * cells[0] - 0.5 * cells[1]
    right = 1.5 * cells[-1] - 0.5 * cells[-2]
    return np.concatenate([[left], inner, [right]])


@dataclass(frozen=True)
class ValidationReport:
    admissible: bool
    reasons: tuple[str, ...]
    mass_defect_m0: float
    mass_defect_m1: float
    min_density: float
    lipschitz_log_m0: float
    lipschitz_log_m1: float
    lipschitz_V: float


def validate_problem(spec: ProblemSpec) -> ValidationReport:
    """Check the standing hypotheses: positive marginals, unit mass, finite data."""
    g = spec.grid
    reasons = []
    min_density = float(min(spec.m0.min(), spec.m1.min()))
    if min_density <= 0.0:
        reasons.append("positivity")
    mass0 = float(np.sum(spec.m0) * g.dx)
    mass1 = float(np.sum(spec.m1) * g.dx)
    if abs(mass0 - 1.0) > 1e-12 or abs(mass1 - 1.0) > 1e-12:
        reasons.append("mass")
    if min_density > 0.0:
        lip0 = _lipschitz(np.log(spec.m0), g.dx, g.periodic)
        lip1 = _lipschitz(np.log(spec.m1), g.dx, g.periodic)
    else:
        lip0 = lip1 = float("inf")
    return ValidationReport(
        admissible=not reasons,
        reasons=tuple(reasons),
        mass_defect_m0=spec.mass_defect_m0,
        mass_defect_m1=spec.mass_defect_m1,
        min_density=min_density,
        lipschitz_log_m0=lip0,
        lipschitz_log_m1=lip1,
        lipschitz_V=spec.lipschitz_V,
    )
