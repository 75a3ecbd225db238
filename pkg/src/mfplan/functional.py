"""Discrete primal functional in (m, w), continuity residual, and cell prox.

The convex objective

    J(m, w) = dt*dx * sum [ m L(w/m) + eps*m(log m - 1) + V m + F(m) ]

is evaluated on cell-centered averages of the staggered fields: density is
averaged between consecutive time nodes and momentum between the two faces
of each cell, so every summand lives at (time-cell, space-cell).  The
kinetic term uses the perspective form m*L(w/m), which is jointly convex in
(m, w) — do not "simplify" it to m*L(v).

F is the antiderivative of the coupling f, anchored by F(1) = 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .grids import DensityField, MomentumField, ProblemSpec, SpaceTimeGrid
from .hamiltonian import (
    QUADRATIC,
    CouplingSpec,
    HamiltonianSpec,
    kinetic_density,
    legendre_L,
)


@dataclass(frozen=True)
class PrimalState:
    m: DensityField
    w: MomentumField

    def __post_init__(self):
        if self.m.grid != self.w.grid:
            raise ValueError("m and w live on different grids")

    @property
    def grid(self) -> SpaceTimeGrid:
        return self.m.grid


def center_density(m_values: np.ndarray) -> np.ndarray:
    """Average density to time-cells: (n_t+1, n_x) -> (n_t, n_x)."""
    return 0.5 * (m_values[:-1] + m_values[1:])


def center_momentum(w_values: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    """Average momentum from faces to cell centers: -> (n_t, n_x)."""
    if grid.periodic:
        return 0.5 * (w_values + np.roll(w_values, -1, axis=1))
    return 0.5 * (w_values[:, :-1] + w_values[:, 1:])


def integrand(m_c, w_c, spec: ProblemSpec) -> np.ndarray:
    """Per-(time-cell, space-cell) integrand of the objective."""
    eps = spec.coupling.epsilon
    kinetic = kinetic_density(spec.hamiltonian, m_c, w_c)
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = m_c * (np.log(m_c) - 1.0)
    ent = np.where(m_c == 0.0, 0.0, ent)
    return kinetic + eps * ent + spec.V * m_c + spec.coupling.F(m_c)


def functional_value(state: PrimalState, spec: ProblemSpec) -> float:
    if state.grid != spec.grid:
        raise ValueError("state grid does not match problem grid")
    m_c = center_density(state.m.values)
    w_c = center_momentum(state.w.values, spec.grid)
    if np.any(m_c < 0.0):
        return math.inf
    vals = integrand(m_c, w_c, spec)
    if np.any(np.isposinf(vals)):
        return math.inf
    return float(np.sum(vals) * spec.grid.dt * spec.grid.dx)


def continuity_residual(state: PrimalState, spec: ProblemSpec) -> np.ndarray:
    """Residual of m_t = D_x w per (time-cell, space-cell).

    Endpoint rows use the problem data m0, m1 in place of the state's
    endpoint slices (they are hard constraints, not variables).
    """
    g = spec.grid
    m = state.m.values.copy()
    m[0] = spec.m0
    m[-1] = spec.m1
    dm = (m[1:] - m[:-1]) / g.dt
    return dm - g.div_w(state.w.values)


# ---------------------------------------------------------------------------
# proximal map of the integrand at a single cell
# ---------------------------------------------------------------------------

def _reduced_gradient(m, mbar, wbar, sigma, V, coupling: CouplingSpec, s):
    """d/dm of the w-eliminated cell objective (quadratic H, H_pp = s)."""
    eps = coupling.epsilon
    return (
        -s * wbar * wbar / (2.0 * (s * m + sigma) ** 2)
        + eps * np.log(m)
        + V
        + coupling.f(m)
        + (m - mbar) / sigma
    )


def _reduced_hessian(m, wbar, sigma, coupling: CouplingSpec, s):
    eps = coupling.epsilon
    return (
        s * s * wbar * wbar / (s * m + sigma) ** 3
        + eps / m
        + coupling.f_prime(m)
        + 1.0 / sigma
    )


def prox_block(
    mbar: np.ndarray,
    wbar: np.ndarray,
    sigma: float,
    V: np.ndarray,
    hamiltonian: HamiltonianSpec,
    coupling: CouplingSpec,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized prox of the cell integrand for quadratic H.

    Minimizes  m L(w/m) + eps m(log m - 1) + V m + F(m)
             + (1/2 sigma)[(m - mbar)^2 + (w - wbar)^2]   over m >= 0, w.

    w is eliminated in closed form (w = wbar * s m/(s m + sigma)); the
    remaining strictly convex scalar problem in m is solved by safeguarded
    Newton, in y = log m when the entropy keeps the minimizer interior.
    """
    if hamiltonian.family != QUADRATIC:
        raise ValueError("prox_block is the quadratic-H fast path")
    s = hamiltonian.scale
    eps = coupling.epsilon
    mbar = np.asarray(mbar, dtype=float)
    wbar = np.asarray(wbar, dtype=float)
    V = np.broadcast_to(V, mbar.shape)

    interior_only = eps > 0.0 or (
        coupling.f_family == "log" and coupling.f_params[0] > 0.0
    )
    m = np.empty_like(mbar)
    if interior_only:
        m[...] = _newton_interior(mbar, wbar, sigma, V, coupling, s)
    else:
        # eps = 0 and f(0+) finite: the corner m = 0 is feasible
        g0 = -s * wbar * wbar / (2.0 * sigma * sigma) + V + coupling.f(
            np.full_like(mbar, 1e-300)
        ) - mbar / sigma
        corner = g0 >= 0.0
        m[corner] = 0.0
        if np.any(~corner):
            m[~corner] = _newton_positive(
                mbar[~corner], wbar[~corner], sigma, V[~corner], coupling, s
            )
    w = wbar * s * m / (s * m + sigma)
    return m, w


def _prox_tol(mbar, wbar, sigma, V, s):
    return 1e-11 * np.maximum(
        1.0, np.abs(V) + np.abs(mbar) / sigma + s * wbar * wbar / (2 * sigma * sigma)
    )


def _newton_interior(mbar, wbar, sigma, V, coupling, s):
    """Safeguarded Newton in y = log m (minimizer strictly positive)."""
    tol = _prox_tol(mbar, wbar, sigma, V, s)
    y = np.log(np.maximum(mbar, 1e-12))
    lo = np.full_like(y, -746.0)  # exp underflows below; gradient -> -inf side
    hi = np.maximum(y, 0.0) + 5.0
    # ensure gradient positive at hi
    for _ in range(200):
        ghi = _reduced_gradient(np.exp(hi), mbar, wbar, sigma, V, coupling, s)
        bad = ghi <= 0
        if not np.any(bad):
            break
        hi = np.where(bad, hi + 5.0, hi)
    for _ in range(200):
        mcur = np.exp(y)
        g = _reduced_gradient(mcur, mbar, wbar, sigma, V, coupling, s)
        if np.all(np.abs(g) <= tol):
            break
        lo = np.where(g < 0, np.maximum(lo, y), lo)
        hi = np.where(g > 0, np.minimum(hi, y), hi)
        gp = mcur * _reduced_hessian(mcur, wbar, sigma, coupling, s)
        y_new = y - g / gp
        outside = (y_new <= lo) | (y_new >= hi) | ~np.isfinite(y_new)
        y = np.where(outside, 0.5 * (lo + hi), y_new)
    else:
        bad = np.abs(g) > tol
        raise RuntimeError(
            f"cell prox failed to converge at {int(np.sum(bad))} cells; "
            f"worst gradient {float(np.max(np.abs(g[bad]))):.3e}"
        )
    return np.exp(y)


def _newton_positive(mbar, wbar, sigma, V, coupling, s):
    """Safeguarded Newton in m itself (eps = 0, interior root known to exist)."""
    tol = _prox_tol(mbar, wbar, sigma, V, s)
    lo = np.zeros_like(mbar)
    hi = np.maximum(mbar, 1.0)
    for _ in range(200):
        ghi = _reduced_gradient(hi, mbar, wbar, sigma, V, coupling, s)
        bad = ghi <= 0
        if not np.any(bad):
            break
        hi = np.where(bad, 2.0 * hi, hi)
    m = 0.5 * (lo + hi)
    for _ in range(300):
        g = _reduced_gradient(m, mbar, wbar, sigma, V, coupling, s)
        if np.all(np.abs(g) <= tol):
            break
        lo = np.where(g < 0, np.maximum(lo, m), lo)
        hi = np.where(g > 0, np.minimum(hi, m), hi)
        gp = _reduced_hessian(m, wbar, sigma, coupling, s)
        m_new = m - g / gp
        outside = (m_new <= lo) | (m_new >= hi) | ~np.isfinite(m_new)
        m = np.where(outside, 0.5 * (lo + hi), m_new)
    return m


def prox_cell(
    mbar: float,
    wbar: float,
    sigma: float,
    V: float,
    hamiltonian: HamiltonianSpec,
    coupling: CouplingSpec,
) -> tuple[float, float]:
    """Prox of the cell integrand at one cell; see prox_block.

    Quadratic H uses the exact scalar Newton path (KKT residual <= 1e-10);
    other families fall back to nested bounded 1-D minimization (documented
    slower path).
    """
    if sigma <= 0.0:
        raise ValueError("prox step sigma must be positive")
    if hamiltonian.family == QUADRATIC:
        m, w = prox_block(
            np.asarray([mbar], dtype=float),
            np.asarray([wbar], dtype=float),
            sigma,
            np.asarray([V], dtype=float),
            hamiltonian,
            coupling,
        )
        return float(m[0]), float(w[0])
    return _prox_nested(float(mbar), float(wbar), sigma, float(V), hamiltonian, coupling)


def _prox_nested(mbar, wbar, sigma, V, hamiltonian, coupling):
    eps = coupling.epsilon

    def inner(m):
        # min over w of m L(w/m) + (w - wbar)^2 / (2 sigma)
        if m <= 0.0:
            return 0.0, wbar * wbar / (2.0 * sigma)
        lo, hi = min(0.0, wbar), max(0.0, wbar)
        if lo == hi:
            return wbar, m * legendre_L(hamiltonian, wbar / m)
        res = minimize_scalar(
            lambda w: m * legendre_L(hamiltonian, w / m)
            + (w - wbar) ** 2 / (2.0 * sigma),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-12},
        )
        return float(res.x), float(res.fun)

    def outer(m):
        _, kin = inner(m)
        ent = 0.0 if m == 0.0 else m * (math.log(m) - 1.0)
        return (
            kin
            + eps * ent
            + V * m
            + float(coupling.F(m))
            + (m - mbar) ** 2 / (2.0 * sigma)
        )

    m_hi = abs(mbar) + abs(wbar) + 10.0 * sigma + 10.0
    res = minimize_scalar(outer, bounds=(0.0, m_hi), method="bounded",
                          options={"xatol": 1e-12})
    m_opt = float(res.x)
    if eps == 0.0 and outer(0.0) <= res.fun:
        return 0.0, 0.0
    w_opt, _ = inner(m_opt)
    return m_opt, float(w_opt)
