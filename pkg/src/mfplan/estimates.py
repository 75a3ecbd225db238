"""A-priori estimate checks on solver output and the 1-D geodesic oracle.

Every check evaluates an exact discrete formula (recorded in the result)
against the solver fields and reports {name, lhs, rhs, tolerance, pass}.
The inequalities are exact only in the continuum, so the intended protocol
is Richardson-style: run a check at two resolutions and require any
violation to shrink at first order under grid halving.

The displacement interpolation oracle is deliberately independent of all
solver code: cumulative distributions by prefix sums, monotone
quantile-composition transport map, density by CDF inversion (with an
optimal-rotation search on the torus).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .functional import PrimalState, functional_value
from .grids import DensityField, MomentumField, PotentialField, ProblemSpec, SpaceTimeGrid
from .hamiltonian import QUADRATIC, h_eval


@dataclass(frozen=True)
class CheckResult:
    name: str
    lhs: float
    rhs: float
    tolerance: float
    passed: bool
    skipped: bool = False
    reason: str = ""
    formula: str = ""
    details: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# discrete derivative helpers (cell-centered)
# ---------------------------------------------------------------------------

def du_cells(u: PotentialField, grid: SpaceTimeGrid) -> np.ndarray:
    """Spatial derivative of u at (time-node, space-cell)."""
    uv = u.values
    if grid.periodic:
        return (np.roll(uv, -1, axis=1) - uv) / grid.dx
    return (uv[:, 1:] - uv[:, :-1]) / grid.dx


def _dx_cells(values: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    """Centered x-derivative of a cell field (one-sided at interval edges)."""
    dx = grid.dx
    if grid.periodic:
        return (np.roll(values, -1, axis=-1) - np.roll(values, 1, axis=-1)) / (2 * dx)
    out = np.empty_like(values)
    out[..., 1:-1] = (values[..., 2:] - values[..., :-2]) / (2 * dx)
    out[..., 0] = (values[..., 1] - values[..., 0]) / dx
    out[..., -1] = (values[..., -1] - values[..., -2]) / dx
    return out


def _div_hp(u: PotentialField, spec: ProblemSpec) -> np.ndarray:
    """div H_p(Du) at (time-node, space-cell) from face velocities."""
    g = spec.grid
    uv = u.values
    dx = g.dx
    if g.periodic:
        ux_f = (np.roll(uv, -1, axis=1) - np.roll(uv, 1, axis=1)) / (2 * dx)
        hp_f = h_eval(spec.hamiltonian, ux_f)[1]
        return (np.roll(hp_f, -1, axis=1) - hp_f) / dx
    hp_f = np.zeros_like(uv)  # no-flux: H_p vanishes on the lateral boundary
    ux_f = (uv[:, 2:] - uv[:, :-2]) / (2 * dx)
    hp_f[:, 1:-1] = h_eval(spec.hamiltonian, ux_f)[1]
    return (hp_f[:, 1:] - hp_f[:, :-1]) / dx


# ---------------------------------------------------------------------------
# displacement convexity (d = 1)
# ---------------------------------------------------------------------------

def _u_family(family: str, param: float):
    if family == "power":
        p = param
        if p < 2:
            raise ValueError("power family needs p >= 2")
        U = lambda r: r**p
        P = lambda r: (p - 1.0) * r**p  # U'(r) r - U(r)
        Pp = lambda r: p * (p - 1.0) * r ** (p - 1.0)
        return U, P, Pp
    if family == "linear":
        # U(r) = r: the internal energy is the total mass, both sides of the
        # inequality vanish identically (P = U'r - U = 0)
        U = lambda r: r
        P = lambda r: np.zeros_like(np.asarray(r, dtype=float))
        Pp = lambda r: np.zeros_like(np.asarray(r, dtype=float))
        return U, P, Pp
    if family == "quadratic-above-level":
        k = param
        U = lambda r: np.maximum(r - k, 0.0) ** 2
        P = lambda r: np.maximum(r - k, 0.0) * (r + k)
        Pp = lambda r: np.where(r > k, 2.0 * r, 0.0)
        return U, P, Pp
    raise ValueError(f"unknown U-family {family!r}")


def check_displacement_convexity(
    m: DensityField,
    u: PotentialField,
    spec: ProblemSpec,
    u_family: str = "power",
    u_param: float = 2.0,
    tol_disc: float | None = None,
) -> CheckResult:
    """Second difference of int U(m) vs the convexity right-hand side.

    At every interior time node, d^2/dt^2 int U(m) must dominate

        int (P'(m)m - P(m) + P(m)/d) [div H_p(Du)]^2
      + int P'(m) (f^eps)'(m) H_pp Dm.Dm  +  int P'(m) H_pp Dm.DV

    (d = 1; the coupling enters through f^eps = f + eps log, whose
    derivative f'(m) + eps/m absorbs the entropy term).
    """
    if spec.hamiltonian.family != QUADRATIC and spec.hamiltonian.q != 2.0:
        return CheckResult(
            "displacement_convexity", 0.0, 0.0, 0.0, True, skipped=True,
            reason="non-quadratic-growth Hamiltonian",
        )
    g = spec.grid
    _, P, Pp = _u_family(u_family, u_param)
    U, _, _ = _u_family(u_family, u_param)
    mv = m.values
    energy = np.sum(U(mv), axis=1) * g.dx
    lhs = (energy[2:] - 2 * energy[1:-1] + energy[:-2]) / g.dt**2

    div_v = _div_hp(u, spec)[1:-1]
    dm = _dx_cells(mv, g)[1:-1]
    dV = _dx_cells(spec.V, g)
    mi = mv[1:-1]
    hpp = h_eval(spec.hamiltonian, du_cells(u, g)[1:-1])[2]
    feps_prime = spec.coupling.f_prime(mi) + spec.coupling.epsilon / mi
    term1 = (Pp(mi) * mi - P(mi) + P(mi)) * div_v**2  # P/d with d = 1
    term2 = Pp(mi) * feps_prime * hpp * dm * dm
    term3 = Pp(mi) * hpp * dm * dV
    rhs = np.sum(term1 + term2 + term3, axis=1) * g.dx

    violation = float(np.max(np.maximum(rhs - lhs, 0.0)))
    if tol_disc is None:
        tol_disc = 10.0 * (g.dt + g.dx) * max(1.0, float(np.max(np.abs(rhs))))
    return CheckResult(
        name="displacement_convexity",
        lhs=float(np.min(lhs - rhs)),
        rhs=0.0,
        tolerance=tol_disc,
        passed=violation <= tol_disc,
        formula="(E[k+1]-2E[k]+E[k-1])/dt^2 >= sum((P'm-P+P) divHp^2 "
                "+ P' feps' Hpp Dm^2 + P' Hpp Dm DV) dx",
        details={"max_violation": violation,
                 "lhs_profile": lhs.tolist(), "rhs_profile": rhs.tolist()},
    )


# ---------------------------------------------------------------------------
# L^p machinery
# ---------------------------------------------------------------------------

def _lp_norm(row: np.ndarray, p: float, dx: float) -> float:
    if np.isinf(p):
        return float(np.max(row))
    return float((np.sum(row**p) * dx) ** (1.0 / p))


def check_lp_bounds(m: DensityField, spec: ProblemSpec,
                    p_list=(1.0, 2.0, 4.0, np.inf)) -> CheckResult:
    """Empirical K0 (global bound) and K1 (interior envelope) per p.

    Global: sup_t ||m(t)||_p <= K0 (||m0||_p + ||m1||_p + 1).
    Local:  ||m(t)||_p <= K1 (t^-qp + (T-t)^-qp) on interior nodes with
    qp = d(p-1)/p (d = 1; qp = 1 for p = inf).
    """
    g = spec.grid
    hyp = spec.coupling.c0_r0
    t = g.t_nodes()
    results = {}
    ok = True
    for p in p_list:
        if p != 1.0 and hyp is None:
            results[str(p)] = {"skipped": "no (c0, r0) hypothesis"}
            continue
        norms = np.array([_lp_norm(m.values[k], p, g.dx)
                          for k in range(g.n_t + 1)])
        denom = (_lp_norm(spec.m0, p, g.dx) + _lp_norm(spec.m1, p, g.dx) + 1.0)
        K0 = float(np.max(norms) / denom)
        qp = 1.0 if np.isinf(p) else (p - 1.0) / p
        interior = slice(1, g.n_t)
        envelope = t[interior] ** (-qp) + (g.T - t[interior]) ** (-qp)
        K1 = float(np.max(norms[interior] / envelope))
        entry = {"K0": K0, "K1": K1, "exponent": qp,
                 "sup_norm": float(np.max(norms))}
        results[str(p)] = entry
        ok = ok and np.isfinite(K0) and np.isfinite(K1) and K1 > 0
    return CheckResult(
        name="lp_bounds",
        lhs=max((v.get("K0", 0.0) for v in results.values()
                 if isinstance(v, dict)), default=0.0),
        rhs=float("inf"),
        tolerance=float("inf"),
        passed=ok,
        formula="K0 = sup_t ||m||_p/(||m0||_p+||m1||_p+1); "
                "K1 = sup_t ||m||_p/(t^-qp+(T-t)^-qp), qp = (p-1)/p",
        details=results,
    )


# ---------------------------------------------------------------------------
# local gradient estimate
# ---------------------------------------------------------------------------

def _theta_constant(spec: ProblemSpec) -> tuple[float, float]:
    """theta with H_p.p >= (1+2 theta) H - c0 (quadratic: theta=1/2, c0=0)."""
    H = spec.hamiltonian
    if H.family == QUADRATIC:
        return 0.5, 0.0
    theta = (H.q - 1.0) / 2.0
    p = np.concatenate([[0.0], np.logspace(-6, 3, 2000)])
    val, hp, _ = h_eval(H, p)
    c0 = max(0.0, float(np.max((1.0 + 2.0 * theta) * val - hp * p)))
    return theta, c0


def check_local_gradient_estimate(u: PotentialField, m: DensityField,
                                  spec: ProblemSpec) -> CheckResult:
    """Fit the barrier in theta*H(Du) + eps*log m <= L(t^-2+(T-t)^-2) + L0."""
    if spec.coupling.f_family != "zero":
        return CheckResult("local_gradient_estimate", 0.0, 0.0, 0.0, True,
                           skipped=True, reason="requires f = 0")
    g = spec.grid
    theta, _ = _theta_constant(spec)
    hval = h_eval(spec.hamiltonian, du_cells(u, g))[0]
    profile = np.max(theta * hval + spec.coupling.epsilon * np.log(m.values),
                     axis=1)
    t = g.t_nodes()
    L0 = float(profile[g.n_t // 2])
    interior = slice(1, g.n_t)
    barrier = t[interior] ** (-2.0) + (g.T - t[interior]) ** (-2.0)
    L = float(np.max(np.maximum(profile[interior] - L0, 0.0) / barrier))
    dominated = bool(np.all(profile[interior] <= L * barrier + L0 + 1e-9))
    return CheckResult(
        name="local_gradient_estimate",
        lhs=float(np.max(profile[interior])),
        rhs=L0 + L * float(np.min(barrier)),
        tolerance=1e-9,
        passed=dominated and np.isfinite(L),
        formula="max_x theta H(Du)+eps log m <= L(t^-2+(T-t)^-2)+L0, "
                f"theta={theta}",
        details={"L": L, "L0": L0, "theta": theta,
                 "profile": profile.tolist()},
    )


# ---------------------------------------------------------------------------
# energy identity
# ---------------------------------------------------------------------------

def _u_at_cells(u: PotentialField, grid: SpaceTimeGrid) -> np.ndarray:
    uv = u.values
    if grid.periodic:
        return 0.5 * (uv + np.roll(uv, -1, axis=1))
    return 0.5 * (uv[:, 1:] + uv[:, :-1])


def check_energy_identity(u: PotentialField, m: DensityField,
                          spec: ProblemSpec,
                          tol: float | None = None) -> CheckResult:
    """int u(T)m(T) - int u(0)m(0) = -intint m[H_p.Du - H] - intint (f^eps(m)+V)m.

    Space integrals over cells, time integral by the trapezoid rule.
    """
    g = spec.grid
    u_c = _u_at_cells(u, g)
    mv = m.values
    lhs = float(np.sum(u_c[-1] * mv[-1]) * g.dx - np.sum(u_c[0] * mv[0]) * g.dx)
    du = du_cells(u, g)
    hval, hp, _ = h_eval(spec.hamiltonian, du)
    density = -mv * (hp * du - hval) - (spec.coupling.f_eps(mv) + spec.V) * mv
    space = np.sum(density, axis=1) * g.dx
    rhs = float(np.trapezoid(space, dx=g.dt))
    gap = abs(lhs - rhs) / (1.0 + max(abs(lhs), abs(rhs)))
    if tol is None:
        tol = 10.0 * (g.dt + g.dx)
    return CheckResult(
        name="energy_identity",
        lhs=lhs,
        rhs=rhs,
        tolerance=tol,
        passed=gap <= tol,
        formula="int u(T)m(T)-int u(0)m(0) = -intint m(Hp.Du-H) "
                "- intint (f^eps(m)+V)m  [trapezoid in t]",
        details={"relative_gap": gap},
    )


# ---------------------------------------------------------------------------
# maximum principle for u_t
# ---------------------------------------------------------------------------

def check_ut_max_principle(u: PotentialField, spec: ProblemSpec,
                           slack: float | None = None) -> CheckResult:
    """Interior max |D_t u| bounded by the t in {0,T} max plus O(dt+dx) slack."""
    g = spec.grid
    uv = u.values
    dt = g.dt
    ut_int = (uv[2:] - uv[:-2]) / (2 * dt)
    ut_0 = (-3 * uv[0] + 4 * uv[1] - uv[2]) / (2 * dt)
    ut_T = (3 * uv[-1] - 4 * uv[-2] + uv[-3]) / (2 * dt)
    lhs = float(np.max(np.abs(ut_int))) if ut_int.size else 0.0
    rhs = float(max(np.max(np.abs(ut_0)), np.max(np.abs(ut_T))))
    if slack is None:
        slack = 10.0 * (g.dt + g.dx)
    return CheckResult(
        name="maximum_principle_ut",
        lhs=lhs,
        rhs=rhs,
        tolerance=slack,
        passed=lhs <= rhs + slack,
        formula="max interior |D_t u| <= max boundary |D_t u| + 10(dt+dx)",
    )


# ---------------------------------------------------------------------------
# 1-D displacement interpolation oracle (independent of the solvers)
# ---------------------------------------------------------------------------

def _cdf_edges(density: np.ndarray, dx: float) -> np.ndarray:
    F = np.concatenate([[0.0], np.cumsum(density) * dx])
    F /= F[-1]
    F[-1] = 1.0
    return F


def _quantile(levels: np.ndarray, F: np.ndarray, edges: np.ndarray) -> np.ndarray:
    # F is nondecreasing with F[0]=0, F[-1]=1 for positive densities
    return np.interp(levels, F, edges)


def _level_grid(n_x: int, *cdfs: np.ndarray) -> np.ndarray:
    """Dense quantile levels enriched with the CDF breakpoints.

    Including the breakpoints makes the piecewise-linear quantiles exact on
    the grid, so inverting the interpolated map reproduces the endpoint
    densities to rounding.
    """
    parts = [np.linspace(0.0, 1.0, 64 * n_x + 1)]
    for F in cdfs:
        parts.append(np.mod(F, 1.0))
    s = np.unique(np.concatenate(parts))
    return np.clip(s, 0.0, 1.0)


def _oracle_interval(m0, m1, grid: SpaceTimeGrid) -> np.ndarray:
    edges = grid.x_min + np.arange(grid.n_x + 1) * grid.dx
    F0 = _cdf_edges(m0, grid.dx)
    F1 = _cdf_edges(m1, grid.dx)
    s = _level_grid(grid.n_x, F0, F1)
    Q0 = _quantile(s, F0, edges)
    Q1 = _quantile(s, F1, edges)
    out = np.empty((grid.n_t + 1, grid.n_x))
    for k, t in enumerate(grid.t_nodes()):
        lam = t / grid.T
        X = (1.0 - lam) * Q0 + lam * Q1
        G = np.interp(edges, X, s)  # CDF of the interpolant at the edges
        out[k] = np.diff(G) / grid.dx
    return out


def _extended_quantile(s, F, edges, L):
    """Quantile of a circle density lifted to the line: Q(s+k) = Q(s)+kL."""
    k = np.floor(s)
    frac = s - k
    return np.interp(frac, F, edges) + k * L


def _oracle_torus(m0, m1, grid: SpaceTimeGrid) -> np.ndarray:
    L = grid.length
    edges = grid.x_min + np.arange(grid.n_x + 1) * grid.dx
    F0 = _cdf_edges(m0, grid.dx)
    F1 = _cdf_edges(m1, grid.dx)
    n_s = 64 * grid.n_x
    s = (np.arange(n_s) + 0.5) / n_s

    def cost(theta):
        d = _quantile(s, F0, edges) - _extended_quantile(s + theta, F1, edges, L)
        return float(np.mean(d * d))

    # circular transport: optimal rotation of the quantile pairing
    # (the cost is convex in theta)
    res = minimize_scalar(cost, bounds=(-1.0, 1.0), method="bounded",
                          options={"xatol": 1e-13})
    theta = float(res.x)

    s_dense = _level_grid(grid.n_x, F0, F1 - theta)
    Q0 = _quantile(s_dense, F0, edges)
    Q1s = _extended_quantile(s_dense + theta, F1, edges, L)
    out = np.empty((grid.n_t + 1, grid.n_x))
    for k, t in enumerate(grid.t_nodes()):
        lam = t / grid.T
        X = (1.0 - lam) * Q0 + lam * Q1s  # monotone, X(1) = X(0) + L
        # wrap the line-valued map back to the circle cell by cell
        shift = np.floor((X[0] - grid.x_min) / L)
        lo = grid.x_min + shift * L
        masses = np.zeros(grid.n_x)
        for branch in (-1.0, 0.0, 1.0):
            e = (edges - grid.x_min) + lo + branch * L
            Sv = np.interp(e, X, s_dense, left=0.0, right=1.0)
            masses += np.diff(Sv)
        out[k] = masses / grid.dx
    return out


def _canonical_pair(m0: np.ndarray, m1: np.ndarray) -> bool:
    a, b = m0.tobytes(), m1.tobytes()
    return a <= b


def geodesic_oracle_1d(m0: np.ndarray, m1: np.ndarray,
                       grid: SpaceTimeGrid) -> DensityField:
    """Displacement interpolation between two positive cell densities.

    CDFs by prefix sums, monotone quantile-composition map, densities by
    inverting the interpolated quantile at the cell edges.  On the torus
    the pairing uses the optimal rotation; the pair is processed in a
    canonical order so that swapping (m0, m1) is exactly time reversal.
    """
    m0 = np.asarray(m0, dtype=float)
    m1 = np.asarray(m1, dtype=float)
    if np.any(m0 <= 0) or np.any(m1 <= 0):
        raise ValueError("oracle needs strictly positive densities")
    if grid.periodic and not _canonical_pair(m0, m1):
        rev = geodesic_oracle_1d(m1, m0, grid)
        return DensityField(grid, rev.values[::-1])
    values = (_oracle_torus if grid.periodic else _oracle_interval)(m0, m1, grid)
    return DensityField(grid, values)


# ---------------------------------------------------------------------------
# eps sweep and duality gap
# ---------------------------------------------------------------------------

@dataclass
class SweepReport:
    eps_list: list
    errors: list
    converged: list
    floor: float
    passed: bool


def eps_sweep(spec: ProblemSpec, eps_list, cfg=None) -> SweepReport:
    """Solve the primal problem per eps (f = 0) and compare to the oracle.

    e(eps) = max_t L1 distance between the solve and the displacement
    interpolation; passes iff e is nonincreasing down to the floor 0.25*dx.
    """
    from .primal import PrimalConfig, solve_primal

    if spec.coupling.f_family != "zero":
        raise ValueError("eps sweep requires the zero coupling family")
    g = spec.grid
    oracle = geodesic_oracle_1d(spec.m0, spec.m1, g)
    errors, converged = [], []
    for eps in eps_list:
        spec_eps = dataclasses.replace(
            spec, coupling=dataclasses.replace(spec.coupling, epsilon=float(eps))
        )
        state, log = solve_primal(spec_eps, cfg or PrimalConfig())
        err = float(np.max(np.sum(np.abs(state.m.values - oracle.values), axis=1)
                           * g.dx))
        errors.append(err)
        converged.append(bool(log.converged))
    floor = 0.25 * g.dx
    mono = all(errors[i + 1] <= errors[i] + floor for i in range(len(errors) - 1))
    return SweepReport(
        eps_list=[float(e) for e in eps_list],
        errors=errors,
        converged=converged,
        floor=floor,
        passed=mono and all(converged),
    )


def dual_as_primal_state(u: PotentialField, m: DensityField,
                         spec: ProblemSpec) -> PrimalState:
    """Rebuild (m, w = m H_p(Du)) on the staggered grid from the dual fields."""
    g = spec.grid
    uv = u.values
    u_tc = 0.5 * (uv[:-1] + uv[1:])  # (n_t, n_nodes)
    m_tc = 0.5 * (m.values[:-1] + m.values[1:])  # (n_t, n_x) at cells
    if g.periodic:
        ux_f = (np.roll(u_tc, -1, axis=1) - np.roll(u_tc, 1, axis=1)) / (2 * g.dx)
        m_f = 0.5 * (m_tc + np.roll(m_tc, 1, axis=1))
        w = m_f * h_eval(spec.hamiltonian, ux_f)[1]
    else:
        w = np.zeros((g.n_t, g.n_x + 1))
        ux_f = (u_tc[:, 2:] - u_tc[:, :-2]) / (2 * g.dx)
        m_f = 0.5 * (m_tc[:, 1:] + m_tc[:, :-1])
        w[:, 1:-1] = m_f * h_eval(spec.hamiltonian, ux_f)[1]
    return PrimalState(m, MomentumField(g, w))


def duality_gap(primal_state: PrimalState, u: PotentialField,
                m_dual: DensityField, spec: ProblemSpec) -> float:
    """|J(primal) - J(dual rebuilt as (m, m H_p(Du)))| / (1 + |J(primal)|)."""
    if primal_state.grid != spec.grid or u.grid != spec.grid:
        raise ValueError("grid mismatch between solves")
    jp = functional_value(primal_state, spec)
    jd = functional_value(dual_as_primal_state(u, m_dual, spec), spec)
    return abs(jp - jd) / (1.0 + abs(jp))
