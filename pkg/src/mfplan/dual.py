"""Newton continuation solver for the space-time elliptic potential equation.

The potential u solves the quasilinear problem

    -[u_tt - 2 H_p u_tx + (H_p^2 + (m f'(m) + eps) H_pp) u_xx]
        + tau DV . H_p(u_x) + rho u = 0          in the interior,
    -u_t + H(u_x) + delta u = tau (f(m0) + V) + eps log m0    at t = 0,
    -u_t + H(u_x) - delta u = tau (f(m1) + V) + eps log m1    at t = T,
    D_x u = 0 on the lateral boundary (interval topology),

with m recovered pointwise through the inverse coupling:
m = (tau f + eps log)^{-1}(-u_t + H(u_x) - tau V).

The homotopy parameter tau deforms a trivially solvable problem (tau = 0)
into the target (tau = 1); rho and delta are zeroth-order penalizations
driven to a 1e-8 floor (not 0: they guard the constant-shift kernel of the
Jacobian), after which u is normalized so that sum u(T) m1 dx = 0.

Interior derivatives are centered; u_t in the time-boundary rows and the
lateral Neumann rows use one-sided second-order differences.  The Jacobian
is the exact linearization, including the dependence of m f'(m) + eps on
the derivatives of u through the inverse coupling.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .grids import DensityField, PotentialField, ProblemSpec
from .hamiltonian import DegenerateHamiltonianError, h_eval, h_third


class DualSolveError(RuntimeError):
    """Newton continuation failed even after schedule refinement."""


def _default_penalty() -> tuple[float, ...]:
    return tuple(10.0 ** (-k) for k in range(9))  # 1 -> 1e-8


@dataclass(frozen=True)
class ContinuationSchedule:
    rho_sequence: tuple[float, ...] = field(default_factory=_default_penalty)
    delta_sequence: tuple[float, ...] = field(default_factory=_default_penalty)
    tau_sequence: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    newton_tol: float = 1e-10
    step_tol: float = 1e-13
    max_newton_iters: int = 50
    use_picard: bool = False

    def __post_init__(self):
        for name in ("rho_sequence", "delta_sequence", "tau_sequence"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))
        rho, delta, tau = self.rho_sequence, self.delta_sequence, self.tau_sequence
        if not rho or any(np.diff(rho) > 0) or rho[-1] <= 0:
            raise ValueError("rho_sequence must be positive and nonincreasing")
        if not delta or any(np.diff(delta) > 0) or delta[-1] <= 0:
            raise ValueError("delta_sequence must be positive and nonincreasing")
        if not tau or any(np.diff(tau) < 0) or tau[0] != 0.0 or tau[-1] != 1.0:
            raise ValueError("tau_sequence must go 0 -> 1 nondecreasing")

    def stages(self) -> list[tuple[float, float, float]]:
        """(rho, delta, tau) triples: tau ramp first, then joint penalty decay."""
        rho, delta = self.rho_sequence, self.delta_sequence
        n = max(len(rho), len(delta))
        rho = rho + (rho[-1],) * (n - len(rho))
        delta = delta + (delta[-1],) * (n - len(delta))
        out = [(rho[0], delta[0], t) for t in self.tau_sequence]
        out += [(r, d, 1.0) for r, d in zip(rho[1:], delta[1:])]
        return out


@dataclass(frozen=True)
class DualResidual:
    interior: np.ndarray  # (n_t-1, #interior space nodes)
    boundary: np.ndarray  # (2, #interior space nodes), rows t=0 and t=T
    lateral: np.ndarray | None  # (2, n_t+1) for interval topology


@dataclass
class DualLog:
    stages: list = field(default_factory=list)
    converged: bool = False
    final_residual: float = float("nan")
    refined: bool = False


def _require_smooth(spec: ProblemSpec):
    if not spec.hamiltonian.smooth:
        raise DegenerateHamiltonianError(
            "degenerate H_pp (varpi=0, q!=2): use the primal solver"
        )
    if spec.coupling.epsilon <= 0.0:
        raise ValueError("dual solver requires eps > 0")


def _dv_nodes(spec: ProblemSpec) -> np.ndarray:
    """Centered DV at nodes (only interior space entries are consumed)."""
    g = spec.grid
    Vn = spec.V_nodes
    if g.periodic:
        return (np.roll(Vn, -1) - np.roll(Vn, 1)) / (2.0 * g.dx)
    dv = np.zeros_like(Vn)
    dv[1:-1] = (Vn[2:] - Vn[:-2]) / (2.0 * g.dx)
    return dv


def _assemble(u: np.ndarray, spec: ProblemSpec, rho: float, delta: float,
              tau: float, with_jacobian: bool, picard: bool = False):
    """Flat residual (node-indexed) and optionally the sparse Jacobian."""
    g = spec.grid
    nt, nn = g.n_t, g.n_xnodes
    dt, dx = g.dt, g.dx
    H, C = spec.hamiltonian, spec.coupling
    eps = C.epsilon
    periodic = g.periodic
    Vn = spec.V_nodes
    dVn = _dv_nodes(spec)

    R = np.zeros((nt + 1, nn))
    rows, cols, vals = [], [], []

    def idx(k, i):
        return k * nn + i

    # ----- interior rows: k = 1..nt-1, space-interior i -----
    ks = np.arange(1, nt)
    if periodic:
        isp = np.arange(nn)
        ip1, im1 = (isp + 1) % nn, (isp - 1) % nn
    else:
        isp = np.arange(1, nn - 1)
        ip1, im1 = isp + 1, isp - 1
    K, I = np.meshgrid(ks, isp, indexing="ij")
    IP, IM = np.meshgrid(ks, ip1, indexing="ij")[1], np.meshgrid(ks, im1, indexing="ij")[1]

    u_t = (u[K + 1, I] - u[K - 1, I]) / (2 * dt)
    u_x = (u[K, IP] - u[K, IM]) / (2 * dx)
    u_tt = (u[K + 1, I] - 2 * u[K, I] + u[K - 1, I]) / dt**2
    u_xx = (u[K, IP] - 2 * u[K, I] + u[K, IM]) / dx**2
    u_tx = (u[K + 1, IP] - u[K + 1, IM] - u[K - 1, IP] + u[K - 1, IM]) / (4 * dt * dx)

    hval, hp, hpp = h_eval(H, u_x)
    m = C.phi(-u_t + hval - tau * Vn[I], tau)
    fp = C.f_prime(m)
    cterm = eps + tau * m * fp
    dv = dVn[I]

    R[K, I] = (
        -(u_tt - 2 * hp * u_tx + (hp * hp + cterm * hpp) * u_xx)
        + tau * dv * hp
        + rho * u[K, I]
    )

    if with_jacobian:
        hppp = h_third(H, u_x)
        phi_p = m / (tau * m * fp + eps)
        gprime = fp + m * C.f_second(m)  # d(m f'(m))/dm
        if picard:
            chain = np.zeros_like(m)
        else:
            chain = hpp * u_xx * tau * gprime * phi_p
        a_tt = -1.0
        a_tx = 2.0 * hp
        a_xx = -(hp * hp + cterm * hpp)
        a_t = chain
        a_x = (
            2.0 * hpp * u_tx
            - (2.0 * hp * hpp + cterm * hppp) * u_xx
            + tau * dv * hpp
            - chain * hp
        )
        a_0 = np.full_like(m, rho)

        r_idx = idx(K, I).ravel()

        def add(kk, ii, coeff):
            rows.append(r_idx)
            cols.append(idx(kk, ii).ravel())
            vals.append(np.broadcast_to(coeff, K.shape).ravel().astype(float).copy())

        add(K, I, a_0 + (-2.0) * a_tt / dt**2 + (-2.0) * a_xx / dx**2)
        add(K + 1, I, a_tt / dt**2 + a_t / (2 * dt))
        add(K - 1, I, a_tt / dt**2 - a_t / (2 * dt))
        add(K, IP, a_xx / dx**2 + a_x / (2 * dx))
        add(K, IM, a_xx / dx**2 - a_x / (2 * dx))
        add(K + 1, IP, a_tx / (4 * dt * dx))
        add(K - 1, IM, a_tx / (4 * dt * dx))
        add(K + 1, IM, -a_tx / (4 * dt * dx))
        add(K - 1, IP, -a_tx / (4 * dt * dx))

    # ----- time-boundary rows: k in {0, nt}, space-interior i -----
    for k, sgn, m_data in ((0, 1.0, spec.m0_nodes), (nt, -1.0, spec.m1_nodes)):
        I1 = isp
        if k == 0:
            u_tb = (-3 * u[0, I1] + 4 * u[1, I1] - u[2, I1]) / (2 * dt)
        else:
            u_tb = (3 * u[nt, I1] - 4 * u[nt - 1, I1] + u[nt - 2, I1]) / (2 * dt)
        u_xb = (u[k, ip1] - u[k, im1]) / (2 * dx)
        hb, hpb, _ = h_eval(H, u_xb)
        data = tau * (C.f(m_data[I1]) + Vn[I1]) + eps * np.log(m_data[I1])
        R[k, I1] = -u_tb + hb + sgn * delta * u[k, I1] - data

        if with_jacobian:
            r_idx = idx(np.full_like(I1, k), I1).ravel()

            def addb(kk, ii, coeff):
                rows.append(r_idx)
                cols.append(idx(kk, ii).ravel())
                vals.append(np.broadcast_to(coeff, I1.shape).ravel().astype(float).copy())

            if k == 0:
                addb(np.full_like(I1, 0), I1, 3.0 / (2 * dt) + delta)
                addb(np.full_like(I1, 1), I1, -2.0 / dt)
                addb(np.full_like(I1, 2), I1, 1.0 / (2 * dt))
            else:
                addb(np.full_like(I1, nt), I1, -3.0 / (2 * dt) - delta)
                addb(np.full_like(I1, nt - 1), I1, 2.0 / dt)
                addb(np.full_like(I1, nt - 2), I1, -1.0 / (2 * dt))
            addb(np.full_like(I1, k), ip1, hpb / (2 * dx))
            addb(np.full_like(I1, k), im1, -hpb / (2 * dx))

    # ----- lateral Neumann rows (interval): all k, i in {0, nn-1} -----
    if not periodic:
        kk = np.arange(nt + 1)
        R[kk, 0] = (-3 * u[kk, 0] + 4 * u[kk, 1] - u[kk, 2]) / (2 * dx)
        R[kk, nn - 1] = (
            3 * u[kk, nn - 1] - 4 * u[kk, nn - 2] + u[kk, nn - 3]
        ) / (2 * dx)
        if with_jacobian:
            for i0, coeffs in (
                (0, ((0, -3.0), (1, 4.0), (2, -1.0))),
                (nn - 1, ((nn - 1, 3.0), (nn - 2, -4.0), (nn - 3, 1.0))),
            ):
                r_idx = idx(kk, np.full_like(kk, i0)).ravel()
                for col_i, cval in coeffs:
                    rows.append(r_idx)
                    cols.append(idx(kk, np.full_like(kk, col_i)).ravel())
                    vals.append(np.full(kk.shape, cval / (2 * dx)))

    J = None
    if with_jacobian:
        n = (nt + 1) * nn
        J = sp.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        )
    return R, J


def assemble_residual(u: PotentialField, spec: ProblemSpec, rho: float,
                      delta: float, tau: float) -> DualResidual:
    """Residual of the continuation problem at u, split by row type."""
    _require_smooth(spec)
    R, _ = _assemble(u.values, spec, rho, delta, tau, with_jacobian=False)
    g = spec.grid
    nt, nn = g.n_t, g.n_xnodes
    if g.periodic:
        interior = R[1:nt, :]
        boundary = np.stack([R[0, :], R[nt, :]])
        lateral = None
    else:
        interior = R[1:nt, 1 : nn - 1]
        boundary = np.stack([R[0, 1 : nn - 1], R[nt, 1 : nn - 1]])
        lateral = np.stack([R[:, 0], R[:, nn - 1]])
    return DualResidual(interior=interior, boundary=boundary, lateral=lateral)


def assemble_jacobian(u: PotentialField, spec: ProblemSpec, rho: float,
                      delta: float, tau: float) -> sp.csc_matrix:
    """Exact linearization of assemble_residual (node-flattened ordering)."""
    _require_smooth(spec)
    _, J = _assemble(u.values, spec, rho, delta, tau, with_jacobian=True)
    return J


def m_from_u(u: PotentialField, spec: ProblemSpec) -> DensityField:
    """Recover the density from the potential: m = phi(-u_t + H(u_x) - V).

    Evaluated at (time-node, space-cell): u_t is a centered node difference
    (one-sided second order at t in {0,T}) averaged to cell centers, u_x the
    exact face difference of u.
    """
    _require_smooth(spec)
    g = spec.grid
    uv = u.values
    dt, dx = g.dt, g.dx
    ut = np.empty_like(uv)
    ut[1:-1] = (uv[2:] - uv[:-2]) / (2 * dt)
    ut[0] = (-3 * uv[0] + 4 * uv[1] - uv[2]) / (2 * dt)
    ut[-1] = (3 * uv[-1] - 4 * uv[-2] + uv[-3]) / (2 * dt)
    if g.periodic:
        ux_c = (np.roll(uv, -1, axis=1) - uv) / dx
        ut_c = 0.5 * (ut + np.roll(ut, -1, axis=1))
    else:
        ux_c = (uv[:, 1:] - uv[:, :-1]) / dx
        ut_c = 0.5 * (ut[:, 1:] + ut[:, :-1])
    hval = h_eval(spec.hamiltonian, ux_c)[0]
    m = spec.coupling.phi(-ut_c + hval - spec.V, 1.0)
    return DensityField(g, m)


def normalize(u: PotentialField, spec: ProblemSpec) -> PotentialField:
    """Pin the additive gauge: shift u so that sum u(T) m1 dx = 0."""
    g = spec.grid
    uT = u.values[-1]
    uT_c = 0.5 * (uT + np.roll(uT, -1)) if g.periodic else 0.5 * (uT[1:] + uT[:-1])
    shift = float(np.sum(uT_c * spec.m1) * g.dx)
    return PotentialField(g, u.values - shift)


def _sup_bound_rhs(spec: ProblemSpec) -> float:
    C, Vn = spec.coupling, spec.V_nodes
    a = float(np.max(np.abs(C.f_eps(spec.m0_nodes) + Vn)))
    b = float(np.max(np.abs(C.f_eps(spec.m1_nodes) + Vn)))
    return a + b


def _newton_stage(u, spec, rho, delta, tau, sched: ContinuationSchedule):
    """Damped Newton at fixed (rho, delta, tau); returns (u, iters, resid, ok)."""
    R, _ = _assemble(u, spec, rho, delta, tau, False)
    rnorm = float(np.max(np.abs(R)))
    for it in range(sched.max_newton_iters):
        if rnorm <= sched.newton_tol:
            return u, it, rnorm, True
        _, J = _assemble(u, spec, rho, delta, tau, True, picard=sched.use_picard)
        step = spsolve(J, -R.ravel()).reshape(u.shape)
        t = 1.0
        for _ in range(30):
            u_try = u + t * step
            R_try, _ = _assemble(u_try, spec, rho, delta, tau, False)
            r_try = float(np.max(np.abs(R_try)))
            if np.isfinite(r_try) and r_try <= (1.0 - 1e-4 * t) * rnorm:
                break
            t *= 0.5
        else:
            return u, it, rnorm, rnorm <= sched.newton_tol
        u, R, rnorm = u_try, R_try, r_try
        if t * float(np.max(np.abs(step))) <= sched.step_tol:
            break
    return u, sched.max_newton_iters, rnorm, rnorm <= sched.newton_tol


def solve_dual(spec: ProblemSpec, sched: ContinuationSchedule | None = None):
    """Continuation-in-(rho, delta, tau) Newton solve of the potential system.

    Returns (u_hat: PotentialField, m: DensityField, DualLog) with u_hat
    normalized per sum u(T) m1 dx = 0 and m = m_from_u(u_hat).
    """
    _require_smooth(spec)
    sched = sched or ContinuationSchedule()
    g = spec.grid
    u = np.zeros((g.n_t + 1, g.n_xnodes))
    log = DualLog()
    sup_rhs = _sup_bound_rhs(spec)

    stages = sched.stages()
    pos = 0
    while pos < len(stages):
        rho, delta, tau = stages[pos]
        u_new, iters, resid, ok = _newton_stage(u, spec, rho, delta, tau, sched)
        if not ok:
            if log.refined:
                raise DualSolveError(
                    f"Newton stagnated at (rho={rho:g}, delta={delta:g}, "
                    f"tau={tau:g}); residual {resid:.3e}"
                )
            # roll back and insert a geometric midpoint stage once
            log.refined = True
            prev = stages[pos - 1] if pos > 0 else (rho, delta, 0.0)
            mid = (
                float(np.sqrt(prev[0] * rho)),
                float(np.sqrt(prev[1] * delta)),
                0.5 * (prev[2] + tau),
            )
            stages.insert(pos, mid)
            continue
        u = u_new
        log.stages.append({
            "rho": rho,
            "delta": delta,
            "tau": tau,
            "newton_iters": iters,
            "residual": resid,
            "sup_bound_lhs": delta * float(np.max(np.abs(u))),
            "sup_bound_rhs": sup_rhs,
            "grad_sup": float(np.max(np.abs(np.diff(u, axis=1)))) / g.dx,
        })
        pos += 1

    u_hat = normalize(PotentialField(g, u), spec)
    log.converged = True
    log.final_residual = log.stages[-1]["residual"]
    return u_hat, m_from_u(u_hat, spec), log
