import numpy as np
import pytest

from mfplan.functional import PrimalState, continuity_residual, functional_value
from mfplan.grids import (
    DensityField,
    MomentumField,
    ProblemSpec,
    SpaceTimeGrid,
    mass,
)
from mfplan.hamiltonian import CouplingSpec, HamiltonianSpec
from mfplan.primal import (
    PrimalConfig,
    project_continuity,
    solve_primal,
)

from conftest import build_spec, gaussian_with_floor

QUAD_H = HamiltonianSpec()


def _state(spec, m, w):
    return PrimalState(DensityField(spec.grid, m), MomentumField(spec.grid, w))


def _uniform_spec(n_t=4, n_x=8, topology="interval-neumann", eps=0.5):
    g = SpaceTimeGrid(1.0, 0.0, 1.0, n_t, n_x, topology)
    u = np.ones(n_x)
    return ProblemSpec(g, u, u, np.zeros(n_x), QUAD_H, CouplingSpec(epsilon=eps))


def test_config_validation():
    with pytest.raises(ValueError):
        PrimalConfig(sigma=0.0)
    with pytest.raises(ValueError):
        PrimalConfig(theta=2.0)
    with pytest.raises(ValueError):
        PrimalConfig(theta=0.5)
    assert PrimalConfig().sigma == 1.0
    assert PrimalConfig().theta == 1.8
    assert PrimalConfig().tol_kkt == 1e-6
    assert PrimalConfig().max_iters == 50000


@pytest.mark.parametrize("topology", ["interval-neumann", "torus"])
def test_projection_feasible_and_idempotent(topology, rng):
    spec = _uniform_spec(topology=topology)
    g = spec.grid
    m = rng.uniform(0.2, 2.0, size=(g.n_t + 1, g.n_x))
    w = rng.standard_normal((g.n_t, g.n_faces))
    if not g.periodic:
        w[:, 0] = w[:, -1] = 0.0
    p = project_continuity(_state(spec, m, w), spec)
    assert np.max(np.abs(continuity_residual(p, spec))) <= 1e-10
    p2 = project_continuity(p, spec)
    assert np.max(np.abs(p2.m.values - p.m.values)) <= 1e-12
    assert np.max(np.abs(p2.w.values - p.w.values)) <= 1e-12


def test_projection_matches_dense_least_squares(rng):
    # oracle: minimum-norm correction via the pseudoinverse of the dense
    # continuity operator assembled here independently
    g = SpaceTimeGrid(1.0, 0.0, 1.0, 3, 4)
    u = np.ones(4)
    spec = ProblemSpec(g, u, u, np.zeros(4), QUAD_H, CouplingSpec(epsilon=0.5))
    nt, nx = 3, 4
    dt, dx = g.dt, g.dx

    n_m = (nt - 1) * nx
    n_w = nt * (nx - 1)

    def midx(k, i):
        return (k - 1) * nx + i

    def widx(k, j):
        return n_m + k * (nx - 1) + (j - 1)

    C = np.zeros((nt * nx, n_m + n_w))
    d = np.zeros(nt * nx)
    for k in range(nt):
        for i in range(nx):
            r = k * nx + i
            if k + 1 <= nt - 1:
                C[r, midx(k + 1, i)] += 1.0 / dt
            else:
                d[r] -= spec.m1[i] / dt
            if k >= 1:
                C[r, midx(k, i)] -= 1.0 / dt
            else:
                d[r] += spec.m0[i] / dt
            if 1 <= i <= nx - 1:
                C[r, widx(k, i)] += 1.0 / dx
            if 1 <= i + 1 <= nx - 1:
                C[r, widx(k, i + 1)] -= 1.0 / dx

    m = rng.uniform(0.2, 2.0, size=(nt + 1, nx))
    w = rng.standard_normal((nt, nx + 1))
    w[:, 0] = w[:, -1] = 0.0
    x = np.concatenate([m[1:-1].ravel(), w[:, 1:-1].ravel()])
    x_proj = x - C.T @ np.linalg.lstsq(C @ C.T, C @ x - d, rcond=None)[0]

    p = project_continuity(_state(spec, m, w), spec)
    got = np.concatenate([p.m.values[1:-1].ravel(), p.w.values[:, 1:-1].ravel()])
    assert np.max(np.abs(got - x_proj)) <= 1e-8


def test_solve_uniform_stationary():
    spec = _uniform_spec()
    state, log = solve_primal(spec, PrimalConfig(tol_kkt=1e-10))
    assert log.converged
    assert np.max(np.abs(state.m.values - 1.0)) <= 1e-8
    assert np.max(np.abs(state.w.values)) <= 1e-8


def test_solve_gibbs_small(solves):
    spec = solves.spec("gibbs", 16)
    state, log = solves.primal("gibbs", 16)
    assert log.converged
    # the rest state at the shared marginal is the exact discrete minimizer
    assert np.max(np.abs(state.m.values - spec.m0)) <= 1e-6
    assert np.max(np.abs(state.w.values)) <= 1e-6


def test_solve_feasibility_and_mass(solves):
    spec = solves.spec("congestion", 16)
    state, log = solves.primal("congestion", 16)
    assert log.converged
    assert log.feasibility <= 1e-8
    for k in range(spec.grid.n_t + 1):
        assert abs(mass(state.m, k) - 1.0) <= 1e-8


def test_solve_positivity(solves):
    state, _ = solves.primal("congestion", 16)
    assert np.min(state.m.values) > 0.0


def test_value_beats_straight_line_transport(solves):
    # the minimizer's value never exceeds that of the linear-interpolation
    # competitor (projected to feasibility)
    spec = solves.spec("congestion", 16)
    state, log = solves.primal("congestion", 16)
    g = spec.grid
    lam = np.linspace(0.0, 1.0, g.n_t + 1)[:, None]
    m_lin = (1 - lam) * spec.m0 + lam * spec.m1
    comp = project_continuity(
        _state(spec, m_lin, np.zeros((g.n_t, g.n_faces))), spec)
    j_comp = functional_value(comp, spec)
    assert log.final_value <= j_comp + 1e-10


def test_mirror_symmetry(solves):
    # the congestion instance is symmetric under x -> -x combined with
    # swapping the marginals (time reversal)
    spec = solves.spec("congestion", 16)
    state, _ = solves.primal("congestion", 16)
    m = state.m.values
    w = state.w.values
    # x -> -x and t -> T-t each flip the sign of w, so together they cancel
    m_ref = m[::-1, ::-1]
    w_ref = w[::-1, ::-1]
    tol = 20 * 1e-6
    assert np.max(np.abs(m - m_ref)) <= tol
    assert np.max(np.abs(w - w_ref)) <= tol


def test_time_reversal_equivalence():
    # solving with (m0, m1) swapped yields the time-reversed momentum field
    n = 12
    g = SpaceTimeGrid(1.0, -2.0, 2.0, n, n)
    a = gaussian_with_floor(-0.6, std=0.5)
    b = gaussian_with_floor(0.6, std=0.4)
    fwd = build_spec(g, a, b, {"family": "zero"}, QUAD_H,
                     CouplingSpec(epsilon=0.3))
    bwd = build_spec(g, b, a, {"family": "zero"}, QUAD_H,
                     CouplingSpec(epsilon=0.3))
    cfg = PrimalConfig(tol_kkt=1e-8)
    sf, lf = solve_primal(fwd, cfg)
    sb, lb = solve_primal(bwd, cfg)
    assert lf.converged and lb.converged
    tol = 50 * 1e-8
    assert np.max(np.abs(sf.m.values - sb.m.values[::-1])) <= tol
    assert np.max(np.abs(sf.w.values + sb.w.values[::-1])) <= tol


def test_torus_translation_covariance(solves):
    # on the torus with V = 0, shifting both marginals by whole cells
    # shifts the solution
    spec = solves.spec("bump", 16)
    state, log = solves.primal("bump", 16)
    assert log.converged
    g = spec.grid
    shift = 4
    shifted = ProblemSpec(g, np.roll(spec.m0, shift), np.roll(spec.m1, shift),
                          spec.V, spec.hamiltonian, spec.coupling)
    s2, l2 = solve_primal(shifted, PrimalConfig())
    assert l2.converged
    tol = 50 * 1e-6
    assert np.max(np.abs(np.roll(state.m.values, shift, axis=1)
                         - s2.m.values)) <= tol


def test_log_contents(solves):
    _, log = solves.primal("gibbs", 16)
    assert log.iters >= 1
    assert len(log.values) == log.iters
    assert np.isfinite(log.final_value)
    assert log.fp_residual <= 1e-8
