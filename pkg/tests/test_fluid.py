import numpy as np
import pytest

from oracles import fit_loglog, newton_navier_stokes

from fsichannel import assembly as asm
from fsichannel.fluid import (
    ConvergenceError,
    InflowProfile,
    PicardSolver,
    dirichlet_sets,
    fluid_spaces,
    solve_linearized,
    solve_navier_stokes,
)
from fsichannel.geomap import harmonic_extension, interface_dofs, transform_fields
from fsichannel.linsolve import apply_dirichlet, solve_sparse
from fsichannel.mesh import FLUID, build_channel_mesh, straight_channel
from fsichannel.spaces import FEFunction
from conftest import mirror_dof_error


@pytest.fixture(scope="module")
def deformed_fields(default_mesh):
    V, _ = fluid_spaces(default_mesh)
    iface = interface_dofs(V)
    xy = V.dof_coords[iface]
    trace = 0.01 * np.column_stack(
        [np.sin(np.pi * xy[:, 0]), np.cos(np.pi * xy[:, 1])])
    ext = harmonic_extension(V, trace)
    return ext, transform_fields(V, ext)


def test_zero_inflow_zero_state(straight_mesh):
    state, rep = solve_navier_stokes(straight_mesh, g=None)
    assert rep.iterations == 1
    assert np.abs(state.w.coefficients).max() == 0.0
    assert np.abs(state.p.coefficients).max() == 0.0


def test_poiseuille_exact(straight_mesh):
    geo = straight_mesh.geometry
    nu, mag = 1.0, 0.3
    g = InflowProfile(mag, geo.channel_height)
    state, rep = solve_navier_stokes(straight_mesh, g=g, nu=nu)
    assert rep.iterations <= 3
    V, Q = state.w.space, state.p.space
    wex = np.array([g(x, y) for x, y in V.dof_coords]).ravel()
    c = mag * 4 / geo.channel_height**2
    pex = 2 * nu * c * (geo.channel_length - Q.dof_coords[:, 0])
    norms = asm.NormSet(V)
    assert norms.h1_norm(state.w.coefficients - wex) <= 1e-9
    assert np.abs(state.p.coefficients - pex).max() <= 1e-9


def test_do_nothing_residual_at_outflow(straight_mesh):
    # at the converged Poiseuille state the weak residual rows of the
    # outflow dofs carry exactly the do-nothing boundary functional
    geo = straight_mesh.geometry
    g = InflowProfile(0.3, geo.channel_height)
    V, Q = fluid_spaces(straight_mesh)
    solver = PicardSolver(V, Q, nu=1.0)
    state, _ = solver.solve(None, g)
    x = state.stacked()
    system = asm.transformed_oseen_system(V, Q, None, 1.0, advector=state.w)
    r = system.full_matrix() @ x - solver.loads()
    out_dofs = V.boundary_dofs("outflow", exclusive=True)
    assert np.abs(r[out_dofs]).max() <= 1e-9


def test_matches_monolithic_newton_oracle(coarse_mesh, operating_inflow):
    state, _ = solve_navier_stokes(coarse_mesh, g=operating_inflow,
                                   nu=1.0, tol=1e-12)
    V, Q = state.w.space, state.p.space
    tris = coarse_mesh.triangles[coarse_mesh.tri_subdomain == FLUID]

    from oracles import TaylorHoodDofs

    dofs = TaylorHoodDofs(coarse_mesh.nodes, tris)
    key = {tuple(np.round(c, 12)): i for i, c in enumerate(dofs.coords)}
    dirichlet = {}
    for tag in ("wall", "interface"):
        for d in V.boundary_scalar_dofs(tag, exclusive=True):
            o = key[tuple(np.round(V.dof_coords[d], 12))]
            dirichlet[2 * o] = 0.0
            dirichlet[2 * o + 1] = 0.0
    for d in V.boundary_scalar_dofs("inflow", exclusive=True):
        x, y = V.dof_coords[d]
        o = key[tuple(np.round((x, y), 12))]
        gx, gy = operating_inflow(x, y)
        dirichlet[2 * o] = gx
        dirichlet[2 * o + 1] = gy
    x, odofs = newton_navier_stokes(coarse_mesh.nodes, tris, 1.0, dirichlet)
    nv = 2 * odofs.n_p2
    cm = state.w.component_matrix()
    werr = 0.0
    for s, c in enumerate(V.dof_coords):
        o = key[tuple(np.round(c, 12))]
        werr = max(werr, np.abs(cm[s] - x[2 * o:2 * o + 2]).max())
    perr = 0.0
    for s, c in enumerate(Q.dof_coords):
        o = key[tuple(np.round(c, 12))]
        perr = max(perr, abs(state.p.coefficients[s] - x[nv + o]))
    assert werr <= 1e-8
    assert perr <= 1e-8


def test_identity_reduction_bitwise(default_mesh):
    from fsichannel.geomap import identity_fields

    V, Q = fluid_spaces(default_mesh)
    ident = identity_fields(V)
    a = asm.transformed_oseen_system(V, Q, ident, 1.0).full_matrix()
    b = asm.transformed_oseen_system(V, Q, None, 1.0).full_matrix()
    d = (a - b).tocoo()
    assert d.nnz == 0 or np.abs(d.data).max() == 0.0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_picard_nonconvergence_reported(coarse_mesh):
    # strong inflow past the obstacle leaves the contraction regime
    g = InflowProfile(50.0, coarse_mesh.geometry.channel_height)
    with pytest.raises(ConvergenceError) as err:
        solve_navier_stokes(coarse_mesh, g=g, nu=0.01, max_iter=10)
    assert err.value.report.increment_ratios


def test_picard_ratio_sweep_monotone(default_mesh):
    V, Q = fluid_spaces(default_mesh)
    solver = PicardSolver(V, Q, nu=1.0)
    H = default_mesh.geometry.channel_height
    ratios = []
    for mag in (0.05, 0.2, 0.5, 1.0):
        _, rep = solver.solve(None, InflowProfile(mag, H))
        ratios.append(max(rep.increment_ratios))
    assert all(r <= 0.9 for r in ratios)
    assert all(b > a for a, b in zip(ratios, ratios[1:]))


def test_mirror_symmetric_solution(default_mesh, operating_inflow):
    state, _ = solve_navier_stokes(default_mesh, g=operating_inflow, nu=1.0)
    H = default_mesh.geometry.channel_height
    assert mirror_dof_error(state.w.space, state.w.coefficients, H, 2) <= 1e-9
    assert mirror_dof_error(state.p.space, state.p.coefficients, H, 1) <= 1e-9


def test_residual_history_decreasing(default_mesh, operating_inflow,
                                     deformed_fields):
    _, fields = deformed_fields
    V, Q = fluid_spaces(default_mesh)
    solver = PicardSolver(V, Q, nu=1.0)
    _, rep = solver.solve(fields, operating_inflow)
    hist = rep.residual_history
    assert all(b <= a * 1.01 + 1e-14 for a, b in zip(hist, hist[1:]))


def test_linearized_zero_data(default_mesh, deformed_fields):
    _, fields = deformed_fields
    V, Q = fluid_spaces(default_mesh)
    base = FEFunction.zeros(V)
    zw, zp, _ = solve_linearized(V, Q, fields, base, nu=1.0)
    assert np.abs(zw.coefficients).max() == 0.0
    assert np.abs(zp.coefficients).max() == 0.0


def test_linearized_at_rest_is_stokes(default_mesh):
    V, Q = fluid_spaces(default_mesh)
    H = default_mesh.geometry.channel_height
    dg = InflowProfile(1.0, H)
    zw, zp, _ = solve_linearized(V, Q, None, FEFunction.zeros(V), dg=dg,
                                 nu=1.0, mode="direct")
    system = asm.transformed_oseen_system(V, Q, None, 1.0)
    x = solve_sparse(apply_dirichlet(system, dirichlet_sets(V, dg)))
    scale = max(np.abs(x).max(), 1.0)
    assert np.abs(zw.coefficients - x[:V.ndof]).max() <= 1e-12 * scale
    assert np.abs(zp.coefficients - x[V.ndof:]).max() <= 1e-12 * scale


def test_linearized_fd_consistency(default_mesh, operating_inflow,
                                   deformed_fields):
    _, fields = deformed_fields
    V, Q = fluid_spaces(default_mesh)
    solver = PicardSolver(V, Q, nu=1.0)
    H = default_mesh.geometry.channel_height
    base, _ = solver.solve(fields, operating_inflow, tol=1e-13)
    dg = InflowProfile(1.0, H)
    zw, zp, _ = solve_linearized(V, Q, fields, base.w, dg=dg, nu=1.0)
    hs, rem = [], []
    for h in (1e-2, 3e-3, 1e-3):
        pert, _ = solver.solve(
            fields, InflowProfile(0.05 + h, H), tol=1e-13)
        r = np.linalg.norm(np.concatenate([
            pert.w.coefficients - base.w.coefficients - h * zw.coefficients,
            pert.p.coefficients - base.p.coefficients - h * zp.coefficients,
        ]))
        hs.append(h)
        rem.append(r)
    assert fit_loglog(hs, rem) >= 1.8


def test_t_iteration_matches_direct(default_mesh, operating_inflow,
                                    deformed_fields):
    _, fields = deformed_fields
    V, Q = fluid_spaces(default_mesh)
    solver = PicardSolver(V, Q, nu=1.0)
    base, _ = solver.solve(fields, operating_inflow, tol=1e-13)
    dg = InflowProfile(1.0, default_mesh.geometry.channel_height)
    zw, zp, _ = solve_linearized(V, Q, fields, base.w, dg=dg, nu=1.0,
                                 mode="direct")
    tw, tp, rep = solve_linearized(V, Q, fields, base.w, dg=dg, nu=1.0,
                                   mode="T-iteration")
    assert np.abs(tw.coefficients - zw.coefficients).max() <= 1e-8
    assert np.abs(tp.coefficients - zp.coefficients).max() <= 1e-8
    assert max(rep.increment_ratios) < 1.0


def test_unknown_linearized_mode_rejected(default_mesh, deformed_fields):
    _, fields = deformed_fields
    V, Q = fluid_spaces(default_mesh)
    with pytest.raises(ValueError):
        solve_linearized(V, Q, fields, FEFunction.zeros(V), mode="magic")
