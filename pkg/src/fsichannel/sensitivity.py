"""Directional derivatives of the coupled control-to-state map.

For the map g -> (u, w, p) (inflow profile to coupled state) this module
computes the directional derivative in a direction dg by mirroring the
coupled fixed point: the fluid state is differentiated with respect to both
the inflow data and the flow-map displacement, the traction is
differentiated by the product rule, and the elastic solve is its own
derivative (it is linear).  The resulting fixed point for du converges
whenever the underlying coupling iteration contracts, and the derivative
is validated externally by Taylor-remainder tests.
"""

from dataclasses import dataclass, field

import numpy as np

from . import assembly as asm
from .fluid import (
    ConvergenceError,
    SolverReport,
    dirichlet_sets,
    linearized_system,
    _inflow_values,
    _product_norm,
)
from .fsi import FSISolver, FSIState
from .geomap import transform_derivatives
from .linsolve import FrozenFactorization, apply_dirichlet
from .quadrature import TRI_POINTS
from .spaces import FEFunction, p2_grads


@dataclass
class SensitivityState:
    du: FEFunction
    dw: FEFunction
    dp: FEFunction
    report: SolverReport


@dataclass
class TaylorReport:
    hs: list
    remainders_u: list
    remainders_w: list
    remainders_p: list
    slope_u: float = float("nan")
    slope_w: float = float("nan")
    slope_p: float = float("nan")

    def rows(self):
        return list(zip(self.hs, self.remainders_u, self.remainders_w,
                        self.remainders_p))


def coefficient_rhs(vspace, pspace, derivs, w_hat, p_hat):
    """Right-hand side of the flow-map-direction linearized system.

    The coefficients (A, K) of the discrete residual are differentiated in
    the given direction and applied to the base state, negated: this is
    exactly -d/ds R(x_hat; A + s dA, K + s dK) at s = 0, so the do-nothing
    outflow treatment of the nonlinear residual is differentiated
    consistently without any surface assembly.
    """
    dA, dK = derivs.dA, derivs.dK
    Mv = asm.assemble_viscous(vspace, dA, 1.0)  # nu folded into dA by caller
    Mv = Mv + asm.assemble_convection(vspace, w_hat, dK)
    A_vp, A_pv = asm.assemble_pressure_blocks(vspace, pspace, dK)
    rhs_v = -(Mv @ w_hat.coefficients) - A_vp @ p_hat.coefficients
    rhs_p = -(A_pv @ w_hat.coefficients)
    return np.concatenate([rhs_v, rhs_p])


class SensitivitySolver:
    """Derivative solves around one converged coupled state.

    The linearized fluid operator at the base state is factorized once and
    reused: every derivative direction only changes the right-hand side and
    the inflow data.
    """

    def __init__(self, solver: FSISolver, base: FSIState):
        self.solver = solver
        self.base = base
        V, Q = solver.vspace, solver.pspace
        self.nu = solver.nu
        system = linearized_system(V, Q, base.fields, base.fluid.w, solver.nu)
        constrained = apply_dirichlet(system, dirichlet_sets(V, None))
        self._cdofs = constrained.constrained_dofs
        self._lu = FrozenFactorization(constrained)

    def _linearized(self, dg=None, rhs_extra=None):
        """(dw, dp) of the linearized fluid problem at the base state."""
        V, Q = self.solver.vspace, self.solver.pspace
        n = V.ndof + Q.ndof
        F = np.zeros(n) if rhs_extra is None else rhs_extra.copy()
        by_dof = np.zeros(n)
        if dg is not None:
            gdofs, gvals = _inflow_values(V, dg)
            by_dof[gdofs] = gvals
        x = self._lu.solve(F, constrained_values=by_dof[self._cdofs])
        return FEFunction(V, x[:V.ndof]), FEFunction(Q, x[V.ndof:])

    def _derivs_of(self, du: FEFunction):
        """Transform-coefficient derivatives for a solid direction du."""
        from .elasticity import interface_trace

        dext = self.solver.extender.extend(interface_trace(du))
        derivs = transform_derivatives(
            self.base.fields, dext.gradients_at(TRI_POINTS)
        )
        return dext, derivs

    def _scaled_rhs(self, derivs):
        # viscosity enters only the viscous coefficient
        nu_derivs = type(derivs)(
            derivs.dDPhi, derivs.dJ, derivs.dK, self.nu * derivs.dA
        )
        return coefficient_rhs(
            self.solver.vspace, self.solver.pspace, nu_derivs,
            self.base.fluid.w, self.base.fluid.p,
        )

    def linearized_wrt_g(self, dg):
        return self._linearized(dg=dg)

    def linearized_wrt_u(self, du: FEFunction):
        _, derivs = self._derivs_of(du)
        return self._linearized(rhs_extra=self._scaled_rhs(derivs))

    def _traction_derivative(self, dext, dp):
        """d(p K n) in a flow-map direction: dp K n + p_hat dK n, nodal."""
        tractor = self.solver.tractor
        base_ext = self.base.extension
        p_hat = self.base.fluid.p
        out = np.zeros((len(tractor.records), 2))
        pcoef = p_hat.coefficients
        dpcoef = dp.coefficients
        ped = self.solver.pspace.elem_dofs
        V = self.solver.vspace
        for k, (d, elems, normal, refs) in enumerate(tractor.records):
            acc = np.zeros(2)
            for elem, ref in zip(elems, refs):
                K = tractor._K_at(base_ext, elem, ref)
                dK = self._dK_at(dext, elem, ref)
                lam = np.array([1.0 - ref[0] - ref[1], ref[0], ref[1]])
                p_val = float(lam @ pcoef[ped[elem]])
                dp_val = float(lam @ dpcoef[ped[elem]])
                acc += dp_val * (K @ normal) + p_val * (dK @ normal)
            out[k] = acc / len(elems)
        return out

    def _dK_at(self, dext, elem, ref):
        from .geomap import cof2

        V = self.solver.vspace
        cm = dext.component_matrix()[V.elem_dofs[elem]]
        gref = p2_grads(ref[None, :])[0]
        G = np.einsum("ai,ad,dk->ik", cm, gref, V.inv_jac[elem])
        return cof2(G[None, None])[0, 0]

    def solve(self, dg, tol=1e-10, max_iter=100) -> SensitivityState:
        """Derivative of the coupled map in direction dg via the
        displacement fixed point du = S(0, dt(du))."""
        solver = self.solver
        S = solver.sspace
        du = FEFunction.zeros(S)
        report = SolverReport(mode="sensitivity")
        prev_inc = None
        bad_streak = 0
        dw = dp = None
        for it in range(1, max_iter + 1):
            dext, derivs = self._derivs_of(du)
            dw, dp = self._linearized(dg=dg, rhs_extra=self._scaled_rhs(derivs))
            dt = self._traction_derivative(dext, dp)
            du_new = solver.solid.solve(traction=dt)
            inc = solver.norms_u.h1_norm(du_new.coefficients - du.coefficients)
            scale = max(solver.norms_u.h1_norm(du_new.coefficients), 1e-30)
            if prev_inc is not None and prev_inc > 0:
                ratio = inc / prev_inc
                report.increment_ratios.append(ratio)
                bad_streak = bad_streak + 1 if ratio >= 1.0 else 0
            prev_inc = inc
            du = du_new
            report.iterations = it
            report.residual_history.append(inc / scale if scale > 0 else 0.0)
            if inc / scale <= tol or inc == 0.0:
                report.converged = True
                break
            if bad_streak >= 5:
                raise ConvergenceError(
                    "sensitivity fixed point is not contracting "
                    f"(ratios {report.increment_ratios[-5:]}); the base state "
                    "is outside the small-data regime", report)
        if not report.converged:
            raise ConvergenceError("sensitivity fixed point did not converge",
                                   report)
        return SensitivityState(du, dw, dp, report)

    def apply_coupling_map(self, du: FEFunction) -> FEFunction:
        """One application of the interface map du -> S(0, dt[du]) with
        dg = 0: the operator whose spectral radius governs contraction."""
        dext, derivs = self._derivs_of(du)
        _, dp = self._linearized(rhs_extra=self._scaled_rhs(derivs))
        dt = self._traction_derivative(dext, dp)
        return self.solver.solid.solve(traction=dt)


def linearized_wrt_g(solver: FSISolver, base: FSIState, dg):
    return SensitivitySolver(solver, base).linearized_wrt_g(dg)


def linearized_wrt_u(solver: FSISolver, base: FSIState, du):
    return SensitivitySolver(solver, base).linearized_wrt_u(du)


def solve_fsi_sensitivity(solver: FSISolver, base: FSIState, dg,
                          tol=1e-10) -> SensitivityState:
    return SensitivitySolver(solver, base).solve(dg, tol=tol)


def contraction_probe(solver: FSISolver, base: FSIState, n_samples=3,
                      iters=12, seed=0):
    """Power-iteration estimate of the interface coupling-map norm."""
    sens = SensitivitySolver(solver, base)
    rng = np.random.default_rng(seed)
    S = solver.sspace
    norms = solver.norms_u
    estimates = []
    for _ in range(n_samples):
        v = rng.standard_normal(S.ndof)
        v[solver.solid.clamped] = 0.0
        n0 = norms.h1_norm(v)
        if n0 == 0:
            continue
        v /= n0
        est = 0.0
        for _ in range(iters):
            w = sens.apply_coupling_map(FEFunction(S, v)).coefficients
            nw = norms.h1_norm(w)
            if nw == 0:
                est = 0.0
                break
            est = nw
            v = w / nw
        estimates.append(est)
    return estimates


def taylor_test(solver: FSISolver, g_of, dg_of, h_list, opts=None,
                base: FSIState | None = None) -> TaylorReport:
    """Taylor-remainder test of the coupled derivative.

    ``g_of(m)`` must return the inflow profile at magnitude offset m, built
    so that g_of(h) == g + h * dg pointwise; ``dg_of`` is the direction.
    Remainders use H1 norms for u and w and the L2 norm for p.
    """
    base = base or solver.solve(g_of(0.0), opts)
    sens = solve_fsi_sensitivity(solver, base, dg_of)
    norms_w = solver.fluid.norms_v
    norms_p = solver.fluid.norms_p
    norms_u = solver.norms_u
    hs, ru, rw, rp = [], [], [], []
    for h in h_list:
        try:
            state_h = solver.solve(g_of(h), opts)
        except Exception:
            continue
        hs.append(h)
        ru.append(norms_u.h1_norm(
            state_h.u.coefficients - base.u.coefficients
            - h * sens.du.coefficients))
        rw.append(norms_w.h1_norm(
            state_h.fluid.w.coefficients - base.fluid.w.coefficients
            - h * sens.dw.coefficients))
        rp.append(norms_p.l2(
            state_h.fluid.p.coefficients - base.fluid.p.coefficients
            - h * sens.dp.coefficients))
    if len(hs) < 3:
        raise ConvergenceError("fewer than 3 valid h values in taylor_test",
                               None)
    report = TaylorReport(hs, ru, rw, rp)
    from .verification import fit_rate

    report.slope_u = fit_rate(hs, ru)
    report.slope_w = fit_rate(hs, rw)
    report.slope_p = fit_rate(hs, rp)
    return report


def write_taylor_csv(path, report: TaylorReport):
    with open(path, "w") as fh:
        fh.write("h,R_u,R_w,R_p\n")
        for row in report.rows():
            fh.write(",".join(f"{c!r}" for c in row) + "\n")
