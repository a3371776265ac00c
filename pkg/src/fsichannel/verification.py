"""Manufactured-solution convergence study for the fluid solver.

An exact velocity/pressure pair is substituted into the strong form of the
(untransformed) steady Navier-Stokes equations on the straight channel to
produce volume forcing f, divergence data f2 and an outflow load f3.  The
velocity is built so it vanishes on the channel walls (the solver's
homogeneous Dirichlet tags) and the inflow trace is used as Dirichlet data.
Errors are measured by quadrature against the exact callables and rates by
a least-squares fit in log-log coordinates.
"""

from dataclasses import dataclass

import numpy as np
import sympy as sym

from .assembly import NormSet
from .fluid import PicardSolver, fluid_spaces
from .mesh import build_channel_mesh, refine_uniform, straight_channel
from .quadrature import TRI_POINTS, TRI_WEIGHTS
from .spaces import FEFunction


def _lambdify_pair(w1, w2, p, nu):
    """Forcing and boundary data callables from sympy expressions."""
    x, y = sym.symbols("x y", real=True)
    w = sym.Matrix([w1, w2])
    f = sym.Matrix([
        -nu * (sym.diff(w[i], x, 2) + sym.diff(w[i], y, 2))
        + w[0] * sym.diff(w[i], x) + w[1] * sym.diff(w[i], y)
        for i in range(2)
    ])
    f[0] += sym.diff(p, x)
    f[1] += sym.diff(p, y)
    f2 = sym.diff(w[0], x) + sym.diff(w[1], y)
    # outflow load: the do-nothing functional of the exact pair, moved to
    # the right-hand side (outward normal is +e_x on the outflow)
    f3 = sym.Matrix([nu * sym.diff(w[0], x) - p, nu * sym.diff(w[1], x)])
    grads = sym.Matrix([[sym.diff(w[i], v) for v in (x, y)] for i in range(2)])

    def vec(expr):
        fn = sym.lambdify((x, y), list(expr), "numpy")
        return lambda xx, yy: np.asarray(fn(xx, yy), dtype=float)

    scal = sym.lambdify((x, y), f2, "numpy")
    pfun = sym.lambdify((x, y), p, "numpy")
    gfun = sym.lambdify((x, y), [[grads[i, j] for j in range(2)] for i in range(2)], "numpy")
    return {
        "w": vec(w),
        "p": lambda xx, yy: float(pfun(xx, yy)),
        "grad_w": lambda xx, yy: np.asarray(gfun(xx, yy), dtype=float),
        "f": vec(f),
        "f2": lambda xx, yy: float(scal(xx, yy)),
        "f3": vec(f3),
    }


def exact_pair(kind, nu=1.0, height=1.0):
    """Named exact solutions: "polynomial" sits inside the P2/P1 space,
    "trig" is a smooth stream-function pair for asymptotic rates."""
    x, y = sym.symbols("x y", real=True)
    if kind == "polynomial":
        w1 = y * (height - y)
        w2 = 2 * y * (height - y)
        p = 1 + 2 * x - 3 * y
    elif kind == "trig":
        # divergence-free: w = curl of psi
        psi = sym.Rational(1, 4) * sym.sin(sym.pi * y / height) ** 2 * sym.sin(x / 2)
        w1 = sym.diff(psi, y)
        w2 = -sym.diff(psi, x)
        p = sym.cos(x) * sym.sin(sym.pi * y / height)
    else:
        raise ValueError(f"unknown exact pair {kind!r}")
    return _lambdify_pair(w1, w2, p, nu)


def _errors(state, exact):
    """Quadrature H1 velocity and L2 pressure errors against callables."""
    V, Q = state.w.space, state.p.space
    wdet = TRI_WEIGHTS[None, :] * V.detJ[:, None]
    xy = V.quad_points_physical(TRI_POINTS)
    wh = state.w.values_at(TRI_POINTS)
    gh = state.w.gradients_at(TRI_POINTS)
    ph = state.p.values_at(TRI_POINTS)[..., 0]
    ex_w = np.empty_like(wh)
    ex_g = np.empty_like(gh)
    ex_p = np.empty_like(ph)
    for e in range(xy.shape[0]):
        for q in range(xy.shape[1]):
            xx, yy = xy[e, q]
            ex_w[e, q] = exact["w"](xx, yy)
            ex_g[e, q] = exact["grad_w"](xx, yy)
            ex_p[e, q] = exact["p"](xx, yy)
    dw, dg, dp = wh - ex_w, gh - ex_g, ph - ex_p
    h1_sq = np.einsum("eq,eqi,eqi->", wdet, dw, dw)
    h1_sq += np.einsum("eq,eqil,eqil->", wdet, dg, dg)
    l2p_sq = np.einsum("eq,eq,eq->", wdet, dp, dp)
    return float(np.sqrt(h1_sq)), float(np.sqrt(l2p_sq))


def fit_rate(hs, errs):
    """Least-squares slope of log(err) against log(h)."""
    A = np.column_stack([np.log(hs), np.ones(len(hs))])
    slope, _ = np.linalg.lstsq(A, np.log(errs), rcond=None)[0]
    return float(slope)


@dataclass
class RateTable:
    hs: list
    h1_velocity: list
    l2_pressure: list
    rate_velocity: float
    rate_pressure: float

    def rows(self):
        return list(zip(self.hs, self.h1_velocity, self.l2_pressure))


def mms_convergence_study(kind="trig", levels=3, h0=0.2, nu=1.0, tol=1e-10):
    """Solve on a sequence of uniformly refined straight channels and
    report errors and fitted rates."""
    geo = straight_channel(h=h0)
    exact = exact_pair(kind, nu=nu, height=geo.channel_height)
    mesh = build_channel_mesh(geo)
    hs, ev, ep = [], [], []
    for lvl in range(levels):
        V, Q = fluid_spaces(mesh)
        solver = PicardSolver(V, Q, nu=nu)
        state, _ = solver.solve(
            None, exact["w"], f=exact["f"], f2=exact["f2"], f3=exact["f3"],
            tol=tol,
        )
        e_v, e_p = _errors(state, exact)
        hs.append(h0 / 2**lvl)
        ev.append(e_v)
        ep.append(e_p)
        if lvl + 1 < levels:
            mesh = refine_uniform(mesh)
    rv = fit_rate(hs[-2:], ev[-2:]) if levels > 1 else float("nan")
    rp = fit_rate(hs[-2:], ep[-2:]) if levels > 1 else float("nan")
    return RateTable(hs, ev, ep, rv, rp)
