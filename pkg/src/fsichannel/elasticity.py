"""Linear elasticity on the annular obstacle.

The solid occupies the region between the two obstacle rectangles.  It is
clamped on the inner boundary and loaded by a traction on the interface
shared with the fluid.  The constitutive law is isotropic Lame elasticity,

    sigma(u) = 2 mu eps(u) + lam tr(eps(u)) I,

and the solver returns the displacement of the weak problem

    int sigma(u) : eps(psi) = int f1 . psi + int_interface v . psi

with u = 0 on the clamped boundary.
"""

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import (
    assemble_boundary_load,
    assemble_elasticity,
    assemble_velocity_load,
)
from .geomap import interface_dofs
from .linsolve import SingularSystemError
from .mesh import SOLID, TAG_CLAMPED, TAG_INTERFACE
from .spaces import FEFunction, Space, make_space


class ElasticitySolver:
    """Factorized clamped elasticity operator for repeated traction loads.

    Parameters
    ----------
    space : Space
        Order-2 vector space on the solid subdomain.  Built from the mesh
        if only a mesh is at hand; see :func:`solid_space`.
    lame : tuple of float
        (lam, mu) with lam >= 0 and mu > 0.
    """

    def __init__(self, space: Space, lame):
        if space.desc.subdomain != SOLID or space.desc.arity != 2:
            raise ValueError("elasticity needs a vector space on the solid")
        lam, mu = float(lame[0]), float(lame[1])
        self.space = space
        self.lame = (lam, mu)
        self.matrix = assemble_elasticity(space, lam, mu).tocsc()
        self.clamped = space.boundary_dofs(TAG_CLAMPED)
        self.iface = interface_dofs(space)
        mask = np.ones(space.ndof, dtype=bool)
        mask[self.clamped] = False
        self.free = np.flatnonzero(mask)
        try:
            self._lu = spla.splu(self.matrix[self.free][:, self.free])
        except RuntimeError as exc:
            raise SingularSystemError(f"elasticity factorization failed: {exc}") from exc

    def solve(self, f1=None, traction=None) -> FEFunction:
        """Displacement for volume force f1 and interface traction values.

        ``traction`` is an array of shape (n_interface, 2) giving the load
        at the interface scalar dofs (vertices and edge midpoints), in the
        canonical interface ordering of :func:`geomap.interface_dofs`.
        The traction enters as the weak Neumann load int_interface v . psi.
        """
        rhs = np.zeros(self.space.ndof)
        if f1 is not None:
            rhs += assemble_velocity_load(self.space, f1)
        if traction is not None:
            tr = np.asarray(traction, dtype=float)
            if tr.shape != (len(self.iface), 2):
                raise ValueError(
                    f"traction shape {tr.shape} != ({len(self.iface)}, 2)"
                )
            v = FEFunction.zeros(self.space)
            cm = v.component_matrix()
            cm[self.iface] = tr
            rhs += assemble_boundary_load(self.space, TAG_INTERFACE, v)
        coef = np.zeros(self.space.ndof)
        coef[self.free] = self._lu.solve(rhs[self.free])
        res = self.matrix @ coef - rhs
        res[self.clamped] = 0.0
        scale = max(np.linalg.norm(rhs), 1.0)
        if np.linalg.norm(res) > 1e-10 * scale:
            raise SingularSystemError("elasticity residual exceeds tolerance")
        return FEFunction(self.space, coef)


def solid_space(mesh) -> Space:
    return make_space(mesh, order=2, arity=2, subdomain=SOLID)


def solve_elasticity(mesh, f1, traction, lame) -> FEFunction:
    """One-shot clamped solve; see :class:`ElasticitySolver` for arguments."""
    return ElasticitySolver(solid_space(mesh), lame).solve(f1, traction)


def interface_trace(u: FEFunction) -> np.ndarray:
    """Displacement values at the interface dofs, shape (n_interface, 2).

    Conforming spaces make this an exact coefficient extraction: the
    returned rows are the nodal values at the interface vertices and edge
    midpoints, ordered canonically.
    """
    return u.component_matrix()[interface_dofs(u.space)].copy()
