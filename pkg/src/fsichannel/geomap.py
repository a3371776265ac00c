"""Flow map machinery: harmonic extension, transform fields, derivatives.

The interface displacement trace is lifted into the fluid domain by a
componentwise harmonic extension with zero exterior data; the flow map is
the identity plus that lift.  The transform fields (Jacobian determinant,
cofactor matrix, diffusion matrix) are cached per quadrature point; the
diffusion matrix is rational in the lift's gradient, so quadrature-point
storage avoids any projection error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import NonPositiveJacobianError, assemble_scalar_stiffness
from .linsolve import FrozenFactorization, SaddleSystem
from .mesh import ALL_TAGS, TAG_INTERFACE
from .quadrature import TRI_POINTS
from .spaces import FEFunction, Space, interface_scalar_maps


class TangledMeshError(NonPositiveJacobianError):
    """The displaced flow map is not orientation preserving."""


class EllipticityError(ValueError):
    """The diffusion matrix dropped below the admissibility floor."""


def cof2(M):
    """Cofactor of a 2x2 matrix field (... , 2, 2); linear in M."""
    out = np.empty_like(M)
    out[..., 0, 0] = M[..., 1, 1]
    out[..., 0, 1] = -M[..., 1, 0]
    out[..., 1, 0] = -M[..., 0, 1]
    out[..., 1, 1] = M[..., 0, 0]
    return out


def det2(M):
    return M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]


def sym_eig_min(A):
    """Smallest eigenvalue of a symmetric 2x2 field."""
    tr2 = 0.5 * (A[..., 0, 0] + A[..., 1, 1])
    dev = 0.5 * (A[..., 0, 0] - A[..., 1, 1])
    rad = np.sqrt(dev * dev + A[..., 0, 1] * A[..., 1, 0])
    return tr2 - rad


@dataclass
class TransformFields:
    """Per-quadrature-point flow map data on the fluid elements."""

    DPhi: np.ndarray  # (T, q, 2, 2), entry [i, l] = d_l Phi_i
    J: np.ndarray     # (T, q)
    K: np.ndarray     # (T, q, 2, 2), cofactor of DPhi
    A: np.ndarray     # (T, q, 2, 2), J^-1 K K^T

    def min_eig_A(self):
        return sym_eig_min(self.A)


@dataclass
class TransformDerivatives:
    """Directional derivatives of the transform fields (same layout)."""

    dDPhi: np.ndarray
    dJ: np.ndarray
    dK: np.ndarray
    dA: np.ndarray


def interface_dofs(space: Space):
    """Interface scalar dofs in the canonical (edge-list) entity order."""
    dofs, _ = interface_scalar_maps(space, space)
    return dofs


class HarmonicExtender:
    """Factorized componentwise Laplace solver for interface lifts.

    Dirichlet data: the trace on the interface, zero on the remaining
    boundary of the fluid subdomain.
    """

    def __init__(self, vspace: Space):
        self.vspace = vspace
        S = assemble_scalar_stiffness(vspace)
        self.iface = interface_dofs(vspace)
        bdofs = set()
        for tag in ALL_TAGS:
            try:
                bdofs |= set(vspace.boundary_scalar_dofs(tag))
            except Exception:
                continue
        self.others = np.asarray(sorted(bdofs - set(self.iface)), dtype=np.int64)
        n = vspace.n_scalar
        system = SaddleSystem(S, None, None, None, np.zeros(n), None)
        self._cdofs = np.sort(np.concatenate([self.iface, self.others]))
        system.constrained_dofs = self._cdofs
        system.constrained_values = np.zeros(len(self._cdofs))
        self._fact = FrozenFactorization(system)
        self._zero_rhs = np.zeros(n)

    def extend(self, trace_values):
        """Lift (n_int, 2) interface values; returns a vector FEFunction."""
        trace_values = np.asarray(trace_values, dtype=float)
        coeffs = np.zeros((self.vspace.n_scalar, 2))
        by_dof = np.zeros(self.vspace.n_scalar)
        for c in range(2):
            by_dof[:] = 0.0
            by_dof[self.iface] = trace_values[:, c]
            coeffs[:, c] = self._fact.solve(self._zero_rhs, by_dof[self._cdofs])
        return FEFunction(self.vspace, coeffs.reshape(-1))


def harmonic_extension(vspace: Space, trace_values) -> FEFunction:
    """One-shot interface lift (see :class:`HarmonicExtender`)."""
    return HarmonicExtender(vspace).extend(trace_values)


def flow_map(vspace: Space, extension: FEFunction) -> FEFunction:
    """Identity coordinates plus the interface lift."""
    phi = extension.coefficients
    ident = vspace.dof_coords.reshape(-1)
    return FEFunction(vspace, ident + phi)


def transform_fields(vspace: Space, extension: FEFunction) -> TransformFields:
    """Evaluate (DPhi, J, K, A) at all quadrature points of the fluid mesh.

    Raises :class:`TangledMeshError` if the map is not orientation
    preserving anywhere.
    """
    G = extension.gradients_at(TRI_POINTS)  # (T, q, i, l) of the lift
    DPhi = G + np.eye(2)[None, None, :, :]
    J = det2(DPhi)
    if np.any(J <= 0.0):
        e, q = np.unravel_index(np.argmin(J), J.shape)
        raise TangledMeshError(vspace.tri_ids[e], J[e, q])
    K = cof2(DPhi)
    A = np.einsum("eqij,eqkj->eqik", K, K) / J[..., None, None]
    return TransformFields(DPhi, J, K, A)


def identity_fields(vspace: Space) -> TransformFields:
    nt, nq = len(vspace.tri_ids), len(TRI_POINTS)
    eye = np.broadcast_to(np.eye(2), (nt, nq, 2, 2)).copy()
    return TransformFields(eye.copy(), np.ones((nt, nq)), eye.copy(), eye.copy())


def transform_derivatives(fields: TransformFields, dgrad) -> TransformDerivatives:
    """Directional derivatives for a lift perturbation with gradient ``dgrad``.

    Uses Jacobi's formula for the determinant and the exact linearity of the
    2D cofactor; the diffusion matrix derivative follows by the product rule.
    """
    dDPhi = np.asarray(dgrad)
    dJ = np.einsum("eqil,eqil->eq", fields.K, dDPhi)
    dK = cof2(dDPhi)
    KKt = np.einsum("eqij,eqkj->eqik", fields.K, fields.K)
    dKKt = np.einsum("eqij,eqkj->eqik", dK, fields.K) + np.einsum(
        "eqij,eqkj->eqik", fields.K, dK
    )
    J = fields.J[..., None, None]
    dA = -dJ[..., None, None] / (J * J) * KKt + dKKt / J
    return TransformDerivatives(dDPhi, dJ, dK, dA)


def check_admissibility(fields: TransformFields, beta=0.25):
    """Reject fields whose diffusion matrix loses uniform ellipticity."""
    emin = fields.min_eig_A()
    if np.min(emin) < beta:
        e, q = np.unravel_index(np.argmin(emin), emin.shape)
        raise EllipticityError(
            f"min eigenvalue of A is {emin[e, q]:.4f} < beta = {beta} "
            f"(element row {e})"
        )
    return float(np.min(emin)), float(np.min(fields.J))


def piola_divergence(vspace: Space, extension: FEFunction):
    """Row-wise divergence of the cofactor matrix, (T, 2), per element.

    Computed from the element polynomial expansion (physical Hessians of the
    quadratic lift are constant per element), not finite differences.
    """
    from .spaces import p2_ref_hessians

    if vspace.desc.order != 2:
        raise ValueError("piola check requires the quadratic extension space")
    Href = p2_ref_hessians()  # (a, 2, 2) in reference coordinates
    cm = extension.component_matrix()[vspace.elem_dofs]  # (T, nloc, 2)
    # physical Hessian of basis a: B^-T Href[a] B^-1 (constant per element)
    Hbasis = np.einsum("edj,adl,elk->eajk", vspace.inv_jac, Href, vspace.inv_jac)
    H = np.einsum("eajk,eai->eijk", Hbasis, cm)  # (T, i, j, k): d_j d_k Phi_i
    div = np.empty((H.shape[0], 2))
    div[:, 0] = H[:, 1, 0, 1] - H[:, 1, 1, 0]
    div[:, 1] = -H[:, 0, 0, 1] + H[:, 0, 1, 0]
    return div


def quality_rows(vspace: Space, fields: TransformFields):
    """(element id, min J, min eig A) per element, for CSV monitoring."""
    emin = fields.min_eig_A()
    return [
        (int(vspace.tri_ids[e]), float(fields.J[e].min()), float(emin[e].min()))
        for e in range(fields.J.shape[0])
    ]
