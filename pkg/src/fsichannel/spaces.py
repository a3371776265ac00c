"""Finite element spaces on mesh subdomains.

Taylor-Hood pairing: order-2 vector spaces for velocity, displacement, and
extension fields; order-1 scalar space for pressure.  Scalar degrees of
freedom sit at mesh vertices (order 1) plus edge midpoints (order 2); vector
dofs interleave components as ``2*scalar + component``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import ALL_TAGS, TAG_PRIORITY, Mesh, MeshError

SCALAR = 1
VECTOR = 2


@dataclass(frozen=True)
class SpaceDescriptor:
    order: int
    arity: int
    subdomain: int

    def __post_init__(self):
        if self.order not in (1, 2):
            raise ValueError("element order must be 1 or 2")
        if self.arity not in (SCALAR, VECTOR):
            raise ValueError("arity must be scalar (1) or 2-vector (2)")


def p1_basis(pts):
    """P1 basis values at reference points pts (q,2) -> (q,3)."""
    x, y = pts[:, 0], pts[:, 1]
    return np.stack([1 - x - y, x, y], axis=1)


def p1_grads(pts):
    g = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    return np.broadcast_to(g, (len(pts), 3, 2))


def p2_basis(pts):
    """P2 basis at reference points; dof order v0 v1 v2 m01 m12 m20."""
    x, y = pts[:, 0], pts[:, 1]
    l0, l1, l2 = 1 - x - y, x, y
    return np.stack(
        [
            l0 * (2 * l0 - 1),
            l1 * (2 * l1 - 1),
            l2 * (2 * l2 - 1),
            4 * l0 * l1,
            4 * l1 * l2,
            4 * l2 * l0,
        ],
        axis=1,
    )


def p2_grads(pts):
    x, y = pts[:, 0], pts[:, 1]
    l0, l1, l2 = 1 - x - y, x, y
    dl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    q = len(pts)
    lam = [l0, l1, l2]
    g = np.empty((q, 6, 2))
    for k in range(3):
        g[:, k, :] = (4 * lam[k] - 1)[:, None] * dl[k]
    pairs = [(0, 1), (1, 2), (2, 0)]
    for m, (i, j) in enumerate(pairs):
        g[:, 3 + m, :] = 4 * (lam[i][:, None] * dl[j] + lam[j][:, None] * dl[i])
    return g


def p2_ref_hessians():
    """Constant reference Hessians of the six P2 basis functions, (6,2,2)."""
    dl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    H = np.empty((6, 2, 2))
    for k in range(3):
        H[k] = 4.0 * np.outer(dl[k], dl[k])
    pairs = [(0, 1), (1, 2), (2, 0)]
    for m, (i, j) in enumerate(pairs):
        H[3 + m] = 4.0 * (np.outer(dl[i], dl[j]) + np.outer(dl[j], dl[i]))
    return H


class Space:
    """Scalar-dof bookkeeping for one (order, subdomain) pair on a mesh.

    Vector-valued functions reuse the scalar layout componentwise.
    """

    def __init__(self, mesh: Mesh, desc: SpaceDescriptor):
        self.mesh = mesh
        self.desc = desc
        sub = desc.subdomain
        self.tri_ids = np.flatnonzero(mesh.tri_subdomain == sub)
        tris = mesh.triangles[self.tri_ids]
        if len(tris) == 0:
            raise MeshError(f"mesh has no triangles in subdomain {sub}")

        verts = np.unique(tris)
        self._vert_dof = {int(v): i for i, v in enumerate(verts)}
        coords = [mesh.nodes[verts]]
        n = len(verts)
        self._edge_dof = {}
        if desc.order == 2:
            mids = []
            for a, b, c in tris:
                for u, v in ((a, b), (b, c), (c, a)):
                    key = (min(u, v), max(u, v))
                    if key not in self._edge_dof:
                        self._edge_dof[key] = n
                        mids.append(0.5 * (mesh.nodes[u] + mesh.nodes[v]))
                        n += 1
            if mids:
                coords.append(np.asarray(mids))
        self.n_scalar = n
        self.dof_coords = np.vstack(coords)

        nloc = 3 if desc.order == 1 else 6
        self.elem_dofs = np.empty((len(tris), nloc), dtype=np.int64)
        for t, (a, b, c) in enumerate(tris):
            self.elem_dofs[t, 0] = self._vert_dof[int(a)]
            self.elem_dofs[t, 1] = self._vert_dof[int(b)]
            self.elem_dofs[t, 2] = self._vert_dof[int(c)]
            if desc.order == 2:
                for m, (u, v) in enumerate(((a, b), (b, c), (c, a))):
                    self.elem_dofs[t, 3 + m] = self._edge_dof[(min(u, v), max(u, v))]

        # affine maps x = x0 + B xi
        p = mesh.nodes[tris]
        B = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        self.jac = B
        self.detJ = B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0]
        invB = np.empty_like(B)
        invB[:, 0, 0] = B[:, 1, 1]
        invB[:, 0, 1] = -B[:, 0, 1]
        invB[:, 1, 0] = -B[:, 1, 0]
        invB[:, 1, 1] = B[:, 0, 0]
        invB /= self.detJ[:, None, None]
        self.inv_jac = invB
        self.origin = p[:, 0]

        self._boundary_scalar_cache = {}

    # ---- dof layout ----------------------------------------------------
    @property
    def ndof(self):
        return self.desc.arity * self.n_scalar

    def vdof(self, scalar_dofs, comp):
        """Vector dof indices of one component for the given scalar dofs."""
        scalar_dofs = np.asarray(scalar_dofs)
        if self.desc.arity == SCALAR:
            if comp != 0:
                raise IndexError("scalar space has a single component")
            return scalar_dofs
        return 2 * scalar_dofs + comp

    def tagged_entities(self, tag):
        """Mesh edges of the given tag adjacent to this space's subdomain."""
        edges = self.mesh.edges_with_tag(tag)
        keep = [
            (u, v)
            for u, v in edges
            if int(u) in self._vert_dof and int(v) in self._vert_dof
        ]
        if not keep:
            raise MeshError(
                f"tag {tag!r} is not adjacent to subdomain {self.desc.subdomain}"
            )
        return np.asarray(keep, dtype=np.int64)

    def boundary_scalar_dofs(self, tag, exclusive=False):
        """Scalar dofs whose nodes lie on edges of the given tag.

        Corner dofs belong to every adjacent tag's set; with
        ``exclusive=True`` each dof is assigned only to its highest-priority
        tag (wall > inflow > outflow > interface > clamped).
        """
        if tag not in ALL_TAGS:
            raise MeshError(f"unknown boundary tag {tag!r}")
        if not self._boundary_scalar_cache:
            per_tag = {t: set() for t in ALL_TAGS}
            for t in ALL_TAGS:
                edges = self.mesh.edges_with_tag(t)
                for u, v in edges:
                    u, v = int(u), int(v)
                    if u not in self._vert_dof or v not in self._vert_dof:
                        continue
                    per_tag[t].add(self._vert_dof[u])
                    per_tag[t].add(self._vert_dof[v])
                    if self.desc.order == 2:
                        per_tag[t].add(self._edge_dof[(min(u, v), max(u, v))])
            self._boundary_scalar_cache = per_tag
        per_tag = self._boundary_scalar_cache
        if not per_tag[tag]:
            raise MeshError(f"tag {tag!r} is not adjacent to subdomain {self.desc.subdomain}")
        dofs = per_tag[tag]
        if exclusive:
            higher = set()
            for t in TAG_PRIORITY:
                if t == tag:
                    break
                higher |= per_tag[t]
            dofs = dofs - higher
        return np.asarray(sorted(dofs), dtype=np.int64)

    def boundary_dofs(self, tag, exclusive=False):
        """Vector dofs (all components) on the given tag."""
        s = self.boundary_scalar_dofs(tag, exclusive)
        if self.desc.arity == SCALAR:
            return s
        return np.sort(np.concatenate([self.vdof(s, c) for c in range(self.desc.arity)]))

    # ---- evaluation ----------------------------------------------------
    def basis_at(self, ref_pts):
        return p1_basis(ref_pts) if self.desc.order == 1 else p2_basis(ref_pts)

    def grads_at(self, ref_pts):
        """Physical-coordinate basis gradients, (T, q, nloc, 2)."""
        ref = p1_grads(ref_pts) if self.desc.order == 1 else p2_grads(ref_pts)
        # grad_x = invB^T grad_xi
        return np.einsum("qad,edk->eqak", ref, self.inv_jac)

    def quad_points_physical(self, ref_pts):
        return self.origin[:, None, :] + np.einsum("eij,qj->eqi", self.jac, ref_pts)


def make_space(mesh, order, arity, subdomain):
    return Space(mesh, SpaceDescriptor(order, arity, subdomain))


@dataclass
class FEFunction:
    """Coefficient vector over a space.  Scalar layout; vector interleaved."""

    space: Space
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.space.ndof,):
            raise ValueError(
                f"coefficient length {self.coefficients.shape} does not match "
                f"space dof count {self.space.ndof}"
            )

    @classmethod
    def zeros(cls, space):
        return cls(space, np.zeros(space.ndof))

    @classmethod
    def interpolate(cls, space, fn):
        """Nodal interpolation of a callable (x, y) -> value(s)."""
        vals = np.asarray([fn(x, y) for x, y in space.dof_coords], dtype=float)
        if space.desc.arity == SCALAR:
            return cls(space, vals.reshape(-1))
        return cls(space, vals.reshape(-1))  # (n,2) interleaves as 2*s+c

    def copy(self):
        return FEFunction(self.space, self.coefficients.copy())

    def component_matrix(self):
        """Coefficients reshaped to (n_scalar, arity)."""
        return self.coefficients.reshape(self.space.n_scalar, self.space.desc.arity)

    def values_at(self, ref_pts):
        """Values at reference points per element: (T, q, arity)."""
        sp = self.space
        phi = sp.basis_at(ref_pts)  # (q, nloc)
        cm = self.component_matrix()[sp.elem_dofs]  # (T, nloc, arity)
        return np.einsum("qa,eac->eqc", phi, cm)

    def gradients_at(self, ref_pts):
        """Gradients at reference points: (T, q, arity, 2) with G[i, l] = d_l f_i."""
        sp = self.space
        g = sp.grads_at(ref_pts)  # (T, q, nloc, 2)
        cm = self.component_matrix()[sp.elem_dofs]  # (T, nloc, arity)
        return np.einsum("eqal,eac->eqcl", g, cm)


def interface_scalar_maps(space_a: Space, space_b: Space):
    """Aligned interface scalar dofs of two spaces sharing the interface.

    Returns (dofs_a, dofs_b) ordered consistently by mesh entity; conforming
    meshes make this an exact point-set identification.
    """
    from .mesh import TAG_INTERFACE

    edges = space_a.mesh.edges_with_tag(TAG_INTERFACE)
    ents = []
    seen = set()
    for u, v in edges:
        for node in (int(u), int(v)):
            if ("v", node) not in seen:
                seen.add(("v", node))
                ents.append(("v", node))
        key = (min(int(u), int(v)), max(int(u), int(v)))
        if ("e", key) not in seen:
            seen.add(("e", key))
            ents.append(("e", key))

    def lookup(space, kind, ent):
        if kind == "v":
            return space._vert_dof[ent]
        return space._edge_dof[ent]

    dofs_a, dofs_b = [], []
    for kind, ent in ents:
        if kind == "e" and (space_a.desc.order == 1 or space_b.desc.order == 1):
            continue
        dofs_a.append(lookup(space_a, kind, ent))
        dofs_b.append(lookup(space_b, kind, ent))
    return np.asarray(dofs_a, dtype=np.int64), np.asarray(dofs_b, dtype=np.int64)
