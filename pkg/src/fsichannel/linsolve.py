"""Saddle-point system container, Dirichlet elimination, and direct solves."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SingularSystemError(RuntimeError):
    """Factorization failed (structurally deficient or exactly singular)."""


class DirichletConflictError(ValueError):
    """Two prescriptions at a shared dof disagree."""


@dataclass
class SaddleSystem:
    """Block system [[A_vv, A_vp], [A_pv, A_pp]] x = [rhs_v; rhs_p].

    Constraints are (dof, value) records in the stacked [v; p] numbering and
    are eliminated symmetrically at solve time.  ``A_pp`` and off-diagonal
    blocks may be ``None`` (zero).
    """

    A_vv: sp.spmatrix
    A_vp: sp.spmatrix | None
    A_pv: sp.spmatrix | None
    A_pp: sp.spmatrix | None
    rhs_v: np.ndarray
    rhs_p: np.ndarray | None
    constrained_dofs: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    constrained_values: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def n_v(self):
        return self.A_vv.shape[0]

    @property
    def n_p(self):
        if self.A_vp is not None:
            return self.A_vp.shape[1]
        if self.A_pv is not None:
            return self.A_pv.shape[0]
        return 0

    @property
    def size(self):
        return self.n_v + self.n_p

    def full_matrix(self):
        nv, np_ = self.n_v, self.n_p
        if np_ == 0:
            return self.A_vv.tocsr()
        blocks = [
            [self.A_vv, self.A_vp],
            [self.A_pv, self.A_pp if self.A_pp is not None else sp.csr_matrix((np_, np_))],
        ]
        return sp.bmat(blocks, format="csr")

    def full_rhs(self):
        if self.n_p == 0:
            return self.rhs_v.copy()
        rp = self.rhs_p if self.rhs_p is not None else np.zeros(self.n_p)
        return np.concatenate([self.rhs_v, rp])

    def copy(self):
        return SaddleSystem(
            self.A_vv.copy(),
            None if self.A_vp is None else self.A_vp.copy(),
            None if self.A_pv is None else self.A_pv.copy(),
            None if self.A_pp is None else self.A_pp.copy(),
            self.rhs_v.copy(),
            None if self.rhs_p is None else self.rhs_p.copy(),
            self.constrained_dofs.copy(),
            self.constrained_values.copy(),
        )


def apply_dirichlet(system: SaddleSystem, assignments) -> SaddleSystem:
    """Record Dirichlet constraints on the system.

    ``assignments`` is an iterable of (dofs, values) pairs in the stacked
    [v; p] dof numbering; values may be a scalar or an array matching dofs.
    Conflicting values at a shared dof raise :class:`DirichletConflictError`.
    """
    out = system.copy()
    seen = {int(d): float(v) for d, v in zip(out.constrained_dofs, out.constrained_values)}
    for dofs, values in assignments:
        dofs = np.asarray(dofs, dtype=np.int64)
        values = np.broadcast_to(np.asarray(values, dtype=float), dofs.shape)
        for d, v in zip(dofs, values):
            d, v = int(d), float(v)
            if d in seen and seen[d] != v:
                raise DirichletConflictError(
                    f"dof {d} prescribed both {seen[d]!r} and {v!r}"
                )
            seen[d] = v
    dofs = np.fromiter(sorted(seen), dtype=np.int64, count=len(seen))
    out.constrained_dofs = dofs
    out.constrained_values = np.asarray([seen[int(d)] for d in dofs])
    return out


def solve_sparse(system: SaddleSystem, pin_pressure=False, rtol=1e-10):
    """Direct sparse solve after symmetric constraint elimination.

    Returns the full coefficient vector over [v; p] with prescribed values
    set bit-exactly.  ``pin_pressure`` additionally constrains the first
    unconstrained pressure dof to zero (all-Dirichlet configurations).
    """
    A = system.full_matrix()
    b = system.full_rhs()
    n = A.shape[0]
    cdofs = system.constrained_dofs
    cvals = system.constrained_values
    if pin_pressure and system.n_p > 0:
        pdofs = np.arange(system.n_v, n)
        free_p = np.setdiff1d(pdofs, cdofs)
        if len(free_p):
            cdofs = np.concatenate([cdofs, free_p[:1]])
            cvals = np.concatenate([cvals, [0.0]])

    mask = np.ones(n, dtype=bool)
    mask[cdofs] = False
    free = np.flatnonzero(mask)

    x = np.zeros(n)
    x[cdofs] = cvals
    A = A.tocsc()
    if len(free) == 0:
        return x
    A_ff = A[free][:, free]
    rhs = b[free] - A[free][:, cdofs] @ cvals if len(cdofs) else b[free]

    try:
        lu = spla.splu(A_ff.tocsc())
        xf = lu.solve(rhs)
    except RuntimeError as exc:  # SuperLU reports exact singularity here
        raise SingularSystemError(f"sparse factorization failed: {exc}") from exc
    if not np.all(np.isfinite(xf)):
        raise SingularSystemError("sparse solve produced non-finite values")

    denom = np.linalg.norm(rhs)
    res = np.linalg.norm(A_ff @ xf - rhs)
    if denom > 0 and res / denom > rtol:
        raise SingularSystemError(
            f"sparse solve residual {res / denom:.3e} exceeds {rtol:.1e}"
        )
    x[free] = xf
    return x


class FrozenFactorization:
    """Reusable LU of a constrained system for many right-hand sides."""

    def __init__(self, system: SaddleSystem, pin_pressure=False):
        A = system.full_matrix().tocsc()
        n = A.shape[0]
        self.n = n
        cdofs = system.constrained_dofs
        cvals = system.constrained_values
        if pin_pressure and system.n_p > 0:
            pdofs = np.arange(system.n_v, n)
            free_p = np.setdiff1d(pdofs, cdofs)
            if len(free_p):
                cdofs = np.concatenate([cdofs, free_p[:1]])
                cvals = np.concatenate([cvals, [0.0]])
        self.cdofs = cdofs
        self.cvals = cvals
        mask = np.ones(n, dtype=bool)
        mask[cdofs] = False
        self.free = np.flatnonzero(mask)
        self.A_fc = A[self.free][:, cdofs]
        try:
            self.lu = spla.splu(A[self.free][:, self.free])
        except RuntimeError as exc:
            raise SingularSystemError(f"sparse factorization failed: {exc}") from exc

    def solve(self, full_rhs, constrained_values=None):
        cvals = self.cvals if constrained_values is None else np.asarray(constrained_values)
        x = np.zeros(self.n)
        x[self.cdofs] = cvals
        rhs = full_rhs[self.free] - (self.A_fc @ cvals if len(self.cdofs) else 0.0)
        x[self.free] = self.lu.solve(rhs)
        return x


def write_coo(path, matrix):
    """Coordinate triplet text export for debugging."""
    m = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write(f"{m.shape[0]} {m.shape[1]} {m.nnz}\n")
        for i, j, v in zip(m.row, m.col, m.data):
            fh.write(f"{i} {j} {v!r}\n")
