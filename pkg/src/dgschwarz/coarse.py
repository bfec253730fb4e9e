"""Coarse space of polynomials on agglomerates and its injection into the DG space."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .dgspace import DgSpace, eval_basis, monomial_exponents, n_basis, quadrature
from .mesh import Mesh
from .partition import Partition
from .sipg import to_physical


class CoarseSpaceError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CoarseSpace:
    """Coarse space data.

    ``injection`` is R0^T (n_dofs x n0); column ``offsets[j] + k`` holds the
    fine coefficients of basis function ``k`` on agglomerate ``j``.
    """

    q: np.ndarray
    centers: np.ndarray
    half_widths: np.ndarray
    offsets: np.ndarray
    n0: int
    injection: sp.csr_matrix
    restriction: sp.csr_matrix
    A0: sp.csr_matrix | None
    diameters: np.ndarray
    transforms: list  # per-agglomerate (nb, nb) basis change, identity unless orthonormalized

    @property
    def H(self) -> float:
        return float(self.diameters.max())

    def evaluate(self, j: int, coeffs, x: np.ndarray) -> np.ndarray:
        """Coarse function on agglomerate ``j`` at physical points ``x[..., 2]``."""
        mono = _scaled_monomials(x, self.centers[j], self.half_widths[j], int(self.q[j]))
        return mono @ (self.transforms[j] @ np.asarray(coeffs))


def _scaled_monomials(x, center, half, q):
    e = monomial_exponents(q)
    s = (x[..., 0] - center[..., 0]) / half[..., 0]
    t = (x[..., 1] - center[..., 1]) / half[..., 1]
    return s[..., None] ** e[:, 0] * t[..., None] ** e[:, 1]


def build_coarse_space(
    mesh: Mesh,
    space: DgSpace,
    partition: Partition,
    A: sp.spmatrix | None = None,
    orthonormalize: bool = False,
) -> CoarseSpace:
    """Scaled-monomial coarse basis per agglomerate, injected exactly into the fine space.

    The injection coefficients are inner products against the orthonormal
    fine basis, exact because coarse functions are polynomials of degree
    at most p_K on every fine element. ``A0 = R0 A R0^T`` when ``A`` is given.
    """
    agg = partition.agglomerate_of
    nc = partition.n_coarse
    J = mesh.jacobians()
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    pts = mesh.vertices[mesh.triangles]  # (nt, 3, 2)

    q = np.empty(nc, dtype=np.int64)
    centers = np.empty((nc, 2))
    half = np.empty((nc, 2))
    diam = np.empty(nc)
    for j in range(nc):
        elems = np.flatnonzero(agg == j)
        if elems.size == 0 or np.abs(det[elems]).sum() <= 0:
            raise CoarseSpaceError(f"agglomerate {j} is empty or has zero area")
        q[j] = space.degrees[elems].min()
        lo = pts[elems].reshape(-1, 2).min(axis=0)
        hi = pts[elems].reshape(-1, 2).max(axis=0)
        centers[j] = 0.5 * (lo + hi)
        half[j] = 0.5 * (hi - lo)
        diam[j] = float(np.linalg.norm(hi - lo))
        if np.any(half[j] <= 0):
            raise CoarseSpaceError(f"agglomerate {j} is degenerate")
    nb0 = (q + 1) * (q + 2) // 2
    offsets = np.concatenate([[0], np.cumsum(nb0)[:-1]])
    n0 = int(nb0.sum())

    rows, cols, vals = [], [], []
    for p, elems in space.groups():
        for qq in np.unique(q[agg[elems]]).tolist():
            sel = elems[q[agg[elems]] == qq]
            rule = quadrature("triangle", p + qq)
            V, _ = eval_basis(p, rule.points)
            x = to_physical(mesh, sel, rule.points)  # (ne, nq, 2)
            a = agg[sel]
            mono = _scaled_monomials(x, centers[a][:, None, :], half[a][:, None, :], qq)
            # (ne, nb_fine, nb_coarse)
            c = np.einsum("q,qi,eqk->eik", rule.weights, V, mono)
            nbc = n_basis(qq)
            fine = space.dof_matrix(sel, p)
            coarse = offsets[a][:, None] + np.arange(nbc)[None, :]
            rows.append(np.broadcast_to(fine[:, :, None], c.shape).ravel())
            cols.append(np.broadcast_to(coarse[:, None, :], c.shape).ravel())
            vals.append(c.ravel())
    R0T = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(space.n_dofs, n0)
    ).tocsc()

    transforms = [np.eye(int(n)) for n in nb0]
    if orthonormalize:
        # coarse mass matrix per agglomerate: sum_K det_K c_K^T c_K
        order = space.element_order
        w = sp.diags(np.repeat(np.abs(det)[order], space.dofs_per_element[order]))
        M0 = (R0T.T @ w @ R0T).toarray()
        T = np.zeros((n0, n0))
        for j in range(nc):
            s = slice(offsets[j], offsets[j] + nb0[j])
            L = np.linalg.cholesky(M0[s, s])
            T[s, s] = np.linalg.inv(L).T
            transforms[j] = T[s, s]
        R0T = (R0T @ sp.csr_matrix(T)).tocsc()

    R0T = R0T.tocsr()
    R0T.eliminate_zeros()
    R0 = R0T.T.tocsr()
    A0 = None
    if A is not None:
        A0 = (R0 @ A @ R0T).tocsr()
        A0 = ((A0 + A0.T) * 0.5).tocsr()
    return CoarseSpace(q, centers, half, offsets, n0, R0T, R0, A0, diam, transforms)


def galerkin_matrix(coarse: CoarseSpace, A: sp.spmatrix) -> sp.csr_matrix:
    A0 = (coarse.restriction @ A @ coarse.injection).tocsr()
    return ((A0 + A0.T) * 0.5).tocsr()


def coarse_prolong(R0T: sp.spmatrix, c) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if c.shape != (R0T.shape[1],):
        raise ValueError(f"coarse vector has length {c.shape}, expected {R0T.shape[1]}")
    return R0T @ c


def coarse_restrict(R0T: sp.spmatrix, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (R0T.shape[0],):
        raise ValueError(f"fine vector has length {v.shape}, expected {R0T.shape[0]}")
    return R0T.T @ v
