"""SIPG assembly, DG norms, errors and the benchmark problems."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .dgspace import ConfigurationError, DgSpace, eval_basis, n_basis, quadrature
from .mesh import Faces, Mesh, build_face_topology, build_uniform_square_mesh

Field = Callable[[np.ndarray, np.ndarray], np.ndarray]


class DataError(ValueError):
    pass


def _zero(x, y):
    return np.zeros_like(x)


@dataclass(frozen=True, eq=False)
class DiffusionField:
    """Piecewise-constant diffusion, one positive value per element."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise DataError("diffusion needs one value per element")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise DataError("diffusion must be positive")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, mesh: Mesh, value: float = 1.0) -> DiffusionField:
        return cls(np.full(mesh.n_triangles, float(value)))

    @classmethod
    def from_materials(cls, mesh: Mesh, table: dict[int, float]) -> DiffusionField:
        try:
            return cls(np.array([table[int(m)] for m in mesh.material], dtype=float))
        except KeyError as exc:
            raise DataError(f"no diffusion value for material {exc.args[0]}") from None

    @property
    def lower(self) -> float:
        return float(self.values.min())

    @property
    def upper(self) -> float:
        return float(self.values.max())

    @property
    def contrast(self) -> float:
        return self.upper / self.lower


def _everywhere(midpoint):
    return True


@dataclass(frozen=True)
class AssemblyConfig:
    cw: float = 10.0
    dirichlet_data: Field = _zero
    source: Field = _zero
    dirichlet_predicate: Callable[[np.ndarray], bool] = _everywhere

    def __post_init__(self):
        if not self.cw > 0:
            raise ConfigurationError("penalty constant C_W must be positive")


@dataclass(frozen=True, eq=False)
class SparseSystem:
    A: sp.csr_matrix
    g: np.ndarray
    space: DgSpace
    faces: Faces = field(repr=False)

    @property
    def n_dofs(self) -> int:
        return self.space.n_dofs


# -- geometry helpers ---------------------------------------------------------


def _geometry(mesh: Mesh):
    J = mesh.jacobians()
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    Jinv = np.linalg.inv(J)
    return J, det, Jinv


def to_reference(mesh: Mesh, elements: np.ndarray, x: np.ndarray, Jinv=None) -> np.ndarray:
    """Map physical points ``x[..., 2]`` (leading axis per element) to reference coordinates."""
    if Jinv is None:
        Jinv = np.linalg.inv(mesh.jacobians()[elements])
    v0 = mesh.vertices[mesh.triangles[elements, 0]]
    d = x - v0.reshape(v0.shape[:1] + (1,) * (x.ndim - 2) + (2,))
    return np.einsum("e...b,eab->e...a", d, Jinv.reshape(len(elements), 2, 2))


def to_physical(mesh: Mesh, elements: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Map reference points ``(nq, 2)`` into every element: returns ``(ne, nq, 2)``."""
    J = mesh.jacobians()[elements]
    v0 = mesh.vertices[mesh.triangles[elements, 0]]
    return v0[:, None, :] + np.einsum("eab,qb->eqa", J, ref)


class _Triplets:
    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []

    def add(self, rdofs, cdofs, blocks):
        # rdofs (n, a), cdofs (n, b), blocks (n, a, b)
        self.rows.append(np.broadcast_to(rdofs[:, :, None], blocks.shape).ravel())
        self.cols.append(np.broadcast_to(cdofs[:, None, :], blocks.shape).ravel())
        self.vals.append(blocks.ravel())

    def matrix(self, n):
        if not self.vals:
            return sp.csr_matrix((n, n))
        m = sp.coo_matrix(
            (np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))), shape=(n, n)
        ).tocsr()
        m.sum_duplicates()
        return m


def _volume(mesh, space, kappa, tri: _Triplets):
    _, det, Jinv = _geometry(mesh)
    for p, elems in space.groups():
        q = quadrature("triangle", 2 * p)
        _, G = eval_basis(p, q.points)
        S = np.einsum("q,qia,qjb->abij", q.weights, G, G)
        C = np.einsum("eac,ebc->eab", Jinv[elems], Jinv[elems])  # Jinv Jinv^T
        scale = kappa[elems] * np.abs(det[elems])
        blocks = np.einsum("e,eab,abij->eij", scale, C, S)
        dofs = space.dof_matrix(elems, p)
        tri.add(dofs, dofs, blocks)


def _trace(mesh, space, faces, fidx, side, p, t):
    """Basis traces and normal derivatives on faces ``fidx`` from one side."""
    elems = faces.left[fidx] if side == 0 else faces.right[fidx]
    ep = faces.endpoints[fidx]
    x = ep[:, 0, None, :] + t[None, :, None] * (ep[:, 1, None, :] - ep[:, 0, None, :])
    Jinv = np.linalg.inv(mesh.jacobians()[elems])
    ref = to_reference(mesh, elems, x, Jinv)
    nf, nq = ref.shape[:2]
    V, G = eval_basis(p, ref.reshape(-1, 2))
    nb = n_basis(p)
    V = V.reshape(nf, nq, nb)
    G = G.reshape(nf, nq, nb, 2)
    # physical normal derivative: n . (Jinv^T grad_ref) = (Jinv^T n) . grad_ref
    jn = np.einsum("eba,ea->eb", Jinv, faces.normal[fidx])
    Dn = np.einsum("eqib,eb->eqi", G, jn)
    return elems, x, V, Dn


def _penalty(faces, fidx, kappa, deg, cw):
    kl = kappa[faces.left[fidx]]
    pl = deg[faces.left[fidx]]
    right = faces.right[fidx]
    has_r = right >= 0
    kg = kl.copy()
    pg = pl.copy()
    kg[has_r] = np.maximum(kl[has_r], kappa[right[has_r]])
    pg[has_r] = np.maximum(pl[has_r], deg[right[has_r]])
    return cw * kg * pg.astype(float) ** 2 / faces.h[fidx]


def _faces(mesh, space, faces, kappa, cw, consistency: _Triplets | None, penalty: _Triplets | None, g=None,
           u_d=None):
    deg = space.degrees
    inner = faces.interior
    if inner.size:
        pl = deg[faces.left[inner]]
        pr = deg[faces.right[inner]]
        for a, b in sorted(set(zip(pl.tolist(), pr.tolist()))):
            fidx = inner[(pl == a) & (pr == b)]
            q = quadrature("segment", 2 * max(a, b) + 1)
            w = q.weights[None, :] * faces.length[fidx, None]
            sig = _penalty(faces, fidx, kappa, deg, cw)
            sides = []
            for s, p in ((0, a), (1, b)):
                elems, _, V, Dn = _trace(mesh, space, faces, fidx, s, p, q.points)
                sgn = 1.0 if s == 0 else -1.0
                D = 0.5 * kappa[elems][:, None, None] * Dn
                sides.append((space.dof_matrix(elems, p), sgn * V, D))
            for rs, (rd, Vr, Dr) in enumerate(sides):
                for cs, (cd, Vc, Dc) in enumerate(sides):
                    if consistency is not None:
                        blk = -np.einsum("fq,fqi,fqj->fij", w, Vr, Dc) - np.einsum("fq,fqi,fqj->fij", w, Dr, Vc)
                        consistency.add(rd, cd, blk)
                    if penalty is not None:
                        penalty.add(rd, cd, sig[:, None, None] * np.einsum("fq,fqi,fqj->fij", w, Vr, Vc))

    bnd = faces.dirichlet
    if bnd.size:
        pb = deg[faces.left[bnd]]
        for a in np.unique(pb).tolist():
            fidx = bnd[pb == a]
            q = quadrature("segment", 2 * a + 1)
            w = q.weights[None, :] * faces.length[fidx, None]
            sig = _penalty(faces, fidx, kappa, deg, cw)
            elems, x, V, Dn = _trace(mesh, space, faces, fidx, 0, a, q.points)
            D = kappa[elems][:, None, None] * Dn
            dofs = space.dof_matrix(elems, a)
            if consistency is not None:
                blk = -np.einsum("fq,fqi,fqj->fij", w, V, D)
                consistency.add(dofs, dofs, blk + blk.transpose(0, 2, 1))
            if penalty is not None:
                penalty.add(dofs, dofs, sig[:, None, None] * np.einsum("fq,fqi,fqj->fij", w, V, V))
            if g is not None:
                ud = u_d(x[..., 0], x[..., 1])
                contrib = -np.einsum("fq,fq,fqi->fi", w, ud, D) + sig[:, None] * np.einsum("fq,fq,fqi->fi", w, ud, V)
                np.add.at(g, dofs, contrib)


def _check(mesh, space, diffusion):
    if space.n_elements != mesh.n_triangles or diffusion.values.shape != (mesh.n_triangles,):
        raise ConfigurationError("mesh, space and diffusion sizes disagree")


def load_vector(mesh: Mesh, space: DgSpace, f: Field, extra: int = 2) -> np.ndarray:
    """(f, v) for every basis function, quadrature exactness 2p + extra."""
    _, det, _ = _geometry(mesh)
    g = np.zeros(space.n_dofs)
    for p, elems in space.groups():
        q = quadrature("triangle", 2 * p + extra)
        V, _ = eval_basis(p, q.points)
        x = to_physical(mesh, elems, q.points)
        fv = f(x[..., 0], x[..., 1])
        g[space.dof_matrix(elems, p)] += np.abs(det[elems])[:, None] * np.einsum("q,eq,qi->ei", q.weights, fv, V)
    return g


def assemble_system(
    mesh: Mesh, space: DgSpace, diffusion: DiffusionField, config: AssemblyConfig, faces: Faces | None = None
) -> SparseSystem:
    """Assemble the SIPG matrix and right-hand side."""
    _check(mesh, space, diffusion)
    if faces is None:
        faces = build_face_topology(mesh, config.dirichlet_predicate)
    kappa = diffusion.values
    tri = _Triplets()
    _volume(mesh, space, kappa, tri)
    g = load_vector(mesh, space, config.source)
    _faces(mesh, space, faces, kappa, config.cw, tri, tri, g, config.dirichlet_data)
    A = tri.matrix(space.n_dofs)
    # exact symmetry: entries and their transposes are summed in different orders
    A = ((A + A.T) * 0.5).tocsr()
    A.sort_indices()
    g.setflags(write=False)
    return SparseSystem(A, g, space, faces)


def dg_norm_matrix(mesh, space, diffusion, config, faces=None) -> sp.csr_matrix:
    _check(mesh, space, diffusion)
    if faces is None:
        faces = build_face_topology(mesh, config.dirichlet_predicate)
    tri = _Triplets()
    _volume(mesh, space, diffusion.values, tri)
    _faces(mesh, space, faces, diffusion.values, config.cw, None, tri)
    return tri.matrix(space.n_dofs)


def dg_norm(space: DgSpace, mesh: Mesh, diffusion: DiffusionField, config: AssemblyConfig, v) -> float:
    """Broken energy norm with penalty-weighted jumps (piecewise-constant diffusion)."""
    v = np.asarray(v, dtype=float)
    if v.shape != (space.n_dofs,):
        raise ConfigurationError("coefficient vector has wrong length")
    M = dg_norm_matrix(mesh, space, diffusion, config)
    return float(np.sqrt(max(v @ (M @ v), 0.0)))


def evaluate(space: DgSpace, mesh: Mesh, v, elements, ref_points) -> np.ndarray:
    """Values of the DG function at reference points of each listed element: ``(ne, nq)``."""
    elements = np.asarray(elements, dtype=np.int64)
    out = np.empty((len(elements), len(ref_points)))
    for p in np.unique(space.degrees[elements]).tolist():
        sel = np.flatnonzero(space.degrees[elements] == p)
        V, _ = eval_basis(p, ref_points)
        coeff = np.asarray(v)[space.dof_matrix(elements[sel], p)]
        out[sel] = coeff @ V.T
    return out


def l2_projection(space: DgSpace, mesh: Mesh, func: Field, extra: int = 4) -> np.ndarray:
    """Elementwise L2 projection onto the orthonormal basis."""
    c = np.zeros(space.n_dofs)
    for p, elems in space.groups():
        q = quadrature("triangle", 2 * p + extra)
        V, _ = eval_basis(p, q.points)
        x = to_physical(mesh, elems, q.points)
        fv = func(x[..., 0], x[..., 1])
        c[space.dof_matrix(elems, p)] = np.einsum("q,eq,qi->ei", q.weights, fv, V)
    return c


def l2_error(space: DgSpace, mesh: Mesh, v, exact: Field, extra: int = 2) -> float:
    _, det, _ = _geometry(mesh)
    total = 0.0
    for p, elems in space.groups():
        q = quadrature("triangle", 2 * p + extra)
        x = to_physical(mesh, elems, q.points)
        diff = evaluate(space, mesh, v, elems, q.points) - exact(x[..., 0], x[..., 1])
        total += float(np.sum(np.abs(det[elems])[:, None] * q.weights[None, :] * diff**2))
    return float(np.sqrt(total))


# -- benchmark problems --------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkProblem:
    name: str
    zeta: float
    config: AssemblyConfig
    diffusion_table: dict
    tol: float
    exact: Field | None = None

    def assign_materials(self, mesh: Mesh) -> Mesh:
        if self.name != "stripes":
            return mesh
        c = mesh.centroids()
        material = ((c[:, 1] > 1.0 / 3.0) & (c[:, 1] < 2.0 / 3.0)).astype(np.int64)
        return Mesh(mesh.vertices, mesh.triangles, material)

    def make_mesh(self, n: int) -> Mesh:
        return self.assign_materials(build_uniform_square_mesh(n))

    def diffusion(self, mesh: Mesh) -> DiffusionField:
        return DiffusionField.from_materials(mesh, self.diffusion_table)


def _laplace_source(x, y):
    return 2.0 * x * (1.0 - x) + 2.0 * y * (1.0 - y)


def _laplace_exact(x, y):
    return x * (1.0 - x) * y * (1.0 - y)


def _stripes_source(x, y):
    return np.full_like(x, 5.0e4)


def _stripes_dirichlet(mid):
    # homogeneous Neumann on x2 = 0 and x1 = 0
    return not (abs(mid[1]) < 1e-12 or abs(mid[0]) < 1e-12)


def build_benchmark_problem(name: str, zeta: float = 1.0, cw: float = 10.0) -> BenchmarkProblem:
    """``laplace``: -Lap u = f with u = x1(1-x1)x2(1-x2).

    ``stripes``: three horizontal material bands; the middle band
    (1/3 < x2 < 2/3) has diffusion 1/zeta, the outer bands 1.
    """
    if name == "laplace":
        cfg = AssemblyConfig(cw=cw, source=_laplace_source)
        return BenchmarkProblem("laplace", 1.0, cfg, {0: 1.0}, 1e-12, _laplace_exact)
    if name == "stripes":
        if not zeta >= 1:
            raise ConfigurationError("contrast zeta must be >= 1")
        cfg = AssemblyConfig(cw=cw, source=_stripes_source, dirichlet_predicate=_stripes_dirichlet)
        return BenchmarkProblem("stripes", float(zeta), cfg, {0: 1.0, 1: 1.0 / zeta}, 1e-10)
    raise ConfigurationError(f"unknown problem {name!r}")


def _oscillatory(x, y):
    out = np.zeros_like(x)
    for i in range(1, 4):
        for j in range(1, 4):
            out += np.sin(2 * np.pi * i * x) * np.sin(2 * np.pi * j * y)
    return out


def oscillatory_initial_guess(space: DgSpace, mesh: Mesh) -> np.ndarray:
    """Projection of sum_{i,j<=3} sin(2 pi i x1) sin(2 pi j x2).

    The quadrature (exactness >= 30) resolves the highest frequency even on
    very coarse meshes.
    """
    extra = max(8, 30 - 2 * int(space.degrees.max()))
    return l2_projection(space, mesh, _oscillatory, extra=extra)
