"""Conforming triangular meshes of polygonal 2D domains and their face topology."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, NamedTuple

import numpy as np

INTERIOR = 0
DIRICHLET = 1
NEUMANN = 2

KIND_NAMES = {INTERIOR: "interior", DIRICHLET: "dirichlet", NEUMANN: "neumann"}


class MeshError(ValueError):
    """Invalid or non-conforming mesh."""


class MeshFormatError(MeshError):
    def __init__(self, msg: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            msg = f"line {lineno}: {msg}"
        super().__init__(msg)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangular mesh.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counterclockwise
    material : (nt,) int array of material ids
    """

    vertices: np.ndarray
    triangles: np.ndarray
    material: np.ndarray
    h: np.ndarray = field(init=False)

    def __post_init__(self):
        vertices = np.ascontiguousarray(self.vertices, dtype=float)
        triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        material = np.ascontiguousarray(self.material, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must have shape (nv, 2)")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshError("triangles must have shape (nt, 3)")
        if material.shape != (len(triangles),):
            raise MeshError("one material id per triangle required")
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise MeshError("triangle references a nonexistent vertex")
        for name, arr in (("vertices", vertices), ("triangles", triangles), ("material", material)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        p = vertices[triangles]
        edges = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
        h = np.linalg.norm(edges, axis=2).max(axis=1)
        h.setflags(write=False)
        object.__setattr__(self, "h", h)
        if np.any(self.signed_areas() <= 0):
            bad = int(np.argmin(self.signed_areas()))
            raise MeshError(f"triangle {bad} has nonpositive signed area")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def jacobians(self) -> np.ndarray:
        """Affine maps from the reference triangle, (nt, 2, 2) with columns v1-v0, v2-v0."""
        p = self.vertices[self.triangles]
        return np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return (
            np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.triangles, other.triangles)
            and np.array_equal(self.material, other.material)
        )

    def __repr__(self):
        return f"Mesh(nv={self.n_vertices}, nt={self.n_triangles})"


def build_uniform_square_mesh(n: int) -> Mesh:
    """Unit square cut into ``n x n`` squares, each split along its lower-left to upper-right diagonal."""
    if n < 1:
        raise ValueError("n must be >= 1")
    t = np.linspace(0.0, 1.0, n + 1)
    x, y = np.meshgrid(t, t)
    vertices = np.column_stack([x.ravel(), y.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    v00 = j * (n + 1) + i
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return Mesh(vertices, triangles, np.zeros(len(triangles), dtype=np.int64))


class Face(NamedTuple):
    kind: int
    left: int
    right: int  # -1 on the boundary
    normal: np.ndarray
    length: float
    h: float
    endpoints: np.ndarray


@dataclass(frozen=True, eq=False)
class Faces:
    """Face topology in struct-of-arrays form; ``faces[i]`` yields a :class:`Face`."""

    kind: np.ndarray
    left: np.ndarray
    right: np.ndarray
    normal: np.ndarray
    length: np.ndarray
    h: np.ndarray
    endpoints: np.ndarray  # (nf, 2, 2)

    def __len__(self):
        return len(self.kind)

    def __getitem__(self, i) -> Face:
        return Face(
            int(self.kind[i]),
            int(self.left[i]),
            int(self.right[i]),
            self.normal[i],
            float(self.length[i]),
            float(self.h[i]),
            self.endpoints[i],
        )

    def __iter__(self) -> Iterator[Face]:
        for i in range(len(self)):
            yield self[i]

    def count(self, kind: int) -> int:
        return int(np.count_nonzero(self.kind == kind))

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(self.kind == INTERIOR)

    @property
    def dirichlet(self) -> np.ndarray:
        return np.flatnonzero(self.kind == DIRICHLET)


def all_dirichlet(midpoint: np.ndarray) -> bool:
    return True


def build_face_topology(
    mesh: Mesh, dirichlet_predicate: Callable[[np.ndarray], bool] = all_dirichlet
) -> Faces:
    """Enumerate the edges of ``mesh`` once each.

    Interior normals point from the lower element id to the higher one;
    boundary normals point outward. Boundary edges are Dirichlet when
    ``dirichlet_predicate(midpoint)`` is true, Neumann otherwise.
    """
    nt = mesh.n_triangles
    tri = mesh.triangles
    local = np.array([[0, 1], [1, 2], [2, 0]])
    ev = tri[:, local].reshape(-1, 2)
    owner = np.repeat(np.arange(nt), 3)
    key = np.sort(ev, axis=1)
    uniq, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if np.any(counts > 2):
        bad = uniq[np.argmax(counts)]
        raise MeshError(f"edge {tuple(bad)} shared by more than two triangles")

    nf = len(uniq)
    order = np.lexsort((owner, inverse))
    first = np.full(nf, -1, dtype=np.int64)
    second = np.full(nf, -1, dtype=np.int64)
    sorted_faces = inverse[order]
    starts = np.searchsorted(sorted_faces, np.arange(nf))
    first[:] = owner[order[starts]]
    has_two = counts == 2
    second[has_two] = owner[order[starts[has_two] + 1]]

    p0 = mesh.vertices[uniq[:, 0]]
    p1 = mesh.vertices[uniq[:, 1]]
    tangent = p1 - p0
    length = np.linalg.norm(tangent, axis=1)
    normal = np.column_stack([tangent[:, 1], -tangent[:, 0]]) / length[:, None]
    # orient left -> right (interior) or outward (boundary)
    cl = mesh.centroids()[first]
    flip = np.einsum("ij,ij->i", normal, 0.5 * (p0 + p1) - cl) < 0
    normal[flip] *= -1.0

    kind = np.full(nf, INTERIOR, dtype=np.int64)
    for f in np.flatnonzero(~has_two):
        mid = 0.5 * (p0[f] + p1[f])
        kind[f] = DIRICHLET if dirichlet_predicate(mid) else NEUMANN

    h = mesh.h[first].copy()
    h[has_two] = np.maximum(mesh.h[first[has_two]], mesh.h[second[has_two]])
    endpoints = np.stack([p0, p1], axis=1)
    return Faces(kind, first, second, normal, length, h, endpoints)


def count_edges(mesh: Mesh) -> int:
    local = np.array([[0, 1], [1, 2], [2, 0]])
    key = np.sort(mesh.triangles[:, local].reshape(-1, 2), axis=1)
    return len(np.unique(key, axis=0))


def element_adjacency(mesh: Mesh, faces: Faces | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Pairs (left, right) of elements sharing an interior face."""
    if faces is None:
        faces = build_face_topology(mesh)
    idx = faces.interior
    return faces.left[idx], faces.right[idx]


def save_mesh(mesh: Mesh, path) -> None:
    lines = [f"ndgdm {mesh.n_vertices} {mesh.n_triangles}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines += [f"{a} {b} {c} {m}" for (a, b, c), m in zip(mesh.triangles.tolist(), mesh.material.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> Mesh:
    text = Path(path).read_text().splitlines()
    if not text:
        raise MeshFormatError("empty file", 1)
    head = text[0].split()
    if len(head) != 3 or head[0] != "ndgdm":
        raise MeshFormatError("expected header 'ndgdm <nv> <nt>'", 1)
    try:
        nv, nt = int(head[1]), int(head[2])
    except ValueError:
        raise MeshFormatError("header counts must be integers", 1) from None
    if len(text) < 1 + nv + nt:
        raise MeshFormatError(f"expected {nv} vertex and {nt} triangle lines", len(text))

    vertices = np.empty((nv, 2))
    for k in range(nv):
        lineno = k + 2
        parts = text[k + 1].split()
        if len(parts) != 2:
            raise MeshFormatError("vertex line needs 2 coordinates", lineno)
        try:
            vertices[k] = [float(parts[0]), float(parts[1])]
        except ValueError:
            raise MeshFormatError("bad vertex coordinate", lineno) from None

    triangles = np.empty((nt, 3), dtype=np.int64)
    material = np.empty(nt, dtype=np.int64)
    for k in range(nt):
        lineno = k + nv + 2
        parts = text[k + nv + 1].split()
        if len(parts) != 4:
            raise MeshFormatError("triangle line needs 'v0 v1 v2 material'", lineno)
        try:
            vals = [int(s) for s in parts]
        except ValueError:
            raise MeshFormatError("bad integer in triangle line", lineno) from None
        for v in vals[:3]:
            if not 0 <= v < nv:
                raise MeshFormatError(f"vertex index {v} out of range (nv={nv})", lineno)
        triangles[k] = vals[:3]
        material[k] = vals[3]
    for k in range(1 + nv + nt, len(text)):
        if text[k].strip():
            raise MeshFormatError("trailing data", k + 1)
    try:
        return Mesh(vertices, triangles, material)
    except MeshError as exc:
        raise MeshFormatError(str(exc)) from None
