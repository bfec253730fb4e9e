"""Nonoverlapping subdomains and coarse agglomerates by recursive coordinate bisection."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .mesh import Faces, Mesh, build_face_topology


class PartitionError(ValueError):
    pass


class AgglomerationError(PartitionError):
    pass


def dual_graph(mesh: Mesh, faces: Faces | None = None) -> sp.csr_matrix:
    """Element adjacency through interior faces (symmetric, unit weights)."""
    if faces is None:
        faces = build_face_topology(mesh)
    i = faces.interior
    l, r = faces.left[i], faces.right[i]
    nt = mesh.n_triangles
    G = sp.coo_matrix((np.ones(2 * len(l)), (np.r_[l, r], np.r_[r, l])), shape=(nt, nt)).tocsr()
    return G


def _bisect(elems, pts, keys, k, out, first_label):
    if k == 1:
        out[elems] = first_label
        return
    sub = pts[elems]
    axis = int(np.argmax(np.ptp(sub, axis=0)))
    other = 1 - axis
    order = np.lexsort((keys[elems], sub[:, other], sub[:, axis]))
    k1 = k // 2
    n1 = int(round(len(elems) * k1 / k))
    n1 = min(max(n1, k1), len(elems) - (k - k1))
    left, right = elems[order[:n1]], elems[order[n1:]]
    _bisect(left, pts, keys, k1, out, first_label)
    _bisect(right, pts, keys, k - k1, out, first_label + k1)


def _repair(labels, elems, graph, max_sweeps=50):
    """Reattach disconnected fragments of each part to the best-connected neighbour part."""
    in_set = np.zeros(graph.shape[0], dtype=bool)
    in_set[elems] = True
    sub_graph = graph[elems][:, elems]
    rows, cols = sub_graph.nonzero()
    for _ in range(max_sweeps):
        lab = labels[elems]
        same = lab[rows] == lab[cols]
        g = sp.coo_matrix((np.ones(same.sum()), (rows[same], cols[same])), shape=(len(elems),) * 2)
        ncomp, comp = connected_components(g, directed=False)
        changed = False
        for part in np.unique(lab):
            in_part = np.flatnonzero(lab == part)
            comps, sizes = np.unique(comp[in_part], return_counts=True)
            if len(comps) == 1:
                continue
            keep = comps[np.argmax(sizes)]
            for c in comps:
                if c == keep:
                    continue
                frag = np.flatnonzero(comp == c)
                mask = np.isin(rows, frag) & ~np.isin(cols, frag)
                nb = lab[cols[mask]]
                nb = nb[nb != part]
                if nb.size == 0:
                    continue
                vals, counts = np.unique(nb, return_counts=True)
                labels[elems[frag]] = vals[np.argmax(counts)]
                changed = True
        if not changed:
            break
    return labels


def _rcb(mesh, elems, k, rng, graph):
    pts = np.round(mesh.centroids(), 12)
    keys = rng.random(mesh.n_triangles)
    labels = np.full(mesh.n_triangles, -1, dtype=np.int64)
    _bisect(np.asarray(elems), pts, keys, k, labels, 0)
    _repair(labels, np.asarray(elems), graph)
    return labels


def material_components(mesh: Mesh, graph: sp.csr_matrix) -> np.ndarray:
    """Connected components of same-material elements."""
    rows, cols = graph.nonzero()
    same = mesh.material[rows] == mesh.material[cols]
    g = sp.coo_matrix((np.ones(same.sum()), (rows[same], cols[same])), shape=graph.shape)
    return connected_components(g, directed=False)[1]


def _allocate(sizes, N):
    """Largest-remainder apportionment of N parts, at least one each."""
    sizes = np.asarray(sizes, dtype=float)
    ideal = N * sizes / sizes.sum()
    counts = np.maximum(np.floor(ideal).astype(np.int64), 1)
    while counts.sum() > N:
        j = int(np.argmax(np.where(counts > 1, counts - ideal, -np.inf)))
        counts[j] -= 1
    while counts.sum() < N:
        j = int(np.argmax(ideal - counts))
        counts[j] += 1
    return counts


def partition_mesh(
    mesh: Mesh, N: int, respect_materials: bool = False, seed: int = 0, faces: Faces | None = None
) -> np.ndarray:
    """Split the elements into ``N`` balanced, edge-connected subdomains.

    With ``respect_materials`` every connected same-material component is
    split on its own, with a part count proportional to its size.
    """
    nt = mesh.n_triangles
    if N < 1 or N > nt:
        raise PartitionError(f"cannot split {nt} elements into {N} subdomains")
    rng = np.random.default_rng(seed)
    graph = dual_graph(mesh, faces)
    if not respect_materials:
        return _rcb(mesh, np.arange(nt), N, rng, graph)

    comp = material_components(mesh, graph)
    ncomp = int(comp.max()) + 1
    if N < ncomp:
        raise PartitionError(f"{N} subdomains cannot respect {ncomp} material components")
    sizes = np.bincount(comp, minlength=ncomp)
    counts = _allocate(sizes, N)
    labels = np.empty(nt, dtype=np.int64)
    start = 0
    for c in range(ncomp):
        elems = np.flatnonzero(comp == c)
        if counts[c] > len(elems):
            raise PartitionError(f"material component {c} has {len(elems)} elements, needs {counts[c]} parts")
        lab = _rcb(mesh, elems, int(counts[c]), rng, graph)
        labels[elems] = lab[elems] + start
        start += int(counts[c])
    return labels


def agglomerate_coarse(mesh: Mesh, subdomain_of, m: int, seed: int = 0, faces: Faces | None = None) -> np.ndarray:
    """Coarse elements: each subdomain split into ``m`` connected pieces."""
    if m < 1:
        raise AgglomerationError("parts per subdomain must be >= 1")
    sub = np.asarray(subdomain_of, dtype=np.int64)
    graph = dual_graph(mesh, faces)
    rng = np.random.default_rng(seed)
    out = np.empty_like(sub)
    start = 0
    for s in range(int(sub.max()) + 1):
        elems = np.flatnonzero(sub == s)
        if len(elems) == 0:
            continue
        if m == 1:
            if not is_connected(graph, elems):
                raise AgglomerationError(f"subdomain {s} is not edge-connected")
            out[elems] = start
            start += 1
            continue
        if len(elems) < m:
            raise AgglomerationError(f"subdomain {s} has {len(elems)} elements, fewer than {m}")
        lab = _rcb(mesh, elems, m, rng, graph)[elems]
        used, lab = np.unique(lab, return_inverse=True)
        g = graph[elems][:, elems].tocoo()
        same = lab[g.row] == lab[g.col]
        gg = sp.coo_matrix((np.ones(same.sum()), (g.row[same], g.col[same])), shape=g.shape)
        ncomp = connected_components(gg, directed=False)[0]
        if ncomp != len(used) or len(used) != m:
            raise AgglomerationError(f"subdomain {s} cannot be split into {m} connected pieces")
        out[elems] = lab + start
        start += len(used)
    return out


def subdomain_adjacency(mesh: Mesh, subdomain_of, faces: Faces | None = None):
    """Neighbour lists of subdomains sharing an edge, and their maximum length."""
    if faces is None:
        faces = build_face_topology(mesh)
    sub = np.asarray(subdomain_of)
    N = int(sub.max()) + 1
    i = faces.interior
    a, b = sub[faces.left[i]], sub[faces.right[i]]
    cross = a != b
    pairs = np.unique(np.sort(np.column_stack([a[cross], b[cross]]), axis=1), axis=0)
    adjacency = [[] for _ in range(N)]
    for x, y in pairs.tolist():
        adjacency[x].append(y)
        adjacency[y].append(x)
    adjacency = [sorted(v) for v in adjacency]
    ns = max((len(v) for v in adjacency), default=0)
    return adjacency, ns


def is_connected(graph: sp.csr_matrix, elems) -> bool:
    elems = np.asarray(elems)
    if len(elems) <= 1:
        return True
    return connected_components(graph[elems][:, elems], directed=False)[0] == 1


@dataclass(frozen=True, eq=False)
class Partition:
    subdomain_of: np.ndarray
    agglomerate_of: np.ndarray
    N: int
    n_coarse: int
    adjacency: list
    N_S: int

    def subdomain_elements(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.subdomain_of == i)

    def agglomerate_elements(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.agglomerate_of == j)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.subdomain_of, minlength=self.N)

    def is_nested(self) -> bool:
        owner = np.full(self.n_coarse, -1)
        owner[self.agglomerate_of] = self.subdomain_of
        return bool(np.all(owner[self.agglomerate_of] == self.subdomain_of))


def make_partition(subdomain_of, agglomerate_of, mesh: Mesh, faces: Faces | None = None) -> Partition:
    sub = np.asarray(subdomain_of, dtype=np.int64)
    agg = np.asarray(agglomerate_of, dtype=np.int64)
    if sub.shape != (mesh.n_triangles,) or agg.shape != sub.shape:
        raise PartitionError("maps must have one entry per element")
    adjacency, ns = subdomain_adjacency(mesh, sub, faces)
    part = Partition(sub, agg, int(sub.max()) + 1, int(agg.max()) + 1, adjacency, ns)
    if not part.is_nested():
        raise PartitionError("an agglomerate crosses a subdomain boundary")
    return part


def build_partition(
    mesh: Mesh, N: int, m: int = 1, respect_materials: bool = False, seed: int = 0, faces: Faces | None = None
) -> Partition:
    if faces is None:
        faces = build_face_topology(mesh)
    sub = partition_mesh(mesh, N, respect_materials, seed, faces)
    agg = agglomerate_coarse(mesh, sub, m, seed, faces)
    return make_partition(sub, agg, mesh, faces)


def save_partition(part: Partition, path) -> None:
    lines = [f"{s} {a}" for s, a in zip(part.subdomain_of.tolist(), part.agglomerate_of.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def load_partition(path, mesh: Mesh) -> Partition:
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if len(parts) != 2:
            raise PartitionError(f"line {lineno}: expected 'subdomain agglomerate'")
        try:
            rows.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise PartitionError(f"line {lineno}: bad integer") from None
    arr = np.array(rows, dtype=np.int64).reshape(-1, 2)
    return make_partition(arr[:, 0], arr[:, 1], mesh)
