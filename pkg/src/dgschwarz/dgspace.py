"""Polynomial spaces on the reference triangle, quadrature, and global dof layout."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import comb, factorial

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .mesh import Faces, Mesh, build_face_topology

MAX_EXACTNESS = 40
MAX_DEGREE_RATIO = 2

_lock = threading.Lock()


class QuadratureError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, 2) reference-triangle coordinates, or (nq,) on [0, 1]
    weights: np.ndarray
    exactness: int


def _rule(points, weights, exactness):
    points.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(points, weights, exactness)


@lru_cache(maxsize=None)
def _segment_rule(exactness: int) -> QuadratureRule:
    n = exactness // 2 + 1
    x, w = roots_legendre(n)
    return _rule(0.5 * (x + 1.0), 0.5 * w, exactness)


@lru_cache(maxsize=None)
def _triangle_rule(exactness: int) -> QuadratureRule:
    # collapsed coordinates: Gauss-Legendre in a, Gauss-Jacobi(1, 0) in b
    n = exactness // 2 + 1
    a, wa = roots_legendre(n)
    b, wb = roots_jacobi(n, 1.0, 0.0)
    A, B = np.meshgrid(a, b, indexing="ij")
    x = 0.25 * (1.0 + A) * (1.0 - B)
    y = 0.5 * (1.0 + B)
    w = np.outer(wa, wb) / 8.0
    return _rule(np.column_stack([x.ravel(), y.ravel()]), w.ravel(), exactness)


def quadrature(domain: str, exactness: int) -> QuadratureRule:
    """Quadrature rule exact up to total degree ``exactness``.

    ``domain`` is ``"triangle"`` (reference triangle with vertices (0,0), (1,0),
    (0,1), area 1/2) or ``"segment"`` (unit interval).
    """
    if exactness < 0:
        raise QuadratureError("exactness must be nonnegative")
    if exactness >= MAX_EXACTNESS:
        raise QuadratureError(f"exactness {exactness} unsupported (max {MAX_EXACTNESS - 1})")
    if domain == "triangle":
        return _triangle_rule(int(exactness))
    if domain == "segment":
        return _segment_rule(int(exactness))
    raise QuadratureError(f"unknown quadrature domain {domain!r}")


def n_basis(p: int) -> int:
    return (p + 1) * (p + 2) // 2


def monomial_exponents(p: int) -> np.ndarray:
    """Exponents (a, b) of x^a y^b, graded by total degree."""
    return np.array([(d - b, b) for d in range(p + 1) for b in range(d + 1)], dtype=np.int64)


_CENTER = Fraction(1, 3)


def _raw_moment(a: int, b: int) -> Fraction:
    return Fraction(factorial(a) * factorial(b), factorial(a + b + 2))


def _monomial_moment(a: int, b: int) -> Fraction:
    """Integral of (x - 1/3)^a (y - 1/3)^b over the reference triangle."""
    c = -_CENTER
    return sum(
        comb(a, i) * comb(b, j) * c ** (a - i + b - j) * _raw_moment(i, j)
        for i in range(a + 1)
        for j in range(b + 1)
    )


_coeff_cache: dict[int, np.ndarray] = {}


def basis_coefficients(p: int) -> np.ndarray:
    """Rows are orthonormal basis functions expressed in monomials.

    Monomials are in coordinates centred at the reference centroid.
    Gram-Schmidt in graded monomial order against the exact monomial mass
    matrix, done as a Cholesky factorization in rational arithmetic.
    """
    coeffs = _coeff_cache.get(p)
    if coeffs is not None:
        return coeffs
    e = monomial_exponents(p)
    m = len(e)
    M = [[_monomial_moment(int(e[i, 0] + e[j, 0]), int(e[i, 1] + e[j, 1])) for j in range(m)] for i in range(m)]
    # LDL^T exactly, then scale
    L = [[Fraction(0)] * m for _ in range(m)]
    D = [Fraction(0)] * m
    for j in range(m):
        D[j] = M[j][j] - sum(L[j][k] ** 2 * D[k] for k in range(j))
        L[j][j] = Fraction(1)
        for i in range(j + 1, m):
            L[i][j] = (M[i][j] - sum(L[i][k] * L[j][k] * D[k] for k in range(j))) / D[j]
    # exact inverse of the unit lower factor, then scale rows by D^{-1/2}
    Linv = [[Fraction(0)] * m for _ in range(m)]
    for i in range(m):
        Linv[i][i] = Fraction(1)
        for j in range(i - 1, -1, -1):
            Linv[i][j] = -sum(L[i][k] * Linv[k][j] for k in range(j, i))
    coeffs = np.array([[float(x) for x in row] for row in Linv])
    coeffs /= np.sqrt(np.array([float(d) for d in D]))[:, None]
    coeffs = np.tril(coeffs)
    coeffs.setflags(write=False)
    with _lock:
        _coeff_cache.setdefault(p, coeffs)
    return _coeff_cache[p]


def eval_basis(p: int, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal basis values and reference gradients.

    ``points`` is ``(2,)`` or ``(nq, 2)``. Returns values ``(nq, nb)`` and
    gradients ``(nq, nb, 2)`` (leading axis dropped for a single point).
    """
    if p < 0:
        raise ValueError("degree must be nonnegative")
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    # monomials centred at the reference centroid are better conditioned
    x, y = pts[:, 0:1] - 1.0 / 3.0, pts[:, 1:2] - 1.0 / 3.0
    e = monomial_exponents(p)
    a, b = e[:, 0], e[:, 1]
    # powers table: pw[k] = x**k for k = 0..p
    px = x ** np.arange(p + 1)
    py = y ** np.arange(p + 1)
    mono = px[:, a] * py[:, b]
    am1 = np.maximum(a - 1, 0)
    bm1 = np.maximum(b - 1, 0)
    dx = a * px[:, am1] * py[:, b]
    dy = b * px[:, a] * py[:, bm1]
    C = basis_coefficients(p)
    vals = mono @ C.T
    grads = np.stack([dx @ C.T, dy @ C.T], axis=2)
    if single:
        return vals[0], grads[0]
    return vals, grads


@dataclass(frozen=True, eq=False)
class DgSpace:
    """Discontinuous piecewise-polynomial space on a mesh.

    ``offsets[e]`` is the first global dof of element ``e``. Elements are laid
    out in ``element_order``, so with a subdomain-blocked order each
    subdomain's dofs form one contiguous range.
    """

    degrees: np.ndarray
    dofs_per_element: np.ndarray
    offsets: np.ndarray
    n_dofs: int
    element_order: np.ndarray

    @property
    def n_elements(self) -> int:
        return len(self.degrees)

    def element_dofs(self, e: int) -> np.ndarray:
        return np.arange(self.offsets[e], self.offsets[e] + self.dofs_per_element[e])

    def dofs_of(self, elements) -> np.ndarray:
        """Sorted global dofs of a set of elements."""
        elements = np.asarray(elements, dtype=np.int64)
        if elements.size == 0:
            return np.empty(0, dtype=np.int64)
        starts = self.offsets[elements]
        counts = self.dofs_per_element[elements]
        idx = np.repeat(starts - np.cumsum(counts) + counts, counts) + np.arange(counts.sum())
        return np.sort(idx)

    def groups(self):
        """Yield (degree, element ids) for each distinct degree."""
        for p in np.unique(self.degrees):
            yield int(p), np.flatnonzero(self.degrees == p)

    def dof_matrix(self, elements: np.ndarray, p: int) -> np.ndarray:
        """(ne, nb) global dof indices of same-degree elements."""
        return self.offsets[elements][:, None] + np.arange(n_basis(p))[None, :]


def build_dof_layout(mesh: Mesh, degrees, subdomain_of=None, faces: Faces | None = None) -> DgSpace:
    """Global dof numbering with contiguous dofs per element.

    ``degrees`` is an int or a per-element array. When ``subdomain_of`` is
    given, subdomain 0's elements are numbered first, then subdomain 1's, and
    so on (stable within a subdomain).
    """
    nt = mesh.n_triangles
    deg = np.broadcast_to(np.asarray(degrees, dtype=np.int64), (nt,)).copy()
    if np.any(deg < 1):
        raise ConfigurationError("polynomial degrees must be >= 1")
    if faces is None:
        faces = build_face_topology(mesh)
    inner = faces.interior
    if inner.size:
        pl, pr = deg[faces.left[inner]], deg[faces.right[inner]]
        ratio = np.maximum(pl, pr) / np.minimum(pl, pr)
        if np.any(ratio > MAX_DEGREE_RATIO):
            f = inner[int(np.argmax(ratio))]
            raise ConfigurationError(
                f"degree ratio {ratio.max():g} across face {f} exceeds {MAX_DEGREE_RATIO}"
            )
    if subdomain_of is None:
        order = np.arange(nt)
    else:
        sub = np.asarray(subdomain_of)
        if sub.shape != (nt,):
            raise ConfigurationError("subdomain map length differs from element count")
        order = np.argsort(sub, kind="stable")
    nb = (deg + 1) * (deg + 2) // 2
    offsets = np.empty(nt, dtype=np.int64)
    offsets[order] = np.concatenate([[0], np.cumsum(nb[order])[:-1]])
    for arr in (deg, nb, offsets, order):
        arr.setflags(write=False)
    return DgSpace(deg, nb, offsets, int(nb.sum()), order)
