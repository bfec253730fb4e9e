"""Subdomain block solvers and the one-level, additive and hybrid Schwarz preconditioners."""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from math import log2
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, splu

MODES = ("one_level", "additive", "hybrid")


class FactorizationError(ArithmeticError):
    def __init__(self, pivot: int, value: float):
        self.pivot = pivot
        super().__init__(
            f"nonpositive pivot {value:.3e} at index {pivot}; the block is not SPD "
            "(is the penalty constant C_W large enough?)"
        )


class PreconditionerError(ValueError):
    pass


def extract_block(A: sp.spmatrix, index) -> sp.csr_matrix:
    """Principal submatrix of ``A`` on a sorted, duplicate-free index set."""
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 1:
        raise IndexError("index set must be one-dimensional")
    if idx.size and (idx[0] < 0 or idx[-1] >= A.shape[0]):
        raise IndexError("index out of range")
    if np.any(np.diff(idx) <= 0):
        raise IndexError("index set must be sorted without duplicates")
    A = sp.csr_matrix(A)
    if _contiguous(idx):
        s = slice(int(idx[0]), int(idx[-1]) + 1) if idx.size else slice(0, 0)
        return A[s, s].tocsr()
    return A[idx][:, idx].tocsr()


def _contiguous(idx) -> bool:
    return idx.size == 0 or idx[-1] - idx[0] + 1 == idx.size


_ORDERINGS = {"mmd": "MMD_AT_PLUS_A", "natural": "NATURAL"}


class BlockFactorization:
    """Sparse Cholesky factor ``L L^T = P A_i P^T`` with flop counts.

    ``flfac`` is the sum over columns of nnz(L_col)^2 and ``flass`` is
    4 nnz(L): forward and backward sweeps with multiplies and adds counted
    separately. ``ordering`` is ``"mmd"`` (minimum degree on A + A^T, the
    default) or ``"natural"``.
    """

    def __init__(self, Ai: sp.spmatrix, index=None, ordering: str = "mmd"):
        if ordering not in _ORDERINGS:
            raise ValueError(f"unknown ordering {ordering!r}; expected one of {sorted(_ORDERINGS)}")
        Ai = sp.csc_matrix(Ai)
        n = Ai.shape[0]
        self.n = n
        self.index = None if index is None else np.asarray(index, dtype=np.int64)
        try:
            lu = splu(
                Ai,
                permc_spec=_ORDERINGS[ordering],
                diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
        except RuntimeError:
            d = Ai.diagonal()
            k = int(np.argmin(d)) if n else 0
            raise FactorizationError(k, float(d[k]) if n else 0.0) from None
        if not np.array_equal(lu.perm_r, lu.perm_c):
            raise FactorizationError(-1, float("nan"))
        dU = lu.U.diagonal()
        if np.any(dU <= 0):
            k = int(np.argmax(dU <= 0))
            original = int(np.argsort(lu.perm_c)[k])
            raise FactorizationError(original, float(dU[k]))
        self._lu = lu
        self.perm = np.argsort(lu.perm_c)  # perm[k] = original index at position k
        self.L = sp.csc_matrix(lu.L @ sp.diags(np.sqrt(dU)))
        col_nnz = np.diff(self.L.indptr)
        self.flfac = int(np.sum(col_nnz.astype(np.int64) ** 2))
        self.flass = int(4 * self.L.nnz)

    def solve(self, b: np.ndarray) -> np.ndarray:
        return self._lu.solve(np.asarray(b, dtype=float))

    def reconstruct(self) -> sp.csc_matrix:
        """L L^T mapped back to the original ordering."""
        LLt = (self.L @ self.L.T).tocoo()
        return sp.csc_matrix((LLt.data, (self.perm[LLt.row], self.perm[LLt.col])), shape=LLt.shape)


def factorize(Ai: sp.spmatrix, index=None, ordering: str = "mmd") -> BlockFactorization:
    return BlockFactorization(Ai, index, ordering)


@dataclass(frozen=True)
class CostReport:
    FFfac: int
    FFass: int
    Fl: int
    comm: float

    @property
    def MFl(self) -> float:
        return self.Fl / 1e6

    @property
    def Mcomm(self) -> float:
        return self.comm / 1e6


def communication_count(iterations: int, n: int, N: int) -> float:
    """Tree-based vector exchange estimate: iter * n * log2(N)."""
    return float(iterations) * float(n) * log2(N)


class SchwarzPreconditioner:
    """Nonoverlapping Schwarz preconditioner on a fixed system matrix.

    Parameters
    ----------
    A : sparse SPD matrix
    blocks : sequence of sorted global dof index arrays, one per subdomain
    injection : R0^T, ``(n, n0)`` sparse, or None for ``one_level``
    mode : ``"one_level"``, ``"additive"`` or ``"hybrid"``
    solver : factory ``Ai -> object`` exposing ``solve``, ``flfac``, ``flass``
    """

    def __init__(
        self,
        A: sp.spmatrix,
        blocks: Sequence[np.ndarray],
        injection: sp.spmatrix | None = None,
        mode: str = "additive",
        solver: Callable = factorize,
        workers: int = 1,
    ):
        if mode not in MODES:
            raise PreconditionerError(f"unknown mode {mode!r}; expected one of {MODES}")
        if mode != "one_level" and injection is None:
            raise PreconditionerError(f"mode {mode!r} needs a coarse injection")
        self.A = sp.csr_matrix(A)
        self.n = self.A.shape[0]
        self.mode = mode
        self.blocks = [np.asarray(b, dtype=np.int64) for b in blocks]
        seen = np.zeros(self.n, dtype=np.int64)
        for b in self.blocks:
            seen[b] += 1
        if not np.all(seen == 1):
            raise PreconditionerError("block index sets must partition the dofs")
        self.R0T = None if injection is None else sp.csr_matrix(injection)
        self.R0 = None if injection is None else self.R0T.T.tocsr()
        self._solver = solver
        self._workers = workers
        self.local: list = []
        self.coarse = None
        self.A0 = None
        self._slices = [slice(int(b[0]), int(b[-1]) + 1) if _contiguous(b) and b.size else b for b in self.blocks]
        self._lock = threading.Lock()
        self.applications = 0
        self.assembly_flops = 0

    @property
    def N(self) -> int:
        return len(self.blocks)

    @property
    def is_factorized(self) -> bool:
        return len(self.local) == self.N

    def setup(self) -> SchwarzPreconditioner:
        if self.is_factorized:
            return self
        mats = [extract_block(self.A, b) for b in self.blocks]

        def work(k):
            return self._solver(mats[k]) if k >= 0 else self._solver(self.A0)

        if self.R0T is not None:
            A0 = (self.R0 @ self.A @ self.R0T).tocsr()
            self.A0 = ((A0 + A0.T) * 0.5).tocsr()
        jobs = list(range(self.N)) + ([-1] if self.A0 is not None else [])
        if self._workers > 1:
            with ThreadPoolExecutor(self._workers) as pool:
                results = list(pool.map(work, jobs))
        else:
            results = [work(k) for k in jobs]
        self.local = results[: self.N]
        self.coarse = results[self.N] if self.A0 is not None else None
        return self

    # -- building blocks ---------------------------------------------------

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise PreconditionerError(f"vector of shape {x.shape}, expected ({self.n},)")
        if not self.is_factorized:
            self.setup()
        return x

    def local_solves(self, x: np.ndarray) -> np.ndarray:
        """sum_i R_i^T A_i^{-1} R_i x (block Jacobi)."""
        u = np.empty(self.n)
        for s, fac in zip(self._slices, self.local):
            u[s] = fac.solve(x[s])
        return u

    def coarse_solve(self, x: np.ndarray) -> np.ndarray:
        """R0^T A0^{-1} R0 x."""
        return self.R0T @ self.coarse.solve(self.R0 @ x)

    def _count(self, flops):
        with self._lock:
            self.applications += 1
            self.assembly_flops += flops

    def assembly_cost(self) -> int:
        """Per-application flops of the busiest core."""
        loc = max((f.flass for f in self.local), default=0)
        if self.mode == "one_level":
            return loc
        if self.mode == "additive":
            return max(loc, self.coarse.flass)
        return loc + 2 * self.coarse.flass

    def factorization_cost(self) -> int:
        flops = [f.flfac for f in self.local]
        if self.coarse is not None and self.mode != "one_level":
            flops.append(self.coarse.flfac)
        return max(flops, default=0)

    # -- applications -----------------------------------------------------

    def apply_additive(self, x) -> np.ndarray:
        if self.mode == "hybrid":
            raise PreconditionerError("apply_additive called on a hybrid preconditioner")
        x = self._check(x)
        u = self.local_solves(x)
        if self.mode == "additive":
            u += self.coarse_solve(x)
        self._count(self.assembly_cost())
        return u

    def apply_hybrid(self, x) -> np.ndarray:
        if self.mode != "hybrid":
            raise PreconditionerError(f"apply_hybrid called on a {self.mode} preconditioner")
        x = self._check(x)
        z0 = self.coarse_solve(x)
        z = x - self.A @ z0
        y = self.local_solves(z)
        v = self.coarse_solve(self.A @ y)
        self._count(self.assembly_cost())
        return z0 + y - v

    def apply(self, x) -> np.ndarray:
        if self.mode == "hybrid":
            return self.apply_hybrid(x)
        return self.apply_additive(x)

    __call__ = apply

    def as_linear_operator(self) -> LinearOperator:
        return LinearOperator((self.n, self.n), matvec=self.apply, dtype=float)

    # -- diagnostics ------------------------------------------------------

    def projection(self, i: int, v) -> np.ndarray:
        """P_i v = R_i^T A_i^{-1} R_i A v; ``i = 0`` is the coarse level, 1..N the subdomains."""
        v = self._check(v)
        w = self.A @ v
        if i == 0:
            if self.coarse is None:
                raise PreconditionerError("no coarse level")
            return self.coarse_solve(w)
        if not 1 <= i <= self.N:
            raise IndexError(f"subdomain {i} out of range 1..{self.N}")
        s = self._slices[i - 1]
        out = np.zeros(self.n)
        out[s] = self.local[i - 1].solve(w[s])
        return out

    def projection_check(self, i: int, v) -> float:
        pv = self.projection(i, v)
        nrm = np.linalg.norm(pv)
        if nrm == 0.0:
            return 0.0
        return float(np.linalg.norm(self.projection(i, pv) - pv) / nrm)

    def cost_report(self, iterations: int, N: int | None = None, n: int | None = None) -> CostReport:
        if not self.is_factorized:
            raise PreconditionerError("cost report requested before factorization")
        N = self.N if N is None else N
        n = self.n if n is None else n
        fac = self.factorization_cost()
        ass = self.assembly_cost()
        return CostReport(fac, ass, fac + iterations * ass, communication_count(iterations, n, N))

    def dense(self) -> np.ndarray:
        """Explicit preconditioner matrix, column by column (small systems only)."""
        apps, flops = self.applications, self.assembly_flops
        cols = [self.apply(e) for e in np.eye(self.n)]
        self.applications, self.assembly_flops = apps, flops
        return np.column_stack(cols)


def apply_additive(precond: SchwarzPreconditioner, x) -> np.ndarray:
    return precond.apply_additive(x)


def apply_hybrid(precond: SchwarzPreconditioner, x) -> np.ndarray:
    return precond.apply_hybrid(x)


def projection_check(precond: SchwarzPreconditioner, i: int, v) -> float:
    return precond.projection_check(i, v)


def cost_report(precond: SchwarzPreconditioner, iterations: int, N=None, n=None) -> CostReport:
    return precond.cost_report(iterations, N, n)


def subdomain_blocks(space, partition) -> list[np.ndarray]:
    return [space.dofs_of(partition.subdomain_elements(i)) for i in range(partition.N)]


def build_preconditioner(space, partition, A, mode: str, coarse=None, solver: Callable = factorize,
                         workers: int = 1) -> SchwarzPreconditioner:
    """Factorized Schwarz preconditioner for a partitioned DG system."""
    injection = None if coarse is None or mode == "one_level" else coarse.injection
    pc = SchwarzPreconditioner(A, subdomain_blocks(space, partition), injection, mode, solver, workers)
    return pc.setup()


class TruncatedCG:
    """A single unpreconditioned CG step as an inexact block solver (diagnostic use)."""

    def __init__(self, Ai, steps: int = 1):
        self.Ai = sp.csr_matrix(Ai)
        self.n = self.Ai.shape[0]
        self.steps = steps
        self.flfac = 0
        self.flass = 2 * self.Ai.nnz * steps

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        x = np.zeros_like(b)
        r = b.copy()
        p = r.copy()
        rr = r @ r
        for _ in range(self.steps):
            if rr == 0:
                break
            Ap = self.Ai @ p
            alpha = rr / (p @ Ap)
            x += alpha * p
            r -= alpha * Ap
            rr_new = r @ r
            p = r + (rr_new / rr) * p
            rr = rr_new
        return x
