"""Preconditioned CG, stationary Schwarz iterations and Ritz-value condition estimates."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg as sla

log = logging.getLogger(__name__)


class DefinitenessError(ArithmeticError):
    def __init__(self, iteration: int, value: float):
        self.iteration = iteration
        super().__init__(f"operator not positive definite at iteration {iteration} (inner product {value:.3e})")


@dataclass
class SolveReport:
    iterations: int
    residual_history: list[float]
    converged: bool
    ritz_min: float | None = None
    ritz_max: float | None = None
    ritz_values: np.ndarray | None = field(default=None, repr=False)
    diverged: bool = False
    Fl: float | None = None
    comm: float | None = None

    @property
    def kappa_estimate(self) -> float:
        if self.ritz_min is None or self.ritz_max is None or self.ritz_min <= 0:
            return 1.0
        return max(self.ritz_max / self.ritz_min, 1.0)

    def crossing(self, level: float) -> int | None:
        """First iteration whose relative residual is <= ``level``."""
        for k, r in enumerate(self.residual_history):
            if r <= level:
                return k
        return None


def _as_op(A) -> Callable[[np.ndarray], np.ndarray]:
    if callable(A) and not hasattr(A, "shape"):
        return A
    return lambda v: A @ v


def default_maxiter(n: int) -> int:
    return int(10 * np.sqrt(n) + 100)


def lanczos_ritz(alphas, betas) -> np.ndarray:
    """Eigenvalues of the Lanczos tridiagonal built from CG coefficients."""
    a = np.asarray(alphas, dtype=float)
    b = np.asarray(betas, dtype=float)[: len(a) - 1]
    if a.size == 0:
        return np.empty(0)
    diag = 1.0 / a
    diag[1:] += b / a[:-1]
    off = np.sqrt(b) / a[:-1]
    if a.size == 1:
        return diag
    return sla.eigh_tridiagonal(diag, off, eigvals_only=True)


def pcg_solve(
    A,
    g,
    precond=None,
    x0=None,
    tol: float = 1e-12,
    maxiter: int | None = None,
    norm: str = "euclidean",
    breakdown_tol: float = 0.0,
    callback=None,
):
    """Preconditioned conjugate gradients.

    Stops when ``||N^{-1} r_k|| / ||N^{-1} r_0|| <= tol`` (``norm="euclidean"``);
    ``norm="energy"`` uses ``<N^{-1} r, r>^{1/2}`` instead. Ritz values of the
    preconditioned operator come from the CG coefficients.
    Returns ``(x, SolveReport)``.
    """
    if norm not in ("euclidean", "energy"):
        raise ValueError(f"unknown residual norm {norm!r}")
    op = _as_op(A)
    M = (lambda v: v.copy()) if precond is None else _as_op(precond)
    g = np.asarray(g, dtype=float)
    n = g.size
    if maxiter is None:
        maxiter = default_maxiter(n)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)

    def measure(z, rz):
        return np.linalg.norm(z) if norm == "euclidean" else np.sqrt(max(rz, 0.0))

    r = g - op(x)
    z = M(r)
    rz = float(r @ z)
    if rz < 0:
        raise DefinitenessError(0, rz)
    res0 = measure(z, rz)
    history = [1.0]
    alphas, betas = [], []
    if res0 == 0.0:
        return x, SolveReport(0, history, True)
    p = z.copy()
    converged = False
    k = 0
    while k < maxiter:
        k += 1
        Ap = op(p)
        pAp = float(p @ Ap)
        if pAp <= 0:
            raise DefinitenessError(k, pAp)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = M(r)
        rz_new = float(r @ z)
        rel = measure(z, rz_new) / res0
        history.append(rel)
        alphas.append(alpha)
        if callback is not None:
            callback(k, x, rel)
        if rel <= tol or rel <= breakdown_tol:
            converged = rel <= tol
            break
        if rz_new <= 0:
            raise DefinitenessError(k, rz_new)
        beta = rz_new / rz
        betas.append(beta)
        p = z + beta * p
        rz = rz_new
    ritz = lanczos_ritz(alphas, betas)
    rep = SolveReport(
        iterations=k,
        residual_history=history,
        converged=converged,
        ritz_min=float(ritz.min()) if ritz.size else None,
        ritz_max=float(ritz.max()) if ritz.size else None,
        ritz_values=ritz,
    )
    return x, rep


def stationary_solve(
    A,
    g,
    precond,
    x0=None,
    tol: float = 1e-12,
    maxiter: int | None = None,
    three_step: bool = False,
    divergence: float = 1e6,
    callback=None,
):
    """Richardson iteration ``u += N^{-1}(g - A u)``.

    With ``three_step`` the Schwarz sub-steps are run explicitly: coarse
    correction then local correction (two-level additive, both from the same
    residual), or coarse / local / coarse corrections (hybrid), each from the
    current residual. ``precond`` must then be a ``SchwarzPreconditioner``.
    The residual measure is ``||u^{l+1} - u^l|| = ||N^{-1} r_l||``.
    """
    op = _as_op(A)
    g = np.asarray(g, dtype=float)
    n = g.size
    if maxiter is None:
        maxiter = default_maxiter(n)
    u = np.zeros(n) if x0 is None else np.array(x0, dtype=float)

    if three_step:
        mode = precond.mode

        def step(u):
            if mode == "hybrid":
                u1 = u + precond.coarse_solve(g - op(u))
                u2 = u1 + precond.local_solves(g - op(u1))
                out = u2 + precond.coarse_solve(g - op(u2))
            elif mode == "additive":
                r = g - op(u)
                out = u + precond.coarse_solve(r) + precond.local_solves(r)
            else:
                out = u + precond.local_solves(g - op(u))
            precond._count(precond.assembly_cost())
            return out
    else:
        M = _as_op(precond)

        def step(u):
            return u + M(g - op(u))

    history = [1.0]
    res0 = None
    converged = diverged = False
    k = 0
    while k < maxiter:
        u_new = step(u)
        d = float(np.linalg.norm(u_new - u))
        if res0 is None:
            res0 = d
            if res0 == 0.0:
                return u, SolveReport(0, history, True)
        else:
            history.append(d / res0)
        u = u_new
        k += 1
        if callback is not None:
            callback(k, u)
        if history[-1] <= tol and k > 1:
            converged = True
            break
        if history[-1] > divergence or not np.isfinite(history[-1]):
            diverged = True
            log.warning("stationary iteration diverged at step %d", k)
            break
    return u, SolveReport(k, history, converged, diverged=diverged)


def estimate_condition(A, precond=None, probes: int = 1, seed: int = 0, maxiter: int | None = None):
    """Ritz-value estimate of the condition number of ``N^{-1} A``.

    Runs PCG from random right-hand sides for ``min(n, 200)`` steps (stopping
    only on an exhausted Krylov space) and returns ``(kappa, lmin, lmax)``
    over all probes.
    """
    op = _as_op(A)
    n = A.shape[0] if hasattr(A, "shape") else None
    rng = np.random.default_rng(seed)
    lo, hi = np.inf, 0.0
    for _ in range(probes):
        g = rng.standard_normal(n)
        steps = min(n, 200) if maxiter is None else maxiter
        _, rep = pcg_solve(op, g, precond, tol=0.0, maxiter=steps, breakdown_tol=1e-14)
        if rep.ritz_min is None:
            continue
        lo = min(lo, rep.ritz_min)
        hi = max(hi, rep.ritz_max)
    if not np.isfinite(lo):
        return 1.0, 1.0, 1.0
    return hi / lo, lo, hi


def dense_spectrum(A, Ninv) -> np.ndarray:
    """Eigenvalues of ``N^{-1} A`` for dense SPD ``Ninv`` and ``A``."""
    A = np.asarray(A.toarray() if hasattr(A, "toarray") else A, dtype=float)
    Ninv = 0.5 * (np.asarray(Ninv) + np.asarray(Ninv).T)
    C = np.linalg.cholesky(Ninv)
    return np.linalg.eigvalsh(C.T @ A @ C)


def dense_condition(A, Ninv) -> float:
    ev = dense_spectrum(A, Ninv)
    return float(ev.max() / ev.min())


def write_history(report: SolveReport, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "r_rel"])
        for k, r in enumerate(report.residual_history):
            w.writerow([k, repr(float(r))])
