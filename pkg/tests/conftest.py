from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest
import scipy.sparse as sp

from dgschwarz.coarse import CoarseSpace, build_coarse_space
from dgschwarz.dgspace import DgSpace, build_dof_layout
from dgschwarz.mesh import Faces, Mesh, build_face_topology
from dgschwarz.partition import Partition, build_partition
from dgschwarz.sipg import BenchmarkProblem, assemble_system, build_benchmark_problem

ACCEPTANCE_LINES: list[str] = []


@dataclass
class Setup:
    problem: BenchmarkProblem
    mesh: Mesh
    faces: Faces
    part: Partition
    space: DgSpace
    A: sp.csr_matrix
    g: np.ndarray
    coarse: CoarseSpace


def make_setup(name="laplace", n=2, p=1, N=2, m=1, zeta=1.0, respect=False, cw=None, seed=0) -> Setup:
    problem = build_benchmark_problem(name, zeta) if cw is None else build_benchmark_problem(name, zeta, cw=cw)
    mesh = problem.make_mesh(n)
    faces = build_face_topology(mesh, problem.config.dirichlet_predicate)
    part = build_partition(mesh, N, m, respect, seed, faces)
    space = build_dof_layout(mesh, p, part.subdomain_of, faces)
    system = assemble_system(mesh, space, problem.diffusion(mesh), problem.config, faces)
    coarse = build_coarse_space(mesh, space, part, system.A)
    return Setup(problem, mesh, faces, part, space, system.A, np.asarray(system.g), coarse)


@pytest.fixture
def small():
    return make_setup()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def nesting_error(mesh, space, coarse, agglomerate_of) -> float:
    """Max over quadrature points of |prolonged coarse basis function - direct evaluation|.

    The direct evaluation is the scaled monomial expansion on its agglomerate
    and zero elsewhere.
    """
    from dgschwarz.dgspace import quadrature
    from dgschwarz.sipg import evaluate, to_physical

    elems = np.arange(mesh.n_triangles)
    rule = quadrature("triangle", 2 * int(space.degrees.max()) + 1)
    x = to_physical(mesh, elems, rule.points)
    R0T = coarse.injection.tocsc()
    sizes = np.diff(np.append(coarse.offsets, coarse.n0))
    worst = 0.0
    for j, nb in enumerate(sizes.tolist()):
        inside = agglomerate_of == j
        for k in range(nb):
            fine = evaluate(space, mesh, R0T[:, coarse.offsets[j] + k].toarray().ravel(), elems, rule.points)
            direct = np.zeros_like(fine)
            direct[inside] = coarse.evaluate(j, np.eye(nb)[k], x[inside])
            worst = max(worst, float(np.abs(fine - direct).max()))
    return worst
