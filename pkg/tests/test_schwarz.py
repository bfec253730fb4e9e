import numpy as np
import pytest
import scipy.sparse as sp

from conftest import make_setup
from dgschwarz.coarse import build_coarse_space
from dgschwarz.dgspace import build_dof_layout
from dgschwarz.krylov import pcg_solve
from dgschwarz.mesh import Mesh, build_face_topology
from dgschwarz.partition import build_partition
from dgschwarz.schwarz import (
    CostReport,
    FactorizationError,
    PreconditionerError,
    SchwarzPreconditioner,
    TruncatedCG,
    apply_additive,
    apply_hybrid,
    build_preconditioner,
    communication_count,
    cost_report,
    extract_block,
    factorize,
    projection_check,
    subdomain_blocks,
)
from dgschwarz.sipg import AssemblyConfig, DiffusionField, assemble_system


def dense_operators(s):
    """Explicit additive and hybrid preconditioner matrices."""
    A = s.A.toarray()
    n = A.shape[0]
    local = np.zeros((n, n))
    for b in subdomain_blocks(s.space, s.part):
        local[np.ix_(b, b)] = np.linalg.inv(A[np.ix_(b, b)])
    R0T = s.coarse.injection.toarray()
    C0 = R0T @ np.linalg.inv(R0T.T @ A @ R0T) @ R0T.T
    I = np.eye(n)
    add = local + C0
    hyb = C0 + (I - C0 @ A) @ local @ (I - A @ C0)
    return local, add, hyb


def test_extract_block():
    s = make_setup(n=2, p=1, N=2)
    A = s.A
    n = A.shape[0]
    assert abs(extract_block(A, np.arange(n)) - A).max() == 0
    assert extract_block(A, [5]).toarray() == pytest.approx(A[5, 5])
    dense = A.toarray()
    for b in subdomain_blocks(s.space, s.part):
        assert np.array_equal(extract_block(A, b).toarray(), dense[np.ix_(b, b)])
    idx = np.array([0, 3, 7, 20])
    assert np.array_equal(extract_block(A, idx).toarray(), dense[np.ix_(idx, idx)])
    for bad in ([2, 1], [1, 1, 2], [0, n]):
        with pytest.raises(IndexError):
            extract_block(A, bad)


def test_factorize_identity():
    f = factorize(sp.identity(3, format="csr"))
    assert np.array_equal(f.L.toarray(), np.eye(3))
    assert f.flfac == 3
    assert f.flass == 12


def test_factorize_hand_cholesky():
    A = sp.csr_matrix([[4.0, 2.0], [2.0, 3.0]])
    f = factorize(A, ordering="natural")
    assert np.allclose(f.L.toarray(), [[2, 0], [1, np.sqrt(2)]], atol=1e-15)
    b = np.array([4.0, 2.0])
    assert np.allclose(f.solve(b), [1.0, 0.0], atol=1e-15)
    g = factorize(A)
    assert np.allclose(g.solve(b), [1.0, 0.0], atol=1e-15)
    assert abs(g.reconstruct() - A).max() <= 1e-15


def test_factorize_assembled_block():
    mesh = make_setup(n=1, N=1).mesh
    space = build_dof_layout(mesh, 1)
    A = assemble_system(mesh, space, DiffusionField.constant(mesh), AssemblyConfig()).A
    f = factorize(A)
    assert abs(f.reconstruct() - A).max() <= 1e-12 * abs(A).max()
    P = sp.csr_matrix((np.ones(6), (np.arange(6), f.perm)), shape=(6, 6))
    assert abs(f.L @ f.L.T - P @ A @ P.T).max() <= 1e-12 * abs(A).max()
    L = f.L.tocsc()
    assert f.flfac == int(np.sum(np.diff(L.indptr) ** 2))
    assert f.flass == 4 * L.nnz
    b = np.arange(6.0)
    assert np.linalg.norm(A @ f.solve(b) - b) <= 1e-12 * np.linalg.norm(b)


def test_factorize_rejects_indefinite():
    with pytest.raises(FactorizationError, match="C_W"):
        factorize(sp.csr_matrix([[1.0, 0.0], [0.0, -1.0]]), ordering="natural")
    with pytest.raises(FactorizationError) as err:
        factorize(sp.diags([1.0, 2.0, -3.0, 4.0]).tocsr())
    assert err.value.pivot == 2


def test_underpenalized_system_fails_loudly():
    mesh = make_setup(n=3, N=1).mesh
    space = build_dof_layout(mesh, 1)
    A = assemble_system(mesh, space, DiffusionField.constant(mesh), AssemblyConfig(cw=0.5)).A
    assert np.linalg.eigvalsh(A.toarray()).min() < 0
    with pytest.raises(FactorizationError):
        factorize(A)


def test_one_level_single_subdomain_is_exact():
    s = make_setup(n=4, p=2, N=1)
    pc = build_preconditioner(s.space, s.part, s.A, "one_level")
    x = np.random.default_rng(0).standard_normal(s.space.n_dofs)
    assert np.allclose(s.A @ pc.apply_additive(x), x, atol=1e-12 * np.linalg.norm(x))
    _, rep = pcg_solve(s.A, s.g, pc, tol=1e-12)
    assert rep.iterations == 1 and rep.converged


@pytest.mark.parametrize("n, p, N, m", [(2, 1, 2, 1), (3, 2, 3, 1), (4, 1, 3, 2)])
def test_dense_oracles(n, p, N, m):
    s = make_setup(n=n, p=p, N=N, m=m)
    local, add, hyb = dense_operators(s)
    rng = np.random.default_rng(n)
    add_pc = build_preconditioner(s.space, s.part, s.A, "additive", s.coarse)
    hyb_pc = build_preconditioner(s.space, s.part, s.A, "hybrid", s.coarse)
    one_pc = build_preconditioner(s.space, s.part, s.A, "one_level")
    for _ in range(3):
        x = rng.standard_normal(s.space.n_dofs)
        for got, ref in ((apply_additive(add_pc, x), add @ x), (apply_hybrid(hyb_pc, x), hyb @ x),
                         (one_pc(x), local @ x)):
            assert np.linalg.norm(got - ref) <= 1e-12 * np.linalg.norm(ref)


def test_linearity():
    s = make_setup(n=4, p=2, N=3)
    rng = np.random.default_rng(1)
    for mode in ("one_level", "additive", "hybrid"):
        pc = build_preconditioner(s.space, s.part, s.A, mode, s.coarse)
        x, y = rng.standard_normal((2, s.space.n_dofs))
        lhs = pc(2.5 * x - 0.75 * y)
        rhs = 2.5 * pc(x) - 0.75 * pc(y)
        assert np.linalg.norm(lhs - rhs) <= 1e-12 * np.linalg.norm(rhs)


def test_hybrid_with_full_coarse_space_is_exact():
    mesh = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]), np.zeros(1, dtype=int))
    faces = build_face_topology(mesh)
    part = build_partition(mesh, 1, faces=faces)
    space = build_dof_layout(mesh, 3, part.subdomain_of, faces)
    A = assemble_system(mesh, space, DiffusionField.constant(mesh), AssemblyConfig(), faces).A
    coarse = build_coarse_space(mesh, space, part)
    assert coarse.n0 == space.n_dofs
    pc = build_preconditioner(space, part, A, "hybrid", coarse)
    x = np.linspace(-1, 1, space.n_dofs)
    assert np.allclose(A @ pc(x), x, atol=1e-10)


def test_hybrid_symmetric_positive_definite():
    s = make_setup(n=4, p=2, N=4, m=2)
    pc = build_preconditioner(s.space, s.part, s.A, "hybrid", s.coarse)
    rng = np.random.default_rng(7)
    for _ in range(100):
        x, y = rng.standard_normal((2, s.space.n_dofs))
        a, b = pc(x) @ y, x @ pc(y)
        assert abs(a - b) <= 1e-10 * max(abs(a), np.linalg.norm(pc(x)) * np.linalg.norm(y))
        assert pc(x) @ x > 0


@pytest.mark.parametrize("mode", ["additive", "hybrid"])
def test_projection_identity(mode):
    s = make_setup(n=4, p=2, N=3, m=2)
    pc = build_preconditioner(s.space, s.part, s.A, mode, s.coarse)
    rng = np.random.default_rng(2)
    v = rng.standard_normal(s.space.n_dofs)
    for i in range(pc.N + 1):
        assert projection_check(pc, i, v) <= 1e-10
        assert projection_check(pc, i, np.zeros_like(v)) == 0.0
    with pytest.raises(IndexError):
        pc.projection(pc.N + 1, v)


def test_truncated_solver_breaks_projection():
    s = make_setup(n=4, p=2, N=3)
    pc = SchwarzPreconditioner(s.A, subdomain_blocks(s.space, s.part), s.coarse.injection, "additive",
                               solver=TruncatedCG).setup()
    v = np.random.default_rng(0).standard_normal(s.space.n_dofs)
    assert max(projection_check(pc, i, v) for i in range(1, pc.N + 1)) > 1e-6


class _FakeSolver:
    def __init__(self, flfac, flass):
        self.flfac, self.flass = flfac, flass

    def solve(self, b):
        return b


def test_cost_model_formulas():
    s = make_setup(n=2, p=1, N=2)
    blocks = subdomain_blocks(s.space, s.part)
    pcs = {}
    for mode in ("additive", "hybrid"):
        fakes = iter([_FakeSolver(10, 5), _FakeSolver(7, 3), _FakeSolver(2, 1)])
        pcs[mode] = SchwarzPreconditioner(s.A, blocks, s.coarse.injection, mode, solver=lambda M: next(fakes)).setup()
    assert pcs["additive"].cost_report(0).FFass == 5
    assert pcs["hybrid"].cost_report(0).FFass == 7
    rep = pcs["hybrid"].cost_report(0)
    assert rep.Fl == rep.FFfac == 10 and rep.comm == 0
    rep = pcs["additive"].cost_report(3)
    assert rep.Fl == 10 + 3 * 5
    assert rep.comm == pytest.approx(3 * s.space.n_dofs * 1.0)


def test_paper_communication_count():
    comm = communication_count(103, 98304, 327)
    assert comm / 1e6 == pytest.approx(84.6, abs=0.1)
    assert CostReport(0, 0, 0, comm).Mcomm == pytest.approx(84.6, abs=0.1)


def test_cost_report_requires_factorization():
    s = make_setup(n=2, p=1, N=2)
    pc = SchwarzPreconditioner(s.A, subdomain_blocks(s.space, s.part), s.coarse.injection, "additive")
    with pytest.raises(PreconditionerError):
        cost_report(pc, 10)


def test_counters():
    s = make_setup(n=3, p=1, N=2)
    pc = build_preconditioner(s.space, s.part, s.A, "hybrid", s.coarse)
    x = np.ones(s.space.n_dofs)
    pc(x)
    one = pc.assembly_flops
    pc(x)
    assert pc.assembly_flops == 2 * one and pc.applications == 2
    pc.dense()
    assert pc.applications == 2
    assert one == max(f.flass for f in pc.local) + 2 * pc.coarse.flass


def test_mode_validation():
    s = make_setup(n=2, p=1, N=2)
    blocks = subdomain_blocks(s.space, s.part)
    with pytest.raises(PreconditionerError):
        SchwarzPreconditioner(s.A, blocks, None, "hybrid")
    with pytest.raises(PreconditionerError):
        SchwarzPreconditioner(s.A, blocks, s.coarse.injection, "multiplicative")
    with pytest.raises(PreconditionerError):
        SchwarzPreconditioner(s.A, blocks[:1], s.coarse.injection, "additive")
    pc = build_preconditioner(s.space, s.part, s.A, "hybrid", s.coarse)
    with pytest.raises(PreconditionerError):
        pc.apply_additive(np.ones(s.space.n_dofs))
    with pytest.raises(PreconditionerError):
        pc(np.ones(3))


def test_parallel_setup_matches_serial():
    s = make_setup(n=6, p=2, N=5)
    a = build_preconditioner(s.space, s.part, s.A, "hybrid", s.coarse)
    b = build_preconditioner(s.space, s.part, s.A, "hybrid", s.coarse, workers=4)
    x = np.random.default_rng(0).standard_normal(s.space.n_dofs)
    assert np.array_equal(a(x), b(x))
    assert a.factorization_cost() == b.factorization_cost()
