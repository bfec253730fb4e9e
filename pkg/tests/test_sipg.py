import numpy as np
import pytest
import scipy.sparse.linalg as spla
from scipy.integrate import dblquad

from dgschwarz.dgspace import build_dof_layout, eval_basis, quadrature
from dgschwarz.mesh import build_face_topology, build_uniform_square_mesh
from dgschwarz.sipg import (
    AssemblyConfig,
    DataError,
    DiffusionField,
    assemble_system,
    build_benchmark_problem,
    dg_norm,
    evaluate,
    l2_error,
    l2_projection,
    oscillatory_initial_guess,
    to_physical,
)


def _laplace_solve(n, p, cw=10.0):
    prob = build_benchmark_problem("laplace", cw=cw)
    mesh = prob.make_mesh(n)
    space = build_dof_layout(mesh, p)
    diff = prob.diffusion(mesh)
    sys_ = assemble_system(mesh, space, diff, prob.config)
    u = spla.spsolve(sys_.A.tocsc(), sys_.g)
    return prob, mesh, space, diff, u


def test_single_square_system():
    mesh = build_uniform_square_mesh(1)
    space = build_dof_layout(mesh, 1)
    sys_ = assemble_system(mesh, space, DiffusionField.constant(mesh), AssemblyConfig())
    A = sys_.A.toarray()
    assert A.shape == (6, 6)
    assert np.array_equal(A, A.T)
    assert np.linalg.eigvalsh(A).min() > 0
    assert np.all(sys_.g == 0)


@pytest.mark.parametrize("name, p", [("laplace", 1), ("laplace", 3), ("stripes", 2)])
def test_exact_symmetry(name, p):
    prob = build_benchmark_problem(name, 100.0)
    mesh = prob.make_mesh(5)
    space = build_dof_layout(mesh, p)
    A = assemble_system(mesh, space, prob.diffusion(mesh), prob.config).A
    assert abs(A - A.T).max() == 0.0


@pytest.mark.parametrize("n, p", [(2, 1), (2, 2), (2, 3), (4, 1), (4, 3)])
def test_coercive_at_cw20(n, p):
    # at most 32 elements, p <= 3
    prob = build_benchmark_problem("laplace", cw=20.0)
    mesh = prob.make_mesh(n)
    space = build_dof_layout(mesh, p)
    A = assemble_system(mesh, space, prob.diffusion(mesh), prob.config).A.toarray()
    assert np.linalg.eigvalsh(A).min() > 0


def test_quartic_reproduced():
    prob, mesh, space, diff, u = _laplace_solve(4, 4)
    exact = l2_projection(space, mesh, prob.exact)
    assert dg_norm(space, mesh, diff, prob.config, u - exact) <= 1e-8
    assert l2_error(space, mesh, u, prob.exact) <= 1e-10


def test_laplace_exact_solution():
    prob = build_benchmark_problem("laplace")
    x = np.linspace(0.05, 0.95, 7)
    X, Y = np.meshgrid(x, x)
    u = prob.exact
    h = 1e-4
    lap = (u(X + h, Y) + u(X - h, Y) + u(X, Y + h) + u(X, Y - h) - 4 * u(X, Y)) / h**2
    assert np.allclose(-lap, prob.config.source(X, Y), atol=1e-5)
    assert np.allclose(u(np.array([0.0, 1.0, 0.3]), np.array([0.4, 0.2, 0.0])), 0.0)


def test_l2_order_p2():
    errs = []
    for n in (8, 16, 32):
        prob, mesh, space, _, u = _laplace_solve(n, 2)
        errs.append(l2_error(space, mesh, u, prob.exact))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    slope = np.polyfit(np.log([1 / 8, 1 / 16, 1 / 32]), np.log(errs), 1)[0]
    assert abs(slope - 3) <= 0.2
    assert np.all(np.abs(rates - 3) <= 0.3)


def _no_dirichlet():
    return AssemblyConfig(dirichlet_predicate=lambda mid: False)


def test_dg_norm_of_linear_function():
    mesh = build_uniform_square_mesh(3)
    space = build_dof_layout(mesh, 1)
    v = l2_projection(space, mesh, lambda x, y: x)
    diff = DiffusionField.constant(mesh)
    assert dg_norm(space, mesh, diff, _no_dirichlet(), v) == pytest.approx(1.0, abs=1e-12)
    assert dg_norm(space, mesh, diff, _no_dirichlet(), np.zeros(space.n_dofs)) == 0.0


def test_continuous_function_has_no_jumps():
    mesh = build_uniform_square_mesh(4)
    space = build_dof_layout(mesh, 2)
    diff = DiffusionField.constant(mesh)
    v = l2_projection(space, mesh, lambda x, y: 1 + x * y - 3 * y**2)
    # broken H1 seminorm: exact value of int |grad(1 + xy - 3y^2)|^2
    rule = quadrature("triangle", 8)
    x = to_physical(mesh, np.arange(mesh.n_triangles), rule.points)
    gx, gy = x[..., 1], x[..., 0] - 6 * x[..., 1]
    semi = np.sum((gx**2 + gy**2) * rule.weights * 2 / mesh.n_triangles)
    assert dg_norm(space, mesh, diff, _no_dirichlet(), v) ** 2 == pytest.approx(semi, rel=1e-12)


@pytest.mark.parametrize("elem", [0, 5, 17])
def test_dg_norm_of_indicator(elem):
    n, cw, p = 3, 10.0, 2
    mesh = build_uniform_square_mesh(n)
    faces = build_face_topology(mesh)
    space = build_dof_layout(mesh, p)
    v = np.zeros(space.n_dofs)
    v[space.element_dofs(elem)[0]] = 1 / np.sqrt(2)  # constant 1 on the element
    on = (faces.left == elem) | (faces.right == elem)
    expected = np.sum(cw * p**2 / (np.sqrt(2) / n) * faces.length[on])
    got = dg_norm(space, mesh, DiffusionField.constant(mesh), AssemblyConfig(cw=cw), v) ** 2
    assert got == pytest.approx(expected, rel=1e-12)


def test_l2_error_trivial_cases():
    mesh = build_uniform_square_mesh(3)
    space = build_dof_layout(mesh, 2)
    f = lambda x, y: 1 - 2 * x + x * y
    v = l2_projection(space, mesh, f)
    assert l2_error(space, mesh, v, f) <= 1e-12
    assert l2_error(space, mesh, np.zeros(space.n_dofs), lambda x, y: np.ones_like(x)) == pytest.approx(1.0, abs=1e-14)


def test_polynomial_reproduction_at_random_points():
    mesh = build_uniform_square_mesh(4)
    space = build_dof_layout(mesh, 3)
    f = lambda x, y: x**3 - 2 * x * y**2 + y - 0.5
    v = l2_projection(space, mesh, f)
    rng = np.random.default_rng(1)
    ref = rng.dirichlet(np.ones(3), size=10)[:, :2]
    elems = np.arange(mesh.n_triangles)
    x = to_physical(mesh, elems, ref)
    assert np.abs(evaluate(space, mesh, v, elems, ref) - f(x[..., 0], x[..., 1])).max() <= 1e-11


def test_benchmark_problems():
    s1 = build_benchmark_problem("stripes", 1.0)
    mesh = s1.make_mesh(6)
    assert s1.diffusion(mesh).contrast == 1.0
    assert set(np.unique(mesh.material)) == {0, 1}
    c = mesh.centroids()
    assert np.all((mesh.material == 1) == ((c[:, 1] > 1 / 3) & (c[:, 1] < 2 / 3)))
    for zeta in (100.0, 10000.0):
        prob = build_benchmark_problem("stripes", zeta)
        d = prob.diffusion(mesh)
        assert d.upper / d.lower == zeta
        assert prob.tol == 1e-10
    assert build_benchmark_problem("laplace").tol == 1e-12
    with pytest.raises(ValueError):
        build_benchmark_problem("alternator")
    with pytest.raises(ValueError):
        build_benchmark_problem("stripes", 0.5)


def test_stripes_boundary_conditions():
    prob = build_benchmark_problem("stripes", 100.0)
    faces = build_face_topology(prob.make_mesh(3), prob.config.dirichlet_predicate)
    b = np.flatnonzero(faces.right < 0)
    mid = faces.endpoints[b].mean(axis=1)
    neumann = (mid[:, 0] < 1e-12) | (mid[:, 1] < 1e-12)
    assert np.array_equal(faces.kind[b] == 2, neumann)


def test_nonpositive_diffusion_rejected():
    with pytest.raises(DataError):
        DiffusionField(np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        AssemblyConfig(cw=0.0)


def test_mismatched_sizes_rejected():
    mesh = build_uniform_square_mesh(2)
    space = build_dof_layout(mesh, 1)
    with pytest.raises(ValueError):
        assemble_system(mesh, space, DiffusionField.constant(build_uniform_square_mesh(3)), AssemblyConfig())


def test_oscillatory_guess():
    mesh = build_uniform_square_mesh(5)
    space = build_dof_layout(mesh, 2)
    v = oscillatory_initial_guess(space, mesh)
    assert np.linalg.norm(v) > 0
    per_element = np.array([np.linalg.norm(v[space.element_dofs(e)]) for e in range(mesh.n_triangles)])
    assert np.all(per_element > 0)
    # projecting the evaluated projection returns it
    rule = quadrature("triangle", 12)
    V, _ = eval_basis(2, rule.points)
    again = np.zeros_like(v)
    for e in range(mesh.n_triangles):
        vals = V @ v[space.element_dofs(e)]
        again[space.element_dofs(e)] = V.T @ (rule.weights * vals)
    assert np.allclose(again, v, atol=1e-13)


def test_oscillatory_guess_matches_adaptive_quadrature():
    mesh = build_uniform_square_mesh(2)
    space = build_dof_layout(mesh, 1)
    v = oscillatory_initial_guess(space, mesh)

    def f(x, y):
        return sum(np.sin(2 * np.pi * i * x) * np.sin(2 * np.pi * j * y) for i in (1, 2, 3) for j in (1, 2, 3))

    for e in range(mesh.n_triangles):
        v0, v1, v2 = mesh.vertices[mesh.triangles[e]]
        for k in range(3):
            def integrand(t, s):
                x = v0 + s * (v1 - v0) + t * (v2 - v0)
                return f(*x) * eval_basis(1, np.array([s, t]))[0][k]

            ref, _ = dblquad(integrand, 0, 1, 0, lambda s: 1 - s, epsabs=1e-12, epsrel=1e-12)
            assert v[space.element_dofs(e)[k]] == pytest.approx(ref, abs=1e-10)
