"""Matrix-free operator evaluation against brute-force and dense oracles."""

import numpy as np
import pytest

from volfem.fields import MaskSpec, apply_mask, apply_shift_bc, field_dot, mask_from_edges
from volfem.grid import StructuredGrid, build_trial_kernel, gauss_legendre_rule, jacobian_field, q1_shape_table
from volfem.materials import LoadSpec, MaterialField, ParameterField
from volfem.matrix_free import eval_at_gauss, load_vector, system_functional
from volfem.problems import default_grid, problem_factory
from volfem.solvers import assemble_dense, dense_solve


def _heat_problem(n_nodes, seed=0, nx=None, ny=None):
    rng = np.random.default_rng(seed)
    if nx is None:
        grid = default_grid("heat", n_nodes)
    else:
        grid = StructuredGrid(nx=nx, ny=ny, hx=1.0 / nx, hy=1.0 / ny)
    q = ParameterField("source-Q", "gauss-points", rng.standard_normal((4, grid.ny, grid.nx)))
    return problem_factory("heat", grid, q), rng


def _node_coordinates(grid):
    x = grid.origin[0] + grid.hx * np.arange(grid.n_nodes_x)
    y = grid.origin[1] + grid.hy * np.arange(grid.n_nodes_y)
    return np.meshgrid(x, y)


def test_eval_at_gauss_zero_field():
    prob, _ = _heat_problem(4)
    g = eval_at_gauss(prob.zero_field(), prob.trial)
    assert np.all(g.values == 0.0)
    assert np.all(g.grad == 0.0)


def test_eval_at_gauss_reproduces_linear_fields():
    prob, _ = _heat_problem(5, nx=4, ny=3)
    x, y = _node_coordinates(prob.grid)
    a = (2.0 * x - 0.5 * y + 1.0)[None]
    g = eval_at_gauss(a, prob.trial)
    np.testing.assert_allclose(g.grad[0, :, 0], 2.0, atol=1e-12)
    np.testing.assert_allclose(g.grad[0, :, 1], -0.5, atol=1e-12)
    # constant field also checks partition of unity through the value filters
    gc = eval_at_gauss(np.full_like(a, 3.7), prob.trial)
    np.testing.assert_allclose(gc.values, 3.7, atol=1e-13)


def test_eval_at_gauss_matches_element_loop():
    # brute-force per-element interpolation oracle on a rectangular grid
    grid = StructuredGrid(nx=3, ny=2, hx=0.4, hy=0.9)
    rule = gauss_legendre_rule(2)
    table = q1_shape_table(rule)
    trial = build_trial_kernel(grid, table)
    rng = np.random.default_rng(11)
    a = rng.standard_normal((1,) + grid.node_shape)
    g = eval_at_gauss(a, trial)
    for ey in range(grid.ny):
        for ex in range(grid.nx):
            corners = [a[0, ey + dy, ex + dx] for dy in (0, 1) for dx in (0, 1)]
            for l in range(rule.n_points):
                val = sum(table.values[l, k] * corners[k] for k in range(4))
                ddx = sum(table.local_grads[l, k, 0] * corners[k] for k in range(4)) * 2.0 / grid.hx
                ddy = sum(table.local_grads[l, k, 1] * corners[k] for k in range(4)) * 2.0 / grid.hy
                assert abs(g.values[0, l, ey, ex] - val) < 1e-13
                assert abs(g.grad[0, l, 0, ey, ex] - ddx) < 1e-13
                assert abs(g.grad[0, l, 1, ey, ex] - ddy) < 1e-13


def test_eval_at_gauss_shape_mismatch():
    prob, rng = _heat_problem(4)
    with pytest.raises(ValueError):
        eval_at_gauss(rng.standard_normal((1, 7, 7)), prob.trial)


def test_affine_gradients_exact_any_gauss_order():
    grid = StructuredGrid(nx=5, ny=4, hx=0.23, hy=0.11)
    x, y = _node_coordinates(grid)
    a = (1.3 * x + 0.7 * y - 2.0)[None]
    for order in (1, 2, 3):
        trial = build_trial_kernel(grid, q1_shape_table(gauss_legendre_rule(order)))
        g = eval_at_gauss(a, trial)
        np.testing.assert_allclose(g.grad[0, :, 0], 1.3, atol=1e-12)
        np.testing.assert_allclose(g.grad[0, :, 1], 0.7, atol=1e-12)


def test_functional_zero_field_and_analytic_value():
    prob, _ = _heat_problem(5)
    assert prob.functional(prob.zero_field()) == 0.0
    # kappa=1, T=x on the unit square, no source: 0.5 * int |grad T|^2 = 0.5
    grid = prob.grid
    x, _ = _node_coordinates(grid)
    t_field = x[None]
    kappa = MaterialField("isotropic-scalar", np.ones((4, grid.ny, grid.nx)))
    g = eval_at_gauss(t_field, prob.trial)
    val = system_functional(g, kappa, None, prob.jac, prob.rule)
    assert abs(val - 0.5) < 1e-12


def test_functional_matches_dense_quadratic():
    for kind, nn in (("heat", 5), ("darcy", 5), ("elasticity-a", 4)):
        rng = np.random.default_rng(5)
        grid = default_grid(kind, nn)
        if kind == "heat":
            par = ParameterField("source-Q", "gauss-points", rng.standard_normal((4, grid.ny, grid.nx)))
        elif kind == "darcy":
            par = ParameterField(
                "conductivity-k", "gauss-points", np.where(rng.standard_normal((4, grid.ny, grid.nx)) > 0, 12.0, 3.0)
            )
        else:
            par = ParameterField("fiber-angle", "gauss-points", rng.uniform(-1.2, 1.2, (4, grid.ny, grid.nx)))
        prob = problem_factory(kind, grid, par)
        dense = assemble_dense(prob)
        a = rng.standard_normal(prob.node_shape)
        expected = 0.5 * a.ravel() @ dense.K @ a.ravel() - a.ravel() @ dense.P
        assert abs(prob.functional(a) - expected) <= 1e-12 * max(abs(expected), 1.0)


def test_functional_rejects_nonsymmetric_conductivity():
    grid = default_grid("heat", 4)
    rule = gauss_legendre_rule(2)
    data = np.zeros((rule.n_points, 2, 2, grid.ny, grid.nx))
    data[:, 0, 0] = 2.0
    data[:, 1, 1] = 2.0
    data[:, 0, 1] = 0.5  # asymmetric
    mat = MaterialField("anisotropic-2x2", data)
    trial = build_trial_kernel(grid, q1_shape_table(rule))
    jac = jacobian_field(grid, rule)
    rng = np.random.default_rng(0)
    g = eval_at_gauss(rng.standard_normal((1,) + grid.node_shape), trial)
    from volfem.errors import UnsupportedPhysicsError

    with pytest.raises(UnsupportedPhysicsError):
        system_functional(g, mat, None, jac, rule)


def test_residual_linearity_and_zero_field():
    prob, rng = _heat_problem(6)
    a = rng.standard_normal(prob.node_shape)
    b = rng.standard_normal(prob.node_shape)
    alpha, beta = 0.37, -1.21
    lhs = prob.residual(alpha * a + beta * b)
    rhs = alpha * prob.residual(a) + beta * prob.residual(b) + (1 - alpha - beta) * prob.residual(prob.zero_field())
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * np.max(np.abs(rhs)))
    np.testing.assert_allclose(prob.residual(prob.zero_field()), -prob.load_vec)


def test_residual_zero_at_exact_solution():
    prob, _ = _heat_problem(6)
    sol = dense_solve(assemble_dense(prob))
    r = prob.mask.apply(prob.residual(sol))
    scale = np.max(np.abs(prob.load_vec))
    assert np.max(np.abs(r)) < 1e-9 * scale


def test_residual_matches_dense_all_physics():
    rng = np.random.default_rng(123)
    for kind, nn in (("heat", 6), ("darcy", 6), ("elasticity-a", 6), ("elasticity-b", 6)):
        grid = default_grid(kind, nn)
        if kind == "heat":
            par = ParameterField("source-Q", "gauss-points", rng.standard_normal((4, grid.ny, grid.nx)))
        elif kind == "darcy":
            par = ParameterField(
                "conductivity-k", "gauss-points", np.where(rng.standard_normal((4, grid.ny, grid.nx)) > 0, 12.0, 3.0)
            )
        else:
            par = ParameterField("fiber-angle", "gauss-points", rng.uniform(-1.3, 1.3, (4, grid.ny, grid.nx)))
        prob = problem_factory(kind, grid, par)
        dense = assemble_dense(prob)
        a = rng.standard_normal(prob.node_shape)
        r = prob.residual(a).ravel()
        ref = dense.K @ a.ravel() - dense.P
        assert np.max(np.abs(r - ref)) <= 1e-10 * max(np.max(np.abs(ref)), 1e-300)


def test_matvec_adjoint_symmetry():
    prob, rng = _heat_problem(7)
    p = prob.mask.apply(rng.standard_normal(prob.node_shape))
    q = prob.mask.apply(rng.standard_normal(prob.node_shape))
    lhs = field_dot(q, prob.matvec(p))
    rhs = field_dot(p, prob.matvec(q))
    assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)
    assert np.all(prob.matvec(prob.zero_field()) == 0.0)


def test_quadratic_form_consistency_and_positivity():
    prob, rng = _heat_problem(6)
    for _ in range(20):
        p = prob.mask.apply(rng.standard_normal(prob.node_shape))
        qf = prob.quadratic_form(p)
        assert abs(qf - field_dot(p, prob.matvec(p))) <= 1e-12 * max(abs(qf), 1.0)
        if np.any(p != 0.0):
            assert qf > 0.0
    assert prob.quadratic_form(prob.zero_field()) == 0.0


def test_ritz_galerkin_finite_difference_consistency():
    # central difference of the energy functional w.r.t. free entries equals
    # the assembled residual entries
    prob, rng = _heat_problem(4)
    a = rng.standard_normal(prob.node_shape)
    r = prob.residual(a)
    free = np.argwhere(prob.mask.mask[0] == 1.0)
    for iy, ix in free[:: max(1, len(free) // 8)]:
        h = 1e-6 * max(1.0, abs(a[0, iy, ix]))
        ap = a.copy()
        ap[0, iy, ix] += h
        am = a.copy()
        am[0, iy, ix] -= h
        fd = (prob.functional(ap) - prob.functional(am)) / (2 * h)
        assert abs(fd - r[0, iy, ix]) <= 1e-6 * max(abs(fd), 1.0)


def test_batched_residual_matches_per_sample():
    rng = np.random.default_rng(9)
    grid = default_grid("darcy", 6)
    kappa = np.where(rng.standard_normal((3, 4, grid.ny, grid.nx)) > 0, 12.0, 3.0)
    par = ParameterField("conductivity-k", "gauss-points", kappa)
    prob = problem_factory("darcy", grid, par)
    a = rng.standard_normal((3, 1) + grid.node_shape)
    batched = prob.residual(a)
    for i in range(3):
        single = problem_factory("darcy", grid, ParameterField("conductivity-k", "gauss-points", kappa[i]))
        np.testing.assert_allclose(batched[i], single.residual(a[i]), atol=1e-13)


def test_apply_mask_and_shift():
    grid = default_grid("heat", 4)
    mask = mask_from_edges(grid, 1, ("left",), shift_value=2.5)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1,) + grid.node_shape)
    masked = apply_mask(x, mask)
    assert np.all(masked[:, :, 0] == 0.0)
    np.testing.assert_array_equal(apply_mask(masked, mask), masked)  # idempotent
    shifted = apply_shift_bc(x, mask)
    assert np.all(shifted[:, :, 0] == 2.5)
    np.testing.assert_array_equal(apply_shift_bc(np.zeros_like(x), mask), mask.shift)
    all_free = MaskSpec(np.concatenate([np.ones((1, 4, 3)), np.zeros((1, 4, 1))], axis=-1))
    y = rng.standard_normal((1, 4, 4))
    np.testing.assert_array_equal(apply_mask(y, all_free)[:, :, :3], y[:, :, :3])


def test_mask_spec_validation():
    with pytest.raises(ValueError):
        MaskSpec(np.full((1, 3, 3), 0.5))
    with pytest.raises(ValueError):
        MaskSpec(np.ones((1, 3, 3)))  # no constrained DOF
    m = np.ones((1, 3, 3))
    m[0, 0, 0] = 0.0
    shift = np.ones((1, 3, 3))  # nonzero on free DOFs
    with pytest.raises(ValueError):
        MaskSpec(m, shift)


def test_load_vector_zero_and_interior_entry():
    grid = default_grid("heat", 5)
    q = ParameterField("source-Q", "gauss-points", np.zeros((4, grid.ny, grid.nx)))
    prob = problem_factory("heat", grid, q)
    assert np.all(prob.load_vec == 0.0)
    # unit source: interior node entry equals hx*hy (integral of the hat
    # function over its four adjacent elements)
    ones = ParameterField("source-Q", "gauss-points", np.ones((4, grid.ny, grid.nx)))
    prob1 = problem_factory("heat", grid, ones)
    np.testing.assert_allclose(prob1.load_vec[0, 2, 2], grid.hx * grid.hy, atol=1e-14)


def test_load_vector_matches_dense_with_tractions():
    rng = np.random.default_rng(2)
    grid = default_grid("elasticity-a", 5)
    par = ParameterField("fiber-angle", "gauss-points", rng.uniform(-1.0, 1.0, (4, grid.ny, grid.nx)))
    prob = problem_factory("elasticity-a", grid, par)
    dense = assemble_dense(prob)
    assert np.max(np.abs(prob.load_vec.ravel() - dense.P)) <= 1e-12 * max(np.max(np.abs(dense.P)), 1.0)


def test_load_vector_warns_on_constrained_edge():
    grid = default_grid("heat", 4)
    mask = mask_from_edges(grid, 1, ("left", "right", "bottom", "top"))
    rule = gauss_legendre_rule(2)
    from volfem.grid import build_test_kernel, q1_shape_table

    kv = build_test_kernel(grid, q1_shape_table(rule), "scalar-diffusion")
    jac = jacobian_field(grid, rule)
    load = LoadSpec(volumetric=None, neumann=(("right", (1.0,)),))
    with pytest.warns(UserWarning):
        load_vector(load, kv, jac, rule, mask=mask)


def test_per_node_sampled_traction():
    # traction varying linearly along the edge, against a hand-integrated value
    grid = StructuredGrid(nx=2, ny=2, hx=1.0, hy=1.0)
    rule = gauss_legendre_rule(2)
    from volfem.grid import build_test_kernel, q1_shape_table

    kv = build_test_kernel(grid, q1_shape_table(rule), "scalar-diffusion")
    jac = jacobian_field(grid, rule)
    samples = np.array([[0.0, 1.0, 2.0]])  # per edge node
    p = load_vector(LoadSpec(neumann=(("right", samples),)), kv, jac, rule)
    # node 1 (middle): int over both segments of N_mid * linear data
    # segment 0: data from 0 to 1, contribution 1/3 + 1/6 ... computed exactly:
    # int_0^1 t*(t) dt = 1/3 (local coord), int_0^1 (1-t)*(1+t) dt = 2/3
    expected_mid = 1.0 / 3.0 + 2.0 / 3.0
    assert abs(p[0, 1, 2] - expected_mid) < 1e-14
    assert np.all(p[:, :, :2] == 0.0)


def test_finite_outputs_after_public_operations():
    prob, rng = _heat_problem(6)
    a = rng.standard_normal(prob.node_shape)
    for arr in (prob.residual(a), prob.matvec(a), prob.load_vec):
        assert np.all(np.isfinite(arr))
