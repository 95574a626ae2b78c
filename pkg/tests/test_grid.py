"""Quadrature rules, shape tables, kernels, and Jacobians."""

import numpy as np
import pytest

from volfem.grid import (
    StructuredGrid,
    build_test_kernel,
    build_trial_kernel,
    gauss_legendre_rule,
    jacobian_field,
    q1_shape_grads,
    q1_shape_table,
    q1_shape_values,
)


def test_rule_order1_midpoint():
    rule = gauss_legendre_rule(1)
    assert rule.n_points == 1
    np.testing.assert_allclose(rule.points, [[0.0, 0.0]])
    np.testing.assert_allclose(rule.weights, [4.0])


def test_rule_order2_closed_form():
    rule = gauss_legendre_rule(2)
    c = 1.0 / np.sqrt(3.0)
    assert rule.n_points == 4
    # slots run row-major over (s, r)
    np.testing.assert_allclose(rule.points, [[-c, -c], [c, -c], [-c, c], [c, c]], atol=1e-15)
    np.testing.assert_allclose(rule.weights, np.ones(4), atol=1e-15)


def test_rule_weights_sum_to_reference_measure():
    for order in range(1, 11):
        rule = gauss_legendre_rule(order)
        assert abs(rule.weights.sum() - 4.0) < 1e-14
        assert np.all(np.abs(rule.points) < 1.0)


def test_rule_order3_integrates_quartics():
    rule = gauss_legendre_rule(3)
    r, s = rule.points[:, 0], rule.points[:, 1]
    # analytic: int r^4 over the square = (2/5)*2; both-axis sum doubles it
    assert abs(np.sum(rule.weights * r**4) - 4.0 / 5.0) < 1e-14
    assert abs(np.sum(rule.weights * (r**4 + s**4)) - 8.0 / 5.0) < 1e-14


def test_rule_exactness_degree():
    # order n is exact through per-axis degree 2n-1 and fails at degree 2n
    for order in (1, 2, 3):
        rule = gauss_legendre_rule(order)
        r = rule.points[:, 0]
        even = 2 * order - 2
        assert abs(np.sum(rule.weights * r**even) - 2.0 / (even + 1) * 2.0) < 1e-13
        assert abs(np.sum(rule.weights * r ** (2 * order - 1))) < 1e-13
        assert abs(np.sum(rule.weights * r ** (2 * order)) - 2.0 / (2 * order + 1) * 2.0) > 1e-4


def test_rule_rejects_bad_order():
    with pytest.raises(ValueError):
        gauss_legendre_rule(0)
    with pytest.raises(ValueError):
        gauss_legendre_rule(11)


def test_shape_values_center_and_kronecker():
    np.testing.assert_allclose(q1_shape_values(0.0, 0.0), [0.25, 0.25, 0.25, 0.25])
    corners = [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)]
    for i, (r, s) in enumerate(corners):
        np.testing.assert_allclose(q1_shape_values(r, s), np.eye(4)[i], atol=1e-15)


def test_shape_value_at_interior_gauss_point():
    c = 1.0 / np.sqrt(3.0)
    # corner (1, 1) has flat index 3
    val = q1_shape_values(c, c)[3]
    assert abs(val - 0.25 * (1.0 + c) ** 2) < 1e-15
    assert abs(val - 0.62200846793) < 1e-11


def test_shape_table_partition_of_unity_and_gradient_sum():
    for order in (1, 2, 3):
        table = q1_shape_table(gauss_legendre_rule(order))
        np.testing.assert_allclose(table.values.sum(axis=1), 1.0, atol=1e-14)
        np.testing.assert_allclose(table.local_grads.sum(axis=1), 0.0, atol=1e-14)


def test_shape_grads_match_finite_differences():
    rng = np.random.default_rng(3)
    h = 1e-7
    for r, s in rng.uniform(-0.9, 0.9, size=(5, 2)):
        g = q1_shape_grads(r, s)
        fd_r = (q1_shape_values(r + h, s) - q1_shape_values(r - h, s)) / (2 * h)
        fd_s = (q1_shape_values(r, s + h) - q1_shape_values(r, s - h)) / (2 * h)
        np.testing.assert_allclose(g[:, 0], fd_r, atol=1e-7)
        np.testing.assert_allclose(g[:, 1], fd_s, atol=1e-7)


def test_grid_validation():
    with pytest.raises(ValueError):
        StructuredGrid(nx=0, ny=2, hx=1.0, hy=1.0)
    with pytest.raises(ValueError):
        StructuredGrid(nx=2, ny=2, hx=-1.0, hy=1.0)
    g = StructuredGrid(nx=3, ny=2, hx=0.5, hy=1.0)
    assert g.node_shape == (3, 4)
    assert g.n_nodes == 12


def test_gauss_coords_layout():
    g = StructuredGrid(nx=2, ny=1, hx=2.0, hy=1.0, origin=(1.0, -1.0))
    rule = gauss_legendre_rule(1)
    gx, gy = g.gauss_coords(rule)
    np.testing.assert_allclose(gx[0, 0], [2.0, 4.0])
    np.testing.assert_allclose(gy[0, 0], [-0.5, -0.5])


def test_trial_kernel_filter_sums():
    g = StructuredGrid(nx=4, ny=4, hx=0.3, hy=0.7)
    k = build_trial_kernel(g, q1_shape_table(gauss_legendre_rule(2)))
    np.testing.assert_allclose(k.value.sum(axis=(1, 2)), 1.0, atol=1e-13)
    np.testing.assert_allclose(k.gradx.sum(axis=(1, 2)), 0.0, atol=1e-13)
    np.testing.assert_allclose(k.grady.sum(axis=(1, 2)), 0.0, atol=1e-13)


def test_trial_kernel_scaling_by_element_size():
    g = StructuredGrid(nx=2, ny=2, hx=2.0, hy=0.5)
    table = q1_shape_table(gauss_legendre_rule(2))
    k = build_trial_kernel(g, table)
    n_g = table.values.shape[0]
    np.testing.assert_allclose(k.gradx, (2.0 / g.hx) * table.local_grads[:, :, 0].reshape(n_g, 2, 2))
    np.testing.assert_allclose(k.grady, (2.0 / g.hy) * table.local_grads[:, :, 1].reshape(n_g, 2, 2))


def test_test_kernel_duality_with_trial():
    g = StructuredGrid(nx=3, ny=3, hx=1.0, hy=1.0)
    table = q1_shape_table(gauss_legendre_rule(2))
    trial = build_trial_kernel(g, table)
    test = build_test_kernel(g, table, "scalar-diffusion")
    # entry at element offset (dy, dx) equals the trial entry of the node's
    # corner inside that element, i.e. the footprint reversed
    np.testing.assert_allclose(test.value, trial.value[:, ::-1, ::-1])
    np.testing.assert_allclose(test.gradx, trial.gradx[:, ::-1, ::-1])
    np.testing.assert_allclose(test.grady, trial.grady[:, ::-1, ::-1])


def test_test_kernel_rejects_unknown_physics():
    g = StructuredGrid(nx=2, ny=2, hx=1.0, hy=1.0)
    with pytest.raises(ValueError):
        build_test_kernel(g, q1_shape_table(gauss_legendre_rule(2)), "advection")


def test_jacobian_uniform_values():
    rule = gauss_legendre_rule(2)
    j1 = jacobian_field(StructuredGrid(nx=2, ny=2, hx=1.0, hy=1.0), rule)
    np.testing.assert_allclose(j1.detj, 0.25, atol=1e-15)
    j2 = jacobian_field(StructuredGrid(nx=2, ny=2, hx=2.0, hy=0.5), rule)
    np.testing.assert_allclose(j2.detj, 0.25, atol=1e-15)
    # 100 mm plate with 33x33 nodes
    j3 = jacobian_field(StructuredGrid(nx=32, ny=32, hx=100.0 / 32, hy=100.0 / 32), rule)
    np.testing.assert_allclose(j3.detj, 2.44140625, atol=1e-12)
    assert np.all(j3.detj > 0)
