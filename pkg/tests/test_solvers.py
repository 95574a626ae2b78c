"""Iterative updates, the full CG solve, the restarted baseline, and the
dense-assembly oracle."""

import numpy as np
import pytest

from volfem.datasets import build_dataset, label_with_cg
from volfem.errors import NonSPDError, SolverBreakdownError
from volfem.fields import field_norm
from volfem.materials import ParameterField
from volfem.problems import ProblemSet, default_grid, problem_factory
from volfem.solvers import (
    assemble_dense,
    cg_solve,
    cg_steps,
    dense_solve,
    restarted_cg_baseline,
    sd_steps,
)


def _heat(n_nodes, seed=0):
    rng = np.random.default_rng(seed)
    grid = default_grid("heat", n_nodes)
    q = ParameterField("source-Q", "gauss-points", rng.standard_normal((4, grid.ny, grid.nx)))
    return problem_factory("heat", grid, q), rng


def test_single_element_laplacian_stiffness():
    # hand-integrated bilinear Laplacian stiffness on the unit square:
    # diagonal 2/3, edge neighbors -1/6, diagonal neighbors -1/3
    grid = default_grid("heat", 2)
    q = ParameterField("source-Q", "gauss-points", np.zeros((4, 1, 1)))
    prob = problem_factory("heat", grid, q)
    k = assemble_dense(prob).K
    np.testing.assert_allclose(np.diag(k), 2.0 / 3.0, atol=1e-14)
    edge_pairs = [(0, 1), (0, 2), (1, 3), (2, 3)]
    diag_pairs = [(0, 3), (1, 2)]
    for i, j in edge_pairs:
        assert abs(k[i, j] + 1.0 / 6.0) < 1e-14
    for i, j in diag_pairs:
        assert abs(k[i, j] + 1.0 / 3.0) < 1e-14


def test_dense_row_sums_and_spd():
    prob, _ = _heat(6, seed=2)
    sys_d = assemble_dense(prob)
    # constants lie in the kernel of the pure-diffusion operator
    np.testing.assert_allclose(sys_d.K.sum(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(sys_d.K, sys_d.K.T, atol=1e-12 * np.max(np.abs(sys_d.K)))
    f = sys_d.free_index
    np.linalg.cholesky(sys_d.K[np.ix_(f, f)])  # raises if not PD


def test_dense_solve_zero_load_and_defect():
    grid = default_grid("heat", 5)
    q0 = ParameterField("source-Q", "gauss-points", np.zeros((4, grid.ny, grid.nx)))
    prob0 = problem_factory("heat", grid, q0)
    np.testing.assert_array_equal(dense_solve(assemble_dense(prob0)), 0.0)
    prob, _ = _heat(6, seed=5)
    sys_d = assemble_dense(prob)
    a = dense_solve(sys_d)
    defect = sys_d.K @ a.ravel() - sys_d.P
    assert np.linalg.norm(defect[sys_d.free_index]) < 1e-10 * np.linalg.norm(sys_d.P)


def test_dense_size_guard():
    prob, _ = _heat(6)
    with pytest.raises(ValueError):
        assemble_dense(prob, max_dof=10)


def test_manufactured_solution_convergence_rate():
    # -Laplace T = 2 pi^2 sin(pi x) sin(pi y) with exact T = sin sin;
    # L2 error should shrink about 4x per mesh halving
    errors = []
    for n_el in (8, 16):
        grid = default_grid("heat", n_el + 1)
        from volfem.grid import gauss_legendre_rule

        rule = gauss_legendre_rule(2)
        gx, gy = grid.gauss_coords(rule)
        q = ParameterField("source-Q", "gauss-points", 2 * np.pi**2 * np.sin(np.pi * gx) * np.sin(np.pi * gy))
        prob = problem_factory("heat", grid, q)
        sol = dense_solve(assemble_dense(prob))
        from volfem.matrix_free import eval_at_gauss

        g = eval_at_gauss(sol, prob.trial)
        exact = np.sin(np.pi * gx) * np.sin(np.pi * gy)
        w = prob.jac.scaled_weights(prob.rule)
        errors.append(np.sqrt(np.sum(w * (g.values[0] - exact) ** 2)))
    rate = np.log2(errors[0] / errors[1])
    assert 1.8 < rate < 2.2


def test_sd_zero_residual_returns_zero():
    # zero load, zero field: the residual is exactly zero and stays so
    grid = default_grid("heat", 5)
    q = ParameterField("source-Q", "gauss-points", np.zeros((4, grid.ny, grid.nx)))
    prob = problem_factory("heat", grid, q)
    z = prob.zero_field()
    da, report = sd_steps(z, z, prob, 3, prob.mask)
    np.testing.assert_array_equal(da, 0.0)
    da_cg, _ = cg_steps(z, z, prob, 3, prob.mask)
    np.testing.assert_array_equal(da_cg, 0.0)
    assert report.n_steps == 3


def test_sd_single_step_matches_dense_arithmetic():
    prob, rng = _heat(5, seed=1)
    a = prob.mask.apply(rng.standard_normal(prob.node_shape))
    r = prob.mask.apply(prob.residual(a))
    da, report = sd_steps(r, a, prob, 1, prob.mask)
    sys_d = assemble_dense(prob)
    rf = r.ravel()
    alpha = (rf @ rf) / (rf @ sys_d.K @ rf)
    np.testing.assert_allclose(da.ravel(), -alpha * rf, atol=1e-13 * np.max(np.abs(alpha * rf)))
    assert abs(report.alphas[0] - alpha) < 1e-13 * abs(alpha)


def test_sd_step_decreases_functional():
    prob, rng = _heat(6, seed=3)
    a = prob.mask.impose(rng.standard_normal(prob.node_shape))
    r = prob.mask.apply(prob.residual(a))
    da, _ = sd_steps(r, a, prob, 1, prob.mask)
    assert prob.functional(a + da) <= prob.functional(a)


def test_sd_caller_array_not_mutated():
    prob, rng = _heat(5, seed=9)
    a = prob.mask.apply(rng.standard_normal(prob.node_shape))
    a_copy = a.copy()
    r = prob.mask.apply(prob.residual(a))
    sd_steps(r, a, prob, 4, prob.mask)
    np.testing.assert_array_equal(a, a_copy)


def test_cg1_equals_sd1():
    prob, rng = _heat(6, seed=4)
    a = prob.mask.apply(rng.standard_normal(prob.node_shape))
    r = prob.mask.apply(prob.residual(a))
    da_sd, _ = sd_steps(r, a, prob, 1, prob.mask)
    da_cg, _ = cg_steps(r, a, prob, 1, prob.mask)
    np.testing.assert_allclose(da_sd, da_cg, atol=1e-14)


def test_cg_finite_termination():
    # on an m-free-DOF SPD system CG converges within m steps
    prob, rng = _heat(5, seed=6)  # 3x3 free interior -> m = 9
    m = int(prob.mask.n_free)
    assert m <= 20
    a0 = prob.mask.apply(rng.standard_normal(prob.node_shape))
    r = prob.mask.apply(prob.residual(a0))
    da, _ = cg_steps(r, a0, prob, m, prob.mask)
    final = prob.mask.apply(prob.residual(a0 + da))
    assert float(field_norm(final)) < 1e-10 * float(field_norm(prob.load_vec))


def test_cg_energy_norm_monotone():
    prob, rng = _heat(7, seed=7)
    sys_d = assemble_dense(prob)
    star = dense_solve(sys_d)
    a = prob.mask.impose(rng.standard_normal(prob.node_shape))
    errs = []
    for n in range(1, 8):
        r = prob.mask.apply(prob.residual(a))
        da, _ = cg_steps(r, a, prob, 1, prob.mask)
        a = a + da
        e = (a - star).ravel()
        errs.append(np.sqrt(e @ sys_d.K @ e))
    assert all(errs[i + 1] <= errs[i] * (1 + 1e-12) for i in range(len(errs) - 1))


def test_cg_update_stays_in_krylov_span():
    prob, rng = _heat(5, seed=8)
    a = prob.mask.apply(rng.standard_normal(prob.node_shape))
    r0 = prob.mask.apply(prob.residual(a))
    sys_d = assemble_dense(prob)
    f = sys_d.free_index
    kf = sys_d.K[np.ix_(f, f)]
    for n in (1, 2, 3):
        da, _ = cg_steps(r0, a, prob, n, prob.mask)
        basis = []
        v = -r0.ravel()[f]
        for _ in range(n):
            basis.append(v)
            v = kf @ v
        basis = np.array(basis).T
        target = da.ravel()[f]
        proj, *_ = np.linalg.lstsq(basis, target, rcond=None)
        assert np.linalg.norm(basis @ proj - target) < 1e-8 * max(np.linalg.norm(target), 1e-30)


def test_updates_reduce_masked_residual_random_trials():
    rng = np.random.default_rng(31)
    prob, _ = _heat(6, seed=31)
    for trial in range(100):
        a = prob.mask.impose(rng.standard_normal(prob.node_shape))
        r = prob.mask.apply(prob.residual(a))
        step_fn = cg_steps if trial % 2 else sd_steps
        da, _ = step_fn(r, a, prob, 1 + trial % 3, prob.mask)
        r_new = prob.mask.apply(prob.residual(a + da))
        assert float(field_norm(r_new)) < float(field_norm(r))
        # constrained DOFs are never touched
        np.testing.assert_array_equal(da * (1.0 - prob.mask.mask), 0.0)


def test_breakdown_on_indefinite_material():
    grid = default_grid("darcy", 5)
    kappa = ParameterField("conductivity-k", "gauss-points", np.full((4, grid.ny, grid.nx), -1.0))
    prob = problem_factory("darcy", grid, kappa)
    rng = np.random.default_rng(0)
    a = prob.mask.apply(rng.standard_normal(prob.node_shape))
    r = prob.mask.apply(prob.residual(a))
    with pytest.raises(SolverBreakdownError):
        sd_steps(r, a, prob, 1, prob.mask)
    with pytest.raises(SolverBreakdownError):
        cg_steps(r, a, prob, 1, prob.mask)


def test_cg_solve_exact_start_needs_no_iterations():
    prob, _ = _heat(6, seed=10)
    star = dense_solve(assemble_dense(prob))
    a, report = cg_solve(prob, a0=star, tol=1e-9)
    assert report.n_steps == 0
    np.testing.assert_allclose(a, star, atol=1e-14)


def test_cg_solve_matches_dense_8x8():
    prob, _ = _heat(9, seed=11)
    star = dense_solve(assemble_dense(prob))
    a, _ = cg_solve(prob, tol=1e-10)
    num = float(field_norm(a - star))
    den = float(field_norm(star))
    assert num <= 1e-8 * den


def test_cg_solve_poisson_center_node():
    grid = default_grid("heat", 9)
    q = ParameterField("source-Q", "gauss-points", np.ones((4, grid.ny, grid.nx)))
    prob = problem_factory("heat", grid, q)
    a, _ = cg_solve(prob, tol=1e-10)
    star = dense_solve(assemble_dense(prob))
    center = a[0, 4, 4]
    assert abs(center - star[0, 4, 4]) < 1e-8 * abs(star[0, 4, 4])


def test_cg_solve_maxiter_reports_not_raises():
    prob, _ = _heat(9, seed=12)
    a, report = cg_solve(prob, tol=1e-12, maxiter=3)
    assert report.n_steps == 3
    assert np.all(np.isfinite(a))


def test_cg_solve_batched_matches_single():
    rng = np.random.default_rng(13)
    grid = default_grid("darcy", 7)
    kappa = np.where(rng.standard_normal((4, 4, grid.ny, grid.nx)) > 0, 12.0, 3.0)
    pset = ProblemSet("darcy", grid, kappa)
    batched, _ = cg_solve(pset.subset(np.arange(4)), tol=1e-11)
    for i in range(4):
        single, _ = cg_solve(pset.single(i), tol=1e-11)
        np.testing.assert_allclose(batched[i], single, atol=1e-9 * np.max(np.abs(single)))


def test_restarted_baseline_full_span_converges_in_one_epoch():
    prob, _ = _heat(4, seed=14)
    refs = dense_solve(assemble_dense(prob))[None]
    result = restarted_cg_baseline(prob, refs, n_steps=int(prob.mask.n_free), epochs=1, seed=0)
    assert result["mean_rel_l2"][-1] < 1e-8


def test_restarted_baseline_energy_error_monotone():
    prob, _ = _heat(6, seed=15)
    sys_d = assemble_dense(prob)
    star = dense_solve(sys_d)
    rng = np.random.default_rng(1)
    a = prob.mask.impose(rng.standard_normal((1,) + prob.node_shape))
    prev = np.inf
    for _ in range(12):
        r = prob.mask.apply(prob.residual(a))
        da, _ = cg_steps(r, a, prob, 2, prob.mask)
        a = a + da
        e = (a[0] - star).ravel()
        cur = np.sqrt(e @ sys_d.K @ e)
        assert cur <= prev * (1 + 1e-12)
        prev = cur


def test_restarted_baseline_init_modes_nearly_parallel():
    # random-normal and shift-average starts converge at comparable rates on
    # a 33x33 mesh; compare log-error slopes over epochs 5..50
    ds = build_dataset("heat", 33, 8, 0, seed=3)
    pset = ProblemSet(ds.kind, ds.grid, ds.train_params)
    refs = label_with_cg(pset)
    prob = pset.subset(np.arange(8))
    epochs = 50
    run_r = restarted_cg_baseline(prob, refs, 2, epochs, init="random-normal", seed=1)
    run_a = restarted_cg_baseline(prob, refs, 2, epochs, init="average-of-shift-labels",
                                  shift_labels=ds.shift_labels)
    ep = np.arange(1, epochs + 1)
    slope_r = np.polyfit(ep[4:], np.log(run_r["mean_rel_l2"][4:]), 1)[0]
    slope_a = np.polyfit(ep[4:], np.log(run_a["mean_rel_l2"][4:]), 1)[0]
    assert slope_r < 0 and slope_a < 0
    assert 0.8 <= slope_r / slope_a <= 1.2


def test_dense_solve_non_spd_reports():
    grid = default_grid("darcy", 4)
    kappa = ParameterField("conductivity-k", "gauss-points", np.full((4, grid.ny, grid.nx), -1.0))
    prob = problem_factory("darcy", grid, kappa)
    with pytest.raises(NonSPDError):
        dense_solve(assemble_dense(prob))
