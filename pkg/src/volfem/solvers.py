"""Iterative updates and solves for the masked SPD systems, plus the
dense-assembly oracle used to verify the matrix-free path on small meshes.

The n-step steepest-descent and conjugate-gradient updates consume a masked
residual and return the solution increment only; they are restarted from a
fresh residual on every call, so no conjugacy history survives between calls.
Quadratic forms come from energy quadrature, operator products from the
test-kernel accumulation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import NonSPDError, SolverBreakdownError
from .fields import MaskSpec, field_dot, field_norm, relative_l2
from .problems import Problem

__all__ = [
    "IterationReport",
    "DenseSystem",
    "sd_steps",
    "cg_steps",
    "cg_solve",
    "restarted_cg_baseline",
    "assemble_dense",
    "dense_solve",
]


@dataclass
class IterationReport:
    """Per-step scalars of one iterative run. Entries are floats for a single
    sample and arrays of shape (B,) for batched runs."""

    alphas: list = field(default_factory=list)
    betas: list = field(default_factory=list)
    residual_norms: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def n_steps(self) -> int:
        return len(self.alphas)

    def rows(self):
        """CSV rows (step, alpha, beta, residual_norm); batched entries are
        reduced to their sample mean."""
        out = []
        for i in range(self.n_steps):
            beta = float(np.mean(self.betas[i])) if i < len(self.betas) else ""
            out.append((i + 1, float(np.mean(self.alphas[i])), beta, float(np.mean(self.residual_norms[i]))))
        return out


def _bcast(x):
    return np.asarray(x)[..., None, None, None]


def _check_curvature(pkp, rr, what: str):
    """Raise on nonpositive curvature for any sample that still has work to do."""
    bad = np.asarray((pkp <= 0.0) & (rr > 0.0))
    if np.any(bad):
        idx = int(np.argmax(bad)) if bad.ndim else None
        raise SolverBreakdownError(f"nonpositive curvature {what} in iterative update", sample_index=idx)


def sd_steps(R: np.ndarray, a: np.ndarray, problem: Problem, n: int, mask: MaskSpec):
    """n steepest-descent updates from the masked residual R of a.

    Returns (delta_a, report). The caller's a is not modified; the local copy
    advances so later steps see the refreshed residual. A zero residual
    yields a zero increment.
    """
    if n < 1:
        raise ValueError("step count must be >= 1")
    t0 = time.perf_counter()
    report = IterationReport()
    r = -R
    da = np.zeros_like(R)
    a_loc = a.copy()
    for _ in range(n):
        rr = field_dot(r, r)
        rkr = problem.quadratic_form(r)
        _check_curvature(rkr, rr, "r'Kr")
        alpha = np.where(rr > 0.0, rr / np.where(rkr > 0.0, rkr, 1.0), 0.0)
        da = da + _bcast(alpha) * r
        if n > 1:
            a_loc = a_loc + _bcast(alpha) * r
            r = -mask.apply(problem.residual(a_loc))
        report.alphas.append(alpha)
        report.residual_norms.append(field_norm(r))
    report.wall_time = time.perf_counter() - t0
    return da, report


def cg_steps(R: np.ndarray, a: np.ndarray, problem: Problem, n: int, mask: MaskSpec):
    """n conjugate-gradient updates from the masked residual R of a.

    Identical to sd_steps for n = 1. Returns (delta_a, report).
    """
    if n < 1:
        raise ValueError("step count must be >= 1")
    t0 = time.perf_counter()
    report = IterationReport()
    r = -R
    p = r.copy()
    da = np.zeros_like(R)
    for _ in range(n):
        rr = field_dot(r, r)
        pkp = problem.quadratic_form(p)
        _check_curvature(pkp, rr, "p'Kp")
        alpha = np.where(rr > 0.0, rr / np.where(pkp > 0.0, pkp, 1.0), 0.0)
        da = da + _bcast(alpha) * p
        if n > 1:
            kp = mask.apply(problem.matvec(p))
            r_new = r - _bcast(alpha) * kp
            rr_new = field_dot(r_new, r_new)
            beta = np.where(rr > 0.0, rr_new / np.where(rr > 0.0, rr, 1.0), 0.0)
            r = r_new
            p = r + _bcast(beta) * p
            report.betas.append(beta)
        report.alphas.append(alpha)
        report.residual_norms.append(field_norm(r))
    report.wall_time = time.perf_counter() - t0
    return da, report


def cg_solve(problem: Problem, a0: np.ndarray | None = None, tol: float = 1e-10, maxiter: int | None = None):
    """Full conjugate-gradient solve of the masked system.

    Stops when ||masked residual|| <= tol * ||masked effective load|| or at
    maxiter (reported, not raised). Constrained DOFs carry the boundary
    values throughout. Supports batched problems; each sample freezes once
    converged.
    """
    mask = problem.mask
    if a0 is None:
        a0 = problem.zero_field(batch=None if problem.load_vec.ndim == 3 else problem.load_vec.shape[0])
    a = mask.impose(a0)
    b = mask.apply(problem.load_vec - problem.matvec(mask.shift))
    b_norm = field_norm(b)
    b_norm = np.where(b_norm > 0.0, b_norm, 1.0)
    if maxiter is None:
        maxiter = 10 * mask.n_free
    t0 = time.perf_counter()
    report = IterationReport()
    r = -mask.apply(problem.residual(a))
    p = r.copy()
    rr = field_dot(r, r)
    for _ in range(maxiter):
        active = np.sqrt(rr) > tol * b_norm
        if not np.any(active):
            break
        pkp = problem.quadratic_form(p)
        _check_curvature(pkp, np.where(active, rr, 0.0), "p'Kp")
        alpha = np.where(active, rr / np.where(pkp > 0.0, pkp, 1.0), 0.0)
        a = a + _bcast(alpha) * p
        kp = mask.apply(problem.matvec(p))
        r = r - _bcast(alpha) * kp
        rr_new = field_dot(r, r)
        beta = np.where(active, rr_new / np.where(rr > 0.0, rr, 1.0), 0.0)
        p = r + _bcast(beta) * p
        rr = rr_new
        report.alphas.append(alpha)
        report.betas.append(beta)
        report.residual_norms.append(np.sqrt(rr))
    report.wall_time = time.perf_counter() - t0
    return a, report


def restarted_cg_baseline(
    problem: Problem,
    refs: np.ndarray,
    n_steps: int,
    epochs: int,
    init: str = "random-normal",
    shift_labels: np.ndarray | None = None,
    seed: int = 0,
):
    """Classical restarted CG over a sample set, measured against reference
    solutions.

    Every epoch advances each sample by ``n_steps`` CG updates computed from
    a fresh residual (history discarded, matching the restart-update usage in
    training). ``init`` is 'random-normal' or 'average-of-shift-labels'.
    Returns a dict with per-epoch mean/worst relative L2 error and mean
    residual norm.
    """
    mask = problem.mask
    if refs.ndim != 4:
        raise ValueError("refs must be batched (n, c, ny+1, nx+1)")
    n_samples = refs.shape[0]
    if init == "average-of-shift-labels":
        if shift_labels is None:
            raise ValueError("init 'average-of-shift-labels' needs shift_labels")
        a = np.broadcast_to(shift_labels.mean(axis=0), refs.shape).copy()
    elif init == "random-normal":
        rng = np.random.default_rng(seed)
        a = rng.standard_normal(refs.shape)
    else:
        raise ValueError(f"unknown init {init!r}")
    a = mask.impose(a)
    mean_err, worst_err, mean_res = [], [], []
    for _ in range(epochs):
        r = mask.apply(problem.residual(a))
        da, _ = cg_steps(r, a, problem, n_steps, mask)
        a = a + da
        err = relative_l2(a, refs, mask)
        mean_err.append(float(np.mean(err)))
        worst_err.append(float(np.max(err)))
        mean_res.append(float(np.mean(field_norm(mask.apply(problem.residual(a))))))
    return {"mean_rel_l2": mean_err, "worst_rel_l2": worst_err, "mean_residual_norm": mean_res, "solution": a}


@dataclass
class DenseSystem:
    """Explicitly assembled stiffness and load with the free-DOF index set.

    The DOF ordering is the flattened node-field layout: channel major, then
    node rows over y, then columns over x.
    """

    K: np.ndarray
    P: np.ndarray
    free_index: np.ndarray
    shift: np.ndarray
    node_shape: tuple


def _local_phys_grads(problem: Problem):
    """Physical shape gradients per Gauss slot, shapes (n_g, 4) each."""
    trial = problem.trial
    gx = trial.corner_matrix("gradx")
    gy = trial.corner_matrix("grady")
    return gx, gy


def assemble_dense(problem: Problem, max_dof: int = 20_000) -> DenseSystem:
    """Element-loop assembly of K and P for small meshes.

    Uses the same quadrature tables as the matrix-free path but independent
    gather/scatter logic. Batched problems are rejected.
    """
    if problem.material.data.ndim > (3 if problem.material.kind == "isotropic-scalar" else 5):
        raise ValueError("assemble_dense expects an unbatched problem")
    if problem.load.volumetric is not None and problem.load.volumetric.ndim != 4:
        raise ValueError("assemble_dense expects an unbatched volumetric load")
    grid = problem.grid
    c = problem.n_channels
    ny1, nx1 = grid.node_shape
    n_nodes = ny1 * nx1
    n_dof = c * n_nodes
    if n_dof > max_dof:
        raise ValueError(f"dense assembly limited to {max_dof} DOFs, requested {n_dof}")
    rule = problem.rule
    table_vals = problem.trial.corner_matrix("value")  # (n_g, 4)
    gx, gy = _local_phys_grads(problem)
    detj = problem.jac.detj  # (n_g, ny, nx)
    weights = rule.weights
    K = np.zeros((n_dof, n_dof))
    P = np.zeros(n_dof)
    vol = problem.load.volumetric  # (c, n_g, ny, nx) or None
    for ey in range(grid.ny):
        for ex in range(grid.nx):
            nodes = np.array([(ey + dy) * nx1 + (ex + dx) for dy in (0, 1) for dx in (0, 1)])
            if c == 1:
                dofs = nodes
                ke = np.zeros((4, 4))
                for l in range(rule.n_points):
                    w = weights[l] * detj[l, ey, ex]
                    if problem.material.kind == "isotropic-scalar":
                        kap = problem.material.data[l, ey, ex]
                        ke += w * kap * (np.outer(gx[l], gx[l]) + np.outer(gy[l], gy[l]))
                    else:
                        kmat = problem.material.data[l, :, :, ey, ex]
                        g = np.stack([gx[l], gy[l]])  # (2, 4)
                        ke += w * (g.T @ kmat @ g)
                    if vol is not None:
                        P[dofs] += w * table_vals[l] * vol[0, l, ey, ex]
            else:
                dofs = np.concatenate([nodes, n_nodes + nodes])
                ke = np.zeros((8, 8))
                for l in range(rule.n_points):
                    w = weights[l] * detj[l, ey, ex]
                    b = np.zeros((3, 8))
                    b[0, :4] = gx[l]
                    b[2, :4] = gy[l]
                    b[1, 4:] = gy[l]
                    b[2, 4:] = gx[l]
                    d = problem.thickness * problem.material.data[l, :, :, ey, ex]
                    ke += w * (b.T @ d @ b)
                    if vol is not None:
                        for ch in range(2):
                            P[dofs[ch * 4 : ch * 4 + 4]] += w * table_vals[l] * vol[ch, l, ey, ex]
            K[np.ix_(dofs, dofs)] += ke
    _add_dense_edge_loads(problem, P)
    free_index = np.flatnonzero(problem.mask.mask.ravel() == 1.0)
    return DenseSystem(K=K, P=P, free_index=free_index, shift=problem.mask.shift.ravel().copy(),
                       node_shape=(c, ny1, nx1))


def _add_dense_edge_loads(problem: Problem, P: np.ndarray):
    """2-point Gauss line integration of edge tractions, accumulated per DOF."""
    grid = problem.grid
    c = problem.n_channels
    ny1, nx1 = grid.node_shape
    n_nodes = ny1 * nx1
    tq = np.array([-1.0, 1.0]) / np.sqrt(3.0)
    for edge, value in problem.load.neumann:
        if edge in ("left", "right"):
            ixc = 0 if edge == "left" else nx1 - 1
            node_ids = np.arange(ny1) * nx1 + ixc
            h = grid.hy
        else:
            iyc = 0 if edge == "bottom" else ny1 - 1
            node_ids = iyc * nx1 + np.arange(nx1)
            h = grid.hx
        value = np.asarray(value, dtype=float)
        if value.ndim == 1:
            samples = np.broadcast_to(value[:, None], (c, node_ids.size))
        else:
            samples = value
        for seg in range(node_ids.size - 1):
            for t in tq:
                n0, n1 = 0.5 * (1 - t), 0.5 * (1 + t)
                for ch in range(c):
                    val = n0 * samples[ch, seg] + n1 * samples[ch, seg + 1]
                    P[ch * n_nodes + node_ids[seg]] += 0.5 * h * n0 * val
                    P[ch * n_nodes + node_ids[seg + 1]] += 0.5 * h * n1 * val


def dense_solve(sys: DenseSystem) -> np.ndarray:
    """Direct Cholesky solve on the free DOFs; constrained DOFs keep their
    boundary values."""
    a = sys.shift.copy()
    f = sys.free_index
    rhs = (sys.P - sys.K @ sys.shift)[f]
    try:
        cho = scipy.linalg.cho_factor(sys.K[np.ix_(f, f)])
    except np.linalg.LinAlgError as exc:
        raise NonSPDError("free-DOF stiffness block is not positive definite") from exc
    a[f] = scipy.linalg.cho_solve(cho, rhs)
    return a.reshape(sys.node_shape)
