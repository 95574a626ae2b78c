"""Matrix-free evaluation of the discrete energy functional, residuals, and
operator-vector products on structured Q1 meshes.

Nothing here assembles a stiffness matrix. Node-to-Gauss evaluation slides
the 2x2 trial filters over the node grid; Gauss-to-node accumulation slides
the 2x2 test filters over the ghost-padded element grid. The two are exact
adjoints of each other, which is what makes the induced operator symmetric.
"""

from __future__ import annotations

import warnings

import numpy as np

from .errors import UnsupportedPhysicsError
from .fields import GaussField, MaskSpec, field_dot
from .grid import GaussRule, JacobianField, StructuredGrid, TestKernel, TrialKernel
from .materials import LoadSpec, MaterialField, diffusion_flux_map, strain_from_grad, stress_map

__all__ = [
    "eval_at_gauss",
    "accumulate_to_nodes",
    "apply_stiffness",
    "residual_galerkin",
    "matvec",
    "quadratic_form",
    "system_functional",
    "load_vector",
]

EDGE_RULE_POINTS = np.array([-1.0, 1.0]) / np.sqrt(3.0)
EDGE_RULE_WEIGHTS = np.array([1.0, 1.0])


def gather_corners(a: np.ndarray) -> np.ndarray:
    """Stack the four corner views of every element: (..., Ny, Nx) -> (..., 4, ny, nx)."""
    ny = a.shape[-2] - 1
    nx = a.shape[-1] - 1
    return np.stack(
        [a[..., dy : dy + ny, dx : dx + nx] for dy in (0, 1) for dx in (0, 1)],
        axis=-3,
    )


def scatter_corners(g: np.ndarray) -> np.ndarray:
    """Adjoint of gather_corners: (..., 4, ny, nx) -> (..., ny+1, nx+1)."""
    ny, nx = g.shape[-2], g.shape[-1]
    out = np.zeros(g.shape[:-3] + (ny + 1, nx + 1))
    k = 0
    for dy in (0, 1):
        for dx in (0, 1):
            out[..., dy : dy + ny, dx : dx + nx] += g[..., k, :, :]
            k += 1
    return out


def eval_at_gauss(a: np.ndarray, k: TrialKernel) -> GaussField:
    """Values and physical gradients of a node field at every Gauss point.

    ``a`` has shape (..., c, ny+1, nx+1); the result carries
    values (..., c, n_g, ny, nx) and grad (..., c, n_g, 2, ny, nx).
    """
    grid = k.grid
    if a.shape[-2:] != grid.node_shape:
        raise ValueError(f"node field shape {a.shape} does not match grid nodes {grid.node_shape}")
    corners = gather_corners(a)  # (..., c, 4, ny, nx)
    vals = np.einsum("gk,...kyx->...gyx", k.corner_matrix("value"), corners)
    gx = np.einsum("gk,...kyx->...gyx", k.corner_matrix("gradx"), corners)
    gy = np.einsum("gk,...kyx->...gyx", k.corner_matrix("grady"), corners)
    return GaussField(values=vals, grad=np.stack([gx, gy], axis=-3))


def _correlate_test(w: np.ndarray, filters: np.ndarray) -> np.ndarray:
    """Slide 2x2 test filters over the ghost-padded element grid.

    ``w`` has shape (..., n_g, ny, nx); ``filters`` is (n_g, 2, 2). Output is
    (..., ny+1, nx+1). The ghost ring represents the layer of zero elements
    wrapped around the domain so boundary nodes see only their real
    neighbors.
    """
    ny, nx = w.shape[-2], w.shape[-1]
    wp = np.zeros(w.shape[:-2] + (ny + 2, nx + 2))
    wp[..., 1:-1, 1:-1] = w
    out = np.zeros(w.shape[:-3] + (ny + 1, nx + 1))
    for dy in (0, 1):
        for dx in (0, 1):
            out += np.einsum(
                "...gyx,g->...yx",
                wp[..., :, dy : dy + ny + 1, dx : dx + nx + 1],
                filters[:, dy, dx],
            )
    return out


def _physics_pair(a, mat: MaterialField, kt: TrialKernel, thickness: float):
    """Gauss evaluation plus constitutive product.

    Returns (g, pair, fphys) where ``pair`` is the gradient-like quantity
    (flux partner) and ``fphys`` the constitutive image: (grad T, kappa grad T)
    for scalar diffusion, (strain, thickness-scaled stress) for plane stress.
    """
    g = eval_at_gauss(a, kt)
    if mat.kind in ("isotropic-scalar", "anisotropic-2x2"):
        pair = g.grad[..., 0, :, :, :, :]
        fphys = diffusion_flux_map(g, mat)
    elif mat.kind == "plane-stress-3x3":
        pair = strain_from_grad(g)
        fphys = stress_map(g, mat, thickness)
    else:  # pragma: no cover
        raise UnsupportedPhysicsError(f"unknown material kind {mat.kind!r}")
    return g, pair, fphys


def apply_stiffness(
    a: np.ndarray,
    mat: MaterialField,
    kt: TrialKernel,
    kv: TestKernel,
    jac: JacobianField,
    rule: GaussRule,
    thickness: float = 1.0,
) -> np.ndarray:
    """K a without assembling K: trial evaluation, constitutive scaling,
    quadrature weighting, then test-kernel accumulation."""
    _, _, fphys = _physics_pair(a, mat, kt, thickness)
    w = jac.scaled_weights(rule)  # (n_g, ny, nx)
    f = fphys * w[:, None, :, :]
    if kv.kind == "scalar-diffusion":
        out = _correlate_test(f[..., :, 0, :, :], kv.gradx) + _correlate_test(f[..., :, 1, :, :], kv.grady)
        return out[..., None, :, :]
    if kv.kind == "plane-stress":
        sxx, syy, sxy = (f[..., :, i, :, :] for i in range(3))
        r0 = _correlate_test(sxx, kv.gradx) + _correlate_test(sxy, kv.grady)
        r1 = _correlate_test(syy, kv.grady) + _correlate_test(sxy, kv.gradx)
        return np.stack([r0, r1], axis=-3)
    raise UnsupportedPhysicsError(f"unknown test-kernel kind {kv.kind!r}")


def residual_galerkin(
    a: np.ndarray,
    mat: MaterialField,
    load,
    kt: TrialKernel,
    kv: TestKernel,
    jac: JacobianField,
    rule: GaussRule,
    thickness: float = 1.0,
) -> np.ndarray:
    """R = K a - P. ``load`` is a LoadSpec, a precomputed load-vector array,
    or None for a zero load."""
    r = apply_stiffness(a, mat, kt, kv, jac, rule, thickness)
    if load is None:
        return r
    if isinstance(load, LoadSpec):
        return r - load_vector(load, kv, jac, rule)
    return r - load


def matvec(
    p: np.ndarray,
    mat: MaterialField,
    kt: TrialKernel,
    kv: TestKernel,
    jac: JacobianField,
    rule: GaussRule,
    thickness: float = 1.0,
) -> np.ndarray:
    """K p, the zero-load residual of p."""
    return apply_stiffness(p, mat, kt, kv, jac, rule, thickness)


def quadratic_form(
    p: np.ndarray,
    mat: MaterialField,
    kt: TrialKernel,
    jac: JacobianField,
    rule: GaussRule,
    thickness: float = 1.0,
):
    """p'Kp evaluated by Gauss quadrature of the energy density.

    Needs no test kernel and no matrix-vector product; per sample if batched.
    """
    _, pair, fphys = _physics_pair(p, mat, kt, thickness)
    w = jac.scaled_weights(rule)
    return np.sum(pair * fphys * w[:, None, :, :], axis=(-4, -3, -2, -1))


def system_functional(
    g: GaussField,
    mat: MaterialField,
    source,
    jac: JacobianField,
    rule: GaussRule,
    surface=0.0,
    thickness: float = 1.0,
):
    """Total potential 1/2 a'Ka - a'P by quadrature of Gauss-point quantities.

    ``g`` is the Gauss evaluation of the node field, ``source`` the
    Gauss-sampled volumetric load (..., c, n_g, ny, nx) or None, and
    ``surface`` the already-integrated Neumann work a'P_edge (scalar, or per
    sample when batched).
    """
    if mat.kind in ("isotropic-scalar", "anisotropic-2x2"):
        if mat.kind == "anisotropic-2x2" and not mat.is_symmetric():
            raise UnsupportedPhysicsError("functional undefined for nonsymmetric conductivity")
        pair = g.grad[..., 0, :, :, :, :]
        fphys = diffusion_flux_map(g, mat)
    else:
        pair = strain_from_grad(g)
        fphys = stress_map(g, mat, thickness)
    w = jac.scaled_weights(rule)
    energy = 0.5 * np.sum(pair * fphys * w[:, None, :, :], axis=(-4, -3, -2, -1))
    work = 0.0
    if source is not None:
        work = np.sum(g.values * source * w[None, :, :, :], axis=(-4, -3, -2, -1))
    return energy - work - surface


def _edge_nodes(grid: StructuredGrid, edge: str):
    """Node index arrays (iy, ix) along an edge, ordered by arc length."""
    ny1, nx1 = grid.n_nodes_y, grid.n_nodes_x
    if edge == "left":
        return np.arange(ny1), np.zeros(ny1, dtype=int), grid.hy
    if edge == "right":
        return np.arange(ny1), np.full(ny1, nx1 - 1, dtype=int), grid.hy
    if edge == "bottom":
        return np.zeros(nx1, dtype=int), np.arange(nx1), grid.hx
    if edge == "top":
        return np.full(nx1, ny1 - 1, dtype=int), np.arange(nx1), grid.hx
    raise ValueError(f"unknown edge {edge!r}")


def _edge_load(grid: StructuredGrid, edge: str, value, n_channels: int) -> np.ndarray:
    """Consistent nodal load of a traction/flux along one boundary edge.

    Each segment is integrated with the 2-point 1-D Gauss rule, exact for the
    linear trace of Q1 times a linear data variation.
    """
    iy, ix, h = _edge_nodes(grid, edge)
    n_nodes = iy.size
    value = np.asarray(value, dtype=float)
    if value.ndim == 1:
        if value.size != n_channels:
            raise ValueError(f"edge value needs {n_channels} components, got {value.size}")
        samples = np.broadcast_to(value[:, None], (n_channels, n_nodes))
    elif value.shape == (n_channels, n_nodes):
        samples = value
    else:
        raise ValueError(f"edge value shape {value.shape} != ({n_channels}, {n_nodes})")
    out = np.zeros((n_channels, grid.n_nodes_y, grid.n_nodes_x))
    n0 = 0.5 * (1.0 - EDGE_RULE_POINTS)
    n1 = 0.5 * (1.0 + EDGE_RULE_POINTS)
    for seg in range(n_nodes - 1):
        vals = samples[:, seg][:, None] * n0 + samples[:, seg + 1][:, None] * n1  # (c, 2)
        w0 = 0.5 * h * np.sum(EDGE_RULE_WEIGHTS * n0 * vals, axis=-1)
        w1 = 0.5 * h * np.sum(EDGE_RULE_WEIGHTS * n1 * vals, axis=-1)
        out[:, iy[seg], ix[seg]] += w0
        out[:, iy[seg + 1], ix[seg + 1]] += w1
    return out


def load_vector(
    load: LoadSpec,
    kv: TestKernel,
    jac: JacobianField,
    rule: GaussRule,
    mask: MaskSpec | None = None,
) -> np.ndarray:
    """Consistent load vector P from a volumetric source and edge tractions.

    The volumetric part is a test-kernel accumulation of the weighted source;
    edge tractions use 1-D Gauss quadrature on the boundary trace. A traction
    on a fully constrained edge is integrated anyway but warned about.
    """
    grid = kv.grid
    n_channels = 1 if kv.kind == "scalar-diffusion" else 2
    batch_shape = ()
    if load.volumetric is not None and load.volumetric.ndim > 4:
        batch_shape = load.volumetric.shape[:-4]
    out = np.zeros(batch_shape + (n_channels, grid.n_nodes_y, grid.n_nodes_x))
    if load.volumetric is not None:
        w = jac.scaled_weights(rule)
        f = load.volumetric * w[None, :, :, :]
        vol = np.stack([_correlate_test(f[..., c, :, :, :], kv.value) for c in range(n_channels)], axis=-3)
        out = out + vol
    for edge, value in load.neumann:
        if mask is not None:
            iy, ix, _ = _edge_nodes(grid, edge)
            if np.all(mask.mask[:, iy, ix] == 0.0):
                warnings.warn(f"traction on fully constrained edge {edge!r} has no effect on free DOFs")
        out = out + _edge_load(grid, edge, value, n_channels)
    return out


def functional_of_field(
    a: np.ndarray,
    mat: MaterialField,
    source,
    kt: TrialKernel,
    jac: JacobianField,
    rule: GaussRule,
    edge_load: np.ndarray | None = None,
    thickness: float = 1.0,
):
    """Convenience wrapper: Gauss-evaluate ``a`` and form the total potential,
    including the Neumann work through a precomputed edge load vector."""
    g = eval_at_gauss(a, kt)
    surface = 0.0
    if edge_load is not None:
        surface = field_dot(a, edge_load)
    return system_functional(g, mat, source, jac, rule, surface=surface, thickness=thickness)
