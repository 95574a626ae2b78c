"""Random input-field generators: Gaussian random fields by spectral
synthesis on a periodic extension, two-phase conductivity fields, and fiber
angle fields (linear 1-D variation and clamped cubic B-spline surfaces).

The GRF is synthesized on a fine lattice aligned with the mesh nodes
(circulant embedding of the squared-exponential covariance, cropped to the
domain); node samples are exact lattice points and Gauss-point samples are
bilinear interpolations of the same realization, so every consumer sees one
consistent field.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft
import scipy.interpolate
import scipy.ndimage

from .grid import StructuredGrid, gauss_legendre_rule
from .materials import ParameterField

__all__ = [
    "GrfConfig",
    "sample_grf",
    "sample_grf_pair",
    "sample_darcy_conductivity",
    "sample_fiber_linear",
    "sample_fiber_bspline",
    "bspline_surface",
]

LATTICE_REFINE = 4


@dataclass(frozen=True)
class GrfConfig:
    """Squared-exponential GRF: correlation length as a fraction of the
    domain extent, pointwise variance, mean, and the sampling seed."""

    length_scale: float = 0.25
    variance: float = 1.0
    mean: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.length_scale <= 1.0:
            raise ValueError("length_scale must be in (0, 1]")
        if self.variance < 0.0:
            raise ValueError("variance must be nonnegative")


def _grf_lattice(grid: StructuredGrid, cfg: GrfConfig, rng: np.random.Generator):
    """One realization on the refined node lattice, shape
    (refine*ny + 1, refine*nx + 1)."""
    lat_ny = LATTICE_REFINE * grid.ny
    lat_nx = LATTICE_REFINE * grid.nx
    dy = grid.hy / LATTICE_REFINE
    dx = grid.hx / LATTICE_REFINE
    ell = cfg.length_scale * max(grid.width, grid.height)
    my = scipy.fft.next_fast_len(2 * (lat_ny + 1))
    mx = scipy.fft.next_fast_len(2 * (lat_nx + 1))
    iy = np.arange(my)
    ix = np.arange(mx)
    wy = dy * np.minimum(iy, my - iy)
    wx = dx * np.minimum(ix, mx - ix)
    cov = cfg.variance * np.exp(-(wy[:, None] ** 2 + wx[None, :] ** 2) / (2.0 * ell**2))
    spectrum = np.clip(np.fft.fft2(cov).real, 0.0, None)
    noise = rng.standard_normal((my, mx)) + 1j * rng.standard_normal((my, mx))
    x = np.fft.ifft2(np.sqrt(spectrum) * np.fft.fft2(noise)).real
    return cfg.mean + x[: lat_ny + 1, : lat_nx + 1]


def _gauss_lattice_coords(grid: StructuredGrid, order: int):
    """Gauss-point positions in lattice index units, two (n_g, ny, nx) arrays."""
    rule = gauss_legendre_rule(order)
    gx, gy = grid.gauss_coords(rule)
    return (gy - grid.origin[1]) / grid.hy * LATTICE_REFINE, (gx - grid.origin[0]) / grid.hx * LATTICE_REFINE


def sample_grf_pair(grid: StructuredGrid, cfg: GrfConfig, order: int = 2, kind: str = "source-Q",
                    rng: np.random.Generator | None = None):
    """One GRF realization sampled at Gauss points and at the nodes.

    Returns (gauss_field, node_field) as ParameterFields of the given kind.
    """
    rng = rng or np.random.default_rng(cfg.seed)
    lattice = _grf_lattice(grid, cfg, rng)
    node_vals = lattice[:: LATTICE_REFINE, :: LATTICE_REFINE]
    ly, lx = _gauss_lattice_coords(grid, order)
    gauss_vals = scipy.ndimage.map_coordinates(
        lattice, np.stack([ly.ravel(), lx.ravel()]), order=1, mode="nearest"
    ).reshape(ly.shape)
    return (
        ParameterField(kind=kind, sampling="gauss-points", data=gauss_vals),
        ParameterField(kind=kind, sampling="nodes", data=node_vals[None, :, :].copy()),
    )


def sample_grf(grid: StructuredGrid, cfg: GrfConfig, order: int = 2, kind: str = "source-Q") -> ParameterField:
    """Gauss-sampled GRF realization, deterministic for a fixed seed."""
    gauss, _ = sample_grf_pair(grid, cfg, order=order, kind=kind)
    return gauss


def sample_darcy_conductivity(grid: StructuredGrid, cfg: GrfConfig, hi: float = 12.0, lo: float = 3.0,
                              order: int = 2, rng: np.random.Generator | None = None):
    """Two-phase conductivity: hi where the underlying GRF is >= 0, else lo.

    Returns (gauss_field, node_field); both threshold the same realization.
    """
    if hi <= 0.0 or lo <= 0.0:
        raise ValueError("conductivity phases must be positive")
    gauss, node = sample_grf_pair(grid, cfg, order=order, kind="source-Q", rng=rng)
    g = np.where(gauss.data >= 0.0, hi, lo)
    n = np.where(node.data >= 0.0, hi, lo)
    return (
        ParameterField(kind="conductivity-k", sampling="gauss-points", data=g),
        ParameterField(kind="conductivity-k", sampling="nodes", data=n),
    )


def sample_fiber_linear(t0: float, t1: float, grid: StructuredGrid, order: int = 2) -> ParameterField:
    """Fiber angle varying linearly with distance from the vertical midline:
    theta(x) = t0 + (t1 - t0) * |x - x_c| / (W/2)."""
    for t in (t0, t1):
        if not -np.pi / 2 <= t <= np.pi / 2:
            raise ValueError(f"fiber angle {t} outside [-pi/2, pi/2]")
    rule = gauss_legendre_rule(order)
    gx, _ = grid.gauss_coords(rule)
    xc = grid.origin[0] + 0.5 * grid.width
    theta = t0 + (t1 - t0) * np.abs(gx - xc) / (0.5 * grid.width)
    return ParameterField(kind="fiber-angle", sampling="gauss-points", data=theta)


def clamped_knots(n_control: int, extent: float) -> np.ndarray:
    """Clamped cubic knot vector for n_control basis functions on [0, extent]."""
    if n_control < 4:
        raise ValueError("cubic B-spline surface needs at least 4 control points per axis")
    interior = np.linspace(0.0, extent, n_control - 2)[1:-1]
    return np.concatenate([np.zeros(4), interior, np.full(4, extent)])


def _design_matrix(x: np.ndarray, knots: np.ndarray) -> np.ndarray:
    x = np.clip(x, knots[0], knots[-1] * (1.0 - 1e-15))
    return scipy.interpolate.BSpline.design_matrix(x, knots, 3).toarray()


def bspline_surface(control: np.ndarray, xs: np.ndarray, ys: np.ndarray, extent_x: float, extent_y: float):
    """Evaluate the clamped-cubic tensor-product surface at the outer product
    of xs and ys; control[i, j] pairs x-basis i with y-basis j. Returns an
    array of shape (len(ys), len(xs))."""
    control = np.asarray(control, dtype=float)
    bx = _design_matrix(np.asarray(xs, dtype=float).ravel(), clamped_knots(control.shape[0], extent_x))
    by = _design_matrix(np.asarray(ys, dtype=float).ravel(), clamped_knots(control.shape[1], extent_y))
    return by @ control.T @ bx.T


def sample_fiber_bspline(control: np.ndarray, grid: StructuredGrid, order: int = 2) -> ParameterField:
    """Fiber angles from a clamped cubic B-spline surface over the plate,
    evaluated at the Gauss-point coordinates."""
    control = np.asarray(control, dtype=float)
    if control.ndim != 2 or min(control.shape) < 4:
        raise ValueError("control grid must be at least 4x4")
    if np.any(np.abs(control) > np.pi / 2):
        raise ValueError("control angles must lie in [-pi/2, pi/2]")
    rule = gauss_legendre_rule(order)
    gx, gy = grid.gauss_coords(rule)
    n_g, ny, nx = gx.shape
    bx = _design_matrix(gx.ravel() - grid.origin[0], clamped_knots(control.shape[0], grid.width))
    by = _design_matrix(gy.ravel() - grid.origin[1], clamped_knots(control.shape[1], grid.height))
    theta = np.einsum("pi,ij,pj->p", bx, control, by).reshape(n_g, ny, nx)
    return ParameterField(kind="fiber-angle", sampling="gauss-points", data=theta)
