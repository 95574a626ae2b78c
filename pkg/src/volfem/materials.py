"""Constitutive data and maps: scalar diffusion coefficients and rotated
plane-stress stiffness for fiber-reinforced plates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedPhysicsError
from .fields import GaussField

__all__ = [
    "MaterialField",
    "LaminaProperties",
    "ParameterField",
    "LoadSpec",
    "plane_stress_stiffness",
    "fiber_angle_to_material",
    "diffusion_flux_map",
    "stress_map",
    "strain_from_grad",
]

MATERIAL_KINDS = ("isotropic-scalar", "anisotropic-2x2", "plane-stress-3x3")


@dataclass(frozen=True)
class MaterialField:
    """Constitutive entries at every Gauss point.

    Data layout per kind (a leading batch axis is allowed everywhere):

    * isotropic-scalar:   ``(..., n_g, ny, nx)`` conductivity values,
    * anisotropic-2x2:    ``(..., n_g, 2, 2, ny, nx)``,
    * plane-stress-3x3:   ``(..., n_g, 3, 3, ny, nx)`` stiffness in x-y axes.
    """

    kind: str
    data: np.ndarray

    def __post_init__(self):
        if self.kind not in MATERIAL_KINDS:
            raise ValueError(f"unknown material kind {self.kind!r}")

    def matrix_axes(self) -> tuple[int, int] | None:
        if self.kind == "isotropic-scalar":
            return None
        return (-4, -3)

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        if self.kind == "isotropic-scalar":
            return True
        m = self.data
        return bool(np.max(np.abs(m - np.swapaxes(m, -4, -3))) <= tol * max(1.0, np.max(np.abs(m))))

    def check_spd(self, tol: float = 1e-12):
        """Raise if any Gauss-point matrix is non-symmetric or not PD."""
        if not self.is_symmetric(tol):
            raise ValueError("material matrices must be symmetric at every Gauss point")
        if self.kind == "isotropic-scalar":
            if np.any(self.data <= 0.0):
                raise ValueError("scalar conductivity must be positive everywhere")
            return
        m = np.moveaxis(self.data, (-4, -3), (-2, -1))
        # leading principal minors > 0
        minor = m[..., 0, 0]
        if np.any(minor <= 0.0):
            raise ValueError("material not positive definite (first minor)")
        for k in range(2, m.shape[-1] + 1):
            det = np.linalg.det(m[..., :k, :k])
            if np.any(det <= 0.0):
                raise ValueError(f"material not positive definite (minor {k})")


@dataclass(frozen=True)
class LaminaProperties:
    """Engineering constants of a unidirectional lamina (moduli in MPa,
    thickness in the grid's length unit)."""

    e1: float = 181000.0
    e2: float = 10270.0
    g12: float = 7170.0
    nu12: float = 0.28
    thickness: float = 0.125

    def __post_init__(self):
        if min(self.e1, self.e2, self.g12, self.thickness) <= 0.0:
            raise ValueError("moduli and thickness must be positive")
        if 1.0 - self.nu12**2 * self.e2 / self.e1 <= 0.0:
            raise ValueError("compliance matrix is singular for these constants")


@dataclass(frozen=True)
class ParameterField:
    """Sampled PDE parameter: heat source, conductivity, or fiber angle.

    ``sampling='gauss-points'`` stores one channel per Gauss slot at element
    resolution ``(..., n_g, ny, nx)``; ``sampling='nodes'`` stores component
    channels at node resolution ``(..., c, ny+1, nx+1)``.
    """

    kind: str  # 'source-Q' | 'conductivity-k' | 'fiber-angle'
    sampling: str  # 'gauss-points' | 'nodes'
    data: np.ndarray

    def __post_init__(self):
        if self.kind not in ("source-Q", "conductivity-k", "fiber-angle"):
            raise ValueError(f"unknown parameter kind {self.kind!r}")
        if self.sampling not in ("gauss-points", "nodes"):
            raise ValueError(f"unknown sampling {self.sampling!r}")
        if self.kind == "fiber-angle":
            lo, hi = self.data.min(), self.data.max()
            if lo < -np.pi / 2 - 1e-12 or hi > np.pi / 2 + 1e-12:
                raise ValueError(f"fiber angles must lie in [-pi/2, pi/2], got [{lo}, {hi}]")


@dataclass(frozen=True)
class LoadSpec:
    """Volumetric source plus Neumann edge data.

    ``volumetric`` is a Gauss-sampled array ``(..., c, n_g, ny, nx)`` (c = 1
    for scalar physics) or None. ``neumann`` is a list of
    ``(edge, value)`` pairs where edge is one of left/right/bottom/top and
    value is a length-c sequence of constant traction/flux components or an
    array of per-edge-node samples with shape ``(c, n_edge_nodes)``.
    """

    volumetric: np.ndarray | None = None
    neumann: tuple = ()


def plane_stress_stiffness(p: LaminaProperties) -> np.ndarray:
    """Stiffness matrix in principal material axes, the inverse of the
    orthotropic plane-stress compliance."""
    s = np.array(
        [
            [1.0 / p.e1, -p.nu12 / p.e1, 0.0],
            [-p.nu12 / p.e1, 1.0 / p.e2, 0.0],
            [0.0, 0.0, 1.0 / p.g12],
        ]
    )
    try:
        c = np.linalg.inv(s)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded in __post_init__
        raise ValueError("singular compliance matrix") from exc
    return 0.5 * (c + c.T)


def rotation_matrix(theta):
    """Stress transformation matrix T(theta), shape (..., 3, 3)."""
    theta = np.asarray(theta, dtype=float)
    c = np.cos(theta)
    s = np.sin(theta)
    row0 = np.stack([c * c, s * s, 2.0 * s * c], axis=-1)
    row1 = np.stack([s * s, c * c, -2.0 * s * c], axis=-1)
    row2 = np.stack([-s * c, s * c, c * c - s * s], axis=-1)
    return np.stack([row0, row1, row2], axis=-2)


def fiber_angle_to_material(theta: ParameterField, p: LaminaProperties) -> MaterialField:
    """Rotate the lamina stiffness into x-y axes per Gauss point.

    C_xy = T^-1 C12 T^-T with the standard stress transformation T.
    """
    if theta.kind != "fiber-angle" or theta.sampling != "gauss-points":
        raise ValueError("expected Gauss-sampled fiber angles")
    c12 = plane_stress_stiffness(p)
    t = rotation_matrix(theta.data)  # (..., n_g, ny, nx, 3, 3)
    tinv = np.linalg.inv(t)
    cxy = tinv @ c12 @ np.swapaxes(tinv, -2, -1)
    cxy = 0.5 * (cxy + np.swapaxes(cxy, -2, -1))
    # (..., n_g, ny, nx, 3, 3) -> (..., n_g, 3, 3, ny, nx)
    cxy = np.moveaxis(cxy, (-2, -1), (-4, -3))
    return MaterialField(kind="plane-stress-3x3", data=np.ascontiguousarray(cxy))


def diffusion_flux_map(g: GaussField, mat: MaterialField) -> np.ndarray:
    """Flux kappa * grad(T) at every Gauss point, shape (..., n_g, 2, ny, nx)."""
    if g.n_channels != 1:
        raise UnsupportedPhysicsError("diffusion flux needs a single-channel field")
    grad = g.grad[..., 0, :, :, :, :]  # (..., n_g, 2, ny, nx)
    if mat.kind == "isotropic-scalar":
        return mat.data[..., None, :, :] * grad
    if mat.kind == "anisotropic-2x2":
        return np.einsum("...gijyx,...gjyx->...giyx", mat.data, grad)
    raise UnsupportedPhysicsError(f"material kind {mat.kind!r} is not a diffusion coefficient")


def strain_from_grad(g: GaussField) -> np.ndarray:
    """Engineering strain [du/dx, dv/dy, du/dy + dv/dx], shape (..., n_g, 3, ny, nx)."""
    if g.n_channels != 2:
        raise UnsupportedPhysicsError("strain needs a two-channel displacement field")
    du = g.grad[..., 0, :, :, :, :]
    dv = g.grad[..., 1, :, :, :, :]
    return np.stack([du[..., 0, :, :], dv[..., 1, :, :], du[..., 1, :, :] + dv[..., 0, :, :]], axis=-3)


def stress_map(g: GaussField, mat: MaterialField, thickness: float) -> np.ndarray:
    """Thickness-scaled plane stress t * C_xy * strain, (..., n_g, 3, ny, nx)."""
    if mat.kind != "plane-stress-3x3":
        raise UnsupportedPhysicsError(f"material kind {mat.kind!r} is not a plane-stress stiffness")
    eps = strain_from_grad(g)
    return thickness * np.einsum("...gijyx,...gjyx->...giyx", mat.data, eps)
