"""Structured quadrilateral meshes, Gauss rules, bilinear shape tables, and
the stencil kernels that evaluate fields at Gauss points or accumulate
test-function contributions back to nodes.

Array conventions used throughout the package:

* node fields have shape ``(channels, ny + 1, nx + 1)``; axis -2 runs along
  y (rows), axis -1 along x (columns); a leading batch axis is allowed,
* element/Gauss fields have shape ``(..., n_g, ny, nx)`` with the Gauss slot
  index running row-major over (s, r): slot = i_s * order + i_r,
* the 2x2 corner footprint of an element is indexed ``(dy, dx)`` and the
  flat corner index is ``k = 2 * dy + dx``, so corner 0 is the node at the
  element's low-x/low-y corner.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "StructuredGrid",
    "GaussRule",
    "ShapeTable",
    "TrialKernel",
    "TestKernel",
    "JacobianField",
    "gauss_legendre_rule",
    "q1_shape_table",
    "build_trial_kernel",
    "build_test_kernel",
    "jacobian_field",
]

# Corner signs (r_k, s_k) for the flat corner index k = 2*dy + dx.
CORNER_SIGNS = np.array([[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0], [1.0, 1.0]])

TEST_KERNEL_KINDS = ("scalar-diffusion", "plane-stress")


@dataclass(frozen=True)
class StructuredGrid:
    """Uniform rectilinear mesh of nx-by-ny quadrilateral elements.

    ``hx``/``hy`` are physical element edge lengths and ``origin`` is the
    physical position of node (iy=0, ix=0).
    """

    nx: int
    ny: int
    hx: float
    hy: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError(f"element counts must be >= 1, got {self.nx}x{self.ny}")
        if self.hx <= 0.0 or self.hy <= 0.0:
            raise ValueError(f"element sizes must be positive, got hx={self.hx}, hy={self.hy}")

    @property
    def n_nodes_x(self) -> int:
        return self.nx + 1

    @property
    def n_nodes_y(self) -> int:
        return self.ny + 1

    @property
    def n_nodes(self) -> int:
        return self.n_nodes_x * self.n_nodes_y

    @property
    def node_shape(self) -> tuple[int, int]:
        return (self.n_nodes_y, self.n_nodes_x)

    @property
    def element_shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def width(self) -> float:
        return self.nx * self.hx

    @property
    def height(self) -> float:
        return self.ny * self.hy

    def node_coords(self):
        """Physical node coordinates as two arrays x, y of shape (ny+1, nx+1)."""
        x = self.origin[0] + self.hx * np.arange(self.n_nodes_x)
        y = self.origin[1] + self.hy * np.arange(self.n_nodes_y)
        return np.broadcast_to(x, self.node_shape).copy(), np.broadcast_to(y[:, None], self.node_shape).copy()

    def gauss_coords(self, rule: "GaussRule"):
        """Physical Gauss-point coordinates, two arrays of shape (n_g, ny, nx)."""
        ex = np.arange(self.nx)
        ey = np.arange(self.ny)
        r = rule.points[:, 0]
        s = rule.points[:, 1]
        x = self.origin[0] + (ex[None, None, :] + 0.5 * (1.0 + r[:, None, None])) * self.hx
        y = self.origin[1] + (ey[None, :, None] + 0.5 * (1.0 + s[:, None, None])) * self.hy
        return (
            np.broadcast_to(x, (rule.n_points, self.ny, self.nx)).copy(),
            np.broadcast_to(y, (rule.n_points, self.ny, self.nx)).copy(),
        )


@dataclass(frozen=True)
class GaussRule:
    """Tensor-product Gauss-Legendre rule on the reference square [-1,1]^2."""

    order: int
    points: np.ndarray  # (n_g, 2) local coordinates (r, s)
    weights: np.ndarray  # (n_g,)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


def gauss_legendre_rule(order: int) -> GaussRule:
    """Tensor-product Gauss-Legendre rule with ``order`` points per axis.

    Exact for polynomials of per-axis degree <= 2*order - 1. Slots are
    ordered row-major over (s, r).
    """
    if not 1 <= order <= 10:
        raise ValueError(f"Gauss order must be in [1, 10], got {order}")
    x1, w1 = np.polynomial.legendre.leggauss(order)
    r = np.tile(x1, order)
    s = np.repeat(x1, order)
    w = (w1[:, None] * w1[None, :]).ravel()  # slot = i_s * order + i_r
    return GaussRule(order=order, points=np.column_stack([r, s]), weights=w)


@dataclass(frozen=True)
class ShapeTable:
    """Bilinear shape-function values and local gradients at the rule points.

    ``values[l, k]`` is N_k at Gauss slot l; ``local_grads[l, k, 0]`` is
    dN_k/dr and ``[..., 1]`` is dN_k/ds. Corner index k = 2*dy + dx.
    """

    values: np.ndarray  # (n_g, 4)
    local_grads: np.ndarray  # (n_g, 4, 2)
    rule: GaussRule


def q1_shape_values(r, s):
    """N_k(r, s) = (1 + r_k r)(1 + s_k s) / 4 for the four corners."""
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    rk = CORNER_SIGNS[:, 0]
    sk = CORNER_SIGNS[:, 1]
    return 0.25 * (1.0 + rk * r[..., None]) * (1.0 + sk * s[..., None])


def q1_shape_grads(r, s):
    """Local gradients (dN/dr, dN/ds), shape (..., 4, 2)."""
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    rk = CORNER_SIGNS[:, 0]
    sk = CORNER_SIGNS[:, 1]
    dr = 0.25 * rk * (1.0 + sk * s[..., None])
    ds = 0.25 * sk * (1.0 + rk * r[..., None])
    return np.stack([dr, ds], axis=-1)


def q1_shape_table(rule: GaussRule) -> ShapeTable:
    """Tabulate the bilinear shape functions at the Gauss slots of ``rule``."""
    r = rule.points[:, 0]
    s = rule.points[:, 1]
    return ShapeTable(values=q1_shape_values(r, s), local_grads=q1_shape_grads(r, s), rule=rule)


@dataclass(frozen=True)
class TrialKernel:
    """2x2 stencil filters mapping node fields to Gauss-point quantities.

    ``value[l, dy, dx]`` holds N_k at slot l; ``gradx``/``grady`` hold the
    physical derivatives (2/hx) dN/dr and (2/hy) dN/ds. Sliding the filters
    over a node field at unit stride with no padding produces one output per
    element.
    """

    value: np.ndarray  # (n_g, 2, 2)
    gradx: np.ndarray  # (n_g, 2, 2)
    grady: np.ndarray  # (n_g, 2, 2)
    grid: StructuredGrid = field(repr=False)

    @property
    def n_gauss(self) -> int:
        return self.value.shape[0]

    def corner_matrix(self, quantity: str) -> np.ndarray:
        """Filter entries flattened to (n_g, 4) with corner index k = 2*dy + dx."""
        arr = getattr(self, quantity)
        return arr.reshape(arr.shape[0], 4)


def build_trial_kernel(grid: StructuredGrid, table: ShapeTable) -> TrialKernel:
    """Construct the Gauss-point evaluation filters for a uniform grid."""
    n_g = table.values.shape[0]
    value = table.values.reshape(n_g, 2, 2)
    gradx = (2.0 / grid.hx) * table.local_grads[:, :, 0].reshape(n_g, 2, 2)
    grady = (2.0 / grid.hy) * table.local_grads[:, :, 1].reshape(n_g, 2, 2)
    return TrialKernel(value=value.copy(), gradx=gradx, grady=grady, grid=grid)


@dataclass(frozen=True)
class TestKernel:
    """2x2 filters accumulating a node's test-function contributions.

    Entry ``[l, dy, dx]`` weighs the Gauss slot l of the adjacent element at
    offset (dy, dx) in a sliding 2x2 window over the ghost-padded element
    grid. By trial/test duality each entry equals the trial-kernel entry of
    the node's local corner inside that element, which reverses the footprint:
    ``test[l, dy, dx] == trial[l, 1 - dy, 1 - dx]``.
    """

    value: np.ndarray  # (n_g, 2, 2)
    gradx: np.ndarray  # (n_g, 2, 2)
    grady: np.ndarray  # (n_g, 2, 2)
    kind: str
    grid: StructuredGrid = field(repr=False)

    @property
    def n_gauss(self) -> int:
        return self.value.shape[0]


def build_test_kernel(grid: StructuredGrid, table: ShapeTable, kind: str) -> TestKernel:
    """Construct test-function filters for the given physics kind.

    ``kind`` selects how filters pair with physics feature maps downstream:
    'scalar-diffusion' pairs (flux_x, flux_y) with (dv/dx, dv/dy);
    'plane-stress' pairs the stress components with the virtual-strain
    combinations of each displacement test direction.
    """
    if kind not in TEST_KERNEL_KINDS:
        raise ValueError(f"unsupported physics kind {kind!r}; expected one of {TEST_KERNEL_KINDS}")
    trial = build_trial_kernel(grid, table)
    flip = (slice(None), slice(None, None, -1), slice(None, None, -1))
    return TestKernel(
        value=trial.value[flip].copy(),
        gradx=trial.gradx[flip].copy(),
        grady=trial.grady[flip].copy(),
        kind=kind,
        grid=grid,
    )


@dataclass(frozen=True)
class JacobianField:
    """|J| per element per Gauss slot; constant hx*hy/4 on uniform grids."""

    detj: np.ndarray  # (n_g, ny, nx)

    def scaled_weights(self, rule: GaussRule) -> np.ndarray:
        """Quadrature weights times |J|, shape (n_g, ny, nx)."""
        return rule.weights[:, None, None] * self.detj


def jacobian_field(grid: StructuredGrid, rule: GaussRule) -> JacobianField:
    """Jacobian determinants of the reference-to-physical map."""
    detj = np.full((rule.n_points, grid.ny, grid.nx), 0.25 * grid.hx * grid.hy)
    return JacobianField(detj=detj)
