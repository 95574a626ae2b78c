"""Benchmark problem definitions: scalar diffusion (variable heat source,
variable-conductivity flow) and variable-stiffness plane-stress elasticity.

A Problem bundles the grid, quadrature, kernels, material field, load, and
constraint mask of one boundary-value problem and exposes the matrix-free
operations solvers and training need. Material and load data may carry one
leading batch axis to run many samples of the same family at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import matrix_free as mf
from .fields import MaskSpec, mask_from_edges
from .grid import (
    GaussRule,
    JacobianField,
    StructuredGrid,
    TestKernel,
    TrialKernel,
    build_test_kernel,
    build_trial_kernel,
    gauss_legendre_rule,
    jacobian_field,
    q1_shape_table,
)
from .materials import (
    LaminaProperties,
    LoadSpec,
    MaterialField,
    ParameterField,
    fiber_angle_to_material,
)

__all__ = ["Problem", "ProblemSet", "problem_factory", "PROBLEM_KINDS", "default_grid"]

PROBLEM_KINDS = ("heat", "darcy", "elasticity-a", "elasticity-b")

HEAT_CONDUCTIVITY = 1.0
DARCY_SOURCE = 1.0
ELASTICITY_TRACTION = (1.0, 0.0)  # N/mm on the x = width edge
PLATE_WIDTH = 100.0  # mm


@dataclass
class Problem:
    """One boundary-value problem with matrix-free operator access."""

    kind: str
    grid: StructuredGrid
    rule: GaussRule
    trial: TrialKernel
    test: TestKernel
    jac: JacobianField
    material: MaterialField
    load: LoadSpec
    mask: MaskSpec
    thickness: float = 1.0
    load_vec: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.load_vec is None:
            self.load_vec = mf.load_vector(self.load, self.test, self.jac, self.rule, mask=self.mask)

    @property
    def n_channels(self) -> int:
        return self.mask.n_channels

    @property
    def node_shape(self) -> tuple:
        return (self.n_channels,) + self.grid.node_shape

    def zero_field(self, batch: int | None = None) -> np.ndarray:
        shape = self.node_shape if batch is None else (batch,) + self.node_shape
        return np.zeros(shape)

    def residual(self, a: np.ndarray) -> np.ndarray:
        """K a - P on the full node grid (no masking)."""
        return mf.residual_galerkin(
            a, self.material, self.load_vec, self.trial, self.test, self.jac, self.rule, self.thickness
        )

    def masked_residual(self, a: np.ndarray) -> np.ndarray:
        return self.mask.apply(self.residual(a))

    def matvec(self, p: np.ndarray) -> np.ndarray:
        return mf.matvec(p, self.material, self.trial, self.test, self.jac, self.rule, self.thickness)

    def masked_matvec(self, p: np.ndarray) -> np.ndarray:
        return self.mask.apply(self.matvec(p))

    def quadratic_form(self, p: np.ndarray):
        return mf.quadratic_form(p, self.material, self.trial, self.jac, self.rule, self.thickness)

    def functional(self, a: np.ndarray):
        """Total potential of ``a`` including volumetric and edge work."""
        source = self.load.volumetric
        edge_only = LoadSpec(volumetric=None, neumann=self.load.neumann)
        edge_vec = mf.load_vector(edge_only, self.test, self.jac, self.rule) if self.load.neumann else None
        return mf.functional_of_field(
            a, self.material, source, self.trial, self.jac, self.rule, edge_load=edge_vec, thickness=self.thickness
        )


def default_grid(kind: str, n_nodes: int) -> StructuredGrid:
    """Square benchmark domain: unit square for scalar problems, a
    100 mm plate for elasticity. ``n_nodes`` is the node count per side."""
    n_el = n_nodes - 1
    extent = PLATE_WIDTH if kind.startswith("elasticity") else 1.0
    return StructuredGrid(nx=n_el, ny=n_el, hx=extent / n_el, hy=extent / n_el)


def problem_factory(
    kind: str,
    grid: StructuredGrid,
    parameter: ParameterField,
    gauss_order: int = 2,
    lamina: LaminaProperties | None = None,
    traction: tuple = ELASTICITY_TRACTION,
) -> Problem:
    """Assemble the problem context for one benchmark family.

    heat: fixed unit conductivity, Gauss-sampled source = parameter, zero
    Dirichlet on the whole boundary. darcy: fixed unit source, Gauss-sampled
    conductivity = parameter, zero Dirichlet on the whole boundary.
    elasticity-a/b: Gauss-sampled fiber angle = parameter, stiffness by
    lamina rotation, left edge clamped, uniform traction on the right edge.
    """
    if kind not in PROBLEM_KINDS:
        raise ValueError(f"unknown problem kind {kind!r}; expected one of {PROBLEM_KINDS}")
    rule = gauss_legendre_rule(gauss_order)
    table = q1_shape_table(rule)
    trial = build_trial_kernel(grid, table)
    jac = jacobian_field(grid, rule)

    if kind == "heat":
        if parameter.kind != "source-Q" or parameter.sampling != "gauss-points":
            raise ValueError("heat expects a Gauss-sampled source parameter")
        test = build_test_kernel(grid, table, "scalar-diffusion")
        kappa = np.full((rule.n_points, grid.ny, grid.nx), HEAT_CONDUCTIVITY)
        material = MaterialField(kind="isotropic-scalar", data=kappa)
        load = LoadSpec(volumetric=parameter.data[..., None, :, :, :])
        mask = mask_from_edges(grid, 1, ("left", "right", "bottom", "top"))
        return Problem(kind, grid, rule, trial, test, jac, material, load, mask)

    if kind == "darcy":
        if parameter.kind != "conductivity-k" or parameter.sampling != "gauss-points":
            raise ValueError("darcy expects a Gauss-sampled conductivity parameter")
        test = build_test_kernel(grid, table, "scalar-diffusion")
        material = MaterialField(kind="isotropic-scalar", data=parameter.data)
        batch = parameter.data.shape[:-3]
        source = np.full(batch + (1, rule.n_points, grid.ny, grid.nx), DARCY_SOURCE)
        load = LoadSpec(volumetric=source)
        mask = mask_from_edges(grid, 1, ("left", "right", "bottom", "top"))
        return Problem(kind, grid, rule, trial, test, jac, material, load, mask)

    # elasticity-a / elasticity-b share the same physics, they differ only in
    # how the fiber-angle field was sampled upstream
    if parameter.kind != "fiber-angle" or parameter.sampling != "gauss-points":
        raise ValueError("elasticity expects a Gauss-sampled fiber-angle parameter")
    lamina = lamina or LaminaProperties()
    test = build_test_kernel(grid, table, "plane-stress")
    material = fiber_angle_to_material(parameter, lamina)
    load = LoadSpec(volumetric=None, neumann=(("right", tuple(traction)),))
    mask = mask_from_edges(grid, 2, ("left",))
    return Problem(kind, grid, rule, trial, test, jac, material, load, mask, thickness=lamina.thickness)


class ProblemSet:
    """A family of problems sharing grid/kernels/mask but with per-sample
    parameters. ``subset(indices)`` builds a batched Problem for training and
    ``single(i)`` an unbatched one for oracles and labeling."""

    def __init__(self, kind: str, grid: StructuredGrid, parameters: np.ndarray, gauss_order: int = 2,
                 lamina: LaminaProperties | None = None):
        if parameters.ndim != 4:
            raise ValueError("parameters must be (n_samples, n_g, ny, nx)")
        self.kind = kind
        self.grid = grid
        self.parameters = parameters
        self.gauss_order = gauss_order
        self.lamina = lamina
        self.template = problem_factory(kind, grid, self._param_field(parameters[:1]),
                                        gauss_order=gauss_order, lamina=lamina)

    def __len__(self) -> int:
        return self.parameters.shape[0]

    @property
    def mask(self) -> MaskSpec:
        return self.template.mask

    def _param_field(self, data: np.ndarray) -> ParameterField:
        kinds = {"heat": "source-Q", "darcy": "conductivity-k",
                 "elasticity-a": "fiber-angle", "elasticity-b": "fiber-angle"}
        return ParameterField(kind=kinds[self.kind], sampling="gauss-points", data=data)

    def subset(self, indices) -> Problem:
        """Batched Problem over the selected samples."""
        data = self.parameters[np.asarray(indices)]
        return problem_factory(self.kind, self.grid, self._param_field(data),
                               gauss_order=self.gauss_order, lamina=self.lamina)

    def single(self, index: int) -> Problem:
        """Unbatched Problem for one sample."""
        data = self.parameters[index]
        return problem_factory(self.kind, self.grid, self._param_field(data),
                               gauss_order=self.gauss_order, lamina=self.lamina)
