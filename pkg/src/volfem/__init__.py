"""Matrix-free variational finite elements on structured 2-D grids, iterative
matrix-free solvers, and label-free training of a small field-to-field
surrogate driven by weak-form residuals."""

from .fields import GaussField, MaskSpec, apply_mask, apply_shift_bc, mask_from_edges, relative_l2
from .grid import (
    GaussRule,
    JacobianField,
    ShapeTable,
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
    diffusion_flux_map,
    fiber_angle_to_material,
    plane_stress_stiffness,
    stress_map,
)
from .matrix_free import (
    eval_at_gauss,
    load_vector,
    matvec,
    quadratic_form,
    residual_galerkin,
    system_functional,
)
from .model import ModelConfig, ModelParams, model_forward, model_init, model_vjp, param_count
from .problems import Problem, ProblemSet, default_grid, problem_factory
from .solvers import (
    DenseSystem,
    IterationReport,
    assemble_dense,
    cg_solve,
    cg_steps,
    dense_solve,
    restarted_cg_baseline,
    sd_steps,
)
from .training import (
    Dataset,
    ShiftStats,
    TrainConfig,
    compute_shift_stats,
    dm_loss,
    fit_power_law,
    sse_loss,
    train_epoch,
    train_run,
)

__version__ = "0.1.0"
