"""Label-free training of the field-to-field surrogate.

Every iteration runs: forward prediction (with hard boundary conditions and
the distribution shift), matrix-free masked residual, a strategy-specific
update signal, and an optimizer step on the model parameters.

Strategies: 'dm' descends directly on the mean residual norm; 'sd:N'/'cg:N'
run N steepest-descent or conjugate-gradient updates on the current
prediction and regress the model onto the improved prediction (the
provisional label a + delta_a) under a sum-of-squares loss. The increment is
treated as a constant: no gradient flows through the solver steps.

Only the 5-sample shift set is ever labeled; its labels enter training
exclusively through the elementwise mean/std of the distribution shift.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .fields import field_norm, relative_l2
from .grid import StructuredGrid
from .model import ModelConfig, ModelParams, model_forward, model_init, model_vjp
from .problems import Problem, ProblemSet
from .solvers import cg_steps, sd_steps

__all__ = [
    "ShiftStats",
    "TrainConfig",
    "Dataset",
    "compute_shift_stats",
    "dm_loss",
    "dm_loss_cotangent",
    "sse_loss",
    "relative_l2",
    "fit_power_law",
    "AdamState",
    "optimizer_step",
    "schedule_lr",
    "train_epoch",
    "train_run",
    "evaluate_model",
]

STD_FLOOR = 1e-8


@dataclass(frozen=True)
class ShiftStats:
    """Elementwise mean and floored standard deviation of the shift-set
    labels; the affine output transform of the model."""

    mean: np.ndarray
    std: np.ndarray


def compute_shift_stats(shift_labels: np.ndarray, eps: float = STD_FLOOR) -> ShiftStats:
    """Population statistics over the labeled shift set, std floored at eps."""
    if shift_labels.ndim != 4 or shift_labels.shape[0] < 2:
        raise ValueError("need at least two labels of shape (n, c, ny+1, nx+1)")
    mean = shift_labels.mean(axis=0)
    std = np.maximum(shift_labels.std(axis=0), eps)
    return ShiftStats(mean=mean, std=std)


def dm_loss(R: np.ndarray):
    """Mean over samples of the Euclidean norm of the flattened masked
    residual."""
    norms = field_norm(R)
    return float(np.mean(norms))


def dm_loss_cotangent(R: np.ndarray, problem: Problem) -> np.ndarray:
    """Gradient of dm_loss w.r.t. the prediction: K (R / ||R||) per sample,
    averaged over the batch. Zero-residual samples contribute nothing."""
    norms = np.asarray(field_norm(R))
    safe = np.where(norms > 0.0, norms, 1.0)
    unit = R / safe[..., None, None, None] if norms.ndim else (R / safe if norms > 0 else R * 0.0)
    cot = problem.matvec(unit)
    n_samples = R.shape[0] if R.ndim == 4 else 1
    return cot / n_samples


def sse_loss(a_hat: np.ndarray, a: np.ndarray) -> float:
    """Half the summed squared error between the provisional label and the
    prediction. Its cotangent w.r.t. the prediction is -(a_hat - a)."""
    if a_hat.shape != a.shape:
        raise ValueError(f"shape mismatch {a_hat.shape} vs {a.shape}")
    d = a_hat - a
    return 0.5 * float(np.sum(d * d))


def fit_power_law(sizes, errors):
    """Least-squares fit of errors = a * sizes**b on log-log axes."""
    sizes = np.asarray(sizes, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if sizes.size < 3:
        raise ValueError("need at least 3 points")
    if np.any(sizes <= 0.0) or np.any(errors <= 0.0):
        raise ValueError("power-law fit needs positive sizes and errors")
    b, loga = np.polyfit(np.log(sizes), np.log(errors), 1)
    return float(np.exp(loga)), float(b)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    strategy: str = "cg:2"
    lr: float = 2e-3
    optimizer: str = "adam"
    schedule_decay: float = 0.5
    schedule_every: int | None = None  # default: epochs // 5
    maxiter: int | None = None  # cap on batches per epoch
    seed: int = 0
    eval_every: int = 0  # 0: evaluate only at the end
    checkpoint_every: int = 0

    def __post_init__(self):
        kind, n = parse_strategy(self.strategy)
        if kind in ("sd", "cg") and n < 1:
            raise ValueError("iterative strategies need n >= 1")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch size and epochs must be >= 1")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "strategy": self.strategy,
            "lr": self.lr,
            "optimizer": self.optimizer,
            "schedule_decay": self.schedule_decay,
            "schedule_every": self.schedule_every if self.schedule_every is not None else "",
            "maxiter": self.maxiter if self.maxiter is not None else "",
            "seed": self.seed,
            "eval_every": self.eval_every,
            "checkpoint_every": self.checkpoint_every,
        }


def parse_strategy(s: str):
    """'dm' -> ('dm', 0); 'sd:N'/'cg:N' -> (kind, N)."""
    if s == "dm":
        return "dm", 0
    for kind in ("sd", "cg"):
        if s.startswith(kind + ":"):
            return kind, int(s.split(":", 1)[1])
    raise ValueError(f"unknown strategy {s!r}; expected dm, sd:N, or cg:N")


def schedule_lr(cfg: TrainConfig, epoch: int) -> float:
    """Step decay: lr * decay**(epoch // every), every = epochs // 5."""
    every = cfg.schedule_every or max(1, cfg.epochs // 5)
    return cfg.lr * cfg.schedule_decay ** (epoch // every)


@dataclass
class Dataset:
    """In-memory dataset: unlabeled training inputs, a small labeled shift
    set, and an optional labeled test set.

    ``*_params`` are the Gauss-sampled physics parameters (n, n_g, ny, nx);
    ``*_model_inputs`` are what the surrogate consumes, either the same
    Gauss-sampled arrays (alignment on) or node-sampled copies.
    """

    kind: str
    grid: StructuredGrid
    train_params: np.ndarray
    train_model_inputs: np.ndarray
    shift_params: np.ndarray
    shift_model_inputs: np.ndarray
    shift_labels: np.ndarray
    test_params: np.ndarray | None = None
    test_model_inputs: np.ndarray | None = None
    test_labels: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_train(self) -> int:
        return self.train_params.shape[0]

    def model_input_channels(self) -> int:
        return self.train_model_inputs.shape[1]

    def needs_alignment(self) -> bool:
        return self.train_model_inputs.shape[-1] == self.grid.nx


@dataclass
class AdamState:
    """First/second moment accumulators of the adaptive update
    m <- b1 m + (1-b1) g, v <- b2 v + (1-b2) g^2,
    theta <- theta - lr * m-hat / (sqrt(v-hat) + eps)."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def optimizer_step(params: ModelParams, grads: dict, lr: float, kind: str, state: AdamState | None):
    """Apply one descent update in place; returns the (possibly new) state."""
    if kind == "sgd":
        for name, g in grads.items():
            params.arrays[name] -= lr * g
        return state
    if kind != "adam":
        raise ValueError(f"unknown optimizer {kind!r}")
    if state is None:
        state = AdamState()
    if not state.m:
        state.m = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        state.v = {k: np.zeros_like(v) for k, v in params.arrays.items()}
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, g in grads.items():
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        params.arrays[name] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


def _strategy_gradient(strategy_kind, n_steps, a, R, prob, params, model_cfg, tape):
    """Parameter gradient of the chosen objective for one batch."""
    if strategy_kind == "dm":
        cot = dm_loss_cotangent(R, prob)
        return model_vjp(params, model_cfg, tape, cot)
    step_fn = sd_steps if strategy_kind == "sd" else cg_steps
    da, _ = step_fn(R, a, prob, n_steps, prob.mask)
    # SSE against the provisional label a + da: d(loss)/d(prediction) = -da
    return model_vjp(params, model_cfg, tape, -da)


def train_epoch(
    params: ModelParams,
    model_cfg: ModelConfig,
    dataset: Dataset,
    problem_set: ProblemSet,
    shift_stats: ShiftStats,
    cfg: TrainConfig,
    epoch: int,
    opt_state: AdamState | None,
    rng: np.random.Generator,
):
    """One pass over the unlabeled training inputs.

    Returns (report, opt_state) where report carries the per-iteration mean
    masked residual norms, the learning rate used, and the wall time. Test
    labels are never touched here; shift labels only entered through
    ``shift_stats``.
    """
    t0 = time.perf_counter()
    kind, n_steps = parse_strategy(cfg.strategy)
    lr = schedule_lr(cfg, epoch)
    order = rng.permutation(dataset.n_train)
    n_batches = int(np.ceil(dataset.n_train / cfg.batch_size))
    if cfg.maxiter is not None:
        n_batches = min(n_batches, cfg.maxiter)
    residual_norms = []
    for j in range(n_batches):
        idx = order[j * cfg.batch_size : (j + 1) * cfg.batch_size]
        prob = problem_set.subset(idx)
        x = dataset.train_model_inputs[idx]
        a, tape = model_forward(params, model_cfg, x, prob.mask, shift_stats)
        R = prob.mask.apply(prob.residual(a))
        residual_norms.append(float(np.mean(field_norm(R))))
        grads = _strategy_gradient(kind, n_steps, a, R, prob, params, model_cfg, tape)
        opt_state = optimizer_step(params, grads, lr, cfg.optimizer, opt_state)
    report = {
        "epoch": epoch,
        "lr": lr,
        "residual_norms": residual_norms,
        "mean_residual_norm": float(np.mean(residual_norms)) if residual_norms else float("nan"),
        "wall_time": time.perf_counter() - t0,
    }
    return report, opt_state


def evaluate_model(params, model_cfg, inputs, labels, problem_set: ProblemSet, shift_stats, batch_size=32):
    """Mean and worst relative L2 error of the prediction on a labeled set."""
    mask = problem_set.mask
    errs = []
    for start in range(0, inputs.shape[0], batch_size):
        idx = np.arange(start, min(start + batch_size, inputs.shape[0]))
        a, _ = model_forward(params, model_cfg, inputs[idx], mask, shift_stats)
        errs.append(np.atleast_1d(relative_l2(a, labels[idx], mask)))
    errs = np.concatenate(errs)
    return float(np.mean(errs)), float(np.max(errs))


def train_run(
    dataset: Dataset,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    problem_set: ProblemSet | None = None,
    on_epoch=None,
):
    """Train a fresh model on a dataset; returns a results dict.

    ``on_epoch(epoch, report, params)`` is an optional callback (used by the
    experiment drivers to stream metrics). The returned dict carries the
    trained parameters, per-iteration metric rows
    (iter, epoch, residual_norm, lr), and per-evaluation rows
    (epoch, mean_rel_l2, worst_rel_l2).
    """
    if problem_set is None:
        problem_set = ProblemSet(dataset.kind, dataset.grid, dataset.train_params)
    if model_cfg.use_alignment != dataset.needs_alignment():
        raise ValueError("model alignment flag does not match the dataset's input resolution")
    shift_stats = compute_shift_stats(dataset.shift_labels)
    params = replace_seeded_init(model_cfg, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    opt_state = None
    metric_rows = []
    eval_rows = []
    it = 0
    for epoch in range(cfg.epochs):
        report, opt_state = train_epoch(
            params, model_cfg, dataset, problem_set, shift_stats, cfg, epoch, opt_state, rng
        )
        for rn in report["residual_norms"]:
            it += 1
            metric_rows.append((it, epoch, rn, report["lr"]))
        if cfg.eval_every and (epoch + 1) % cfg.eval_every == 0 and dataset.test_labels is not None:
            mean_err, worst_err = evaluate_model(
                params, model_cfg, dataset.test_model_inputs, dataset.test_labels, problem_set, shift_stats
            )
            eval_rows.append((epoch, mean_err, worst_err))
        if on_epoch is not None:
            on_epoch(epoch, report, params)
    if dataset.test_labels is not None:
        mean_err, worst_err = evaluate_model(
            params, model_cfg, dataset.test_model_inputs, dataset.test_labels, problem_set, shift_stats
        )
        eval_rows.append((cfg.epochs - 1, mean_err, worst_err))
    return {
        "params": params,
        "shift_stats": shift_stats,
        "metrics": metric_rows,
        "eval": eval_rows,
        "problem_set": problem_set,
    }


def replace_seeded_init(model_cfg: ModelConfig, seed: int) -> ModelParams:
    """Initialize parameters with the training seed folded into the model
    seed so distinct runs differ deterministically."""
    cfg = model_cfg if seed == 0 else replace(model_cfg, seed=model_cfg.seed + seed)
    return model_init(cfg)
