"""Experiment drivers: data scaling, resolution reuse, comparison against
restarted CG, and optimization-strategy comparison.

Each driver writes CSV tables plus rendered PNG figures into its output
directory, together with a complete echo of the configuration that produced
them.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .arrayio import save_checkpoint
from .config import write_config
from .datasets import build_dataset, label_with_cg
from .fields import field_norm
from .model import ModelConfig, model_forward, model_vjp, param_count
from .problems import ProblemSet
from .reporting import save_line_plot, save_loglog_fit_plot, write_csv
from .solvers import restarted_cg_baseline
from .training import (
    Dataset,
    TrainConfig,
    compute_shift_stats,
    evaluate_model,
    fit_power_law,
    optimizer_step,
    relative_l2,
    replace_seeded_init,
    schedule_lr,
    train_run,
)

__all__ = ["ExperimentSpec", "run_experiment", "default_model_config", "run_training_with_outputs"]

EXPERIMENT_KINDS = ("scaling", "resolution", "generalization", "strategy-compare")


@dataclass
class ExperimentSpec:
    """Desk-scale experiment description; fields unused by a given kind are
    ignored."""

    kind: str
    problem: str = "heat"
    out_dir: str = "runs/experiment"
    sizes: tuple = (50, 100, 200, 400)
    resolutions: tuple = (17, 33, 65)
    n_nodes: int = 33
    n_steps: int = 2
    epochs: int = 100
    n_train: int = 200
    n_test: int = 200
    seed: int = 0
    hidden: int = 16
    layers: int = 2
    kernel: int = 3
    lr: float = 2e-3
    batch_size: int = 16

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}; expected one of {EXPERIMENT_KINDS}")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["sizes"] = ",".join(str(s) for s in self.sizes)
        d["resolutions"] = ",".join(str(r) for r in self.resolutions)
        return d


def default_model_config(dataset: Dataset, hidden=16, layers=2, kernel=3, seed=0) -> ModelConfig:
    """Model configuration matching a dataset's input sampling and channels."""
    out_channels = 2 if dataset.kind.startswith("elasticity") else 1
    return ModelConfig(
        in_channels=dataset.model_input_channels(),
        hidden_channels=hidden,
        out_channels=out_channels,
        n_layers=layers,
        kernel_extent=kernel,
        use_alignment=dataset.needs_alignment(),
        seed=seed,
    )


def run_training_with_outputs(dataset: Dataset, model_cfg: ModelConfig, tcfg: TrainConfig, out_dir,
                              problem_set: ProblemSet | None = None, on_epoch=None) -> dict:
    """Train and write the standard run artifacts: config echo, metrics.csv,
    eval.csv, periodic checkpoints, and figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    echo = dict(tcfg.to_dict())
    echo.update(
        {
            "problem": dataset.kind,
            "n_nodes": dataset.grid.nx + 1,
            "model_in_channels": model_cfg.in_channels,
            "model_hidden_channels": model_cfg.hidden_channels,
            "model_out_channels": model_cfg.out_channels,
            "model_n_layers": model_cfg.n_layers,
            "model_kernel_extent": model_cfg.kernel_extent,
            "model_use_alignment": int(model_cfg.use_alignment),
            "model_activation": model_cfg.activation,
            "model_seed": model_cfg.seed,
            "model_param_count": param_count(model_cfg),
        }
    )
    write_config(out / "config.cfg", echo)

    ckpt_every = tcfg.checkpoint_every

    def epoch_hook(epoch, report, params):
        if ckpt_every and (epoch + 1) % ckpt_every == 0:
            save_checkpoint(out / f"checkpoint_{epoch + 1:04d}.volc", params, model_cfg)
        if on_epoch is not None:
            on_epoch(epoch, report, params)

    result = train_run(dataset, model_cfg, tcfg, problem_set=problem_set, on_epoch=epoch_hook)
    write_csv(out / "metrics.csv", ("iter", "epoch", "residual_norm", "lr"), result["metrics"])
    if result["metrics"]:
        iters = [r[0] for r in result["metrics"]]
        norms = [r[2] for r in result["metrics"]]
        save_line_plot(out / "metrics.png", {"mean residual norm": (iters, norms)},
                       "iteration", "residual norm", logy=True)
    if result["eval"]:
        write_csv(out / "eval.csv", ("epoch", "mean_rel_l2", "worst_rel_l2"), result["eval"])
        epochs = [r[0] for r in result["eval"]]
        save_line_plot(
            out / "eval.png",
            {"mean": (epochs, [r[1] for r in result["eval"]]), "worst": (epochs, [r[2] for r in result["eval"]])},
            "epoch", "relative L2 error", logy=True,
        )
    save_checkpoint(out / "checkpoint_final.volc", result["params"], model_cfg)
    return result


def run_experiment(spec: ExperimentSpec) -> dict:
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_config(out / "config.cfg", spec.to_dict())
    if spec.kind == "scaling":
        return _run_scaling(spec, out)
    if spec.kind == "resolution":
        return _run_resolution(spec, out)
    if spec.kind == "generalization":
        return _run_generalization(spec, out)
    return _run_strategy_compare(spec, out)


def _train_config(spec: ExperimentSpec, strategy: str) -> TrainConfig:
    return TrainConfig(
        epochs=spec.epochs,
        batch_size=spec.batch_size,
        strategy=strategy,
        lr=spec.lr,
        seed=spec.seed,
    )


def _run_scaling(spec: ExperimentSpec, out: Path) -> dict:
    """Test error versus unlabeled training-set size, with a power-law fit."""
    full = build_dataset(spec.problem, spec.n_nodes, max(spec.sizes), spec.n_test, seed=spec.seed)
    rows = []
    for size in spec.sizes:
        ds = replace(
            full,
            train_params=full.train_params[:size],
            train_model_inputs=full.train_model_inputs[:size],
        )
        model_cfg = default_model_config(ds, spec.hidden, spec.layers, spec.kernel, seed=spec.seed)
        result = run_training_with_outputs(ds, model_cfg, _train_config(spec, f"cg:{spec.n_steps}"),
                                           out / f"size_{size:05d}")
        mean_err, worst_err = result["eval"][-1][1], result["eval"][-1][2]
        rows.append((size, mean_err, worst_err))
    sizes = [r[0] for r in rows]
    errors = [r[1] for r in rows]
    coeff, exponent = fit_power_law(sizes, errors)
    write_csv(out / "scaling.csv", ("train_size", "mean_rel_l2", "worst_rel_l2"), rows)
    write_config(out / "summary.cfg", {"fit_coeff": coeff, "fit_exponent": exponent})
    save_loglog_fit_plot(out / "scaling.png", sizes, errors, coeff, exponent)
    return {"rows": rows, "fit": (coeff, exponent)}


def _run_resolution(spec: ExperimentSpec, out: Path) -> dict:
    """Identical model configuration trained across mesh resolutions."""
    rows = []
    base_cfg = None
    for res in spec.resolutions:
        ds = build_dataset(spec.problem, res, spec.n_train, spec.n_test, seed=spec.seed)
        model_cfg = default_model_config(ds, spec.hidden, spec.layers, spec.kernel, seed=spec.seed)
        if base_cfg is None:
            base_cfg = model_cfg
        elif param_count(model_cfg) != param_count(base_cfg):
            raise RuntimeError("parameter count changed across resolutions")
        result = run_training_with_outputs(ds, model_cfg, _train_config(spec, f"cg:{spec.n_steps}"),
                                           out / f"res_{res:04d}")
        mean_err, worst_err = result["eval"][-1][1], result["eval"][-1][2]
        rows.append((res, param_count(model_cfg), mean_err, worst_err))
    write_csv(out / "resolution.csv", ("resolution", "param_count", "mean_rel_l2", "worst_rel_l2"), rows)
    save_line_plot(
        out / "resolution.png",
        {"mean test error": ([r[0] for r in rows], [r[2] for r in rows])},
        "nodes per side", "relative L2 error",
    )
    return {"rows": rows}


def _run_generalization(spec: ExperimentSpec, out: Path) -> dict:
    """Label-free training against restarted CG baselines on one sample set.

    All arms see the same samples. Training-set reference solutions are used
    only to measure errors, never to train.
    """
    ds = build_dataset(spec.problem, spec.n_nodes, spec.n_train, 0, seed=spec.seed)
    pset = ProblemSet(ds.kind, ds.grid, ds.train_params)
    refs = label_with_cg(pset)
    model_cfg = default_model_config(ds, spec.hidden, spec.layers, spec.kernel, seed=spec.seed)
    shift_stats = compute_shift_stats(ds.shift_labels)
    vol_curve = []

    def on_epoch(epoch, report, params):
        mean_err, _ = evaluate_model(params, model_cfg, ds.train_model_inputs, refs, pset, shift_stats)
        vol_curve.append(mean_err)

    run_training_with_outputs(ds, model_cfg, _train_config(spec, f"cg:{spec.n_steps}"),
                              out / "vol", problem_set=pset, on_epoch=on_epoch)
    prob_all = pset.subset(np.arange(len(pset)))
    cg_r = restarted_cg_baseline(prob_all, refs, spec.n_steps, spec.epochs, init="random-normal", seed=spec.seed)
    cg_a = restarted_cg_baseline(prob_all, refs, spec.n_steps, spec.epochs,
                                 init="average-of-shift-labels", shift_labels=ds.shift_labels)
    epochs = list(range(1, spec.epochs + 1))
    rows = list(zip(epochs, vol_curve, cg_r["mean_rel_l2"], cg_a["mean_rel_l2"]))
    write_csv(out / "generalization.csv",
              ("epoch", "vol_cg_mean_rel_l2", "cg_r_mean_rel_l2", "cg_a_mean_rel_l2"), rows)
    save_line_plot(
        out / "generalization.png",
        {
            f"label-free + CG({spec.n_steps})": (epochs, vol_curve),
            f"CG({spec.n_steps})-R": (epochs, cg_r["mean_rel_l2"]),
            f"CG({spec.n_steps})-A": (epochs, cg_a["mean_rel_l2"]),
        },
        "epoch", "mean train relative L2", logy=True,
    )
    summary = {
        "vol_final": vol_curve[-1],
        "cg_r_final": cg_r["mean_rel_l2"][-1],
        "cg_a_final": cg_a["mean_rel_l2"][-1],
        "gap_vs_cg_r": cg_r["mean_rel_l2"][-1] / vol_curve[-1],
    }
    write_config(out / "summary.cfg", summary)
    return {"vol": vol_curve, "cg_r": cg_r["mean_rel_l2"], "cg_a": cg_a["mean_rel_l2"], "summary": summary}


def _supervised_run(ds: Dataset, labels: np.ndarray, model_cfg: ModelConfig, tcfg: TrainConfig,
                    pset: ProblemSet):
    """Data-driven baseline: SSE regression onto oracle labels, recording the
    masked residual norm per iteration for comparison."""
    shift_stats = compute_shift_stats(ds.shift_labels)
    params = replace_seeded_init(model_cfg, tcfg.seed)
    rng = np.random.default_rng(tcfg.seed)
    opt_state = None
    norms = []
    for epoch in range(tcfg.epochs):
        lr = schedule_lr(tcfg, epoch)
        order = rng.permutation(ds.n_train)
        for j in range(int(np.ceil(ds.n_train / tcfg.batch_size))):
            idx = order[j * tcfg.batch_size : (j + 1) * tcfg.batch_size]
            prob = pset.subset(idx)
            a, tape = model_forward(params, model_cfg, ds.train_model_inputs[idx], prob.mask, shift_stats)
            norms.append(float(np.mean(field_norm(prob.mask.apply(prob.residual(a))))))
            grads = model_vjp(params, model_cfg, tape, -(labels[idx] - a))
            opt_state = optimizer_step(params, grads, lr, tcfg.optimizer, opt_state)
    return norms, params, shift_stats


def _run_strategy_compare(spec: ExperimentSpec, out: Path) -> dict:
    """Residual-norm trajectories for supervised, direct-minimization, and
    CG-update training under identical settings."""
    ds = build_dataset(spec.problem, spec.n_nodes, spec.n_train, spec.n_test, seed=spec.seed)
    pset = ProblemSet(ds.kind, ds.grid, ds.train_params)
    labels = label_with_cg(pset)
    model_cfg = default_model_config(ds, spec.hidden, spec.layers, spec.kernel, seed=spec.seed)
    curves = {}
    test_errors = {}
    sup_norms, sup_params, shift_stats = _supervised_run(ds, labels, model_cfg, _train_config(spec, "dm"), pset)
    curves["supervised"] = sup_norms
    test_errors["supervised"] = evaluate_model(sup_params, model_cfg, ds.test_model_inputs,
                                               ds.test_labels, pset, shift_stats)[0]
    for name, strategy in (("dm", "dm"), (f"cg{spec.n_steps}", f"cg:{spec.n_steps}")):
        result = train_run(ds, model_cfg, _train_config(spec, strategy), problem_set=pset)
        curves[name] = [r[2] for r in result["metrics"]]
        test_errors[name] = result["eval"][-1][1]
    n = min(len(c) for c in curves.values())
    rows = [(i + 1, *[curves[k][i] for k in curves]) for i in range(n)]
    write_csv(out / "strategy.csv", ("iter", *curves.keys()), rows)
    save_line_plot(
        out / "strategy.png",
        {k: (list(range(1, n + 1)), v[:n]) for k, v in curves.items()},
        "iteration", "mean residual norm", logy=True,
    )
    write_config(out / "summary.cfg", {f"test_error_{k}": v for k, v in test_errors.items()})
    return {"curves": curves, "test_errors": test_errors}
