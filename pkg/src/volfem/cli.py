"""Command-line interface.

Subcommands: gen-data, train, evaluate, solve, compare-cg, grad-check,
oracle-check, run-experiment. ``--resolution`` is the node count per side
everywhere. Exit codes: 0 success, 1 usage error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .arrayio import load_checkpoint, write_array, write_container
from .datasets import build_dataset, generate_dataset, load_dataset
from .errors import VolfemError
from .experiments import ExperimentSpec, default_model_config, run_experiment, run_training_with_outputs
from .fields import field_norm, relative_l2
from .model import ModelConfig, model_forward, model_init, model_vjp, param_count
from .problems import PROBLEM_KINDS, ProblemSet, default_grid
from .reporting import save_field_png, save_line_plot, write_csv
from .solvers import assemble_dense, cg_solve, dense_solve, restarted_cg_baseline
from .training import Dataset, ShiftStats, TrainConfig, compute_shift_stats, evaluate_model

GRAD_CHECK_TOL = 1e-4
ORACLE_TOL = 1e-10


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 on usage errors instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="volfem", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    def common(p, problem=True, out=True):
        if problem:
            p.add_argument("--problem", choices=PROBLEM_KINDS, default="heat")
        p.add_argument("--resolution", type=int, default=33, help="nodes per side")
        p.add_argument("--seed", type=int, default=0)
        if out:
            p.add_argument("--out", type=str, required=True)
        p.add_argument("--config", type=str, default=None, help="flat key=value overrides")

    p = sub.add_parser("gen-data", help="generate a dataset on disk")
    common(p)
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-test", type=int, default=50)
    p.add_argument("--n-shift", type=int, default=5)

    p = sub.add_parser("train", help="train the surrogate on a dataset")
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--strategy", type=str, default=None, help="dm, sd:N, or cg:N")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", type=str, default=None)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a labeled test split")
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--out", type=str, required=True)

    p = sub.add_parser("solve", help="matrix-free CG solve of one sampled problem")
    common(p)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--dump-kernels", action="store_true")
    p.add_argument("--dump-pgm", action="store_true", help="also write a PGM dump of the solution")

    p = sub.add_parser("compare-cg", help="restarted CG baseline against reference solutions")
    common(p)
    p.add_argument("--steps", type=int, default=2)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--n-samples", type=int, default=16)
    p.add_argument("--init", choices=("random-normal", "average-of-shift-labels"), default="random-normal")

    p = sub.add_parser("grad-check", help="finite-difference audit of the model gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=str, default=None)

    p = sub.add_parser("oracle-check", help="matrix-free vs dense assembly discrepancy")
    common(p, out=False)
    p.add_argument("--out", type=str, default=None)

    p = sub.add_parser("run-experiment", help="run one experiment family")
    p.add_argument("--experiment", choices=("scaling", "resolution", "generalization", "strategy-compare"),
                   required=True)
    p.add_argument("--problem", choices=PROBLEM_KINDS, default=None)
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", type=str, default=None)
    return parser


def _load_overrides(path):
    return cfgmod.read_config(path) if path else {}


def _cmd_gen_data(args) -> int:
    from .sampling import GrfConfig

    over = _load_overrides(args.config)
    grf = GrfConfig(
        length_scale=cfgmod.get_float(over, "grf_length_scale", 0.25),
        variance=cfgmod.get_float(over, "grf_variance", 1.0),
        mean=cfgmod.get_float(over, "grf_mean", 0.0),
        seed=args.seed,
    )
    ds = generate_dataset(args.problem, args.resolution, args.n_train, args.n_test,
                          args.out, n_shift=args.n_shift, seed=args.seed, grf=grf)
    print(f"wrote {ds.n_train} train / {ds.shift_params.shape[0]} shift / "
          f"{0 if ds.test_params is None else ds.test_params.shape[0]} test samples to {args.out}")
    return 0


def _cmd_train(args) -> int:
    over = _load_overrides(args.config)
    ds = load_dataset(args.data)
    tcfg = TrainConfig(
        epochs=cfgmod.get_int(over, "epochs", 50),
        batch_size=cfgmod.get_int(over, "batch_size", 16),
        strategy=args.strategy or cfgmod.get_str(over, "strategy", "cg:2"),
        lr=cfgmod.get_float(over, "lr", 2e-3),
        optimizer=cfgmod.get_str(over, "optimizer", "adam"),
        seed=args.seed if args.seed is not None else cfgmod.get_int(over, "seed", 0),
        eval_every=cfgmod.get_int(over, "eval_every", 0),
        checkpoint_every=cfgmod.get_int(over, "checkpoint_every", 0),
    )
    model_cfg = default_model_config(
        ds,
        hidden=cfgmod.get_int(over, "hidden", 16),
        layers=cfgmod.get_int(over, "layers", 2),
        kernel=cfgmod.get_int(over, "kernel", 3),
        seed=cfgmod.get_int(over, "model_seed", 0),
    )
    result = run_training_with_outputs(ds, model_cfg, tcfg, args.out)
    if result["eval"]:
        print(f"final mean test error: {result['eval'][-1][1]:.4e}")
    print(f"trained {param_count(model_cfg)} parameters; artifacts in {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    params, model_cfg = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    if ds.test_labels is None:
        print("dataset has no labeled test split", file=sys.stderr)
        return 2
    pset = ProblemSet(ds.kind, ds.grid, ds.train_params)
    shift_stats = compute_shift_stats(ds.shift_labels)
    mean_err, worst_err = evaluate_model(params, model_cfg, ds.test_model_inputs, ds.test_labels,
                                         pset, shift_stats)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "eval.csv", ("epoch", "mean_rel_l2", "worst_rel_l2"), [("final", mean_err, worst_err)])
    print(f"mean relative L2: {mean_err:.4e}   worst: {worst_err:.4e}")
    return 0


def _sampled_problem_set(kind: str, n_nodes: int, n_samples: int, seed: int):
    ds = build_dataset(kind, n_nodes, n_samples, 0, n_shift=5, seed=seed)
    return ProblemSet(ds.kind, ds.grid, ds.train_params), ds


def _cmd_solve(args) -> int:
    pset, _ = _sampled_problem_set(args.problem, args.resolution, 1, args.seed)
    prob = pset.single(0)
    a, report = cg_solve(prob, tol=args.tol)
    defect = float(field_norm(prob.mask.apply(prob.residual(a))))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_array(out / "solution.volf", a)
    write_csv(out / "iterations.csv", ("step", "alpha", "beta", "residual_norm"), report.rows())
    save_field_png(out / "solution.png", a[0], title=f"{args.problem} solution")
    if args.dump_pgm:
        from .reporting import save_field_pgm

        save_field_pgm(out / "solution.pgm", a[0])
    if report.residual_norms:
        steps = list(range(1, len(report.residual_norms) + 1))
        save_line_plot(out / "convergence.png",
                       {"residual norm": (steps, [float(np.mean(r)) for r in report.residual_norms])},
                       "step", "residual norm", logy=True)
    if args.dump_kernels:
        write_container(
            out / "kernels.volc",
            {
                "trial_value": prob.trial.value,
                "trial_gradx": prob.trial.gradx,
                "trial_grady": prob.trial.grady,
                "test_value": prob.test.value,
                "test_gradx": prob.test.gradx,
                "test_grady": prob.test.grady,
                "jacobian": prob.jac.detj,
            },
            {"physics": prob.test.kind},
        )
    b = field_norm(prob.mask.apply(prob.load_vec - prob.matvec(prob.mask.shift)))
    print(f"solved in {report.n_steps} iterations; relative defect {defect / max(float(b), 1e-300):.3e}")
    return 0 if defect <= args.tol * max(float(b), 1e-300) else 2


def _cmd_compare_cg(args) -> int:
    pset, ds = _sampled_problem_set(args.problem, args.resolution, args.n_samples, args.seed)
    from .datasets import label_with_cg

    refs = label_with_cg(pset)
    prob = pset.subset(np.arange(len(pset)))
    result = restarted_cg_baseline(prob, refs, args.steps, args.epochs, init=args.init,
                                   shift_labels=ds.shift_labels, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    epochs = list(range(1, args.epochs + 1))
    rows = list(zip(epochs, result["mean_rel_l2"], result["worst_rel_l2"], result["mean_residual_norm"]))
    write_csv(out / "compare_cg.csv", ("epoch", "mean_rel_l2", "worst_rel_l2", "mean_residual_norm"), rows)
    save_line_plot(out / "compare_cg.png",
                   {f"CG({args.steps})-{'R' if args.init == 'random-normal' else 'A'}":
                    (epochs, result["mean_rel_l2"])},
                   "epoch", "mean relative L2", logy=True)
    print(f"final mean relative L2 after {args.epochs} epochs: {result['mean_rel_l2'][-1]:.4e}")
    return 0


def _grad_check_value(seed: int) -> float:
    """Max relative error between the analytic vjp and central differences on
    a small configuration."""
    from .fields import mask_from_edges
    from .model import ModelParams

    rng = np.random.default_rng(seed)
    grid_nodes = 6
    cfg = ModelConfig(in_channels=2, hidden_channels=4, out_channels=1, n_layers=1,
                      kernel_extent=3, use_alignment=True, seed=seed)
    params = model_init(cfg)
    grid = default_grid("heat", grid_nodes)
    mask = mask_from_edges(grid, 1, ("left", "right", "bottom", "top"))
    x = rng.standard_normal((2, grid_nodes - 1, grid_nodes - 1))
    stats = ShiftStats(
        mean=rng.standard_normal((1, grid_nodes, grid_nodes)) * 0.1,
        std=np.abs(rng.standard_normal((1, grid_nodes, grid_nodes))) + 0.5,
    )
    cot = rng.standard_normal((1, grid_nodes, grid_nodes))
    _, tape = model_forward(params, cfg, x, mask, stats)
    grads = model_vjp(params, cfg, tape, cot)
    flat = params.flatten()
    gref = np.concatenate([grads[k].ravel() for k in params.arrays])
    h = 1e-6
    worst = 0.0
    idx = rng.choice(flat.size, size=min(120, flat.size), replace=False)
    for i in idx:
        fp = flat.copy()
        fp[i] += h
        ap, _ = model_forward(ModelParams.unflatten(cfg, fp), cfg, x, mask, stats)
        fm = flat.copy()
        fm[i] -= h
        am, _ = model_forward(ModelParams.unflatten(cfg, fm), cfg, x, mask, stats)
        fd = (np.sum(ap * cot) - np.sum(am * cot)) / (2 * h)
        denom = max(abs(fd), abs(gref[i]), 1e-8)
        worst = max(worst, abs(fd - gref[i]) / denom)
    return worst


def _cmd_grad_check(args) -> int:
    err = _grad_check_value(args.seed)
    print(f"max relative gradient error: {err:.3e} (tolerance {GRAD_CHECK_TOL:.0e})")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        write_csv(Path(args.out) / "grad_check.csv", ("max_rel_error", "tolerance"), [(err, GRAD_CHECK_TOL)])
    return 0 if err < GRAD_CHECK_TOL else 2


def _cmd_oracle_check(args) -> int:
    pset, _ = _sampled_problem_set(args.problem, args.resolution, 3, args.seed)
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for i in range(len(pset)):
        prob = pset.single(i)
        sys_d = assemble_dense(prob)
        a = rng.standard_normal(prob.node_shape)
        r_mf = prob.residual(a).ravel()
        r_dn = sys_d.K @ a.ravel() - sys_d.P
        scale = max(float(np.max(np.abs(r_dn))), 1e-300)
        worst = max(worst, float(np.max(np.abs(r_mf - r_dn))) / scale)
    print(f"max relative matrix-free/dense discrepancy: {worst:.3e} (tolerance {ORACLE_TOL:.0e})")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        write_csv(Path(args.out) / "oracle_check.csv", ("max_rel_error", "tolerance"), [(worst, ORACLE_TOL)])
    return 0 if worst < ORACLE_TOL else 2


def _cmd_run_experiment(args) -> int:
    over = _load_overrides(args.config)
    defaults = {
        "scaling": {"problem": "heat"},
        "resolution": {"problem": "darcy", "epochs": 3, "n_train": 32, "n_test": 16},
        "generalization": {"problem": "elasticity-b", "epochs": 60, "n_train": 100},
        "strategy-compare": {"problem": "darcy", "epochs": 30, "n_train": 100, "n_test": 50},
    }[args.experiment]
    spec = ExperimentSpec(
        kind=args.experiment,
        problem=args.problem or defaults.get("problem", "heat"),
        out_dir=args.out,
        seed=args.seed,
        epochs=cfgmod.get_int(over, "epochs", defaults.get("epochs", 100)),
        n_train=cfgmod.get_int(over, "n_train", defaults.get("n_train", 200)),
        n_test=cfgmod.get_int(over, "n_test", defaults.get("n_test", 200)),
        n_nodes=cfgmod.get_int(over, "n_nodes", 33),
        n_steps=cfgmod.get_int(over, "n_steps", 2),
        hidden=cfgmod.get_int(over, "hidden", 16),
        layers=cfgmod.get_int(over, "layers", 2),
        kernel=cfgmod.get_int(over, "kernel", 3),
        lr=cfgmod.get_float(over, "lr", 2e-3),
        batch_size=cfgmod.get_int(over, "batch_size", 16),
    )
    if "sizes" in over:
        spec.sizes = tuple(int(s) for s in over["sizes"].split(","))
    if "resolutions" in over:
        spec.resolutions = tuple(int(s) for s in over["resolutions"].split(","))
    run_experiment(spec)
    print(f"experiment {args.experiment} complete; artifacts in {args.out}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "solve": _cmd_solve,
    "compare-cg": _cmd_compare_cg,
    "grad-check": _cmd_grad_check,
    "oracle-check": _cmd_oracle_check,
    "run-experiment": _cmd_run_experiment,
}


def cli_main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = _build_parser()
    if not argv:
        parser.print_usage()
        return 1
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage()
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (VolfemError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


def main():  # console entry point
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()
