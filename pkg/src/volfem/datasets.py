"""Dataset generation and on-disk layout.

A dataset has an unlabeled training split, a small labeled shift split
(5 samples by default, used only for the distribution-shift statistics), and
a labeled test split. Labels are matrix-free conjugate-gradient solutions at
a recorded tolerance. Every random draw derives from the master seed and the
sample index, so regeneration is bit-identical.

Disk layout: ``metadata.cfg`` plus one named-array container per sample in
``train/``, ``shift/``, and ``test/`` subdirectories.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .config import read_config, write_config
from .arrayio import read_container, write_container
from .fields import field_norm
from .grid import StructuredGrid
from .materials import LaminaProperties
from .problems import ProblemSet, default_grid
from .sampling import (
    GrfConfig,
    sample_darcy_conductivity,
    sample_fiber_bspline,
    sample_fiber_linear,
    sample_grf_pair,
)
from .solvers import cg_solve
from .training import Dataset

__all__ = ["build_dataset", "generate_dataset", "save_dataset", "load_dataset", "label_with_cg"]

LABEL_TOL = 1e-10
FIBER_RANGE = np.deg2rad(60.0)
BSPLINE_CONTROL = 5
DATASET_FORMAT_VERSION = 1

_STREAMS = {"train": 0, "shift": 1, "test": 2}


def _sample_rng(seed: int, stream: str, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(_STREAMS[stream], index)))


def _draw_sample(kind: str, grid: StructuredGrid, rng, grf: GrfConfig, gauss_order: int):
    """One input sample: (gauss_params (n_g,ny,nx), model_input (c,h,w))."""
    if kind == "heat":
        gauss, _ = sample_grf_pair(grid, grf, order=gauss_order, rng=rng)
        return gauss.data, gauss.data
    if kind == "darcy":
        gauss, node = sample_darcy_conductivity(grid, grf, order=gauss_order, rng=rng)
        return gauss.data, node.data
    if kind == "elasticity-a":
        t0, t1 = rng.uniform(-FIBER_RANGE, FIBER_RANGE, size=2)
        field = sample_fiber_linear(t0, t1, grid, order=gauss_order)
        return field.data, field.data
    if kind == "elasticity-b":
        control = rng.uniform(-FIBER_RANGE, FIBER_RANGE, size=(BSPLINE_CONTROL, BSPLINE_CONTROL))
        field = sample_fiber_bspline(control, grid, order=gauss_order)
        return field.data, field.data
    raise ValueError(f"unknown problem kind {kind!r}")


def _draw_split(kind, grid, n_samples, seed, stream, grf, gauss_order):
    params, inputs = [], []
    for i in range(n_samples):
        p, x = _draw_sample(kind, grid, _sample_rng(seed, stream, i), grf, gauss_order)
        params.append(p)
        inputs.append(x)
    return np.array(params), np.array(inputs)


def label_with_cg(problem_set: ProblemSet, tol: float = LABEL_TOL, chunk: int = 16, maxiter: int | None = None):
    """Reference solutions for every sample in the set, solved in batches.

    Aborts with the failing sample index if any sample misses the tolerance
    within the iteration budget.
    """
    labels = []
    for start in range(0, len(problem_set), chunk):
        idx = np.arange(start, min(start + chunk, len(problem_set)))
        prob = problem_set.subset(idx)
        a, _ = cg_solve(prob, tol=tol, maxiter=maxiter)
        defect = field_norm(prob.mask.apply(prob.residual(a)))
        bound = tol * np.maximum(field_norm(prob.mask.apply(prob.load_vec - prob.matvec(prob.mask.shift))), 1e-300)
        bad = np.flatnonzero(np.atleast_1d(defect > bound))
        if bad.size:
            raise RuntimeError(f"labeling failed to converge for sample {int(idx[bad[0]])}")
        labels.append(a if a.ndim == 4 else a[None])
    return np.concatenate(labels, axis=0)


def build_dataset(
    kind: str,
    n_nodes: int,
    n_train: int,
    n_test: int,
    n_shift: int = 5,
    seed: int = 0,
    grf: GrfConfig | None = None,
    gauss_order: int = 2,
    label_tol: float = LABEL_TOL,
    lamina: LaminaProperties | None = None,
) -> Dataset:
    """Generate a dataset in memory; training inputs stay unlabeled."""
    grid = default_grid(kind, n_nodes)
    grf = grf or GrfConfig(seed=seed)
    train_params, train_inputs = _draw_split(kind, grid, n_train, seed, "train", grf, gauss_order)
    shift_params, shift_inputs = _draw_split(kind, grid, n_shift, seed, "shift", grf, gauss_order)
    test_params, test_inputs = _draw_split(kind, grid, n_test, seed, "test", grf, gauss_order)
    shift_labels = label_with_cg(ProblemSet(kind, grid, shift_params, gauss_order, lamina), tol=label_tol)
    test_labels = None
    if n_test:
        test_labels = label_with_cg(ProblemSet(kind, grid, test_params, gauss_order, lamina), tol=label_tol)
    meta = {
        "dataset_format_version": DATASET_FORMAT_VERSION,
        "problem": kind,
        "n_nodes": n_nodes,
        "nx": grid.nx,
        "ny": grid.ny,
        "hx": grid.hx,
        "hy": grid.hy,
        "gauss_order": gauss_order,
        "n_train": n_train,
        "n_shift": n_shift,
        "n_test": n_test,
        "seed": seed,
        "label_solver": "cg",
        "label_tol": label_tol,
        "grf_length_scale": grf.length_scale,
        "grf_variance": grf.variance,
        "grf_mean": grf.mean,
        "fiber_range_deg": np.rad2deg(FIBER_RANGE),
        "bspline_control": BSPLINE_CONTROL,
        "provenance": "artifact-default",
    }
    return Dataset(
        kind=kind,
        grid=grid,
        train_params=train_params,
        train_model_inputs=train_inputs,
        shift_params=shift_params,
        shift_model_inputs=shift_inputs,
        shift_labels=shift_labels,
        test_params=test_params if n_test else None,
        test_model_inputs=test_inputs if n_test else None,
        test_labels=test_labels,
        meta=meta,
    )


def save_dataset(ds: Dataset, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_config(out / "metadata.cfg", ds.meta)
    splits = {
        "train": (ds.train_params, ds.train_model_inputs, None),
        "shift": (ds.shift_params, ds.shift_model_inputs, ds.shift_labels),
        "test": (ds.test_params, ds.test_model_inputs, ds.test_labels),
    }
    for split, (params, inputs, labels) in splits.items():
        if params is None:
            continue
        sub = out / split
        sub.mkdir(exist_ok=True)
        for i in range(params.shape[0]):
            arrays = {"param_gauss": params[i], "model_input": inputs[i]}
            if labels is not None:
                arrays["label"] = labels[i]
            write_container(sub / f"sample_{i:05d}.volc", arrays, {"index": i, "split": split})


def generate_dataset(kind, n_nodes, n_train, n_test, out_dir, n_shift=5, seed=0, **kwargs) -> Dataset:
    """Build a dataset and persist it; returns the in-memory copy."""
    ds = build_dataset(kind, n_nodes, n_train, n_test, n_shift=n_shift, seed=seed, **kwargs)
    save_dataset(ds, out_dir)
    return ds


def _load_split(path: Path, labeled: bool):
    files = sorted(path.glob("sample_*.volc"))
    if not files:
        return None, None, None
    params, inputs, labels = [], [], []
    for f in files:
        arrays, _ = read_container(f)
        params.append(arrays["param_gauss"])
        inputs.append(arrays["model_input"])
        if labeled:
            labels.append(arrays["label"])
    return (
        np.array(params),
        np.array(inputs),
        np.array(labels) if labeled and labels else None,
    )


def load_dataset(path) -> Dataset:
    root = Path(path)
    meta = read_config(root / "metadata.cfg")
    grid = StructuredGrid(
        nx=int(meta["nx"]), ny=int(meta["ny"]), hx=float(meta["hx"]), hy=float(meta["hy"])
    )
    train_params, train_inputs, _ = _load_split(root / "train", labeled=False)
    shift_params, shift_inputs, shift_labels = _load_split(root / "shift", labeled=True)
    test_params, test_inputs, test_labels = _load_split(root / "test", labeled=True)
    return Dataset(
        kind=meta["problem"],
        grid=grid,
        train_params=train_params,
        train_model_inputs=train_inputs,
        shift_params=shift_params,
        shift_model_inputs=shift_inputs,
        shift_labels=shift_labels,
        test_params=test_params,
        test_model_inputs=test_inputs,
        test_labels=test_labels,
        meta=meta,
    )
