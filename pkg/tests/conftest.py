import numpy as np
import pytest

from volfem.model import ModelParams, model_forward


def central_diff_param_grad(params, cfg, x, mask, stats, cotangent, indices, h=1e-6):
    """Finite-difference gradient of <output, cotangent> for selected flat
    parameter indices."""
    flat = params.flatten()
    out = np.zeros(len(indices))
    for j, i in enumerate(indices):
        fp = flat.copy()
        fp[i] += h
        ap, _ = model_forward(ModelParams.unflatten(cfg, fp), cfg, x, mask, stats)
        fm = flat.copy()
        fm[i] -= h
        am, _ = model_forward(ModelParams.unflatten(cfg, fm), cfg, x, mask, stats)
        out[j] = (np.sum(ap * cotangent) - np.sum(am * cotangent)) / (2 * h)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
