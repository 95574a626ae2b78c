"""Node/Gauss field containers and essential-boundary-condition masking.

A node field is a plain float64 ndarray of shape ``(c, ny + 1, nx + 1)``,
optionally with one leading batch axis. Its flattened layout (channel major,
then rows over y, then columns over x) is the vector ordering shared with the
dense-assembly oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "GaussField",
    "MaskSpec",
    "apply_mask",
    "apply_shift_bc",
    "field_dot",
    "field_norm",
    "mask_from_edges",
    "relative_l2",
]

EDGE_NAMES = ("left", "right", "bottom", "top")


@dataclass(frozen=True)
class GaussField:
    """Per-element, per-Gauss-slot values and physical gradients.

    ``values`` has shape ``(..., c, n_g, ny, nx)`` and ``grad`` has shape
    ``(..., c, n_g, 2, ny, nx)`` with derivative axis ordered (d/dx, d/dy).
    """

    values: np.ndarray
    grad: np.ndarray

    @property
    def n_channels(self) -> int:
        return self.values.shape[-4]

    @property
    def n_gauss(self) -> int:
        return self.values.shape[-3]


class MaskSpec:
    """Constraint pattern for essential boundary conditions.

    ``mask`` holds 1.0 on free DOFs and 0.0 on constrained ones; ``shift``
    holds the inhomogeneous constraint values and is zero wherever the mask
    is 1. Imposing the constraints on a prediction x is
    ``x * mask + shift``.
    """

    def __init__(self, mask: np.ndarray, shift: np.ndarray | None = None):
        mask = np.asarray(mask, dtype=float)
        if shift is None:
            shift = np.zeros_like(mask)
        shift = np.asarray(shift, dtype=float)
        if mask.shape != shift.shape:
            raise ValueError(f"mask shape {mask.shape} != shift shape {shift.shape}")
        if not np.all((mask == 0.0) | (mask == 1.0)):
            raise ValueError("mask entries must be 0 or 1")
        if np.any(shift * mask != 0.0):
            raise ValueError("shift must vanish on unconstrained DOFs")
        if np.any(np.all(mask == 1.0, axis=(-2, -1))):
            raise ValueError("every channel needs at least one constrained DOF")
        self.mask = mask
        self.shift = shift

    @property
    def n_channels(self) -> int:
        return self.mask.shape[0]

    @property
    def n_free(self) -> int:
        return int(self.mask.sum())

    def apply(self, x: np.ndarray) -> np.ndarray:
        return apply_mask(x, self)

    def impose(self, x: np.ndarray) -> np.ndarray:
        return apply_shift_bc(x, self)


def _check_node_shape(x: np.ndarray, m: MaskSpec):
    if x.shape[-3:] != m.mask.shape:
        raise ValueError(f"field shape {x.shape} incompatible with mask shape {m.mask.shape}")


def apply_mask(x: np.ndarray, m: MaskSpec) -> np.ndarray:
    """Zero the constrained DOFs of x."""
    _check_node_shape(x, m)
    return x * m.mask


def apply_shift_bc(x: np.ndarray, m: MaskSpec) -> np.ndarray:
    """Zero the constrained DOFs of x and write the constraint values there."""
    _check_node_shape(x, m)
    return x * m.mask + m.shift


def field_dot(a: np.ndarray, b: np.ndarray):
    """Euclidean dot over (channel, y, x); returns a scalar or per-sample (B,)."""
    return np.sum(a * b, axis=(-3, -2, -1))


def field_norm(a: np.ndarray):
    """Euclidean norm of the flattened field; per sample if batched."""
    return np.sqrt(field_dot(a, a))


def relative_l2(pred: np.ndarray, label: np.ndarray, mask: MaskSpec | None = None):
    """||pred - label|| / ||label||, restricted to free DOFs when a mask is
    given; per sample if batched."""
    if pred.shape != label.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {label.shape}")
    if mask is not None:
        pred = apply_mask(pred, mask)
        label = apply_mask(label, mask)
    denom = field_norm(label)
    if np.any(denom == 0.0):
        raise ValueError("label has zero norm on the free DOFs")
    return field_norm(pred - label) / denom


def mask_from_edges(grid, n_channels: int, edges, shift_value: float | np.ndarray = 0.0) -> MaskSpec:
    """Build a MaskSpec constraining all channels on the named boundary edges.

    ``edges`` is an iterable drawn from {'left','right','bottom','top'};
    ``shift_value`` fills the constrained entries (scalar or per-channel).
    """
    ny1, nx1 = grid.n_nodes_y, grid.n_nodes_x
    mask = np.ones((n_channels, ny1, nx1))
    for edge in edges:
        if edge not in EDGE_NAMES:
            raise ValueError(f"unknown edge {edge!r}; expected one of {EDGE_NAMES}")
        if edge == "left":
            mask[:, :, 0] = 0.0
        elif edge == "right":
            mask[:, :, -1] = 0.0
        elif edge == "bottom":
            mask[:, 0, :] = 0.0
        else:
            mask[:, -1, :] = 0.0
    shift = np.broadcast_to(np.asarray(shift_value, dtype=float).reshape(-1, 1, 1), mask.shape).copy()
    shift *= 1.0 - mask
    return MaskSpec(mask=mask, shift=shift)
