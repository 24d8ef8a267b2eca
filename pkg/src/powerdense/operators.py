"""Finite-difference calculus on grid fields.

All stencils are second order: central differences in the interior and
one-sided three-point differences on the boundary (numpy.gradient with
edge_order=2).  Interpolation is multilinear; line integrals use
composite Simpson quadrature with step length at most half the smallest
grid spacing.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ConfigError
from .fields import MatrixField, ScalarField, VectorField
from .grids import Grid, Segment

__all__ = [
    "gradient",
    "gradient_of_components",
    "divergence",
    "curl",
    "sample",
    "line_integral",
    "line_integrals",
    "segment_step_counts",
    "trapezoid_integral",
    "w1inf_norm",
    "w1inf_distance",
]


def gradient_of_components(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Gradient along grid axes for every trailing component.

    Input shape ``resolution + comp``; output ``resolution + comp + (dim,)``.
    """
    h = grid.spacing
    parts = [
        np.gradient(values, h[k], axis=k, edge_order=2) for k in range(grid.dim)
    ]
    return np.stack(parts, axis=-1)


def gradient(f: ScalarField) -> VectorField:
    return VectorField(
        f.grid, gradient_of_components(f.values, f.grid), name=f"grad({f.name})"
    )


def divergence(f: VectorField) -> ScalarField:
    h = f.grid.spacing
    out = np.zeros(f.grid.resolution)
    for k in range(f.grid.dim):
        out += np.gradient(f.values[..., k], h[k], axis=k, edge_order=2)
    return ScalarField(f.grid, out, name=f"div({f.name})")


def curl(f: VectorField):
    """Scalar curl in 2D, vector curl in 3D."""
    h = f.grid.spacing

    def d(comp, axis):
        return np.gradient(f.values[..., comp], h[axis], axis=axis, edge_order=2)

    if f.grid.dim == 2:
        return ScalarField(f.grid, d(1, 0) - d(0, 1), name=f"curl({f.name})")
    vals = np.stack(
        [d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1)], axis=-1
    )
    return VectorField(f.grid, vals, name=f"curl({f.name})")


def _component_view(f) -> np.ndarray:
    if isinstance(f, ScalarField):
        return f.values[..., None]
    if isinstance(f, VectorField):
        return f.values
    if isinstance(f, MatrixField):
        m = f.block_size
        return f.values.reshape(f.grid.resolution + (m * m,))
    raise ConfigError(f"unsupported field type {type(f).__name__}")


def sample(f, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of a field at points inside the domain.

    Returns shape (M,) for scalar fields, (M, C) otherwise; a single point
    yields the corresponding 0-d/1-d result.
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    f.grid.require_inside(pts, what="sample point")
    vals = kernels.interp_many(
        _component_view(f), f.grid.origin, f.grid.spacing, pts
    )
    if isinstance(f, ScalarField):
        vals = vals[:, 0]
    elif isinstance(f, MatrixField):
        m = f.block_size
        vals = vals.reshape(len(pts), m, m)
    return vals[0] if single else vals


def segment_step_counts(grid: Grid, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """Simpson subinterval counts giving step length <= min(spacing)/2."""
    lengths = np.linalg.norm(np.atleast_2d(ends) - np.atleast_2d(starts), axis=1)
    hmin = float(np.min(grid.spacing))
    return np.maximum(1, np.ceil(lengths / (0.5 * hmin)).astype(np.int64))


def line_integral(f: VectorField, seg: Segment) -> float:
    """Integral of the tangential component along a straight segment."""
    start = np.asarray(seg.start)
    end = np.asarray(seg.end)
    f.grid.require_inside(np.stack([start, end]), what="segment endpoint")
    steps = segment_step_counts(f.grid, start[None], end[None])
    out = kernels.segment_integrals(
        f.values, f.grid.origin, f.grid.spacing, start[None], end[None], steps
    )
    return float(out[0])


def line_integrals(f: VectorField, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """Batched :func:`line_integral` over many segments."""
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    ends = np.atleast_2d(np.asarray(ends, dtype=float))
    f.grid.require_inside(starts, what="segment start")
    f.grid.require_inside(ends, what="segment end")
    steps = segment_step_counts(f.grid, starts, ends)
    return kernels.segment_integrals(
        f.values, f.grid.origin, f.grid.spacing, starts, ends, steps
    )


def trapezoid_integral(f: ScalarField) -> float:
    """Tensor-product trapezoid rule over the whole box."""
    acc = f.values
    for h in f.grid.spacing[::-1]:
        acc = np.trapezoid(acc, dx=h, axis=-1)
    return float(acc)


def w1inf_norm(f) -> float:
    """Discrete W^{1,inf} norm: max |f| plus max |grad f| over components."""
    vals = _component_view(f)
    grads = gradient_of_components(vals, f.grid)
    return float(np.max(np.abs(vals)) + np.max(np.abs(grads)))


def w1inf_distance(a, b) -> float:
    """W^{1,inf} norm of the difference of two same-shaped fields."""
    if a.grid != b.grid:
        raise ConfigError("w1inf_distance: fields live on different grids")
    diff = _component_view(a) - _component_view(b)
    grads = gradient_of_components(diff, a.grid)
    return float(np.max(np.abs(diff)) + np.max(np.abs(grads)))
