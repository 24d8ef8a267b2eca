"""Global 2D reconstruction of log-conductivity from power densities.

Pipeline: the frame angle gradient is algebraic in the data,

    grad(theta) = (V[0,1] - V[1,0] - J grad log sqrt(det H)) / 2,
    J = [[0, -1], [1, 0]],

theta is anchored at a boundary minimum of the first illumination
(where the frame's first column equals the inward normal by the maximum
principle), then integrated along straight segments to every node.
The conductivity half-log-gradient

    F = (grad log sqrt(det H) + sum_ij ((V[i,j]+V[j,i]) . R_i) R_j) / 2

integrates to log sigma from an interior anchor value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .acquisition import PowerDensityData
from .algebra import (
    connection_fields,
    log_det_sqrt,
    transition_field,
)
from .errors import AnchorError, ConfigError, SingularityError
from .fields import ScalarField, VectorField
from .forward import Illumination
from .grids import (
    Grid,
    boundary_node_indices,
    boundary_outward_normal,
    is_corner_node,
)
from .operators import (
    gradient_of_components,
    line_integrals,
    w1inf_distance,
    w1inf_norm,
)

__all__ = [
    "theta_gradient",
    "boundary_anchor",
    "reconstruct_theta",
    "assemble_half_log_gradient",
    "reconstruct_2d",
    "ReconResult2D",
    "stability_probe_2d",
]


def _require_det_floor(data: PowerDensityData, c0: float, what: str) -> None:
    det = data.det_values()
    floor = c0 * c0
    if float(np.min(det)) < floor:
        raise SingularityError(
            f"{what}: det H < c0^2 = {floor:.3e} at "
            f"{int(np.sum(det < floor))} nodes (min {float(np.min(det)):.3e})",
            min_det=float(np.min(det)),
            num_nodes=int(np.sum(det < floor)),
        )


def theta_gradient(data: PowerDensityData, c0: float = 0.0) -> VectorField:
    """Algebraic gradient of the frame angle from 2D power densities."""
    if data.m != 2:
        raise ConfigError("theta_gradient: need exactly 2x2 power densities")
    _require_det_floor(data, c0, "theta_gradient")
    tf = transition_field(data.matrix, c0=c0)
    v = connection_fields(tf)
    grad_lds = gradient_of_components(log_det_sqrt(data.matrix).values, data.grid)
    # J grad: (J v)_1 = -v_2, (J v)_2 = v_1
    j_grad = np.stack([-grad_lds[..., 1], grad_lds[..., 0]], axis=-1)
    vals = 0.5 * (v.values[..., 0, 1, :] - v.values[..., 1, 0, :] - j_grad)
    return VectorField(data.grid, vals, name="grad_theta")


def boundary_anchor(g1: Illumination, data: PowerDensityData):
    """Anchor node and angle from the minimum of the first illumination.

    At a face node minimizing g1, the first frame column points along the
    inward normal.  Returns (point, theta, diagnostics); corner-only
    minima raise AnchorError.
    """
    grid = g1.grid
    if data is not None and data.grid != grid:
        raise ConfigError("boundary_anchor: data grid differs from illumination")
    idx = boundary_node_indices(grid)
    vals = g1.values
    vmin = float(np.min(vals))
    tol = 1e-12 * (1.0 + abs(vmin))
    minimizers = np.nonzero(vals <= vmin + tol)[0]
    face_hits = [
        m for m in minimizers if not is_corner_node(grid, idx[m])
    ]
    if not face_hits:
        raise AnchorError(
            "boundary_anchor: illumination minimum attained only at "
            "corner/edge nodes, where the normal is undefined"
        )
    chosen = face_hits[0]  # boundary indices are lexicographic already
    node = idx[chosen]
    normal = boundary_outward_normal(grid, node)
    point = grid.origin + node * grid.spacing
    theta = float(np.arctan2(-normal[1], -normal[0]))
    diagnostics = {
        "num_minimizers": int(len(minimizers)),
        "num_face_minimizers": int(len(face_hits)),
        "tie": bool(len(minimizers) > 1),
        "node": tuple(int(i) for i in node),
    }
    return point, theta, diagnostics


def reconstruct_theta(
    grad_theta: VectorField, anchor_point, anchor_theta: float
) -> ScalarField:
    """Integrate the angle gradient from the anchor to every node."""
    grid = grad_theta.grid
    grid.require_inside(np.asarray(anchor_point)[None], what="anchor")
    targets = grid.node_coordinates()
    starts = np.broadcast_to(np.asarray(anchor_point, dtype=float), targets.shape)
    integrals = line_integrals(grad_theta, starts, targets)
    theta = anchor_theta + integrals.reshape(grid.resolution, order="F")
    return ScalarField(grid, theta, name="theta")


def _frames_from_theta(theta: np.ndarray):
    cos, sin = np.cos(theta), np.sin(theta)
    r1 = np.stack([cos, sin], axis=-1)
    r2 = np.stack([-sin, cos], axis=-1)
    return r1, r2


def assemble_half_log_gradient(
    data: PowerDensityData, theta: ScalarField, c0: float = 0.0
) -> VectorField:
    """The field F = grad(log sigma)/2 assembled from data and angle."""
    tf = transition_field(data.matrix, c0=c0)
    v = connection_fields(tf)
    grad_lds = gradient_of_components(log_det_sqrt(data.matrix).values, data.grid)
    r1, r2 = _frames_from_theta(theta.values)
    frames = np.stack([r1, r2], axis=-2)  # (..., i, comp): row i = R_i
    sym = v.values + np.swapaxes(v.values, -3, -2)  # V[i,j] + V[j,i]
    proj = np.einsum("...ijx,...ix->...ij", sym, frames)
    vals = 0.5 * (grad_lds + np.einsum("...ij,...jx->...x", proj, frames))
    return VectorField(data.grid, vals, name="half_log_grad")


@dataclass
class ReconResult2D:
    log_sigma: ScalarField
    theta: ScalarField
    half_log_grad: VectorField
    anchor_point: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def reconstruct_2d(
    data: PowerDensityData,
    g1: Illumination,
    sigma_anchor_point,
    log_sigma_anchor: float,
    c0: float = 0.0,
) -> ReconResult2D:
    """Full 2D reconstruction from power densities and one illumination."""
    if data.m != 2:
        raise ConfigError("reconstruct_2d: need 2x2 power densities")
    grid = data.grid
    grid.require_inside(np.asarray(sigma_anchor_point)[None], what="sigma anchor")
    grad_theta = theta_gradient(data, c0=c0)
    anchor_pt, anchor_th, anchor_diag = boundary_anchor(g1, data)
    theta = reconstruct_theta(grad_theta, anchor_pt, anchor_th)
    f_field = assemble_half_log_gradient(data, theta, c0=c0)
    targets = grid.node_coordinates()
    starts = np.broadcast_to(
        np.asarray(sigma_anchor_point, dtype=float), targets.shape
    )
    ls = log_sigma_anchor + 2.0 * line_integrals(f_field, starts, targets).reshape(
        grid.resolution, order="F"
    )
    log_sigma = ScalarField(grid, ls, name="log_sigma")

    # path-independence probe: reroute through a detour node for a sample
    rng = np.random.Generator(np.random.PCG64(20240501))
    probe_ids = rng.choice(grid.num_nodes, size=min(16, grid.num_nodes), replace=False)
    detour = grid.origin + 0.25 * (grid.upper - grid.origin)
    probe_targets = targets[probe_ids]
    leg1 = line_integrals(
        f_field,
        np.broadcast_to(np.asarray(sigma_anchor_point, dtype=float), (len(probe_ids), 2)),
        np.broadcast_to(detour, (len(probe_ids), 2)),
    )
    leg2 = line_integrals(
        f_field, np.broadcast_to(detour, probe_targets.shape), probe_targets
    )
    direct = line_integrals(
        f_field,
        np.broadcast_to(np.asarray(sigma_anchor_point, dtype=float), probe_targets.shape),
        probe_targets,
    )
    path_gap = float(np.max(np.abs(leg1 + leg2 - direct)))

    diagnostics = {
        "anchor": anchor_diag,
        "theta_anchor": anchor_th,
        "path_independence_gap": path_gap,
        "min_det": float(np.min(data.det_values())),
    }
    return ReconResult2D(
        log_sigma=log_sigma,
        theta=theta,
        half_log_grad=f_field,
        anchor_point=np.asarray(anchor_pt),
        diagnostics=diagnostics,
    )


def _wrap_angle(values: np.ndarray) -> np.ndarray:
    return np.mod(values + np.pi, 2.0 * np.pi) - np.pi


def stability_probe_2d(
    clean: PowerDensityData,
    noisy: PowerDensityData,
    g1: Illumination,
    sigma_anchor_point,
    log_sigma_anchor: float,
    c0: float,
) -> dict:
    """Reconstruct from both data sets and report Lipschitz ratios.

    Both inputs must satisfy the determinant condition det H >= c0^2;
    angle differences are reduced modulo 2 pi.
    """
    for name, d in (("clean", clean), ("noisy", noisy)):
        det = d.det_values()
        if float(np.min(det)) < c0 * c0:
            raise SingularityError(
                f"stability_probe_2d: {name} data violates det H >= c0^2 "
                f"(min {float(np.min(det)):.3e} < {c0 * c0:.3e})",
                min_det=float(np.min(det)),
                num_nodes=int(np.sum(det < c0 * c0)),
            )
    rec = reconstruct_2d(clean, g1, sigma_anchor_point, log_sigma_anchor, c0=c0)
    rec_n = reconstruct_2d(noisy, g1, sigma_anchor_point, log_sigma_anchor, c0=c0)
    h_dist = w1inf_distance(clean.matrix, noisy.matrix)
    theta_diff = ScalarField(
        clean.grid, _wrap_angle(rec_n.theta.values - rec.theta.values)
    )
    ls_diff = ScalarField(clean.grid, rec_n.log_sigma.values - rec.log_sigma.values)
    theta_err = w1inf_norm(theta_diff)
    ls_err = w1inf_norm(ls_diff)
    return {
        "h_w1inf": float(w1inf_norm(clean.matrix)),
        "noise_w1inf": float(h_dist),
        "theta_err_w1inf": float(theta_err),
        "log_sigma_err_w1inf": float(ls_err),
        "theta_ratio": float(theta_err / h_dist) if h_dist > 0 else 0.0,
        "log_sigma_ratio": float(ls_err / h_dist) if h_dist > 0 else 0.0,
    }
