"""Pointwise matrix algebra on power-density data.

Central objects, for the flux matrix S (columns S_i = sqrt(sigma) grad u_i)
and its Gramian H = S^T S:

* a transition matrix T(x) with T^T T = H^{-1} and det T = det(H)^{-1/2} > 0,
  either the closed-form lower-triangular Gram-Schmidt factor or the
  symmetric inverse square root;
* the connection fields V[i,j] = sum_k grad(T[i,k]) * (T^{-1})[k,j],
  whose trace satisfies sum_i V[i,i] = -grad log sqrt(det H);
* the orthonormal frame R = S T^T, recoverable from ground-truth fluxes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError, SingularityError
from .fields import MatrixField, ScalarField, VectorField
from .grids import Grid
from .operators import gradient_of_components

__all__ = [
    "TransitionField",
    "ConnectionFields",
    "FrameField",
    "gram_schmidt_T",
    "transition_field",
    "connection_fields",
    "connection_fields_closed_form",
    "rotation_from_fluxes",
    "log_det_sqrt",
    "identity_report",
    "gramian_margins",
]

_REL_DET_FLOOR = 1e-12


def _hadamard_floor(h_vals: np.ndarray, c0: float) -> np.ndarray:
    """Node-wise det floor max(c0^2, eps * prod of diagonal entries).

    For symmetric positive definite matrices det <= prod(diag), so the
    ratio det / prod(diag) measures conditioning independently of scale;
    a node-wise floor keeps exponentially graded data (CGO regimes, where
    entry magnitudes vary by orders across the box) from being rejected
    on magnitude alone.
    """
    diag = np.einsum("...aa->...a", h_vals)
    prod = np.prod(np.maximum(diag, 0.0), axis=-1)
    return np.maximum(c0 * c0, _REL_DET_FLOOR * prod)


def _check_spd_dets(h_vals: np.ndarray, c0: float, what: str):
    """Leading principal minors and the det floor; returns (d2, det)."""
    h11 = h_vals[..., 0, 0]
    d2 = h11 * h_vals[..., 1, 1] - h_vals[..., 0, 1] ** 2
    det = d2 if h_vals.shape[-1] == 2 else np.linalg.det(h_vals)
    floor = _hadamard_floor(h_vals, c0)
    bad = (h11 <= 0.0) | (d2 <= 0.0) | (det < floor)
    if np.any(bad):
        raise SingularityError(
            f"{what}: determinant below floor (c0={c0:g}) at "
            f"{int(np.sum(bad))} nodes (min det {float(np.min(det)):.3e})",
            min_det=float(np.min(det)),
            num_nodes=int(np.sum(bad)),
        )
    return d2, det


def gram_schmidt_T(h: np.ndarray, c0: float = 0.0) -> np.ndarray:
    """Closed-form lower-triangular T with T^T T = H^{-1}, det T > 0.

    Accepts a single matrix (m, m) or an array of them (..., m, m).
    """
    h = np.asarray(h, dtype=float)
    single = h.ndim == 2
    if single:
        h = h[None]
    m = h.shape[-1]
    if m not in (2, 3):
        raise ConfigError(f"gram_schmidt_T: block size {m} unsupported")
    d2, det = _check_spd_dets(h, c0, "gram_schmidt_T")
    h11 = h[..., 0, 0]
    sq11 = np.sqrt(h11)
    d = np.sqrt(d2)
    t = np.zeros_like(h)
    t[..., 0, 0] = 1.0 / sq11
    t[..., 1, 0] = -h[..., 0, 1] / (sq11 * d)
    t[..., 1, 1] = sq11 / d
    if m == 3:
        big = np.sqrt(det)
        t[..., 2, 0] = (
            h[..., 0, 1] * h[..., 1, 2] - h[..., 1, 1] * h[..., 0, 2]
        ) / (d * big)
        t[..., 2, 1] = (
            h[..., 0, 1] * h[..., 0, 2] - h[..., 0, 0] * h[..., 1, 2]
        ) / (d * big)
        t[..., 2, 2] = d / big
    return t[0] if single else t


def _triangular_inverse(t: np.ndarray) -> np.ndarray:
    """Closed-form inverse of lower-triangular 2x2 / 3x3 arrays."""
    m = t.shape[-1]
    out = np.zeros_like(t)
    t11, t22 = t[..., 0, 0], t[..., 1, 1]
    out[..., 0, 0] = 1.0 / t11
    out[..., 1, 1] = 1.0 / t22
    out[..., 1, 0] = -t[..., 1, 0] / (t11 * t22)
    if m == 3:
        t33 = t[..., 2, 2]
        out[..., 2, 2] = 1.0 / t33
        out[..., 2, 1] = -t[..., 2, 1] / (t22 * t33)
        out[..., 2, 0] = (
            t[..., 1, 0] * t[..., 2, 1] - t[..., 1, 1] * t[..., 2, 0]
        ) / (t11 * t22 * t33)
    return out


def _symmetric_inverse_sqrt(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    evals, evecs = np.linalg.eigh(h)
    inv_root = np.einsum(
        "...ab,...b,...cb->...ac", evecs, 1.0 / np.sqrt(evals), evecs
    )
    root = np.einsum("...ab,...b,...cb->...ac", evecs, np.sqrt(evals), evecs)
    return inv_root, root


@dataclass
class TransitionField:
    """Node-wise transition matrices and their inverses."""

    grid: Grid
    t: np.ndarray  # resolution + (m, m)
    t_inv: np.ndarray
    construction: str  # 'gram_schmidt' | 'symmetric'

    @property
    def m(self) -> int:
        return self.t.shape[-1]

    def entry(self, i: int, j: int) -> ScalarField:
        return ScalarField(self.grid, self.t[..., i, j], name=f"T[{i},{j}]")


def transition_field(
    data_or_matrix, c0: float = 0.0, construction: str = "gram_schmidt"
) -> TransitionField:
    """Build T(x) on every node from power-density data.

    ``construction`` selects the lower-triangular Gram-Schmidt factor
    (default) or the symmetric inverse square root H^{-1/2}.
    """
    mat = getattr(data_or_matrix, "matrix", data_or_matrix)
    grid = mat.grid
    h = mat.values
    if construction == "gram_schmidt":
        t = gram_schmidt_T(h, c0=c0)
        t_inv = _triangular_inverse(t)
    elif construction == "symmetric":
        _check_spd_dets(h, c0, "transition_field")
        t, t_inv = _symmetric_inverse_sqrt(h)
    else:
        raise ConfigError(f"transition_field: unknown construction '{construction}'")
    return TransitionField(grid=grid, t=t, t_inv=t_inv, construction=construction)


@dataclass
class ConnectionFields:
    """V[i,j](x) = sum_k grad(T[i,k]) (T^{-1})[k,j], a vector per (i,j)."""

    grid: Grid
    values: np.ndarray  # resolution + (m, m, dim)

    @property
    def m(self) -> int:
        return self.values.shape[-2]

    def entry(self, i: int, j: int) -> VectorField:
        return VectorField(self.grid, self.values[..., i, j, :], name=f"V[{i},{j}]")

    def trace(self) -> np.ndarray:
        return np.einsum("...iix->...x", self.values)


def connection_fields(tf: TransitionField) -> ConnectionFields:
    """Generic V via stencil gradients of T contracted with T^{-1}."""
    grad_t = gradient_of_components(tf.t, tf.grid)  # res + (m, m, dim)
    vals = np.einsum("...ikd,...kj->...ijd", grad_t, tf.t_inv)
    return ConnectionFields(grid=tf.grid, values=vals)


def connection_fields_closed_form(tf: TransitionField) -> ConnectionFields:
    """Direct formulas for the lower-triangular construction.

    Diagonal entries are grad log T[i,i]; the first subdiagonal satisfies
    V[i+1,i] = (T[i+1,i+1]/T[i,i]) grad(T[i+1,i]/T[i+1,i+1]); all entries
    above the diagonal vanish.
    """
    if tf.construction != "gram_schmidt":
        raise ConfigError("closed-form connection fields need the Gram-Schmidt T")
    g = tf.grid
    m = tf.m
    t = tf.t
    vals = np.zeros(g.resolution + (m, m, g.dim))

    def grad(arr):
        return gradient_of_components(arr, g)

    for i in range(m):
        vals[..., i, i, :] = grad(np.log(t[..., i, i]))
    for i in range(m - 1):
        ratio = t[..., i + 1, i] / t[..., i + 1, i + 1]
        vals[..., i + 1, i, :] = (
            t[..., i + 1, i + 1] / t[..., i, i]
        )[..., None] * grad(ratio)
    if m == 3:
        # V[2,0] couples two subdiagonal entries; use the defining sum.
        tinv = tf.t_inv
        vals[..., 2, 0, :] = (
            grad(t[..., 2, 0]) * tinv[..., 0, 0][..., None]
            + grad(t[..., 2, 1]) * tinv[..., 1, 0][..., None]
            + grad(t[..., 2, 2]) * tinv[..., 2, 0][..., None]
        )
    return ConnectionFields(grid=g, values=vals)


@dataclass
class FrameField:
    """Node-wise rotation matrices R = S T^T (ground-truth side)."""

    grid: Grid
    values: np.ndarray  # resolution + (n, n), columns are the frame vectors

    def angle(self) -> ScalarField:
        if self.values.shape[-1] != 2:
            raise ConfigError("angle: only defined for 2D frames")
        th = np.arctan2(self.values[..., 1, 0], self.values[..., 0, 0])
        return ScalarField(self.grid, th, name="theta")

    def flat_columns(self) -> np.ndarray:
        """Frames as 9-vectors (columns stacked), shape resolution + (9,)."""
        n = self.values.shape[-1]
        return np.swapaxes(self.values, -1, -2).reshape(
            self.grid.resolution + (n * n,)
        )


def rotation_from_fluxes(fluxes, tf: TransitionField, tol: float = 1e-6) -> FrameField:
    """R = S T^T from ground-truth fluxes; validates orthonormality.

    Only the first n = dim flux fields enter (the frame is square).
    """
    grid = tf.grid
    n = grid.dim
    if len(fluxes) < n:
        raise ConfigError(f"rotation_from_fluxes: need {n} flux fields")
    s_mat = np.stack([f.values for f in fluxes[:n]], axis=-1)  # (..., comp, col)
    r = np.einsum("...aj,...ij->...ai", s_mat, tf.t[..., :n, :n])
    gram = np.einsum("...ai,...aj->...ij", r, r)
    eye = np.eye(n)
    gap = float(np.max(np.abs(gram - eye)))
    if gap > tol:
        raise NumericalError(
            f"rotation_from_fluxes: frame not orthonormal (max gap {gap:.3e}); "
            "check det(S) > 0 and the determinant floor"
        )
    det = np.linalg.det(r)
    if np.any(det < 0):
        raise NumericalError(
            "rotation_from_fluxes: negative orientation; flux determinant "
            "must be positive (reorder or flip a flux field)"
        )
    return FrameField(grid=grid, values=r)


def log_det_sqrt(data_or_matrix) -> ScalarField:
    """log sqrt(det H) as a scalar field."""
    mat = getattr(data_or_matrix, "matrix", data_or_matrix)
    det = np.linalg.det(mat.values) if mat.block_size > 2 else (
        mat.values[..., 0, 0] * mat.values[..., 1, 1] - mat.values[..., 0, 1] ** 2
    )
    if np.any(det <= 0):
        raise SingularityError(
            "log_det_sqrt: non-positive determinant",
            min_det=float(np.min(det)),
            num_nodes=int(np.sum(det <= 0)),
        )
    return ScalarField(mat.grid, 0.5 * np.log(det), name="log_det_sqrt")


def gramian_margins(h_vals: np.ndarray) -> dict[str, float]:
    """Node-wise inequality chain for SPD Gramians, reported as margins.

    With the max-abs-entry norm |H| and block size n:
    |H^{-1}|^{-n} <= det H <= prod_i H[i,i] <= |H|^n.
    Margins are the smallest node-wise slack of each inequality
    (non-negative when the chain holds).
    """
    n = h_vals.shape[-1]
    det = np.linalg.det(h_vals)
    diag_prod = np.prod(np.diagonal(h_vals, axis1=-2, axis2=-1), axis=-1)
    norm_h = np.max(np.abs(h_vals), axis=(-1, -2))
    inv_norm = np.max(np.abs(np.linalg.inv(h_vals)), axis=(-1, -2))
    lower = inv_norm ** (-float(n))
    upper = norm_h ** float(n)
    return {
        "lower_vs_det": float(np.min(det - lower)),
        "det_vs_diag": float(np.min(diag_prod - det)),
        "diag_vs_upper": float(np.min(upper - diag_prod)),
    }


def identity_report(data_or_matrix, c0: float = 0.0) -> dict[str, float]:
    """Residuals of the defining pointwise identities on a data set.

    Keys: 'transition_residual' (max |T^T T H - I|), 'symmetric_residual'
    (same for H^{-1/2}), 'liouville_residual'
    (max |sum_i V[i,i] + grad log sqrt det H|), 'closed_form_gap'
    (generic vs closed-form V), plus the Gramian chain margins.
    """
    mat = getattr(data_or_matrix, "matrix", data_or_matrix)
    h = mat.values
    eye = np.eye(mat.block_size)
    out: dict[str, float] = {}

    tf = transition_field(mat, c0=c0, construction="gram_schmidt")
    resid = np.einsum("...ki,...kj->...ij", tf.t, tf.t)
    resid = np.einsum("...ik,...kj->...ij", resid, h) - eye
    out["transition_residual"] = float(np.max(np.abs(resid)))

    ts = transition_field(mat, c0=c0, construction="symmetric")
    resid = np.einsum("...ki,...kj->...ij", ts.t, ts.t)
    resid = np.einsum("...ik,...kj->...ij", resid, h) - eye
    out["symmetric_residual"] = float(np.max(np.abs(resid)))

    v = connection_fields(tf)
    lds = log_det_sqrt(mat)
    grad_lds = gradient_of_components(lds.values, mat.grid)
    out["liouville_residual"] = float(np.max(np.abs(v.trace() + grad_lds)))

    v_cf = connection_fields_closed_form(tf)
    out["closed_form_gap"] = float(np.max(np.abs(v.values - v_cf.values)))

    out.update(gramian_margins(h))
    return out
