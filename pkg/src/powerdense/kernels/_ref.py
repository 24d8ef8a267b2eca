"""NumPy reference kernels.

Semantics contract shared with the compiled backend
(``powerdense._kernels``):

* ``interp_many`` — multilinear interpolation of a multi-component nodal
  array at arbitrary points; cells clamped to the grid, fractional
  coordinates clipped to [0, 1].
* ``segment_integrals`` — per-lane composite Simpson quadrature of
  ``dot(end-start, A(x(t)))`` over t in [0, 1].
* ``rotation_ode`` — per-lane classical RK4 on the coupled
  (frame, log-conductivity) state along straight segments, with a
  nearest-rotation polar projection after every step.

The component layout for ``rotation_ode`` packs per node, in order:
27 connection values V[a, b, component], 3 components of the gradient of
log sqrt(det H), and log sqrt(det H) itself (31 values total).
"""

from __future__ import annotations

import numpy as np

_CYCLIC = ((0, 1, 2), (1, 2, 0), (2, 0, 1))


def _cells(origin, spacing, counts, points):
    t = (points - origin) / spacing
    cell = np.floor(t).astype(np.intp)
    np.clip(cell, 0, np.asarray(counts, dtype=np.intp) - 2, out=cell)
    frac = np.clip(t - cell, 0.0, 1.0)
    return cell, frac


def interp_many(values, origin, spacing, points):
    """Interpolate ``values`` (shape counts + (C,)) at ``points`` (M, d)."""
    values = np.asarray(values, dtype=float)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d = points.shape[1]
    counts = values.shape[:d]
    cell, frac = _cells(np.asarray(origin), np.asarray(spacing), counts, points)
    if d == 2:
        i, j = cell[:, 0], cell[:, 1]
        fx, fy = frac[:, 0:1], frac[:, 1:2]
        gx, gy = 1.0 - fx, 1.0 - fy
        return (
            gx * gy * values[i, j]
            + fx * gy * values[i + 1, j]
            + gx * fy * values[i, j + 1]
            + fx * fy * values[i + 1, j + 1]
        )
    i, j, k = cell[:, 0], cell[:, 1], cell[:, 2]
    fx, fy, fz = frac[:, 0:1], frac[:, 1:2], frac[:, 2:3]
    gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
    return (
        gx * gy * gz * values[i, j, k]
        + fx * gy * gz * values[i + 1, j, k]
        + gx * fy * gz * values[i, j + 1, k]
        + fx * fy * gz * values[i + 1, j + 1, k]
        + gx * gy * fz * values[i, j, k + 1]
        + fx * gy * fz * values[i + 1, j, k + 1]
        + gx * fy * fz * values[i, j + 1, k + 1]
        + fx * fy * fz * values[i + 1, j + 1, k + 1]
    )


def segment_integrals(values, origin, spacing, starts, ends, steps):
    """Composite Simpson line integrals of a vector field along segments.

    ``values`` has shape counts + (d,); ``starts``/``ends`` are (M, d);
    ``steps`` (M,) positive subinterval counts.  Returns (M,).
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    ends = np.atleast_2d(np.asarray(ends, dtype=float))
    steps = np.asarray(steps, dtype=np.intp)
    origin = np.asarray(origin, dtype=float)
    spacing = np.asarray(spacing, dtype=float)
    dirs = ends - starts
    out = np.zeros(len(starts))
    nmax = int(steps.max()) if steps.size else 0
    inv = 1.0 / steps

    def f_at(t):
        pos = starts + t[:, None] * dirs
        vals = interp_many(values, origin, spacing, pos)
        return np.einsum("md,md->m", dirs, vals)

    f_left = f_at(np.zeros(len(starts)))
    for s in range(nmax):
        active = s < steps
        t0 = np.minimum(s * inv, 1.0)
        tm = np.minimum((s + 0.5) * inv, 1.0)
        t1 = np.minimum((s + 1.0) * inv, 1.0)
        f0 = np.where(active, f_left, 0.0)
        fm = f_at(tm)
        f1 = f_at(t1)
        out += np.where(active, (inv / 6.0) * (f0 + 4.0 * fm + f1), 0.0)
        f_left = f1
    return out


def _dots(vp, rm):
    # vp (M,3,3,3): V[a,b,component]; rm (M,3,3): rm[c] = c-th frame column
    return np.einsum("mabx,mcx->mabc", vp, rm)


def _rhs(vp, gld, rm, dirs):
    """Frame/log-sigma derivatives along direction ``dirs``.

    Returns (dR (M,3,3), dls (M,)).
    """
    d = _dots(vp, rm)
    w = np.einsum("mpx,mx->mp", rm, dirs)
    c = np.empty((len(rm), 3, 3))
    for i, j, k in _CYCLIC:
        c[:, i, i] = 0.5 * (
            d[:, k, j, i] - d[:, j, k, i]
            - d[:, i, k, j] - d[:, k, i, j]
            + d[:, j, i, k] + d[:, i, j, k]
        )
        c[:, i, j] = (
            d[:, i, k, i] + d[:, k, i, i]
            + d[:, k, j, j] - 2.0 * d[:, j, k, j]
            + 2.0 * d[:, j, j, k] + d[:, k, k, k] - d[:, i, i, k]
        ) / 3.0
        c[:, i, k] = (
            -d[:, i, j, i] - d[:, j, i, i]
            - d[:, j, j, j] - 2.0 * d[:, k, k, j]
            + d[:, i, i, j] + 2.0 * d[:, k, j, k] - d[:, j, k, k]
        ) / 3.0
    a = np.einsum("mip,mp->mi", c, w)
    dR = np.empty_like(rm)
    dR[:, 0, :] = -a[:, 2:3] * rm[:, 1, :] + a[:, 1:2] * rm[:, 2, :]
    dR[:, 1, :] = -a[:, 0:1] * rm[:, 2, :] + a[:, 2:3] * rm[:, 0, :]
    dR[:, 2, :] = -a[:, 1:2] * rm[:, 0, :] + a[:, 0:1] * rm[:, 1, :]
    sym = np.einsum("miji->mj", d + np.swapaxes(d, 1, 2))
    dls = (2.0 / 3.0) * (np.einsum("mx,mx->m", gld, dirs) + np.einsum("mj,mj->m", sym, w))
    return dR, dls


def _project_rotation(x):
    """Nearest rotation by Newton polar iteration; returns (proj, distance)."""
    x0 = x
    for _ in range(10):
        r0, r1, r2 = x[:, 0, :], x[:, 1, :], x[:, 2, :]
        c12 = np.cross(r1, r2)
        det = np.einsum("mx,mx->m", r0, c12)
        inv_t = np.stack([c12, np.cross(r2, r0), np.cross(r0, r1)], axis=1)
        inv_t /= det[:, None, None]
        x = 0.5 * (x + inv_t)
        gram = np.einsum("mix,mjx->mij", x, x)
        gram[:, 0, 0] -= 1.0
        gram[:, 1, 1] -= 1.0
        gram[:, 2, 2] -= 1.0
        if np.max(np.abs(gram)) <= 1e-14:
            break
    dist = np.sqrt(np.einsum("mix,mix->m", x - x0, x - x0))
    return x, dist


def rotation_ode(values, origin, spacing, starts, ends, steps, r0, ls0):
    """Integrate the coupled frame / log-conductivity state along segments.

    Parameters
    ----------
    values : ndarray, shape counts + (31,)
        Packed per-node data: 27 connection values ``V[a, b, x]`` (C order),
        3 gradient components of log sqrt(det H), then log sqrt(det H).
    starts, ends : ndarray (M, 3)
    steps : ndarray (M,) of positive ints
    r0 : ndarray (M, 9)
        Initial frames, flat layout ``r0[3*c + a]`` = component a of column c.
    ls0 : ndarray (M,)
        Initial log-conductivity values.

    Returns
    -------
    dict with r_end (M, 9), ls_end (M,), max_drift (M,) pre-projection
    |norm^2 - 3| per step, max_proj (M,) projection distances, and
    min_logd (M,) smallest interpolated log sqrt(det H) along the path.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    ends = np.atleast_2d(np.asarray(ends, dtype=float))
    steps = np.asarray(steps, dtype=np.intp)
    origin = np.asarray(origin, dtype=float)
    spacing = np.asarray(spacing, dtype=float)
    m = len(starts)
    dirs = ends - starts
    rm = np.array(r0, dtype=float).reshape(m, 3, 3)
    ls = np.array(ls0, dtype=float)
    max_drift = np.zeros(m)
    max_proj = np.zeros(m)
    min_logd = np.full(m, np.inf)
    inv = 1.0 / steps
    nmax = int(steps.max()) if steps.size else 0

    def fetch(t, active):
        pos = starts + t[:, None] * dirs
        vals = interp_many(values, origin, spacing, pos)
        vp = vals[:, :27].reshape(m, 3, 3, 3)
        gld = vals[:, 27:30]
        logd = vals[:, 30]
        upd = np.where(active, logd, np.inf)
        np.minimum(min_logd, upd, out=min_logd)
        return vp, gld

    for s in range(nmax):
        active = s < steps
        dt = np.where(active, inv, 0.0)
        t0 = np.minimum(s * inv, 1.0)
        tm = np.minimum((s + 0.5) * inv, 1.0)
        t1 = np.minimum((s + 1.0) * inv, 1.0)
        vp0, gld0 = fetch(t0, active)
        vpm, gldm = fetch(tm, active)
        vp1, gld1 = fetch(t1, active)

        k1R, k1s = _rhs(vp0, gld0, rm, dirs)
        k2R, k2s = _rhs(vpm, gldm, rm + 0.5 * dt[:, None, None] * k1R, dirs)
        k3R, k3s = _rhs(vpm, gldm, rm + 0.5 * dt[:, None, None] * k2R, dirs)
        k4R, k4s = _rhs(vp1, gld1, rm + dt[:, None, None] * k3R, dirs)

        rm = rm + (dt[:, None, None] / 6.0) * (k1R + 2.0 * k2R + 2.0 * k3R + k4R)
        ls = ls + (dt / 6.0) * (k1s + 2.0 * k2s + 2.0 * k3s + k4s)

        sq = np.einsum("mix,mix->m", rm, rm)
        drift = np.where(active, np.abs(sq - 3.0), 0.0)
        np.maximum(max_drift, drift, out=max_drift)
        rm, dist = _project_rotation(rm)
        np.maximum(max_proj, np.where(active, dist, 0.0), out=max_proj)

    return {
        "r_end": rm.reshape(m, 9).copy(),
        "ls_end": ls,
        "max_drift": max_drift,
        "max_proj": max_proj,
        "min_logd": min_logd,
    }
