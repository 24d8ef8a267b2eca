# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: multilinear interpolation, Simpson line integrals,
and the coupled frame / log-conductivity transport integrator.

Mirrors the semantics of ``powerdense.kernels._ref`` (the NumPy
reference); the package test suite asserts agreement between backends.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, floor, sqrt

cnp.import_array()

ctypedef Py_ssize_t isize


cdef inline isize _cell_frac(double coord, double origin, double spacing,
                             isize n, double *frac) noexcept nogil:
    cdef double t = (coord - origin) / spacing
    cdef isize c = <isize>floor(t)
    if c < 0:
        c = 0
    elif c > n - 2:
        c = n - 2
    cdef double f = t - <double>c
    if f < 0.0:
        f = 0.0
    elif f > 1.0:
        f = 1.0
    frac[0] = f
    return c


cdef inline void _interp2(const double[:, :, ::1] values,
                          const double[::1] origin, const double[::1] spacing,
                          double x, double y, double *out, isize ncomp) noexcept nogil:
    cdef double fx, fy
    cdef isize i = _cell_frac(x, origin[0], spacing[0], values.shape[0], &fx)
    cdef isize j = _cell_frac(y, origin[1], spacing[1], values.shape[1], &fy)
    cdef double gx = 1.0 - fx
    cdef double gy = 1.0 - fy
    cdef double w00 = gx * gy
    cdef double w10 = fx * gy
    cdef double w01 = gx * fy
    cdef double w11 = fx * fy
    cdef isize c
    for c in range(ncomp):
        out[c] = (w00 * values[i, j, c] + w10 * values[i + 1, j, c]
                  + w01 * values[i, j + 1, c] + w11 * values[i + 1, j + 1, c])


cdef inline void _interp3(const double[:, :, :, ::1] values,
                          const double[::1] origin, const double[::1] spacing,
                          double x, double y, double z,
                          double *out, isize ncomp) noexcept nogil:
    cdef double fx, fy, fz
    cdef isize i = _cell_frac(x, origin[0], spacing[0], values.shape[0], &fx)
    cdef isize j = _cell_frac(y, origin[1], spacing[1], values.shape[1], &fy)
    cdef isize k = _cell_frac(z, origin[2], spacing[2], values.shape[2], &fz)
    cdef double gx = 1.0 - fx
    cdef double gy = 1.0 - fy
    cdef double gz = 1.0 - fz
    cdef double w000 = gx * gy * gz
    cdef double w100 = fx * gy * gz
    cdef double w010 = gx * fy * gz
    cdef double w110 = fx * fy * gz
    cdef double w001 = gx * gy * fz
    cdef double w101 = fx * gy * fz
    cdef double w011 = gx * fy * fz
    cdef double w111 = fx * fy * fz
    cdef isize c
    for c in range(ncomp):
        out[c] = (w000 * values[i, j, k, c] + w100 * values[i + 1, j, k, c]
                  + w010 * values[i, j + 1, k, c] + w110 * values[i + 1, j + 1, k, c]
                  + w001 * values[i, j, k + 1, c] + w101 * values[i + 1, j, k + 1, c]
                  + w011 * values[i, j + 1, k + 1, c]
                  + w111 * values[i + 1, j + 1, k + 1, c])


def interp_many(values, origin, spacing, points):
    """Multilinear interpolation; ``values`` counts + (C,), ``points`` (M, d)."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    cdef isize d = pts.shape[1]
    cdef isize m = pts.shape[0]
    cdef isize ncomp = values.shape[values.ndim - 1]
    out_arr = np.empty((m, ncomp), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] p = pts
    cdef double[::1] org = np.ascontiguousarray(origin, dtype=np.float64)
    cdef double[::1] spc = np.ascontiguousarray(spacing, dtype=np.float64)
    cdef const double[:, :, ::1] v2
    cdef const double[:, :, :, ::1] v3
    cdef isize r
    if d == 2:
        v2 = values
        with nogil:
            for r in range(m):
                _interp2(v2, org, spc, p[r, 0], p[r, 1], &out[r, 0], ncomp)
    else:
        v3 = values
        with nogil:
            for r in range(m):
                _interp3(v3, org, spc, p[r, 0], p[r, 1], p[r, 2], &out[r, 0], ncomp)
    return out_arr


def segment_integrals(values, origin, spacing, starts, ends, steps):
    """Composite Simpson integrals of the tangential field component."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    s_arr = np.ascontiguousarray(np.atleast_2d(starts), dtype=np.float64)
    e_arr = np.ascontiguousarray(np.atleast_2d(ends), dtype=np.float64)
    n_arr = np.ascontiguousarray(steps, dtype=np.int64)
    cdef isize d = s_arr.shape[1]
    cdef isize m = s_arr.shape[0]
    out_arr = np.zeros(m, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double[:, ::1] sv = s_arr
    cdef double[:, ::1] ev = e_arr
    cdef long long[::1] nv = n_arr
    cdef double[::1] org = np.ascontiguousarray(origin, dtype=np.float64)
    cdef double[::1] spc = np.ascontiguousarray(spacing, dtype=np.float64)
    cdef const double[:, :, ::1] v2
    cdef const double[:, :, :, ::1] v3
    cdef isize r, s, n
    cdef double inv, acc, f0, fm, f1, t
    cdef double dirv[3]
    cdef double val[3]
    cdef double px, py, pz

    if d == 2:
        v2 = values
        with nogil:
            for r in range(m):
                n = <isize>nv[r]
                inv = 1.0 / <double>n
                dirv[0] = ev[r, 0] - sv[r, 0]
                dirv[1] = ev[r, 1] - sv[r, 1]
                _interp2(v2, org, spc, sv[r, 0], sv[r, 1], val, 2)
                f0 = dirv[0] * val[0] + dirv[1] * val[1]
                acc = 0.0
                for s in range(n):
                    t = (<double>s + 0.5) * inv
                    if t > 1.0:
                        t = 1.0
                    px = sv[r, 0] + t * dirv[0]
                    py = sv[r, 1] + t * dirv[1]
                    _interp2(v2, org, spc, px, py, val, 2)
                    fm = dirv[0] * val[0] + dirv[1] * val[1]
                    t = (<double>s + 1.0) * inv
                    if t > 1.0:
                        t = 1.0
                    px = sv[r, 0] + t * dirv[0]
                    py = sv[r, 1] + t * dirv[1]
                    _interp2(v2, org, spc, px, py, val, 2)
                    f1 = dirv[0] * val[0] + dirv[1] * val[1]
                    acc += (inv / 6.0) * (f0 + 4.0 * fm + f1)
                    f0 = f1
                out[r] = acc
    else:
        v3 = values
        with nogil:
            for r in range(m):
                n = <isize>nv[r]
                inv = 1.0 / <double>n
                dirv[0] = ev[r, 0] - sv[r, 0]
                dirv[1] = ev[r, 1] - sv[r, 1]
                dirv[2] = ev[r, 2] - sv[r, 2]
                _interp3(v3, org, spc, sv[r, 0], sv[r, 1], sv[r, 2], val, 3)
                f0 = dirv[0] * val[0] + dirv[1] * val[1] + dirv[2] * val[2]
                acc = 0.0
                for s in range(n):
                    t = (<double>s + 0.5) * inv
                    if t > 1.0:
                        t = 1.0
                    px = sv[r, 0] + t * dirv[0]
                    py = sv[r, 1] + t * dirv[1]
                    pz = sv[r, 2] + t * dirv[2]
                    _interp3(v3, org, spc, px, py, pz, val, 3)
                    fm = dirv[0] * val[0] + dirv[1] * val[1] + dirv[2] * val[2]
                    t = (<double>s + 1.0) * inv
                    if t > 1.0:
                        t = 1.0
                    px = sv[r, 0] + t * dirv[0]
                    py = sv[r, 1] + t * dirv[1]
                    pz = sv[r, 2] + t * dirv[2]
                    _interp3(v3, org, spc, px, py, pz, val, 3)
                    f1 = dirv[0] * val[0] + dirv[1] * val[1] + dirv[2] * val[2]
                    acc += (inv / 6.0) * (f0 + 4.0 * fm + f1)
                    f0 = f1
                out[r] = acc
    return out_arr


cdef inline void _rhs_point(const double *vp, const double *gld,
                            const double *rm, const double *dirs,
                            double *dR, double *dls) noexcept nogil:
    """Transport right side at one point.

    vp: 27 values V[a,b,x] (C order); gld: 3; rm: 9 (rm[3*c+a] frame
    column c, component a -- row-major (column, component)); dirs: 3.
    """
    cdef double d[27]          # d[a,b,c] = sum_x vp[a,b,x] rm[c,x]
    cdef double w[3]
    cdef double cm[9]          # c[i,p]
    cdef double a[3]
    cdef double sym[3]
    cdef isize ai, b, c, x, i, j, k, p
    for ai in range(3):
        for b in range(3):
            for c in range(3):
                d[(ai * 3 + b) * 3 + c] = (
                    vp[(ai * 3 + b) * 3 + 0] * rm[c * 3 + 0]
                    + vp[(ai * 3 + b) * 3 + 1] * rm[c * 3 + 1]
                    + vp[(ai * 3 + b) * 3 + 2] * rm[c * 3 + 2]
                )
    for p in range(3):
        w[p] = (rm[p * 3 + 0] * dirs[0] + rm[p * 3 + 1] * dirs[1]
                + rm[p * 3 + 2] * dirs[2])
    for i in range(3):
        j = (i + 1) % 3
        k = (i + 2) % 3
        cm[i * 3 + i] = 0.5 * (
            d[(k * 3 + j) * 3 + i] - d[(j * 3 + k) * 3 + i]
            - d[(i * 3 + k) * 3 + j] - d[(k * 3 + i) * 3 + j]
            + d[(j * 3 + i) * 3 + k] + d[(i * 3 + j) * 3 + k]
        )
        cm[i * 3 + j] = (
            d[(i * 3 + k) * 3 + i] + d[(k * 3 + i) * 3 + i]
            + d[(k * 3 + j) * 3 + j] - 2.0 * d[(j * 3 + k) * 3 + j]
            + 2.0 * d[(j * 3 + j) * 3 + k] + d[(k * 3 + k) * 3 + k]
            - d[(i * 3 + i) * 3 + k]
        ) / 3.0
        cm[i * 3 + k] = (
            -d[(i * 3 + j) * 3 + i] - d[(j * 3 + i) * 3 + i]
            - d[(j * 3 + j) * 3 + j] - 2.0 * d[(k * 3 + k) * 3 + j]
            + d[(i * 3 + i) * 3 + j] + 2.0 * d[(k * 3 + j) * 3 + k]
            - d[(j * 3 + k) * 3 + k]
        ) / 3.0
    for i in range(3):
        a[i] = cm[i * 3] * w[0] + cm[i * 3 + 1] * w[1] + cm[i * 3 + 2] * w[2]
    for x in range(3):
        dR[0 * 3 + x] = -a[2] * rm[1 * 3 + x] + a[1] * rm[2 * 3 + x]
        dR[1 * 3 + x] = -a[0] * rm[2 * 3 + x] + a[2] * rm[0 * 3 + x]
        dR[2 * 3 + x] = -a[1] * rm[0 * 3 + x] + a[0] * rm[1 * 3 + x]
    for j in range(3):
        sym[j] = 0.0
        for i in range(3):
            sym[j] += d[(i * 3 + j) * 3 + i] + d[(j * 3 + i) * 3 + i]
    dls[0] = (2.0 / 3.0) * (
        gld[0] * dirs[0] + gld[1] * dirs[1] + gld[2] * dirs[2]
        + sym[0] * w[0] + sym[1] * w[1] + sym[2] * w[2]
    )


cdef inline double _project_rotation_one(double *x) noexcept nogil:
    """Newton polar projection in place; returns Frobenius move distance."""
    cdef double x0[9]
    cdef double inv_t[9]
    cdef double c12[3]
    cdef double c20[3]
    cdef double c01[3]
    cdef double det, gmax, g
    cdef isize it, i, j, k
    for i in range(9):
        x0[i] = x[i]
    for it in range(10):
        c12[0] = x[3 + 1] * x[6 + 2] - x[3 + 2] * x[6 + 1]
        c12[1] = x[3 + 2] * x[6 + 0] - x[3 + 0] * x[6 + 2]
        c12[2] = x[3 + 0] * x[6 + 1] - x[3 + 1] * x[6 + 0]
        c20[0] = x[6 + 1] * x[0 + 2] - x[6 + 2] * x[0 + 1]
        c20[1] = x[6 + 2] * x[0 + 0] - x[6 + 0] * x[0 + 2]
        c20[2] = x[6 + 0] * x[0 + 1] - x[6 + 1] * x[0 + 0]
        c01[0] = x[0 + 1] * x[3 + 2] - x[0 + 2] * x[3 + 1]
        c01[1] = x[0 + 2] * x[3 + 0] - x[0 + 0] * x[3 + 2]
        c01[2] = x[0 + 0] * x[3 + 1] - x[0 + 1] * x[3 + 0]
        det = x[0] * c12[0] + x[1] * c12[1] + x[2] * c12[2]
        for k in range(3):
            inv_t[0 + k] = c12[k] / det
            inv_t[3 + k] = c20[k] / det
            inv_t[6 + k] = c01[k] / det
        for i in range(9):
            x[i] = 0.5 * (x[i] + inv_t[i])
        gmax = 0.0
        for i in range(3):
            for j in range(3):
                g = (x[i * 3 + 0] * x[j * 3 + 0] + x[i * 3 + 1] * x[j * 3 + 1]
                     + x[i * 3 + 2] * x[j * 3 + 2])
                if i == j:
                    g -= 1.0
                if fabs(g) > gmax:
                    gmax = fabs(g)
        if gmax <= 1e-14:
            break
    det = 0.0
    for i in range(9):
        g = x[i] - x0[i]
        det += g * g
    return sqrt(det)


def rotation_ode(values, origin, spacing, starts, ends, steps, r0, ls0):
    """RK4 transport of (frame, log sigma) along straight segments.

    See the reference backend docstring for the exact layout contract;
    returns the same dict of per-lane end states and diagnostics.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    s_arr = np.ascontiguousarray(np.atleast_2d(starts), dtype=np.float64)
    e_arr = np.ascontiguousarray(np.atleast_2d(ends), dtype=np.float64)
    n_arr = np.ascontiguousarray(steps, dtype=np.int64)
    cdef isize m = s_arr.shape[0]
    r_arr = np.array(r0, dtype=np.float64).reshape(m, 9).copy()
    ls_arr = np.array(ls0, dtype=np.float64).reshape(m).copy()
    drift_arr = np.zeros(m, dtype=np.float64)
    proj_arr = np.zeros(m, dtype=np.float64)
    logd_arr = np.full(m, np.inf, dtype=np.float64)

    cdef double[:, ::1] sv = s_arr
    cdef double[:, ::1] ev = e_arr
    cdef long long[::1] nv = n_arr
    cdef double[:, ::1] rv = r_arr
    cdef double[::1] lsv = ls_arr
    cdef double[::1] driftv = drift_arr
    cdef double[::1] projv = proj_arr
    cdef double[::1] logdv = logd_arr
    cdef double[::1] org = np.ascontiguousarray(origin, dtype=np.float64)
    cdef double[::1] spc = np.ascontiguousarray(spacing, dtype=np.float64)
    cdef const double[:, :, :, ::1] v3 = values

    cdef isize r, s, n, i
    cdef double inv, dt, t, sq, dist
    cdef double dirs[3]
    cdef double rm[9]
    cdef double tmp[9]
    cdef double k1R[9]
    cdef double k2R[9]
    cdef double k3R[9]
    cdef double k4R[9]
    cdef double ls, k1s, k2s, k3s, k4s
    cdef double f0[31]
    cdef double fm[31]
    cdef double f1[31]
    cdef double px, py, pz

    with nogil:
        for r in range(m):
            n = <isize>nv[r]
            inv = 1.0 / <double>n
            dirs[0] = ev[r, 0] - sv[r, 0]
            dirs[1] = ev[r, 1] - sv[r, 1]
            dirs[2] = ev[r, 2] - sv[r, 2]
            for i in range(9):
                rm[i] = rv[r, i]
            ls = lsv[r]
            for s in range(n):
                dt = inv
                t = <double>s * inv
                px = sv[r, 0] + t * dirs[0]
                py = sv[r, 1] + t * dirs[1]
                pz = sv[r, 2] + t * dirs[2]
                _interp3(v3, org, spc, px, py, pz, f0, 31)
                if f0[30] < logdv[r]:
                    logdv[r] = f0[30]
                t = (<double>s + 0.5) * inv
                if t > 1.0:
                    t = 1.0
                px = sv[r, 0] + t * dirs[0]
                py = sv[r, 1] + t * dirs[1]
                pz = sv[r, 2] + t * dirs[2]
                _interp3(v3, org, spc, px, py, pz, fm, 31)
                if fm[30] < logdv[r]:
                    logdv[r] = fm[30]
                t = (<double>s + 1.0) * inv
                if t > 1.0:
                    t = 1.0
                px = sv[r, 0] + t * dirs[0]
                py = sv[r, 1] + t * dirs[1]
                pz = sv[r, 2] + t * dirs[2]
                _interp3(v3, org, spc, px, py, pz, f1, 31)
                if f1[30] < logdv[r]:
                    logdv[r] = f1[30]

                _rhs_point(f0, f0 + 27, rm, dirs, k1R, &k1s)
                for i in range(9):
                    tmp[i] = rm[i] + 0.5 * dt * k1R[i]
                _rhs_point(fm, fm + 27, tmp, dirs, k2R, &k2s)
                for i in range(9):
                    tmp[i] = rm[i] + 0.5 * dt * k2R[i]
                _rhs_point(fm, fm + 27, tmp, dirs, k3R, &k3s)
                for i in range(9):
                    tmp[i] = rm[i] + dt * k3R[i]
                _rhs_point(f1, f1 + 27, tmp, dirs, k4R, &k4s)

                for i in range(9):
                    rm[i] = rm[i] + (dt / 6.0) * (
                        k1R[i] + 2.0 * k2R[i] + 2.0 * k3R[i] + k4R[i]
                    )
                ls = ls + (dt / 6.0) * (k1s + 2.0 * k2s + 2.0 * k3s + k4s)

                sq = 0.0
                for i in range(9):
                    sq += rm[i] * rm[i]
                if fabs(sq - 3.0) > driftv[r]:
                    driftv[r] = fabs(sq - 3.0)
                dist = _project_rotation_one(rm)
                if dist > projv[r]:
                    projv[r] = dist
            for i in range(9):
                rv[r, i] = rm[i]
            lsv[r] = ls

    return {
        "r_end": r_arr,
        "ls_end": ls_arr,
        "max_drift": drift_arr,
        "max_proj": proj_arr,
        "min_logd": logd_arr,
    }
