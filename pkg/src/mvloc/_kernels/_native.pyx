# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled implementations of the hot kernels.

Same contracts as ``_pure.py``; see that module for documentation. Keep the
two in lockstep: tests compare them elementwise.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, fabs, sqrt

cnp.import_array()

BACKEND_NAME = "native"


def e1_residual_jac(ref_feat, obs, rots, trans, double x, double y, double rho):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] obs_a = np.ascontiguousarray(obs, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=3] rots_a = np.ascontiguousarray(rots, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] trans_a = np.ascontiguousarray(trans, dtype=np.float64)
    cdef Py_ssize_t m = obs_a.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] r = np.empty(2 + 2 * m)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] jac = np.zeros((2 + 2 * m, 3))
    cdef double rx = float(ref_feat[0])
    cdef double ry = float(ref_feat[1])

    r[0] = rx - x
    r[1] = ry - y
    jac[0, 0] = -1.0
    jac[1, 1] = -1.0

    cdef double min_depth = INFINITY
    cdef Py_ssize_t k, col, row_x, row_y
    cdef double g0, g1, g2, u0, u1, u2, w, inv_w, ux_w2, uy_w2
    cdef double du0, du1, du2

    g0 = x
    g1 = y
    g2 = 1.0
    for k in range(m):
        u0 = rho * (rots_a[k, 0, 0] * g0 + rots_a[k, 0, 1] * g1 + rots_a[k, 0, 2] * g2) + trans_a[k, 0]
        u1 = rho * (rots_a[k, 1, 0] * g0 + rots_a[k, 1, 1] * g1 + rots_a[k, 1, 2] * g2) + trans_a[k, 1]
        u2 = rho * (rots_a[k, 2, 0] * g0 + rots_a[k, 2, 1] * g1 + rots_a[k, 2, 2] * g2) + trans_a[k, 2]
        w = u2
        if w < min_depth:
            min_depth = w
        inv_w = 1.0 / w
        ux_w2 = u0 * inv_w * inv_w
        uy_w2 = u1 * inv_w * inv_w
        row_x = 2 + 2 * k
        row_y = 3 + 2 * k
        r[row_x] = obs_a[k, 0] - u0 * inv_w
        r[row_y] = obs_a[k, 1] - u1 * inv_w
        for col in range(3):
            if col == 0:
                du0 = rho * rots_a[k, 0, 0]
                du1 = rho * rots_a[k, 1, 0]
                du2 = rho * rots_a[k, 2, 0]
            elif col == 1:
                du0 = rho * rots_a[k, 0, 1]
                du1 = rho * rots_a[k, 1, 1]
                du2 = rho * rots_a[k, 2, 1]
            else:
                du0 = rots_a[k, 0, 0] * g0 + rots_a[k, 0, 1] * g1 + rots_a[k, 0, 2] * g2
                du1 = rots_a[k, 1, 0] * g0 + rots_a[k, 1, 1] * g1 + rots_a[k, 1, 2] * g2
                du2 = rots_a[k, 2, 0] * g0 + rots_a[k, 2, 1] * g1 + rots_a[k, 2, 2] * g2
            jac[row_x, col] = -(du0 * inv_w - ux_w2 * du2)
            jac[row_y, col] = -(du1 * inv_w - uy_w2 * du2)
    return r, jac, min_depth


def e1_value(ref_feat, obs, rots, trans, double x, double y, double rho):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] obs_a = np.ascontiguousarray(obs, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=3] rots_a = np.ascontiguousarray(rots, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] trans_a = np.ascontiguousarray(trans, dtype=np.float64)
    cdef Py_ssize_t m = obs_a.shape[0]
    cdef double rx = float(ref_feat[0])
    cdef double ry = float(ref_feat[1])

    cdef double min_depth = INFINITY
    cdef double value = 0.0
    cdef Py_ssize_t k
    cdef double u0, u1, u2, w, g_sq, dot, u_sq

    for k in range(m):
        u0 = rho * (rots_a[k, 0, 0] * x + rots_a[k, 0, 1] * y + rots_a[k, 0, 2]) + trans_a[k, 0]
        u1 = rho * (rots_a[k, 1, 0] * x + rots_a[k, 1, 1] * y + rots_a[k, 1, 2]) + trans_a[k, 1]
        u2 = rho * (rots_a[k, 2, 0] * x + rots_a[k, 2, 1] * y + rots_a[k, 2, 2]) + trans_a[k, 2]
        w = u2
        if w < min_depth:
            min_depth = w
        g_sq = obs_a[k, 0] * obs_a[k, 0] + obs_a[k, 1] * obs_a[k, 1] + 1.0
        dot = obs_a[k, 0] * u0 + obs_a[k, 1] * u1 + u2
        u_sq = u0 * u0 + u1 * u1 + u2 * u2
        value += g_sq - 2.0 * dot / w + u_sq / (w * w)
    value += (rx - x) * (rx - x) + (ry - y) * (ry - y)
    return value, min_depth


def consensus_scores(origins, dirs, quats, pairs, double cos_ray, double cos_half_rot):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] o = np.ascontiguousarray(origins, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dd = np.ascontiguousarray(dirs, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] qq = np.ascontiguousarray(quats, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=2] pp = np.ascontiguousarray(pairs, dtype=np.int64)
    cdef Py_ssize_t n_obs = o.shape[0]
    cdef Py_ssize_t n_pairs = pp.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] counts = np.empty(n_pairs, dtype=np.int64)

    cdef Py_ssize_t p, i, j, k
    cdef double b, denom, w0, w1, w2, baseline_sq, d, e, t1, t2
    cdef double c0, c1, c2, qh0, qh1, qh2, qh3, qn, sign, qdot
    cdef double u0, u1, u2, dist, along
    cdef long count
    cdef bint ok, ok_i, ok_j

    for p in range(n_pairs):
        i = pp[p, 0]
        j = pp[p, 1]
        b = dd[i, 0] * dd[j, 0] + dd[i, 1] * dd[j, 1] + dd[i, 2] * dd[j, 2]
        denom = 1.0 - b * b
        w0 = o[i, 0] - o[j, 0]
        w1 = o[i, 1] - o[j, 1]
        w2 = o[i, 2] - o[j, 2]
        baseline_sq = w0 * w0 + w1 * w1 + w2 * w2
        if denom <= 1e-12 or baseline_sq <= 1e-24:
            counts[p] = -1
            continue
        d = dd[i, 0] * w0 + dd[i, 1] * w1 + dd[i, 2] * w2
        e = dd[j, 0] * w0 + dd[j, 1] * w1 + dd[j, 2] * w2
        t1 = (b * e - d) / denom
        t2 = (e - b * d) / denom
        c0 = 0.5 * (o[i, 0] + t1 * dd[i, 0] + o[j, 0] + t2 * dd[j, 0])
        c1 = 0.5 * (o[i, 1] + t1 * dd[i, 1] + o[j, 1] + t2 * dd[j, 1])
        c2 = 0.5 * (o[i, 2] + t1 * dd[i, 2] + o[j, 2] + t2 * dd[j, 2])

        qdot = qq[i, 0] * qq[j, 0] + qq[i, 1] * qq[j, 1] + qq[i, 2] * qq[j, 2] + qq[i, 3] * qq[j, 3]
        sign = -1.0 if qdot < 0.0 else 1.0
        qh0 = qq[i, 0] + sign * qq[j, 0]
        qh1 = qq[i, 1] + sign * qq[j, 1]
        qh2 = qq[i, 2] + sign * qq[j, 2]
        qh3 = qq[i, 3] + sign * qq[j, 3]
        qn = sqrt(qh0 * qh0 + qh1 * qh1 + qh2 * qh2 + qh3 * qh3)
        qh0 /= qn
        qh1 /= qn
        qh2 /= qn
        qh3 /= qn

        count = 0
        ok_i = False
        ok_j = False
        for k in range(n_obs):
            u0 = c0 - o[k, 0]
            u1 = c1 - o[k, 1]
            u2 = c2 - o[k, 2]
            dist = sqrt(u0 * u0 + u1 * u1 + u2 * u2)
            along = dd[k, 0] * u0 + dd[k, 1] * u1 + dd[k, 2] * u2
            ok = dist < 1e-12 or along >= cos_ray * dist
            if ok:
                qdot = qh0 * qq[k, 0] + qh1 * qq[k, 1] + qh2 * qq[k, 2] + qh3 * qq[k, 3]
                ok = fabs(qdot) >= cos_half_rot
            if ok:
                count += 1
                if k == i:
                    ok_i = True
                elif k == j:
                    ok_j = True
        if not (ok_i and ok_j):
            counts[p] = -1
        else:
            counts[p] = count
    return counts
