"""Pure numpy implementations of the hot kernels.

Mirrors ``_native.pyx`` exactly; selected at import time when the compiled
extension is unavailable or ``MVLOC_PURE_KERNELS`` is set. Both backends
must produce matching results (see tests/test_kernels.py).
"""

import numpy as np

BACKEND_NAME = "pure"


def e1_residual_jac(ref_feat, obs, rots, trans, x, y, rho):
    """Residuals and Jacobian of the anchor reprojection energy.

    Parameters are the latent reference-view feature (x, y) and reference
    depth rho. ``obs`` (M, 2) holds the observed features of the non-reference
    views, ``rots``/``trans`` (M, 3, 3)/(M, 3) their poses relative to the
    reference view.

    Returns ``(r, jac, min_depth)`` with r of length 2 + 2M (reference block
    first), jac (2 + 2M, 3) with columns (d/dx, d/dy, d/drho), and the
    smallest candidate depth among the non-reference views (callers reject
    parameter values whose min_depth is not safely positive).
    """
    obs = np.asarray(obs, dtype=np.float64)
    rots = np.asarray(rots, dtype=np.float64)
    trans = np.asarray(trans, dtype=np.float64)
    m = len(obs)

    g = np.array([x, y, 1.0])
    rg = rots @ g  # (M, 3)
    u = rho * rg + trans
    w = u[:, 2]
    min_depth = float(w.min()) if m else np.inf

    r = np.empty(2 + 2 * m)
    jac = np.zeros((2 + 2 * m, 3))
    r[0] = ref_feat[0] - x
    r[1] = ref_feat[1] - y
    jac[0, 0] = -1.0
    jac[1, 1] = -1.0
    if m == 0:
        return r, jac, min_depth

    inv_w = 1.0 / w
    ux_w2 = u[:, 0] * inv_w * inv_w
    uy_w2 = u[:, 1] * inv_w * inv_w
    r[2::2] = obs[:, 0] - u[:, 0] * inv_w
    r[3::2] = obs[:, 1] - u[:, 1] * inv_w

    for col, du in enumerate((rho * rots[:, :, 0], rho * rots[:, :, 1], rg)):
        jac[2::2, col] = -(du[:, 0] * inv_w - ux_w2 * du[:, 2])
        jac[3::2, col] = -(du[:, 1] * inv_w - uy_w2 * du[:, 2])
    return r, jac, min_depth


def e1_value(ref_feat, obs, rots, trans, x, y, rho):
    """Closed-form value of the anchor reprojection energy.

    Evaluates, per non-reference view, ``|g_k|^2 - 2 g_k.u/w + |u|^2 / w^2``
    in homogeneous coordinates plus the reference-feature consistency term.
    Returns ``(value, min_depth)``.
    """
    obs = np.asarray(obs, dtype=np.float64)
    rots = np.asarray(rots, dtype=np.float64)
    trans = np.asarray(trans, dtype=np.float64)

    g = np.array([x, y, 1.0])
    u = rho * (rots @ g) + trans
    w = u[:, 2]
    min_depth = float(w.min()) if len(obs) else np.inf

    g_sq = obs[:, 0] ** 2 + obs[:, 1] ** 2 + 1.0
    dot = obs[:, 0] * u[:, 0] + obs[:, 1] * u[:, 1] + u[:, 2]
    u_sq = np.einsum("ij,ij->i", u, u)
    terms = g_sq - 2.0 * dot / w + u_sq / (w * w)
    value = float(terms.sum()) + (ref_feat[0] - x) ** 2 + (ref_feat[1] - y) ** 2
    return value, min_depth


def consensus_scores(origins, dirs, quats, pairs, cos_ray, cos_half_rot):
    """Inlier counts of every pair hypothesis against all observations.

    Each pair (i, j) defines a hypothesis: query center at the midpoint of
    rays i and j, query rotation the normalized quaternion sum. An
    observation is an inlier when its ray points at the hypothesis center
    within the ray threshold and its chained rotation is within the rotation
    threshold. Hypotheses whose rays are near-parallel, share an origin, or
    whose own members fail the inlier test score -1.
    """
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    quats = np.asarray(quats, dtype=np.float64)
    pairs = np.asarray(pairs, dtype=np.int64)

    i_idx = pairs[:, 0]
    j_idx = pairs[:, 1]
    o1, o2 = origins[i_idx], origins[j_idx]
    d1, d2 = dirs[i_idx], dirs[j_idx]

    b = np.einsum("ij,ij->i", d1, d2)
    denom = 1.0 - b * b
    w_vec = o1 - o2
    baseline = np.linalg.norm(w_vec, axis=1)
    valid = (denom > 1e-12) & (baseline > 1e-12)

    safe = np.where(denom > 1e-12, denom, 1.0)
    d = np.einsum("ij,ij->i", d1, w_vec)
    e = np.einsum("ij,ij->i", d2, w_vec)
    t1 = (b * e - d) / safe
    t2 = (e - b * d) / safe
    centers = 0.5 * (o1 + t1[:, None] * d1 + o2 + t2[:, None] * d2)

    q1, q2 = quats[i_idx], quats[j_idx]
    sign = np.where(np.einsum("ij,ij->i", q1, q2) < 0.0, -1.0, 1.0)
    hyp_q = q1 + sign[:, None] * q2
    hyp_q /= np.linalg.norm(hyp_q, axis=1, keepdims=True)

    # (P, K) inlier tests, vectorized over both axes.
    u = centers[:, None, :] - origins[None, :, :]
    dist = np.linalg.norm(u, axis=2)
    along = np.einsum("kj,pkj->pk", dirs, u)
    ray_ok = (dist < 1e-12) | (along >= cos_ray * dist)
    rot_ok = np.abs(hyp_q @ quats.T) >= cos_half_rot
    ok = ray_ok & rot_ok

    counts = ok.sum(axis=1).astype(np.int64)
    n = len(pairs)
    self_ok = ok[np.arange(n), i_idx] & ok[np.arange(n), j_idx]
    counts[~(valid & self_ok)] = -1
    return counts
