"""Latent-point pose refinement.

Stage one triangulates each multi-anchor feature track into a latent scene
point, parameterized by a reference-view feature and depth and optimized
against the anchor observations only (the query plays no part, so the query
pose cannot bias the structure). Stage two refines the query pose by
minimizing its reprojection error onto the fixed latent points.
"""

from dataclasses import dataclass
from typing import Hashable, Optional

import numpy as np

from . import _kernels
from .errors import (
    BehindCameraError,
    DegenerateGeometryError,
    DivergenceError,
    InitializationError,
    InsufficientDataError,
)
from .geometry import DEPTH_EPS, Pose, project, rotvec_to_rotation, skew, unit
from .relpose import midpoint_triangulate


@dataclass(frozen=True)
class CorrespondenceTrack:
    """One query feature matched into two or more anchor views.

    ``anchors`` is a sequence of (anchor_id, feature) pairs; ids must be
    distinct and at least two are required.
    """

    track_id: Hashable
    query_feature: np.ndarray
    anchors: tuple

    def __post_init__(self):
        qf = np.asarray(self.query_feature, dtype=np.float64)
        if qf.shape != (2,):
            raise ValueError("query_feature must be (2,)")
        entries = tuple((aid, np.asarray(f, dtype=np.float64)) for aid, f in self.anchors)
        if len(entries) < 2:
            raise ValueError(f"track {self.track_id!r} needs >= 2 anchor views")
        ids = [aid for aid, _ in entries]
        if len(set(ids)) != len(ids):
            raise ValueError(f"track {self.track_id!r} repeats an anchor id")
        for _, f in entries:
            if f.shape != (2,):
                raise ValueError("anchor features must be (2,)")
        object.__setattr__(self, "query_feature", qf)
        object.__setattr__(self, "anchors", entries)


@dataclass(frozen=True)
class LatentPoint:
    """Triangulated track: world point plus its reference-view parameters."""

    track_id: Hashable
    world_point: np.ndarray
    reference_view: Hashable
    ref_feature: np.ndarray
    ref_depth: float
    e1_residual: float


@dataclass(frozen=True)
class RefineConfig:
    """Shared Levenberg-Marquardt settings for both refinement stages."""

    max_iters: int = 100
    damping_init: float = 1e-4
    damping_factor: float = 10.0
    step_tol: float = 1e-12
    tau_reproj: float = 0.01
    huber_scale: Optional[float] = None  # None disables the robust loss


@dataclass(frozen=True)
class RefinementResult:
    pose: Pose
    e2_initial: float
    e2_final: float
    iterations: int
    points_used: int


def _relative_to_reference(poses, ref_pose):
    """Stack (R_k R_1^T, T_k - R_k1 T_1) for the non-reference views."""
    rots = np.empty((len(poses), 3, 3))
    trans = np.empty((len(poses), 3))
    for k, pose in enumerate(poses):
        r_k1 = pose.rotation @ ref_pose.rotation.T
        rots[k] = r_k1
        trans[k] = pose.translation - r_k1 @ ref_pose.translation
    return rots, trans


def _select_reference(track, poses, point):
    """Index of the reference view: first member of the widest-angle pair
    of viewing directions at the initial point."""
    dirs = [unit(point - p.center()) for p in poses]
    best = (np.inf, 0)
    for i in range(len(dirs)):
        for j in range(i + 1, len(dirs)):
            dot = dirs[i] @ dirs[j]
            if dot < best[0]:
                best = (dot, i)
    return best[1]


def _track_arrays(track, anchor_poses, init):
    """Resolve poses, pick the reference view, and build the relative-pose
    arrays the energy kernels consume."""
    poses = []
    for aid, _ in track.anchors:
        if aid not in anchor_poses:
            raise KeyError(f"track {track.track_id!r} references unknown anchor {aid!r}")
        poses.append(anchor_poses[aid])

    if init is None:
        (aid_a, feat_a), (aid_b, feat_b) = track.anchors[0], track.anchors[1]
        init = midpoint_triangulate(poses[0], poses[1], feat_a, feat_b)
    else:
        init = np.asarray(init, dtype=np.float64)

    ref = _select_reference(track, poses, init)
    ref_pose = poses[ref]
    others = [k for k in range(len(poses)) if k != ref]
    obs = np.array([track.anchors[k][1] for k in others])
    rots, trans = _relative_to_reference([poses[k] for k in others], ref_pose)

    cam = ref_pose.rotation @ init + ref_pose.translation
    if cam[2] <= DEPTH_EPS:
        raise InitializationError(
            f"track {track.track_id!r}: initial point is behind the reference view"
        )
    ref_feat = track.anchors[ref][1]
    return ref, ref_pose, ref_feat, obs, rots, trans, cam


def triangulate_track(track, anchor_poses, init=None, config=None):
    """Triangulate one track against its anchor observations.

    Minimizes the anchor reprojection energy over the reference-view feature
    and log-depth by Levenberg-Marquardt. ``init`` is an optional world-point
    initializer; by default the first two anchor views are triangulated
    pairwise. Raises InitializationError when the starting point is behind a
    camera, DegenerateGeometryError from a degenerate initializer, and
    DivergenceError when iterations run out far above the starting energy.
    """
    if config is None:
        config = RefineConfig()
    ref, ref_pose, ref_feat, obs, rots, trans, cam0 = _track_arrays(track, anchor_poses, init)

    x, y = cam0[0] / cam0[2], cam0[1] / cam0[2]
    log_rho = np.log(cam0[2])

    r, jac, min_depth = _kernels.e1_residual_jac(ref_feat, obs, rots, trans, x, y, np.exp(log_rho))
    if min_depth <= DEPTH_EPS:
        raise InitializationError(
            f"track {track.track_id!r}: initial point is behind an anchor view"
        )
    cost = r @ r
    initial_cost = cost
    damping = config.damping_init

    for _ in range(config.max_iters):
        rho = np.exp(log_rho)
        jac_p = jac.copy()
        jac_p[:, 2] *= rho  # chain rule for the log-depth parameterization
        jtj = jac_p.T @ jac_p
        jtr = jac_p.T @ r
        try:
            step = np.linalg.solve(jtj + damping * np.eye(3), -jtr)
        except np.linalg.LinAlgError:
            damping *= config.damping_factor
            continue
        cand = (x + step[0], y + step[1], log_rho + step[2])
        r_new, jac_new, min_depth = _kernels.e1_residual_jac(
            ref_feat, obs, rots, trans, cand[0], cand[1], np.exp(cand[2])
        )
        cost_new = r_new @ r_new
        if min_depth <= DEPTH_EPS or not cost_new < cost:
            damping *= config.damping_factor
            if damping > 1e16:
                break
            continue
        x, y, log_rho = cand
        r, jac, cost = r_new, jac_new, cost_new
        damping /= config.damping_factor
        if np.linalg.norm(step) < config.step_tol:
            break
    else:
        if cost > 10.0 * initial_cost:
            raise DivergenceError(
                f"track {track.track_id!r}: no convergence after {config.max_iters} iterations"
            )

    rho = np.exp(log_rho)
    # cost is the residual-vector sum of squares at the accepted iterate;
    # the homogeneous closed form would add a cancellation floor near eps
    cam = rho * np.array([x, y, 1.0])
    world = ref_pose.rotation.T @ (cam - ref_pose.translation)
    return LatentPoint(
        track_id=track.track_id,
        world_point=world,
        reference_view=track.anchors[ref][0],
        ref_feature=np.array([x, y]),
        ref_depth=float(rho),
        e1_residual=float(cost),
    )


def e1_objective(track, anchor_poses, gamma1, rho1, init=None):
    """Anchor reprojection energy at given reference-view parameters.

    The reference view is chosen exactly as in :func:`triangulate_track`
    (pass the same ``init`` to reproduce a solve's configuration; default is
    the pairwise triangulation of the first two views). Raises
    BehindCameraError when any candidate depth is non-positive.
    """
    if rho1 <= 0 or not np.isfinite(rho1):
        raise ValueError(f"rho1 must be positive, got {rho1}")
    _, _, ref_feat, obs, rots, trans, _ = _track_arrays(track, anchor_poses, init)
    gamma1 = np.asarray(gamma1, dtype=np.float64)
    value, min_depth = _kernels.e1_value(ref_feat, obs, rots, trans, gamma1[0], gamma1[1], rho1)
    if min_depth <= DEPTH_EPS:
        raise BehindCameraError(f"candidate depth {min_depth:.3e} <= {DEPTH_EPS}")
    return float(value)


def e1_gradient(track, anchor_poses, gamma1, rho1, init=None):
    """Gradient of the energy w.r.t. (x, y, rho); same conventions as
    :func:`e1_objective`."""
    if rho1 <= 0 or not np.isfinite(rho1):
        raise ValueError(f"rho1 must be positive, got {rho1}")
    _, _, ref_feat, obs, rots, trans, _ = _track_arrays(track, anchor_poses, init)
    gamma1 = np.asarray(gamma1, dtype=np.float64)
    r, jac, min_depth = _kernels.e1_residual_jac(
        ref_feat, obs, rots, trans, gamma1[0], gamma1[1], rho1
    )
    if min_depth <= DEPTH_EPS:
        raise BehindCameraError(f"candidate depth {min_depth:.3e} <= {DEPTH_EPS}")
    return 2.0 * (jac.T @ r)


def _query_residuals(rotation, translation, points, feats):
    cam = points @ rotation.T + translation
    w = cam[:, 2]
    if np.any(w <= DEPTH_EPS):
        return None, None, None
    pi = cam[:, :2] / w[:, None]
    r = (feats - pi).ravel()
    return r, cam, w


def _query_jacobian(rotation, points, cam, w):
    n = len(points)
    jac = np.empty((2 * n, 6))
    inv_w = 1.0 / w
    ux_w2 = cam[:, 0] * inv_w**2
    uy_w2 = cam[:, 1] * inv_w**2
    # d(residual)/d(u) rows are -[1/w, 0, -ux/w^2] and -[0, 1/w, -uy/w^2];
    # u varies as du = R [X]_x for the rotation increment and I for the
    # translation increment (right-multiplicative update R <- R exp([w]_x)).
    for k in range(n):
        a = np.array(
            [
                [inv_w[k], 0.0, -ux_w2[k]],
                [0.0, inv_w[k], -uy_w2[k]],
            ]
        )
        jac[2 * k : 2 * k + 2, :3] = a @ rotation @ skew(points[k])
        jac[2 * k : 2 * k + 2, 3:] = -a
    return jac


def _huber_weights(r, scale):
    """Per-residual-pair IRLS weights for the Huber loss."""
    norms = np.linalg.norm(r.reshape(-1, 2), axis=1)
    w = np.ones_like(norms)
    over = norms > scale
    w[over] = np.sqrt(scale / norms[over])
    return np.repeat(w, 2)


def refine_pose(tracks, anchor_poses, init_pose, config=None):
    """Refine a query pose against triangulated latent points.

    Tracks failing triangulation, projecting behind the initial query pose,
    or with initial query reprojection error above ``config.tau_reproj`` are
    excluded; at least 3 usable points are required. The pose is then
    optimized by Levenberg-Marquardt over a right-multiplicative axis-angle
    and translation increment. The final energy never exceeds the initial
    one.
    """
    if config is None:
        config = RefineConfig()
    tracks = list(tracks)

    points = []
    feats = []
    for track in tracks:
        try:
            latent = triangulate_track(track, anchor_poses, config=config)
        except (DegenerateGeometryError, InitializationError, DivergenceError, KeyError):
            continue
        try:
            predicted = project(init_pose, latent.world_point)
        except BehindCameraError:
            continue
        if np.linalg.norm(track.query_feature - predicted) > config.tau_reproj:
            continue
        points.append(latent.world_point)
        feats.append(track.query_feature)

    if len(points) < 3:
        raise InsufficientDataError(
            f"only {len(points)} of {len(tracks)} tracks usable; need >= 3"
        )
    points = np.array(points)
    feats = np.array(feats)

    rotation = init_pose.rotation.copy()
    translation = init_pose.translation.copy()
    r, cam, w = _query_residuals(rotation, translation, points, feats)
    if r is None:
        raise InitializationError("initial pose puts a gated point behind the camera")
    weights = None
    if config.huber_scale is not None:
        weights = _huber_weights(r, config.huber_scale)
        r = weights * r
    cost = r @ r
    e2_initial = cost
    damping = config.damping_init
    iterations = 0

    for _ in range(config.max_iters):
        iterations += 1
        jac = _query_jacobian(rotation, points, cam, w)
        if weights is not None:
            jac = weights[:, None] * jac
        jtj = jac.T @ jac
        jtr = jac.T @ r
        try:
            step = np.linalg.solve(jtj + damping * np.eye(6), -jtr)
        except np.linalg.LinAlgError:
            damping *= config.damping_factor
            continue
        rot_new = rotation @ rotvec_to_rotation(step[:3])
        trans_new = translation + step[3:]
        r_new, cam_new, w_new = _query_residuals(rot_new, trans_new, points, feats)
        if r_new is not None and weights is not None:
            weights_new = _huber_weights(r_new, config.huber_scale)
            r_new = weights_new * r_new
        if r_new is None or not (r_new @ r_new) < cost:
            damping *= config.damping_factor
            if damping > 1e16:
                break
            continue
        rotation, translation = rot_new, trans_new
        r, cam, w = r_new, cam_new, w_new
        if weights is not None:
            weights = weights_new
        cost = r @ r
        damping /= config.damping_factor
        if np.linalg.norm(step) < config.step_tol:
            break

    if cost > e2_initial:
        raise RuntimeError("energy increased during refinement; LM acceptance is broken")
    return RefinementResult(
        pose=Pose(rotation, translation),
        e2_initial=float(e2_initial),
        e2_final=float(cost),
        iterations=iterations,
        points_used=len(points),
    )
