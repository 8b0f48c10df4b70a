"""Core pose and projection geometry.

Conventions used throughout the package:

* A pose (R, T) maps world coordinates to camera coordinates,
  ``x_cam = R @ x_world + T``; the camera center in world coordinates is
  ``c = -R.T @ T``.
* Quaternions are scalar-first ``(q0, q1, q2, q3)`` and unit norm; the
  canonical representative of the double cover has ``q0 >= 0`` (ties broken
  by the first nonzero component being positive).
* A relative pose from camera k to camera q is the rotation ``R_qk`` and the
  unit translation direction ``t_qk`` with ``x_q = R_qk @ x_k + lam * t_qk``
  for some unknown positive scale ``lam``.
* Features are normalized image coordinates (x, y), i.e. pixel coordinates
  with the intrinsic matrix already removed.
"""

import numpy as np

from .errors import BehindCameraError, DegenerateGeometryError, InvalidRotationError

# Depth below this is treated as "behind the camera" for projection.
DEPTH_EPS = 1e-8

# Orthonormality / determinant tolerance for accepting a rotation matrix.
ROTATION_TOL = 1e-9

# Rays meeting at less than this angle (radians) do not localize a point.
PARALLEL_RAY_EPS = 1e-6


def _as_float_array(value, shape, name):
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def skew(v):
    """Cross-product matrix [v]_x with [v]_x @ w == cross(v, w)."""
    v = np.asarray(v, dtype=np.float64)
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def unit(v, eps=1e-15):
    """Return v / ||v||, raising on (near-)zero input."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n < eps:
        raise DegenerateGeometryError("cannot normalize a zero-length vector")
    # dividing by a norm of 1.0 +/- 1ulp churns the low bits of an already
    # unit vector, so inputs that are unit to rounding pass through untouched
    if abs(n - 1.0) <= 1e-9:
        return v
    return v / n


def nearest_rotation(mat):
    """Project a 3x3 matrix onto SO(3) (Frobenius-nearest rotation)."""
    mat = np.asarray(mat, dtype=np.float64)
    u, _, vt = np.linalg.svd(mat)
    r = u @ vt
    if np.linalg.det(r) < 0:
        r = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    return r


def ensure_rotation(mat, strict=False, tol=ROTATION_TOL):
    """Validate a rotation matrix, re-orthonormalizing small drift.

    With ``strict=True`` any violation of ``R.T @ R = I`` or ``det R = +1``
    beyond ``tol`` raises InvalidRotationError instead of being repaired.
    """
    mat = _as_float_array(mat, (3, 3), "rotation")
    err = np.abs(mat.T @ mat - np.eye(3)).max()
    det = np.linalg.det(mat)
    if err <= tol and abs(det - 1.0) <= tol:
        return mat
    if strict or det < 0 or err > 1e-6:
        raise InvalidRotationError(
            f"not a rotation matrix (orthonormality error {err:.3e}, det {det:.6f})"
        )
    return nearest_rotation(mat)


class Pose:
    """World-to-camera rigid transform: x_cam = rotation @ x_world + translation.

    Arrays are copied and frozen on construction. ``strict=True`` rejects any
    rotation drift instead of re-orthonormalizing it.
    """

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation, translation, strict=False):
        rotation = ensure_rotation(rotation, strict=strict)
        translation = _as_float_array(translation, (3,), "translation").copy()
        rotation = rotation.copy()
        rotation.flags.writeable = False
        translation.flags.writeable = False
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    def __setattr__(self, name, value):
        raise AttributeError("Pose is immutable")

    def center(self):
        """Camera center in world coordinates, -R.T @ T."""
        return -self.rotation.T @ self.translation

    def apply(self, points):
        """Map world points (3,) or (N, 3) into camera coordinates."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def __repr__(self):
        return f"Pose(center={np.array2string(self.center(), precision=4)})"

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))


class RelativePoseEstimate:
    """Scale-free relative pose: rotation R_qk and unit direction t_qk.

    The metric translation is ``lam * direction`` for an unknown positive
    scale, so only the direction is stored (normalized on construction).
    """

    __slots__ = ("rotation", "direction")

    def __init__(self, rotation, direction, strict=False):
        rotation = ensure_rotation(rotation, strict=strict).copy()
        direction = _as_float_array(direction, (3,), "direction")
        direction = unit(direction).copy()
        rotation.flags.writeable = False
        direction.flags.writeable = False
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "direction", direction)

    def __setattr__(self, name, value):
        raise AttributeError("RelativePoseEstimate is immutable")

    def __repr__(self):
        return (
            f"RelativePoseEstimate(direction={np.array2string(self.direction, precision=4)})"
        )


def compose_absolute(rel, scale, anchor):
    """Chain a relative pose onto an absolute anchor pose.

    Given the anchor pose (R_k, T_k) and the relative pose (R_qk, t_qk) with
    metric scale ``scale``, returns the query pose
    ``(R_qk @ R_k, R_qk @ T_k + scale * t_qk)``.
    """
    if not np.isfinite(scale) or scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    rotation = rel.rotation @ anchor.rotation
    translation = rel.rotation @ anchor.translation + scale * rel.direction
    return Pose(rotation, translation)


def invert_relative(rel):
    """Reverse a relative pose: (R_qk, t_qk) -> (R_kq, t_kq).

    R_kq = R_qk.T and the reversed direction is -R_qk.T @ t_qk (unit norm is
    preserved exactly up to rounding).
    """
    rotation = rel.rotation.T
    direction = -rel.rotation.T @ rel.direction
    return RelativePoseEstimate(rotation, direction)


def project(pose, point):
    """Pinhole projection of a world point into normalized image coordinates.

    Raises BehindCameraError when the camera-frame depth is <= DEPTH_EPS.
    """
    cam = pose.rotation @ np.asarray(point, dtype=np.float64) + pose.translation
    if cam[2] <= DEPTH_EPS:
        raise BehindCameraError(f"point depth {cam[2]:.3e} <= {DEPTH_EPS}")
    return cam[:2] / cam[2]


def project_many(pose, points):
    """Project (N, 3) world points, returning ((N, 2) features, (N,) depths).

    Unlike :func:`project` this does not raise on non-positive depth; callers
    inspect the returned depths. Behind-camera rows hold garbage coordinates.
    """
    cam = np.asarray(points, dtype=np.float64) @ pose.rotation.T + pose.translation
    depths = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        feats = cam[:, :2] / depths[:, None]
    return feats, depths


def unproject(pose, feature, depth):
    """Inverse of project at a known camera-frame depth.

    Returns the world point whose projection is ``feature`` and whose depth
    is ``depth``.
    """
    if depth <= 0:
        raise ValueError(f"depth must be positive, got {depth}")
    feature = np.asarray(feature, dtype=np.float64)
    cam = depth * np.array([feature[0], feature[1], 1.0])
    return pose.rotation.T @ (cam - pose.translation)


def quat_to_rotation(q):
    """Rotation matrix of a scalar-first unit quaternion."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if abs(n - 1.0) > 1e-9:
        raise ValueError(f"quaternion norm {n:.12f} is not 1")
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def canonicalize_quat(q):
    """Pick the double-cover representative with q0 >= 0.

    Ties (q0 == 0) are broken so the first nonzero component is positive,
    making the representation a function of the rotation alone.
    """
    q = np.asarray(q, dtype=np.float64)
    for comp in q:
        if comp > 0:
            return q.copy()
        if comp < 0:
            return -q
    raise ValueError("zero quaternion has no canonical form")


def rotation_to_quat(mat):
    """Scalar-first unit quaternion of a rotation matrix (canonicalized).

    Uses Shepperd's branching on the largest diagonal combination so the
    result is stable for rotations near pi.
    """
    m = ensure_rotation(mat)
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] >= m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    return canonicalize_quat(q / np.linalg.norm(q))


def quat_multiply(p, q):
    """Hamilton product p * q (scalar-first); composes the rotations R(p) @ R(q)."""
    return quat_left_matrix(p) @ np.asarray(q, dtype=np.float64)


def quat_left_matrix(p):
    """4x4 matrix L(p) with L(p) @ q == p * q (Hamilton product).

    Orthogonal for unit p, which is what makes stacked quaternion systems
    solvable by plain least squares.
    """
    w, x, y, z = np.asarray(p, dtype=np.float64)
    return np.array(
        [
            [w, -x, -y, -z],
            [x, w, -z, y],
            [y, z, w, -x],
            [z, -y, x, w],
        ]
    )


def rotvec_to_rotation(w):
    """Matrix exponential of [w]_x (Rodrigues); w is an axis-angle vector."""
    w = np.asarray(w, dtype=np.float64)
    angle = np.linalg.norm(w)
    if angle < 1e-12:
        return np.eye(3)
    axis = w / angle
    k = skew(axis)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def geodesic_angle(rot_a, rot_b):
    """Geodesic distance between two rotations, in degrees."""
    r = np.asarray(rot_a) @ np.asarray(rot_b).T
    c = (np.trace(r) - 1.0) / 2.0
    return np.degrees(np.arccos(np.clip(c, -1.0, 1.0)))


def relative_from_poses(query, anchor):
    """Exact relative pose (R_qk, t_qk) between two absolute poses.

    The direction is the unit vector of T_q - R_qk @ T_k; raises
    DegenerateGeometryError when the two centers coincide.
    """
    rotation = query.rotation @ anchor.rotation.T
    t = query.translation - rotation @ anchor.translation
    return RelativePoseEstimate(rotation, t)


def ray_pair_midpoint(origin_a, dir_a, origin_b, dir_b):
    """Midpoint of the common perpendicular of two rays.

    Directions must be unit. Raises DegenerateGeometryError when the rays
    are parallel within PARALLEL_RAY_EPS radians or share an origin.
    """
    o1 = np.asarray(origin_a, dtype=np.float64)
    o2 = np.asarray(origin_b, dtype=np.float64)
    d1 = np.asarray(dir_a, dtype=np.float64)
    d2 = np.asarray(dir_b, dtype=np.float64)
    if np.linalg.norm(o1 - o2) < 1e-12:
        raise DegenerateGeometryError("rays share an origin; midpoint undefined")
    b = d1 @ d2
    denom = 1.0 - b * b  # sin^2 of the angle between the rays
    if denom <= PARALLEL_RAY_EPS**2:
        raise DegenerateGeometryError("rays are parallel; midpoint undefined")
    w = o1 - o2
    d = d1 @ w
    e = d2 @ w
    t1 = (b * e - d) / denom
    t2 = (e - b * d) / denom
    p1 = o1 + t1 * d1
    p2 = o2 + t2 * d2
    return 0.5 * (p1 + p2)
