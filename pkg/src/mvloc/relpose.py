"""Two-view relative pose from normalized feature matches.

Epipolar convention: for a correspondence with query feature ``a`` and
anchor feature ``b`` (homogeneous normalized coordinates) the essential
matrix of the relative pose (R_qk, t_qk) is ``E = [t_qk]_x @ R_qk`` and
satisfies ``a^T E b = 0``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    AmbiguousCheiralityError,
    DegenerateGeometryError,
    InsufficientDataError,
    NoConsensusError,
    NoValidPoseError,
)
from .geometry import (
    PARALLEL_RAY_EPS,
    RelativePoseEstimate,
    ray_pair_midpoint,
    skew,
    unit,
)

MIN_MATCHES = 8


@dataclass(frozen=True)
class MatchSet:
    """Parallel arrays of normalized feature correspondences.

    ``query[i]`` and ``anchor[i]`` are the two projections of the same scene
    point. ``keypoint_ids`` optionally carries the query keypoint identity of
    each row (used downstream to link matches across anchors into tracks).
    """

    query: np.ndarray
    anchor: np.ndarray
    keypoint_ids: np.ndarray = None

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.query, dtype=np.float64))
        a = np.atleast_2d(np.asarray(self.anchor, dtype=np.float64))
        if q.shape != a.shape or q.ndim != 2 or q.shape[1] != 2:
            raise ValueError(f"query/anchor must both be (N, 2), got {q.shape} and {a.shape}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(a))):
            raise ValueError("match coordinates must be finite")
        object.__setattr__(self, "query", q)
        object.__setattr__(self, "anchor", a)
        if self.keypoint_ids is not None:
            ids = np.asarray(self.keypoint_ids, dtype=np.int64)
            if ids.shape != (len(q),):
                raise ValueError("keypoint_ids must be (N,)")
            object.__setattr__(self, "keypoint_ids", ids)

    def __len__(self):
        return len(self.query)

    def subset(self, mask):
        ids = None if self.keypoint_ids is None else self.keypoint_ids[mask]
        return MatchSet(self.query[mask], self.anchor[mask], ids)


@dataclass(frozen=True)
class RansacConfig:
    """Essential-matrix RANSAC parameters."""

    threshold: float = 1e-3
    confidence: float = 0.999
    max_iters: int = 5000
    min_inliers: int = 8

    def __post_init__(self):
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must be in (0, 1)")
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")


def _hartley_normalization(points):
    """Similarity transform taking the centroid to 0, mean radius to sqrt(2)."""
    centroid = points.mean(axis=0)
    spread = np.linalg.norm(points - centroid, axis=1).mean()
    if spread < 1e-12:
        raise DegenerateGeometryError("coincident points; normalization undefined")
    s = np.sqrt(2.0) / spread
    t = np.array(
        [
            [s, 0.0, -s * centroid[0]],
            [0.0, s, -s * centroid[1]],
            [0.0, 0.0, 1.0],
        ]
    )
    return t


def eight_point(query, anchor):
    """Essential matrix from >= 8 correspondences (normalized 8-point).

    Applies Hartley conditioning to both sides, solves the homogeneous
    design by SVD and enforces singular values (1, 1, 0). Raises
    DegenerateGeometryError when the design has more than a one-dimensional
    nullspace (the correspondences do not constrain E).
    """
    query = np.asarray(query, dtype=np.float64)
    anchor = np.asarray(anchor, dtype=np.float64)
    n = len(query)
    if n < MIN_MATCHES:
        raise InsufficientDataError(f"need >= {MIN_MATCHES} matches, got {n}")

    t_a = _hartley_normalization(query)
    t_b = _hartley_normalization(anchor)
    qa = query * t_a[0, 0] + t_a[:2, 2]
    qb = anchor * t_b[0, 0] + t_b[:2, 2]

    ax, ay = qa[:, 0], qa[:, 1]
    bx, by = qb[:, 0], qb[:, 1]
    ones = np.ones(n)
    design = np.column_stack(
        [ax * bx, ax * by, ax, ay * bx, ay * by, ay, bx, by, ones]
    )
    _, svals, vt = np.linalg.svd(design)
    # The design is (n, 9); a vanishing 8th singular value means the
    # nullspace has dimension > 1 and the sample is degenerate (repeated
    # points, points on a conic through both epipoles, ...).
    if svals[7] < 1e-10 * max(svals[0], 1e-300):
        raise DegenerateGeometryError("correspondences do not determine E")
    e_norm = vt[-1].reshape(3, 3)
    e = t_a.T @ e_norm @ t_b
    u, _, vt2 = np.linalg.svd(e)
    return u @ np.diag([1.0, 1.0, 0.0]) @ vt2


def symmetric_epipolar_distance(e, query, anchor):
    """Root-sum-square of the two point-to-epipolar-line distances, per match."""
    query = np.asarray(query, dtype=np.float64)
    anchor = np.asarray(anchor, dtype=np.float64)
    ah = np.column_stack([query, np.ones(len(query))])
    bh = np.column_stack([anchor, np.ones(len(anchor))])
    line_q = bh @ e.T  # epipolar line of b in the query image
    line_a = ah @ e  # epipolar line of a in the anchor image
    algebraic = np.einsum("ij,ij->i", ah, line_q)
    with np.errstate(divide="ignore", invalid="ignore"):
        d_q = algebraic / np.hypot(line_q[:, 0], line_q[:, 1])
        d_a = algebraic / np.hypot(line_a[:, 0], line_a[:, 1])
        dist = np.hypot(d_q, d_a)
    return np.where(np.isfinite(dist), dist, np.inf)


def estimate_essential(matches, config=None, seed=None):
    """RANSAC essential-matrix estimate.

    Returns ``(E, inlier_mask)`` where the mask marks matches whose symmetric
    epipolar distance to the winning E is below the threshold. Every
    hypothesis that beats the running best is re-estimated on its inliers
    until the set stops growing, and the iteration budget adapts to the
    grown inlier ratio under the configured confidence. Raises
    NoConsensusError when no hypothesis reaches ``config.min_inliers``.
    """
    if config is None:
        config = RansacConfig()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = len(matches)
    if n < MIN_MATCHES:
        raise InsufficientDataError(f"need >= {MIN_MATCHES} matches, got {n}")

    query, anchor = matches.query, matches.anchor

    def grow(e, mask):
        # Re-estimate on the inlier set until the count stops growing.
        # Minimal samples are noise-sensitive (narrow fields of view slide
        # along the rotation-translation ambiguity), so the refit usually
        # widens the set; a refit that loses inliers is discarded.
        while int(mask.sum()) >= MIN_MATCHES:
            refit = eight_point(query[mask], anchor[mask])
            refit_mask = symmetric_epipolar_distance(refit, query, anchor) < config.threshold
            if int(refit_mask.sum()) < int(mask.sum()):
                break
            grew = int(refit_mask.sum()) > int(mask.sum())
            e, mask = refit, refit_mask
            if not grew:
                break
        return e, mask

    best_count = 0
    best_e = None
    best_mask = None
    needed = config.max_iters
    i = 0
    while i < needed:
        i += 1
        sample = rng.choice(n, size=MIN_MATCHES, replace=False)
        try:
            e = eight_point(query[sample], anchor[sample])
        except DegenerateGeometryError:
            continue
        mask = symmetric_epipolar_distance(e, query, anchor) < config.threshold
        if int(mask.sum()) > best_count:
            e, mask = grow(e, mask)
            count = int(mask.sum())
            if count > best_count:
                best_count, best_e, best_mask = count, e, mask
                ratio = min(count / n, 1.0 - 1e-12)
                log_miss = np.log1p(-(ratio**MIN_MATCHES))  # log P(sample has an outlier)
                needed = min(needed, int(np.ceil(np.log1p(-config.confidence) / log_miss)))

    if best_e is None or best_count < config.min_inliers:
        raise NoConsensusError(
            f"no essential hypothesis with >= {config.min_inliers} inliers in {i} iterations"
        )
    return best_e, best_mask


def decompose_essential(e):
    """The four (R, t) candidates of an essential matrix.

    Candidates are returned as RelativePoseEstimates in the order
    (R1, +t), (R1, -t), (R2, +t), (R2, -t) with determinant-corrected SVD
    factors. The caller disambiguates by cheirality.
    """
    e = np.asarray(e, dtype=np.float64)
    u, svals, vt = np.linalg.svd(e)
    scale = svals[0]
    if scale <= 0:
        raise ValueError("zero essential matrix")
    if svals[2] > 1e-6 * scale or (svals[0] - svals[1]) > 1e-6 * scale:
        raise ValueError(f"not an essential matrix: singular values {svals}")
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    w = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    r1 = u @ w @ vt
    r2 = u @ w.T @ vt
    t = u[:, 2]
    return [
        RelativePoseEstimate(r1, t),
        RelativePoseEstimate(r1, -t),
        RelativePoseEstimate(r2, t),
        RelativePoseEstimate(r2, -t),
    ]


def _depth_signs(candidate, matches):
    """Per-match (depth_anchor > 0, depth_query > 0) counts for one candidate.

    Triangulates every match by the ray-midpoint construction in the anchor
    frame; near-parallel rays are excluded from the vote.
    """
    r, t = candidate.rotation, candidate.direction
    ah = np.column_stack([matches.query, np.ones(len(matches))])
    bh = np.column_stack([matches.anchor, np.ones(len(matches))])
    d1 = bh / np.linalg.norm(bh, axis=1, keepdims=True)  # anchor-frame rays from origin
    d2 = ah @ r / np.linalg.norm(ah, axis=1, keepdims=True)  # query rays rotated back
    o2 = -r.T @ t  # query center in the anchor frame

    b = np.einsum("ij,ij->i", d1, d2)
    denom = 1.0 - b * b
    valid = denom > PARALLEL_RAY_EPS**2
    w_vec = -o2  # o1 - o2 with o1 = 0
    d = d1 @ w_vec
    ee = d2 @ w_vec
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (b * ee - d) / denom
        t2 = (ee - b * d) / denom
    p1 = t1[:, None] * d1
    p2 = o2 + t2[:, None] * d2
    x = 0.5 * (p1 + p2)
    z_anchor = x[:, 2]
    z_query = x @ r.T[:, 2] + t[2]
    front = valid & (z_anchor > 0) & (z_query > 0)
    return int(front.sum())


def cheirality_select(candidates, matches):
    """Pick the decomposition candidate placing the most matches in front of
    both cameras.

    Raises NoValidPoseError when no candidate has a positive vote and
    AmbiguousCheiralityError when the top two candidates tie.
    """
    if len(matches) == 0:
        raise InsufficientDataError("cheirality vote needs at least one match")
    votes = [_depth_signs(c, matches) for c in candidates]
    order = np.argsort(votes)
    best = order[-1]
    if votes[best] == 0:
        raise NoValidPoseError("no candidate places any match in front of both cameras")
    if len(votes) > 1 and votes[order[-2]] == votes[best]:
        raise AmbiguousCheiralityError(
            f"cheirality vote tied at {votes[best]} of {len(matches)}"
        )
    return candidates[best]


def midpoint_triangulate(pose_a, pose_b, feat_a, feat_b):
    """Two-view triangulation at the midpoint of the common perpendicular.

    Features are normalized coordinates in their respective cameras. Raises
    DegenerateGeometryError for a zero baseline or near-parallel rays.
    """
    feat_a = np.asarray(feat_a, dtype=np.float64)
    feat_b = np.asarray(feat_b, dtype=np.float64)
    origin_a = pose_a.center()
    origin_b = pose_b.center()
    dir_a = unit(pose_a.rotation.T @ np.array([feat_a[0], feat_a[1], 1.0]))
    dir_b = unit(pose_b.rotation.T @ np.array([feat_b[0], feat_b[1], 1.0]))
    return ray_pair_midpoint(origin_a, dir_a, origin_b, dir_b)


def essential_from_relative(rel):
    """E = [t]_x @ R for a relative pose (exact, for synthesis and tests)."""
    return skew(rel.direction) @ rel.rotation
