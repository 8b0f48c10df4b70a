"""End-to-end localization of queries against an anchor database.

Per query: take the top-K retrieved anchors, estimate a scale-free relative
pose to each from the feature matches (essential RANSAC + cheirality), find
the consensus subset of those estimates, average them into the stage-1 pose,
and refine against triangulated feature tracks. Deterministic for a given
dataset and seed: per-query generators are derived from the global seed and
the query id, so results do not depend on evaluation order.
"""

import csv
import hashlib
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .averaging import AnchorObservation
from .consensus import anchor_ransac, decoupled_pose
from .errors import ConfigurationError, InsufficientDataError, MvlocError, ParseError
from .geometry import Pose, geodesic_angle, quat_to_rotation, rotation_to_quat
from .refine import CorrespondenceTrack, RefineConfig, refine_pose
from .relpose import RansacConfig, cheirality_select, decompose_essential, estimate_essential

ACCURACY_THRESHOLDS = ((0.25, 2.0), (0.5, 5.0), (5.0, 10.0))


@dataclass(frozen=True)
class PipelineConfig:
    """Tunable parameters of the localization pipeline."""

    top_k: int = 150
    min_matches: int = 8
    epi_threshold: float = 1e-3
    ransac_confidence: float = 0.999
    ransac_max_iters: int = 5000
    theta_ray_deg: float = 5.0
    theta_rot_deg: float = 10.0
    tau_reproj: float = 0.01
    huber_scale: Optional[float] = None
    seed: int = 0

    @classmethod
    def from_dict(cls, raw):
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def ransac_config(self):
        return RansacConfig(
            threshold=self.epi_threshold,
            confidence=self.ransac_confidence,
            max_iters=self.ransac_max_iters,
            min_inliers=max(self.min_matches, 8),
        )

    def refine_config(self):
        return RefineConfig(tau_reproj=self.tau_reproj, huber_scale=self.huber_scale)


@dataclass(frozen=True)
class QueryResult:
    query_id: str
    stage1_pose: Pose
    refined_pose: Optional[Pose]
    n_anchors_considered: int
    n_anchors_estimated: int
    inlier_anchor_ids: tuple
    tracks_used: int
    status: str
    error_m: Optional[float] = None
    error_deg: Optional[float] = None

    @property
    def final_pose(self):
        return self.refined_pose if self.refined_pose is not None else self.stage1_pose


@dataclass(frozen=True)
class FailureRecord:
    query_id: str
    reason: str


def query_rng(seed, query_id):
    """Generator derived from the run seed and the query id (order-free)."""
    digest = hashlib.sha256(str(query_id).encode()).digest()
    words = np.frombuffer(digest[:16], dtype=np.uint32)
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + [int(w) for w in words]))


def localize_query(dataset, query_id, config=None, rng=None):
    """Localize one query; raises an MvlocError subclass when impossible."""
    if config is None:
        config = PipelineConfig()
    if rng is None:
        rng = query_rng(config.seed, query_id)
    neighbors = dataset.neighbors.get(query_id)
    if not neighbors:
        raise InsufficientDataError(f"query {query_id!r} has no neighbor list")
    candidates = neighbors[: config.top_k]
    ransac_cfg = config.ransac_config()
    min_matches = max(config.min_matches, 8)

    observations = []
    inlier_matches = {}
    for anchor_id, _score in candidates:
        try:
            matches = dataset.load_matches(query_id, anchor_id)
        except ConfigurationError:
            continue  # missing match file; retrieval can outrun matching
        if len(matches) < min_matches:
            continue
        try:
            essential, mask = estimate_essential(matches, config=ransac_cfg, seed=rng)
            inliers = matches.subset(mask)
            rel = cheirality_select(decompose_essential(essential), inliers)
        except MvlocError:
            continue
        observations.append(
            AnchorObservation(anchor_id, dataset.anchors[anchor_id], rel)
        )
        inlier_matches[anchor_id] = inliers

    if len(observations) < 2:
        raise InsufficientDataError(
            f"query {query_id!r}: only {len(observations)} usable anchor estimates"
        )

    consensus = anchor_ransac(
        observations,
        theta_ray_deg=config.theta_ray_deg,
        theta_rot_deg=config.theta_rot_deg,
        seed=rng,
    )
    inlier_obs = [o for o in observations if o.anchor_id in consensus.inlier_ids]
    stage1 = decoupled_pose(inlier_obs)

    track_views = {}
    track_query_feats = {}
    for obs in inlier_obs:
        matches = inlier_matches[obs.anchor_id]
        if matches.keypoint_ids is None:
            continue
        for row, kp_id in enumerate(matches.keypoint_ids):
            kp_id = int(kp_id)
            track_views.setdefault(kp_id, []).append(
                (obs.anchor_id, matches.anchor[row])
            )
            track_query_feats.setdefault(kp_id, matches.query[row])
    tracks = [
        CorrespondenceTrack(kp_id, track_query_feats[kp_id], tuple(views))
        for kp_id, views in sorted(track_views.items())
        if len(views) >= 2
    ]

    refined = None
    tracks_used = 0
    status = "ok"
    try:
        result = refine_pose(
            tracks, dataset.anchors, stage1, config=config.refine_config()
        )
        refined = result.pose
        tracks_used = result.points_used
    except (InsufficientDataError, MvlocError) as exc:
        status = f"stage1-only: {exc}"

    error_m = None
    error_deg = None
    if dataset.ground_truth and query_id in dataset.ground_truth:
        truth = dataset.ground_truth[query_id]
        final = refined if refined is not None else stage1
        error_m = float(np.linalg.norm(final.center() - truth.center()))
        error_deg = float(geodesic_angle(final.rotation, truth.rotation))

    return QueryResult(
        query_id=query_id,
        stage1_pose=stage1,
        refined_pose=refined,
        n_anchors_considered=len(candidates),
        n_anchors_estimated=len(observations),
        inlier_anchor_ids=tuple(sorted(consensus.inlier_ids, key=str)),
        tracks_used=tracks_used,
        status=status,
        error_m=error_m,
        error_deg=error_deg,
    )


def localize_run(dataset, config=None):
    """Localize every query in the dataset's neighbor table.

    Returns (results, failures); parse errors propagate, per-query geometric
    failures are collected.
    """
    if config is None:
        config = PipelineConfig()
    results = []
    failures = []
    for query_id in sorted(dataset.neighbors):
        try:
            results.append(localize_query(dataset, query_id, config))
        except ParseError:
            raise
        except MvlocError as exc:
            failures.append(FailureRecord(query_id=query_id, reason=str(exc)))
    return results, failures


def score_run(results, ground_truth, n_unlocalized=0):
    """Accuracy report of a localization run against ground truth.

    Accuracy percentages count unlocalized queries in the denominator;
    medians are over the localized ones. Raises InsufficientDataError when
    there is nothing to score and ConfigurationError when a result has no
    ground-truth pose.
    """
    results = list(results)
    if not results:
        raise InsufficientDataError("no localized queries to score")
    errors_m = []
    errors_deg = []
    for res in results:
        if res.query_id not in ground_truth:
            raise ConfigurationError(f"no ground truth for query {res.query_id!r}")
        truth = ground_truth[res.query_id]
        pose = res.final_pose
        errors_m.append(float(np.linalg.norm(pose.center() - truth.center())))
        errors_deg.append(float(geodesic_angle(pose.rotation, truth.rotation)))
    errors_m = np.array(errors_m)
    errors_deg = np.array(errors_deg)
    total = len(results) + n_unlocalized
    accuracy = {}
    for thr_m, thr_deg in ACCURACY_THRESHOLDS:
        hits = int(np.sum((errors_m <= thr_m) & (errors_deg <= thr_deg)))
        key = f"within_{format(thr_m, 'g')}m_{format(thr_deg, 'g')}deg"
        accuracy[key] = 100.0 * hits / total
    return {
        "n_scored": len(results),
        "n_unlocalized": n_unlocalized,
        "median_error_m": float(np.median(errors_m)),
        "median_error_deg": float(np.median(errors_deg)),
        "accuracy_pct": accuracy,
    }


_POSE_COLS = ("qw", "qx", "qy", "qz", "tx", "ty", "tz")


def _pose_fields(pose):
    if pose is None:
        return [""] * 7
    q = rotation_to_quat(pose.rotation)
    return [format(v, ".17g") for v in (*q, *pose.translation)]


def write_results_csv(path, results, failures=()):
    """Per-query results (and failures) as CSV, deterministic bytes."""
    header = (
        ["query_id", "status", "n_anchors_considered", "n_anchors_estimated"]
        + ["n_inlier_anchors", "tracks_used"]
        + [f"s1_{c}" for c in _POSE_COLS]
        + [f"ref_{c}" for c in _POSE_COLS]
        + ["error_m", "error_deg"]
    )
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for res in sorted(results, key=lambda r: r.query_id):
            writer.writerow(
                [
                    res.query_id,
                    res.status,
                    res.n_anchors_considered,
                    res.n_anchors_estimated,
                    len(res.inlier_anchor_ids),
                    res.tracks_used,
                ]
                + _pose_fields(res.stage1_pose)
                + _pose_fields(res.refined_pose)
                + [
                    "" if res.error_m is None else format(res.error_m, ".17g"),
                    "" if res.error_deg is None else format(res.error_deg, ".17g"),
                ]
            )
        for failure in sorted(failures, key=lambda f: f.query_id):
            writer.writerow(
                [failure.query_id, f"failed: {failure.reason}", "", "", "", ""]
                + [""] * 14
                + ["", ""]
            )


def read_results_csv(path):
    """Read back a results CSV into (results, n_failed).

    Reconstructs poses only; counters not needed for scoring are restored
    best-effort.
    """
    results = []
    n_failed = 0
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or "query_id" not in reader.fieldnames:
            raise ParseError(path, 1, "not a results CSV")
        for row in reader:
            status = row["status"]
            if status.startswith("failed"):
                n_failed += 1
                continue
            stage1 = _pose_from_row(row, "s1_", path)
            if stage1 is None:
                raise ParseError(path, 0, f"missing stage-1 pose for {row['query_id']!r}")
            refined = _pose_from_row(row, "ref_", path)
            results.append(
                QueryResult(
                    query_id=row["query_id"],
                    stage1_pose=stage1,
                    refined_pose=refined,
                    n_anchors_considered=int(row["n_anchors_considered"] or 0),
                    n_anchors_estimated=int(row["n_anchors_estimated"] or 0),
                    inlier_anchor_ids=(),
                    tracks_used=int(row["tracks_used"] or 0),
                    status=status,
                    error_m=float(row["error_m"]) if row.get("error_m") else None,
                    error_deg=float(row["error_deg"]) if row.get("error_deg") else None,
                )
            )
    return results, n_failed


def _pose_from_row(row, prefix, path):
    values = [row.get(prefix + c, "") for c in _POSE_COLS]
    if all(v == "" for v in values):
        return None
    try:
        numbers = [float(v) for v in values]
    except ValueError:
        raise ParseError(path, 0, f"bad pose fields {prefix}*") from None
    q = np.array(numbers[:4])
    norm = np.linalg.norm(q)
    if abs(norm - 1.0) > 1e-3:
        raise ParseError(path, 0, f"pose quaternion norm {norm:.6f} is not 1")
    # dividing by a norm of 1.0 +/- 1ulp still churns the low bits,
    # so only renormalize when the file is meaningfully off unit
    if abs(norm - 1.0) > 1e-9:
        q = q / norm
    return Pose(quat_to_rotation(q), numbers[4:])


def write_report_json(path, report):
    with open(path, "w") as handle:
        json.dump(report, handle, indent=2, sort_keys=True)
        handle.write("\n")
