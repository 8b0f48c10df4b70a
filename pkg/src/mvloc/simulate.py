"""Synthetic scenes and Monte Carlo studies.

Scenes place a point cloud at the origin with anchor cameras on a ring or a
line looking inward, plus a held-out query camera. Studies compare the
averaging schemes under controlled relative-pose noise, sweep the anchor
count through the full matching pipeline, and isolate the center-estimation
stage in an ablation. Studies default to the line layout, where the anchors
cluster near the query and view the scene from one side, which is the
geometry the toolkit targets; the ring layout surrounds the scene instead
and is kept for generation and visibility tests. All runs are deterministic in the seed: every trial
derives its generator from ``SeedSequence([seed, ...trial index])``, so the
stream partition is the same whether trials run sequentially or not.
"""

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .averaging import (
    AnchorObservation,
    center_average,
    chained_rotation,
    govindu_rotation_average,
    govindu_translation_average,
    locus_ray,
    markley_rotation_average,
)
from .consensus import anchor_ransac, decoupled_pose
from .errors import ConfigurationError, GenerationError, MvlocError
from .geometry import (
    Pose,
    RelativePoseEstimate,
    geodesic_angle,
    project_many,
    relative_from_poses,
    rotvec_to_rotation,
    unit,
)
from .refine import CorrespondenceTrack, refine_pose
from .relpose import (
    MatchSet,
    RansacConfig,
    cheirality_select,
    decompose_essential,
    estimate_essential,
)

MAX_GENERATION_ATTEMPTS = 100
SKIP_FRACTION_LIMIT = 0.1


@dataclass(frozen=True)
class SceneConfig:
    """Geometry of a synthetic scene."""

    n_points: int = 60
    n_anchors: int = 8
    layout: str = "ring"
    radius: float = 5.0
    extent: float = 1.5

    def __post_init__(self):
        if self.n_points < 8:
            raise ValueError("n_points must be >= 8")
        if self.n_anchors < 2:
            raise ValueError("n_anchors must be >= 2")
        if self.layout not in ("ring", "line"):
            raise ValueError(f"layout must be 'ring' or 'line', got {self.layout!r}")
        if not 0 < self.extent < self.radius / 2:
            raise ValueError("extent must be positive and well inside the camera radius")


@dataclass(frozen=True)
class NoiseSpec:
    """Perturbation magnitudes for synthesized observations."""

    sigma_rot_deg: float = 0.0
    sigma_dir_deg: float = 0.0
    sigma_feat: float = 0.0

    def __post_init__(self):
        for name in ("sigma_rot_deg", "sigma_dir_deg", "sigma_feat"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class SyntheticScene:
    points: np.ndarray
    anchor_poses: tuple
    query_pose: Pose
    config: SceneConfig
    seed: int


def _look_at(center, target):
    """World-to-camera rotation for a camera at ``center`` whose optical
    axis passes through ``target``."""
    forward = unit(np.asarray(target, dtype=np.float64) - center)
    x = np.cross([0.0, 0.0, 1.0], forward)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross([1.0, 0.0, 0.0], forward)
    x = unit(x)
    return np.array([x, np.cross(forward, x), forward])


def _pose_at(center, target):
    rotation = _look_at(center, target)
    return Pose(rotation, -rotation @ center)


def _scene_valid(points, poses, radius):
    """All points safely in front of every camera, no coincident cameras."""
    centers = np.array([p.center() for p in poses])
    for i in range(len(centers)):
        for j in range(i + 1, len(centers)):
            if np.linalg.norm(centers[i] - centers[j]) < 1e-3 * radius:
                return False
    for pose in poses:
        feats, depths = project_many(pose, points)
        if depths.min() <= 0.2 * radius or np.abs(feats).max() >= 10.0:
            return False
    return True


def generate_scene(config=None, seed=0):
    """Deterministic synthetic scene for the given config and seed.

    Retries internal draws (with a derived sub-seed, so the scene is still a
    pure function of ``seed``) until the visibility constraints hold; raises
    GenerationError if that never happens.
    """
    if config is None:
        config = SceneConfig()
    n = config.n_anchors
    for attempt in range(MAX_GENERATION_ATTEMPTS):
        rng = np.random.default_rng(np.random.SeedSequence([seed, attempt]))
        points = rng.uniform(-config.extent, config.extent, (config.n_points, 3))
        centroid = points.mean(axis=0)

        if config.layout == "ring":
            angles = 2 * np.pi * np.arange(n) / n + rng.uniform(-0.3, 0.3, n) * (2 * np.pi / n)
            heights = rng.uniform(-0.15, 0.15, n) * config.radius
            centers = centroid + np.column_stack(
                [
                    config.radius * np.cos(angles),
                    config.radius * np.sin(angles),
                    heights,
                ]
            )
            q_angle = rng.uniform(0.0, 2 * np.pi)
            q_radius = config.radius * rng.uniform(0.75, 0.9)
            q_center = centroid + np.array(
                [
                    q_radius * np.cos(q_angle),
                    q_radius * np.sin(q_angle),
                    rng.uniform(-0.15, 0.15) * config.radius,
                ]
            )
        else:  # line
            span = (np.arange(n) / max(n - 1, 1) - 0.5) * config.radius
            heights = rng.uniform(-0.15, 0.15, n) * config.radius
            centers = centroid + np.column_stack(
                [span, np.full(n, -config.radius), heights]
            )
            q_center = centroid + np.array(
                [
                    rng.uniform(-0.25, 0.25) * config.radius,
                    -config.radius * rng.uniform(0.75, 0.9),
                    rng.uniform(-0.15, 0.15) * config.radius,
                ]
            )

        targets = centroid + rng.normal(0.0, 0.03 * config.extent, (n, 3))
        anchor_poses = tuple(_pose_at(c, t) for c, t in zip(centers, targets))
        query_pose = _pose_at(q_center, centroid + rng.normal(0.0, 0.03 * config.extent, 3))

        if _scene_valid(points, list(anchor_poses) + [query_pose], config.radius):
            return SyntheticScene(
                points=points,
                anchor_poses=anchor_poses,
                query_pose=query_pose,
                config=config,
                seed=seed,
            )
    raise GenerationError(
        f"no valid scene in {MAX_GENERATION_ATTEMPTS} attempts for seed {seed}"
    )


def perturb_relative_pose(rel, noise, rng):
    """Noisy copy of a relative pose.

    The rotation is left-multiplied by exp([w]_x) with w ~ N(0, sigma_rot^2 I)
    and the direction rotated the same way at sigma_dir. Both normal draws
    happen regardless of the sigmas so the generator stream does not depend
    on which are zero; a zero sigma leaves that component exactly unchanged.
    """
    w = rng.normal(0.0, np.radians(noise.sigma_rot_deg), 3)
    v = rng.normal(0.0, np.radians(noise.sigma_dir_deg), 3)
    rotation = rel.rotation
    direction = rel.direction
    if noise.sigma_rot_deg > 0:
        rotation = rotvec_to_rotation(w) @ rotation
    if noise.sigma_dir_deg > 0:
        direction = rotvec_to_rotation(v) @ direction
    return RelativePoseEstimate(rotation, direction)


def synthesize_observations(scene, noise, rng, count=None):
    """AnchorObservations for the first ``count`` anchors (default all),
    with exact relative poses perturbed per ``noise``."""
    count = len(scene.anchor_poses) if count is None else count
    observations = []
    for k in range(count):
        anchor_pose = scene.anchor_poses[k]
        rel = perturb_relative_pose(
            relative_from_poses(scene.query_pose, anchor_pose), noise, rng
        )
        observations.append(AnchorObservation(k, anchor_pose, rel))
    return observations


def noisy_features(scene, sigma, rng):
    """Observed features of all scene points in the query and every anchor.

    Returns ``(query (N, 2), anchors (K, N, 2))``, exact projections plus
    iid gaussian noise of the given sigma on each coordinate.
    """
    q_feats, q_depths = project_many(scene.query_pose, scene.points)
    if q_depths.min() <= 0:
        raise GenerationError("scene point behind the query camera")
    a_feats = np.empty((len(scene.anchor_poses), len(scene.points), 2))
    for k, pose in enumerate(scene.anchor_poses):
        feats, depths = project_many(pose, scene.points)
        if depths.min() <= 0:
            raise GenerationError("scene point behind an anchor camera")
        a_feats[k] = feats
    if sigma > 0:
        q_feats = q_feats + rng.normal(0.0, sigma, q_feats.shape)
        a_feats = a_feats + rng.normal(0.0, sigma, a_feats.shape)
    return q_feats, a_feats


@dataclass
class StudyResult:
    """Aggregate table plus per-trial records of one Monte Carlo study."""

    name: str
    seed: int
    config: dict
    rows: list = field(default_factory=list)
    trial_records: list = field(default_factory=list)


def _fmt_cell(value):
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_study_csv(result, path):
    """Aggregate rows as CSV; floats carry full round-trip precision."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        if result.rows:
            header = list(result.rows[0].keys())
            writer.writerow(header)
            for row in result.rows:
                writer.writerow([_fmt_cell(row[k]) for k in header])


def write_study_json(result, path):
    """Full study record (config echo, seed, rows, per-trial data) as JSON."""
    payload = {
        "name": result.name,
        "seed": result.seed,
        "config": result.config,
        "rows": result.rows,
        "trial_records": result.trial_records,
    }
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _check_skip_fraction(skipped, trials, label):
    if skipped > SKIP_FRACTION_LIMIT * trials:
        raise ConfigurationError(
            f"{label}: {skipped}/{trials} trials degenerate; configuration unusable"
        )


def _as_noise_spec(cell):
    """Grid cells may be NoiseSpec instances or bare sigmas in degrees (a
    bare sigma applies equally to rotation and direction)."""
    if isinstance(cell, NoiseSpec):
        return cell
    return NoiseSpec(sigma_rot_deg=float(cell), sigma_dir_deg=float(cell))


def run_noise_study(scene_config=None, noise_grid=(1.0, 2.0, 5.0, 10.0), trials=500, seed=0):
    """Median pose error of coupled vs decoupled averaging across noise levels.

    Method ``govindu``: quaternion-stack rotation average plus reweighted
    translation average, center read off as -R^T T. Method ``decoupled``:
    chordal rotation mean plus closed-form ray center. Each trial draws a
    fresh scene and perturbs the exact relative poses per the grid cell.
    """
    if scene_config is None:
        scene_config = SceneConfig(n_anchors=20, layout="line")
    grid = [_as_noise_spec(cell) for cell in noise_grid]
    result = StudyResult(
        name="noise_study",
        seed=seed,
        config={
            "scene": asdict(scene_config),
            "noise_grid": [asdict(spec) for spec in grid],
            "trials": trials,
        },
    )
    for gi, noise in enumerate(grid):
        errors = {"govindu": [], "decoupled": []}
        skipped = 0
        for trial in range(trials):
            rng = np.random.default_rng(np.random.SeedSequence([seed, gi, trial]))
            scene = generate_scene(scene_config, seed=int(rng.integers(0, 2**31 - 1)))
            observations = synthesize_observations(scene, noise, rng)
            c_true = scene.query_pose.center()
            r_true = scene.query_pose.rotation
            try:
                r_gov = govindu_rotation_average(observations)
                t_gov = govindu_translation_average(observations)
                pose_dec = decoupled_pose(observations)
            except MvlocError:
                skipped += 1
                continue
            c_gov = -r_gov.T @ t_gov
            errors["govindu"].append(
                (np.linalg.norm(c_gov - c_true), geodesic_angle(r_gov, r_true))
            )
            errors["decoupled"].append(
                (
                    np.linalg.norm(pose_dec.center() - c_true),
                    geodesic_angle(pose_dec.rotation, r_true),
                )
            )
        _check_skip_fraction(skipped, trials, f"noise study cell {gi}")
        for method in ("govindu", "decoupled"):
            errs = np.array(errors[method])
            result.rows.append(
                {
                    "sigma_rot_deg": noise.sigma_rot_deg,
                    "sigma_dir_deg": noise.sigma_dir_deg,
                    "method": method,
                    "median_center_err": float(np.median(errs[:, 0])),
                    "median_rot_err_deg": float(np.median(errs[:, 1])),
                    "trials_used": len(errs),
                    "skipped": skipped,
                }
            )
    return result


def sign_test_pvalue(wins_a, wins_b):
    """Exact two-sided binomial sign test p-value (ties excluded upstream)."""
    n = wins_a + wins_b
    if n == 0:
        return 1.0
    k = min(wins_a, wins_b)
    tail = sum(math.comb(n, i) for i in range(k + 1)) / 2**n
    return min(1.0, 2.0 * tail)


def run_averaging_ablation(scene_config=None, noise=5.0, trials=500, seed=0):
    """Isolate the center-estimation stage.

    Both arms share the chordal rotation mean; they differ only in the
    center: translation averaging (-R^T T_avg) vs the closed-form ray
    center. Per-trial error pairs are recorded with a sign test on which arm
    wins.
    """
    if scene_config is None:
        scene_config = SceneConfig(n_anchors=20, layout="line")
    noise = _as_noise_spec(noise)
    result = StudyResult(
        name="averaging_ablation",
        seed=seed,
        config={
            "scene": asdict(scene_config),
            "noise": asdict(noise),
            "trials": trials,
        },
    )
    errs_translation = []
    errs_ray = []
    skipped = 0
    for trial in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence([seed, trial]))
        scene = generate_scene(scene_config, seed=int(rng.integers(0, 2**31 - 1)))
        observations = synthesize_observations(scene, noise, rng)
        c_true = scene.query_pose.center()
        try:
            rotation = markley_rotation_average(
                [chained_rotation(o) for o in observations]
            )
            t_avg = govindu_translation_average(observations)
            c_ray = center_average([locus_ray(o) for o in observations]).center
        except MvlocError:
            skipped += 1
            continue
        err_t = float(np.linalg.norm(-rotation.T @ t_avg - c_true))
        err_r = float(np.linalg.norm(c_ray - c_true))
        errs_translation.append(err_t)
        errs_ray.append(err_r)
        result.trial_records.append(
            {"trial": trial, "err_translation_avg": err_t, "err_ray_center": err_r}
        )
    _check_skip_fraction(skipped, trials, "averaging ablation")

    et = np.array(errs_translation)
    er = np.array(errs_ray)
    wins_ray = int(np.sum(er < et))
    wins_translation = int(np.sum(et < er))
    pvalue = sign_test_pvalue(wins_ray, wins_translation)
    for method, errs, wins in (
        ("translation_avg", et, wins_translation),
        ("ray_center", er, wins_ray),
    ):
        result.rows.append(
            {
                "sigma_rot_deg": noise.sigma_rot_deg,
                "sigma_dir_deg": noise.sigma_dir_deg,
                "method": method,
                "median_center_err": float(np.median(errs)),
                "wins": wins,
                "sign_test_p": pvalue,
                "trials_used": len(errs),
                "skipped": skipped,
            }
        )
    return result


def export_scene_dataset(scene, root, sigma_feat=0.0, seed=0, query_id="query", intrinsics=None):
    """Write a scene as a pipeline dataset (manifest + files) under ``root``.

    Every scene point is matched between the query and every anchor, with
    optional feature noise, through a shared pinhole intrinsic. Ground truth
    for the query is included. Returns the manifest path.
    """
    from .dataset import Intrinsics, write_dataset

    if intrinsics is None:
        intrinsics = Intrinsics(fx=800.0, fy=800.0, cx=320.0, cy=240.0)
    rng = np.random.default_rng(np.random.SeedSequence([seed, len(scene.points)]))
    q_feats, a_feats = noisy_features(scene, sigma_feat, rng)

    anchor_ids = [f"a{k:03d}" for k in range(len(scene.anchor_poses))]
    anchors = {aid: pose for aid, pose in zip(anchor_ids, scene.anchor_poses)}
    intr_table = {aid: intrinsics for aid in anchor_ids}
    intr_table[query_id] = intrinsics

    q_center = scene.query_pose.center()
    neighbors = {
        query_id: sorted(
            (
                (aid, 1.0 / (1.0 + float(np.linalg.norm(pose.center() - q_center))))
                for aid, pose in anchors.items()
            ),
            key=lambda item: (-item[1], item[0]),
        )
    }

    kp_ids = np.arange(len(scene.points))
    uv_q = intrinsics.denormalize(q_feats)
    matches = {}
    for k, aid in enumerate(anchor_ids):
        matches[(query_id, aid)] = (kp_ids, uv_q, intrinsics.denormalize(a_feats[k]))

    return write_dataset(
        root,
        anchors=anchors,
        intrinsics=intr_table,
        neighbors=neighbors,
        matches=matches,
        ground_truth={query_id: scene.query_pose},
    )


def run_k_sweep(scene_config=None, k_values=(2, 5, 10, 25, 50), sigma_feat=1e-3, trials=50, seed=0):
    """Localization error of the full pipeline versus anchor count.

    Each trial builds one scene with the maximum anchor count, estimates a
    relative pose per anchor from noisy feature matches (essential RANSAC,
    cheirality), then for every requested K runs consensus, decoupled
    averaging and latent-point refinement on an evenly spread subset of K
    anchors. Spreading (rather than taking the first K) keeps small-K pairs
    at a usable baseline instead of adjacent, nearly collocated cameras.
    """
    if scene_config is None:
        scene_config = SceneConfig(n_anchors=max(k_values), layout="line")
    k_values = [int(k) for k in k_values]
    if min(k_values) < 2:
        raise ConfigurationError("k values must be >= 2")
    if max(k_values) > scene_config.n_anchors:
        raise ConfigurationError(
            f"k={max(k_values)} exceeds the scene's {scene_config.n_anchors} anchors"
        )
    result = StudyResult(
        name="k_sweep",
        seed=seed,
        config={
            "scene": asdict(scene_config),
            "k_values": k_values,
            "sigma_feat": float(sigma_feat),
            "trials": trials,
        },
    )
    errors = {k: [] for k in k_values}
    skips = {k: 0 for k in k_values}
    kp_ids = None
    # Noisy true matches land around 2 sigma in symmetric epipolar distance.
    # The study has no outliers, so the gate sits at 8 sigma: the inlier
    # refit then absorbs essentially the whole match set and the adaptive
    # budget collapses after the first hypothesis instead of polishing
    # partial consensus sets for hundreds of samples.
    ransac = RansacConfig(threshold=max(1e-3, 8.0 * float(sigma_feat)), max_iters=800)
    for trial in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence([seed, trial]))
        scene = generate_scene(scene_config, seed=int(rng.integers(0, 2**31 - 1)))
        if kp_ids is None or len(kp_ids) != len(scene.points):
            kp_ids = np.arange(len(scene.points))
        q_feats, a_feats = noisy_features(scene, sigma_feat, rng)

        rel_by_anchor = {}
        mask_by_anchor = {}
        for k in range(scene_config.n_anchors):
            matches = MatchSet(q_feats, a_feats[k], keypoint_ids=kp_ids)
            try:
                essential, mask = estimate_essential(matches, config=ransac, seed=rng)
                rel = cheirality_select(decompose_essential(essential), matches.subset(mask))
            except MvlocError:
                continue
            rel_by_anchor[k] = rel
            mask_by_anchor[k] = mask

        c_true = scene.query_pose.center()
        r_true = scene.query_pose.rotation
        anchor_pose_map = {k: pose for k, pose in enumerate(scene.anchor_poses)}
        for k_req in k_values:
            spread = np.round(np.linspace(0, scene_config.n_anchors - 1, k_req)).astype(int)
            usable = [k for k in spread if k in rel_by_anchor]
            if len(usable) < 2:
                skips[k_req] += 1
                continue
            observations = [
                AnchorObservation(k, scene.anchor_poses[k], rel_by_anchor[k]) for k in usable
            ]
            try:
                consensus = anchor_ransac(observations, seed=rng)
                inliers = [o for o in observations if o.anchor_id in consensus.inlier_ids]
                stage1 = decoupled_pose(inliers)
            except MvlocError:
                skips[k_req] += 1
                continue
            inlier_ids = {o.anchor_id for o in inliers}
            tracks = []
            for j in range(len(scene.points)):
                views = [
                    (k, a_feats[k][j])
                    for k in usable
                    if k in inlier_ids and mask_by_anchor[k][j]
                ]
                if len(views) >= 2:
                    tracks.append(CorrespondenceTrack(int(j), q_feats[j], tuple(views)))
            final = stage1
            try:
                final = refine_pose(tracks, anchor_pose_map, stage1).pose
            except MvlocError:
                pass
            errors[k_req].append(
                (
                    np.linalg.norm(final.center() - c_true),
                    geodesic_angle(final.rotation, r_true),
                )
            )

    for k_req in k_values:
        _check_skip_fraction(skips[k_req], trials, f"k sweep K={k_req}")
        errs = np.array(errors[k_req])
        result.rows.append(
            {
                "k": k_req,
                "median_center_err": float(np.median(errs[:, 0])),
                "median_rot_err_deg": float(np.median(errs[:, 1])),
                "trials_used": len(errs),
                "skipped": skips[k_req],
            }
        )
    return result
