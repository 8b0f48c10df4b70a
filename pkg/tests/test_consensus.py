"""Pairwise anchor RANSAC and the decoupled pose assembly."""

import numpy as np
import pytest

from conftest import (
    consistent_observations,
    random_rotation,
    random_unit,
    stable_geodesic_deg,
)

from mvloc import (
    AnchorObservation,
    DegenerateGeometryError,
    InsufficientDataError,
    NoConsensusError,
    Pose,
    RelativePoseEstimate,
    anchor_ransac,
    decoupled_pose,
    geodesic_angle,
    pair_hypothesis,
)
from mvloc.consensus import hypothesis_inliers
from mvloc.geometry import rotvec_to_rotation

X = np.array([1.0, 0.0, 0.0])


def scrambled(obs, rng):
    """Replace an observation's relative pose with unrelated garbage."""
    return AnchorObservation(
        obs.anchor_id,
        obs.anchor_pose,
        RelativePoseEstimate(random_rotation(rng), random_unit(rng)),
    )


# ------------------------------------------------------------ pair hypothesis


class TestPairHypothesis:
    def test_zero_noise_pair_recovers_pose(self, rng):
        for _ in range(10):
            obs, query = consistent_observations(rng, 2)
            pose = pair_hypothesis(obs[0], obs[1])
            np.testing.assert_allclose(pose.center(), query.center(), atol=1e-8)
            assert stable_geodesic_deg(pose.rotation, query.rotation) < 1e-6

    def test_intersecting_rays_hit_intersection(self, rng):
        obs, query = consistent_observations(rng, 2)
        pose = pair_hypothesis(obs[0], obs[1])
        np.testing.assert_allclose(pose.center(), query.center(), atol=1e-9)

    def test_rotation_noise_stays_bounded(self, rng):
        # two inputs each 2 degrees off cannot average further than 2 degrees
        for _ in range(20):
            obs, query = consistent_observations(rng, 2)
            noisy = []
            for o in obs:
                axis = random_unit(rng)
                wobble = rotvec_to_rotation(np.deg2rad(2.0) * axis)
                noisy.append(
                    AnchorObservation(
                        o.anchor_id,
                        o.anchor_pose,
                        RelativePoseEstimate(wobble @ o.rel.rotation, o.rel.direction),
                    )
                )
            pose = pair_hypothesis(noisy[0], noisy[1])
            assert geodesic_angle(pose.rotation, query.rotation) <= 2.0 + 1e-9

    def test_parallel_rays_rejected(self):
        rel = RelativePoseEstimate(np.eye(3), -X)  # backward direction +x
        a = AnchorObservation("a", Pose(np.eye(3), np.zeros(3)), rel)
        b = AnchorObservation("b", Pose(np.eye(3), np.array([0.0, -1.0, 0.0])), rel)
        with pytest.raises(DegenerateGeometryError):
            pair_hypothesis(a, b)


# ------------------------------------------------------------- anchor RANSAC


class TestAnchorRansac:
    def test_clean_set_is_fully_inlying(self, rng):
        obs, query = consistent_observations(rng, 20)
        consensus = anchor_ransac(obs)
        assert consensus.inlier_count == 20
        assert consensus.inlier_ids == frozenset(o.anchor_id for o in obs)

    def test_planted_outliers_are_excluded(self, rng):
        obs, query = consistent_observations(rng, 20)
        bad_ids = {"a3", "a7", "a11", "a15", "a19"}
        mixed = [scrambled(o, rng) if o.anchor_id in bad_ids else o for o in obs]
        consensus = anchor_ransac(mixed, seed=0)
        assert consensus.inlier_ids == frozenset(
            o.anchor_id for o in obs if o.anchor_id not in bad_ids
        )

    def test_minimal_pair(self, rng):
        obs, _ = consistent_observations(rng, 2)
        consensus = anchor_ransac(obs)
        assert consensus.inlier_count == 2
        expected = pair_hypothesis(obs[0], obs[1])
        np.testing.assert_allclose(
            consensus.hypothesis_pose.center(), expected.center(), atol=1e-12
        )
        assert consensus.pair_ids == (obs[0].anchor_id, obs[1].anchor_id)

    def test_single_observation_rejected(self, rng):
        obs, _ = consistent_observations(rng, 1)
        with pytest.raises(InsufficientDataError):
            anchor_ransac(obs)

    def test_irreconcilable_pair_has_no_consensus(self, rng):
        obs, _ = consistent_observations(rng, 2)
        # pull the two rotation estimates 120 degrees apart so neither
        # passes the 10 degree gate against their own average
        twisted = AnchorObservation(
            obs[1].anchor_id,
            obs[1].anchor_pose,
            RelativePoseEstimate(
                rotvec_to_rotation(np.deg2rad(120.0) * X) @ obs[1].rel.rotation,
                obs[1].rel.direction,
            ),
        )
        with pytest.raises(NoConsensusError):
            anchor_ransac([obs[0], twisted])

    def test_exhaustive_mode_is_deterministic(self, rng):
        obs, _ = consistent_observations(rng, 12)
        mixed = [scrambled(o, rng) if i in (2, 5) else o for i, o in enumerate(obs)]
        a = anchor_ransac(mixed, mode="exhaustive")
        b = anchor_ransac(mixed, mode="exhaustive")
        assert a.inlier_ids == b.inlier_ids
        assert a.pair_ids == b.pair_ids

    def test_sampled_mode_is_seeded(self, rng):
        obs, _ = consistent_observations(rng, 12)
        a = anchor_ransac(obs, mode="sampled", seed=5)
        b = anchor_ransac(obs, mode="sampled", seed=5)
        assert a.inlier_ids == b.inlier_ids
        np.testing.assert_array_equal(
            a.hypothesis_pose.rotation, b.hypothesis_pose.rotation
        )

    def test_consistent_addition_never_shrinks_consensus(self, rng):
        obs, query = consistent_observations(rng, 8)
        base = anchor_ransac(obs).inlier_count
        from mvloc import relative_from_poses
        from conftest import random_pose

        extra_anchor = random_pose(rng)
        extra = AnchorObservation(
            "extra", extra_anchor, relative_from_poses(query, extra_anchor)
        )
        grown = anchor_ransac(obs + [extra]).inlier_count
        assert grown >= base

    def test_winning_inliers_revalidate(self, rng):
        obs, _ = consistent_observations(rng, 15)
        mixed = [scrambled(o, rng) if i in (1, 6, 9) else o for i, o in enumerate(obs)]
        consensus = anchor_ransac(mixed, seed=2)
        mask = hypothesis_inliers(consensus.hypothesis_pose, mixed)
        passing = {o.anchor_id for o, ok in zip(mixed, mask) if ok}
        assert consensus.inlier_ids <= passing


# -------------------------------------------------------------- decoupled


class TestDecoupledPose:
    def test_zero_noise_recovery(self, rng):
        obs, query = consistent_observations(rng, 8)
        pose = decoupled_pose(obs)
        np.testing.assert_allclose(pose.center(), query.center(), atol=1e-8)
        assert stable_geodesic_deg(pose.rotation, query.rotation) < 1e-6

    def test_rotation_ignores_translation_directions(self, rng):
        obs, _ = consistent_observations(rng, 8)
        swapped = [
            AnchorObservation(
                o.anchor_id,
                o.anchor_pose,
                RelativePoseEstimate(o.rel.rotation, random_unit(rng)),
            )
            for o in obs
        ]
        a = decoupled_pose(obs)
        b = decoupled_pose(swapped)
        np.testing.assert_array_equal(a.rotation, b.rotation)

    def test_center_ignores_relative_rotations(self, rng):
        obs, _ = consistent_observations(rng, 8)
        replaced = []
        for o in obs:
            t_kq = -o.rel.rotation.T @ o.rel.direction
            new_rot = random_rotation(rng)
            replaced.append(
                AnchorObservation(
                    o.anchor_id,
                    o.anchor_pose,
                    RelativePoseEstimate(new_rot, -new_rot @ t_kq),
                )
            )
        a = decoupled_pose(obs)
        b = decoupled_pose(replaced)
        np.testing.assert_allclose(b.center(), a.center(), atol=1e-9)
