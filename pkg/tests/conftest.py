"""Shared helpers for the mvloc test suite.

Rotation constructors and random pose factories used across modules live
here so expected values in tests are built from one set of primitives.
"""

import numpy as np
import pytest

from mvloc import Pose
from mvloc.geometry import quat_to_rotation, rotation_to_quat

# Lines recorded by the acceptance tests; printed as a summary section so
# each criterion shows one visible pass/fail line in the terminal output.
ACCEPTANCE_LINES = []


def record(line):
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


# ---------------------------------------------------------------- rotations


def rot_x(deg):
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(deg):
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(deg):
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def random_rotation(rng):
    q = rng.normal(size=4)
    q = q / np.linalg.norm(q)
    return quat_to_rotation(q)


def random_unit(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def random_pose(rng, spread=3.0):
    r = random_rotation(rng)
    center = rng.uniform(-spread, spread, size=3)
    return Pose(r, -r @ center)


def consistent_observations(rng, k, spread=3.0):
    """k noiseless AnchorObservations of one random query pose."""
    from mvloc import AnchorObservation, relative_from_poses

    query = random_pose(rng, spread)
    obs = []
    for i in range(k):
        anchor = random_pose(rng, spread)
        # guard against an anchor landing on the query center
        while np.linalg.norm(anchor.center() - query.center()) < 0.5:
            anchor = random_pose(rng, spread)
        obs.append(AnchorObservation(f"a{i}", anchor, relative_from_poses(query, anchor)))
    return obs, query


def stable_geodesic_deg(a, b):
    """Angle between two rotations, accurate near zero.

    The arccos-of-trace form loses half the significant digits close to
    identity (trace rounding of order eps turns into sqrt(eps) angle), so
    sub-1e-6-degree comparisons go through the quaternion instead.
    """
    q = rotation_to_quat(a.T @ b)
    return np.rad2deg(2.0 * np.arctan2(np.linalg.norm(q[1:]), abs(q[0])))


# ------------------------------------------------- triangulation oracle


def reference_relative_poses(track, anchor_poses, ref_id):
    """Observed features and poses of the non-reference views expressed
    relative to the reference view: x_k = R_k1 x_1 + T_k1."""
    ref_pose = anchor_poses[ref_id]
    feats, rels = [], []
    ref_feat = None
    for aid, feat in track.anchors:
        if aid == ref_id:
            ref_feat = np.asarray(feat, dtype=float)
            continue
        pose = anchor_poses[aid]
        r = pose.rotation @ ref_pose.rotation.T
        t = pose.translation - r @ ref_pose.translation
        feats.append(np.asarray(feat, dtype=float))
        rels.append((r, t))
    return ref_feat, feats, rels


def e1_direct(ref_feat, feats, rels, g1x, g1y, rho):
    """Reprojection-sum form of the two-term triangulation energy,
    vectorized over parameter grids (g1x, g1y, rho broadcast together)."""
    total = (g1x - ref_feat[0]) ** 2 + (g1y - ref_feat[1]) ** 2
    for (r, t), feat in zip(rels, feats):
        px = rho * (r[0, 0] * g1x + r[0, 1] * g1y + r[0, 2]) + t[0]
        py = rho * (r[1, 0] * g1x + r[1, 1] * g1y + r[1, 2]) + t[1]
        pz = rho * (r[2, 0] * g1x + r[2, 1] * g1y + r[2, 2]) + t[2]
        total = total + (px / pz - feat[0]) ** 2 + (py / pz - feat[1]) ** 2
    return total


def grid_polish_minimum(ref_feat, feats, rels, g_center, rho_center,
                        g_halfwidth=5e-3, rho_relwidth=0.05):
    """Exhaustive grid search over the stated parameter windows, refined
    by repeatedly shrinking the grid around the running argmin until the
    cell size is far below the requested resolution."""
    cx, cy = float(g_center[0]), float(g_center[1])
    cr = float(rho_center)
    hx = hy = g_halfwidth
    hr = rho_relwidth * cr
    n = 21
    best = None
    for _ in range(45):
        gx = np.linspace(cx - hx, cx + hx, n)
        gy = np.linspace(cy - hy, cy + hy, n)
        gr = np.maximum(np.linspace(cr - hr, cr + hr, n), 1e-12)
        mx, my, mr = np.meshgrid(gx, gy, gr, indexing="ij")
        vals = e1_direct(ref_feat, feats, rels, mx, my, mr)
        idx = np.unravel_index(np.argmin(vals), vals.shape)
        cx, cy, cr = mx[idx], my[idx], mr[idx]
        best = vals[idx]
        hx *= 0.5
        hy *= 0.5
        hr *= 0.5
    return np.array([cx, cy]), cr, float(best)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
