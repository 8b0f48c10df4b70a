"""Backend equivalence: the compiled kernels against the numpy fallback."""

import itertools
import os
import subprocess
import sys

import numpy as np
import pytest

import mvloc
from conftest import random_rotation, random_unit
from mvloc._kernels import _pure

_native = pytest.importorskip(
    "mvloc._kernels._native", reason="compiled extension not built"
)


def residual_inputs(seed, m=7):
    rng = np.random.default_rng(seed)
    ref_feat = rng.normal(0, 0.3, 2)
    obs = rng.normal(0, 0.3, (m, 2))
    rots = np.stack([random_rotation(rng) for _ in range(m)])
    trans = rng.normal(0, 1.0, (m, 3))
    x, y = rng.normal(0, 0.3, 2)
    rho = float(rng.uniform(1.0, 5.0))
    return ref_feat, obs, rots, trans, x, y, rho


def consensus_inputs(seed, k=10):
    rng = np.random.default_rng(seed)
    origins = rng.normal(0, 2.0, (k, 3))
    dirs = np.stack([random_unit(rng) for _ in range(k)])
    quats = []
    for _ in range(k):
        q = rng.normal(0, 1.0, 4)
        quats.append(q / np.linalg.norm(q))
    pairs = np.array(list(itertools.combinations(range(k), 2)), dtype=np.int64)
    return origins, dirs, np.stack(quats), pairs


class TestBackendSelection:
    def test_backend_is_native_when_built(self):
        assert mvloc.KERNEL_BACKEND == "native"

    def test_env_var_forces_pure(self):
        out = subprocess.run(
            [sys.executable, "-c", "import mvloc; print(mvloc.KERNEL_BACKEND)"],
            env={**os.environ, "MVLOC_PURE_KERNELS": "1"},
            capture_output=True,
            text=True,
            check=True,
        )
        assert out.stdout.strip() == "pure"


class TestResidualJacEquivalence:
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_pure(self, seed):
        args = residual_inputs(seed)
        r_n, j_n, d_n = _native.e1_residual_jac(*args)
        r_p, j_p, d_p = _pure.e1_residual_jac(*args)
        np.testing.assert_allclose(r_n, r_p, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(j_n, j_p, rtol=1e-12, atol=1e-12)
        assert abs(d_n - d_p) < 1e-12

    def test_empty_observation_block(self):
        ref_feat = np.array([0.1, -0.2])
        empty = np.zeros((0, 2)), np.zeros((0, 3, 3)), np.zeros((0, 3))
        for impl in (_native, _pure):
            r, jac, min_depth = impl.e1_residual_jac(ref_feat, *empty, 0.0, 0.0, 1.0)
            assert r.shape == (2,)
            assert jac.shape == (2, 3)
            assert min_depth == np.inf


class TestValueEquivalence:
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_pure(self, seed):
        args = residual_inputs(seed, m=5)
        v_n, d_n = _native.e1_value(*args)
        v_p, d_p = _pure.e1_value(*args)
        assert abs(v_n - v_p) < 1e-12 * max(1.0, abs(v_p))
        assert abs(d_n - d_p) < 1e-12

    @pytest.mark.parametrize("seed", range(5))
    def test_value_equals_residual_norm(self, seed):
        # same energy through two routes: closed form vs sum of squared
        # residuals, agreement only up to the closed form's cancellation
        args = residual_inputs(seed, m=5)
        value, _ = _pure.e1_value(*args)
        r, _, _ = _pure.e1_residual_jac(*args)
        assert abs(value - r @ r) < 1e-9 * max(1.0, value)


class TestConsensusEquivalence:
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_pure(self, seed):
        origins, dirs, quats, pairs = consensus_inputs(seed)
        cos_ray = np.cos(np.radians(5.0))
        cos_half = np.cos(np.radians(5.0))
        n = _native.consensus_scores(origins, dirs, quats, pairs, cos_ray, cos_half)
        p = _pure.consensus_scores(origins, dirs, quats, pairs, cos_ray, cos_half)
        np.testing.assert_array_equal(np.asarray(n), np.asarray(p))

    def test_degenerate_pairs_score_negative(self):
        origins, dirs, quats, _ = consensus_inputs(3, k=4)
        origins[1] = origins[0]  # zero baseline
        dirs[3] = dirs[2]  # parallel rays
        pairs = np.array([[0, 1], [2, 3]], dtype=np.int64)
        cos_ray = np.cos(np.radians(5.0))
        cos_half = np.cos(np.radians(5.0))
        for impl in (_native, _pure):
            scores = np.asarray(
                impl.consensus_scores(origins, dirs, quats, pairs, cos_ray, cos_half)
            )
            assert scores[0] == -1
            # parallel rays fail unless the pair shares no valid midpoint
            assert scores[1] == -1
