import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from crossview import autodiff as ad
from crossview.autodiff import Tensor
from crossview.errors import DimensionError, EmptyInputError, InputError, SingularInputError
from crossview.gradcheck import check_gradients
from crossview.heads import (AprWeights, DenseHead, DenseRegressor, Pose, PoseHead, apr_loss,
                             flow_infer_tiled, procrustes, procrustes_orthonormalize, quat_log,
                             relative_pose_loss, stereo_mse_log_loss, tile_assignment, tile_layout,
                             tile_positions)
from crossview.heads.pose import quat_from_axis_angle
from crossview.model import CrossViewNet, ModelConfig


def toy_regressor(channels=2, seed=0):
    cfg = ModelConfig(img_size=32, patch_size=8, enc_dim=16, enc_depth=1, enc_heads=2,
                      dec_dim=16, dec_depth=1, dec_heads=2)
    return DenseRegressor(CrossViewNet(cfg, seed=seed), channels, seed=seed)


class TestDenseHead:
    def test_default_shape(self, rng):
        head = DenseHead(512, 16, 2, rng)
        with ad.no_grad():
            out = head(rng.standard_normal((1, 196, 512)).astype(np.float32), (14, 14))
        assert out.shape == (1, 224, 224, 2)

    def test_zero_weights_give_zero_field(self, rng):
        head = DenseHead(16, 4, 2, rng)
        head.proj.weight.data[:] = 0
        head.proj.bias.data[:] = 0
        out = head(rng.standard_normal((1, 6, 16)), (2, 3)).data
        assert out.shape == (1, 8, 12, 2) and not out.any()

    def test_token_block_lands_on_its_patch(self, f64):
        head = DenseHead(4, 2, 1)
        head.proj.weight.data = np.zeros((4, 4))
        head.proj.bias.data = np.arange(4.0)
        feats = np.zeros((1, 2, 4))
        out = head(feats, (1, 2)).data[0, :, :, 0]
        np.testing.assert_array_equal(out, [[0, 1, 0, 1], [2, 3, 2, 3]])

    def test_gradient(self, f64, rng):
        head = DenseHead(8, 2, 2, rng)
        x = Tensor(rng.standard_normal((1, 4, 8)), requires_grad=True, name="x")
        w = rng.standard_normal((1, 4, 4, 2))
        errs = check_gradients(lambda: ad.sum_(head(x, (2, 2)) * w), [x] + head.parameters())
        assert max(errs.values()) <= 1e-4, errs

    def test_regressor_gradient_reaches_backbone(self, rng):
        reg = toy_regressor()
        out = reg(rng.random((32, 32, 3)), rng.random((32, 32, 3)))
        ad.mean(out * out).backward()
        assert np.abs(reg.net.patch_embed.weight.grad).sum() > 0

    def test_rejects_wrong_width(self, rng):
        with pytest.raises(DimensionError):
            DenseHead(8, 2, 2, rng)(np.zeros((1, 4, 6)), (2, 2))


class TestTiling:
    def test_positions_clamp_last_tile(self):
        assert tile_positions(448, 224, 112) == [0, 112, 224]
        assert tile_positions(300, 224, 112) == [0, 76]
        assert tile_positions(224, 224, 112) == [0]

    def test_single_tile_is_direct(self, rng):
        reg = toy_regressor()
        a, b = rng.random((32, 32, 3)), rng.random((32, 32, 3))
        stitched = flow_infer_tiled(a, b, reg.predict, tile=32, stride=16)
        np.testing.assert_array_equal(stitched, reg.predict(a, b))

    @pytest.mark.parametrize("shape", [(224, 448), (300, 260), (224, 224)])
    def test_partition(self, shape):
        H, W = shape
        layout = tile_layout(H, W, 224, 112)
        owner = tile_assignment(H, W, 224, 112)
        counts = np.zeros(shape, dtype=int)
        for k, (y, x) in enumerate(layout):
            sel = owner == k
            counts += sel
            ys, xs = np.nonzero(sel)
            if len(ys):
                assert ys.min() >= y and ys.max() < y + 224 and xs.min() >= x and xs.max() < x + 224
        assert np.all(counts == 1)

    def test_every_pixel_written(self):
        out = flow_infer_tiled(np.zeros((224, 448, 3)), np.zeros((224, 448, 3)),
                               lambda a, b: np.ones(a.shape[:2] + (2,)))
        assert out.shape == (224, 448, 2) and np.all(out == 1)

    def test_pixel_goes_to_nearest_centre(self):
        layout = tile_layout(224, 448, 224, 112)
        k = tile_assignment(224, 448, 224, 112)[0, 300]
        assert layout[k][1] + 112 == 336

    def test_stitch_uses_owner_tile(self):
        H, W = 224, 448
        seen = []

        def regress(a, b):
            seen.append(len(seen))
            return np.full(a.shape[:2], float(len(seen) - 1))

        out = flow_infer_tiled(np.zeros((H, W, 3)), np.zeros((H, W, 3)), regress)
        np.testing.assert_array_equal(out, tile_assignment(H, W, 224, 112))

    def test_small_image_rejected(self):
        with pytest.raises(DimensionError):
            tile_positions(100, 224, 112)


def random_rotation(seed):
    return Rotation.random(random_state=seed).as_matrix()


class TestProcrustes:
    def test_identity(self):
        np.testing.assert_allclose(procrustes_orthonormalize(np.eye(3)), np.eye(3), atol=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_scale_invariance(self, seed):
        R0 = random_rotation(seed)
        np.testing.assert_allclose(procrustes_orthonormalize(5.0 * R0), R0, atol=1e-8)

    @given(st.integers(0, 2**31))
    def test_output_is_rotation(self, seed):
        M = np.random.default_rng(seed).standard_normal((3, 3))
        R = procrustes_orthonormalize(M)
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-10)
        assert np.linalg.det(R) == pytest.approx(1.0)

    def test_nearest_among_random_rotations(self):
        rng = np.random.default_rng(0)
        M = rng.standard_normal((3, 3))
        R = procrustes_orthonormalize(M)
        others = Rotation.random(10_000, random_state=1).as_matrix()
        dist = np.linalg.norm(M - others, axis=(1, 2))
        assert np.linalg.norm(M - R) <= dist.min()

    def test_batched(self, rng):
        M = rng.standard_normal((4, 3, 3))
        R = procrustes(M).data
        for k in range(4):
            np.testing.assert_allclose(R[k], procrustes_orthonormalize(M[k]), atol=1e-6)

    @pytest.mark.parametrize("seed", range(3))
    def test_gradient(self, f64, seed):
        rng = np.random.default_rng(seed)
        M = Tensor(rng.standard_normal((3, 3)) + 2 * np.eye(3), requires_grad=True, name="M")
        w = rng.standard_normal((3, 3))
        errs = check_gradients(lambda: ad.sum_(procrustes(M) * w), [M])
        assert errs["M"] <= 1e-4

    def test_rank_deficient(self):
        with pytest.raises(SingularInputError):
            procrustes_orthonormalize(np.diag([1.0, 1.0, 0.0]))


class TestRelativePose:
    def test_equal_is_zero(self):
        R = random_rotation(3)
        assert float(relative_pose_loss(Pose(R, [1, 2, 3]), Pose(R, [1, 2, 3])).data) == 0.0

    def test_translation_term(self):
        R = random_rotation(4)
        loss = relative_pose_loss(Pose(R, [0.1, 0, 0]), Pose(R, [0, 0, 0]))
        assert float(loss.data) == pytest.approx(1.0)

    def test_half_turn_about_z(self):
        Rz = np.diag([-1.0, -1.0, 1.0])
        assert float(relative_pose_loss(Pose(Rz, np.zeros(3)), Pose(np.eye(3), np.zeros(3))).data) == \
            pytest.approx(8.0)

    def test_head_outputs_rotation(self, rng):
        head = PoseHead(16, 4, rng, token_dim=8, hidden=32)
        with ad.no_grad():
            pose = head(rng.standard_normal((2, 4, 16)))
        assert pose.R.shape == (2, 3, 3) and pose.t.shape == (2, 3)
        np.testing.assert_allclose(pose.R.data @ np.swapaxes(pose.R.data, 1, 2), np.broadcast_to(np.eye(3), (2, 3, 3)),
                                   atol=1e-5)


class TestAbsolutePose:
    def test_exact_prediction_leaves_weights(self):
        q = quat_from_axis_angle([1, 2, 3], 0.7)
        loss = apr_loss(([1.0, 2.0, 3.0], q), ([1.0, 2.0, 3.0], q), AprWeights())
        assert float(loss.data) == pytest.approx(-3.0)

    def test_identity_log(self):
        np.testing.assert_array_equal(quat_log([1.0, 0, 0, 0]).data, 0.0)

    def test_quarter_turn_about_x(self):
        c = math.cos(math.pi / 4)
        np.testing.assert_allclose(quat_log([c, c, 0, 0]).data, [math.pi / 2, 0, 0], atol=1e-12)

    def test_double_cover(self):
        q = quat_from_axis_angle([0, 1, 1], 2.0)
        np.testing.assert_allclose(quat_log(-q).data, quat_log(q).data, atol=1e-12)

    @given(st.integers(0, 2**31))
    def test_matches_scipy_rotvec(self, seed):
        rot = Rotation.random(random_state=seed)
        x, y, z, w = rot.as_quat()
        np.testing.assert_allclose(quat_log([w, x, y, z]).data, rot.as_rotvec(), atol=1e-9)

    @pytest.mark.parametrize("angle", [1e-3, 0.5, 2.5])
    def test_gradient(self, f64, angle):
        q = Tensor(quat_from_axis_angle([0.3, -0.5, 0.8], angle), requires_grad=True, name="q")
        w = np.array([0.4, -1.1, 0.7])
        errs = check_gradients(lambda: ad.sum_(quat_log(q) * w), [q], h=1e-7)
        assert errs["q"] <= 1e-4

    def test_weights_get_gradients(self):
        w = AprWeights()
        q = quat_from_axis_angle([1, 0, 0], 0.3)
        apr_loss(([0.0, 0, 0], q), ([1.0, 0, 0], quat_from_axis_angle([1, 0, 0], 0.1)), w).backward()
        assert float(w.beta.grad) == pytest.approx(1 - 1.0)
        assert float(w.gamma.grad) == pytest.approx(1 - math.exp(3) * 0.2, rel=1e-6)

    def test_rejects_non_unit(self):
        with pytest.raises(InputError):
            quat_log([2.0, 0, 0, 0])


class TestStereoLoss:
    def test_equal_is_zero(self, rng):
        gt = rng.uniform(1, 50, (4, 5))
        assert float(stereo_mse_log_loss(gt, gt).data) == 0.0

    def test_e_times_gt(self, f64, rng):
        gt = rng.uniform(1, 50, (4, 5))
        assert float(stereo_mse_log_loss(math.e * gt, gt).data) == pytest.approx(1.0)

    @given(st.floats(0.1, 100.0))
    def test_scale_equivariance(self, a):
        rng = np.random.default_rng(1)
        with ad.float64_mode():
            pred, gt = rng.uniform(1, 50, (3, 3)), rng.uniform(1, 50, (3, 3))
            base = float(stereo_mse_log_loss(pred, gt).data)
            scaled = float(stereo_mse_log_loss(a * pred, a * gt).data)
        assert scaled == pytest.approx(base, rel=1e-9)

    def test_invalid_pixels_are_ignored(self, f64):
        gt = np.array([[2.0, np.inf]])
        assert float(stereo_mse_log_loss([[2.0, 99.0]], gt).data) == 0.0

    def test_all_invalid(self):
        with pytest.raises(EmptyInputError):
            stereo_mse_log_loss([[1.0]], [[np.nan]])
