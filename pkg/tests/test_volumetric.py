import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mtpose.autodiff import Tensor, max_gradient_error
from mtpose.softargmax import soft_argmax_1d, soft_argmax_2d
from mtpose.volumetric import (
    CropPrediction,
    Pose,
    elastic_net_loss,
    flip_pose,
    masked_backward,
    multi_crop_average,
    to_crop,
    visibility_loss,
    visibility_targets,
    volume_to_pose,
)


def softmax(x):
    e = np.exp(x - x.max())
    return e / e.sum()


def elastic_oracle(pred, target, valid, dims):
    """Direct per-sample, per-joint loop; returns the per-sample losses."""
    out = []
    for n in range(pred.shape[0]):
        total, count = 0.0, 0
        for j in range(pred.shape[1]):
            if not valid[n, j]:
                continue
            l1 = l2 = 0.0
            for k in range(dims[n]):
                d = pred[n, j, k] - target[n, j, k]
                l1 += abs(d)
                l2 += d * d
            total += l1 + l2
            count += 1
        out.append(total / count)
    return np.array(out)


# -- volume_to_pose ------------------------------------------------------------------
def test_spike_volume():
    v = np.zeros((16, 8, 8))
    v[7, 3, 5] = 2000.0  # the depth readout sees the spike divided by 64
    np.testing.assert_allclose(volume_to_pose(v[None]).coords.data[0], [5 / 8, 3 / 8, 7 / 16], atol=1e-5)


def test_depth_constant_volume(rng):
    m = rng.standard_normal((8, 8))
    out = volume_to_pose(np.broadcast_to(m, (1, 16, 8, 8)).copy())
    np.testing.assert_array_equal(out.coords.data[0, :2], soft_argmax_2d(m).data)
    assert out.coords.data[0, 2] == pytest.approx(7.5 / 16, abs=1e-15)


def test_marginalization_oracle(rng):
    for _ in range(20):
        v = rng.standard_normal((16, 8, 8))
        p2 = softmax(v.mean(axis=0))
        pz = softmax(v.mean(axis=(1, 2)))
        x = sum(c / 8 * p2[l, c] for l in range(8) for c in range(8))
        y = sum(l / 8 * p2[l, c] for l in range(8) for c in range(8))
        z = sum(d / 16 * pz[d] for d in range(16))
        np.testing.assert_allclose(volume_to_pose(v[None]).coords.data[0], [x, y, z], rtol=0, atol=1e-12)


def test_separable_volume_decomposes(rng):
    for _ in range(10):
        alpha, beta = rng.standard_normal(16) * 2, rng.standard_normal((8, 8)) * 2
        # additive logits give the product distribution softmax(alpha) * softmax(beta)
        out = volume_to_pose((alpha[:, None, None] + beta[None])[None]).coords.data[0]
        np.testing.assert_allclose(out[:2], soft_argmax_2d(beta).data, atol=1e-9)
        assert abs(out[2] - soft_argmax_1d(alpha).item()) <= 1e-9


def test_volume_shape_error():
    with pytest.raises(ValueError):
        volume_to_pose(np.zeros((8, 8, 8)))


def test_volume_byproducts(rng):
    out = volume_to_pose(rng.standard_normal((2, 3, 4, 6, 6)))
    assert out.coords.shape == (2, 3, 3) and out.visibility.shape == (2, 3) and out.prob_maps.shape == (2, 3, 6, 6)
    np.testing.assert_allclose(out.prob_maps.data.sum((-2, -1)), 1.0, atol=1e-12)


# -- elastic net --------------------------------------------------------------------
def test_elastic_net_examples():
    p = np.array([[0.5, 0.5], [0.2, 0.1]])
    assert elastic_net_loss(p, p).item() == 0.0
    assert elastic_net_loss(p + [[0.3, 0.4], [0.0, 0.0]], p).item() == pytest.approx(0.475, abs=1e-15)


def test_elastic_net_matches_loop_oracle(rng):
    for _ in range(20):
        pred, target = rng.uniform(0, 1, (4, 5, 3)), rng.uniform(0, 1, (4, 5, 3))
        valid = rng.uniform(size=(4, 5)) > 0.3
        valid[:, 0] = True
        dims = rng.choice([2, 3], 4)
        target[~valid] = np.nan
        got = elastic_net_loss(pred, target, valid, dims, reduction="none").data
        np.testing.assert_allclose(got, elastic_oracle(pred, target, valid, dims), rtol=0, atol=1e-12)


def test_elastic_net_two_column_target_supervises_xy(rng):
    pred, target = rng.uniform(size=(2, 4, 3)), rng.uniform(size=(2, 4, 2))
    assert elastic_net_loss(pred, target).item() == pytest.approx(elastic_net_loss(pred[..., :2], target).item(), abs=1e-15)


def test_elastic_net_zero_valid_raises():
    with pytest.raises(ValueError, match="zero valid"):
        elastic_net_loss(np.zeros((1, 2, 3)), np.zeros((1, 2, 3)), np.zeros((1, 2), bool))


@given(st.permutations(range(5)), st.integers(0, 1000))
def test_elastic_net_joint_permutation_invariance(perm, seed):
    r = np.random.default_rng(seed)
    pred, target = r.uniform(size=(5, 3)), r.uniform(size=(5, 3))
    perm = list(perm)
    a = elastic_net_loss(pred, target).item()
    b = elastic_net_loss(pred[perm], target[perm]).item()
    assert abs(a - b) <= 1e-12


# -- mixed-batch masking -------------------------------------------------------------
def _head_grads(vol_data, target, valid, dims):
    vol = Tensor(vol_data, requires_grad=True)
    out = volume_to_pose(vol)
    out.logits_depth.retain_grad()
    masked_backward(out.coords, target, valid, dims)
    return vol.grad, out.logits_depth.grad


def test_masked_backward_zero_depth_gradient_for_2d_samples(rng):
    vol = rng.standard_normal((2, 3, 8, 6, 6))
    target = rng.uniform(size=(2, 3, 3))
    target[0, :, 2] = np.nan  # a 2D label has no depth to read
    g_vol, g_depth = _head_grads(vol, target, None, np.array([2, 3]))
    assert np.all(g_depth[0] == 0.0)
    assert np.count_nonzero(g_depth[1]) > 0
    # with no depth supervision the volume gradient is identical across depth slices
    assert np.all(g_vol[0] == g_vol[0][:, :1])


def test_mixed_batch_equals_sum_of_single_samples(rng):
    for _ in range(5):
        vol = rng.standard_normal((2, 3, 8, 6, 6))
        target = rng.uniform(size=(2, 3, 3))
        valid = np.array([[True, False, True], [True, True, True]])
        dims = np.array([2, 3])
        mixed, _ = _head_grads(vol, target, valid, dims)
        for i in range(2):
            single, _ = _head_grads(vol[i : i + 1], target[i : i + 1], valid[i : i + 1], dims[i : i + 1])
            np.testing.assert_allclose(mixed[i], single[0], rtol=0, atol=1e-12)


def test_head_gradient_matches_finite_differences(rng):
    target = rng.uniform(0.2, 0.7, (2, 3, 3))
    fn = lambda v: elastic_net_loss(volume_to_pose(v).coords, target, label_dims=np.array([3, 2]))  # noqa: E731
    assert max_gradient_error(fn, [rng.standard_normal((2, 3, 4, 5, 5))], seed=2) <= 1e-4


# -- visibility ----------------------------------------------------------------------
def test_visibility_loss_examples(rng):
    assert visibility_loss(np.full(4, 0.5), np.ones(4)).item() == pytest.approx(np.log(2), abs=1e-15)
    assert visibility_loss(np.array([1.0, 0.0]), np.array([1.0, 0.0])).item() < 1e-6
    for _ in range(20):
        p, t = rng.uniform(0.01, 0.99, 6), (rng.uniform(size=6) > 0.5).astype(float)
        valid = np.arange(6) < 4
        oracle = -sum(t[i] * np.log(p[i]) + (1 - t[i]) * np.log(1 - p[i]) for i in range(4)) / 4
        assert abs(visibility_loss(p, t, valid).item() - oracle) <= 1e-12


def test_visibility_targets_outside_crop():
    c = np.array([[0.5, 0.5], [1.0, 0.2], [-0.1, 0.5], [0.99, 0.0], [np.nan, np.nan]])
    np.testing.assert_array_equal(visibility_targets(c), [1, 0, 0, 1, 0])


# -- multi-crop ----------------------------------------------------------------------
def test_single_prediction_returned_unchanged(rng):
    pose = Pose(rng.uniform(size=(4, 3)))
    assert multi_crop_average([CropPrediction(pose)]) is pose


def test_flip_pair_average_is_identity(rng):
    pairs = [(0, 1), (2, 3)]
    pose = Pose(rng.uniform(size=(4, 3)))
    mirrored = flip_pose(pose, 32, pairs)
    avg = multi_crop_average([CropPrediction(pose), CropPrediction(mirrored, flipped=True)], pairs)
    np.testing.assert_allclose(avg.coords, pose.coords, atol=1e-15)
    np.testing.assert_array_equal(flip_pose(mirrored, 32, pairs).coords, pose.coords)


def test_shifted_crops_recover_pose(rng):
    pose = Pose(rng.uniform(0.3, 0.7, (5, 3)))
    boxes = [(0.0, 0.0, 1.0, 1.0), (0.05, -0.03, 0.9, 0.9), (-0.04, 0.06, 1.1, 1.05)]
    preds = [CropPrediction(to_crop(pose, b), b) for b in boxes]
    preds.append(CropPrediction(to_crop(pose, boxes[1], flipped=True, flip_pairs=[(0, 1)]), boxes[1], flipped=True))
    np.testing.assert_allclose(multi_crop_average(preds, [(0, 1)]).coords, pose.coords, rtol=0, atol=1e-6)


def test_multi_crop_skips_invalid_entries(rng):
    a = Pose(rng.uniform(size=(3, 2)))
    b_coords = a.coords.copy()
    b_coords[1] = np.nan
    avg = multi_crop_average([CropPrediction(a), CropPrediction(Pose(b_coords), (0.0, 0.0, 1.0, 1.0))])
    np.testing.assert_allclose(avg.coords, a.coords, atol=1e-15)


def test_multi_crop_empty_raises():
    with pytest.raises(ValueError):
        multi_crop_average([])
