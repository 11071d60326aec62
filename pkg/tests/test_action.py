import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mtpose.action import (
    ActionConfig,
    ActionModel,
    MultitaskModel,
    action_loss,
    aggregate,
    center_pose_sequence,
    clip_starts,
    encode_pose_sequence,
    extract_appearance,
    max_plus_min,
    max_plus_min_pool,
    multi_clip_average,
    total_action_loss,
)
from mtpose.autodiff import ShapeError, backward, max_gradient_error
from mtpose.network import NetworkConfig, PoseNetwork
from mtpose.volumetric import Pose


def appearance_oracle(f, m):
    h, w, nf = f.shape
    nj = m.shape[-1]
    out = np.zeros((nj, nf))
    for j in range(nj):
        for k in range(nf):
            for a in range(h):
                for b in range(w):
                    out[j, k] += m[a, b, j] * f[a, b, k]
    return out


def pool_oracle(maps):
    t, j, n = maps.shape
    scores = []
    for c in range(n):
        hi, lo = -np.inf, np.inf
        for a in range(t):
            for b in range(j):
                hi, lo = max(hi, maps[a, b, c]), min(lo, maps[a, b, c])
        scores.append(hi + lo)
    e = np.exp(np.array(scores) - max(scores))
    return e / e.sum()


def distributions(rng, shape):
    e = np.exp(rng.standard_normal(shape))
    return e / e.sum(axis=(0, 1), keepdims=True)


# -- pose sequence ------------------------------------------------------------------
def test_encode_layout_identity(rng):
    poses = [Pose(rng.uniform(size=(3, 2))) for _ in range(2)]
    seq = encode_pose_sequence(poses)
    assert seq.shape == (2, 3, 2)
    for t in range(2):
        np.testing.assert_array_equal(seq[t], poses[t].coords)
    assert encode_pose_sequence([Pose(rng.uniform(size=(3, 3)))]).shape[-1] == 3


def test_encode_frame_permutation_and_sentinel(rng):
    poses = [Pose(rng.uniform(size=(4, 2))) for _ in range(5)]
    perm = [3, 0, 4, 1, 2]
    np.testing.assert_array_equal(encode_pose_sequence([poses[i] for i in perm]), encode_pose_sequence(poses)[perm])
    hidden = Pose(poses[0].coords, valid=[True, False, True, True])
    seq = encode_pose_sequence([hidden], validity_channel=True)
    np.testing.assert_array_equal(seq[0, 1], [-1.0, -1.0, 0.0])
    assert seq[0, 0, 2] == 1.0


def test_encode_rejects_ragged_and_empty(rng):
    with pytest.raises(ValueError):
        encode_pose_sequence([])
    with pytest.raises(ValueError, match="ragged"):
        encode_pose_sequence([Pose(np.zeros((3, 2))), Pose(np.zeros((4, 2)))])


def test_center_pose_sequence(rng):
    seq = rng.uniform(size=(2, 5, 3, 2))
    seq[0, 1, 2] = -1.0
    out = center_pose_sequence(seq).data
    np.testing.assert_array_equal(out[0, 1, 2], [-1.0, -1.0])
    valid = np.ones((5, 3), bool)
    valid[1, 2] = False
    np.testing.assert_allclose(out[0][valid].mean(axis=0), 0.0, atol=1e-15)
    np.testing.assert_allclose(out[1], seq[1] - seq[1].mean(axis=(0, 1)), atol=1e-15)


# -- appearance ----------------------------------------------------------------------
def test_appearance_delta_and_uniform(rng):
    f = rng.standard_normal((4, 4, 6))
    m = np.zeros((4, 4, 2))
    m[1, 3, 0] = 1.0
    m[:, :, 1] = 1 / 16
    out = extract_appearance(f, m).data
    np.testing.assert_array_equal(out[0], f[1, 3])
    np.testing.assert_allclose(out[1], f.mean(axis=(0, 1)), atol=1e-15)


def test_appearance_matches_loop_oracle(rng):
    for _ in range(20):
        f, m = rng.standard_normal((4, 5, 6)), distributions(rng, (4, 5, 3))
        np.testing.assert_allclose(extract_appearance(f, m).data, appearance_oracle(f, m), rtol=0, atol=1e-12)


def test_appearance_batched(rng):
    f, m = rng.standard_normal((2, 3, 4, 4, 5)), rng.uniform(size=(2, 3, 4, 4, 2))
    out = extract_appearance(f, m).data
    assert out.shape == (2, 3, 2, 5)
    np.testing.assert_allclose(out[1, 2], appearance_oracle(f[1, 2], m[1, 2]), atol=1e-12)


def test_appearance_linear_in_features(rng):
    f1, f2, m = rng.standard_normal((4, 4, 5)), rng.standard_normal((4, 4, 5)), distributions(rng, (4, 4, 3))
    a, b = 1.7, -0.4
    lhs = extract_appearance(a * f1 + b * f2, m).data
    rhs = a * extract_appearance(f1, m).data + b * extract_appearance(f2, m).data
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)


@given(st.integers(0, 10_000))
def test_appearance_is_convex_combination(seed):
    r = np.random.default_rng(seed)
    f, m = r.standard_normal((3, 4, 5)), distributions(r, (3, 4, 2))
    out = extract_appearance(f, m).data
    lo, hi = f.min(axis=(0, 1)), f.max(axis=(0, 1))
    assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)


def test_appearance_shape_error():
    with pytest.raises(ShapeError):
        extract_appearance(np.zeros((4, 4, 3)), np.zeros((4, 5, 2)))


# -- pooling -------------------------------------------------------------------------
def test_pool_examples():
    maps = np.full((3, 4, 2), 0.7)
    maps[..., 1] = -2.0
    np.testing.assert_allclose(max_plus_min(maps).data, [1.4, -4.0], atol=1e-15)
    np.testing.assert_allclose(max_plus_min_pool(np.full((3, 4, 5), 0.3)).data, 0.2, atol=1e-15)
    m = np.zeros((2, 2, 1))
    m[0, 0, 0], m[1, 1, 0] = 3.0, -1.0
    assert max_plus_min(m).data[0] == 2.0


def test_pool_matches_loop_oracle(rng):
    for _ in range(20):
        maps = rng.standard_normal((6, 4, 3)) * 2
        out = max_plus_min_pool(maps).data
        np.testing.assert_allclose(out, pool_oracle(maps), rtol=0, atol=1e-12)
        assert abs(out.sum() - 1.0) <= 1e-12


@given(st.integers(0, 10_000))
def test_pool_spatial_permutation_invariance(seed):
    r = np.random.default_rng(seed)
    maps = r.standard_normal((5, 4, 3))
    flat = maps.reshape(20, 3)[r.permutation(20)].reshape(5, 4, 3)
    np.testing.assert_array_equal(max_plus_min_pool(maps).data, max_plus_min_pool(flat).data)


# -- aggregation, loss, multi-clip ---------------------------------------------------
def test_aggregate_symmetric_init_keeps_argmax(rng):
    w = np.hstack([np.eye(4), np.eye(4)]) / 2
    for _ in range(10):
        p = rng.dirichlet(np.ones(4))
        out = aggregate(p, p, w, np.zeros(4)).data
        np.testing.assert_allclose(out, np.exp(p) / np.exp(p).sum(), atol=1e-15)
        assert np.argmax(out) == np.argmax(p)


def test_aggregate_sums_to_one_and_gradients(rng):
    p, a = rng.dirichlet(np.ones(3), 4), rng.dirichlet(np.ones(3), 4)
    np.testing.assert_allclose(aggregate(p, a, rng.standard_normal((3, 6)), rng.standard_normal(3)).data.sum(-1), 1.0, atol=1e-12)
    assert max_gradient_error(lambda w: aggregate(p, a, w, np.zeros(3)), [rng.standard_normal((3, 6))], seed=1) <= 1e-4
    with pytest.raises(ShapeError):
        aggregate(p, a[:, :2], np.zeros((3, 6)), np.zeros(3))


def test_action_loss_examples(rng):
    assert action_loss(np.full(5, 0.2), [3]).item() == pytest.approx(np.log(5), abs=1e-15)
    assert action_loss(np.array([1 - 1e-9, 1e-9]), [0]).item() < 1e-8
    for _ in range(20):
        p, y = rng.dirichlet(np.ones(4), 3), rng.integers(0, 4, 3)
        oracle = -sum(np.log(p[i, y[i]]) for i in range(3)) / 3
        assert abs(action_loss(p, y).item() - oracle) <= 1e-12
    with pytest.raises(ValueError):
        action_loss(np.full(4, 0.25), [4])


def test_multi_clip_average():
    a, b = np.array([0.7, 0.2, 0.1]), np.array([0.1, 0.5, 0.4])
    np.testing.assert_array_equal(multi_clip_average([a]), a)
    np.testing.assert_array_equal(multi_clip_average([a, a]), a)
    np.testing.assert_allclose(multi_clip_average([a, b]), [0.4, 0.35, 0.25], atol=1e-15)
    with pytest.raises(ValueError):
        multi_clip_average([])


def test_clip_starts():
    assert clip_starts(16, 16, False) == [0]
    assert clip_starts(32, 16, False) == [8]
    assert clip_starts(32, 16, True) == [0, 8, 16]
    with pytest.raises(ValueError):
        clip_starts(10, 16, True)


# -- model ---------------------------------------------------------------------------
def small_action(**kw):
    base = dict(n_actions=5, n_blocks=2, n_joints=3, pose_dim=2, n_features=4, width=6, seed=2)
    base.update(kw)
    return ActionConfig(**base)


def test_model_output_shapes_and_distributions(rng):
    model = ActionModel(small_action())
    out = model(rng.uniform(size=(2, 8, 3, 2)), rng.standard_normal((2, 8, 3, 4)))
    assert all(m.shape == (2, 8, 3, 5) for m in out.pose.maps + out.appearance.maps)
    for pred in out.all_predictions():
        assert pred.shape == (2, 5)
        np.testing.assert_allclose(pred.data.sum(-1), 1.0, atol=1e-9)
    np.testing.assert_array_equal(model.agg_w.data, np.hstack([np.eye(5), np.eye(5)]) / 2)


def test_zero_weights_give_constant_maps(rng):
    model = ActionModel(small_action())
    for t in model.trainable():
        t.data = np.zeros_like(t.data)
    out = model(rng.uniform(size=(1, 8, 3, 2)), rng.standard_normal((1, 8, 3, 4)))
    for m in out.pose.maps + out.appearance.maps:
        assert np.all(m.data == m.data.flat[0])


def test_stacked_blocks_differ(rng):
    out = ActionModel(small_action(init_std=0.3))(rng.uniform(size=(1, 8, 3, 2)), rng.standard_normal((1, 8, 3, 4)))
    assert not np.array_equal(out.pose.maps[0].data, out.pose.maps[1].data)


def test_stream_rejects_wrong_channels(rng):
    with pytest.raises(ShapeError):
        ActionModel(small_action())(rng.uniform(size=(1, 8, 3, 3)), rng.standard_normal((1, 8, 3, 4)))


def test_meta_round_trip():
    cfg = small_action(init_std=0.05, center_poses=False)
    assert ActionConfig.from_meta(cfg.to_meta()) == cfg


def test_end_to_end_gradient_reaches_entry_kernel(rng):
    pose_net = PoseNetwork(NetworkConfig(n_blocks=1, n_joints=3, n_depth=4, n_features=4, stem_widths=(4, 4), init_std=0.3, seed=4))
    model = MultitaskModel(pose_net, small_action(n_actions=3, n_features=4, init_std=0.3))
    frames = rng.uniform(0, 1, (1, 4, 32, 32, 3))
    labels = np.array([1])
    k = pose_net.params["entry.conv.w"]

    def loss():
        out, _ = model(frames)
        return action_loss(out.aggregate, labels)

    backward(loss())
    grad = k.grad.copy()
    assert np.count_nonzero(grad) > 0
    h = 1e-6
    for idx in [(0, 0, 0, 0), (1, 1, 1, 2), (2, 0, 2, 3), (1, 2, 0, 1), (2, 2, 1, 0)]:
        orig = k.data[idx]
        k.data[idx] = orig + h
        up = loss().item()
        k.data[idx] = orig - h
        down = loss().item()
        k.data[idx] = orig
        fd = (up - down) / (2 * h)
        assert abs(fd - grad[idx]) <= 1e-4 * max(abs(fd), abs(grad[idx]), 1e-8)


def test_total_loss_counts_every_prediction(rng):
    model = ActionModel(small_action())
    out = model(rng.uniform(size=(2, 8, 3, 2)), rng.standard_normal((2, 8, 3, 4)))
    labels = np.array([0, 4])
    expected = sum(action_loss(p, labels).item() for p in out.all_predictions())
    assert abs(total_action_loss(out, labels).item() - expected) <= 1e-12
    assert len(out.all_predictions()) == 5
