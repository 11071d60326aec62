import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mtpose.autodiff import Tensor, backward, max_gradient_error
from mtpose.softargmax import NonFiniteError, joint_visibility, probability_map, soft_argmax_1d, soft_argmax_2d


def bump(center_l, center_c, amplitude, size=32, sigma=1.0):
    l, c = np.mgrid[0:size, 0:size].astype(float)
    return amplitude * np.exp(-((l - center_l) ** 2 + (c - center_c) ** 2) / (2 * sigma**2))


def expectation_oracle(h):
    e = np.exp(h - h.max())
    p = e / e.sum()
    rows, cols = h.shape
    x = y = 0.0
    for l in range(rows):
        for c in range(cols):
            x += (c / cols) * p[l, c]
            y += (l / rows) * p[l, c]
    return np.array([x, y])


def test_spike_recovers_location():
    h = np.zeros((8, 8))
    h[3, 5] = 50.0
    np.testing.assert_allclose(soft_argmax_2d(h).data, [5 / 8, 3 / 8], atol=1e-6)


def test_constant_map_is_centered():
    np.testing.assert_allclose(soft_argmax_2d(np.full((8, 8), -2.0)).data, [0.4375, 0.4375], rtol=0, atol=1e-15)


def test_matches_double_loop_oracle(rng):
    for _ in range(20):
        h = rng.standard_normal((12, 16)) * 2
        np.testing.assert_allclose(soft_argmax_2d(h).data, expectation_oracle(h), rtol=0, atol=1e-12)


def test_batched_maps_match_per_map(rng):
    h = rng.standard_normal((2, 3, 6, 7))
    out = soft_argmax_2d(h).data
    assert out.shape == (2, 3, 2)
    for i in range(2):
        for j in range(3):
            np.testing.assert_allclose(out[i, j], expectation_oracle(h[i, j]), atol=1e-12)


def test_1d_examples(rng):
    v = np.zeros(16)
    v[7] = 50.0
    assert abs(soft_argmax_1d(v).item() - 7 / 16) < 1e-6
    assert soft_argmax_1d(np.ones(16)).item() == pytest.approx(0.46875, abs=1e-15)
    for _ in range(20):
        v = rng.standard_normal(16)
        p = np.exp(v) / np.exp(v).sum()
        oracle = sum(d / 16 * p[d] for d in range(16))
        assert abs(soft_argmax_1d(v).item() - oracle) <= 1e-12


def test_visibility_examples():
    assert joint_visibility(np.zeros((4, 4))).item() == 0.5
    h = np.zeros((4, 4))
    h[2, 1] = 10.0
    assert joint_visibility(h).item() == pytest.approx(0.9999546, abs=1e-7)
    assert joint_visibility(np.full((4, 4), -10.0)).item() == pytest.approx(4.5398e-5, rel=1e-4)


def test_visibility_gradient_reaches_argmax_only(rng):
    h = Tensor(rng.standard_normal((5, 5)), requires_grad=True)
    backward(joint_visibility(h))
    assert np.count_nonzero(h.grad) == 1
    assert np.unravel_index(np.argmax(h.data), h.shape) == tuple(np.argwhere(h.grad)[0])


def test_probability_map_examples(rng):
    np.testing.assert_allclose(probability_map(np.full((4, 5), 2.0)).data, 1 / 20, atol=1e-15)
    p = probability_map(rng.standard_normal((3, 9, 7)) * 5).data
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum((-2, -1)), 1.0, atol=1e-9)


@pytest.mark.parametrize("fn", [soft_argmax_2d, probability_map, joint_visibility, soft_argmax_1d])
@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_non_finite_input_raises(fn, bad):
    h = np.zeros((4, 4))
    h[1, 2] = bad
    with pytest.raises(NonFiniteError):
        fn(h)


def test_peak_recovery_at_strong_amplitude():
    # The weak-amplitude boundary is covered by the acceptance suite.
    worst = 0.0
    for l in range(1, 31):
        for c in range(1, 31):
            x, y = soft_argmax_2d(bump(l, c, 12.0)).data * 32
            worst = max(worst, np.hypot(x - c, y - l))
    assert worst <= 0.5


@given(st.integers(8, 22), st.integers(8, 22), st.integers(-4, 4), st.integers(-4, 4))
def test_shift_equivariance_away_from_borders(l, c, dl, dc):
    a = soft_argmax_2d(bump(l, c, 24.0)).data
    b = soft_argmax_2d(bump(l + dl, c + dc, 24.0)).data
    np.testing.assert_allclose(b - a, [dc / 32, dl / 32], rtol=0, atol=1e-6)


def test_scale_monotonicity(rng):
    # Unimodal maps: with several near-tied peaks the expectation need not move monotonically.
    for _ in range(20):
        l, c = rng.integers(0, 32, 2)
        h = bump(l, c, rng.uniform(0.5, 3.0), sigma=rng.uniform(1.0, 4.0)) + 0.01 * rng.standard_normal((32, 32))
        pl, pc = np.unravel_index(np.argmax(h), h.shape)
        hard = np.array([pc / 32, pl / 32])
        dist = [np.linalg.norm(soft_argmax_2d(a * h).data - hard) for a in (1, 2, 4, 8)]
        assert all(d2 <= d1 for d1, d2 in zip(dist, dist[1:]))


def test_outputs_are_half_open_normalized(rng):
    out = soft_argmax_2d(rng.standard_normal((50, 6, 6)) * 30).data
    assert np.all(out >= 0) and np.all(out <= 5 / 6 + 1e-12)


def test_gradients_match_finite_differences(rng):
    assert max_gradient_error(soft_argmax_2d, [rng.standard_normal((2, 6, 5))], seed=4) <= 1e-4
    assert max_gradient_error(soft_argmax_1d, [rng.standard_normal((3, 9))], seed=4) <= 1e-4
