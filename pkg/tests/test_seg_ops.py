import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

import oracles
from dmhclust.errors import ConfigError, DataError
from dmhclust.seg_ops import (CombinedLossConfig, FocalParams, SCSEParams, combined_loss,
                              decode_tensor, dice_loss, encode_tensor, focal_loss, load_mask,
                              load_tensor, mask_metrics, save_tensor, scse_attention,
                              scse_recalibrate)


def _masks(seed, shape=(6, 5)):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 1, shape), (rng.uniform(0, 1, shape) < 0.4).astype(float)


def test_focal_examples():
    assert focal_loss([[0.5]], [[1]], FocalParams(1.0, 2.0)) == pytest.approx(0.17328679513998632, abs=1e-15)
    target = (np.random.default_rng(0).uniform(size=(4, 4)) < 0.5).astype(float)
    assert focal_loss(target, target) < 1e-5
    pred, target = _masks(1)
    ref = 0.5 * oracles.naive_bce(pred, target)
    assert abs(focal_loss(pred, target, FocalParams(0.5, 0.0)) - ref) < 1e-10
    with pytest.raises(DataError, match="shape mismatch"):
        focal_loss(pred, target[:2])
    for bad in (dict(alpha=0.0), dict(alpha=1.5), dict(gamma=-1)):
        with pytest.raises(ConfigError):
            FocalParams(**bad)


def test_focal_alpha_weights_each_class():
    # background pixel uses 1 - alpha
    got = focal_loss([[0.3]], [[0]], FocalParams(0.25, 1.0))
    assert got == pytest.approx(0.75 * 0.3 * -math.log(0.7), abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), gamma=st.floats(0, 5), alpha=st.floats(0.01, 1))
def test_focal_non_negative_and_monotone(seed, gamma, alpha):
    pred, target = _masks(seed, (4, 4))
    params = FocalParams(alpha, gamma)
    assert focal_loss(pred, target, params) >= 0
    # pushing every pixel toward its target (raising p_t) never raises the loss
    closer = pred + 0.5 * (target - pred)
    assert focal_loss(closer, target, params) <= focal_loss(pred, target, params) + 1e-15


def test_dice_examples():
    target = (np.arange(16).reshape(4, 4) % 3 == 0).astype(float)
    assert dice_loss(target, target) < 1e-5
    eps = 1e-6
    assert dice_loss(np.zeros((4, 4)), np.ones((4, 4))) == pytest.approx(1 - eps / (16 + eps), abs=1e-15)
    pred = np.array([[0.2, 0.9, 0.4], [0.0, 0.5, 0.7], [1.0, 0.3, 0.6]])
    mask = np.array([[0, 1, 0], [0, 1, 1], [1, 0, 0]], float)
    inter = 0.9 + 0.5 + 0.7 + 1.0
    expected = 1 - (2 * inter + eps) / (4.6 + 4 + eps)
    assert dice_loss(pred, mask) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_dice_in_unit_interval(seed):
    pred, target = _masks(seed)
    assert 0.0 <= dice_loss(pred, target) <= 1.0


def test_combined_examples():
    pred, target = _masks(2)
    f, d = focal_loss(pred, target), dice_loss(pred, target)
    total, parts = combined_loss(pred, target)
    assert total == pytest.approx((f + d) / 2, abs=1e-15) and parts == {"focal": f, "dice": d}
    assert combined_loss(pred, target, CombinedLossConfig(focal_weight=0.7, dice_weight=0.0))[0] == 0.7 * f
    assert combined_loss(pred, target, CombinedLossConfig(focal_weight=0.0, dice_weight=2.0))[0] == 2.0 * d
    with pytest.raises(ConfigError):
        CombinedLossConfig(focal_weight=0.0, dice_weight=0.0)


def test_scse_zero_params():
    rng = np.random.default_rng(3)
    f_e, f_d = rng.standard_normal((2, 3, 4, 4))
    fused, channel, spatial = scse_attention(f_e, f_d, SCSEParams.zeros(4, 2))
    np.testing.assert_array_equal(channel, 0.5)
    np.testing.assert_array_equal(spatial, 0.5)
    np.testing.assert_array_equal(scse_recalibrate(f_e, f_d, SCSEParams.zeros(4, 2)), 0.0)


def test_scse_saturated_selects_encoder():
    rng = np.random.default_rng(4)
    C = 3
    f_e, f_d = rng.standard_normal((2, 5, 4, C))
    z = SCSEParams.zeros(C)
    params = SCSEParams(np.vstack([np.eye(C), np.zeros((C, C))]), np.zeros(C), z.cse_reduce_w,
                        z.cse_reduce_b, z.cse_expand_w, np.full(C, 10.0), z.sse_w, 10.0)
    np.testing.assert_allclose(scse_recalibrate(f_e, f_d, params), 2 * f_e, atol=1e-3 * np.abs(f_e).max())


def test_scse_hand_computed_1x1x2():
    f_e = np.array([[[1.0, -2.0]]])
    f_d = np.array([[[0.5, 3.0]]])
    params = SCSEParams(
        fuse_w=np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, -1.0]]),
        fuse_b=np.array([0.1, -0.1]),
        cse_reduce_w=np.array([[1.0], [0.5]]), cse_reduce_b=np.array([0.0]),
        cse_expand_w=np.array([[2.0, -1.0]]), cse_expand_b=np.array([0.0, 0.5]),
        sse_w=np.array([0.1, 0.2, 0.3, 0.4]), sse_b=-0.2)
    g = [1.0 + 0.5 + 0.1, -2.0 - 3.0 - 0.1]  # 1.6, -5.1
    hidden = max(g[0] * 1.0 + g[1] * 0.5, 0.0)  # relu(-0.95) = 0
    ch = [1 / (1 + math.exp(-(hidden * 2.0))), 1 / (1 + math.exp(-(hidden * -1.0 + 0.5)))]
    s = 1 / (1 + math.exp(-(0.1 * 1 + 0.2 * -2 + 0.3 * 0.5 + 0.4 * 3 - 0.2)))
    expected = [g[c] * ch[c] + g[c] * s for c in range(2)]
    np.testing.assert_allclose(scse_recalibrate(f_e, f_d, params)[0, 0], expected, rtol=0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), h=st.integers(1, 5), w=st.integers(1, 5),
       cr=st.sampled_from([(1, 1), (2, 1), (4, 2), (6, 3), (8, 4)]))
def test_scse_shapes_and_open_interval(seed, h, w, cr):
    C, r = cr
    rng = np.random.default_rng(seed)
    f_e, f_d = rng.standard_normal((2, h, w, C))
    params = SCSEParams.random(C, r, seed=seed % 1000)
    _, channel, spatial = scse_attention(f_e, f_d, params)
    assert scse_recalibrate(f_e, f_d, params).shape == (h, w, C)
    for a in (channel, spatial):
        assert ((a > 0) & (a < 1)).all()
    assert np.allclose(spatial, expit(np.concatenate([f_e, f_d], 2) @ params.sse_w + params.sse_b))


def test_scse_errors():
    with pytest.raises(ConfigError):
        SCSEParams.zeros(4, 3)
    p = SCSEParams.zeros(2)
    with pytest.raises(DataError):
        scse_recalibrate(np.zeros((2, 2, 2)), np.zeros((2, 3, 2)), p)
    with pytest.raises(DataError):
        scse_recalibrate(np.zeros((2, 2, 3)), np.zeros((2, 2, 3)), p)


def test_mask_metric_examples():
    g = np.zeros((4, 4))
    g[:2, :2] = 1
    iou, acc, prec, rec = mask_metrics(g, g)
    assert (iou, acc) == (1.0, 1.0)
    other = np.zeros((4, 4))
    other[3, 3] = 1
    assert mask_metrics(other, g)[0] == 0.0
    pred = g.copy()
    pred[2:, :2] = 1
    iou, acc, prec, rec = mask_metrics(pred, g)
    assert iou == 0.5 and rec == 1.0 and prec == 0.5 and acc == 12 / 16
    assert mask_metrics(np.zeros((2, 2)), np.zeros((2, 2)))[0] == 1.0
    with pytest.raises(DataError, match="binary"):
        mask_metrics(np.full((2, 2), 0.5), np.zeros((2, 2)))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_iou_bounded_by_precision_and_recall(seed):
    rng = np.random.default_rng(seed)
    p = (rng.uniform(size=(5, 5)) < 0.5).astype(float)
    g = (rng.uniform(size=(5, 5)) < 0.5).astype(float)
    if p.any() and g.any():
        iou, _, prec, rec = mask_metrics(p, g)
        assert iou <= prec + 1e-15 and iou <= rec + 1e-15


def test_tensor_round_trip(tmp_path):
    T = np.random.default_rng(5).standard_normal((3, 4, 2))
    data = encode_tensor(T)
    assert data[:4] == b"DMHT" and len(data) == 4 + 2 + 12 + 8 * 24
    # channel planes are stored one after another
    assert np.frombuffer(data[18:18 + 8 * 12], "<f8").tolist() == T[:, :, 0].ravel().tolist()
    np.testing.assert_array_equal(decode_tensor(data), T)
    save_tensor(T[:, :, 0], tmp_path / "m.bin")
    np.testing.assert_array_equal(load_mask(tmp_path / "m.bin"), T[:, :, 0])
    save_tensor(T, tmp_path / "t.bin")
    with pytest.raises(DataError, match="1 channel"):
        load_mask(tmp_path / "t.bin")
    np.testing.assert_array_equal(load_tensor(tmp_path / "t.bin"), T)
    with pytest.raises(DataError):
        decode_tensor(b"DMHF" + data[4:])
