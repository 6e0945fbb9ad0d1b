"""Fusion gate, decoder output contract, and winner-take-all losses."""

import numpy as np
import pytest

from intentcast.model import build_params, forward, predict, scene_inputs
from intentcast.nn import Tensor
from intentcast.predictor import (
    MissingGroundTruth,
    PredictionSet,
    decode,
    fuse,
    fuse_gate,
    loss_cls,
    loss_reg,
    loss_reg_laplace,
    select_best_mode,
    total_loss,
)

from helpers import micro_config, random_scene

RNG = np.random.default_rng(51)


def manual_prediction(positions, probs):
    """PredictionSet from (N, M, T_f, 2) positions with unit scales."""
    n, m, t_f, _ = positions.shape
    traj = np.concatenate([positions, np.ones((n, m, t_f, 2))], axis=-1)
    return PredictionSet(Tensor(traj), Tensor(probs))


def test_fuse_gate_in_open_interval():
    cfg = micro_config()
    reg = build_params(cfg, seed=0)
    delta = fuse_gate(Tensor(RNG.normal(size=(3, 2 * cfg.d_h)) * 5.0), reg, cfg).data
    assert delta.shape == (3, cfg.t_h)
    assert np.all(delta > 0.0) and np.all(delta < 1.0)


def _force_gate(reg, value):
    reg["fuse.mlp.l1.w"].data = np.zeros_like(reg["fuse.mlp.l1.w"].data)
    reg["fuse.mlp.l1.b"].data = np.full_like(reg["fuse.mlp.l1.b"].data, value)


def test_fuse_degenerate_gates():
    cfg = micro_config()
    local = Tensor(RNG.normal(size=(2, cfg.t_h, 2 * cfg.d_h)))
    z_glo = Tensor(RNG.normal(size=(2, 2 * cfg.d_h)))

    reg = build_params(cfg, seed=1)
    _force_gate(reg, 50.0)  # delta -> 1
    out = fuse(local, z_glo, reg, cfg).data
    assert np.allclose(out, local.data, atol=1e-12)

    _force_gate(reg, -50.0)  # delta -> 0
    out = fuse(local, z_glo, reg, cfg).data
    for t in range(cfg.t_h):
        assert np.allclose(out[:, t, :], z_glo.data, atol=1e-12)


def test_fuse_midpoint():
    cfg = micro_config()
    reg = build_params(cfg, seed=2)
    _force_gate(reg, 0.0)  # delta = 0.5 exactly
    local = Tensor(RNG.normal(size=(2, cfg.t_h, 2 * cfg.d_h)))
    z_glo = Tensor(RNG.normal(size=(2, 2 * cfg.d_h)))
    out = fuse(local, z_glo, reg, cfg).data
    expected = 0.5 * local.data + 0.5 * z_glo.data[:, None, :]
    assert np.allclose(out, expected, atol=1e-12)


def test_decode_output_contract():
    cfg = micro_config(d_h=16, heads=4, modes=6, t_f=5)
    reg = build_params(cfg, seed=3)
    n = 3
    fused = Tensor(RNG.normal(size=(n, cfg.t_h, 2 * cfg.d_h)))
    anchors = RNG.normal(size=(n, 2))
    pred = decode(fused, anchors, reg, cfg)
    assert pred.trajectories.shape == (n, 6, 5, 4)
    assert pred.mode_probs.shape == (n, 6)
    assert np.all(pred.scales() > 0.0)
    sums = pred.probs().sum(axis=1)
    assert np.all(np.abs(sums - 1.0) <= 1e-6)
    assert np.all(pred.probs() >= 0.0)


def test_decode_teacher_vs_free_shapes_agree():
    cfg = micro_config()
    reg = build_params(cfg, seed=4)
    fused = Tensor(RNG.normal(size=(2, cfg.t_h, 2 * cfg.d_h)))
    anchors = np.zeros((2, 2))
    teacher = RNG.normal(size=(2, cfg.t_f, 2))
    a = decode(fused, anchors, reg, cfg, teacher_prev=teacher)
    b = decode(fused, anchors, reg, cfg)
    assert a.trajectories.shape == b.trajectories.shape
    assert a.mode_probs.shape == b.mode_probs.shape


def test_select_best_mode_rules():
    gt = np.zeros((1, 3, 2))
    pos = np.zeros((1, 3, 3, 2))
    pos[0, 1] += 0.5  # mode 1 offset, mode 0 exact, mode 2 worse
    pos[0, 2] += 2.0
    pred = manual_prediction(pos, np.full((1, 3), 1 / 3))
    assert select_best_mode(pred, gt).tolist() == [0]

    # tie: both modes final error 1.0 -> lowest index
    pos = np.zeros((1, 2, 3, 2))
    pos[0, 0, -1] = (1.0, 0.0)
    pos[0, 1, -1] = (0.0, 1.0)
    pred = manual_prediction(pos, np.full((1, 2), 0.5))
    assert select_best_mode(pred, gt[:, :, :]).tolist() == [0]


def test_select_best_mode_matches_bruteforce_and_rescaling():
    for _ in range(30):
        n, m, t_f = 2, 3, 4
        gt = RNG.normal(size=(n, t_f, 2))
        pos = RNG.normal(size=(n, m, t_f, 2))
        pred = manual_prediction(pos, np.full((n, m), 1 / m))
        got = select_best_mode(pred, gt)
        for i in range(n):
            errs = [np.linalg.norm(pos[i, k, -1] - gt[i, -1]) for k in range(m)]
            assert got[i] == int(np.argmin(errs))
        # positive rescaling of all final errors preserves the argmin
        scaled = gt[:, None, -1, :] + 3.0 * (pos[:, :, -1, :] - gt[:, None, -1, :])
        pos2 = pos.copy()
        pos2[:, :, -1, :] = scaled
        pred2 = manual_prediction(pos2, np.full((n, m), 1 / m))
        assert np.array_equal(select_best_mode(pred2, gt), got)


def test_loss_cls_closed_forms():
    probs = Tensor(np.array([[1.0, 0.0]]))
    assert loss_cls(probs, np.array([0])).item() == pytest.approx(0.0, abs=1e-12)
    probs = Tensor(np.array([[0.5, 0.5]]))
    assert loss_cls(probs, np.array([0])).item() == pytest.approx(0.693147, abs=1e-6)
    probs = Tensor(np.array([[1.0, 0.0], [0.5, 0.5]]))
    assert loss_cls(probs, np.array([0, 1])).item() == pytest.approx(0.346574, abs=1e-6)


def test_loss_reg_closed_forms():
    gt = np.zeros((1, 2, 2))
    pos = np.zeros((1, 1, 2, 2))
    pred = manual_prediction(pos, np.ones((1, 1)))
    assert loss_reg(pred, gt, np.array([0])).item() == 0.0

    pos = np.tile([3.0, 4.0], (1, 1, 2, 1))
    pred = manual_prediction(pos, np.ones((1, 1)))
    assert loss_reg(pred, gt, np.array([0])).item() == pytest.approx(10.0, abs=1e-12)

    gt2 = np.zeros((2, 2, 2))
    pos2 = np.zeros((2, 1, 2, 2))
    pos2[0] = np.tile([3.0, 4.0], (2, 1)).reshape(1, 2, 2)
    pred2 = manual_prediction(pos2, np.ones((2, 1)))
    assert loss_reg(pred2, gt2, np.array([0, 0])).item() == pytest.approx(5.0, abs=1e-12)


def test_total_loss_sum():
    gt = np.zeros((1, 2, 2))
    pos = np.tile([3.0, 4.0], (1, 2, 2, 1)).reshape(1, 2, 2, 2)
    pos[0, 1] += 1.0  # mode 0 is best
    pred = manual_prediction(pos, np.array([[0.5, 0.5]]))
    total, cls, reg = total_loss(pred, gt)
    assert cls.item() == pytest.approx(0.693147, abs=1e-6)
    assert reg.item() == pytest.approx(10.0, abs=1e-12)
    assert total.item() == pytest.approx(10.693147, abs=1e-6)


def test_missing_ground_truth_raises():
    pred = manual_prediction(np.zeros((1, 2, 3, 2)), np.full((1, 2), 0.5))
    with pytest.raises(MissingGroundTruth):
        select_best_mode(pred, None)
    with pytest.raises(MissingGroundTruth):
        loss_reg(pred, None, np.array([0]))


def test_wta_gradient_isolation_and_scale_channels():
    cfg = micro_config()
    reg = build_params(cfg, seed=5)
    scene = random_scene(RNG, n_agents=3, t_h=cfg.t_h, t_f=cfg.t_f)
    inputs = scene_inputs(scene, cfg)
    pred = forward(inputs, reg, cfg, teacher_forcing=True)
    best = select_best_mode(pred, inputs.gt)
    total, _, _ = total_loss(pred, inputs.gt)
    total.backward()

    g = pred.trajectories.grad
    assert g is not None
    for i in range(3):
        for k in range(cfg.modes):
            if k != best[i]:
                assert np.array_equal(g[i, k, :, 0:2], np.zeros((cfg.t_f, 2)))
    # position-only default loss: scale channels get exactly zero gradient
    assert np.array_equal(g[..., 2:4], np.zeros_like(g[..., 2:4]))


def test_laplace_variant_trains_scales():
    cfg = micro_config()
    reg = build_params(cfg, seed=6)
    scene = random_scene(RNG, n_agents=2, t_h=cfg.t_h, t_f=cfg.t_f)
    inputs = scene_inputs(scene, cfg)
    pred = forward(inputs, reg, cfg, teacher_forcing=True)
    total, _, _ = total_loss(pred, inputs.gt, variant="laplace_nll")
    total.backward()
    g = pred.trajectories.grad
    best = select_best_mode(pred, inputs.gt)
    assert any(np.any(g[i, best[i], :, 2:4] != 0.0) for i in range(2))


def test_zero_loss_gradients_finite():
    """Perfect teacher-forced fit with p = 1: gradients stay finite."""
    gt = RNG.normal(size=(2, 3, 2))
    pos = np.repeat(gt[:, None], 2, axis=1)
    traj = Tensor(np.concatenate([pos, np.ones((2, 2, 3, 2))], -1),
                  requires_grad=True)
    probs = Tensor(np.array([[1.0, 0.0], [1.0, 0.0]]), requires_grad=True)
    pred = PredictionSet(traj, probs)
    total, _, _ = total_loss(pred, gt)
    assert total.item() == pytest.approx(0.0, abs=1e-12)
    total.backward()
    assert np.all(np.isfinite(traj.grad))
    assert np.all(np.isfinite(probs.grad))


def test_full_forward_contract_and_determinism():
    cfg = micro_config(modes=6)
    reg = build_params(cfg, seed=7)
    scene = random_scene(RNG, n_agents=4, t_h=cfg.t_h, t_f=cfg.t_f)
    a = predict(scene, reg, cfg)
    b = predict(scene, reg, cfg)
    assert a.trajectories.shape == (4, 6, cfg.t_f, 4)
    assert np.array_equal(a.trajectories.data, b.trajectories.data)
    assert np.array_equal(a.mode_probs.data, b.mode_probs.data)
