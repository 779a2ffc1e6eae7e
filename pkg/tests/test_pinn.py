import math

import numpy as np
import pytest
import torch

from sorbfit import pinn
from sorbfit.errors import DimensionMismatch


def _tiny_spec(**kw):
    base = dict(input_dim=3, scale_widths=(4, 4), backbone_widths=(8, 8),
                dropout=0.0, seed=0)
    base.update(kw)
    return pinn.ArchSpec(**base)


def _data(n=32, d=3, seed=0):
    rng = np.random.default_rng(seed)
    return pinn.TrainingData(
        X=rng.normal(size=(n, d)),
        p=rng.uniform(1, 190, n),
        T=rng.uniform(290, 350, n),
        y=rng.uniform(0.05, 1.0, n),
        qmax=np.full(n, 1.2),
        dxdp=rng.normal(0, 0.01, size=(n, d)),
    )


# --- construction ------------------------------------------------------

def test_zeroed_network_outputs_ln2():
    net = pinn.build_network(_tiny_spec())
    with torch.no_grad():
        for t in net.parameters():
            t.zero_()
        # batch-norm affine was zeroed too; restore unit scale
        for norm in net.norms:
            norm.weight.fill_(1.0)
    net.eval()
    x = torch.randn(5, 3)
    out = net(x, torch.full((5,), 10.0), torch.full((5,), 300.0))
    np.testing.assert_allclose(out.detach().numpy(), math.log(2.0),
                               rtol=1e-6)


def test_zero_gate_is_half():
    net = pinn.build_network(_tiny_spec())
    with torch.no_grad():
        net.gate.weight.zero_()
        net.gate.bias.zero_()
    pt = torch.randn(7, 2)
    g = torch.sigmoid(net.gate(pt))
    np.testing.assert_array_equal(g.detach().numpy(), 0.5)


def test_same_seed_identical_init():
    a = pinn.build_network(_tiny_spec(seed=5))
    b = pinn.build_network(_tiny_spec(seed=5))
    c = pinn.build_network(_tiny_spec(seed=6))
    for ta, tb in zip(a.parameters(), b.parameters()):
        assert torch.equal(ta, tb)
    assert any(not torch.equal(ta, tc)
               for ta, tc in zip(a.parameters(), c.parameters()))


def test_backbone_variants_and_skips():
    assert set(pinn.BACKBONE_VARIANTS) == {3, 4, 5}
    assert pinn.BACKBONE_VARIANTS[4] == (256, 512, 256, 128)
    # equal consecutive widths get a residual skip
    net = pinn.build_network(_tiny_spec())
    assert net._skip == [True, True]  # concat 8 -> 8 -> 8
    wide = pinn.build_network(pinn.ArchSpec(
        input_dim=3, scale_widths=(4, 4), backbone_widths=(16, 8), seed=0))
    assert wide._skip == [False, False]


def test_width_mult_scales_parameters():
    small = pinn.build_network(_tiny_spec(width_mult=0.5))
    base = pinn.build_network(_tiny_spec())
    assert small.n_parameters() < base.n_parameters()


def test_output_nonnegative_fuzz():
    net = pinn.build_network(_tiny_spec(seed=3))
    net.eval()
    rng = np.random.default_rng(1)
    x = torch.as_tensor(rng.normal(0, 5, (1000, 3)), dtype=torch.float32)
    p = torch.as_tensor(rng.uniform(0, 200, 1000), dtype=torch.float32)
    T = torch.as_tensor(rng.uniform(250, 400, 1000), dtype=torch.float32)
    with torch.no_grad():
        out = net(x, p, T)
    assert torch.all(out >= 0.0)


def test_dimension_mismatch():
    net = pinn.build_network(_tiny_spec())
    with pytest.raises(DimensionMismatch):
        net(torch.randn(2, 4), torch.ones(2), torch.ones(2))


def test_train_vs_eval_identical_without_stochastic_layers():
    # dropout 0 and frozen batch-norm stats: mode must not matter
    net = pinn.build_network(_tiny_spec())
    x = torch.randn(6, 3)
    p, T = torch.rand(6) * 100, torch.full((6,), 300.0)
    net.train()
    for norm in net.norms:
        norm.eval()
    with torch.no_grad():
        a = net(x, p, T)
    net.eval()
    with torch.no_grad():
        b = net(x, p, T)
    assert torch.equal(a, b)


def test_set_gate_stats():
    net = pinn.build_network(_tiny_spec())
    p = np.array([10.0, 20.0, 30.0])
    T = np.array([300.0, 300.0, 330.0])
    net.set_gate_stats(p, T)
    assert net.gate_mean[0].item() == pytest.approx(20.0)
    assert net.gate_std[1].item() == pytest.approx(float(T.std()), rel=1e-6)


# --- derivatives -------------------------------------------------------

def test_input_gradient_matches_finite_difference():
    net = pinn.build_network(_tiny_spec(seed=2)).double()
    net.eval()
    rng = np.random.default_rng(4)
    for _ in range(10):
        x = torch.as_tensor(rng.normal(size=(1, 3)), dtype=torch.float64,
                            )
        x.requires_grad_(True)
        p = torch.as_tensor([rng.uniform(1, 190)], dtype=torch.float64)
        T = torch.as_tensor([300.0], dtype=torch.float64)
        out = net(x, p, T)
        grad = torch.autograd.grad(out.sum(), x)[0]
        step = 1e-4
        for j in range(3):
            dx = torch.zeros_like(x)
            dx[0, j] = step
            with torch.no_grad():
                fd = (net(x + dx, p, T) - net(x - dx, p, T)) / (2 * step)
            assert grad[0, j].item() == pytest.approx(
                fd.item(), rel=1e-4, abs=1e-10)


def test_dqdp_matches_finite_difference():
    net = pinn.build_network(_tiny_spec(seed=7)).double()
    net.eval()
    data = _data(16)
    x, p, T, _, _, dxdp = data.tensors(torch.float64)
    pred, dqdp = pinn.forward_with_dqdp(net, x, p, T, dxdp)
    fd = pinn.finite_diff_dqdp(net, x, p, T, dxdp)
    np.testing.assert_allclose(dqdp.detach().numpy(), fd.numpy(),
                               rtol=1e-3, atol=1e-8)


def test_dqdp_includes_feature_pathway():
    # with a nonzero dxdp the derivative must differ from the gate-only one
    net = pinn.build_network(_tiny_spec(seed=8)).double()
    net.eval()
    data = _data(8)
    x, p, T, _, _, dxdp = data.tensors(torch.float64)
    _, with_feat = pinn.forward_with_dqdp(net, x, p, T, dxdp * 10.0)
    _, gate_only = pinn.forward_with_dqdp(net, x, p, T,
                                          torch.zeros_like(dxdp))
    assert not torch.allclose(with_feat, gate_only)


# --- loss arithmetic ---------------------------------------------------

def _terms(pred, target, p, qmax, dqdp=None, lambdas=(1.0, 1.0, 1.0, 1.0)):
    t = lambda v: torch.as_tensor(v, dtype=torch.float64)
    dqdp = dqdp if dqdp is not None else [0.0] * len(pred)
    return pinn.loss_terms(t(pred), t(target), t(p), t(qmax), t(dqdp),
                           lambdas)


def test_data_weight_at_pivot_is_one():
    # w(0.1) = sigmoid(0) + 0.5 = 1.0; unit residual isolates the weight
    bd = _terms([-0.9], [0.1], [10.0], [1.2])
    assert float(bd.data) == pytest.approx(1.0, rel=1e-12)


def test_data_weight_hand_value():
    # w(0.3) = sigmoid(1) + 0.5 = 1.23106
    bd = _terms([-0.7], [0.3], [10.0], [1.2])
    assert float(bd.data) == pytest.approx(1.2310585786300049, rel=1e-12)


def test_physics_term_clay_hand_value():
    # clay q_max 1.2, prediction 1.5 at 60 bar:
    # max(0, 1.5-1.2) + 0.1*max(0, 0.84-1.5) = 0.3
    bd = _terms([1.5], [1.0], [60.0], [1.2])
    assert float(bd.physics) == pytest.approx(0.3, rel=1e-12)


def test_physics_term_empty_high_pressure_subset():
    bd = _terms([1.5, 0.2], [1.0, 0.2], [10.0, 50.0], [1.2, 1.2])
    assert float(bd.physics) == 0.0


def test_physics_undersaturation_branch():
    # 0.5 < 0.7*1.2 = 0.84 at high pressure: 0.1*(0.84-0.5) = 0.034
    bd = _terms([0.5], [0.5], [100.0], [1.2])
    assert float(bd.physics) == pytest.approx(0.034, rel=1e-10)


def test_bounds_term():
    bd = _terms([-0.2, 1.4], [0.0, 1.0], [10.0, 10.0], [1.2, 1.2])
    assert float(bd.bounds) == pytest.approx((0.2 + 0.2) / 2.0, rel=1e-12)


def test_monotonicity_term():
    bd = _terms([0.5], [0.5], [10.0], [1.2], dqdp=[-0.1])
    assert float(bd.monotonicity) == pytest.approx(0.1 - 1e-6, rel=1e-9)
    ok = _terms([0.5], [0.5], [10.0], [1.2], dqdp=[0.2])
    assert float(ok.monotonicity) == 0.0


def test_total_is_weighted_sum():
    bd = _terms([1.5], [0.1], [60.0], [1.2], dqdp=[-0.1],
                lambdas=(1.0, 2.0, 0.5, 0.25))
    expect = (float(bd.data) + 2.0 * float(bd.physics)
              + 0.5 * float(bd.bounds) + 0.25 * float(bd.monotonicity))
    assert float(bd.total) == pytest.approx(expect, rel=1e-12)
    assert all(float(t) >= 0.0 for t in bd.terms)


# --- adaptive weighting ------------------------------------------------

def test_adaptive_lambdas_equal_norms():
    lam, ema = pinn.adaptive_lambdas([1.0, 1.0, 1.0, 1.0], None)
    assert lam == pytest.approx((1.0, 1.0, 1.0, 1.0), rel=1e-9)
    np.testing.assert_array_equal(ema, [1.0, 1.0, 1.0, 1.0])


def test_adaptive_lambdas_steady_state():
    ema = None
    for _ in range(50):
        lam, ema = pinn.adaptive_lambdas([2.0, 1.0, 1.0, 1.0], ema)
    assert lam == pytest.approx((1.0, 2.0, 2.0, 2.0), rel=1e-9)


def test_adaptive_lambdas_zero_gradient_guarded():
    lam, _ = pinn.adaptive_lambdas([1.0, 0.0, 1.0, 1.0], None)
    assert math.isfinite(lam[1]) and lam[1] > 1e6


def test_adaptive_lambdas_ema_update():
    lam, ema = pinn.adaptive_lambdas([2.0, 1.0, 1.0, 1.0],
                                     [1.0, 1.0, 1.0, 1.0], alpha=0.1)
    assert ema[0] == pytest.approx(1.1)


# --- schedule ----------------------------------------------------------

def test_lr_endpoints_and_midpoint():
    s = pinn.TrainSchedule()
    assert pinn.lr_at(s, 1, 0) == 1.2e-3
    assert pinn.lr_at(s, 1, 49) == 1.2e-3
    assert pinn.lr_at(s, 2, 0) == pytest.approx(5e-4, rel=1e-12)
    assert pinn.lr_at(s, 2, 250) == pytest.approx(1e-6, rel=1e-12)
    assert pinn.lr_at(s, 2, 125) == pytest.approx(2.505e-4, rel=1e-12)
    assert pinn.lr_at(s, 3, 0) == pytest.approx(1e-4, rel=1e-12)
    assert pinn.lr_at(s, 3, 100) == pytest.approx(1e-7, rel=1e-12)


def test_phase_lambdas():
    s = pinn.TrainSchedule()
    assert pinn._phase_lambdas(1, 10, s, None) == (1.0, 0.0, 0.0, 0.0)
    assert pinn._phase_lambdas(3, 10, s, None) == s.phase3_weights
    lam = pinn._phase_lambdas(2, 125, s, None)
    assert lam == (1.0, 0.5, 0.5, 0.5)  # half-ramp


# --- training mechanics ------------------------------------------------

def test_single_row_memorization():
    data = pinn.TrainingData(
        X=np.array([[0.2, -0.1, 0.4]]), p=np.array([10.0]),
        T=np.array([300.0]), y=np.array([0.37]),
        qmax=np.array([1.2]), dxdp=np.zeros((1, 3)))
    sched = pinn.TrainSchedule(phase1_epochs=1500, phase2_epochs=0,
                               phase3_epochs=0, patience=1500,
                               batch_size=1, tolerance=0.0)
    net = pinn.build_network(_tiny_spec(seed=1))
    net, hist = pinn.train(net, data, data, sched, seed=0)
    pred = pinn.predict(net, data)
    w = 1.0 / (1.0 + math.exp(-5.0 * (0.37 - 0.1))) + 0.5
    assert w * (0.37 - pred[0]) ** 2 < 1e-6


def test_early_stop_fires_exactly_at_patience(monkeypatch):
    # A constant validation loss means the first epoch sets the best and
    # every later epoch is stale, so training runs exactly 1 + patience
    # epochs.  Validation predictions are the only no-grad loss calls.
    real = pinn.loss_terms

    def frozen(pred, target, p, qmax, dqdp, lambdas=(1.0, 1.0, 1.0, 1.0)):
        if not pred.requires_grad:
            one = torch.tensor(1.0)
            zero = torch.tensor(0.0)
            return pinn.LossBreakdown(one, zero, zero, zero, lambdas)
        return real(pred, target, p, qmax, dqdp, lambdas)

    monkeypatch.setattr(pinn, "loss_terms", frozen)
    data = _data(8)
    sched = pinn.TrainSchedule(phase1_epochs=100, phase2_epochs=0,
                               phase3_epochs=0, patience=5)
    net = pinn.build_network(_tiny_spec(seed=4))
    net, hist = pinn.train(net, data, data, sched, seed=0)
    assert len(hist) == 6


def test_training_deterministic():
    data = _data(24)
    val = _data(8, seed=9)
    sched = pinn.TrainSchedule(phase1_epochs=3, phase2_epochs=3,
                               phase3_epochs=2, patience=50)
    a = pinn.build_network(_tiny_spec(seed=2))
    a, ha = pinn.train(a, data, val, sched, seed=1)
    b = pinn.build_network(_tiny_spec(seed=2))
    b, hb = pinn.train(b, data, val, sched, seed=1)
    np.testing.assert_array_equal(pinn.predict(a, val), pinn.predict(b, val))
    assert [h["val_loss"] for h in ha] == [h["val_loss"] for h in hb]


def test_history_records_phases_and_lambdas():
    data = _data(24)
    sched = pinn.TrainSchedule(phase1_epochs=2, phase2_epochs=2,
                               phase3_epochs=2, patience=50)
    net = pinn.build_network(_tiny_spec(seed=3))
    net, hist = pinn.train(net, data, data, sched, seed=0)
    phases = [h["phase"] for h in hist]
    assert phases == [1, 1, 2, 2, 3, 3]
    assert hist[0]["lambdas"] == [1.0, 0.0, 0.0, 0.0]
    assert hist[-1]["lambdas"] == list(sched.phase3_weights)
    assert all(len(h["train_terms"]) == 4 for h in hist)


def test_checkpoint_round_trip(tmp_path):
    net = pinn.build_network(_tiny_spec(seed=6))
    data = _data(4)
    path = str(tmp_path / "ckpt.pt")
    pinn.save_checkpoint(net, path, extra={"k": 1})
    loaded, extra = pinn.load_checkpoint(path)
    assert extra == {"k": 1}
    np.testing.assert_array_equal(pinn.predict(net, data),
                                  pinn.predict(loaded, data))


def test_training_data_assemble_dxdp():
    from sorbfit import features
    from sorbfit.data_core import IntegratedRecord, SamplePropertySet

    ps = SamplePropertySet(sample_key="a", lithology="Clay", pore_volume=0.1)
    rec = IntegratedRecord("a", "Clay", 10.0, 300.0, 0.4, ps)
    catalog = [features.CATALOG_BY_NAME["ln_p"],
               features.CATALOG_BY_NAME["p_pore_volume"],
               features.CATALOG_BY_NAME["temperature"]]
    matrix = features.build_matrix([rec], catalog=catalog)
    scaler = features.ScalerParams(
        names=matrix.names, median=np.zeros(3),
        iqr=np.array([2.0, 4.0, 1.0]), constant=np.zeros(3, dtype=bool))
    td = pinn.TrainingData.assemble([rec], matrix, scaler,
                                    features.CATALOG_BY_NAME)
    assert td.dxdp[0, 0] == pytest.approx((1.0 / 10.0) / 2.0)
    assert td.dxdp[0, 1] == pytest.approx(0.1 / 4.0)
    assert td.dxdp[0, 2] == 0.0  # temperature has no pressure dependence
    assert td.qmax[0] == 1.2
