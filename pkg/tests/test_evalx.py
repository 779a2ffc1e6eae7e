import math

import numpy as np
import pytest

from sorbfit import evalx
from sorbfit.errors import EmptyInput, LengthMismatch, ZeroResidualVariance


# --- point metrics -----------------------------------------------------

def test_perfect_prediction():
    y = np.array([0.1, 0.4, 0.9, 1.2])
    m = evalx.point_metrics(y, y)
    assert m["r2"] == 1.0
    assert m["rmse"] == 0.0 and m["mae"] == 0.0 and m["max_error"] == 0.0
    assert m["pearson"] == pytest.approx(1.0)
    assert m["spearman"] == pytest.approx(1.0)
    assert m["mbe"] == 0.0


def test_shifted_prediction_hand_values():
    y = np.array([1.0, 2.0, 3.0, 4.0])
    m = evalx.point_metrics(y, y + 0.5)
    assert m["mbe"] == pytest.approx(0.5)
    assert m["mae"] == pytest.approx(0.5)
    assert m["rmse"] == pytest.approx(0.5)
    assert m["r2"] == pytest.approx(1.0 - 4 * 0.25 / 5.0)
    # pure shift leaves variance untouched
    assert m["explained_variance"] == pytest.approx(1.0)
    assert m["pearson"] == pytest.approx(1.0)


def test_constant_target_r2_nan():
    m = evalx.point_metrics([1.0, 1.0, 1.0], [1.0, 1.1, 0.9])
    assert math.isnan(m["r2"])
    assert math.isnan(m["pearson"])


def test_mape_skips_zero_targets():
    m = evalx.point_metrics([0.0, 1.0, 2.0], [0.1, 1.1, 2.2])
    assert m["mape_skipped"] == 1
    assert m["mape"] == pytest.approx(0.1)


def test_adjusted_r2_uses_feature_count():
    y = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    yhat = y + np.array([0.1, -0.1, 0.1, -0.1, 0.1, -0.1])
    m1 = evalx.point_metrics(y, yhat, n_features=1)
    m3 = evalx.point_metrics(y, yhat, n_features=3)
    assert m3["adj_r2"] < m1["adj_r2"] < m1["r2"]


def test_length_mismatch_and_empty():
    with pytest.raises(LengthMismatch):
        evalx.point_metrics([1.0], [1.0, 2.0])
    with pytest.raises(EmptyInput):
        evalx.point_metrics([], [])


# --- physics metrics ---------------------------------------------------

def test_physics_metrics_rates():
    yhat = np.array([-0.1, 0.5, 1.5, 0.8])
    p = np.array([10.0, 20.0, 30.0, 40.0])
    lith = ["Clay"] * 4
    groups = ["g1"] * 4
    m = evalx.physics_metrics(yhat, p, lith, groups)
    assert m["negative_rate"] == pytest.approx(0.25)
    assert m["upper_violation_rate"] == pytest.approx(0.25)  # 1.5 > 1.2
    # adjacent pairs: (-0.1,0.5) ok, (0.5,1.5) ok, (1.5,0.8) drop
    assert m["monotonicity_score"] == pytest.approx(2.0 / 3.0)
    assert m["saturation_consistency"] is None  # no rows above 50 bar


def test_physics_metrics_saturation_band():
    yhat = np.array([0.9, 0.5, 1.1])
    p = np.array([60.0, 70.0, 80.0])
    m = evalx.physics_metrics(yhat, p, ["Clay"] * 3, ["g"] * 3)
    # band for clay: [0.84, 1.2]; 0.9 and 1.1 inside, 0.5 below
    assert m["saturation_consistency"] == pytest.approx(2.0 / 3.0)


def test_physics_metrics_groups_respected():
    # monotonicity is scored within groups, not across them
    yhat = np.array([0.5, 0.9, 0.2, 0.6])
    p = np.array([1.0, 10.0, 1.0, 10.0])
    m = evalx.physics_metrics(yhat, p, ["Clay"] * 4,
                              ["a", "a", "b", "b"])
    assert m["monotonicity_score"] == 1.0


# --- uq metrics --------------------------------------------------------

def test_z_scores_table():
    assert evalx.Z_SCORES[0.95] == pytest.approx(1.959964, abs=1e-6)
    assert evalx.Z_SCORES[0.68] == pytest.approx(0.994458, abs=1e-6)
    assert evalx.Z_SCORES[0.99] == pytest.approx(2.575829, abs=1e-6)


def test_uq_metrics_inclusive_endpoints():
    y = np.array([1.0, 2.0])
    mean = np.array([1.0, 2.0]) - evalx.Z_SCORES[0.95] * 0.1
    sigma = np.array([0.1, 0.1])
    m = evalx.uq_metrics(y, mean, sigma)
    assert m["coverage95"] == 1.0  # y sits exactly on the upper endpoint


def test_uq_metrics_gaussian_calibration():
    rng = np.random.default_rng(0)
    n = 20000
    sigma = np.full(n, 0.3)
    y = rng.normal(0.0, 0.3, n)
    m = evalx.uq_metrics(y, np.zeros(n), sigma)
    assert m["coverage68"] == pytest.approx(0.68, abs=0.01)
    assert m["coverage95"] == pytest.approx(0.95, abs=0.01)
    assert m["coverage99"] == pytest.approx(0.99, abs=0.01)
    assert m["sharpness"] == pytest.approx(0.3)


def test_cwc_penalty_activates_only_under_coverage():
    y = np.linspace(0, 1, 200)
    mean = y.copy()
    wide = np.full(200, 0.5)
    m_over = evalx.uq_metrics(y, mean, wide)  # full coverage
    assert m_over["coverage95"] == 1.0
    assert m_over["cwc"] == pytest.approx(m_over["mpiw"] / np.ptp(y))
    tight = np.full(200, 1e-6)
    m_under = evalx.uq_metrics(y + 0.05, mean, tight)
    assert m_under["coverage95"] == 0.0
    assert m_under["cwc"] > 100.0 * m_under["mpiw"]


def test_coverage_nested_across_levels():
    rng = np.random.default_rng(1)
    y = rng.normal(0, 1, 500)
    sigma = rng.uniform(0.5, 1.5, 500)
    m = evalx.uq_metrics(y, np.zeros(500), sigma)
    assert m["coverage68"] <= m["coverage95"] <= m["coverage99"]


# --- residual diagnostics ---------------------------------------------

def test_durbin_watson_hand_values():
    # alternating residuals (1,-1,1,-1): sum diff^2 = 3*4, sum e^2 = 4 -> 3
    assert evalx.durbin_watson([1.0, -1.0, 1.0, -1.0]) == pytest.approx(3.0)
    # constant nonzero residuals: no first differences -> 0
    assert evalx.durbin_watson([0.5, 0.5, 0.5]) == 0.0
    with pytest.raises(ZeroResidualVariance):
        evalx.durbin_watson([0.0, 0.0])


def test_jarque_bera_gaussian_vs_skewed():
    rng = np.random.default_rng(2)
    jb_g, p_g = evalx.jarque_bera(rng.normal(0, 1, 5000))
    assert p_g > 0.01
    jb_s, p_s = evalx.jarque_bera(rng.exponential(1.0, 5000))
    assert jb_s > jb_g and p_s < 1e-6


def test_residual_tests_block():
    rng = np.random.default_rng(3)
    resid = rng.normal(0, 0.1, 100)
    yhat = rng.uniform(0, 1, 100)
    out = evalx.residual_tests(resid, yhat)
    assert out["normality_test"] == "jarque_bera"
    assert not out["small_sample"]
    assert 0.0 <= out["durbin_watson"] <= 4.0
    small = evalx.residual_tests(np.array([0.1, -0.2, 0.05]), np.ones(3))
    assert small["small_sample"]


def test_full_report_assembly():
    rng = np.random.default_rng(4)
    n = 60
    y = rng.uniform(0.05, 1.0, n)
    yhat = y + rng.normal(0, 0.02, n)
    p = rng.uniform(1, 190, n)
    rep = evalx.full_report(y, yhat, pressures=p, lithologies=["Shale"] * n,
                            groups=["g"] * n, sigma=np.full(n, 0.05))
    assert set(rep) == {"point", "physics", "uq", "residual"}
    assert rep["point"]["r2"] > 0.9


def test_full_report_zero_residuals():
    y = np.array([0.1, 0.2, 0.3])
    rep = evalx.full_report(y, y.copy())
    assert rep["residual"] is None
    assert rep["point"]["r2"] == 1.0
