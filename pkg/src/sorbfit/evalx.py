"""Evaluation battery: regression, correlation, physics-consistency,
uncertainty, and residual-diagnostic metrics.

Normality is assessed with the Jarque-Bera moment test (chi-squared with
2 dof); interval membership is inclusive at both endpoints.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import stats

from .errors import EmptyInput, LengthMismatch, ZeroResidualVariance

# Lithology-specific uptake ceilings, mmol/g.
QMAX_TABLE = {"Clay": 1.2, "Shale": 1.0, "Coal": 0.88}

MONO_SLACK = 1e-6  # mmol/g tolerated decrease before a pair counts non-monotone
SATURATION_P = 50.0  # bar; high-pressure regime threshold
SATURATION_BAND = (0.7, 1.0)  # fraction of q_max

# Two-sided normal quantiles for the three reported interval levels.
Z_SCORES = {0.68: 0.9944578832097532, 0.95: 1.959964, 0.99: 2.5758293035489004}

CWC_ETA = 50.0


def _check(y, yhat):
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if len(y) != len(yhat):
        raise LengthMismatch(f"{len(y)} targets vs {len(yhat)} predictions")
    if len(y) == 0:
        raise EmptyInput("no rows to evaluate")
    return y, yhat


def point_metrics(y, yhat, n_features=1):
    """Standard regression and rank-correlation metrics.

    MAPE skips zero targets; the skipped count is reported alongside.
    """
    y, yhat = _check(y, yhat)
    n = len(y)
    resid = y - yhat
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else float("nan")
    adj_r2 = float("nan")
    if n - n_features - 1 > 0 and np.isfinite(r2):
        adj_r2 = 1.0 - (1.0 - r2) * (n - 1) / (n - n_features - 1)

    nz = y != 0.0
    mape = float(np.mean(np.abs(resid[nz] / y[nz]))) if nz.any() else float("nan")

    var_y = float(np.var(y))
    expl = 1.0 - float(np.var(resid)) / var_y if var_y > 0 else float("nan")

    def _corr(fn):
        if np.ptp(y) == 0 or np.ptp(yhat) == 0:
            return float("nan")
        return float(fn(y, yhat)[0])

    return {
        "r2": r2,
        "adj_r2": adj_r2,
        "mse": ss_res / n,
        "rmse": math.sqrt(ss_res / n),
        "mae": float(np.mean(np.abs(resid))),
        "mape": mape,
        "mape_skipped": int(np.sum(~nz)),
        "max_error": float(np.max(np.abs(resid))),
        "explained_variance": expl,
        "mbe": float(np.mean(yhat - y)),
        "pearson": _corr(stats.pearsonr),
        "spearman": _corr(stats.spearmanr),
        "kendall": _corr(stats.kendalltau),
    }


def physics_metrics(yhat, pressures, lithologies, groups, qmax=QMAX_TABLE):
    """Physical-admissibility rates over a prediction set.

    groups labels rows belonging to one isotherm (e.g. (sample, T)
    pairs); monotonicity is scored over adjacent pressure-sorted pairs
    within each group. Metrics whose subset is empty come back as None.
    """
    yhat = np.asarray(yhat, dtype=float)
    p = np.asarray(pressures, dtype=float)
    cap = np.array([qmax[l] for l in lithologies])
    n = len(yhat)

    out = {
        "negative_rate": float(np.mean(yhat < 0.0)),
        "upper_violation_rate": float(np.mean(yhat > cap)),
    }

    pairs_ok = pairs_all = 0
    by_group = {}
    for i, g in enumerate(groups):
        by_group.setdefault(g, []).append(i)
    for idxs in by_group.values():
        idxs = sorted(idxs, key=lambda i: p[i])
        for a, b in zip(idxs, idxs[1:]):
            pairs_all += 1
            if yhat[b] - yhat[a] >= -MONO_SLACK:
                pairs_ok += 1
    out["monotonicity_score"] = pairs_ok / pairs_all if pairs_all else None

    high = p > SATURATION_P
    if high.any():
        lo = SATURATION_BAND[0] * cap[high]
        hi = SATURATION_BAND[1] * cap[high]
        yh = yhat[high]
        out["saturation_consistency"] = float(np.mean((yh >= lo) & (yh <= hi)))
    else:
        out["saturation_consistency"] = None
    out["n"] = n
    return out


def uq_metrics(y, mean, sigma):
    """Interval coverage, sharpness, and uncertainty-error association.

    Intervals are mean +- z*sigma at 68/95/99%; membership is inclusive.
    CWC multiplies the range-normalized mean interval width by an
    exponential penalty that activates only under-coverage at 95%.
    """
    y, mean = _check(y, mean)
    sigma = np.asarray(sigma, dtype=float)
    cov = {}
    for level, z in Z_SCORES.items():
        lo, hi = mean - z * sigma, mean + z * sigma
        cov[level] = float(np.mean((y >= lo) & (y <= hi)))

    cal_err = float(np.mean([abs(cov[lv] - lv) for lv in Z_SCORES]))
    z95 = Z_SCORES[0.95]
    mpiw = float(np.mean(2.0 * z95 * sigma))
    y_range = float(np.ptp(y))
    mpiw_norm = mpiw / y_range if y_range > 0 else mpiw
    under = cov[0.95] < 0.95
    cwc = mpiw_norm * (1.0 + (math.exp(-CWC_ETA * (cov[0.95] - 0.95))
                              if under else 0.0))

    err = np.abs(y - mean)
    if np.ptp(sigma) > 0 and np.ptp(err) > 0:
        unc_err_corr = float(stats.pearsonr(sigma, err)[0])
    else:
        unc_err_corr = float("nan")

    return {
        "coverage68": cov[0.68],
        "coverage95": cov[0.95],
        "coverage99": cov[0.99],
        "calibration_error": cal_err,
        "sharpness": float(np.mean(sigma)),
        "mpiw": mpiw,
        "cwc": cwc,
        "unc_err_corr": unc_err_corr,
    }


def durbin_watson(residuals):
    e = np.asarray(residuals, dtype=float)
    denom = float(np.sum(e**2))
    if denom == 0.0:
        raise ZeroResidualVariance("all residuals are zero")
    return float(np.sum(np.diff(e) ** 2) / denom)


def jarque_bera(residuals):
    e = np.asarray(residuals, dtype=float)
    n = len(e)
    sd = e.std()
    if sd == 0.0:
        raise ZeroResidualVariance("residuals have no spread")
    z = (e - e.mean()) / sd
    skew = float(np.mean(z**3))
    kurt = float(np.mean(z**4))
    jb = n / 6.0 * (skew**2 + (kurt - 3.0) ** 2 / 4.0)
    return float(jb), float(stats.chi2.sf(jb, 2))


def residual_tests(residuals, predictions):
    """Autocorrelation, normality, and heteroscedasticity diagnostics.

    residuals must arrive pressure-ordered for the Durbin-Watson
    statistic to mean anything. n < 8 sets the small-sample flag.
    """
    e = np.asarray(residuals, dtype=float)
    yhat = np.asarray(predictions, dtype=float)
    if np.ptp(e) == 0.0 and np.all(e == 0.0):
        raise ZeroResidualVariance("all residuals are zero")
    jb, jb_p = jarque_bera(e) if np.ptp(e) > 0 else (float("nan"), float("nan"))
    if np.ptp(np.abs(e)) > 0 and np.ptp(yhat) > 0:
        rho = float(stats.spearmanr(np.abs(e), yhat)[0])
    else:
        rho = float("nan")
    return {
        "durbin_watson": durbin_watson(e),
        "jarque_bera": jb,
        "jarque_bera_p": jb_p,
        "heteroscedasticity_rho": rho,
        "small_sample": len(e) < 8,
        "normality_test": "jarque_bera",
    }


def full_report(y, yhat, pressures=None, lithologies=None, groups=None,
                sigma=None, n_features=1):
    """Assemble every applicable metric block into one report dict."""
    report = {"point": point_metrics(y, yhat, n_features=n_features)}
    if pressures is not None and lithologies is not None and groups is not None:
        report["physics"] = physics_metrics(yhat, pressures, lithologies,
                                            groups)
    if sigma is not None:
        report["uq"] = uq_metrics(y, yhat, sigma)
    y_arr = np.asarray(y, dtype=float)
    resid = y_arr - np.asarray(yhat, dtype=float)
    if pressures is not None:
        order = np.argsort(np.asarray(pressures, dtype=float), kind="stable")
        resid_ord = resid[order]
        yhat_ord = np.asarray(yhat, dtype=float)[order]
    else:
        resid_ord, yhat_ord = resid, np.asarray(yhat, dtype=float)
    try:
        report["residual"] = residual_tests(resid_ord, yhat_ord)
    except ZeroResidualVariance:
        report["residual"] = None
    return report
