"""Architecture-diverse ensemble uncertainty with interval calibration.

Ten members vary width multiplier, backbone depth, dropout, and learning
rate, each with its own seed. Predictions aggregate by mean and
population standard deviation; a single scalar tau, found by bisection
on validation coverage, rescales the spread (never the mean).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSpread, TooFewMembers
from .evalx import Z_SCORES
from .pinn import BACKBONE_VARIANTS, ArchSpec, TrainSchedule

ENSEMBLE_SEEDS = (42, 123, 456, 789, 2024, 3141, 1618, 2718, 9999, 7777)

# (width_mult, depth, dropout, lr) per member; one fixed documented
# assignment over the menus {0.75,1.0,1.25} x {3,4,5} x
# {0.08,0.10,0.12,0.15} x {1.0e-3,1.2e-3,1.5e-3}.
MEMBER_ASSIGNMENT = (
    (1.00, 4, 0.10, 1.2e-3),
    (0.75, 3, 0.08, 1.0e-3),
    (1.25, 5, 0.12, 1.5e-3),
    (0.75, 4, 0.15, 1.2e-3),
    (1.25, 3, 0.10, 1.0e-3),
    (1.00, 5, 0.08, 1.5e-3),
    (0.75, 5, 0.12, 1.2e-3),
    (1.25, 4, 0.15, 1.0e-3),
    (1.00, 3, 0.12, 1.5e-3),
    (1.00, 4, 0.08, 1.0e-3),
)

TAU_RANGE = (1e-3, 1e3)
COVERAGE_TOL = 0.005  # +-0.5 percentage points around the target


def build_ensemble_specs(input_dim, seeds=ENSEMBLE_SEEDS,
                         assignment=MEMBER_ASSIGNMENT):
    """(ArchSpec, learning rate) for each ensemble member."""
    out = []
    for seed, (mult, depth, dropout, lr) in zip(seeds, assignment):
        out.append((
            ArchSpec(input_dim=input_dim,
                     backbone_widths=BACKBONE_VARIANTS[depth],
                     dropout=dropout, width_mult=mult, seed=seed),
            lr,
        ))
    return out


def member_schedule(lr, base=None):
    """Schedule with the member's phase-1 learning rate substituted."""
    base = base or TrainSchedule()
    d = {**base.__dict__, "phase1_lr": lr}
    return TrainSchedule(**d)


@dataclass
class EnsemblePrediction:
    mean: np.ndarray
    sigma_raw: np.ndarray
    sigma_cal: np.ndarray
    tau: float

    def intervals(self, level=0.95, calibrated=True):
        z = Z_SCORES[level]
        s = self.sigma_cal if calibrated else self.sigma_raw
        return self.mean - z * s, self.mean + z * s


def aggregate(member_outputs, tau=1.0):
    """Mean and population (divide-by-K) std over member predictions."""
    M = np.asarray(member_outputs, dtype=float)
    if M.ndim != 2 or M.shape[0] < 2:
        raise TooFewMembers("ensemble aggregation needs >= 2 members")
    mean = M.mean(axis=0)
    sigma = M.std(axis=0)  # population convention
    return EnsemblePrediction(mean=mean, sigma_raw=sigma,
                              sigma_cal=tau * sigma, tau=tau)


def _coverage(y, mean, sigma, tau, z):
    half = tau * z * sigma
    return float(np.mean((y >= mean - half) & (y <= mean + half)))


@dataclass
class CalibrationResult:
    tau: float
    coverage_before: dict  # level -> fraction
    coverage_after: dict
    target_met: bool

    def to_json(self):
        return json.dumps({
            "tau": self.tau,
            "coverage_before": {str(k): v for k, v in
                                self.coverage_before.items()},
            "coverage_after": {str(k): v for k, v in
                               self.coverage_after.items()},
            "target_met": self.target_met,
        }, sort_keys=True)


def calibrate_temperature(mean, sigma_raw, y, target=0.95):
    """Scalar tau by bisection so tau-scaled 95% intervals cover target.

    coverage(tau) is non-decreasing, so bisection applies. If even the
    tau range endpoints cannot bracket the target, the closest endpoint
    is returned with target_met=False.
    """
    mean = np.asarray(mean, dtype=float)
    sigma = np.asarray(sigma_raw, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.mean(sigma > 0) < 0.5:
        raise DegenerateSpread("spread is zero on most validation rows")
    z = Z_SCORES[target]

    before = {lv: _coverage(y, mean, sigma, 1.0, Z_SCORES[lv])
              for lv in Z_SCORES}

    lo, hi = TAU_RANGE
    cov_lo = _coverage(y, mean, sigma, lo, z)
    cov_hi = _coverage(y, mean, sigma, hi, z)
    if cov_lo >= target:
        tau, met = lo, abs(cov_lo - target) <= COVERAGE_TOL
    elif cov_hi <= target:
        tau, met = hi, abs(cov_hi - target) <= COVERAGE_TOL
    else:
        for _ in range(200):
            mid = np.sqrt(lo * hi)  # log-scale bisection over 6 decades
            if _coverage(y, mean, sigma, mid, z) < target:
                lo = mid
            else:
                hi = mid
            if hi / lo < 1.0 + 1e-12:
                break
        tau = hi  # smallest tau reaching the target
        met = abs(_coverage(y, mean, sigma, tau, z) - target) <= COVERAGE_TOL

    after = {lv: _coverage(y, mean, sigma, tau, Z_SCORES[lv])
             for lv in Z_SCORES}
    return CalibrationResult(tau=float(tau), coverage_before=before,
                             coverage_after=after, target_met=met)


def ensemble_diversity(member_outputs):
    """Mean pairwise Pearson correlation and mean per-row spread."""
    M = np.asarray(member_outputs, dtype=float)
    if M.shape[0] < 2:
        raise TooFewMembers("diversity needs >= 2 members")
    K = M.shape[0]
    rs = []
    for i in range(K):
        for j in range(i + 1, K):
            a, b = M[i], M[j]
            if np.ptp(a) == 0 or np.ptp(b) == 0:
                rs.append(1.0 if np.allclose(a, b) else 0.0)
                continue
            rs.append(float(np.corrcoef(a, b)[0, 1]))
    return float(np.mean(rs)), float(np.mean(M.std(axis=0)))
