"""Sorption thermodynamics from temperature-resolved isotherm fits.

Enthalpy and entropy come from the linearized temperature dependence of
the fitted affinity constant (ln K against 1/T); isosteric heats come
from inverting fitted isotherms at fixed loading and regressing ln p
against 1/T. Energies are in J/mol throughout; classification thresholds
are quoted in kJ/mol where noted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    MissingThermoInputs,
    NoInvertibleLevels,
    NonPositiveK,
    SingleTemperature,
)
from .isotherm_models import R_GAS, eval_form

P_INVERT_LO = 1e-6  # bar
P_INVERT_HI = 1e4  # bar
INVERT_RTOL = 1e-10


@dataclass
class VantHoffResult:
    delta_h: float  # J/mol
    delta_s: float  # J/(mol K)
    slope: float
    intercept: float
    r_squared: float
    n: int
    two_point: bool  # minimum-data fit; r_squared is vacuous


def vant_hoff(temperatures, k_values):
    """Enthalpy and entropy from ln K versus 1/T by ordinary least squares.

    delta_h = -R * slope, delta_s = R * intercept. Requires at least two
    distinct temperatures and strictly positive K values.
    """
    t = np.asarray(temperatures, dtype=float)
    k = np.asarray(k_values, dtype=float)
    if t.size == 0:
        raise MissingThermoInputs("no (T, K) pairs provided")
    if np.any(k <= 0.0):
        raise NonPositiveK("affinity constants must be positive to take ln K")
    if np.unique(t).size < 2:
        raise SingleTemperature("need at least two distinct temperatures")

    x = 1.0 / t
    y = np.log(k)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    tss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / tss if tss > 0 else 1.0
    return VantHoffResult(
        delta_h=float(-R_GAS * slope),
        delta_s=float(R_GAS * intercept),
        slope=float(slope),
        intercept=float(intercept),
        r_squared=r2,
        n=int(t.size),
        two_point=np.unique(t).size == 2 and t.size == 2,
    )


def gibbs_energy(delta_h, delta_s, temperature):
    """delta_G = delta_H - T * delta_S, all in J/mol and J/(mol K)."""
    return delta_h - temperature * delta_s


GIBBS_CLASSES = ("Strong", "Moderate", "Weak", "NotFavorable")


def classify_gibbs(delta_g):
    """Bucket a Gibbs energy (J/mol) by favorability.

    Strong < -20 kJ/mol <= Moderate < -10 kJ/mol <= Weak < 0 <= NotFavorable;
    values on a boundary take the less-extreme class.
    """
    if delta_g < -20e3:
        return "Strong"
    if delta_g < -10e3:
        return "Moderate"
    if delta_g < 0.0:
        return "Weak"
    return "NotFavorable"


def invert_isotherm(form_id, params, q_target, temperature,
                    lo=P_INVERT_LO, hi=P_INVERT_HI, rtol=INVERT_RTOL):
    """Pressure at which a fitted form reaches a given uptake, by bisection.

    Returns None when q_target is not bracketed on [lo, hi] (the loading is
    unreachable for this curve).
    """
    def f(p):
        v = eval_form(form_id, params, np.array([p]), temperature, strict=False)
        return float(v[0]) - q_target

    f_lo, f_hi = f(lo), f(hi)
    if not (np.isfinite(f_lo) and np.isfinite(f_hi)) or f_lo * f_hi > 0.0:
        return None
    a, b = lo, hi
    while (b - a) > rtol * 0.5 * (a + b):
        mid = 0.5 * (a + b)
        if f_lo * f(mid) <= 0.0:
            b = mid
        else:
            a = mid
    return 0.5 * (a + b)


@dataclass
class IsostericHeat:
    loading: float  # mmol/g
    q_st: float  # J/mol
    n_temperatures: int


def isosteric_heat(fits_by_temperature, loadings):
    """Isosteric heats at fixed loadings from temperature-resolved fits.

    fits_by_temperature: sequence of (temperature_K, form_id, params).
    For each loading, each fitted curve is inverted for pressure and
    q_st = -R * slope of ln p against 1/T. Loadings invertible at fewer
    than two temperatures are skipped; raises if none survive.
    """
    fits = list(fits_by_temperature)
    if len(fits) < 2:
        raise SingleTemperature("isosteric heat needs fits at >= 2 temperatures")
    out = []
    for q in loadings:
        inv_t, ln_p = [], []
        for temperature, form_id, params in fits:
            p = invert_isotherm(form_id, params, q, temperature)
            if p is not None and p > 0.0:
                inv_t.append(1.0 / temperature)
                ln_p.append(np.log(p))
        if len(ln_p) < 2:
            continue
        slope = np.polyfit(inv_t, ln_p, 1)[0]
        out.append(IsostericHeat(loading=float(q), q_st=float(-R_GAS * slope),
                                 n_temperatures=len(ln_p)))
    if not out:
        raise NoInvertibleLevels(
            "no requested loading was invertible at two or more temperatures"
        )
    return out
