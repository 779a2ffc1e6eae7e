"""Registry of the 22 uptake-vs-pressure functional forms.

Ten physics-based forms (Henry through Hill) and twelve empirical
curve families (polynomials, exponentials, power laws, logarithms,
hyperbolic, rational, Weibull, Gompertz). Every form evaluates
vectorized over both pressure grids and parameter populations, which
the differential-evolution fitter relies on.

Units: pressure in bar, temperature in kelvin, uptake in mmol/g.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

R_GAS = 8.314462618  # J/(mol K)

# Default pressure ceiling used when data-dependent bounds (BET p0) are
# requested without a pressure context.
DEFAULT_MAX_PRESSURE = 200.0

_MONOTONE_TOL = 1e-9


@dataclass(frozen=True)
class FormSpec:
    """One functional form: evaluator plus fitting metadata."""

    id: str
    n_params: int
    param_names: tuple
    category: str  # "classical" | "mathematical"
    positive: tuple  # indices of parameters that must be > 0
    capacity_index: int | None = None  # saturation-capacity parameter, if any
    uses_temperature: bool = False

    def __repr__(self):
        return f"FormSpec({self.id}, k={self.n_params})"


def _p(params, i):
    """Extract parameter column i, shaped for broadcasting against p."""
    arr = np.asarray(params, dtype=float)
    if arr.ndim == 1:
        return arr[i]
    return arr[..., i, None]


def _eval_henry(params, p, T):
    return _p(params, 0) * p


def _eval_langmuir(params, p, T):
    q, k = _p(params, 0), _p(params, 1)
    return q * k * p / (1.0 + k * p)


def _eval_freundlich(params, p, T):
    kf, n = _p(params, 0), _p(params, 1)
    with np.errstate(invalid="ignore", over="ignore"):
        return kf * np.power(p, 1.0 / n)


def _eval_bet(params, p, T):
    qm, c, p0 = _p(params, 0), _p(params, 1), _p(params, 2)
    x = p / p0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = qm * c * x / ((1.0 - x) * (1.0 + (c - 1.0) * x))
    return np.where(x < 1.0, out, np.nan)


def _eval_temkin(params, p, T):
    bt, kt = _p(params, 0), _p(params, 1)
    arg = kt * p
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = (R_GAS * T / bt) * np.log(arg)
    return np.where(arg > 0.0, out, np.nan)


def _eval_toth(params, p, T):
    q, b, t = _p(params, 0), _p(params, 1), _p(params, 2)
    with np.errstate(invalid="ignore", over="ignore"):
        return q * p / np.power(b + np.power(p, t), 1.0 / t)


def _eval_sips(params, p, T):
    q, k, ns = _p(params, 0), _p(params, 1), _p(params, 2)
    with np.errstate(invalid="ignore", over="ignore"):
        u = np.power(k * p, 1.0 / ns)
    return q * u / (1.0 + u)


def _eval_redlich_peterson(params, p, T):
    k, a, beta = _p(params, 0), _p(params, 1), _p(params, 2)
    with np.errstate(invalid="ignore", over="ignore"):
        return k * p / (1.0 + a * np.power(p, beta))


def _eval_dubinin_radushkevich(params, p, T):
    qs, b = _p(params, 0), _p(params, 1)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        eps = R_GAS * T * np.log1p(1.0 / p)
        out = qs * np.exp(-b * eps * eps)
    # p = 0 is a removable singularity: eps -> inf so Q -> 0 by continuity.
    return np.where(p > 0.0, out, 0.0)


def _eval_hill(params, p, T):
    q, k, n = _p(params, 0), _p(params, 1), _p(params, 2)
    with np.errstate(invalid="ignore", over="ignore"):
        pn = np.power(p, n)
        return q * pn / (np.power(k, n) + pn)


def _eval_poly(order):
    def f(params, p, T):
        acc = _p(params, order) * np.ones_like(p)
        for i in range(order - 1, -1, -1):
            acc = acc * p + _p(params, i)
        return acc

    return f


def _eval_exp_single(params, p, T):
    a, b = _p(params, 0), _p(params, 1)
    return a * (-np.expm1(-b * p))


def _eval_exp_double(params, p, T):
    a, b, c, d = (_p(params, i) for i in range(4))
    return a * (-np.expm1(-b * p)) + c * (-np.expm1(-d * p))


def _eval_power_std(params, p, T):
    a, b = _p(params, 0), _p(params, 1)
    with np.errstate(invalid="ignore", over="ignore"):
        return a * np.power(p, b)


def _eval_power_mod(params, p, T):
    a, b, c = _p(params, 0), _p(params, 1), _p(params, 2)
    with np.errstate(invalid="ignore", over="ignore"):
        return a * np.power(p, b) + c


def _eval_log_std(params, p, T):
    a, b = _p(params, 0), _p(params, 1)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = a * np.log(p) + b
    return np.where(p > 0.0, out, np.nan)


def _eval_log_mod(params, p, T):
    a, b, c = _p(params, 0), _p(params, 1), _p(params, 2)
    arg = p + c
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = a * np.log(arg) + b
    return np.where(arg > 0.0, out, np.nan)


def _eval_hyperbolic(params, p, T):
    a, b = _p(params, 0), _p(params, 1)
    return a * p / (b + p)


def _eval_rational(params, p, T):
    a, b, c = _p(params, 0), _p(params, 1), _p(params, 2)
    return (a + b * p) / (1.0 + c * p)


def _eval_weibull(params, p, T):
    a, b, c = _p(params, 0), _p(params, 1), _p(params, 2)
    with np.errstate(invalid="ignore", over="ignore"):
        return a * (-np.expm1(-np.power(p / b, c)))


def _eval_gompertz(params, p, T):
    a, b, c = _p(params, 0), _p(params, 1), _p(params, 2)
    return a * np.exp(-b * np.exp(-c * p))


_EVALUATORS = {
    "henry": _eval_henry,
    "langmuir": _eval_langmuir,
    "freundlich": _eval_freundlich,
    "bet": _eval_bet,
    "temkin": _eval_temkin,
    "toth": _eval_toth,
    "sips": _eval_sips,
    "redlich_peterson": _eval_redlich_peterson,
    "dubinin_radushkevich": _eval_dubinin_radushkevich,
    "hill": _eval_hill,
    "poly2": _eval_poly(2),
    "poly3": _eval_poly(3),
    "poly4": _eval_poly(4),
    "exp_single": _eval_exp_single,
    "exp_double": _eval_exp_double,
    "power_std": _eval_power_std,
    "power_mod": _eval_power_mod,
    "log_std": _eval_log_std,
    "log_mod": _eval_log_mod,
    "hyperbolic": _eval_hyperbolic,
    "rational": _eval_rational,
    "weibull": _eval_weibull,
    "gompertz": _eval_gompertz,
}


FORMS = {
    "henry": FormSpec("henry", 1, ("K_H",), "classical", (0,)),
    "langmuir": FormSpec("langmuir", 2, ("q_max", "K_L"), "classical", (0, 1), 0),
    "freundlich": FormSpec("freundlich", 2, ("K_F", "n"), "classical", (0, 1)),
    # p_0 has no supercritical saturation value, so it is fitted alongside
    # Q_m and C (bounded above the observed pressure range).
    "bet": FormSpec("bet", 3, ("Q_m", "C", "p_0"), "classical", (0, 1, 2)),
    "temkin": FormSpec(
        "temkin", 2, ("b_T", "K_T"), "classical", (0, 1), uses_temperature=True
    ),
    "toth": FormSpec("toth", 3, ("q_max", "b", "t"), "classical", (0, 1, 2), 0),
    "sips": FormSpec("sips", 3, ("q_max", "K_S", "n_s"), "classical", (0, 1, 2), 0),
    "redlich_peterson": FormSpec(
        "redlich_peterson", 3, ("K_RP", "A_RP", "beta"), "classical", (0, 1, 2)
    ),
    "dubinin_radushkevich": FormSpec(
        "dubinin_radushkevich", 2, ("Q_s", "B"), "classical", (0, 1), 0,
        uses_temperature=True,
    ),
    "hill": FormSpec("hill", 3, ("q_max", "K", "n"), "classical", (0, 1, 2), 0),
    "poly2": FormSpec("poly2", 3, ("a0", "a1", "a2"), "mathematical", ()),
    "poly3": FormSpec("poly3", 4, ("a0", "a1", "a2", "a3"), "mathematical", ()),
    "poly4": FormSpec("poly4", 5, ("a0", "a1", "a2", "a3", "a4"), "mathematical", ()),
    "exp_single": FormSpec("exp_single", 2, ("a", "b"), "mathematical", (0, 1)),
    "exp_double": FormSpec(
        "exp_double", 4, ("a", "b", "c", "d"), "mathematical", (0, 1, 2, 3)
    ),
    "power_std": FormSpec("power_std", 2, ("a", "b"), "mathematical", (0, 1)),
    "power_mod": FormSpec("power_mod", 3, ("a", "b", "c"), "mathematical", (0, 1)),
    "log_std": FormSpec("log_std", 2, ("a", "b"), "mathematical", ()),
    "log_mod": FormSpec("log_mod", 3, ("a", "b", "c"), "mathematical", (2,)),
    "hyperbolic": FormSpec("hyperbolic", 2, ("a", "b"), "mathematical", (0, 1)),
    "rational": FormSpec("rational", 3, ("a", "b", "c"), "mathematical", (2,)),
    "weibull": FormSpec("weibull", 3, ("a", "b", "c"), "mathematical", (0, 1, 2)),
    "gompertz": FormSpec("gompertz", 3, ("a", "b", "c"), "mathematical", (0, 1, 2)),
}

CLASSICAL_FORMS = tuple(f for f, s in FORMS.items() if s.category == "classical")
MATHEMATICAL_FORMS = tuple(f for f, s in FORMS.items() if s.category == "mathematical")
ALL_FORMS = tuple(FORMS)


def get_form(form_id):
    try:
        return FORMS[form_id]
    except KeyError:
        raise KeyError(f"unknown functional form {form_id!r}") from None


def eval_form(form_id, params, p, T=298.15, strict=True):
    """Evaluate a functional form at pressures p (bar) and temperature T (K).

    params may be a single parameter vector (k,) or a population (m, k);
    in the latter case the result broadcasts to (m, len(p)).

    strict=True raises DomainError on any non-finite result; strict=False
    propagates NaN so population optimizers can map it to infinite cost.
    """
    spec = get_form(form_id)
    params = np.asarray(params, dtype=float)
    if params.shape[-1] != spec.n_params:
        raise ValueError(
            f"{form_id} expects {spec.n_params} parameters, got {params.shape[-1]}"
        )
    p = np.asarray(p, dtype=float)
    out = _EVALUATORS[form_id](params, p, T)
    if strict and not np.all(np.isfinite(out)):
        raise DomainError(f"{form_id} evaluated outside its domain")
    return out


def param_bounds(form_id, max_pressure=DEFAULT_MAX_PRESSURE):
    """Per-parameter (low, high) fitting bounds for one form.

    max_pressure anchors the BET p_0 bound, which must sit above the
    observed pressure range.
    """
    b = {
        "henry": [(1e-6, 100.0)],
        "langmuir": [(0.001, 100.0), (1e-6, 100.0)],
        "freundlich": [(1e-6, 100.0), (0.1, 10.0)],
        "bet": [(0.001, 100.0), (1e-6, 1000.0), (max_pressure, 10.0 * max_pressure)],
        "temkin": [(1.0, 1e7), (1e-6, 100.0)],
        "toth": [(0.001, 100.0), (1e-6, 1e4), (1e-3, 1.0)],
        "sips": [(0.001, 100.0), (1e-6, 100.0), (0.05, 3.0)],
        "redlich_peterson": [(1e-6, 100.0), (1e-6, 100.0), (1e-3, 1.0)],
        "dubinin_radushkevich": [(0.001, 100.0), (1e-12, 1e-4)],
        "hill": [(0.001, 100.0), (1e-3, 1e4), (0.05, 5.0)],
        "poly2": [(-10.0, 10.0)] * 3,
        "poly3": [(-10.0, 10.0)] * 4,
        "poly4": [(-10.0, 10.0)] * 5,
        "exp_single": [(1e-6, 100.0), (1e-6, 10.0)],
        "exp_double": [(1e-6, 100.0), (1e-6, 10.0), (1e-6, 100.0), (1e-6, 10.0)],
        "power_std": [(1e-6, 100.0), (0.01, 3.0)],
        "power_mod": [(1e-6, 100.0), (0.01, 3.0), (-10.0, 10.0)],
        "log_std": [(-10.0, 10.0), (-10.0, 10.0)],
        "log_mod": [(-10.0, 10.0), (-10.0, 10.0), (1e-6, 100.0)],
        "hyperbolic": [(1e-6, 100.0), (1e-6, 1e4)],
        "rational": [(-10.0, 10.0), (-10.0, 10.0), (1e-6, 10.0)],
        "weibull": [(1e-6, 100.0), (1e-3, 1e4), (0.05, 5.0)],
        "gompertz": [(1e-6, 100.0), (1e-6, 50.0), (1e-6, 10.0)],
    }[form_id]
    return [tuple(map(float, lo_hi)) for lo_hi in b]


@dataclass
class PhysicsScore:
    """Physics-compliance assessment: 1 - (failed checks / 5)."""

    score: float
    violated_checks: list = field(default_factory=list)

    FLAG_THRESHOLD = 0.7

    @property
    def flagged(self):
        return self.score < self.FLAG_THRESHOLD


N_PHYSICS_CHECKS = 5


def validate_physics(form_id, params, isotherm):
    """Run the five physics checks against a fitted form.

    isotherm is a sequence of (p, T, q) tuples. Checks that do not apply
    to a form (e.g. the BET window for non-BET forms) count as passed.
    """
    spec = get_form(form_id)
    params = np.asarray(params, dtype=float)
    iso = np.asarray(isotherm, dtype=float).reshape(-1, 3)
    p_obs, t_obs, q_obs = iso[:, 0], iso[:, 1], iso[:, 2]
    violated = []

    if any(params[i] <= 0.0 for i in spec.positive):
        violated.append("positivity")

    if spec.capacity_index is not None and len(q_obs):
        if params[spec.capacity_index] < np.max(q_obs):
            violated.append("saturation")

    # Monotonicity of the fitted curve over the observed pressure range.
    if len(p_obs):
        lo = max(np.min(p_obs), 1e-9)
        hi = max(np.max(p_obs), lo * (1.0 + 1e-9))
        grid = np.linspace(lo, hi, 100)
        t_ref = float(np.median(t_obs))
        curve = eval_form(form_id, params, grid, t_ref, strict=False)
        if not np.all(np.isfinite(curve)) or np.any(
            np.diff(curve) < -_MONOTONE_TOL
        ):
            violated.append("monotonicity")

    if form_id == "freundlich" and params[1] <= 1.0:
        violated.append("freundlich_favorability")

    if form_id == "bet" and len(p_obs):
        rel = p_obs / params[2]
        if np.any(rel <= 0.05) or np.any(rel >= 0.35):
            violated.append("bet_pressure_window")

    score = 1.0 - len(violated) / N_PHYSICS_CHECKS
    return PhysicsScore(score=score, violated_checks=violated)


def registry_json():
    """Self-describing form registry (id, parameter names, bounds)."""
    entries = []
    for form_id, spec in FORMS.items():
        entries.append(
            {
                "id": form_id,
                "category": spec.category,
                "n_params": spec.n_params,
                "param_names": list(spec.param_names),
                "bounds": [list(b) for b in param_bounds(form_id)],
            }
        )
    return json.dumps({"forms": entries}, indent=2, sort_keys=True)
