"""Engineered feature pipeline: catalog, imputation, outliers, scaling,
and consensus selection.

Seven feature categories cover thermodynamic state, pore structure,
surface chemistry, interactions, transport, molecular sieving, and
isotherm-shaped pressure transforms. Kinetic features use unit
proportionality constants — they feed a scale-invariant pipeline, so
constants cancel.

The pipeline is leakage-disciplined: imputation statistics, scaler
parameters, and selection votes derive from training rows only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .baselines import fit_forest
from .errors import AllMissingColumn, MissingThermoInputs
from .fit_engine import derive_seed
from .isotherm_models import R_GAS

T_CRIT = 33.19  # K, hydrogen critical temperature
P_CRIT = 13.13  # bar, hydrogen critical pressure
D_H2 = 0.289  # nm, hydrogen kinetic diameter

K_EFF_FLOOR = 1e-12  # guards ln(q/p) at q = 0

# Per-lithology Freundlich-type exponent for the pressure transform
# feature; defaults reflect typical sub-linear uptake curvature.
FREUNDLICH_N = {"Clay": 0.60, "Shale": 0.50, "Coal": 0.45}

CATEGORIES = ("Thermodynamic", "PoreStructure", "SurfaceChemistry",
              "Interaction", "Kinetic", "Sieving", "ClassicalInspired")


def _props(record):
    return record.properties


def _get(record, name):
    ps = _props(record)
    return None if ps is None else getattr(ps, name)


def _mineral(record, name):
    ps = _props(record)
    return None if ps is None else ps.mineral_fractions.get(name)


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    category: str
    inputs: tuple  # record fields the formula needs
    fn: object  # callable(record) -> float; assumes inputs present
    pressure_dependent: bool = False  # analytic d(feature)/dp is nonzero

    def dfdp(self, record):
        """Analytic derivative of the feature w.r.t. pressure (bar^-1).

        Zero when an input is missing: the cell was imputed from other
        rows, so it does not track this record's pressure.
        """
        if not self.pressure_dependent:
            return 0.0
        try:
            v = _PRESSURE_DERIVS[self.name](record)
        except TypeError:  # an arithmetic input is None
            return 0.0
        return 0.0 if v is None else float(v)


def _entry(name, category, inputs, fn, pdep=False):
    return CatalogEntry(name, category, tuple(inputs), fn, pdep)


_PRESSURE_DERIVS = {
    "ln_p": lambda r: 1.0 / r.pressure,
    "p_r": lambda r: 1.0 / P_CRIT,
    "p_pore_volume": lambda r: _get(r, "pore_volume"),
    "ads_potential": lambda r: _get(r, "surface_area") / r.temperature,
    "henry_approx": lambda r: _get(r, "surface_area") / r.temperature,
    "mean_free_path": lambda r: -r.temperature / r.pressure**2,
    "q_langmuir_shape": lambda r: 1.0 / (1.0 + r.pressure) ** 2,
    "q_freundlich_shape": lambda r: (
        FREUNDLICH_N[r.lithology]
        * r.pressure ** (FREUNDLICH_N[r.lithology] - 1.0)
    ),
    "q_temkin_shape": lambda r: 1.0 / (1.0 + r.pressure),
}


def build_catalog():
    e = _entry
    cat = [
        # Thermodynamic
        e("temperature", "Thermodynamic", ("temperature",),
          lambda r: r.temperature),
        e("ln_p", "Thermodynamic", ("pressure",),
          lambda r: math.log(r.pressure), pdep=True),
        e("reduced_T", "Thermodynamic", ("temperature",),
          lambda r: r.temperature / T_CRIT),
        e("p_r", "Thermodynamic", ("pressure",),
          lambda r: r.pressure / P_CRIT, pdep=True),
        e("inv_T", "Thermodynamic", ("temperature",),
          lambda r: 1.0 / r.temperature),
        e("dG_approx", "Thermodynamic", ("pressure", "temperature", "uptake"),
          lambda r: -R_GAS * r.temperature
          * math.log(max(r.uptake / r.pressure, K_EFF_FLOOR))),
        # Pore structure
        e("surface_area", "PoreStructure", ("surface_area",),
          lambda r: _get(r, "surface_area")),
        e("pore_volume", "PoreStructure", ("pore_volume",),
          lambda r: _get(r, "pore_volume")),
        e("micropore_volume", "PoreStructure", ("micropore_volume",),
          lambda r: _get(r, "micropore_volume")),
        e("avg_pore_diameter", "PoreStructure", ("avg_pore_diameter",),
          lambda r: _get(r, "avg_pore_diameter")),
        e("micropore_fraction", "PoreStructure",
          ("micropore_volume", "pore_volume"),
          lambda r: _get(r, "micropore_volume") / _get(r, "pore_volume")),
        e("surface_density", "PoreStructure", ("surface_area", "pore_volume"),
          lambda r: _get(r, "surface_area") / _get(r, "pore_volume")),
        e("pore_size_ratio", "PoreStructure", ("avg_pore_diameter",),
          lambda r: _get(r, "avg_pore_diameter") / D_H2),
        e("log_surface_area", "PoreStructure", ("surface_area",),
          lambda r: math.log(_get(r, "surface_area"))),
        e("log_pore_volume", "PoreStructure", ("pore_volume",),
          lambda r: math.log(_get(r, "pore_volume"))),
        # Surface chemistry
        e("toc", "SurfaceChemistry", ("toc",), lambda r: _get(r, "toc")),
        e("pyrite_toc_ratio", "SurfaceChemistry", ("pyrite", "toc"),
          lambda r: _mineral(r, "pyrite") / _get(r, "toc")),
        e("maturity_index", "SurfaceChemistry",
          ("fixed_carbon", "volatile_matter"),
          lambda r: _get(r, "fixed_carbon")
          / (_get(r, "fixed_carbon") + _get(r, "volatile_matter"))),
        e("fuel_ratio", "SurfaceChemistry",
          ("fixed_carbon", "volatile_matter"),
          lambda r: _get(r, "fixed_carbon") / _get(r, "volatile_matter")),
        e("log_vitrinite", "SurfaceChemistry", ("vitrinite_reflectance",),
          lambda r: math.log(_get(r, "vitrinite_reflectance"))),
        # Interaction
        e("surface_T", "Interaction", ("surface_area", "temperature"),
          lambda r: _get(r, "surface_area") * r.temperature),
        e("p_pore_volume", "Interaction", ("pressure", "pore_volume"),
          lambda r: r.pressure * _get(r, "pore_volume"), pdep=True),
        e("microfrac_T", "Interaction",
          ("micropore_volume", "pore_volume", "temperature"),
          lambda r: _get(r, "micropore_volume") / _get(r, "pore_volume")
          * r.temperature),
        e("ads_potential", "Interaction",
          ("pressure", "surface_area", "temperature"),
          lambda r: r.pressure * _get(r, "surface_area") / r.temperature,
          pdep=True),
        e("henry_approx", "Interaction",
          ("pressure", "surface_area", "temperature"),
          lambda r: _get(r, "surface_area") * r.pressure / r.temperature,
          pdep=True),
        # Kinetic (proportionality constants = 1)
        e("knudsen_diffusivity", "Kinetic",
          ("avg_pore_diameter", "temperature"),
          lambda r: _get(r, "avg_pore_diameter") * math.sqrt(r.temperature)),
        e("mean_free_path", "Kinetic", ("pressure", "temperature"),
          lambda r: r.temperature / r.pressure, pdep=True),
        e("diffusion_time", "Kinetic", ("avg_pore_diameter", "temperature"),
          lambda r: _get(r, "avg_pore_diameter") / math.sqrt(r.temperature)),
        # Sieving
        e("aperture_ratio", "Sieving", ("avg_pore_diameter",),
          lambda r: min(1.0, _get(r, "avg_pore_diameter") / D_H2)),
        e("accessibility", "Sieving", ("avg_pore_diameter",),
          lambda r: max(0.0, (_get(r, "avg_pore_diameter") - D_H2)
                        / _get(r, "avg_pore_diameter"))),
        e("ultramicropore", "Sieving", ("avg_pore_diameter",),
          lambda r: 1.0 if _get(r, "avg_pore_diameter") < 0.7 else 0.0),
        e("supermicropore", "Sieving", ("avg_pore_diameter",),
          lambda r: 1.0 if 0.7 <= _get(r, "avg_pore_diameter") < 2.0
          else 0.0),
        # Classical-inspired pressure transforms
        e("q_langmuir_shape", "ClassicalInspired", ("pressure",),
          lambda r: r.pressure / (1.0 + r.pressure), pdep=True),
        e("q_freundlich_shape", "ClassicalInspired", ("pressure",),
          lambda r: r.pressure ** FREUNDLICH_N[r.lithology], pdep=True),
        e("q_temkin_shape", "ClassicalInspired", ("pressure",),
          lambda r: math.log1p(r.pressure), pdep=True),
    ]
    assert len({c.name for c in cat}) == len(cat)
    return cat


CATALOG = build_catalog()
CATALOG_BY_NAME = {c.name: c for c in CATALOG}

_RECORD_FIELDS = ("pressure", "temperature", "uptake")


def _input_present(record, name):
    if name in _RECORD_FIELDS:
        return getattr(record, name) is not None
    if name == "pyrite":
        return _mineral(record, "pyrite") is not None
    return _get(record, name) is not None


def engineer_features(record, catalog=CATALOG):
    """One feature row; missing inputs propagate as None per feature."""
    if record.pressure is None or record.temperature is None:
        raise MissingThermoInputs(
            f"{record.sample_key}: pressure and temperature are required"
        )
    row = {}
    for entry in catalog:
        if all(_input_present(record, i) for i in entry.inputs):
            try:
                v = float(entry.fn(record))
            except (ValueError, ZeroDivisionError, OverflowError):
                v = float("nan")
            row[entry.name] = v if math.isfinite(v) else None
        else:
            row[entry.name] = None
    return row


@dataclass
class FeatureMatrix:
    names: list
    X: np.ndarray  # (n, d), NaN = missing
    mask: np.ndarray  # (n, d) bool, True = imputed
    lithology: list
    sample_keys: list
    y: np.ndarray | None = None  # uptake target when available

    def copy(self):
        return FeatureMatrix(list(self.names), self.X.copy(),
                             self.mask.copy(), list(self.lithology),
                             list(self.sample_keys),
                             None if self.y is None else self.y.copy())

    def column(self, name):
        return self.X[:, self.names.index(name)]


def build_matrix(records, catalog=CATALOG, with_target=True):
    rows = [engineer_features(r, catalog) for r in records]
    names = [c.name for c in catalog]
    X = np.array(
        [[np.nan if row[n] is None else row[n] for n in names] for row in rows]
    )
    y = None
    if with_target:
        y = np.array([np.nan if r.uptake is None else r.uptake
                      for r in records])
    return FeatureMatrix(
        names=names, X=X, mask=np.zeros_like(X, dtype=bool),
        lithology=[r.lithology for r in records],
        sample_keys=[r.sample_key for r in records], y=y,
    )


# --- imputation --------------------------------------------------------

KNN_K = 5
KNN_TIER_MAX = 0.10  # below this missing fraction, use kNN


def _complete_thermo_columns(matrix):
    """Fully observed thermodynamic columns: the kNN distance space."""
    out = []
    for j, name in enumerate(matrix.names):
        if CATALOG_BY_NAME[name].category != "Thermodynamic":
            continue
        if not np.any(np.isnan(matrix.X[:, j])):
            out.append(j)
    return out


def impute(matrix):
    """Three-tier fill: kNN (<10% missing), per-lithology median otherwise.

    Columns missing everywhere are dropped (AllMissingColumn is raised
    only if the drop leaves no columns). Observed cells never change.
    """
    m = matrix.copy()
    missing_frac = np.mean(np.isnan(m.X), axis=0)

    drop = [j for j, f in enumerate(missing_frac) if f >= 1.0]
    if drop:
        keep = [j for j in range(m.X.shape[1]) if j not in drop]
        if not keep:
            raise AllMissingColumn("every feature column is entirely missing")
        m.names = [m.names[j] for j in keep]
        m.X = m.X[:, keep]
        m.mask = m.mask[:, keep]
        missing_frac = missing_frac[keep]

    lith = np.array(m.lithology)
    donor_cols = _complete_thermo_columns(m)
    donor = m.X[:, donor_cols] if donor_cols else None
    if donor is not None and donor.shape[1]:
        med = np.median(donor, axis=0)
        iqr = np.subtract(*np.percentile(donor, [75, 25], axis=0))
        iqr[iqr == 0.0] = 1.0
        donor = (donor - med) / iqr

    for j, frac in enumerate(missing_frac):
        col = m.X[:, j]
        miss = np.isnan(col)
        if not miss.any():
            continue
        if frac < KNN_TIER_MAX and donor is not None and donor.shape[1]:
            complete = np.nonzero(~miss)[0]
            for i in np.nonzero(miss)[0]:
                dist = np.linalg.norm(donor[complete] - donor[i], axis=1)
                nearest = complete[np.argsort(dist, kind="stable")[:KNN_K]]
                col[i] = float(np.mean(m.X[nearest, j]))
                m.mask[i, j] = True
        else:
            for i in np.nonzero(miss)[0]:
                same = (~miss) & (lith == lith[i])
                pool = col[same] if same.any() else col[~miss]
                col[i] = float(np.median(pool))
                m.mask[i, j] = True
    return m


# --- outlier detection -------------------------------------------------

IFOREST_TREES = 100
IFOREST_SUBSAMPLE = 256
CONTAMINATION = 0.05
WINSOR_PCTS = (1.0, 99.0)

_EULER_GAMMA = 0.5772156649015329


def _c_factor(n):
    if n <= 1:
        return 0.0
    return 2.0 * (math.log(n - 1) + _EULER_GAMMA) - 2.0 * (n - 1) / n


def _isolation_scores(X, seed):
    """Anomaly scores in [0, 1] from a standard isolation forest."""
    n, d = X.shape
    psi = min(IFOREST_SUBSAMPLE, n)
    depth_cap = math.ceil(math.log2(max(psi, 2)))
    path_sum = np.zeros(n)
    for t in range(IFOREST_TREES):
        rng = np.random.default_rng(derive_seed(seed, "iforest", t))
        sample = rng.choice(n, size=psi, replace=False)

        # Each node is (row indices reaching it, depth); leaves add their
        # depth plus the average-path correction for remaining rows.
        def grow(rows_here, sub_rows, depth):
            if depth >= depth_cap or len(sub_rows) <= 1:
                path_sum[rows_here] += depth + _c_factor(len(sub_rows))
                return
            f = rng.integers(0, d)
            lo, hi = X[sub_rows, f].min(), X[sub_rows, f].max()
            if lo == hi:
                path_sum[rows_here] += depth + _c_factor(len(sub_rows))
                return
            split = rng.uniform(lo, hi)
            left_all = X[rows_here, f] < split
            left_sub = X[sub_rows, f] < split
            grow(rows_here[left_all], sub_rows[left_sub], depth + 1)
            grow(rows_here[~left_all], sub_rows[~left_sub], depth + 1)

        grow(np.arange(n), sample, 0)
    avg_path = path_sum / IFOREST_TREES
    return 2.0 ** (-avg_path / _c_factor(psi))


def detect_outliers(matrix, seed=42):
    """Per-row disposition: Exclude (both detectors), Winsorize (one),
    Keep (neither).

    Univariate detector: any cell beyond Q1 - 3*IQR or Q3 + 3*IQR in its
    column (zero-IQR columns never flag). Multivariate: isolation-forest
    score in the top ceil(0.05 n).
    """
    X = matrix.X
    n = len(X)
    uni = np.zeros(n, dtype=bool)
    for j in range(X.shape[1]):
        q1, q3 = np.percentile(X[:, j], [25, 75])
        iqr = q3 - q1
        if iqr == 0.0:
            continue
        uni |= (X[:, j] < q1 - 3.0 * iqr) | (X[:, j] > q3 + 3.0 * iqr)

    scores = _isolation_scores(X, seed)
    n_flag = math.ceil(CONTAMINATION * n)
    order = np.argsort(-scores, kind="stable")
    multi = np.zeros(n, dtype=bool)
    multi[order[:n_flag]] = True

    out = []
    for u, m in zip(uni, multi):
        if u and m:
            out.append("Exclude")
        elif u or m:
            out.append("Winsorize")
        else:
            out.append("Keep")
    return out


def apply_outlier_policy(matrix, actions):
    """Drop Exclude rows; clip Winsorize rows to column 1st/99th pcts."""
    m = matrix.copy()
    lo, hi = np.percentile(m.X, WINSOR_PCTS, axis=0)
    for i, act in enumerate(actions):
        if act == "Winsorize":
            m.X[i] = np.clip(m.X[i], lo, hi)
    keep = [i for i, act in enumerate(actions) if act != "Exclude"]
    m.X = m.X[keep]
    m.mask = m.mask[keep]
    m.lithology = [m.lithology[i] for i in keep]
    m.sample_keys = [m.sample_keys[i] for i in keep]
    if m.y is not None:
        m.y = m.y[keep]
    return m


# --- robust scaling ----------------------------------------------------

@dataclass
class ScalerParams:
    names: list
    median: np.ndarray
    iqr: np.ndarray  # 1.0 substituted for constant columns
    constant: np.ndarray  # bool flags

    def transform(self, X):
        return (np.asarray(X, dtype=float) - self.median) / self.iqr

    def inverse(self, Xs):
        return np.asarray(Xs, dtype=float) * self.iqr + self.median

    def to_json(self):
        return json.dumps({"names": self.names,
                           "median": self.median.tolist(),
                           "iqr": self.iqr.tolist(),
                           "constant": self.constant.tolist()},
                          sort_keys=True)


def fit_scaler(matrix):
    """Median/IQR per column (linear-interpolation quartiles)."""
    med = np.median(matrix.X, axis=0)
    q1, q3 = np.percentile(matrix.X, [25, 75], axis=0)
    iqr = q3 - q1
    constant = iqr == 0.0
    iqr = np.where(constant, 1.0, iqr)
    return ScalerParams(names=list(matrix.names), median=med, iqr=iqr,
                        constant=constant)


def robust_scale(matrix):
    params = fit_scaler(matrix)
    m = matrix.copy()
    m.X = params.transform(m.X)
    return m, params


# --- consensus feature selection ---------------------------------------

MI_BINS = 16
TOP_K = 50
MIN_VOTES = 3


def _equal_freq_bins(x, bins=MI_BINS):
    edges = np.percentile(x, np.linspace(0, 100, bins + 1))
    edges = np.unique(edges)
    if len(edges) < 2:
        return np.zeros(len(x), dtype=int)
    return np.clip(np.searchsorted(edges, x, side="right") - 1, 0,
                   len(edges) - 2)


def _mutual_information(x, y_binned, bins=MI_BINS):
    xb = _equal_freq_bins(x, bins)
    joint = np.zeros((xb.max() + 1, y_binned.max() + 1))
    np.add.at(joint, (xb, y_binned), 1.0)
    joint /= joint.sum()
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / (px @ py)[nz])))


@dataclass
class SelectionResult:
    selected: list  # ordered by mean rank, <= TOP_K names
    votes: dict  # name -> 0..4
    rankings: dict  # method -> name list, best first

    def to_json(self):
        return json.dumps({"selected": self.selected, "votes": self.votes,
                           "rankings": self.rankings}, sort_keys=True)


def _rank_from_scores(names, scores):
    """Best-first name ordering; NaN scores sink, ties keep column order."""
    scores = np.where(np.isfinite(scores), scores, -np.inf)
    order = np.argsort(-scores, kind="stable")
    return [names[j] for j in order]


def select_features(matrix, k=TOP_K, seed=42):
    """Four-method consensus selection against the uptake target.

    Methods: |Pearson| correlation, equal-frequency-binned mutual
    information, random-forest importance (100 trees, depth 10), and the
    univariate regression F-statistic. A feature earns one vote per
    method ranking it top-k; selection requires >= 3 votes.
    """
    X, y, names = matrix.X, matrix.y, matrix.names
    n = len(X)

    sd = X.std(axis=0)
    sdy = y.std()
    with np.errstate(invalid="ignore", divide="ignore"):
        r = ((X - X.mean(axis=0)) * (y - y.mean())[:, None]).mean(axis=0) \
            / (sd * sdy)
    abs_r = np.abs(r)
    with np.errstate(invalid="ignore", divide="ignore"):
        f_stat = abs_r**2 * (n - 2) / (1.0 - abs_r**2)

    yb = _equal_freq_bins(y)
    mi = np.array([_mutual_information(X[:, j], yb) for j in range(X.shape[1])])

    forest = fit_forest(X, y, n_estimators=100, max_depth=10,
                        seed=derive_seed(seed, "selection_forest"))

    rankings = {
        "pearson": _rank_from_scores(names, abs_r),
        "mutual_information": _rank_from_scores(names, mi),
        "forest_importance": _rank_from_scores(names, forest.importances),
        "f_statistic": _rank_from_scores(names, f_stat),
    }

    votes = {n_: 0 for n_ in names}
    rank_of = {n_: [] for n_ in names}
    for method, ranked in rankings.items():
        for pos, name in enumerate(ranked):
            rank_of[name].append(pos + 1)
            if pos < k:
                votes[name] += 1
    mean_rank = {n_: float(np.mean(rank_of[n_])) for n_ in names}
    selected = sorted((n_ for n_ in names if votes[n_] >= MIN_VOTES),
                      key=lambda n_: (mean_rank[n_], n_))[:k]
    return SelectionResult(selected=selected, votes=votes, rankings=rankings)
