"""Seeded synthetic sorption populations with recorded ground truth.

Generates isotherm and property CSVs in the ingestion schema plus a
truth.json holding every sample's generating parameters. The truth file
exists for tests and audits only — nothing downstream reads it.

Per-sample parameters derive from material properties: uptake capacity
links log-linearly to surface area (clays), TOC (shales), or fixed
carbon (coals), and the affinity constant follows an Arrhenius-type
temperature law with a drawn sorption enthalpy. A heterogeneity dial
scales all per-sample dispersion, down to an exactly homogeneous
population at zero.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .data_core import IsothermRecord, SamplePropertySet
from .fit_engine import derive_seed
from .isotherm_models import R_GAS, eval_form

T_REF = 298.15  # K; affinity constants are specified at this temperature

# Per-lithology uptake ceiling, mmol/g.
QMAX_TABLE = {"Clay": 1.2, "Shale": 1.0, "Coal": 0.88}

# Property ranges the links are anchored to (log-uniform draws).
SURFACE_AREA_RANGE = (2.96, 273.1)  # m2/g
TOC_RANGE = (0.5, 20.0)  # wt%
FIXED_CARBON_RANGE = (30.0, 90.0)  # wt%

DELTA_H_RANGE = (-30e3, -5e3)  # J/mol

# Which drawn property drives q_max, per lithology.
_LINK_PROPERTY = {
    "Clay": ("surface_area", SURFACE_AREA_RANGE),
    "Shale": ("toc", TOC_RANGE),
    "Coal": ("fixed_carbon", FIXED_CARBON_RANGE),
}


@dataclass
class PopulationSpec:
    n_samples: dict = field(
        default_factory=lambda: {"Clay": 10, "Shale": 10, "Coal": 10}
    )
    truth_form: str = "sips"  # "sips" | "langmuir"
    noise_sigma: float = 0.01  # mmol/g
    temperatures: tuple = (298.15, 323.15, 348.15)  # K
    pressure_grid: tuple = tuple(float(p) for p in
                                 (0.5, 1, 2, 5, 10, 20, 35, 50, 70, 90, 110,
                                  130, 150, 170, 190))
    heterogeneity: float = 1.0  # 0 = identical parameters within a lithology
    missing_rate: float = 0.05  # fraction of optional property cells blanked
    seed: int = 42

    @classmethod
    def from_dict(cls, d):
        spec = cls(**{k: v for k, v in d.items()})
        if spec.truth_form not in ("sips", "langmuir"):
            raise ValueError(f"truth_form must be sips or langmuir, "
                             f"got {spec.truth_form!r}")
        return spec


@dataclass
class SampleTruth:
    sample_key: str
    lithology: str
    form: str
    q_max: float
    k_ref: float  # affinity at T_REF
    n_s: float  # 1.0 when the truth form is Langmuir
    delta_h: float  # J/mol

    def k_at(self, temperature):
        """Affinity at temperature via K(T) = K0 exp(-dH / RT)."""
        return self.k_ref * np.exp(
            -self.delta_h / R_GAS * (1.0 / temperature - 1.0 / T_REF)
        )

    def params_at(self, temperature):
        if self.form == "langmuir":
            return np.array([self.q_max, self.k_at(temperature)])
        return np.array([self.q_max, self.k_at(temperature), self.n_s])


def _draw_sample(spec, lithology, rng):
    prop_name, (lo, hi) = _LINK_PROPERTY[lithology]
    x = np.exp(rng.uniform(np.log(lo), np.log(hi)))
    u = (np.log(x) - np.log(lo)) / (np.log(hi) - np.log(lo))  # in [0, 1]

    h = spec.heterogeneity
    cap = QMAX_TABLE[lithology]
    # Capacity rides the linked property; dispersion shrinks toward the
    # lithology midpoint as the heterogeneity dial goes to zero.
    q_max = cap * (0.35 + 0.55 * (0.5 + h * (u - 0.5)))
    q_max = float(np.clip(q_max, 0.05 * cap, cap))

    k_ref = float(0.05 * np.exp(h * 0.6 * rng.standard_normal()))
    n_s = float(np.clip(1.3 + h * 0.4 * rng.standard_normal(), 0.6, 2.5))
    delta_h = float(
        -17.5e3 + h * rng.uniform(-12.5e3, 12.5e3)
    )
    delta_h = float(np.clip(delta_h, *DELTA_H_RANGE))

    props = {prop_name: float(x)}
    # Secondary properties, loosely correlated with the primary one.
    if lithology == "Clay":
        props["pore_volume"] = float(0.001 * x * np.exp(0.2 * rng.standard_normal()))
        props["micropore_volume"] = float(props["pore_volume"]
                                          * rng.uniform(0.2, 0.6))
        props["avg_pore_diameter"] = float(np.exp(rng.uniform(np.log(0.4),
                                                              np.log(8.0))))
    elif lithology == "Shale":
        props["surface_area"] = float(np.exp(rng.uniform(np.log(1.0),
                                                         np.log(60.0))))
        props["pore_volume"] = float(0.002 * props["surface_area"]
                                     * np.exp(0.2 * rng.standard_normal()))
        props["micropore_volume"] = float(props["pore_volume"]
                                          * rng.uniform(0.2, 0.6))
        props["avg_pore_diameter"] = float(np.exp(rng.uniform(np.log(0.4),
                                                              np.log(8.0))))
        props["vitrinite_reflectance"] = float(rng.uniform(0.5, 3.0))
        props["pyrite"] = float(rng.uniform(0.0, 5.0))
    else:  # Coal
        props["volatile_matter"] = float(np.clip(100.0 - x - rng.uniform(5, 25),
                                                 1.0, 60.0))
        props["ash"] = float(rng.uniform(2.0, 20.0))
        props["moisture"] = float(rng.uniform(0.5, 10.0))
        props["vitrinite_reflectance"] = float(rng.uniform(0.3, 4.0))
        props["surface_area"] = float(np.exp(rng.uniform(np.log(1.0),
                                                         np.log(30.0))))
        props["pore_volume"] = float(0.002 * props["surface_area"]
                                     * np.exp(0.2 * rng.standard_normal()))
        props["micropore_volume"] = float(props["pore_volume"]
                                          * rng.uniform(0.2, 0.6))
        props["avg_pore_diameter"] = float(np.exp(rng.uniform(np.log(0.4),
                                                              np.log(8.0))))

    return q_max, k_ref, n_s, delta_h, props


def gen_isotherm(form_id, params, temperature, grid, noise_sigma, seed,
                 sample_key="s", lithology="Clay"):
    """One noisy isotherm from a generating curve; uptakes clipped at 0."""
    grid = np.asarray(grid, dtype=float)
    q = eval_form(form_id, np.asarray(params, dtype=float), grid, temperature)
    if noise_sigma > 0.0:
        rng = np.random.default_rng(seed)
        q = q + rng.normal(0.0, noise_sigma, size=q.shape)
    q = np.clip(q, 0.0, None)
    return [
        IsothermRecord(sample_key, lithology, float(p), float(temperature),
                       float(v))
        for p, v in zip(grid, q)
    ]


def gen_population(spec):
    """Generate (isotherm records, property sets, truth-by-key dict)."""
    records, prop_sets, truth = [], [], {}
    for lithology in ("Clay", "Shale", "Coal"):
        n = int(spec.n_samples.get(lithology, 0))
        for i in range(n):
            key = f"{lithology.lower()}_{i:04d}"
            rng = np.random.default_rng(derive_seed(spec.seed, "sample", key))
            q_max, k_ref, n_s, delta_h, props = _draw_sample(spec, lithology, rng)
            st = SampleTruth(key, lithology, spec.truth_form, q_max, k_ref,
                             1.0 if spec.truth_form == "langmuir" else n_s,
                             delta_h)
            truth[key] = st

            char_uptake = None
            for temperature in spec.temperatures:
                recs = gen_isotherm(
                    st.form, st.params_at(temperature), temperature,
                    spec.pressure_grid, spec.noise_sigma,
                    derive_seed(spec.seed, "noise", key, temperature),
                    sample_key=key, lithology=lithology,
                )
                records.extend(recs)
                if abs(temperature - T_REF) < 1e-9 or char_uptake is None:
                    char_uptake = recs[-1].uptake

            mineral = {}
            if "pyrite" in props:
                mineral["pyrite"] = props.pop("pyrite")
            scalar = dict(props)
            # Blank a few optional cells so imputation has real work.
            for col in list(scalar):
                if rng.random() < spec.missing_rate:
                    scalar.pop(col)
            prop_sets.append(
                SamplePropertySet(sample_key=key, lithology=lithology,
                                  characteristic_uptake=char_uptake,
                                  mineral_fractions=mineral, **scalar)
            )
    return records, prop_sets, truth


def write_corpus(out_dir, records, prop_sets, truth):
    """Write isotherms.csv, properties.csv, and truth.json into out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    iso_path = os.path.join(out_dir, "isotherms.csv")
    with open(iso_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_key", "lithology", "pressure_bar",
                    "temperature_K", "uptake_mmol_g"])
        for r in records:
            w.writerow([r.sample_key, r.lithology, repr(r.pressure),
                        repr(r.temperature), repr(r.uptake)])

    prop_cols = ["surface_area", "pore_volume", "micropore_volume",
                 "avg_pore_diameter", "toc", "fixed_carbon",
                 "volatile_matter", "vitrinite_reflectance", "ash",
                 "moisture", "characteristic_uptake"]
    minerals = sorted({m for ps in prop_sets for m in ps.mineral_fractions})
    prop_path = os.path.join(out_dir, "properties.csv")
    with open(prop_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_key", "lithology"] + prop_cols + minerals)
        for ps in prop_sets:
            row = [ps.sample_key, ps.lithology]
            for c in prop_cols:
                v = getattr(ps, c)
                row.append("" if v is None else repr(v))
            for m in minerals:
                v = ps.mineral_fractions.get(m)
                row.append("" if v is None else repr(v))
            w.writerow(row)

    truth_path = os.path.join(out_dir, "truth.json")
    with open(truth_path, "w") as fh:
        json.dump(
            {
                key: {
                    "lithology": st.lithology,
                    "form": st.form,
                    "q_max": st.q_max,
                    "k_ref": st.k_ref,
                    "n_s": st.n_s,
                    "delta_h": st.delta_h,
                }
                for key, st in sorted(truth.items())
            },
            fh, indent=2, sort_keys=True,
        )
    return iso_path, prop_path, truth_path
