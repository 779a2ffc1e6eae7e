"""Ingestion, sample matching, quality assessment, and splitting.

CSV in, typed records out. Isotherm schema:
``sample_key,lithology,pressure_bar,temperature_K,uptake_mmol_g``;
property CSV: ``sample_key,lithology,<property columns...>`` with empty
cells meaning missing. Rows violating invariants are routed to a reject
report rather than aborting the run — multi-source sorption data is
dirty by construction.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DuplicateSampleKey,
    EmptyFile,
    EmptyInput,
    InsufficientSamples,
    MissingColumn,
    ParseError,
)

LITHOLOGIES = ("Clay", "Shale", "Coal")

PRESSURE_RANGE = (0.0, 200.0)  # bar
TEMPERATURE_RANGE = (20.0, 400.0)  # K; cryogenic measurements allowed

EPS_MONO = 1e-6  # mmol/g slack before an uptake decrease counts as a violation

ISOTHERM_COLUMNS = (
    "sample_key",
    "lithology",
    "pressure_bar",
    "temperature_K",
    "uptake_mmol_g",
)

# Scalar property columns recognized in the property CSV; anything else
# is treated as a mineral weight fraction.
PROPERTY_COLUMNS = (
    "surface_area",
    "pore_volume",
    "micropore_volume",
    "avg_pore_diameter",
    "toc",
    "fixed_carbon",
    "volatile_matter",
    "vitrinite_reflectance",
    "ash",
    "moisture",
    "characteristic_uptake",
)

_WTPCT_COLUMNS = {"toc", "fixed_carbon", "volatile_matter", "ash", "moisture"}

_NON_ALNUM = re.compile(r"[^a-z0-9]+")


def normalize_key(raw):
    """Lowercase, trim, and collapse runs of non-alphanumerics to '_'."""
    return _NON_ALNUM.sub("_", raw.strip().lower()).strip("_")


def normalize_lithology(raw):
    tag = raw.strip().capitalize()
    if tag not in LITHOLOGIES:
        raise ValueError(f"unknown lithology {raw!r}")
    return tag


@dataclass(frozen=True)
class IsothermRecord:
    sample_key: str
    lithology: str
    pressure: float  # bar
    temperature: float  # K
    uptake: float  # mmol/g


@dataclass
class SamplePropertySet:
    sample_key: str
    lithology: str
    surface_area: float | None = None  # m2/g
    pore_volume: float | None = None  # cm3/g
    micropore_volume: float | None = None  # cm3/g
    avg_pore_diameter: float | None = None  # nm
    toc: float | None = None  # wt%
    fixed_carbon: float | None = None  # wt%
    volatile_matter: float | None = None  # wt%
    vitrinite_reflectance: float | None = None  # %
    ash: float | None = None  # wt%
    moisture: float | None = None  # wt%
    characteristic_uptake: float | None = None  # mmol/g
    mineral_fractions: dict = field(default_factory=dict)


@dataclass
class IntegratedRecord:
    sample_key: str
    lithology: str
    pressure: float | None  # None for property-only samples
    temperature: float | None
    uptake: float | None
    properties: SamplePropertySet | None


@dataclass
class RejectedRow:
    row_number: int
    raw: dict
    reason: str


@dataclass
class IngestResult:
    records: list
    rejects: list

    def write_rejects(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row_number", "reason", "raw"])
            for r in self.rejects:
                w.writerow([r.row_number, r.reason, json.dumps(r.raw)])


def _read_rows(path, required):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise EmptyFile(f"{path} has no header row")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise MissingColumn(f"{path} lacks columns: {', '.join(missing)}")
        rows = list(reader)
    if not rows:
        raise EmptyFile(f"{path} has a header but no data rows")
    return reader.fieldnames, rows


def ingest_isotherms(path):
    """Parse the isotherm CSV; invalid rows go to the reject report."""
    _, rows = _read_rows(path, ISOTHERM_COLUMNS)
    records, rejects = [], []
    for i, row in enumerate(rows, start=2):  # header is row 1
        if any(row.get(c) is None for c in ISOTHERM_COLUMNS):
            raise ParseError(f"row {i}: wrong field count", row=i)

        def reject(reason):
            rejects.append(RejectedRow(i, dict(row), reason))

        try:
            lith = normalize_lithology(row["lithology"])
        except ValueError:
            reject(f"unknown lithology {row['lithology']!r}")
            continue
        try:
            p = float(row["pressure_bar"])
            t = float(row["temperature_K"])
            q = float(row["uptake_mmol_g"])
        except ValueError:
            reject("non-numeric field")
            continue
        if not (PRESSURE_RANGE[0] <= p <= PRESSURE_RANGE[1]):
            reject(f"pressure {p} outside accepted range")
        elif not (TEMPERATURE_RANGE[0] <= t <= TEMPERATURE_RANGE[1]):
            reject(f"temperature {t} outside accepted range")
        elif not np.isfinite(q) or q < 0.0:
            reject("negative uptake" if q < 0 else "non-finite uptake")
        else:
            records.append(
                IsothermRecord(normalize_key(row["sample_key"]), lith, p, t, q)
            )
    return IngestResult(records, rejects)


def ingest_properties(path):
    """Parse the property CSV; empty cells mean missing."""
    fieldnames, rows = _read_rows(path, ("sample_key", "lithology"))
    scalar_cols = [c for c in fieldnames if c in PROPERTY_COLUMNS]
    mineral_cols = [
        c for c in fieldnames
        if c not in PROPERTY_COLUMNS and c not in ("sample_key", "lithology")
    ]
    out, rejects = [], []
    for i, row in enumerate(rows, start=2):

        def reject(reason):
            rejects.append(RejectedRow(i, dict(row), reason))

        try:
            lith = normalize_lithology(row["lithology"])
        except ValueError:
            reject(f"unknown lithology {row['lithology']!r}")
            continue
        values, bad = {}, None
        for c in scalar_cols + mineral_cols:
            cell = (row.get(c) or "").strip()
            if not cell:
                continue
            try:
                v = float(cell)
            except ValueError:
                bad = f"non-numeric {c}"
                break
            if v < 0.0:
                bad = f"negative {c}"
                break
            if c in _WTPCT_COLUMNS and v > 100.0:
                bad = f"{c} exceeds 100 wt%"
                break
            values[c] = v
        if bad:
            reject(bad)
            continue
        out.append(
            SamplePropertySet(
                sample_key=normalize_key(row["sample_key"]),
                lithology=lith,
                mineral_fractions={c: values[c] for c in mineral_cols if c in values},
                **{c: values.get(c) for c in scalar_cols},
            )
        )
    return IngestResult(out, rejects)


def match_samples(props, isos):
    """Join property sets onto isotherm records by normalized sample key.

    Unmatched isotherm records join with properties=None; property-only
    samples emit a single record with no pressure grid.
    """
    by_key = {}
    for ps in props:
        if ps.sample_key in by_key and by_key[ps.sample_key] != ps:
            raise DuplicateSampleKey(
                f"conflicting property rows for {ps.sample_key!r}"
            )
        by_key[ps.sample_key] = ps
    out = []
    matched = set()
    for rec in isos:
        ps = by_key.get(rec.sample_key)
        if ps is not None:
            matched.add(rec.sample_key)
        out.append(
            IntegratedRecord(rec.sample_key, rec.lithology, rec.pressure,
                             rec.temperature, rec.uptake, ps)
        )
    for key, ps in by_key.items():
        if key not in matched:
            out.append(IntegratedRecord(key, ps.lithology, None, None,
                                        ps.characteristic_uptake, ps))
    return out


@dataclass
class QualityReport:
    completeness: dict  # column -> fraction present
    monotonicity_violations: list  # (sample_key, temperature, pressure_index)
    iqr_outlier_flags: list  # per-record bool, isotherm records only
    excluded_count: int

    def to_json(self):
        return json.dumps(
            {
                "completeness": self.completeness,
                "monotonicity_violations": [
                    list(v) for v in self.monotonicity_violations
                ],
                "iqr_outlier_flags": self.iqr_outlier_flags,
                "excluded_count": self.excluded_count,
            },
            indent=2,
            sort_keys=True,
        )


def assess_quality(records, eps_mono=EPS_MONO):
    """Column completeness, isotherm monotonicity, and 1.5x IQR flags."""
    if not records:
        raise EmptyInput("quality assessment needs at least one record")
    iso = [r for r in records if r.pressure is not None]

    completeness = {}
    for col in PROPERTY_COLUMNS:
        present = sum(
            1 for r in records
            if r.properties is not None and getattr(r.properties, col) is not None
        )
        completeness[col] = present / len(records)

    violations = []
    groups = {}
    for idx, r in enumerate(iso):
        groups.setdefault((r.sample_key, r.temperature), []).append((r.pressure, idx))
    for (key, temp), pts in groups.items():
        pts.sort()
        uptakes = [iso[idx].uptake for _, idx in pts]
        for j in range(1, len(uptakes)):
            if uptakes[j] < uptakes[j - 1] - eps_mono:
                violations.append((key, temp, j))

    flags = [False] * len(iso)
    for lith in LITHOLOGIES:
        idxs = [i for i, r in enumerate(iso) if r.lithology == lith]
        if not idxs:
            continue
        for col in ("pressure", "temperature", "uptake"):
            vals = np.array([getattr(iso[i], col) for i in idxs])
            q1, q3 = np.percentile(vals, [25, 75])
            iqr = q3 - q1
            lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
            for i, v in zip(idxs, vals):
                if v < lo or v > hi:
                    flags[i] = True

    return QualityReport(
        completeness=completeness,
        monotonicity_violations=violations,
        iqr_outlier_flags=flags,
        excluded_count=int(sum(flags)),
    )


@dataclass
class SplitAssignment:
    partition: dict  # sample_key -> "Train" | "Validation" | "Test"
    seed: int

    def keys_in(self, part):
        return sorted(k for k, p in self.partition.items() if p == part)

    def to_json(self):
        return json.dumps({"seed": self.seed, "partition": self.partition},
                          indent=2, sort_keys=True)


def stratified_split(samples, ratios=(0.70, 0.15, 0.15), seed=42):
    """Sample-level stratified split, deterministic per seed.

    samples: iterable of (sample_key, lithology). Within each lithology
    train and validation sizes are floored; the remainder goes to test.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    by_lith = {}
    for key, lith in samples:
        by_lith.setdefault(lith, set()).add(key)
    partition = {}
    rng = np.random.default_rng(seed)
    for lith in sorted(by_lith):
        keys = sorted(by_lith[lith])
        if len(keys) < 3:
            raise InsufficientSamples(
                f"{lith}: {len(keys)} samples cannot fill three partitions"
            )
        order = rng.permutation(len(keys))
        n_train = int(np.floor(ratios[0] * len(keys)))
        n_val = int(np.floor(ratios[1] * len(keys)))
        for rank, j in enumerate(order):
            if rank < n_train:
                part = "Train"
            elif rank < n_train + n_val:
                part = "Validation"
            else:
                part = "Test"
            partition[keys[j]] = part
    return SplitAssignment(partition=partition, seed=seed)
