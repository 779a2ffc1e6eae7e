"""Command-line pipeline: synth -> ingest -> fit -> thermo -> featurize ->
train -> predict -> evaluate, plus a one-shot deterministic `reproduce`.

Exit codes: 0 success, 1 validation failure, 2 I/O error, 3 internal
error; failures also emit a machine-readable JSON object on stderr.
Every artifact directory receives the effective configuration that
produced it.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict

import numpy as np
import torch

from . import __version__
from . import data_core, evalx, features, fit_engine, pinn, synth, thermo, uq
from .errors import SorbfitError, ValidationError

K_PARAM_FORMS = {"langmuir": 1, "sips": 1, "toth": 1, "hill": 1}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _fail(1, f"argument error: {message}")


def _fail(code, message):
    json.dump({"error": message, "exit_code": code}, sys.stderr)
    sys.stderr.write("\n")
    sys.exit(code)


def _echo_config(out_dir, args):
    os.makedirs(out_dir, exist_ok=True)
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg["version"] = __version__
    with open(os.path.join(out_dir, "effective_config.json"), "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True, default=str)


def _resolve_seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get("SORBFIT_SEED")
    return int(env) if env else 42


# --- synth -------------------------------------------------------------

def cmd_synth(args):
    seed = _resolve_seed(args)
    if args.spec == "default":
        spec = synth.PopulationSpec(seed=seed)
    else:
        with open(args.spec) as fh:
            raw = json.load(fh)
        raw.setdefault("seed", seed)
        try:
            spec = synth.PopulationSpec.from_dict(raw)
        except TypeError as e:
            raise ValidationError(f"unknown or invalid spec key: {e}") from e
    records, props, truth = synth.gen_population(spec)
    synth.write_corpus(args.out, records, props, truth)
    _echo_config(args.out, args)
    return 0


# --- ingest ------------------------------------------------------------

def cmd_ingest(args):
    seed = _resolve_seed(args)
    os.makedirs(args.out, exist_ok=True)
    iso = data_core.ingest_isotherms(args.isotherms)
    iso.write_rejects(os.path.join(args.out, "rejects_isotherms.csv"))
    props = data_core.ingest_properties(args.properties) if args.properties \
        else data_core.IngestResult([], [])
    if args.properties:
        props.write_rejects(os.path.join(args.out, "rejects_properties.csv"))
    records = data_core.match_samples(props.records, iso.records)
    quality = data_core.assess_quality(records)
    with open(os.path.join(args.out, "quality.json"), "w") as fh:
        fh.write(quality.to_json())
    samples = sorted({(r.sample_key, r.lithology) for r in iso.records})
    split = data_core.stratified_split(samples, seed=seed)
    with open(os.path.join(args.out, "split.json"), "w") as fh:
        fh.write(split.to_json())
    with open(os.path.join(args.out, "isotherms.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(data_core.ISOTHERM_COLUMNS)
        for r in iso.records:
            w.writerow([r.sample_key, r.lithology, repr(r.pressure),
                        repr(r.temperature), repr(r.uptake)])
    _echo_config(args.out, args)
    return 0


# --- fit ---------------------------------------------------------------

def _load_isotherms(in_dir):
    path = os.path.join(in_dir, "isotherms.csv")
    if not os.path.exists(path):
        path = in_dir  # allow a direct CSV path
    return data_core.ingest_isotherms(path).records


def _parse_forms(spec):
    from .isotherm_models import ALL_FORMS, CLASSICAL_FORMS, get_form
    if spec == "all":
        return ALL_FORMS
    if spec == "classical":
        return CLASSICAL_FORMS
    forms = tuple(s.strip() for s in spec.split(","))
    for f in forms:
        get_form(f)  # raises on unknown ids
    return forms


def fit_corpus(records, forms, seed=42, boot=0, cv=0, de_config=None):
    """Per-(sample, temperature) fits of every requested form, ranked."""
    groups = {}
    for r in records:
        groups.setdefault((r.sample_key, r.temperature), []).append(r)
    report = {}
    for (key, temp), recs in sorted(groups.items()):
        p = np.array([r.pressure for r in recs])
        q = np.array([r.uptake for r in recs])
        ranked = fit_engine.fit_all(
            p, q, temp, forms=forms,
            seed=fit_engine.derive_seed(seed, key, temp),
            de_config=de_config)
        entry = {"lithology": recs[0].lithology, "n_points": len(recs),
                 "fits": [f.to_dict() for f in ranked]}
        if ranked and boot:
            best = ranked[0]
            ci = fit_engine.bootstrap_ci(
                best.form_id, p, q, temp, n_boot=boot, seed=seed,
                sample_key=key, de_config=de_config)
            entry["best_ci"] = {"form": best.form_id,
                                "lo": ci.lower.tolist(),
                                "hi": ci.upper.tolist(),
                                "flagged": ci.flagged}
        if ranked and cv:
            try:
                s = fit_engine.kfold_cv(ranked[0].form_id, p, q, temp, k=cv,
                                        seed=seed, de_config=de_config)
                entry["best_cv"] = asdict(s)
            except SorbfitError:
                pass
        report[f"{key}@{temp:g}"] = entry
    return report


def cmd_fit(args):
    seed = _resolve_seed(args)
    records = _load_isotherms(getattr(args, "in"))
    forms = _parse_forms(args.forms)
    report = fit_corpus(records, forms, seed=seed, boot=args.boot, cv=args.cv)
    out_dir = os.path.dirname(args.out) or "."
    os.makedirs(out_dir, exist_ok=True)
    with open(args.out, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    _echo_config(out_dir, args)
    return 0


# --- thermo ------------------------------------------------------------

def thermo_from_report(report, loadings=(0.1, 0.2, 0.3)):
    """Van't Hoff, Gibbs, and isosteric heats per multi-temperature sample."""
    by_sample = {}
    for cell_key, entry in report.items():
        key, temp = cell_key.rsplit("@", 1)
        by_sample.setdefault(key, []).append((float(temp), entry))
    out = {}
    for key, cells in sorted(by_sample.items()):
        if len(cells) < 2:
            continue
        temps, ks, fits = [], [], []
        for temp, entry in sorted(cells):
            best = next((f for f in entry["fits"]
                         if f["form"] in K_PARAM_FORMS), None)
            if best is None:
                continue
            temps.append(temp)
            ks.append(best["params"][K_PARAM_FORMS[best["form"]]])
            fits.append((temp, best["form"], np.array(best["params"])))
        if len(temps) < 2:
            continue
        vh = thermo.vant_hoff(temps, ks)
        entry = {
            "delta_h": vh.delta_h, "delta_s": vh.delta_s,
            "r_squared": vh.r_squared, "two_point": vh.two_point,
            "gibbs": {},
        }
        for temp in temps:
            dg = thermo.gibbs_energy(vh.delta_h, vh.delta_s, temp)
            entry["gibbs"][f"{temp:g}"] = {
                "delta_g": dg, "class": thermo.classify_gibbs(dg)}
        try:
            qst = thermo.isosteric_heat(fits, loadings)
            entry["isosteric"] = [
                {"loading": h.loading, "q_st": h.q_st,
                 "n_temperatures": h.n_temperatures} for h in qst]
        except SorbfitError:
            entry["isosteric"] = []
        out[key] = entry
    return out


def cmd_thermo(args):
    with open(args.fit) as fh:
        report = json.load(fh)
    out = thermo_from_report(report)
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
    return 0


# --- featurize ---------------------------------------------------------

def featurize_corpus(in_dir, seed=42, select_k=50, outliers=True):
    """Full feature pipeline with train-only statistic fitting.

    Returns a dict with scaled matrices, scaler, selection, split, and
    the raw integrated records, keyed by partition.
    """
    iso = data_core.ingest_isotherms(os.path.join(in_dir, "isotherms.csv"))
    prop_path = os.path.join(in_dir, "properties.csv")
    props = data_core.ingest_properties(prop_path).records \
        if os.path.exists(prop_path) else []
    records = [r for r in data_core.match_samples(props, iso.records)
               if r.pressure is not None]
    split_path = os.path.join(in_dir, "split.json")
    if os.path.exists(split_path):
        with open(split_path) as fh:
            blob = json.load(fh)
        split = data_core.SplitAssignment(blob["partition"], blob["seed"])
    else:
        samples = sorted({(r.sample_key, r.lithology) for r in records})
        split = data_core.stratified_split(samples, seed=seed)

    # Target-derived features (dG_approx needs the measured uptake) stay
    # out of the model input pipeline: they cannot exist at predict time.
    catalog = [c for c in features.CATALOG if "uptake" not in c.inputs]
    matrix = features.build_matrix(records, catalog=catalog)
    matrix = features.impute(matrix)

    part = np.array([split.partition[k] for k in matrix.sample_keys])
    train_rows = np.nonzero(part == "Train")[0]

    if outliers:
        train_matrix = _subset(matrix, train_rows)
        actions = features.detect_outliers(train_matrix, seed=seed)
        # Outlier policy applies to training rows only; hold-out rows are
        # never silently altered or dropped.
        keep_train = [train_rows[i] for i, a in enumerate(actions)
                      if a != "Exclude"]
        wins = {train_rows[i]: a for i, a in enumerate(actions)}
        lo, hi = np.percentile(train_matrix.X, features.WINSOR_PCTS, axis=0)
        for i, a in wins.items():
            if a == "Winsorize":
                matrix.X[i] = np.clip(matrix.X[i], lo, hi)
        keep = sorted(set(range(len(part))) - (set(train_rows) - set(keep_train)))
        matrix = _subset(matrix, keep)
        records = [records[i] for i in keep]
        part = part[keep]
        train_rows = np.nonzero(part == "Train")[0]

    scaler = features.fit_scaler(_subset(matrix, train_rows))
    scaled = matrix.copy()
    scaled.X = scaler.transform(scaled.X)

    selection = features.select_features(_scaled_subset(scaled, train_rows),
                                         k=select_k, seed=seed)
    cols = [scaled.names.index(n) for n in selection.selected]
    scaled.X = scaled.X[:, cols]
    scaled.mask = scaled.mask[:, cols]
    scaled.names = [scaled.names[j] for j in cols]
    sub_scaler = features.ScalerParams(
        names=list(scaled.names),
        median=scaler.median[cols], iqr=scaler.iqr[cols],
        constant=scaler.constant[cols])

    return {"matrix": scaled, "records": records, "scaler": sub_scaler,
            "selection": selection, "split": split, "partition": part}


def _subset(matrix, rows):
    m = matrix.copy()
    rows = list(rows)
    m.X = m.X[rows]
    m.mask = m.mask[rows]
    m.lithology = [m.lithology[i] for i in rows]
    m.sample_keys = [m.sample_keys[i] for i in rows]
    if m.y is not None:
        m.y = m.y[rows]
    return m


_scaled_subset = _subset


def save_features(out_dir, bundle):
    os.makedirs(out_dir, exist_ok=True)
    m = bundle["matrix"]
    recs = bundle["records"]
    np.savez(
        os.path.join(out_dir, "features.npz"),
        X=m.X, y=m.y, names=np.array(m.names),
        pressure=np.array([r.pressure for r in recs]),
        temperature=np.array([r.temperature for r in recs]),
        lithology=np.array(m.lithology), sample_keys=np.array(m.sample_keys),
        partition=bundle["partition"],
        scaler_median=bundle["scaler"].median,
        scaler_iqr=bundle["scaler"].iqr,
        dxdp=_dxdp_matrix(recs, m, bundle["scaler"]),
    )
    with open(os.path.join(out_dir, "pipeline.json"), "w") as fh:
        json.dump({"selection": json.loads(bundle["selection"].to_json()),
                   "scaler": json.loads(bundle["scaler"].to_json()),
                   "split_seed": bundle["split"].seed},
                  fh, indent=2, sort_keys=True)


def _dxdp_matrix(records, matrix, scaler):
    n, d = matrix.X.shape
    out = np.zeros((n, d))
    for j, name in enumerate(matrix.names):
        entry = features.CATALOG_BY_NAME[name]
        if not entry.pressure_dependent:
            continue
        for i, rec in enumerate(records):
            out[i, j] = entry.dfdp(rec) / scaler.iqr[j]
    return out


def cmd_featurize(args):
    seed = _resolve_seed(args)
    bundle = featurize_corpus(getattr(args, "in"), seed=seed,
                              select_k=args.select)
    save_features(args.out, bundle)
    _echo_config(args.out, args)
    return 0


# --- train -------------------------------------------------------------

def _training_data(blob, rows):
    return pinn.TrainingData(
        X=blob["X"][rows], p=blob["pressure"][rows],
        T=blob["temperature"][rows], y=blob["y"][rows],
        qmax=np.array([pinn.QMAX_TABLE[l] for l in blob["lithology"][rows]]),
        dxdp=blob["dxdp"][rows],
    )


def load_feature_bundle(feat_dir):
    blob = dict(np.load(os.path.join(feat_dir, "features.npz"),
                        allow_pickle=False))
    blob["lithology"] = np.array([str(s) for s in blob["lithology"]])
    blob["sample_keys"] = np.array([str(s) for s in blob["sample_keys"]])
    blob["partition"] = np.array([str(s) for s in blob["partition"]])
    return blob


def _schedule_from_name(name):
    if name == "default":
        return pinn.TrainSchedule()
    if name == "smoke":
        return pinn.TrainSchedule(phase1_epochs=3, phase2_epochs=5,
                                  phase3_epochs=3, patience=50)
    with open(name) as fh:
        raw = json.load(fh)
    try:
        return pinn.TrainSchedule(**raw)
    except TypeError as e:
        raise ValidationError(f"unknown schedule key: {e}") from e


def train_models(feat_dir, out_dir, seed=42, schedule="default", members=1):
    torch.set_num_threads(1)
    blob = load_feature_bundle(feat_dir)
    part = blob["partition"]
    rows = {p: np.nonzero(part == p)[0] for p in ("Train", "Validation",
                                                  "Test")}
    td = _training_data(blob, rows["Train"])
    vd = _training_data(blob, rows["Validation"])
    base_schedule = _schedule_from_name(schedule)

    input_dim = td.X.shape[1]
    manifest = {"members": [], "input_dim": input_dim, "tau": 1.0,
                "seed": seed}
    os.makedirs(out_dir, exist_ok=True)
    specs = uq.build_ensemble_specs(input_dim)[:members]
    val_preds = []
    for i, (spec, lr) in enumerate(specs):
        sched = uq.member_schedule(lr, base_schedule)
        net = pinn.build_network(spec)
        net, history = pinn.train(net, td, vd, sched,
                                  seed=fit_engine.derive_seed(seed, "train", i))
        ckpt = os.path.join(out_dir, f"member_{i}.pt")
        pinn.save_checkpoint(net, ckpt, extra={"member": i})
        with open(os.path.join(out_dir, f"history_{i}.csv"), "w",
                  newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["phase", "epoch", "lr", "val_loss", "data",
                        "physics", "bounds", "monotonicity",
                        "l_data", "l_physics", "l_bounds", "l_mono"])
            for h in history:
                w.writerow([h["phase"], h["epoch"], h["lr"], h["val_loss"]]
                           + h["train_terms"] + h["lambdas"])
        manifest["members"].append({
            "checkpoint": os.path.basename(ckpt),
            "seed": spec.seed, "width_mult": spec.width_mult,
            "depth": len(spec.backbone_widths), "dropout": spec.dropout,
            "lr": lr,
        })
        val_preds.append(pinn.predict(net, vd))

    if len(val_preds) >= 2:
        agg = uq.aggregate(np.array(val_preds))
        try:
            cal = uq.calibrate_temperature(agg.mean, agg.sigma_raw, vd.y)
            manifest["tau"] = cal.tau
            manifest["calibration"] = json.loads(cal.to_json())
        except SorbfitError as e:
            manifest["calibration_error"] = str(e)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def cmd_train(args):
    seed = _resolve_seed(args)
    train_models(args.features, args.out, seed=seed, schedule=args.schedule,
                 members=args.members)
    _echo_config(args.out, args)
    return 0


# --- predict -----------------------------------------------------------

def predict_ensemble(model_dir, feat_dir, partition="Test", level=0.95):
    torch.set_num_threads(1)
    with open(os.path.join(model_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    blob = load_feature_bundle(feat_dir)
    rows = np.nonzero(blob["partition"] == partition)[0] \
        if partition != "All" else np.arange(len(blob["y"]))
    data = _training_data(blob, rows)
    outs = []
    for m in manifest["members"]:
        net, _ = pinn.load_checkpoint(os.path.join(model_dir,
                                                   m["checkpoint"]))
        outs.append(pinn.predict(net, data))
    if len(outs) >= 2:
        pred = uq.aggregate(np.array(outs), tau=manifest.get("tau", 1.0))
        mean, sigma = pred.mean, pred.sigma_cal
        lo, hi = pred.intervals(level)
    else:
        mean = outs[0]
        sigma = np.zeros_like(mean)
        lo = hi = mean
    return {
        "sample_key": [blob["sample_keys"][i] for i in rows],
        "lithology": [blob["lithology"][i] for i in rows],
        "pressure": blob["pressure"][rows],
        "temperature": blob["temperature"][rows],
        "uptake": blob["y"][rows],
        "mean": mean, "sigma_cal": sigma, "lo": lo, "hi": hi,
    }


def write_preds(path, preds):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    cols = ["sample_key", "lithology", "pressure", "temperature", "uptake",
            "mean", "sigma_cal", "lo", "hi"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for i in range(len(preds["mean"])):
            w.writerow([preds[c][i] if c in ("sample_key", "lithology")
                        else repr(float(preds[c][i])) for c in cols])


def cmd_predict(args):
    preds = predict_ensemble(args.ensemble, getattr(args, "in"),
                             partition=args.partition, level=args.level)
    write_preds(args.out, preds)
    return 0


def read_preds(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = {k: [] for k in rows[0]}
    for row in rows:
        for k, v in row.items():
            out[k].append(v if k in ("sample_key", "lithology")
                          else float(v))
    for k in out:
        if k not in ("sample_key", "lithology"):
            out[k] = np.array(out[k])
    return out


def cmd_evaluate(args):
    preds = read_preds(args.preds)
    y = preds["uptake"]
    groups = list(zip(preds["sample_key"], preds["temperature"]))
    report = evalx.full_report(
        y, preds["mean"], pressures=preds["pressure"],
        lithologies=preds["lithology"], groups=groups,
        sigma=preds["sigma_cal"] if np.any(preds["sigma_cal"] > 0) else None,
    )
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    return 0


# --- reproduce ---------------------------------------------------------

def run_reproduce(out_dir, seed=42):
    """Desk-scale deterministic pipeline; summary JSON is byte-stable."""
    torch.set_num_threads(1)
    os.makedirs(out_dir, exist_ok=True)
    spec = synth.PopulationSpec(
        n_samples={"Clay": 7, "Shale": 7, "Coal": 7},
        pressure_grid=(1.0, 5.0, 20.0, 60.0, 120.0, 180.0),
        temperatures=(298.15, 323.15), seed=seed, missing_rate=0.0)
    records, props, truth = synth.gen_population(spec)
    data_dir = os.path.join(out_dir, "data")
    synth.write_corpus(data_dir, records, props, truth)

    samples = sorted({(r.sample_key, r.lithology) for r in records})
    split = data_core.stratified_split(samples, seed=seed)
    with open(os.path.join(data_dir, "split.json"), "w") as fh:
        fh.write(split.to_json())

    de = fit_engine.DEConfig(max_gen=60)
    fit_report = fit_corpus(records, ("langmuir", "sips"), seed=seed,
                            de_config=de)
    th = thermo_from_report(fit_report)

    bundle = featurize_corpus(data_dir, seed=seed, select_k=20,
                              outliers=False)
    feat_dir = os.path.join(out_dir, "features")
    save_features(feat_dir, bundle)
    model_dir = os.path.join(out_dir, "model")
    train_models(feat_dir, model_dir, seed=seed, schedule="smoke", members=2)
    preds = predict_ensemble(model_dir, feat_dir, partition="Test")
    report = evalx.full_report(
        preds["uptake"], preds["mean"], pressures=preds["pressure"],
        lithologies=preds["lithology"],
        groups=list(zip(preds["sample_key"], preds["temperature"])),
        sigma=preds["sigma_cal"] if np.any(preds["sigma_cal"] > 0) else None)

    best_forms = {k: v["fits"][0]["form"] for k, v in fit_report.items()
                  if v["fits"]}
    summary = {
        "seed": seed,
        "version": __version__,
        "n_records": len(records),
        "fit": {"n_cells": len(fit_report),
                "sips_wins": sum(1 for f in best_forms.values()
                                 if f == "sips")},
        "thermo": {k: {"delta_h": round(v["delta_h"], 6)}
                   for k, v in sorted(th.items())[:3]},
        "test_r2": round(report["point"]["r2"], 10),
        "test_rmse": round(report["point"]["rmse"], 10),
        "physics": {k: (round(v, 10) if isinstance(v, float) else v)
                    for k, v in report["physics"].items()},
        "checks": {
            "fit_cells_nonempty": len(fit_report) > 0,
            "thermo_nonempty": len(th) > 0,
            "predictions_nonnegative":
                bool(np.all(preds["mean"] >= 0.0)),
            "finite_metrics": bool(np.isfinite(report["point"]["rmse"])),
        },
    }
    summary["pass"] = all(summary["checks"].values())
    path = os.path.join(out_dir, "summary.json")
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


def cmd_reproduce(args):
    summary = run_reproduce(args.out, seed=_resolve_seed(args))
    return 0 if summary["pass"] else 1


# --- entry point -------------------------------------------------------

def build_parser():
    p = _Parser(prog="sorbfit", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, **kw):
        sp = sub.add_parser(name, **kw)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=1)
        sp.set_defaults(func=fn)
        return sp

    sp = add("synth", cmd_synth, help="generate a synthetic corpus")
    sp.add_argument("--spec", default="default")
    sp.add_argument("--out", required=True)

    sp = add("ingest", cmd_ingest, help="ingest and split CSV data")
    sp.add_argument("--isotherms", required=True)
    sp.add_argument("--properties", default=None)
    sp.add_argument("--out", required=True)

    sp = add("fit", cmd_fit, help="fit functional forms per isotherm")
    sp.add_argument("--in", required=True)
    sp.add_argument("--forms", default="all")
    sp.add_argument("--boot", type=int, default=0)
    sp.add_argument("--cv", type=int, default=0)
    sp.add_argument("--out", default="fit_report.json")

    sp = add("thermo", cmd_thermo, help="thermodynamics from fit report")
    sp.add_argument("--fit", required=True)
    sp.add_argument("--out", default="thermo.json")

    sp = add("featurize", cmd_featurize, help="feature pipeline")
    sp.add_argument("--in", required=True)
    sp.add_argument("--select", type=int, default=50)
    sp.add_argument("--out", required=True)

    sp = add("train", cmd_train, help="train the constrained regressor")
    sp.add_argument("--features", required=True)
    sp.add_argument("--schedule", default="default")
    sp.add_argument("--members", type=int, default=1)
    sp.add_argument("--out", required=True)

    sp = add("predict", cmd_predict, help="ensemble prediction")
    sp.add_argument("--ensemble", required=True)
    sp.add_argument("--in", required=True)
    sp.add_argument("--partition", default="Test")
    sp.add_argument("--level", type=float, default=0.95)
    sp.add_argument("--out", required=True)

    sp = add("evaluate", cmd_evaluate, help="metric report from predictions")
    sp.add_argument("--preds", required=True)
    sp.add_argument("--out", default="metrics.json")

    sp = add("reproduce", cmd_reproduce,
             help="one-shot deterministic desk-scale pipeline")
    sp.add_argument("--out", required=True)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads:
        torch.set_num_threads(args.threads)
    try:
        return args.func(args)
    except ValidationError as e:
        _fail(1, str(e))
    except (OSError, FileNotFoundError) as e:
        _fail(2, str(e))
    except SorbfitError as e:
        _fail(1, f"{type(e).__name__}: {e}")
    except Exception as e:  # pragma: no cover - defensive
        _fail(3, f"{type(e).__name__}: {e}")


if __name__ == "__main__":
    sys.exit(main())
