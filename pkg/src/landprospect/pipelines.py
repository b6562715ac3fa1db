"""The three prediction pipelines and scenario directory I/O.

Every pipeline learns on ``(t0, t1)`` and predicts ``t2`` from ``t1``.  Model
settings live in namespaced config tables (``features``, ``gis``, ``mlp``,
``glm``); the fully resolved settings are returned so they can be echoed into
run manifests.
"""

from __future__ import annotations

import json
import warnings
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import allocation, glm, markov, mce, mlp
from .config import section
from .errors import ConfigError, DataError
from .features import (NeighborhoodSpec, aspect_components, assemble_dataset, concat_datasets,
                       factor_stats)
from .raster import (CategoricalRaster, ContinuousRaster, Legend, ScenarioBundle, align_check,
                     load_grid, load_legend, save_grid, save_legend)
from .report import PredictionReport

FEATURE_DEFAULTS = {
    "radius": 3,
    "decay": "inverse",
    "metric": "chebyshev",
    "sigma": 1.5,
    "aspect": "sincos",  # sincos | linear | drop
    "factors": [],  # empty = all scenario factors
    "frontier_only": True,
}
GIS_DEFAULTS = {
    "bins": 10,
    "window": 5,
    "iterations": 0,  # 0 = one iteration per projected year
    "order_weights": [],  # empty = risk-averse ramp
    "order_strength": 1.0,
    "saaty_upper": [],  # empty = equal importance
    "family": "sigmoidal",
    "fuzzy": {},  # factor -> {shape, a, b[, c, d]} applied to every category
}
MLP_DEFAULTS = {
    "hidden": 8,
    "learning_rate": 0.5,
    "momentum": 0.9,
    "lr_decay": 1.0,
    "max_epochs": 1500,
    "batch_size": 0,  # 0 = full batch
    "patience": 150,
    "validation_fraction": 0.2,
    "init_scale": 1.0,
    "output": "logistic",
    "training_pairs": "first",  # first = (t0, t1) only; stacked = every earlier pair plus (t1, t2)
}
GLM_DEFAULTS = {
    "radii": [1, 2, 3],
    "epsilons": [0.001, 0.1],
    "max_iter": 100,
}


# ---------------------------------------------------------------- scenario I/O

def write_bundle(bundle: ScenarioBundle, out_dir) -> dict:
    """Maps, factors, legend and an index; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"legend": out / "legend.csv"}
    save_legend(bundle.legend, paths["legend"])
    maps, facs = [], []
    for snap in bundle.snapshots:
        name = f"map_{snap.date}.grid"
        save_grid(snap, out / name)
        maps.append(name)
        paths[name] = out / name
    for f in bundle.factors:
        name = f"factor_{f.name}.grid"
        save_grid(f, out / name)
        facs.append(name)
        paths[name] = out / name
    index = {"dates": bundle.dates, "maps": maps, "factors": facs, "seed": bundle.seed,
             "legend": "legend.csv"}
    paths["scenario"] = out / "scenario.json"
    paths["scenario"].write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    if bundle.truth:
        paths["truth"] = out / "truth.json"
        paths["truth"].write_text(json.dumps(bundle.truth, indent=2, sort_keys=True, default=float) + "\n")
    return paths


def read_bundle(path) -> ScenarioBundle:
    d = Path(path)
    idx_path = d / "scenario.json"
    if not idx_path.exists():
        raise DataError(f"{d}: not a scenario directory (no scenario.json)")
    index = json.loads(idx_path.read_text())
    legend = load_legend(d / index.get("legend", "legend.csv"))
    snaps = [load_grid(d / name, "categorical", legend) for name in index["maps"]]
    factors = [load_grid(d / name, "continuous") for name in index["factors"]]
    return ScenarioBundle(snaps, factors, int(index.get("seed", 0)))


# ---------------------------------------------------------------- shared setup

def resolve(cfg: dict) -> dict:
    """Resolved settings for every model namespace."""
    out = {
        "features": section(cfg, "features", FEATURE_DEFAULTS),
        "gis": section(cfg, "gis", GIS_DEFAULTS),
        "mlp": section(cfg, "mlp", MLP_DEFAULTS),
        "glm": section(cfg, "glm", GLM_DEFAULTS),
    }
    if out["features"]["aspect"] not in ("sincos", "linear", "drop"):
        raise ConfigError("features.aspect must be 'sincos', 'linear' or 'drop'")
    if out["mlp"]["training_pairs"] not in ("first", "stacked"):
        raise ConfigError("mlp.training_pairs must be 'first' or 'stacked'")
    return out


def neighborhood(feat: dict, radius: Optional[int] = None) -> NeighborhoodSpec:
    return NeighborhoodSpec(int(radius if radius is not None else feat["radius"]), feat["decay"],
                            feat["metric"], float(feat["sigma"]))


def prepare_factors(factors: Sequence[ContinuousRaster], feat: dict) -> list:
    """Select factors by name and encode aspect as configured."""
    wanted = list(feat["factors"]) or [f.name for f in factors]
    by_name = {f.name: f for f in factors}
    missing = [n for n in wanted if n not in by_name]
    if missing:
        raise ConfigError(f"factors {missing} not in scenario (have {sorted(by_name)})")
    out = []
    for name in wanted:
        f = by_name[name]
        if name == "aspect":
            if feat["aspect"] == "sincos":
                out.extend(aspect_components(f))
            elif feat["aspect"] == "linear":
                out.append(f)
        else:
            out.append(f)
    return out


def _three(maps: Sequence[CategoricalRaster]):
    if len(maps) < 3:
        raise DataError(f"prediction needs three dated maps, got {len(maps)}")
    t0, t1, t2 = maps[0], maps[1], maps[2]
    align_check([t0, t1, t2])
    return t0, t1, t2


# ---------------------------------------------------------------- GIS

def calibrate_gis(t0: CategoricalRaster, t1: CategoricalRaster, target_date: int,
                  factors: Sequence[ContinuousRaster], gis: dict) -> dict:
    """Markov matrices, factor calibrations and per-category suitability stack."""
    legend = t1.legend
    P = markov.estimate_transition(t0, t1)
    if t1.date is None or t0.date is None:
        raise DataError("GIS pipeline needs dated maps")
    horizon = int(target_date - t1.date)
    P_h = markov.rescale_transition(P, horizon)
    P_h = markov.pin_constant_codes(P_h, legend.constant_codes)
    tables = [mce.calibrate_factor(t1, f, int(gis["bins"])) for f in factors]
    n = len(factors)
    if gis["saaty_upper"]:
        saaty = mce.SaatyMatrix.from_upper(n, gis["saaty_upper"])
    else:
        saaty = mce.SaatyMatrix(np.ones((n, n)))
    if gis["order_weights"]:
        order = np.asarray(gis["order_weights"], dtype=float)
    else:
        order = mce.risk_averse_order_weights(n, float(gis["order_strength"]))
    fuzzy = {name: mce.FuzzySpec(spec["shape"], gis["family"], *[float(spec[k]) for k in "abcd" if k in spec])
             for name, spec in gis["fuzzy"].items()}
    suit = np.zeros((legend.k,) + t1.shape)
    for i, code in enumerate(legend.codes):
        if code in legend.constant_codes:
            suit[i] = np.where(t1.values == code, 1.0, 0.0)
            continue
        suit[i] = np.nan_to_num(mce.build_suitability(code, factors, tables, saaty, order,
                                                      fuzzy=fuzzy, family=gis["family"]), nan=0.0)
    return {"P": P, "P_horizon": P_h, "calibrations": tables, "saaty": saaty,
            "order_weights": order, "suitability": suit, "horizon": horizon}


def run_gis(maps: Sequence[CategoricalRaster], factors: Sequence[ContinuousRaster], settings: dict,
            seed: int) -> PredictionReport:
    t0, t1, t2 = _three(maps)
    factors = prepare_factors(factors, settings["features"])
    gis = settings["gis"]
    cal = calibrate_gis(t0, t1, t2.date, factors, gis)
    iterations = int(gis["iterations"]) or cal["horizon"]
    rep = allocation.ca_markov(t1, cal["P_horizon"], cal["suitability"], iterations,
                               int(gis["window"]), t2.date)
    rep.seed = seed
    rep.params.update({"settings": {"features": settings["features"], "gis": gis},
                       "order_weights": cal["order_weights"].tolist(),
                       "factor_weights": mce.saaty_weights(cal["saaty"]).weights.tolist() if factors else []})
    rep.extras.update(cal)
    return rep


# ---------------------------------------------------------------- MLP

def run_mlp(maps: Sequence[CategoricalRaster], factors: Sequence[ContinuousRaster], settings: dict,
            seed: int) -> PredictionReport:
    t0, t1, t2 = _three(maps)
    feat, m = settings["features"], settings["mlp"]
    factors = prepare_factors(factors, feat)
    spec = neighborhood(feat)
    stats = factor_stats(factors)
    pairs = [(t0, t1)]
    if m["training_pairs"] == "stacked":
        # every consecutive pair up to t2: reproduces a protocol that also learns from the target interval
        pairs = list(zip(maps[:-1], maps[1:]))[:2]
    fm = concat_datasets([assemble_dataset(a, b, factors, spec, bool(feat["frontier_only"]), stats)
                          for a, b in pairs])
    cfg = mlp.TrainConfig(seed=seed, learning_rate=float(m["learning_rate"]), momentum=float(m["momentum"]),
                          lr_decay=float(m["lr_decay"]), max_epochs=int(m["max_epochs"]),
                          batch_size=int(m["batch_size"]) or None, patience=int(m["patience"]),
                          validation_fraction=float(m["validation_fraction"]),
                          init_scale=float(m["init_scale"]), output=m["output"])
    res = mlp.train_on_dataset(fm, int(m["hidden"]), cfg)
    rep = mlp.mlp_predict_map(res.weights, t1, factors, spec, stats, t2.date)
    rep.seed = seed
    rep.params.update({"settings": {"features": feat, "mlp": m}, "training_rows": fm.n,
                       "best_epoch": res.best_epoch, "stopped_early": res.stopped_early,
                       "columns": fm.columns})
    rep.extras.update({"train": res, "dataset": fm})
    return rep


# ---------------------------------------------------------------- GLM

def run_glm(maps: Sequence[CategoricalRaster], factors: Sequence[ContinuousRaster], settings: dict,
            seed: int) -> PredictionReport:
    t0, t1, t2 = _three(maps)
    feat, g = settings["features"], settings["glm"]
    factors = prepare_factors(factors, feat)
    stats = factor_stats(factors)
    search = glm.grid_search((t0, t1, t2), factors, [int(r) for r in g["radii"]],
                             [float(e) for e in g["epsilons"]], feat["decay"], feat["metric"],
                             bool(feat["frontier_only"]), stats, int(g["max_iter"]))
    if search.best is None:
        raise DataError("every grid-search cell failed: " + "; ".join(
            str(rec["error"]) for rec in search.tried))
    radius, eps = search.best
    spec = neighborhood(feat, radius)
    fit = search.fits[search.best]
    rep = glm.glm_predict_map(fit.params, t1, factors, spec, stats, t2.date)
    rep.seed = seed
    rep.params.update({"settings": {"features": feat, "glm": g}, "iterations": fit.iterations,
                       "grad_norm": fit.grad_norm, "objective": fit.objective,
                       "dropped_codes": list(fit.dropped_codes)})
    rep.extras.update({"fit": fit, "search": search})
    return rep


RUNNERS = {"gis": run_gis, "mlp": run_mlp, "glm": run_glm}


def run_model(model: str, maps, factors, settings: dict, seed: int) -> PredictionReport:
    if model not in RUNNERS:
        raise ConfigError(f"unknown model {model!r}; choose from {sorted(RUNNERS)}")
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        return RUNNERS[model](maps, factors, settings, seed)


def write_artifacts(rep: PredictionReport, out_dir, legend: Legend) -> dict:
    """Model-specific side tables next to the report files."""
    out = Path(out_dir)
    paths = {}
    ex = rep.extras
    if rep.model == "gis":
        paths["transition"] = out / "transition.csv"
        markov.save_transition_csv(ex["P"], paths["transition"], legend)
        paths["transition_horizon"] = out / "transition_horizon.csv"
        markov.save_transition_csv(ex["P_horizon"], paths["transition_horizon"], legend)
        for t in ex["calibrations"]:
            key = f"calibration_{t.factor}"
            paths[key] = out / f"{key}.csv"
            t.to_csv(paths[key], legend)
    elif rep.model == "mlp":
        paths["weights"] = out / "mlp_weights.txt"
        ex["train"].weights.save(paths["weights"])
        paths["curve"] = out / "training_curve.csv"
        ex["train"].curve_to_csv(paths["curve"])
    elif rep.model == "glm":
        paths["params"] = out / "glm_params.csv"
        ex["fit"].params.to_csv(paths["params"])
        paths["grid_search"] = out / "grid_search.csv"
        ex["search"].to_csv(paths["grid_search"])
    return paths
