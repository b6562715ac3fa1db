"""Deterministic synthetic landscapes with known, factor-driven dynamics.

A scenario is generated in four steps:

1. smooth factor fields (elevation gradient plus noise, derived slope and
   aspect, distance to built-up cells);
2. an initial map, allocated by quota from smoothed per-category score fields;
3. for each interval, a per-pixel multinomial logit draw whose scores are
   log-linear in the standardized factors and in the neighbourhood
   frequencies of the previous map;
4. per-source offsets in that logit, solved so that expected transition
   counts equal ``n_i * P_ij`` for the declared matrix.

Everything derives from one ``numpy.random.Generator`` seeded by the caller.
"""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from .allocation import mola_assign
from .errors import ConfigError
from .features import NeighborhoodSpec, neighborhood_frequency_stack
from .markov import largest_remainder
from .raster import (CategoricalRaster, ContinuousRaster, Legend, ScenarioBundle,
                     default_legend, load_legend)

FACTOR_NAMES = ("elevation", "slope", "aspect", "dist_builtup")


def default_transition(legend: Legend, stay: float = 0.84) -> np.ndarray:
    """Closing-landscape dynamic: open covers drift toward the next more closed rank."""
    k = legend.k
    p = np.zeros((k, k))
    ranked = sorted(legend.modelled_codes, key=legend.rank)
    for pos, code in enumerate(ranked):
        i = code - 1
        row = {i: stay}
        if pos > 0:
            row[ranked[pos - 1] - 1] = 0.10
        if pos > 1:
            row[ranked[pos - 2] - 1] = 0.02
        if pos < len(ranked) - 1:
            row[ranked[pos + 1] - 1] = 0.04
        total = sum(row.values())
        for j, v in row.items():
            p[i, j] = v / total
    for code in legend.constant_codes:
        p[code - 1, code - 1] = 1.0
    return p


def default_coefficients(legend: Legend, strength: float = 1.2) -> dict:
    """Per-factor, per-code log-suitability slopes.

    Closed covers favour high, steep ground far from built-up cells; open
    covers the opposite.  Constant codes get zero.
    """
    ranks = [legend.rank(c) for c in legend.codes]
    known = [r for r in ranks if r is not None]
    lo, hi = min(known), max(known)
    span = [0.0 if r is None else 1.0 - 2.0 * (r - lo) / max(hi - lo, 1) for r in ranks]
    return {
        "elevation": [strength * s for s in span],
        "slope": [0.6 * strength * s for s in span],
        "aspect": [0.0 for _ in span],
        "dist_builtup": [0.5 * strength * s for s in span],
    }


DEFAULTS = {
    "rows": 128,
    "cols": 128,
    "cell_size": 18.0,
    "dates": [1980, 1989, 2000],
    "perimeter": "ellipse",
    "legend_file": "",
    "initial_fractions": [0.12, 0.14, 0.14, 0.14, 0.14, 0.14, 0.14, 0.04],
    "transition": [],
    "transitions": [],
    "coefficients": {},
    "neighborhood_radius": 2,
    "neighborhood_weight": 6.0,
    "elevation_range": [600.0, 1800.0],
    "noise_amplitude": 150.0,
    "noise_sigma": 10.0,
    "initial_sigma": 6.0,
    "builtup_clusters": 6,
    "burn_in": 2,
}


def resolve_spec(spec: dict, base_dir: Optional[Path] = None) -> tuple:
    """Fill defaults and validate; returns ``(spec, legend)``."""
    unknown = set(spec) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"[scenario] unknown keys {sorted(unknown)}")
    s = copy.deepcopy(DEFAULTS)
    s.update(copy.deepcopy(spec))
    if s["legend_file"]:
        path = Path(s["legend_file"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        legend = load_legend(path)
    else:
        legend = default_legend()
    k = legend.k
    if int(s["rows"]) < 4 or int(s["cols"]) < 4:
        raise ConfigError("scenario grid must be at least 4x4")
    dates = [int(d) for d in s["dates"]]
    if len(dates) < 3:
        raise ConfigError(f"a scenario needs at least 3 dates, got {len(dates)}")
    if any(b <= a for a, b in zip(dates, dates[1:])):
        raise ConfigError(f"dates must increase strictly: {dates}")
    s["dates"] = dates
    if s["perimeter"] not in ("full", "ellipse"):
        raise ConfigError(f"perimeter must be 'full' or 'ellipse', got {s['perimeter']!r}")
    frac = np.asarray(s["initial_fractions"], dtype=float)
    if frac.size != k or (frac < 0).any() or frac.sum() <= 0:
        raise ConfigError(f"initial_fractions needs {k} non-negative entries with a positive sum")
    s["initial_fractions"] = (frac / frac.sum()).tolist()

    n_int = len(dates) - 1
    if s["transitions"] and s["transition"]:
        raise ConfigError("give either 'transition' (shared) or 'transitions' (per interval), not both")
    if s["transitions"]:
        mats = [np.asarray(m, dtype=float) for m in s["transitions"]]
        if len(mats) != n_int:
            raise ConfigError(f"{n_int} intervals need {n_int} transition matrices, got {len(mats)}")
    elif s["transition"]:
        mats = [np.asarray(s["transition"], dtype=float)] * n_int
    else:
        mats = [default_transition(legend)] * n_int
    for m in mats:
        _check_transition(m, legend)
    s["transitions"] = [m.tolist() for m in mats]
    s["transition"] = []

    coef = default_coefficients(legend)
    for name, vals in s["coefficients"].items():
        if name not in FACTOR_NAMES:
            raise ConfigError(f"unknown factor {name!r} in coefficients; expected one of {FACTOR_NAMES}")
        if len(vals) != k:
            raise ConfigError(f"coefficients.{name} needs {k} entries")
        coef[name] = [float(v) for v in vals]
    s["coefficients"] = coef
    NeighborhoodSpec(int(s["neighborhood_radius"]))
    if int(s["burn_in"]) < 0:
        raise ConfigError("burn_in must be >= 0")
    return s, legend


def _check_transition(m: np.ndarray, legend: Legend) -> None:
    k = legend.k
    if m.shape != (k, k):
        raise ConfigError(f"transition matrix must be {k}x{k}, got {m.shape}")
    if (m < 0).any():
        raise ConfigError("transition probabilities must be non-negative")
    sums = m.sum(axis=1)
    for i, total in enumerate(sums):
        if total == 0:
            raise ConfigError(f"transition row {i + 1} is all zeros")
    if not np.allclose(sums, 1.0, atol=1e-9, rtol=0):
        raise ConfigError(f"transition rows must sum to 1, got {sums.tolist()}")
    for code in legend.constant_codes:
        row = np.zeros(k)
        row[code - 1] = 1.0
        if not np.array_equal(m[code - 1], row) or (np.delete(m[:, code - 1], code - 1) != 0).any():
            raise ConfigError(f"constant code {code} must have an identity row and no inflow")


def _smooth_noise(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    z = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="reflect")
    sd = z.std()
    return z / sd if sd > 0 else z


def _perimeter(s: dict) -> np.ndarray:
    rows, cols = int(s["rows"]), int(s["cols"])
    if s["perimeter"] == "full":
        return np.ones((rows, cols), dtype=bool)
    r, c = np.mgrid[0:rows, 0:cols]
    cy, cx = (rows - 1) / 2.0, (cols - 1) / 2.0
    return ((r - cy) / (rows / 2.0)) ** 2 + ((c - cx) / (cols / 2.0)) ** 2 <= 1.0


def _standardized(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    v = values[mask]
    sd = v.std()
    out = np.zeros_like(values)
    out[mask] = (v - v.mean()) / (sd if sd > 0 else 1.0)
    return out


def _terrain(rng, s: dict, mask: np.ndarray) -> dict:
    rows, cols = int(s["rows"]), int(s["cols"])
    lo, hi = (float(x) for x in s["elevation_range"])
    r, c = np.mgrid[0:rows, 0:cols]
    ramp = (0.75 * r / max(rows - 1, 1) + 0.25 * c / max(cols - 1, 1))
    elev = lo + (hi - lo) * ramp + float(s["noise_amplitude"]) * _smooth_noise(rng, (rows, cols), float(s["noise_sigma"]))
    cell = float(s["cell_size"])
    dzdy, dzdx = np.gradient(elev, cell)
    slope = np.degrees(np.arctan(np.hypot(dzdx, dzdy)))
    # azimuth of steepest descent, clockwise from north (row 0 is north)
    aspect = np.degrees(np.arctan2(-dzdx, dzdy)) % 360.0
    return {"elevation": elev, "slope": slope, "aspect": aspect}


def _initial_map(rng, s: dict, legend: Legend, mask: np.ndarray, zf: dict, coef: dict) -> np.ndarray:
    k = legend.k
    shape = mask.shape
    n = int(mask.sum())
    quotas = largest_remainder(np.asarray(s["initial_fractions"]) * n, n)
    scores = np.empty((k,) + shape)
    sigma = float(s["initial_sigma"])
    for i, code in enumerate(legend.codes):
        field = _smooth_noise(rng, shape, sigma)
        for name in ("elevation", "slope"):
            field = field + 0.8 * coef[name][i] * zf[name]
        scores[i] = field
    # built-up: a few compact villages on low ground
    if legend.constant_codes:
        centres = rng.integers(0, [shape[0], shape[1]], size=(int(s["builtup_clusters"]), 2))
        village = np.zeros(shape)
        village[centres[:, 0], centres[:, 1]] = 1.0
        village = ndimage.gaussian_filter(village, 3.0, mode="constant")
        village = village / (village.max() or 1.0)
        for code in legend.constant_codes:
            scores[code - 1] = 6.0 * village - 0.5 * zf["elevation"]
    # rank-transform so every category competes on a common scale
    flat = scores.reshape(k, -1)
    ranks = np.argsort(np.argsort(flat, axis=1), axis=1) / max(flat.shape[1] - 1, 1)
    return mola_assign(ranks.reshape(scores.shape), quotas, mask).values


def _calibrated_offsets(logsuit: np.ndarray, target: np.ndarray, iters: int = 500,
                        tol: float = 1e-10) -> np.ndarray:
    """Offsets ``b`` with ``mean_x softmax(logsuit[:, x] + b) == target``.

    Fixed-point iteration ``b += log(target / mean)``; zero targets get ``-inf``.
    """
    k = logsuit.shape[0]
    live = target > 0
    b = np.where(live, 0.0, -np.inf)
    for _ in range(iters):
        z = logsuit + b[:, None]
        z = z - z.max(axis=0, keepdims=True)
        e = np.exp(z)
        mean = (e / e.sum(axis=0, keepdims=True)).mean(axis=1)
        step = np.zeros(k)
        step[live] = np.log(target[live] / mean[live])
        b[live] += step[live]
        if np.abs(step).max() < tol:
            break
    return b


def _transition_step(rng, prev: np.ndarray, legend: Legend, P: np.ndarray, env: np.ndarray,
                     spec: NeighborhoodSpec, gamma: float, template: CategoricalRaster) -> np.ndarray:
    """Draw each pixel's next code from a multinomial logit.

    For a pixel of code ``i`` the probability of ``j`` is proportional to
    ``exp(env_j + gamma * freq_j + b_ij)``, staying included; the offsets
    ``b_i`` are solved so that expected transition counts equal ``n_i * P_ij``.
    """
    freq = neighborhood_frequency_stack(template.replace(values=prev), spec)
    logsuit = (env + gamma * freq).reshape(legend.k, -1)
    flat = prev.ravel()
    nxt = flat.copy()
    codes = np.asarray(legend.codes)
    for i, code in enumerate(legend.codes):
        idx = np.flatnonzero(flat == code)
        if idx.size == 0 or P[i, i] == 1.0:
            continue
        ls = logsuit[:, idx]
        b = _calibrated_offsets(ls, np.asarray(P[i]))
        keys = ls + b[:, None] + rng.gumbel(size=ls.shape)
        nxt[idx] = codes[np.argmax(keys, axis=0)]
    return nxt.reshape(prev.shape)


def synth_scenario(spec: dict, seed: int, base_dir: Optional[Path] = None) -> ScenarioBundle:
    """Generate a :class:`ScenarioBundle`; a pure function of ``(spec, seed)``."""
    s, legend = resolve_spec(spec, base_dir)
    rng = np.random.default_rng(seed)
    mask = _perimeter(s)
    terrain = _terrain(rng, s, mask)
    coef = s["coefficients"]
    zf = {name: _standardized(v, mask) for name, v in terrain.items()}
    values0 = _initial_map(rng, s, legend, mask, zf, coef)

    fields = dict(terrain)
    built = np.isin(values0, list(legend.constant_codes)) & mask
    if built.any():
        fields["dist_builtup"] = ndimage.distance_transform_edt(~built) * float(s["cell_size"])
    zf = {name: _standardized(v, mask) for name, v in fields.items()}

    k = legend.k
    env = np.zeros((k,) + mask.shape)
    for name, z in zf.items():
        if name == "aspect":
            z = np.cos(np.deg2rad(fields["aspect"]))  # north-facing = +1
        env += np.asarray(coef[name])[:, None, None] * z[None]

    cell = float(s["cell_size"])
    dates = s["dates"]
    template = CategoricalRaster(values0, legend, dates[0], cell)
    nspec = NeighborhoodSpec(int(s["neighborhood_radius"]))
    gamma = float(s["neighborhood_weight"])
    # unrecorded steps so the first snapshot already carries the dynamic's texture
    current = values0
    for _ in range(int(s["burn_in"])):
        current = _transition_step(rng, current, legend, np.asarray(s["transitions"][0]), env, nspec,
                                   gamma, template)
    snaps = [template.replace(values=current)]
    for t, P in enumerate(s["transitions"]):
        current = _transition_step(rng, current, legend, np.asarray(P), env, nspec, gamma, template)
        snaps.append(CategoricalRaster(current, legend, dates[t + 1], cell))

    factors = []
    for name in FACTOR_NAMES:
        if name in fields:
            vals = np.where(mask, fields[name], np.nan)
            factors.append(ContinuousRaster(vals, name=name, cell_size=cell))
    truth = {"transitions": s["transitions"], "coefficients": coef,
             "neighborhood_radius": int(s["neighborhood_radius"]), "neighborhood_weight": gamma,
             "spec": s}
    return ScenarioBundle(snaps, factors, int(seed), truth)
