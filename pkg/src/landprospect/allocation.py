"""Quota-constrained multi-objective allocation with a contiguity-filter automaton."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataError
from .markov import TransitionMatrix, conditional_probability_maps, expected_areas, largest_remainder
from .raster import NODATA, CategoricalRaster
from .report import PredictionReport


def contiguity_boost(map_: CategoricalRaster, category: int, window: int = 5) -> np.ndarray:
    """Share of valid cells in the ``window`` x ``window`` block (centre included) holding ``category``."""
    if window < 3 or window % 2 == 0:
        raise ConfigError(f"contiguity window must be odd and >= 3, got {window}")
    kern = np.ones((window, window))
    valid = (map_.values != NODATA).astype(float)
    hits = ndimage.correlate((map_.values == category).astype(float), kern, mode="constant", cval=0.0)
    denom = ndimage.correlate(valid, kern, mode="constant", cval=0.0)
    out = np.zeros(map_.shape)
    ok = denom > 0
    out[ok] = hits[ok] / denom[ok]
    return out


@dataclass
class MolaResult:
    values: np.ndarray  # codes, 0 outside the allocation mask
    relaxed: int  # pixels placed on zero suitability to honour quotas


def mola_assign(suitabilities: np.ndarray, quotas, valid: Optional[np.ndarray] = None,
                secondary: Optional[np.ndarray] = None) -> MolaResult:
    """Give every category exactly its quota of pixels.

    (pixel, category) pairs are visited by decreasing suitability; a pair is
    accepted while the pixel is free and the category still has quota, so a
    pixel wanted by several categories goes to the one it suits best.  Ties are
    broken by ``secondary`` (descending, optional), then lower category code,
    then row-major index.  Zero-suitability pairs come last, which is where an
    infeasible quota gets relaxed.
    """
    s = np.nan_to_num(np.asarray(suitabilities, dtype=float), nan=0.0)
    k = s.shape[0]
    if valid is None:
        valid = np.ones(s.shape[1:], dtype=bool)
    quotas = np.asarray(quotas, dtype=np.int64)
    if quotas.size != k or (quotas < 0).any():
        raise ConfigError(f"need {k} non-negative quotas, got {quotas.tolist()}")
    pix = np.flatnonzero(valid.ravel())
    n = pix.size
    if quotas.sum() != n:
        raise DataError(f"quotas sum to {int(quotas.sum())} but {n} pixels need a category")
    score = s.reshape(k, -1)[:, pix].ravel()  # category-major
    cat = np.repeat(np.arange(k), n)
    idx = np.tile(np.arange(n), k)
    if secondary is not None:
        sec = np.nan_to_num(np.asarray(secondary, dtype=float), nan=0.0).reshape(k, -1)[:, pix].ravel()
        order = np.lexsort((idx, cat, -sec, -score))
    else:
        order = np.lexsort((idx, cat, -score))
    remaining = quotas.tolist()
    owner = [-1] * n
    left = n
    relaxed = 0
    cats, idxs, scores = cat[order].tolist(), idx[order].tolist(), score[order].tolist()
    for c, i, sc in zip(cats, idxs, scores):
        if owner[i] < 0 and remaining[c] > 0:
            owner[i] = c
            remaining[c] -= 1
            if sc <= 0.0:
                relaxed += 1
            left -= 1
            if left == 0:
                break
    out = np.zeros(valid.size, dtype=np.int32)
    out[pix] = np.asarray(owner, dtype=np.int32) + 1
    return MolaResult(out.reshape(valid.shape), relaxed)


def release_schedule(start_counts, final_quotas, iterations: int):
    """Linear path of per-iteration area targets from current counts to final quotas."""
    start = np.asarray(start_counts, dtype=float)
    final = np.asarray(final_quotas, dtype=np.int64)
    total = int(final.sum())
    for i in range(1, iterations + 1):
        if i == iterations:
            yield final.copy()
        else:
            yield largest_remainder(start + (i / iterations) * (final - start), total)


def ca_markov(map_t1: CategoricalRaster, P: TransitionMatrix, suitabilities: np.ndarray,
              iterations: Optional[int] = None, window: int = 5,
              target_date: Optional[int] = None) -> PredictionReport:
    """Allocate Markov quotas over ``iterations`` steps with a contiguity filter.

    ``P`` must already span the projection horizon.  At step ``i`` the area
    targets move a fraction ``i/iterations`` of the way from the current counts
    to the Markov quotas; each pixel/category score is
    ``suitability * conditional probability * contiguity``, where contiguity is
    measured on the previous step's map (so step 1 uses no contiguity term).
    Constant legend codes keep their pixels.
    """
    legend = map_t1.legend
    k = legend.k
    suit = np.asarray(suitabilities, dtype=float)
    if suit.shape != (k,) + map_t1.shape:
        raise DataError(f"suitability stack shape {suit.shape} does not match {(k,) + map_t1.shape}")
    if iterations is None:
        iterations = P.dt
    if iterations < 1:
        raise ConfigError("iterations must be >= 1")
    quotas = expected_areas(map_t1, P)
    cond = conditional_probability_maps(map_t1, P)

    constant = np.isin(map_t1.values, list(legend.constant_codes))
    alloc = map_t1.valid & ~constant
    pinned = np.bincount(map_t1.values[constant], minlength=k + 1)[1:]
    alloc_quotas = quotas - pinned
    if (alloc_quotas < 0).any():
        raise DataError("Markov quotas shrink a constant category; pin constant codes in P first")
    start = np.bincount(map_t1.values[alloc], minlength=k + 1)[1:]

    current = np.array(map_t1.values)
    relaxed = 0
    history = []
    for step, targets in enumerate(release_schedule(start, alloc_quotas, iterations), start=1):
        score = np.nan_to_num(suit, nan=0.0) * np.nan_to_num(cond, nan=0.0)
        if step > 1:
            cur = map_t1.replace(values=current)
            boost = np.stack([contiguity_boost(cur, code, window) for code in legend.codes])
            score = score * boost
        res = mola_assign(score, targets, alloc, secondary=cond)
        current = np.where(alloc, res.values, map_t1.values)
        relaxed += res.relaxed
        history.append(targets.tolist())

    predicted = map_t1.replace(values=current, date=target_date, name="predicted")
    flags = [f"relaxed_pixels:{relaxed}"] if relaxed else []
    flags += list(P.flags)
    params = {"iterations": int(iterations), "window": int(window), "horizon_years": int(P.dt),
              "quotas": quotas.tolist()}
    return PredictionReport("gis", predicted, cond, params, None, flags,
                            {"schedule": history, "suitability": suit})


def stochastic_choice(cond: np.ndarray, valid: np.ndarray, seed: int) -> np.ndarray:
    """Draw each valid pixel's code independently from its conditional probabilities."""
    rng = np.random.default_rng(seed)
    k = cond.shape[0]
    probs = np.nan_to_num(cond, nan=0.0).reshape(k, -1)[:, valid.ravel()]
    cum = np.cumsum(probs, axis=0)
    u = rng.random(probs.shape[1]) * cum[-1]
    picks = (u[None, :] >= cum).sum(axis=0)
    out = np.zeros(valid.size, dtype=np.int32)
    out[valid.ravel()] = np.minimum(picks, k - 1) + 1
    return out.reshape(valid.shape)


def same_neighbor_fraction(values: np.ndarray) -> float:
    """Mean share of a valid pixel's valid 8-neighbours carrying its own code."""
    v = np.asarray(values)
    same = np.zeros(v.shape)
    total = np.zeros(v.shape)
    rows, cols = v.shape
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            nb = np.full_like(v, NODATA)
            nb[max(-dr, 0):rows + min(-dr, 0), max(-dc, 0):cols + min(-dc, 0)] = \
                v[max(dr, 0):rows + min(dr, 0), max(dc, 0):cols + min(dc, 0)]
            ok = nb != NODATA
            total += ok
            same += ok & (nb == v)
    center = (v != NODATA) & (total > 0)
    return float((same[center] / total[center]).mean())
