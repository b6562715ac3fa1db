"""Per-pixel feature vectors shared by the perceptron and the logit model.

A feature row is ``[one-hot past code over modelled codes | weighted
neighbourhood frequencies over all legend codes | standardized factors]``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataError, EmptySelectionError
from .raster import NODATA, CategoricalRaster, ContinuousRaster, align_check

_DECAYS = ("inverse", "inverse_square", "gaussian")
_METRICS = ("chebyshev", "euclidean")


@dataclass(frozen=True)
class NeighborhoodSpec:
    """Square window of ``radius`` rings, weighted by a decreasing function of distance."""

    radius: int = 3
    decay: str = "inverse"
    metric: str = "chebyshev"
    sigma: float = 1.5

    def __post_init__(self):
        if int(self.radius) != self.radius or self.radius < 1:
            raise ConfigError(f"neighbourhood radius must be an integer >= 1, got {self.radius}")
        if self.decay not in _DECAYS:
            raise ConfigError(f"unknown weight decay {self.decay!r}; choose from {_DECAYS}")
        if self.metric not in _METRICS:
            raise ConfigError(f"unknown distance metric {self.metric!r}; choose from {_METRICS}")
        if self.sigma <= 0:
            raise ConfigError("gaussian sigma must be positive")

    def weight(self, d):
        d = np.asarray(d, dtype=float)
        if self.decay == "inverse":
            return 1.0 / d
        if self.decay == "inverse_square":
            return 1.0 / d ** 2
        return np.exp(-(d ** 2) / (2.0 * self.sigma ** 2))

    def distance(self, dr, dc):
        dr, dc = np.abs(dr), np.abs(dc)
        if self.metric == "chebyshev":
            return np.maximum(dr, dc)
        return np.hypot(dr, dc)

    def kernel(self) -> np.ndarray:
        """(2r+1)x(2r+1) weights with a zero centre."""
        r = self.radius
        dr, dc = np.mgrid[-r:r + 1, -r:r + 1]
        d = self.distance(dr, dc).astype(float)
        k = np.zeros_like(d)
        off = d > 0
        k[off] = self.weight(d[off])
        return k


def disjunctive_encode(code: int, k: int) -> np.ndarray:
    """One-hot vector of length ``k`` with the 1 at position ``code`` (1-based)."""
    if not 1 <= code <= k:
        raise DataError(f"code {code} outside 1..{k}")
    v = np.zeros(k, dtype=np.int8)
    v[code - 1] = 1
    return v


def neighborhood_frequencies(map_: CategoricalRaster, pixel, spec: NeighborhoodSpec):
    """Weighted category frequencies around one pixel.

    Returns ``(freqs, has_neighbors)``; ``freqs`` is all-zero when no valid
    neighbour falls inside the window.
    """
    r0, c0 = pixel
    if not (0 <= r0 < map_.rows and 0 <= c0 < map_.cols):
        raise DataError(f"pixel {pixel} outside {map_.rows}x{map_.cols} grid")
    r = spec.radius
    kern = spec.kernel()
    top, left = max(r0 - r, 0), max(c0 - r, 0)
    bottom, right = min(r0 + r + 1, map_.rows), min(c0 + r + 1, map_.cols)
    window = map_.values[top:bottom, left:right]
    w = kern[top - (r0 - r):bottom - (r0 - r), left - (c0 - r):right - (c0 - r)]
    valid = window != NODATA
    total = w[valid].sum()
    freqs = np.zeros(map_.legend.k)
    if total <= 0:
        return freqs, False
    np.add.at(freqs, window[valid] - 1, w[valid])
    return freqs / total, True


def neighborhood_frequency_stack(map_: CategoricalRaster, spec: NeighborhoodSpec) -> np.ndarray:
    """Whole-map version of :func:`neighborhood_frequencies`, shape ``(K, rows, cols)``.

    Border windows are truncated and renormalized over valid neighbours.
    """
    kern = spec.kernel()
    valid = (map_.values != NODATA).astype(float)
    denom = ndimage.correlate(valid, kern, mode="constant", cval=0.0)
    out = np.zeros((map_.legend.k,) + map_.shape)
    safe = denom > 0
    for i, code in enumerate(map_.legend.codes):
        num = ndimage.correlate((map_.values == code).astype(float), kern, mode="constant", cval=0.0)
        out[i][safe] = num[safe] / denom[safe]
    return out


_EIGHT = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


def _shifted(a: np.ndarray, dr: int, dc: int, fill) -> np.ndarray:
    """out[i, j] = a[i + dr, j + dc] with ``fill`` outside the grid."""
    out = np.full_like(a, fill)
    rows, cols = a.shape
    src = a[max(dr, 0):rows + min(dr, 0), max(dc, 0):cols + min(dc, 0)]
    out[max(-dr, 0):rows + min(-dr, 0), max(-dc, 0):cols + min(-dc, 0)] = src
    return out


def frontier_pixels(map_: CategoricalRaster) -> np.ndarray:
    """True where a valid pixel has at least one 8-neighbour with a different valid code."""
    v = map_.values
    mask = np.zeros(v.shape, dtype=bool)
    for dr, dc in _EIGHT:
        nb = _shifted(v, dr, dc, NODATA)
        mask |= (nb != NODATA) & (nb != v)
    return mask & (v != NODATA)


def standardize(layer: ContinuousRaster):
    """Center and scale a layer over its valid cells.

    Returns ``(standardized_layer, mean, sd)``; ``sd`` is the population
    standard deviation, so the output has unit variance under the same
    convention.
    """
    vals = layer.values[layer.valid]
    if vals.size < 2:
        raise DataError(f"factor {layer.name!r} has fewer than 2 valid cells")
    mean = float(vals.sum() / vals.size)
    sd = float(np.sqrt(((vals - mean) ** 2).sum() / vals.size))
    if not sd > 0:
        raise DataError(f"factor {layer.name!r} is constant; exclude it from the model")
    return apply_standardization(layer, mean, sd), mean, sd


def apply_standardization(layer: ContinuousRaster, mean: float, sd: float) -> ContinuousRaster:
    return layer.replace(values=(layer.values - mean) / sd)


def aspect_components(aspect: ContinuousRaster):
    """Split an azimuth layer (degrees) into sine and cosine layers."""
    rad = np.deg2rad(aspect.values)
    return (aspect.replace(values=np.sin(rad), name=f"{aspect.name}_sin"),
            aspect.replace(values=np.cos(rad), name=f"{aspect.name}_cos"))


@dataclass
class FeatureMatrix:
    X: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    columns: list
    modelled_codes: tuple
    legend_codes: tuple
    stats: list = field(default_factory=list)
    target: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def target_onehot(self) -> np.ndarray:
        """Targets as one-hot rows over ``modelled_codes``."""
        idx = {c: i for i, c in enumerate(self.modelled_codes)}
        out = np.zeros((self.n, len(self.modelled_codes)))
        out[np.arange(self.n), [idx[int(t)] for t in self.target]] = 1.0
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", "col"] + list(self.columns) + (["target"] if self.target is not None else []))
            for i in range(self.n):
                rec = [int(self.rows[i]), int(self.cols[i])] + [repr(float(x)) for x in self.X[i]]
                if self.target is not None:
                    rec.append(int(self.target[i]))
                w.writerow(rec)


def factor_stats(factors: Sequence[ContinuousRaster]) -> list:
    """(name, mean, sd) per factor, computed over each factor's valid cells."""
    out = []
    for f in factors:
        _, mean, sd = standardize(f)
        out.append((f.name, mean, sd))
    return out


def pixel_features(map_t: CategoricalRaster, factors: Sequence[ContinuousRaster],
                   spec: NeighborhoodSpec, mask: np.ndarray, stats: Optional[list] = None,
                   freq_stack: Optional[np.ndarray] = None) -> FeatureMatrix:
    """Feature rows for every pixel in ``mask`` (row-major order)."""
    align_check([map_t, *factors])
    legend = map_t.legend
    modelled = legend.modelled_codes
    if stats is None:
        stats = factor_stats(factors)
    if len(stats) != len(factors):
        raise ConfigError("one (mean, sd) pair per factor is required")
    rows, cols = np.nonzero(mask)
    codes = map_t.values[rows, cols]
    onehot = (codes[:, None] == np.asarray(modelled)[None, :]).astype(float)
    if freq_stack is None:
        freq_stack = neighborhood_frequency_stack(map_t, spec)
    freqs = freq_stack[:, rows, cols].T
    env = np.column_stack([(f.values[rows, cols] - m) / s for f, (_, m, s) in zip(factors, stats)]) \
        if factors else np.zeros((rows.size, 0))
    X = np.hstack([onehot, freqs, env])
    columns = ([f"past_{c}" for c in modelled] + [f"nbr_{c}" for c in legend.codes]
               + [name for name, _, _ in stats])
    return FeatureMatrix(X, rows, cols, columns, modelled, legend.codes, list(stats))


def modelled_mask(map_: CategoricalRaster, factors: Sequence[ContinuousRaster]) -> np.ndarray:
    """Valid, non-constant pixels with every factor defined."""
    mask = map_.valid & ~np.isin(map_.values, list(map_.legend.constant_codes))
    for f in factors:
        mask &= f.valid
    return mask


def assemble_dataset(map_t0: CategoricalRaster, map_t1: CategoricalRaster,
                     factors: Sequence[ContinuousRaster], spec: NeighborhoodSpec,
                     frontier_only: bool = True, stats: Optional[list] = None) -> FeatureMatrix:
    """Training rows: features read at ``t0``, target code read at ``t1``."""
    align_check([map_t0, map_t1, *factors])
    if map_t0.date is not None and map_t1.date is not None and not map_t0.date < map_t1.date:
        raise DataError(f"dates must increase: {map_t0.date} -> {map_t1.date}")
    mask = modelled_mask(map_t0, factors) & modelled_mask(map_t1, [])
    if frontier_only:
        mask &= frontier_pixels(map_t0)
    if not mask.any():
        raise EmptySelectionError("no pixel selected for the training set"
                                  + (" (map has no frontier pixels)" if frontier_only else ""))
    fm = pixel_features(map_t0, factors, spec, mask, stats)
    fm.target = map_t1.values[fm.rows, fm.cols].astype(np.int32)
    return fm


def concat_datasets(parts: Sequence[FeatureMatrix]) -> FeatureMatrix:
    first = parts[0]
    for p in parts[1:]:
        if p.columns != first.columns:
            raise DataError("cannot stack datasets with different columns")
    return FeatureMatrix(
        np.vstack([p.X for p in parts]),
        np.concatenate([p.rows for p in parts]),
        np.concatenate([p.cols for p in parts]),
        list(first.columns), first.modelled_codes, first.legend_codes, list(first.stats),
        np.concatenate([p.target for p in parts]) if first.target is not None else None,
    )
