"""Multi-criteria evaluation: factor calibration, fuzzy standardization,
pairwise-comparison weights and ordered weighted averaging."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.stats import norm

from .errors import ConfigError, ConvergenceError, DataError
from .raster import CategoricalRaster, ContinuousRaster, align_check

Z99 = float(norm.ppf(0.995))
Z999 = float(norm.ppf(0.9995))

# Saaty's random consistency index, indexed by matrix order
RANDOM_INDEX = {1: 0.0, 2: 0.0, 3: 0.58, 4: 0.90, 5: 1.12, 6: 1.24, 7: 1.32,
                8: 1.41, 9: 1.45, 10: 1.49, 11: 1.51, 12: 1.48, 13: 1.56, 14: 1.57, 15: 1.59}


@dataclass(frozen=True)
class FuzzySpec:
    shape: str = "increasing"
    family: str = "sigmoidal"
    a: float = 0.0
    b: float = 1.0
    c: Optional[float] = None
    d: Optional[float] = None

    def __post_init__(self):
        if self.shape not in ("increasing", "decreasing", "symmetric"):
            raise ConfigError(f"unknown fuzzy shape {self.shape!r}")
        if self.family not in ("sigmoidal", "linear"):
            raise ConfigError(f"unknown fuzzy family {self.family!r}")
        pts = [self.a, self.b]
        if self.shape == "symmetric":
            if self.c is None or self.d is None:
                raise ConfigError("symmetric fuzzy membership needs four control points")
            pts += [self.c, self.d]
        if any(y < x for x, y in zip(pts, pts[1:])):
            raise ConfigError(f"fuzzy control points must be ordered, got {pts}")


@dataclass(frozen=True, eq=False)
class SaatyMatrix:
    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ConfigError("pairwise comparison matrix must be square")
        if (m <= 0).any():
            raise ConfigError("pairwise comparison entries must be positive")
        if not np.allclose(np.diag(m), 1.0, atol=1e-9, rtol=0):
            raise ConfigError("pairwise comparison diagonal must be 1")
        if not np.allclose(m * m.T, 1.0, atol=1e-9, rtol=0):
            raise ConfigError("pairwise comparison matrix must be reciprocal")
        m.flags.writeable = False
        object.__setattr__(self, "m", m)

    @classmethod
    def from_weights(cls, w) -> "SaatyMatrix":
        w = np.asarray(w, dtype=float)
        return cls(w[:, None] / w[None, :])

    @classmethod
    def from_upper(cls, n: int, upper: Sequence[float]) -> "SaatyMatrix":
        """Build from the row-major strict upper triangle."""
        m = np.eye(n)
        it = iter(upper)
        for i in range(n):
            for j in range(i + 1, n):
                m[i, j] = float(next(it))
                m[j, i] = 1.0 / m[i, j]
        return cls(m)


@dataclass(frozen=True)
class SaatyResult:
    weights: np.ndarray
    lambda_max: float
    consistency_index: float
    consistency_ratio: float
    iterations: int


@dataclass(frozen=True, eq=False)
class OwaSpec:
    factor_weights: np.ndarray
    order_weights: np.ndarray

    def __post_init__(self):
        for label in ("factor_weights", "order_weights"):
            w = np.array(getattr(self, label), dtype=float)
            if w.ndim != 1 or (w < 0).any() or abs(w.sum() - 1.0) > 1e-12:
                raise ConfigError(f"{label} must be non-negative and sum to 1, got {w}")
            w.flags.writeable = False
            object.__setattr__(self, label, w)
        if self.factor_weights.size != self.order_weights.size:
            raise ConfigError(f"{self.factor_weights.size} factor weights but "
                              f"{self.order_weights.size} order weights")


def risk_averse_order_weights(n: int, strength: float = 1.0) -> np.ndarray:
    """Order weights decreasing from the lowest-ranked value: low risk, limited trade-off."""
    v = np.arange(n, 0, -1, dtype=float) ** strength
    return v / v.sum()


@dataclass
class CalibrationTable:
    factor: str
    codes: tuple
    edges: np.ndarray
    observed: np.ndarray
    expected: np.ndarray
    z: np.ndarray
    flag99: np.ndarray
    flag999: np.ndarray
    propensity: np.ndarray
    merged_bins: int = 0

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def row(self, code: int) -> int:
        return self.codes.index(code)

    def to_csv(self, path, legend=None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["factor", "code", "category", "bin", "lower", "upper", "observed",
                        "expected", "z", "significant_99", "significant_99_9", "propensity"])
            for i, code in enumerate(self.codes):
                name = legend.names[code] if legend is not None else ""
                for b in range(self.edges.size - 1):
                    w.writerow([self.factor, code, name, b, repr(float(self.edges[b])),
                                repr(float(self.edges[b + 1])), int(self.observed[i, b]),
                                repr(float(self.expected[i, b])), repr(float(self.z[i, b])),
                                int(self.flag99[i, b]), int(self.flag999[i, b]),
                                repr(float(self.propensity[i, b]))])


def _merge_empty_bins(x: np.ndarray, edges: np.ndarray):
    merged = 0
    while True:
        idx = np.searchsorted(edges[1:-1], x, side="right")
        counts = np.bincount(idx, minlength=edges.size - 1)
        empty = np.flatnonzero(counts == 0)
        if empty.size == 0 or edges.size <= 2:
            return edges, idx, merged
        b = empty[0]
        # fold the empty bin into its right neighbour (left one for the last bin)
        cut = b + 1 if b + 1 < edges.size - 1 else b
        edges = np.delete(edges, cut)
        merged += 1


def calibrate_factor(category_map: CategoricalRaster, factor: ContinuousRaster,
                     bins: int = 10) -> CalibrationTable:
    """Compare each category's distribution over factor quantile bins to a homogeneous one.

    ``expected[c, b] = count(c) * frac(b)``; the standardized residual
    ``(obs - exp) / sqrt(exp)`` is tested two-sided at 99% and 99.9%.
    Propensity is ``obs / (obs + exp)``, with the part above 0.5 stretched so
    that a category entirely inside bin ``b`` scores 1 there.
    """
    align_check([category_map, factor])
    if bins < 2:
        raise ConfigError("calibration needs at least 2 bins")
    valid = category_map.valid & factor.valid
    x = factor.values[valid]
    codes_px = category_map.values[valid]
    if x.size == 0:
        raise DataError("no cell is valid in both the map and the factor")
    edges = np.unique(np.quantile(x, np.linspace(0.0, 1.0, bins + 1)))
    merged = bins + 1 - edges.size
    if edges.size < 3:
        raise DataError(f"factor {factor.name!r} is (nearly) constant; cannot bin it")
    edges, idx, extra = _merge_empty_bins(x, edges)
    merged += extra
    if merged:
        warnings.warn(f"factor {factor.name!r}: merged {merged} empty/tied bins", stacklevel=2)
    nb = edges.size - 1
    legend_codes = category_map.legend.codes
    k = len(legend_codes)
    observed = np.bincount((codes_px - 1) * nb + idx, minlength=k * nb).reshape(k, nb)
    frac = observed.sum(axis=0) / x.size
    n_c = observed.sum(axis=1)
    expected = n_c[:, None] * frac[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(expected > 0, (observed - expected) / np.sqrt(expected), 0.0)
        r = np.where(observed + expected > 0, observed / (observed + expected), 0.5)
        r_max = 1.0 / (1.0 + frac)[None, :]
        upper = 0.5 + 0.5 * (r - 0.5) / (r_max - 0.5)
    propensity = np.where(r > 0.5, np.minimum(upper, 1.0), r)
    return CalibrationTable(factor.name, tuple(legend_codes), edges, observed, expected, z,
                            np.abs(z) > Z99, np.abs(z) > Z999, propensity, merged)


def _weighted_percentile(x, w, q):
    cw = np.cumsum(w)
    cw = cw / cw[-1]
    return float(np.interp(q, cw, x))


def fuzzy_from_calibration(table: CalibrationTable, code: int,
                           family: str = "sigmoidal") -> Optional[FuzzySpec]:
    """Monotone ramp fitted to a category's propensity profile.

    Returns ``None`` when no bin departs from homogeneity at 99%: the factor
    carries no significant signal for this category.
    """
    i = table.row(code)
    if not table.flag99[i].any() or table.observed[i].sum() == 0:
        return None
    p = table.propensity[i]
    x = table.centers
    direction = "increasing" if (p * x).sum() / p.sum() >= x.mean() else "decreasing"
    a = _weighted_percentile(x, p, 0.05)
    b = _weighted_percentile(x, p, 0.95)
    return FuzzySpec(direction, family, a, b)


def fuzzy_standardize(factor: ContinuousRaster, spec: FuzzySpec) -> np.ndarray:
    """Membership in [0, 1] (NaN where the factor is nodata)."""
    x = factor.values if isinstance(factor, ContinuousRaster) else np.asarray(factor, float)

    def ramp(lo, hi):
        with np.errstate(invalid="ignore", divide="ignore"):
            if hi > lo:
                t = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
            else:
                t = (x >= lo).astype(float)
        t = np.where(np.isnan(x), np.nan, t)
        if spec.family == "sigmoidal":
            return np.sin(t * np.pi / 2.0) ** 2
        return t

    if spec.shape == "increasing":
        return ramp(spec.a, spec.b)
    if spec.shape == "decreasing":
        return 1.0 - ramp(spec.a, spec.b)
    rise = ramp(spec.a, spec.b)
    fall = 1.0 - ramp(spec.c, spec.d)
    return np.minimum(rise, fall)


def principal_eigenvector(m, tol: float = 1e-12, max_iter: int = 10_000):
    """Power iteration for a positive matrix. Returns ``(w, lambda_max, iterations)``, sum(w) = 1."""
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    w = np.full(n, 1.0 / n)
    delta = np.inf
    for it in range(1, max_iter + 1):
        mw = m @ w
        lam = mw.sum()
        w_new = mw / lam
        delta = np.abs(w_new - w).max()
        w = w_new
        if delta < tol:
            return w, float(lam), it
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} iterations (last change {delta:.3g})",
        {"iterations": max_iter, "last_change": float(delta), "iterate": w.tolist()},
    )


def saaty_weights(m: SaatyMatrix, tol: float = 1e-12, max_iter: int = 10_000) -> SaatyResult:
    """Principal-eigenvector weights of a pairwise comparison matrix with its consistency ratio."""
    mat = m.m if isinstance(m, SaatyMatrix) else SaatyMatrix(m).m
    n = mat.shape[0]
    w, lam, it = principal_eigenvector(mat, tol, max_iter)
    ci = (lam - n) / (n - 1) if n > 1 else 0.0
    ri = RANDOM_INDEX.get(n, 1.59)
    cr = ci / ri if ri > 0 else 0.0
    if cr > 0.10:
        warnings.warn(f"pairwise comparisons inconsistent: CR = {cr:.3f} > 0.10", stacklevel=2)
    return SaatyResult(w, lam, ci, cr, it)


def _as_array(layer) -> np.ndarray:
    return layer.values if isinstance(layer, ContinuousRaster) else np.asarray(layer, dtype=float)


def owa_combine(factors: Sequence, spec: OwaSpec, constraints: Sequence = ()) -> np.ndarray:
    """Ordered weighted average of factor layers, zeroed wherever a constraint is False.

    Each value is scaled by ``factor_weight * n``, values are sorted ascending
    per pixel and dotted with ``order_weights``.  Not clipped: the result lies
    between the smallest and largest scaled value.
    """
    layers = np.stack([_as_array(f) for f in factors])
    n = layers.shape[0]
    if spec.factor_weights.size != n:
        raise ConfigError(f"{spec.factor_weights.size} factor weights for {n} factors")
    scaled = layers * (spec.factor_weights * n)[:, None, None]
    ordered = np.sort(scaled, axis=0)
    out = np.tensordot(spec.order_weights, ordered, axes=1)
    out[np.isnan(layers).any(axis=0)] = np.nan
    for mask in constraints:
        out = np.where(np.asarray(mask, dtype=bool), out, 0.0 * out)
    return out


def build_suitability(category: int, factors: Sequence[ContinuousRaster],
                      calibrations: Sequence[CalibrationTable], saaty: SaatyMatrix,
                      order_weights, constraints: Sequence = (),
                      fuzzy: Optional[Mapping[str, FuzzySpec]] = None,
                      family: str = "sigmoidal") -> np.ndarray:
    """Suitability layer in [0, 1] for one category.

    Factors whose calibration shows no significant departure (and that have no
    manual fuzzy override) contribute a neutral membership of 1.
    """
    if not (len(factors) == len(calibrations) == saaty.m.shape[0]):
        raise ConfigError("factors, calibrations and comparison matrix sizes differ")
    fuzzy = dict(fuzzy or {})
    memberships = []
    for f, table in zip(factors, calibrations):
        spec = fuzzy.get(f.name) or fuzzy_from_calibration(table, category, family)
        if spec is None:
            memberships.append(np.where(np.isnan(f.values), np.nan, 1.0))
        else:
            memberships.append(fuzzy_standardize(f, spec))
    weights = saaty_weights(saaty).weights
    owa = OwaSpec(weights, np.asarray(order_weights, dtype=float))
    out = owa_combine(memberships, owa, constraints)
    return np.clip(out, 0.0, 1.0)
