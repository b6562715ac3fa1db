"""Markov transition analysis between dated land-cover maps."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError
from .raster import CategoricalRaster, align_check


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Row-stochastic transition probabilities over ``dt`` years.

    ``counts`` is ``None`` for matrices that were derived (rescaled) rather
    than tallied.
    """

    p: np.ndarray
    dt: int
    counts: Optional[np.ndarray] = None
    flags: tuple = field(default=())

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ConfigError(f"transition matrix must be square, got shape {p.shape}")
        if (p < 0).any() or (p > 1).any():
            raise ConfigError("transition probabilities must lie in [0, 1]")
        if not np.allclose(p.sum(axis=1), 1.0, atol=1e-9, rtol=0):
            raise ConfigError(f"transition rows must sum to 1, got {p.sum(axis=1)}")
        if self.dt < 1:
            raise ConfigError("transition interval dt must be >= 1 year")
        p.flags.writeable = False
        object.__setattr__(self, "p", p)
        if self.counts is not None:
            c = np.array(self.counts, dtype=np.int64)
            c.flags.writeable = False
            object.__setattr__(self, "counts", c)
        object.__setattr__(self, "flags", tuple(self.flags))

    @property
    def k(self) -> int:
        return self.p.shape[0]


def estimate_transition(map_t0: CategoricalRaster, map_t1: CategoricalRaster) -> TransitionMatrix:
    """Tally code-to-code transitions over pixels valid at both dates.

    Categories absent at ``t0`` get an identity row (self-persistence) and a
    warning.
    """
    align_check([map_t0, map_t1])
    if map_t0.legend.k != map_t1.legend.k:
        raise DataError("maps use legends of different sizes")
    if map_t0.date is None or map_t1.date is None:
        raise DataError("both maps need a date to estimate a transition interval")
    if not map_t0.date < map_t1.date:
        raise DataError(f"dates must increase: {map_t0.date} -> {map_t1.date}")
    k = map_t0.legend.k
    both = map_t0.valid & map_t1.valid
    flat = (map_t0.values[both].astype(np.int64) - 1) * k + (map_t1.values[both] - 1)
    counts = np.bincount(flat, minlength=k * k).reshape(k, k)
    row = counts.sum(axis=1)
    p = np.zeros((k, k))
    empty = row == 0
    p[~empty] = counts[~empty] / row[~empty, None]
    flags = []
    if empty.any():
        idx = np.flatnonzero(empty)
        p[idx, idx] = 1.0
        codes = [int(i) + 1 for i in idx]
        warnings.warn(f"no pixels of codes {codes} at {map_t0.date}; using self-persistence rows",
                      stacklevel=2)
        flags.append(f"empty_rows:{','.join(map(str, codes))}")
    return TransitionMatrix(p, int(map_t1.date - map_t0.date), counts, tuple(flags))


def _renormalize(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, 0.0, None)
    s = p.sum(axis=1, keepdims=True)
    return p / s


def rescale_transition(P: TransitionMatrix, target_dt: int) -> TransitionMatrix:
    """Raise ``P`` to the power ``target_dt / P.dt``.

    Integer exponents use an exact matrix power.  Fractional exponents use the
    eigendecomposition, keep the real part, clip negatives to 0 and renormalize
    rows.  A defective (ill-conditioned eigenbasis) matrix falls back to a
    one-year step ``I + (P - I) / dt`` raised to ``target_dt``; the returned
    matrix carries the ``fallback_linear`` flag.
    """
    if int(target_dt) != target_dt or target_dt < 1:
        raise ConfigError(f"target_dt must be an integer >= 1, got {target_dt}")
    target_dt = int(target_dt)
    expo = Fraction(target_dt, P.dt)
    absorbing = np.flatnonzero(np.diag(P.p) == 1.0)
    flags = []
    if expo.denominator == 1:
        out = np.array(np.linalg.matrix_power(P.p, int(expo)))
    else:
        vals, vecs = np.linalg.eig(P.p)
        cond = np.linalg.cond(vecs)
        if not np.isfinite(cond) or cond > 1e10:
            yearly = np.eye(P.k) + (P.p - np.eye(P.k)) / P.dt
            out = np.linalg.matrix_power(yearly, target_dt)
            flags.append("fallback_linear")
        else:
            powered = vals.astype(complex) ** float(expo)
            out = (vecs @ np.diag(powered) @ np.linalg.inv(vecs)).real
            if (out < 0).any():
                flags.append("clipped_negative")
        out = _renormalize(out)
    # absorbing states stay exactly absorbing
    out[absorbing] = 0.0
    out[absorbing, absorbing] = 1.0
    return TransitionMatrix(out, target_dt, None, tuple(P.flags) + tuple(flags))


def conditional_probability_maps(map_t1: CategoricalRaster, P: TransitionMatrix) -> np.ndarray:
    """Per-category Markov probability at the projected date, shape ``(K, rows, cols)``.

    Layer ``c`` at a pixel of code ``i`` is ``P[i, c]``; nodata cells are NaN.
    """
    if P.k != map_t1.legend.k:
        raise DataError(f"transition matrix has {P.k} states, legend has {map_t1.legend.k}")
    out = np.full((P.k,) + map_t1.shape, np.nan)
    valid = map_t1.valid
    rows = P.p[map_t1.values[valid] - 1]
    out[:, valid] = rows.T
    return out


def largest_remainder(real: np.ndarray, total: int) -> np.ndarray:
    """Round non-negative reals to integers summing to ``total``.

    Remainders are ranked descending; ties go to the lower index.
    """
    real = np.asarray(real, dtype=float)
    base = np.floor(real).astype(np.int64)
    short = int(total - base.sum())
    if short < 0:
        # float noise pushed the floors over the total; trim smallest remainders first
        order = np.lexsort((np.arange(real.size), real - base))
        for i in order[:-short]:
            base[i] -= 1
        return base
    order = np.lexsort((np.arange(real.size), -(real - base)))
    base[order[:short]] += 1
    return base


def expected_areas(map_t1: CategoricalRaster, P: TransitionMatrix) -> np.ndarray:
    """Pixel quota per category: ``counts(map_t1) @ P`` rounded to the valid total."""
    if P.k != map_t1.legend.k:
        raise DataError(f"transition matrix has {P.k} states, legend has {map_t1.legend.k}")
    counts = map_t1.counts()
    real = counts.astype(float) @ P.p
    return largest_remainder(real, int(counts.sum()))


def pin_constant_codes(P: TransitionMatrix, constant_codes) -> TransitionMatrix:
    """Force constant categories to be closed: identity rows and no inflow."""
    p = np.array(P.p)
    idx = [c - 1 for c in constant_codes]
    if not idx:
        return P
    for i in idx:
        p[i] = 0.0
        p[i, i] = 1.0
    others = [i for i in range(P.k) if i not in idx]
    for i in others:
        p[i, idx] = 0.0
        s = p[i].sum()
        if s == 0:
            p[i, i] = 1.0
        else:
            p[i] /= s
    return TransitionMatrix(p, P.dt, P.counts, P.flags)


def save_transition_csv(P: TransitionMatrix, path, legend=None) -> None:
    labels = [str(i + 1) for i in range(P.k)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["section", "from"] + labels)
        w.writerow(["dt", ""] + [str(P.dt)] + [""] * (P.k - 1))
        if legend is not None:
            w.writerow(["name", ""] + [legend.names[i + 1] for i in range(P.k)])
        if P.counts is not None:
            for i in range(P.k):
                w.writerow(["count", labels[i]] + [str(int(x)) for x in P.counts[i]])
        for i in range(P.k):
            w.writerow(["probability", labels[i]] + [repr(float(x)) for x in P.p[i]])


def load_transition_csv(path) -> TransitionMatrix:
    counts, probs, dt = [], [], None
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        k = len(header) - 2
        for rec in rd:
            if rec[0] == "dt":
                dt = int(rec[2])
            elif rec[0] == "count":
                counts.append([int(x) for x in rec[2:2 + k]])
            elif rec[0] == "probability":
                probs.append([float(x) for x in rec[2:2 + k]])
    if dt is None or len(probs) != k:
        raise DataError(f"{path}: incomplete transition matrix file")
    return TransitionMatrix(np.array(probs), dt, np.array(counts) if counts else None)
