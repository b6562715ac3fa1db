"""Accuracy, residual and cross-model agreement analyses, plus map rendering."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .errors import DataError
from .raster import NODATA, CategoricalRaster, Legend, align_check

AGREEMENT_COLUMNS = ("all", "A+B", "A+C", "B+C", "A only", "B only", "C only", "none")
# correctness triple (a, b, c) -> column index
_TRIPLE_TO_COLUMN = {(1, 1, 1): 0, (1, 1, 0): 1, (1, 0, 1): 2, (0, 1, 1): 3,
                     (1, 0, 0): 4, (0, 1, 0): 5, (0, 0, 1): 6, (0, 0, 0): 7}
AGREEMENT_COLORS = ((0, 110, 0), (70, 130, 220), (150, 90, 200), (0, 170, 170),
                    (240, 200, 40), (255, 140, 0), (220, 80, 150), (200, 30, 30))
HISTOGRAM_BUCKETS = ("1", "2", "3", "4 or 5", "unranked")
NODATA_COLOR = (255, 255, 255)


def _pct(num, den) -> float:
    return float(Fraction(int(num) * 100, int(den))) if den else float("nan")


def surface_percentages(map_: CategoricalRaster) -> np.ndarray:
    """Percent of valid pixels per legend code."""
    counts = map_.counts()
    total = counts.sum()
    if total == 0:
        raise DataError("map has no valid pixel")
    return counts * 100.0 / total


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # real on rows, predicted on columns

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def correct(self) -> int:
        return int(np.trace(self.counts))

    @property
    def accuracy(self) -> float:
        return _pct(self.correct, self.total)


def confusion_matrix(real: CategoricalRaster, pred: CategoricalRaster) -> ConfusionMatrix:
    align_check([real, pred])
    k = real.legend.k
    both = real.valid & pred.valid
    flat = (real.values[both].astype(np.int64) - 1) * k + (pred.values[both] - 1)
    return ConfusionMatrix(np.bincount(flat, minlength=k * k).reshape(k, k))


def global_accuracy(real: CategoricalRaster, pred: CategoricalRaster) -> float:
    return confusion_matrix(real, pred).accuracy


def proportional_random_baseline(real: CategoricalRaster) -> float:
    """Expected accuracy (percent) of a random map with the real category shares: sum of squared fractions."""
    frac = real.counts() / real.counts().sum()
    return float((frac ** 2).sum() * 100.0)


@dataclass
class Residuals:
    by_category: dict  # code -> percent mispredicted, None if the code is absent from the real map
    global_residual: float
    mispredicted: int
    total: int


def residuals_by_category(real: CategoricalRaster, pred: CategoricalRaster) -> Residuals:
    cm = confusion_matrix(real, pred)
    out = {}
    for i, code in enumerate(real.legend.codes):
        n = int(cm.counts[i].sum())
        out[code] = None if n == 0 else _pct(n - cm.counts[i, i], n)
    wrong = cm.total - cm.correct
    return Residuals(out, _pct(wrong, cm.total), wrong, cm.total)


@dataclass
class ResidualHistogram:
    counts: dict  # bucket label -> pixel count
    total_pixels: int

    @property
    def percents(self) -> dict:
        return {b: _pct(c, self.total_pixels) for b, c in self.counts.items()}

    @property
    def total_residual(self) -> float:
        return _pct(sum(self.counts.values()), self.total_pixels)


def ordinal_residual_histogram(real: CategoricalRaster, pred: CategoricalRaster,
                               legend: Optional[Legend] = None) -> ResidualHistogram:
    """Mispredicted surface by openness-rank distance.

    Distances 4 and above share the last bucket; pairs involving an unranked
    (constant) code are counted under ``unranked`` so the buckets always add up
    to the global residual.
    """
    align_check([real, pred])
    legend = legend or real.legend
    both = real.valid & pred.valid
    r, p = real.values[both], pred.values[both]
    wrong = r != p
    rank = np.zeros(legend.k + 1, dtype=np.int64)
    for c in legend.categories:
        rank[c.code] = legend.rank(c.code) or 0
    rr, pr = rank[r[wrong]], rank[p[wrong]]
    ranked = (rr > 0) & (pr > 0)
    dist = np.abs(rr - pr)[ranked]
    counts = {
        "1": int((dist == 1).sum()),
        "2": int((dist == 2).sum()),
        "3": int((dist == 3).sum()),
        "4 or 5": int((dist >= 4).sum()),
        "unranked": int((~ranked).sum()),
    }
    return ResidualHistogram(counts, int(both.sum()))


@dataclass
class AgreementDecomposition:
    codes: tuple
    counts: np.ndarray  # (K, 8) pixels per real code and correctness pattern
    labels: tuple = ("A", "B", "C")

    @property
    def overall_counts(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def row_percents(self) -> dict:
        """Percent rows per real code present, plus ``"total"``."""
        out = {}
        for i, code in enumerate(self.codes):
            n = self.counts[i].sum()
            if n:
                out[code] = np.array([_pct(c, n) for c in self.counts[i]])
        tot = self.overall_counts
        out["total"] = np.array([_pct(c, tot.sum()) for c in tot])
        return out

    def column_names(self) -> list:
        a, b, c = self.labels
        return [name.replace("A", a).replace("B", b).replace("C", c) if name not in ("all", "none")
                else name for name in AGREEMENT_COLUMNS]


def agreement_classes(real: CategoricalRaster, predA: CategoricalRaster, predB: CategoricalRaster,
                      predC: CategoricalRaster) -> np.ndarray:
    """Per-pixel agreement column index (0..7), -1 where any map is nodata."""
    align_check([real, predA, predB, predC])
    valid = real.valid & predA.valid & predB.valid & predC.valid
    a = (predA.values == real.values).astype(int)
    b = (predB.values == real.values).astype(int)
    c = (predC.values == real.values).astype(int)
    lut = np.zeros(8, dtype=np.int64)
    for (x, y, z), col in _TRIPLE_TO_COLUMN.items():
        lut[4 * x + 2 * y + z] = col
    out = lut[4 * a + 2 * b + c]
    out[~valid] = -1
    return out


def cross_model_agreement(real: CategoricalRaster, predA: CategoricalRaster, predB: CategoricalRaster,
                          predC: CategoricalRaster, labels=("A", "B", "C")) -> AgreementDecomposition:
    classes = agreement_classes(real, predA, predB, predC)
    ok = classes >= 0
    k = real.legend.k
    flat = (real.values[ok].astype(np.int64) - 1) * 8 + classes[ok]
    counts = np.bincount(flat, minlength=k * 8).reshape(k, 8)
    return AgreementDecomposition(real.legend.codes, counts, tuple(labels))


@dataclass
class SumCheck:
    label: str
    computed: float
    stated: float
    drift: float
    rounding_drift: bool  # |drift| small enough to be display rounding, but nonzero
    consistent: bool


def check_stated_total(label: str, parts: Sequence[float], stated: float, decimals: int = 1) -> SumCheck:
    """Compare the exact sum of displayed parts with a displayed total.

    A nonzero drift no larger than one unit of the last displayed decimal per
    summand is flagged as rounding drift rather than an inconsistency.
    """
    computed = float(sum(Fraction(str(p)) for p in parts))
    drift = round(computed - stated, decimals + 2)
    unit = 10.0 ** -decimals
    tolerance = 0.5 * unit * len(parts) + 1e-12
    rounding = drift != 0 and abs(drift) <= tolerance
    return SumCheck(label, computed, stated, drift, rounding, abs(drift) <= tolerance)


def read_table_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _f(x) -> str:
    return "" if x is None or (isinstance(x, float) and np.isnan(x)) else f"{x:.4f}"


def write_surface_table(path, real: CategoricalRaster, preds: dict) -> None:
    legend = real.legend
    cols = {"real": surface_percentages(real)}
    cols.update({name: surface_percentages(p) for name, p in preds.items()})
    rows = [[code, legend.names[code]] + [_f(cols[n][i]) for n in cols]
            for i, code in enumerate(legend.codes)]
    _write_rows(path, ["code", "category"] + list(cols), rows)


def write_residual_table(path, real: CategoricalRaster, preds: dict) -> None:
    legend = real.legend
    res = {name: residuals_by_category(real, p) for name, p in preds.items()}
    header = ["model", "global_residual", "mispredicted", "total"] + [f"{c}:{legend.names[c]}" for c in legend.codes]
    rows = [[name, _f(r.global_residual), r.mispredicted, r.total] + [_f(r.by_category[c]) for c in legend.codes]
            for name, r in res.items()]
    _write_rows(path, header, rows)


def write_histogram_table(path, real: CategoricalRaster, preds: dict) -> None:
    hists = {name: ordinal_residual_histogram(real, p) for name, p in preds.items()}
    rows = [[b] + [_f(h.percents[b]) for h in hists.values()] for b in HISTOGRAM_BUCKETS]
    rows.append(["total"] + [_f(h.total_residual) for h in hists.values()])
    _write_rows(path, ["distance"] + list(hists), rows)


def write_agreement_table(path, dec: AgreementDecomposition, legend: Legend) -> None:
    rows = []
    for key, pct in dec.row_percents().items():
        name = "total" if key == "total" else legend.names[key]
        rows.append([key, name] + [_f(x) for x in pct] + [_f(float(pct.sum()))])
    _write_rows(path, ["code", "category"] + dec.column_names() + ["row_sum"], rows)


def _default_palette(n: int) -> list:
    warnings.warn("legend has no colour table; using the default palette", stacklevel=3)
    base = [(31, 119, 180), (255, 127, 14), (44, 160, 44), (214, 39, 40), (148, 103, 189),
            (140, 86, 75), (227, 119, 194), (127, 127, 127), (188, 189, 34), (23, 190, 207)]
    return [base[i % len(base)] for i in range(n)]


def render_classes(classes: np.ndarray, palette: Sequence, path, scale: int = 1,
                   legend_strip: bool = True) -> np.ndarray:
    """Write an indexed-class array (-1 = nodata) as PNG; return the RGB map region.

    The map occupies the top ``rows*scale`` pixel rows; an optional strip of
    colour swatches, one per class, is appended below it.
    """
    classes = np.asarray(classes)
    lut = np.array(list(palette) + [NODATA_COLOR], dtype=np.uint8)
    rgb = lut[np.where(classes < 0, len(palette), classes)]
    if scale > 1:
        rgb = np.repeat(np.repeat(rgb, scale, axis=0), scale, axis=1)
    img = rgb
    if legend_strip:
        h = max(4, 2 * scale)
        width = rgb.shape[1]
        strip = np.full((h + 2, width, 3), 255, dtype=np.uint8)
        sw = max(1, width // max(len(palette), 1))
        for i, color in enumerate(palette):
            strip[1:h + 1, i * sw:min((i + 1) * sw, width)] = color
        img = np.vstack([rgb, strip])
    Image.fromarray(img, mode="RGB").save(path, format="PNG", optimize=False)
    return rgb


def render_map(map_: CategoricalRaster, path, scale: int = 1, legend_strip: bool = True) -> np.ndarray:
    """Render a land-cover map with the legend colours (default palette if none)."""
    colors = map_.legend.colors()
    palette = [colors[c] for c in map_.legend.codes] if colors else _default_palette(map_.legend.k)
    classes = np.where(map_.values == NODATA, -1, map_.values - 1)
    return render_classes(classes, palette, path, scale, legend_strip)


def render_agreement(classes: np.ndarray, path, scale: int = 1, legend_strip: bool = True) -> np.ndarray:
    return render_classes(classes, AGREEMENT_COLORS, path, scale, legend_strip)


def count_colors(rgb: np.ndarray, palette: Sequence) -> list:
    """Pixels of each palette colour in an RGB array."""
    flat = rgb.reshape(-1, 3)
    return [int((flat == np.asarray(c, dtype=np.uint8)).all(axis=1).sum()) for c in palette]


def write_outputs(out_dir, real: CategoricalRaster, preds: dict, scale: int = 2) -> dict:
    """All comparison tables and maps for three named predictions."""
    if len(preds) != 3:
        raise DataError("the comparison needs exactly three predictions")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = list(preds)
    align_check([real, *preds.values()])
    paths = {
        "surface": out / "table1_surface.csv",
        "residuals": out / "table2_residuals.csv",
        "histogram": out / "table3_ordinal_residuals.csv",
        "agreement": out / "table4_agreement.csv",
        "accuracy": out / "accuracy.csv",
    }
    write_surface_table(paths["surface"], real, preds)
    write_residual_table(paths["residuals"], real, preds)
    write_histogram_table(paths["histogram"], real, preds)
    dec = cross_model_agreement(real, *preds.values(), labels=names)
    write_agreement_table(paths["agreement"], dec, real.legend)
    base = proportional_random_baseline(real)
    _write_rows(paths["accuracy"], ["model", "accuracy", "baseline", "margin"],
                [[n, _f(global_accuracy(real, p)), _f(base), _f(global_accuracy(real, p) - base)]
                 for n, p in preds.items()])
    paths["map_real"] = out / "map_real.png"
    render_map(real, paths["map_real"], scale)
    for n, p in preds.items():
        paths[f"map_{n}"] = out / f"map_{n}.png"
        render_map(p, paths[f"map_{n}"], scale)
    paths["map_agreement"] = out / "map_agreement.png"
    render_agreement(agreement_classes(real, *preds.values()), paths["map_agreement"], scale)
    return paths
