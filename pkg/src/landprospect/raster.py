"""Grid data model, land-cover legend and the plain-text grid format.

Grid file layout (tokens are whitespace separated, header keys in this order)::

    ncols        <int>
    nrows        <int>
    cellsize     <float>
    nodata_value <number>
    date         <int>      # categorical grids only, optional
    name         <text>     # continuous grids only, optional
    <nrows lines of ncols values, row-major, north row first>

Categorical rasters hold legend codes ``1..K``; nodata cells are stored in
memory as ``0`` and written back as ``nodata_value``.  Continuous rasters
store nodata as ``NaN``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .errors import AlignmentError, ConfigError, DataError, GridParseError

PathLike = Union[str, Path]

NODATA = 0
DEFAULT_NODATA_VALUE = -9999
HEADER_KEYS = ("ncols", "nrows", "cellsize", "nodata_value")


@dataclass(frozen=True)
class Category:
    code: int
    name: str
    openness_rank: Optional[int] = None
    color: Optional[tuple] = None


@dataclass(frozen=True)
class Legend:
    """Ordered land-cover categories plus the codes held constant in modelling."""

    categories: tuple
    constant_codes: frozenset = frozenset()

    def __post_init__(self):
        cats = tuple(self.categories)
        object.__setattr__(self, "categories", cats)
        object.__setattr__(self, "constant_codes", frozenset(self.constant_codes))
        codes = [c.code for c in cats]
        if not codes:
            raise ConfigError("legend has no categories")
        if codes != list(range(1, len(codes) + 1)):
            raise ConfigError(f"legend codes must be contiguous from 1 in order, got {codes}")
        unknown = self.constant_codes - set(codes)
        if unknown:
            raise ConfigError(f"constant codes {sorted(unknown)} not in legend")
        ranks = [c.openness_rank for c in cats if c.code not in self.constant_codes]
        if any(r is None for r in ranks) or sorted(ranks) != list(range(1, len(ranks) + 1)):
            raise ConfigError(
                "openness ranks of modelled categories must be a permutation of "
                f"1..{len(ranks)}, got {ranks}"
            )

    @property
    def k(self) -> int:
        return len(self.categories)

    @property
    def codes(self) -> tuple:
        return tuple(c.code for c in self.categories)

    @property
    def modelled_codes(self) -> tuple:
        return tuple(c.code for c in self.categories if c.code not in self.constant_codes)

    @property
    def names(self) -> dict:
        return {c.code: c.name for c in self.categories}

    def rank(self, code: int) -> Optional[int]:
        if code in self.constant_codes:
            return None
        return self.categories[code - 1].openness_rank

    def colors(self) -> Optional[dict]:
        if any(c.color is None for c in self.categories):
            return None
        return {c.code: tuple(c.color) for c in self.categories}


def default_legend() -> Legend:
    """Mountain legend: seven modelled covers ranked closed→open, plus built-up."""
    cats = (
        Category(1, "conifer forest", 1, (0, 100, 0)),
        Category(2, "deciduous forest", 2, (60, 170, 60)),
        Category(3, "scrub", 3, (140, 150, 50)),
        Category(4, "broom heath", 4, (200, 165, 60)),
        Category(5, "grass heath", 5, (235, 220, 120)),
        Category(6, "meadow", 6, (150, 225, 120)),
        Category(7, "cultures", 7, (230, 120, 60)),
        Category(8, "built-up", None, (190, 0, 0)),
    )
    return Legend(cats, frozenset({8}))


def save_legend(legend: Legend, path: PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["code", "name", "openness_rank", "constant", "color"])
        for c in legend.categories:
            color = "" if c.color is None else "#%02x%02x%02x" % tuple(c.color)
            rank = "" if c.openness_rank is None else c.openness_rank
            w.writerow([c.code, c.name, rank, int(c.code in legend.constant_codes), color])


def load_legend(path: PathLike) -> Legend:
    cats, constant = [], set()
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            color = rec.get("color") or ""
            rgb = None
            if color:
                color = color.lstrip("#")
                rgb = tuple(int(color[i:i + 2], 16) for i in (0, 2, 4))
            rank = rec.get("openness_rank") or ""
            code = int(rec["code"])
            cats.append(Category(code, rec["name"], int(rank) if rank else None, rgb))
            if rec.get("constant", "0").strip() in ("1", "true", "True"):
                constant.add(code)
    return Legend(tuple(cats), frozenset(constant))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class CategoricalRaster:
    """Dated land-cover grid. ``values`` uses 0 for nodata."""

    values: np.ndarray
    legend: Legend
    date: Optional[int] = None
    cell_size: float = 1.0
    nodata_value: float = DEFAULT_NODATA_VALUE
    name: str = "landcover"

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.shape[0] == 0 or v.shape[1] == 0:
            raise DataError(f"categorical raster must be a non-empty 2-D grid, got shape {v.shape}")
        if not np.issubdtype(v.dtype, np.integer):
            if not np.all(np.equal(np.mod(v, 1), 0)):
                raise DataError("categorical raster values must be integers")
        v = v.astype(np.int32)
        bad = (v != NODATA) & ((v < 1) | (v > self.legend.k))
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise DataError(f"value {v[r, c]} at row {r}, col {c} is not a legend code")
        object.__setattr__(self, "values", _readonly(v))
        object.__setattr__(self, "cell_size", float(self.cell_size))

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return self.values != NODATA

    def counts(self) -> np.ndarray:
        """Pixel count per legend code (index 0 ↔ code 1)."""
        return np.bincount(self.values[self.valid], minlength=self.legend.k + 1)[1:]

    def replace(self, values=None, **kw) -> "CategoricalRaster":
        args = dict(values=self.values if values is None else values, legend=self.legend,
                    date=self.date, cell_size=self.cell_size,
                    nodata_value=self.nodata_value, name=self.name)
        args.update(kw)
        return CategoricalRaster(**args)


@dataclass(frozen=True, eq=False)
class ContinuousRaster:
    """Environmental factor layer; ``values`` uses NaN for nodata."""

    values: np.ndarray
    name: str = "factor"
    cell_size: float = 1.0
    nodata_value: float = DEFAULT_NODATA_VALUE

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] == 0 or v.shape[1] == 0:
            raise DataError(f"continuous raster must be a non-empty 2-D grid, got shape {v.shape}")
        if np.isinf(v).any():
            raise DataError(f"continuous raster {self.name!r} contains infinite values")
        object.__setattr__(self, "values", _readonly(v))
        object.__setattr__(self, "cell_size", float(self.cell_size))

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return ~np.isnan(self.values)

    def replace(self, values=None, **kw) -> "ContinuousRaster":
        args = dict(values=self.values if values is None else values, name=self.name,
                    cell_size=self.cell_size, nodata_value=self.nodata_value)
        args.update(kw)
        return ContinuousRaster(**args)


@dataclass(frozen=True, eq=False)
class ScenarioBundle:
    snapshots: tuple
    factors: tuple
    seed: int
    truth: dict = field(default_factory=dict)

    def __post_init__(self):
        snaps = tuple(self.snapshots)
        object.__setattr__(self, "snapshots", snaps)
        object.__setattr__(self, "factors", tuple(self.factors))
        if len(snaps) < 2:
            raise DataError("a scenario needs at least two snapshots")
        dates = [s.date for s in snaps]
        if any(d is None for d in dates) or any(b <= a for a, b in zip(dates, dates[1:])):
            raise DataError(f"snapshot dates must be strictly increasing, got {dates}")
        if any(s.legend != snaps[0].legend for s in snaps):
            raise DataError("snapshots must share one legend")
        align_check(list(snaps) + list(self.factors))

    @property
    def legend(self) -> Legend:
        return self.snapshots[0].legend

    @property
    def dates(self) -> list:
        return [s.date for s in self.snapshots]


def _layer_label(layer, index):
    name = getattr(layer, "name", None)
    if isinstance(layer, CategoricalRaster) and layer.date is not None:
        return f"{name}@{layer.date}"
    return name if name else f"#{index}"


def align_check(layers: Sequence) -> None:
    """Raise :class:`AlignmentError` unless all layers share rows, cols and cell size."""
    layers = list(layers)
    if not layers:
        raise DataError("align_check needs at least one layer")
    ref = layers[0]
    for i, layer in enumerate(layers[1:], start=1):
        for dim, a, b in (("rows", ref.rows, layer.rows),
                          ("cols", ref.cols, layer.cols),
                          ("cell_size", ref.cell_size, layer.cell_size)):
            if a != b:
                raise AlignmentError(_layer_label(layer, i), dim, a, b)


def _fmt(x: float) -> str:
    x = float(x)
    if x == 0.0 and math.copysign(1.0, x) < 0:
        return "-0.0"
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def save_grid(raster: Union[CategoricalRaster, ContinuousRaster], path: PathLike) -> None:
    """Write a raster in the plain-text grid format (see module docstring)."""
    lines = [
        f"ncols {raster.cols}",
        f"nrows {raster.rows}",
        f"cellsize {_fmt(raster.cell_size)}",
        f"nodata_value {_fmt(raster.nodata_value)}",
    ]
    nd = _fmt(raster.nodata_value)
    if isinstance(raster, CategoricalRaster):
        if raster.date is not None:
            lines.append(f"date {int(raster.date)}")
        for row in raster.values:
            lines.append(" ".join(nd if v == NODATA else str(int(v)) for v in row))
    else:
        lines.append(f"name {raster.name}")
        for row in raster.values:
            lines.append(" ".join(nd if np.isnan(v) else _fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_number(tok, path, row, col, what):
    try:
        return float(tok)
    except ValueError:
        raise GridParseError(f"cannot parse {what} {tok!r}", row=row, col=col, path=path) from None


def load_grid(path: PathLike, kind: str = "categorical", legend: Optional[Legend] = None):
    """Read a grid file as a :class:`CategoricalRaster` or :class:`ContinuousRaster`.

    Row/col numbers in parse errors are 0-based data coordinates.
    """
    if kind not in ("categorical", "continuous"):
        raise ConfigError(f"kind must be 'categorical' or 'continuous', got {kind!r}")
    path = Path(path)
    lines = path.read_text().splitlines()
    header = {}
    pos = 0
    for key in HEADER_KEYS:
        if pos >= len(lines):
            raise GridParseError(f"missing header key {key!r}", path=path)
        parts = lines[pos].split()
        if len(parts) != 2 or parts[0].lower() != key:
            raise GridParseError(f"expected header key {key!r}, found {lines[pos]!r}", path=path)
        header[key] = parts[1]
        pos += 1
    extra = {}
    while pos < len(lines) and lines[pos].split() and lines[pos].split()[0].lower() in ("date", "name"):
        key, _, rest = lines[pos].strip().partition(" ")
        extra[key.lower()] = rest.strip()
        pos += 1
    try:
        ncols, nrows = int(header["ncols"]), int(header["nrows"])
        cellsize = float(header["cellsize"])
        nodata = float(header["nodata_value"])
    except ValueError as exc:
        raise GridParseError(f"malformed header: {exc}", path=path) from None
    if ncols <= 0 or nrows <= 0:
        raise GridParseError(f"grid dimensions must be positive, got {nrows}x{ncols}", path=path)

    body = [ln for ln in lines[pos:] if ln.strip()]
    if len(body) != nrows:
        raise GridParseError(f"header declares {nrows} rows, found {len(body)}",
                             row=min(len(body), nrows), path=path)
    if kind == "categorical":
        legend = legend or default_legend()
        values = np.zeros((nrows, ncols), dtype=np.int32)
    else:
        values = np.empty((nrows, ncols), dtype=np.float64)
    for r, ln in enumerate(body):
        toks = ln.split()
        if len(toks) != ncols:
            raise GridParseError(f"expected {ncols} values, found {len(toks)}", row=r, path=path)
        for c, tok in enumerate(toks):
            x = _parse_number(tok, path, r, c, "value")
            if x == nodata:
                values[r, c] = NODATA if kind == "categorical" else np.nan
            elif kind == "categorical":
                if not x.is_integer() or not 1 <= x <= legend.k:
                    raise GridParseError(f"value {tok!r} is not a legend code", row=r, col=c, path=path)
                values[r, c] = int(x)
            else:
                values[r, c] = x
    if kind == "categorical":
        date = int(extra["date"]) if "date" in extra else None
        return CategoricalRaster(values, legend, date=date, cell_size=cellsize, nodata_value=nodata)
    return ContinuousRaster(values, name=extra.get("name", path.stem), cell_size=cellsize,
                            nodata_value=nodata)


def stack_valid(layers: Iterable) -> np.ndarray:
    """Cells valid in every layer."""
    mask = None
    for layer in layers:
        mask = layer.valid.copy() if mask is None else mask & layer.valid
    return mask
