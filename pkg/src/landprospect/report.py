"""Prediction reports: predicted map, probability stack and provenance."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError
from .raster import CategoricalRaster, ContinuousRaster, Legend, load_grid, save_grid

REPORT_VERSION = 1


@dataclass
class PredictionReport:
    model: str
    predicted: CategoricalRaster
    probabilities: Optional[np.ndarray] = None  # (K, rows, cols), NaN at nodata
    params: dict = field(default_factory=dict)
    seed: Optional[int] = None
    flags: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def write(self, out_dir, legend: Optional[Legend] = None) -> dict:
        """Write ``predicted.grid``, ``prob_<code>.grid`` and ``report.json``; return paths."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        legend = legend or self.predicted.legend
        files = {"predicted": "predicted.grid"}
        save_grid(self.predicted, out / files["predicted"])
        prob_files = {}
        if self.probabilities is not None:
            for i, code in enumerate(legend.codes):
                name = f"prob_{code}.grid"
                layer = ContinuousRaster(self.probabilities[i], name=f"probability_{code}",
                                         cell_size=self.predicted.cell_size)
                save_grid(layer, out / name)
                prob_files[str(code)] = name
        doc = {
            "version": REPORT_VERSION,
            "model": self.model,
            "date": self.predicted.date,
            "seed": self.seed,
            "params": self.params,
            "flags": list(self.flags),
            "files": {"predicted": files["predicted"], "probabilities": prob_files},
            "hashes": {name: file_sha256(out / name)
                       for name in [files["predicted"], *prob_files.values()]},
        }
        (out / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")
        return {"report": out / "report.json", "predicted": out / files["predicted"],
                **{f"prob_{k}": out / v for k, v in prob_files.items()}}

    @classmethod
    def read(cls, out_dir, legend: Optional[Legend] = None) -> "PredictionReport":
        out = Path(out_dir)
        meta_path = out / "report.json"
        if not meta_path.exists():
            raise DataError(f"{out}: no report.json")
        doc = json.loads(meta_path.read_text())
        for key in ("model", "files", "params"):
            if key not in doc:
                raise DataError(f"{meta_path}: missing key {key!r}")
        predicted = load_grid(out / doc["files"]["predicted"], "categorical", legend)
        probs = None
        if doc["files"].get("probabilities"):
            layers = [load_grid(out / doc["files"]["probabilities"][str(c)], "continuous").values
                      for c in predicted.legend.codes]
            probs = np.stack(layers)
        return cls(doc["model"], predicted, probs, doc["params"], doc.get("seed"),
                   doc.get("flags", []))


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (set, frozenset, tuple)):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
