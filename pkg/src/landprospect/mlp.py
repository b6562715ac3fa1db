"""One-hidden-layer perceptron trained by backpropagation on squared error."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, ConvergenceError, DataError
from .features import FeatureMatrix, NeighborhoodSpec, frontier_pixels, modelled_mask, pixel_features
from .raster import CategoricalRaster, ContinuousRaster
from .report import PredictionReport

WEIGHTS_MAGIC = "landprospect-mlp"
WEIGHTS_VERSION = 1


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(eq=False)
class MlpWeights:
    """``w1``: q x (d+1), last column the hidden biases; ``w2``: c x (q+1), last column the output biases."""

    w1: np.ndarray
    w2: np.ndarray
    output: str = "logistic"
    codes: Optional[tuple] = None

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=float)
        self.w2 = np.asarray(self.w2, dtype=float)
        if self.w1.ndim != 2 or self.w2.ndim != 2 or self.w2.shape[1] != self.w1.shape[0] + 1:
            raise ConfigError(f"inconsistent weight shapes {self.w1.shape} and {self.w2.shape}")
        if self.output not in ("logistic", "linear"):
            raise ConfigError(f"output must be 'logistic' or 'linear', got {self.output!r}")
        if not (np.isfinite(self.w1).all() and np.isfinite(self.w2).all()):
            raise ConfigError("weights must be finite")

    @property
    def d(self) -> int:
        return self.w1.shape[1] - 1

    @property
    def q(self) -> int:
        return self.w1.shape[0]

    @property
    def c(self) -> int:
        return self.w2.shape[0]

    def copy(self) -> "MlpWeights":
        return MlpWeights(self.w1.copy(), self.w2.copy(), self.output, self.codes)

    def save(self, path) -> None:
        lines = [f"{WEIGHTS_MAGIC} {WEIGHTS_VERSION}", f"d {self.d}", f"q {self.q}", f"c {self.c}",
                 f"output {self.output}"]
        if self.codes is not None:
            lines.append("codes " + " ".join(str(int(c)) for c in self.codes))
        lines.append("w1")
        lines += [" ".join(repr(float(x)) for x in row) for row in self.w1]
        lines.append("w2")
        lines += [" ".join(repr(float(x)) for x in row) for row in self.w2]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "MlpWeights":
        lines = Path(path).read_text().splitlines()
        magic = lines[0].split()
        if magic[0] != WEIGHTS_MAGIC or int(magic[1]) != WEIGHTS_VERSION:
            raise DataError(f"{path}: not a version-{WEIGHTS_VERSION} weights file")
        head, pos = {}, 1
        while lines[pos] not in ("w1",):
            key, _, rest = lines[pos].partition(" ")
            head[key] = rest
            pos += 1
        d, q, c = int(head["d"]), int(head["q"]), int(head["c"])
        w1 = np.array([[float(x) for x in ln.split()] for ln in lines[pos + 1:pos + 1 + q]])
        pos += 1 + q
        if lines[pos] != "w2":
            raise DataError(f"{path}: expected 'w2' section")
        w2 = np.array([[float(x) for x in ln.split()] for ln in lines[pos + 1:pos + 1 + c]])
        if w1.shape != (q, d + 1) or w2.shape != (c, q + 1):
            raise DataError(f"{path}: weight blocks do not match the declared dimensions")
        codes = tuple(int(x) for x in head["codes"].split()) if "codes" in head else None
        return cls(w1, w2, head.get("output", "logistic"), codes)


def init_weights(d: int, q: int, c: int, seed: int, scale: float = 1.0,
                 output: str = "logistic") -> MlpWeights:
    """Uniform initialisation in ``±scale/sqrt(fan_in)``."""
    rng = np.random.default_rng(seed)
    w1 = rng.uniform(-1.0, 1.0, (q, d + 1)) * scale / np.sqrt(max(d, 1))
    w2 = rng.uniform(-1.0, 1.0, (c, q + 1)) * scale / np.sqrt(q)
    return MlpWeights(w1, w2, output)


def _forward(w: MlpWeights, X: np.ndarray):
    h = sigmoid(X @ w.w1[:, :-1].T + w.w1[:, -1])
    z = h @ w.w2[:, :-1].T + w.w2[:, -1]
    o = sigmoid(z) if w.output == "logistic" else z
    return h, o


def mlp_forward(w: MlpWeights, x, return_hidden: bool = False):
    """Output scores for one feature vector (1-D) or a batch (2-D)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != w.d:
        raise DataError(f"feature vector has {X.shape[1]} entries, network expects {w.d}")
    h, o = _forward(w, X)
    if single:
        h, o = h[0], o[0]
    return (o, h) if return_hidden else o


def membership(w: MlpWeights, X) -> np.ndarray:
    """Outputs normalized to sum 1 per row (negative linear outputs clipped to 0)."""
    o = np.clip(np.atleast_2d(mlp_forward(w, X)), 0.0, None)
    s = o.sum(axis=1, keepdims=True)
    return np.where(s > 0, o / np.where(s > 0, s, 1.0), 1.0 / o.shape[1])


def mse_loss(w: MlpWeights, X: np.ndarray, T: np.ndarray) -> float:
    """Half mean over samples of the summed squared output error."""
    _, o = _forward(w, X)
    return float(0.5 * ((o - T) ** 2).sum() / X.shape[0])


def mse_gradient(w: MlpWeights, X: np.ndarray, T: np.ndarray):
    """Backpropagated gradient of :func:`mse_loss`; returns ``(loss, g1, g2)``."""
    n = X.shape[0]
    h, o = _forward(w, X)
    err = o - T
    loss = 0.5 * (err ** 2).sum() / n
    dz = err / n
    if w.output == "logistic":
        dz = dz * o * (1.0 - o)
    g2 = np.empty_like(w.w2)
    g2[:, :-1] = dz.T @ h
    g2[:, -1] = dz.sum(axis=0)
    da = (dz @ w.w2[:, :-1]) * h * (1.0 - h)
    g1 = np.empty_like(w.w1)
    g1[:, :-1] = da.T @ X
    g1[:, -1] = da.sum(axis=0)
    return float(loss), g1, g2


@dataclass(frozen=True)
class TrainConfig:
    seed: int
    learning_rate: float = 0.5
    momentum: float = 0.9
    lr_decay: float = 1.0
    max_epochs: int = 2000
    batch_size: Optional[int] = None
    patience: int = 200
    validation_fraction: float = 0.2
    init_scale: float = 1.0
    output: str = "logistic"

    def __post_init__(self):
        if self.seed is None:
            raise ConfigError("training needs an explicit seed")
        if self.learning_rate < 0 or not 0 <= self.momentum < 1 or not 0 < self.lr_decay <= 1:
            raise ConfigError("learning_rate >= 0, 0 <= momentum < 1 and 0 < lr_decay <= 1 required")
        if self.max_epochs < 0 or self.patience < 1:
            raise ConfigError("max_epochs >= 0 and patience >= 1 required")
        if not 0 <= self.validation_fraction < 1:
            raise ConfigError("validation_fraction must be in [0, 1)")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be positive")


@dataclass
class TrainResult:
    weights: MlpWeights
    curve: list = field(default_factory=list)  # (epoch, train_loss, val_loss or None)
    best_epoch: int = 0
    stopped_early: bool = False

    def curve_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "validation_loss"])
            for epoch, tr, va in self.curve:
                w.writerow([epoch, repr(tr), "" if va is None else repr(va)])


def mlp_train(X: np.ndarray, T: np.ndarray, arch, cfg: TrainConfig,
              init: Optional[MlpWeights] = None) -> TrainResult:
    """Gradient descent with momentum on :func:`mse_loss`.

    Full-batch unless ``cfg.batch_size`` is set.  A seeded fraction of rows is
    held out; training stops after ``patience`` epochs without validation
    improvement and the best weights are restored.
    """
    X = np.asarray(X, dtype=float)
    T = np.asarray(T, dtype=float)
    d, q, c = arch
    if X.shape[0] == 0:
        raise DataError("empty training set")
    if X.shape[1] != d or T.shape != (X.shape[0], c):
        raise DataError(f"data shapes {X.shape}/{T.shape} do not match architecture {arch}")
    rng = np.random.default_rng(cfg.seed)
    w = init.copy() if init is not None else init_weights(d, q, c, cfg.seed, cfg.init_scale, cfg.output)
    order = rng.permutation(X.shape[0])
    n_val = int(np.floor(cfg.validation_fraction * X.shape[0]))
    if n_val:
        val_idx, tr_idx = np.sort(order[:n_val]), np.sort(order[n_val:])
        Xv, Tv = X[val_idx], T[val_idx]
        Xt, Tt = X[tr_idx], T[tr_idx]
    else:
        Xt, Tt = X, T
    v1 = np.zeros_like(w.w1)
    v2 = np.zeros_like(w.w2)
    lr = cfg.learning_rate
    best = (np.inf, w.copy(), 0)
    curve = []
    since_best = 0
    stopped = False
    for epoch in range(1, cfg.max_epochs + 1):
        if cfg.batch_size is None or cfg.batch_size >= Xt.shape[0]:
            batches = [slice(None)]
        else:
            perm = rng.permutation(Xt.shape[0])
            batches = [perm[i:i + cfg.batch_size] for i in range(0, Xt.shape[0], cfg.batch_size)]
        for b in batches:
            loss, g1, g2 = mse_gradient(w, Xt[b], Tt[b])
            v1 = cfg.momentum * v1 - lr * g1
            v2 = cfg.momentum * v2 - lr * g2
            w.w1 = w.w1 + v1
            w.w2 = w.w2 + v2
        with np.errstate(over="ignore", invalid="ignore"):  # divergence is checked just below
            train_loss = mse_loss(w, Xt, Tt)
            val_loss = mse_loss(w, Xv, Tv) if n_val else None
        if not np.isfinite(train_loss) or not (np.isfinite(w.w1).all() and np.isfinite(w.w2).all()):
            raise ConvergenceError(f"training diverged at epoch {epoch}; lower the learning rate",
                                   {"epoch": epoch, "learning_rate": lr})
        curve.append((epoch, train_loss, val_loss))
        monitor = val_loss if n_val else train_loss
        if monitor < best[0]:
            best = (monitor, w.copy(), epoch)
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                stopped = True
                break
        lr *= cfg.lr_decay
    final = best[1] if curve else w
    final.codes = init.codes if init is not None else None
    return TrainResult(final, curve, best[2], stopped)


def train_on_dataset(fm: FeatureMatrix, hidden: int, cfg: TrainConfig) -> TrainResult:
    """Train a network whose outputs are the dataset's modelled codes."""
    T = fm.target_onehot()
    res = mlp_train(fm.X, T, (fm.d, hidden, len(fm.modelled_codes)), cfg)
    res.weights.codes = tuple(fm.modelled_codes)
    return res


def mlp_predict_map(w: MlpWeights, map_t: CategoricalRaster, factors: Sequence[ContinuousRaster],
                    spec: NeighborhoodSpec, stats: Optional[list] = None,
                    target_date: Optional[int] = None) -> PredictionReport:
    """Predict the next map: frontier pixels take the arg-max output, others persist.

    Ties go to the lower code.  The probability stack holds normalized outputs
    for every modelled pixel and indicator values for constant codes.
    """
    legend = map_t.legend
    codes = w.codes or legend.modelled_codes
    if len(codes) != w.c:
        raise DataError(f"network has {w.c} outputs for {len(codes)} codes")
    mask = modelled_mask(map_t, factors)
    probs = np.full((legend.k,) + map_t.shape, np.nan)
    probs[:, map_t.valid] = 0.0
    for code in legend.constant_codes:
        probs[code - 1][map_t.values == code] = 1.0
    pred = np.array(map_t.values)
    if mask.any():
        fm = pixel_features(map_t, factors, spec, mask, stats)
        mem = membership(w, fm.X)
        for j, code in enumerate(codes):
            probs[code - 1, fm.rows, fm.cols] = mem[:, j]
        best = np.asarray(codes)[np.argmax(mem, axis=1)]
        frontier = frontier_pixels(map_t)[fm.rows, fm.cols]
        pred[fm.rows[frontier], fm.cols[frontier]] = best[frontier]
    predicted = map_t.replace(values=pred, date=target_date, name="predicted")
    return PredictionReport("mlp", predicted, probs, {"hidden": w.q, "inputs": w.d,
                                                      "outputs": w.c, "output_units": w.output})
