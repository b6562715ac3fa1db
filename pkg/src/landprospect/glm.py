"""Penalized multinomial logit with a reference category, fitted by damped Newton-Raphson."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .errors import ConfigError, ConvergenceError, DataError, SeparationError
from .features import NeighborhoodSpec, assemble_dataset, modelled_mask, pixel_features
from .raster import CategoricalRaster, ContinuousRaster
from .report import PredictionReport


@dataclass(eq=False)
class LogitParams:
    """``log P(code) / P(reference) = alpha + gamma @ x`` for every non-reference code.

    ``codes`` lists the fitted categories in ascending order; the last one is
    the reference, whose parameters are implicitly zero.
    """

    alpha: np.ndarray  # (m,)
    gamma: np.ndarray  # (m, d)
    codes: tuple
    epsilon: float = 0.0
    columns: Optional[list] = None

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        self.gamma = np.asarray(self.gamma, dtype=float)
        if self.gamma.ndim == 1:
            self.gamma = self.gamma.reshape(self.alpha.size, -1)
        self.codes = tuple(int(c) for c in self.codes)
        if len(self.codes) != self.alpha.size + 1 or self.gamma.shape[0] != self.alpha.size:
            raise ConfigError("need one (alpha, gamma) row per non-reference code")
        if self.epsilon < 0:
            raise ConfigError("penalty epsilon must be >= 0")

    @property
    def reference_code(self) -> int:
        return self.codes[-1]

    @property
    def d(self) -> int:
        return self.gamma.shape[1]

    @property
    def theta(self) -> np.ndarray:
        return np.column_stack([self.alpha, self.gamma])

    @classmethod
    def zeros(cls, codes, d: int, epsilon: float = 0.0) -> "LogitParams":
        m = len(codes) - 1
        return cls(np.zeros(m), np.zeros((m, d)), tuple(codes), epsilon)

    def to_csv(self, path) -> None:
        cols = self.columns or [f"x{j}" for j in range(self.d)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["code", "role", "intercept"] + list(cols))
            for i, code in enumerate(self.codes[:-1]):
                w.writerow([code, "parameter", repr(float(self.alpha[i]))]
                           + [repr(float(x)) for x in self.gamma[i]])
            w.writerow([self.reference_code, "reference", "0.0"] + ["0.0"] * self.d)
            w.writerow(["", "epsilon", repr(float(self.epsilon))] + [""] * self.d)

    @classmethod
    def from_csv(cls, path) -> "LogitParams":
        alpha, gamma, codes, eps = [], [], [], 0.0
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd)
            for rec in rd:
                if rec[1] == "parameter":
                    codes.append(int(rec[0]))
                    alpha.append(float(rec[2]))
                    gamma.append([float(x) for x in rec[3:]])
                elif rec[1] == "reference":
                    ref = int(rec[0])
                elif rec[1] == "epsilon":
                    eps = float(rec[2])
        d = len(header) - 3
        return cls(np.array(alpha), np.array(gamma).reshape(len(alpha), d), tuple(codes) + (ref,),
                   eps, header[3:])


def _linear_scores(params: LogitParams, X: np.ndarray) -> np.ndarray:
    """(n, m+1) log-odds against the reference, reference column zero."""
    eta = X @ params.gamma.T + params.alpha
    return np.hstack([eta, np.zeros((X.shape[0], 1))])


def _softmax(eta: np.ndarray) -> np.ndarray:
    eta = eta - eta.max(axis=1, keepdims=True)
    e = np.exp(eta)
    return e / e.sum(axis=1, keepdims=True)


def logit_probabilities(params: LogitParams, x) -> np.ndarray:
    """Category probabilities over ``params.codes`` (log-sum-exp stabilized)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != params.d:
        raise DataError(f"feature vector has {X.shape[1]} entries, model expects {params.d}")
    p = _softmax(_linear_scores(params, X))
    return p[0] if single else p


def penalized_objective(params: LogitParams, X: np.ndarray, y_idx: np.ndarray) -> float:
    """Log-likelihood minus ``epsilon * ||(alpha, gamma)||^2``."""
    eta = _linear_scores(params, X)
    mx = eta.max(axis=1, keepdims=True)
    lse = (mx[:, 0] + np.log(np.exp(eta - mx).sum(axis=1)))
    ll = (eta[np.arange(X.shape[0]), y_idx] - lse).sum()
    return float(ll - params.epsilon * (params.theta ** 2).sum())


def objective_gradient(params: LogitParams, X: np.ndarray, y_idx: np.ndarray) -> np.ndarray:
    """Gradient of :func:`penalized_objective` w.r.t. ``theta = [alpha | gamma]``, shape (m, d+1)."""
    m = params.alpha.size
    Z = np.hstack([np.ones((X.shape[0], 1)), X])
    P = _softmax(_linear_scores(params, X))
    Y = np.zeros_like(P)
    Y[np.arange(X.shape[0]), y_idx] = 1.0
    return (Y - P)[:, :m].T @ Z - 2.0 * params.epsilon * params.theta


def _negative_hessian(P: np.ndarray, Z: np.ndarray, epsilon: float) -> np.ndarray:
    n, p1 = Z.shape
    m = P.shape[1] - 1
    H = np.empty((m * p1, m * p1))
    for a in range(m):
        for b in range(a, m):
            w = P[:, a] * ((a == b) - P[:, b])
            block = Z.T @ (Z * w[:, None])
            H[a * p1:(a + 1) * p1, b * p1:(b + 1) * p1] = block
            H[b * p1:(b + 1) * p1, a * p1:(a + 1) * p1] = block.T
    H[np.diag_indices_from(H)] += 2.0 * epsilon
    return H


@dataclass
class FitResult:
    params: LogitParams
    iterations: int
    grad_norm: float
    objective: float
    history: list = field(default_factory=list)  # objective after each accepted step, start included
    dropped_codes: tuple = ()


def fit_penalized(X: np.ndarray, y: np.ndarray, epsilon: float, codes: Optional[Sequence[int]] = None,
                  max_iter: int = 100, grad_tol: float = 1e-8, rel_tol: float = 1e-12,
                  blowup: float = 100.0, columns: Optional[list] = None) -> FitResult:
    """Maximize the penalized log-likelihood by Newton-Raphson with step halving.

    ``y`` holds category codes.  Codes listed in ``codes`` but absent from
    ``y`` are dropped with a warning (their probability is then 0); the largest
    remaining code is the reference.  With ``epsilon == 0`` a parameter
    exceeding ``blowup`` in absolute value signals separable data.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(int)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[0] != y.size:
        raise DataError("need a non-empty design matrix with one target per row")
    if epsilon < 0:
        raise ConfigError("penalty epsilon must be >= 0")
    present = tuple(sorted(set(y.tolist())))
    if codes is None:
        codes = present
    codes = tuple(sorted(int(c) for c in codes))
    if set(present) - set(codes):
        raise DataError(f"targets {sorted(set(present) - set(codes))} not among modelled codes {codes}")
    dropped = tuple(c for c in codes if c not in present)
    if dropped:
        warnings.warn(f"codes {list(dropped)} never observed as targets; excluded from the fit",
                      stacklevel=2)
    fit_codes = present
    if len(fit_codes) < 2:
        raise DataError(f"need at least two observed categories, got {fit_codes}")
    index = {c: i for i, c in enumerate(fit_codes)}
    y_idx = np.array([index[c] for c in y.tolist()])
    n, d = X.shape
    m = len(fit_codes) - 1
    Z = np.hstack([np.ones((n, 1)), X])
    params = LogitParams.zeros(fit_codes, d, epsilon)
    params.columns = columns
    obj = penalized_objective(params, X, y_idx)
    history = [obj]
    grad = objective_gradient(params, X, y_idx)
    gnorm = float(np.abs(grad).max())
    for it in range(1, max_iter + 1):
        if gnorm < grad_tol:
            return FitResult(params, it - 1, gnorm, obj, history, dropped)
        P = _softmax(_linear_scores(params, X))
        H = _negative_hessian(P, Z, epsilon)
        g = grad.ravel()
        try:
            step = linalg.cho_solve(linalg.cho_factor(H), g)
        except linalg.LinAlgError:
            step = linalg.lstsq(H, g)[0]
        theta = params.theta
        t = 1.0
        for _ in range(60):
            cand_theta = theta + t * step.reshape(m, d + 1)
            cand = LogitParams(cand_theta[:, 0], cand_theta[:, 1:], fit_codes, epsilon, columns)
            cand_obj = penalized_objective(cand, X, y_idx)
            if cand_obj >= obj:
                break
            t *= 0.5
        else:
            # no ascent direction left at machine precision
            return FitResult(params, it, gnorm, obj, history, dropped)
        change = abs(cand_obj - obj) / max(abs(obj), 1e-300)
        params, obj = cand, cand_obj
        history.append(obj)
        grad = objective_gradient(params, X, y_idx)
        gnorm = float(np.abs(grad).max())
        if epsilon == 0 and np.abs(params.theta).max() > blowup:
            raise SeparationError(
                "parameters diverge without penalty (separable data); use epsilon > 0",
                {"iterations": it, "max_abs_parameter": float(np.abs(params.theta).max())})
        if gnorm < grad_tol or change < rel_tol:
            return FitResult(params, it, gnorm, obj, history, dropped)
    raise ConvergenceError(f"Newton-Raphson did not converge in {max_iter} iterations",
                           {"iterations": max_iter, "grad_norm": gnorm, "objective": obj})


def glm_predict_map(params: LogitParams, map_t: CategoricalRaster, factors: Sequence[ContinuousRaster],
                    spec: NeighborhoodSpec, stats: Optional[list] = None,
                    target_date: Optional[int] = None) -> PredictionReport:
    """Assign every modelled pixel its most probable code (ties → lower code); constant codes persist."""
    legend = map_t.legend
    mask = modelled_mask(map_t, factors)
    probs = np.full((legend.k,) + map_t.shape, np.nan)
    probs[:, map_t.valid] = 0.0
    for code in legend.constant_codes:
        probs[code - 1][map_t.values == code] = 1.0
    pred = np.array(map_t.values)
    if mask.any():
        fm = pixel_features(map_t, factors, spec, mask, stats)
        p = logit_probabilities(params, fm.X)
        for j, code in enumerate(params.codes):
            probs[code - 1, fm.rows, fm.cols] = p[:, j]
        pred[fm.rows, fm.cols] = np.asarray(params.codes)[np.argmax(p, axis=1)]
    predicted = map_t.replace(values=pred, date=target_date, name="predicted")
    return PredictionReport("glm", predicted, probs,
                            {"epsilon": params.epsilon, "reference_code": params.reference_code,
                             "radius": spec.radius})


def mispredicted(real: CategoricalRaster, pred: CategoricalRaster) -> int:
    both = real.valid & pred.valid
    return int((real.values[both] != pred.values[both]).sum())


@dataclass
class GridSearchResult:
    tried: list  # dicts: radius, epsilon, mispredicted (None on failure), error
    best: Optional[tuple]
    fits: dict = field(default_factory=dict)  # (radius, epsilon) -> FitResult

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["radius", "epsilon", "mispredicted", "best", "error"])
            for rec in self.tried:
                key = (rec["radius"], rec["epsilon"])
                w.writerow([rec["radius"], repr(float(rec["epsilon"])),
                            "" if rec["mispredicted"] is None else rec["mispredicted"],
                            int(key == self.best), rec.get("error") or ""])


def grid_search(maps: Sequence[CategoricalRaster], factors: Sequence[ContinuousRaster],
                radii: Sequence[int], epsilons: Sequence[float], decay: str = "inverse",
                metric: str = "chebyshev", frontier_only: bool = True,
                stats: Optional[list] = None, max_iter: int = 100) -> GridSearchResult:
    """Fit on ``t0 -> t1`` for every (radius, epsilon), predict ``t2`` from ``t1``, count errors.

    The best cell minimizes mispredictions; ties go to the smaller radius, then
    the smaller epsilon.  Failed cells are recorded and skipped.
    """
    t0, t1, t2 = maps
    if not radii or not epsilons:
        raise ConfigError("grid search needs at least one radius and one epsilon")
    tried, fits = [], {}
    for r in radii:
        spec = NeighborhoodSpec(int(r), decay, metric)
        try:
            fm = assemble_dataset(t0, t1, factors, spec, frontier_only, stats)
        except DataError as exc:
            tried += [{"radius": int(r), "epsilon": float(e), "mispredicted": None, "error": str(exc)}
                      for e in epsilons]
            continue
        for eps in epsilons:
            rec = {"radius": int(r), "epsilon": float(eps), "mispredicted": None, "error": None}
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    fit = fit_penalized(fm.X, fm.target, float(eps), fm.modelled_codes,
                                        max_iter=max_iter, columns=fm.columns)
                rep = glm_predict_map(fit.params, t1, factors, spec, fm.stats, t2.date)
                rec["mispredicted"] = mispredicted(t2, rep.predicted)
                fits[(int(r), float(eps))] = fit
            except (ConvergenceError, DataError) as exc:
                rec["error"] = f"{type(exc).__name__}: {exc}"
            tried.append(rec)
    ok = [rec for rec in tried if rec["mispredicted"] is not None]
    best = None
    if ok:
        top = min(ok, key=lambda rec: (rec["mispredicted"], rec["radius"], rec["epsilon"]))
        best = (top["radius"], top["epsilon"])
    return GridSearchResult(tried, best, fits)
