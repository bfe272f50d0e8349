"""Aerodynamic drag surrogate.

A deterministic drag-coefficient oracle over car parameters stands in for
CFD ground truth; a closed-form ridge regressor maps 16-dimensional shape
codes to C_D; and evaluation helpers report rank-correlation trends,
density overlap between truth and prediction, and category-pair deltas.

The oracle's frontal-area term uses the bounding cross-section width x
height rather than the rendered silhouette: the term must be a pure
function of the parameter vector so that flipping only the underbody
flag shifts C_D by exactly the underbody increment (the corrugated floor
would otherwise leak into an integrated silhouette area).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .codec import LATENT_DIM, LatentCode
from .errors import EmptyCategory, InvalidParams, IoError, ModelNotFitted, SingularFit
from .shapegen import CarParams, params_id

__all__ = [
    "A_REF",
    "CD_CLIP",
    "CD_RANGE",
    "DragSample",
    "RidgeModel",
    "TrendReport",
    "DistributionReport",
    "DeltaReport",
    "drag_oracle",
    "oracle_samples",
    "fit_ridge",
    "predict_cd",
    "eval_trend",
    "eval_distribution",
    "delta_cd",
]

A_REF = 0.20  # reference frontal area (model units squared): typical width * height
CD_CLIP = (0.15, 0.60)  # oracle output clip
CD_RANGE = (0.1, 0.8)  # admissible drag-coefficient range for samples

_MIN_FIT = LATENT_DIM + 1  # rows must exceed the 16 weights + bias
_SINGULAR_COND = 1e12


@dataclass(frozen=True)
class DragSample:
    """One labeled shape: id and its drag coefficient."""

    shape_id: str
    cd: float

    def __post_init__(self) -> None:
        if not isinstance(self.shape_id, str) or not self.shape_id:
            raise InvalidParams("shape_id must be a non-empty string")
        cd = float(self.cd)
        if not math.isfinite(cd) or not (CD_RANGE[0] <= cd <= CD_RANGE[1]):
            raise InvalidParams(
                f"C_D must lie in [{CD_RANGE[0]}, {CD_RANGE[1]}], got {self.cd}"
            )
        object.__setattr__(self, "cd", cd)

    @property
    def category(self) -> str:
        return self.shape_id.split("-", 1)[0]


@dataclass(frozen=True)
class RidgeModel:
    """Affine latent -> C_D map: 16 weights, one bias, ridge strength."""

    weights: np.ndarray
    bias: float
    lam: float
    fitted: bool = True

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (LATENT_DIM,):
            raise InvalidParams(f"weights must have shape ({LATENT_DIM},), got {w.shape}")
        if not (np.isfinite(w).all() and math.isfinite(self.bias) and math.isfinite(self.lam)):
            raise InvalidParams("ridge model values must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))
        object.__setattr__(self, "lam", float(self.lam))

    @staticmethod
    def unfitted() -> "RidgeModel":
        return RidgeModel(np.zeros(LATENT_DIM), 0.0, 0.0, fitted=False)


def drag_oracle(params: CarParams) -> float:
    """Deterministic C_D from car parameters (CFD substitute).

    C_D = 0.20 + 0.12 * (A_f / A_REF) + 0.10 * sin^2(slant)
          + 0.035 * [underbody detailed] - 0.02 * cabin_taper,
    clipped to CD_CLIP, with A_f the width x height cross-section.
    """
    params.validate()
    a_hat = (params.width * params.height) / A_REF
    slant = math.radians(params.rear_slant_deg)
    cd = (
        0.20
        + 0.12 * a_hat
        + 0.10 * math.sin(slant) ** 2
        - 0.02 * params.cabin_taper
    )
    if params.underbody_detail:
        cd += 0.035
    return min(max(cd, CD_CLIP[0]), CD_CLIP[1])


def oracle_samples(params_list) -> list:
    """Label a parameter batch: DragSample per car, ids from params_id."""
    return [DragSample(params_id(p), drag_oracle(p)) for p in params_list]


def _latent_matrix(latents) -> np.ndarray:
    rows = []
    for z in latents:
        v = z.values if isinstance(z, LatentCode) else np.asarray(z, dtype=np.float64)
        if v.shape != (LATENT_DIM,):
            raise InvalidParams(f"latent must have shape ({LATENT_DIM},), got {v.shape}")
        rows.append(np.asarray(v, dtype=np.float64))
    return np.stack(rows) if rows else np.zeros((0, LATENT_DIM))


def fit_ridge(latents, cds, lam: float) -> RidgeModel:
    """Closed-form ridge fit: (X^T X + lam * D) w = X^T y with the bias
    column unregularized (D has a zero in the bias slot)."""
    X = _latent_matrix(latents)
    y = np.asarray([float(c) for c in cds], dtype=np.float64)
    if len(X) != len(y):
        raise InvalidParams(f"{len(X)} latents vs {len(y)} drag values")
    if len(X) < _MIN_FIT:
        raise InvalidParams(
            f"need at least {_MIN_FIT} samples (more rows than unknowns), got {len(X)}"
        )
    if not math.isfinite(lam) or lam < 0:
        raise InvalidParams(f"ridge strength must be >= 0, got {lam}")
    if not np.isfinite(y).all():
        raise InvalidParams("drag values must be finite")

    A = np.hstack([X, np.ones((len(X), 1))])
    damp = np.eye(_MIN_FIT)
    damp[-1, -1] = 0.0
    gram = A.T @ A + lam * damp
    if lam == 0.0 and np.linalg.cond(gram) > _SINGULAR_COND:
        raise SingularFit(
            "normal equations are singular at lam = 0; add regularization"
        )
    try:
        w = np.linalg.solve(gram, A.T @ y)
    except np.linalg.LinAlgError as exc:
        raise SingularFit(f"normal equations could not be solved: {exc}") from exc
    if not np.isfinite(w).all():
        raise SingularFit("ridge solution is non-finite")
    return RidgeModel(w[:LATENT_DIM], float(w[LATENT_DIM]), lam)


def predict_cd(model: RidgeModel, z) -> float:
    """Affine prediction w . z + b (not clipped: affine by contract)."""
    if not isinstance(model, RidgeModel) or not model.fitted:
        raise ModelNotFitted("fit_ridge must run before predict_cd")
    v = z.values if isinstance(z, LatentCode) else np.asarray(z, dtype=np.float64)
    if v.shape != (LATENT_DIM,):
        raise InvalidParams(f"latent must have shape ({LATENT_DIM},), got {v.shape}")
    return float(model.weights @ v + model.bias)


def _normalize_items(testset) -> list:
    items = []
    for entry in testset:
        try:
            z, sample = entry
        except (TypeError, ValueError) as exc:
            raise InvalidParams(
                "testset entries must be (latent, DragSample) pairs"
            ) from exc
        if not isinstance(sample, DragSample):
            raise InvalidParams(f"not a DragSample: {sample!r}")
        v = z.values if isinstance(z, LatentCode) else np.asarray(z, dtype=np.float64)
        if v.shape != (LATENT_DIM,):
            raise InvalidParams(f"latent must have shape ({LATENT_DIM},), got {v.shape}")
        items.append((np.asarray(v, dtype=np.float64), sample))
    return items


@dataclass(frozen=True)
class TrendReport:
    """Ground truth sorted ascending with aligned predictions."""

    shape_ids: tuple
    truth: tuple
    predictions: tuple
    spearman_rho: float
    oscillation_count: int

    def to_jsonable(self) -> dict:
        return {
            "shape_ids": list(self.shape_ids),
            "truth": list(self.truth),
            "predictions": list(self.predictions),
            "spearman_rho": self.spearman_rho,
            "oscillation_count": self.oscillation_count,
        }


def eval_trend(model: RidgeModel, testset) -> TrendReport:
    """Sort shapes by true C_D, align predictions, and report the Spearman
    rank correlation plus the oscillation count (sign changes in the
    first differences of the aligned predictions)."""
    items = _normalize_items(testset)
    if len(items) < 10:
        raise InvalidParams(f"trend evaluation needs >= 10 shapes, got {len(items)}")
    items.sort(key=lambda it: (it[1].cd, it[1].shape_id))
    truth = np.array([s.cd for _, s in items])
    preds = np.array([predict_cd(model, z) for z, _ in items])
    rho = float(stats.spearmanr(truth, preds).statistic)
    diffs = np.sign(np.diff(preds))
    diffs = diffs[diffs != 0]
    oscillation = int(np.count_nonzero(diffs[1:] != diffs[:-1])) if len(diffs) else 0
    return TrendReport(
        shape_ids=tuple(s.shape_id for _, s in items),
        truth=tuple(float(t) for t in truth),
        predictions=tuple(float(p) for p in preds),
        spearman_rho=rho,
        oscillation_count=oscillation,
    )


@dataclass(frozen=True)
class DistributionReport:
    """KDE curves over a shared grid, their overlap, and the KS statistic."""

    grid: tuple
    truth_density: tuple
    predicted_density: tuple
    overlap: float
    ks_stat: float

    def to_jsonable(self) -> dict:
        return {
            "grid": list(self.grid),
            "truth_density": list(self.truth_density),
            "predicted_density": list(self.predicted_density),
            "overlap": self.overlap,
            "ks_stat": self.ks_stat,
        }


def eval_distribution(model: RidgeModel, testset, grid_points: int = 1001) -> DistributionReport:
    """Gaussian KDE (Silverman bandwidth) of true and predicted C_D on a
    shared grid; overlap is the integral of the pointwise minimum, and the
    two-sample Kolmogorov-Smirnov statistic is reported alongside."""
    items = _normalize_items(testset)
    if len(items) < 20:
        raise InvalidParams(
            f"distribution evaluation needs >= 20 shapes, got {len(items)}"
        )
    truth = np.array([s.cd for _, s in items])
    preds = np.array([predict_cd(model, z) for z, _ in items])
    if truth.std() == 0.0 or preds.std() == 0.0:
        raise InvalidParams("degenerate constant sample: KDE bandwidth undefined")

    kde_truth = stats.gaussian_kde(truth, bw_method="silverman")
    kde_pred = stats.gaussian_kde(preds, bw_method="silverman")
    bw = max(
        math.sqrt(float(kde_truth.covariance[0, 0])),
        math.sqrt(float(kde_pred.covariance[0, 0])),
    )
    lo = min(truth.min(), preds.min()) - 5.0 * bw
    hi = max(truth.max(), preds.max()) + 5.0 * bw
    grid = np.linspace(lo, hi, grid_points)
    p = kde_truth(grid)
    q = kde_pred(grid)
    overlap = float(np.trapezoid(np.minimum(p, q), grid))
    # Fixed asymptotic method: the exact path bails out (with a warning)
    # on tied samples, and only the statistic is consumed anyway.
    ks = float(stats.ks_2samp(truth, preds, method="asymp").statistic)
    return DistributionReport(
        grid=tuple(float(g) for g in grid),
        truth_density=tuple(float(v) for v in p),
        predicted_density=tuple(float(v) for v in q),
        overlap=overlap,
        ks_stat=ks,
    )


@dataclass(frozen=True)
class DeltaReport:
    """Category-pair drag difference, oracle vs prediction."""

    pair: tuple
    oracle_delta: float
    predicted_delta: float
    sign_agreement: bool
    count_a: int
    count_b: int

    def to_jsonable(self) -> dict:
        return {
            "pair": list(self.pair),
            "oracle_delta": self.oracle_delta,
            "predicted_delta": self.predicted_delta,
            "sign_agreement": self.sign_agreement,
            "count_a": self.count_a,
            "count_b": self.count_b,
        }


def _sign(x: float) -> int:
    return (x > 0) - (x < 0)


def delta_cd(model: RidgeModel, dataset, pair) -> DeltaReport:
    """Mean C_D(category A) - mean C_D(category B), from the oracle labels
    and from the model's predictions, with a sign-agreement flag."""
    cat_a, cat_b = pair
    items = _normalize_items(dataset)
    truth = {cat_a: [], cat_b: []}
    preds = {cat_a: [], cat_b: []}
    for z, sample in items:
        cat = sample.category
        if cat in truth:
            truth[cat].append(sample.cd)
            preds[cat].append(predict_cd(model, z))
    for cat in (cat_a, cat_b):
        if not truth[cat]:
            raise EmptyCategory(f"no samples for category {cat!r}")
    oracle_delta = float(np.mean(truth[cat_a]) - np.mean(truth[cat_b]))
    predicted_delta = float(np.mean(preds[cat_a]) - np.mean(preds[cat_b]))
    return DeltaReport(
        pair=(cat_a, cat_b),
        oracle_delta=oracle_delta,
        predicted_delta=predicted_delta,
        sign_agreement=_sign(oracle_delta) == _sign(predicted_delta),
        count_a=len(truth[cat_a]),
        count_b=len(truth[cat_b]),
    )


def save_report(report, path) -> None:
    """Serialize any of the evaluation reports to JSON."""
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report.to_jsonable(), fh, sort_keys=True, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write report {path}: {exc}") from exc
