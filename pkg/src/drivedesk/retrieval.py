"""Sketch-to-latent regression and shape retrieval.

Two retrieval paths over a shape library: direct L2 ranking in latent
space against a code predicted from a sketch, and cosine ranking in
descriptor space with a geometry-existence filter.  A percentile-rank
evaluator scores a regressor against ground-truth shape ids.

The regressor is a small fixed MLP (1028 -> 256 -> 64 -> 16 with ReLU)
over a 32x32 bilinearly downsampled sketch concatenated with a 4-way
category one-hot, trained with Adam on mean squared latent error.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .codec import LATENT_DIM, LatentCode
from .errors import (
    EmptyCategory,
    InvalidModel,
    InvalidParams,
    IoError,
    TrainingDiverged,
    UndefinedSimilarity,
)
from .imaging import FeatureVec, GrayImage, feature_descriptor, resample_bilinear
from .nn import Adam, init_layers, mlp_backward, mlp_forward
from .shapegen import CATEGORIES

__all__ = [
    "REGRESSOR_LAYERS",
    "SKETCH_SIDE",
    "RegressorConfig",
    "SketchRegressor",
    "RetrievalEntry",
    "RetrievalResult",
    "FeatureEntry",
    "FeatureIndex",
    "EvalReport",
    "sketch_input",
    "train_regressor",
    "predict_latent",
    "retrieve_by_latent",
    "retrieve_by_feature",
    "percentile_rank_eval",
    "save_feature_index",
    "load_feature_index",
    "save_eval_report",
]

SKETCH_SIDE = 32  # sketches are downsampled to this square for regression
REGRESSOR_INPUT = SKETCH_SIDE * SKETCH_SIDE + len(CATEGORIES)  # 1028
REGRESSOR_LAYERS = (REGRESSOR_INPUT, 256, 64, LATENT_DIM)

_DIVERGENCE_FACTOR = 10.0
_DIVERGENCE_PATIENCE = 200


def _category_onehot(category: str) -> np.ndarray:
    if category not in CATEGORIES:
        raise InvalidParams(f"unknown category {category!r}, expected one of {CATEGORIES}")
    hot = np.zeros(len(CATEGORIES))
    hot[CATEGORIES.index(category)] = 1.0
    return hot


def sketch_input(sketch: GrayImage, category: str) -> np.ndarray:
    """Regressor input row: 32x32 downsample scaled to [0,1], then the
    category one-hot (order fixed by CATEGORIES)."""
    small = resample_bilinear(sketch.pixels, SKETCH_SIDE) / 255.0
    return np.concatenate([small.ravel(), _category_onehot(category)])


@dataclass(frozen=True)
class RegressorConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 2000
    batch_size: int = 32
    seed: int = 0
    val_fraction: float = 0.125

    def __post_init__(self) -> None:
        if self.lr <= 0 or self.steps < 1 or self.batch_size < 1:
            raise InvalidParams("lr, steps, and batch_size must be positive")
        if not (0 <= self.val_fraction < 1):
            raise InvalidParams("val_fraction must lie in [0, 1)")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise InvalidParams("invalid Adam hyperparameters")


@dataclass
class SketchRegressor:
    """Fixed-architecture sketch-to-latent MLP plus training metadata."""

    weights: list
    biases: list
    validation_l2: float = math.nan
    loss_history: list = field(default_factory=list)

    def __post_init__(self) -> None:
        shapes = [(w.shape, b.shape) for w, b in zip(self.weights, self.biases)]
        expected = [
            ((REGRESSOR_LAYERS[i], REGRESSOR_LAYERS[i + 1]), (REGRESSOR_LAYERS[i + 1],))
            for i in range(len(REGRESSOR_LAYERS) - 1)
        ]
        if len(self.weights) != len(expected) or shapes != expected:
            raise InvalidModel(
                f"regressor must have layer shapes {REGRESSOR_LAYERS}, got {shapes}"
            )
        for arr in (*self.weights, *self.biases):
            if not np.isfinite(arr).all():
                raise InvalidModel("regressor weights must be finite")


def train_regressor(pairs, cfg: RegressorConfig = RegressorConfig()) -> SketchRegressor:
    """Fit the regressor on (sketch, category, LatentCode) triples.

    A deterministic validation split (val_fraction of the pairs) is held
    out and its mean latent L2 distance stored on the result; with no
    split the metric is computed on the training rows.
    """
    pairs = list(pairs)
    if len(pairs) < 8:
        raise InvalidParams(f"need at least 8 training pairs, got {len(pairs)}")
    cats = {c for _, c, _ in pairs}
    if len(cats) < 2:
        raise InvalidParams(f"training pairs must span at least 2 categories, got {cats}")

    x = np.stack([sketch_input(s, c) for s, c, _ in pairs])
    y = np.stack([z.values for _, _, z in pairs])

    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(len(pairs))
    n_val = int(round(cfg.val_fraction * len(pairs)))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if len(train_idx) == 0:
        raise InvalidParams("validation split leaves no training rows")

    weights, biases = init_layers(REGRESSOR_LAYERS, rng)
    opt = Adam([*weights, *biases], lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)

    history: list[float] = []
    streak = 0
    for step in range(cfg.steps):
        batch = rng.integers(0, len(train_idx), size=cfg.batch_size)
        rows = train_idx[batch]
        pred, acts = mlp_forward(weights, biases, x[rows])
        err = pred - y[rows]
        loss = float((err * err).mean())
        history.append(loss)

        if not math.isfinite(loss):
            raise TrainingDiverged(f"loss became non-finite at step {step}")
        if loss > _DIVERGENCE_FACTOR * history[0]:
            streak += 1
            if streak >= _DIVERGENCE_PATIENCE:
                raise TrainingDiverged(
                    f"loss {loss:.3g} above 10x initial for {streak} consecutive steps"
                )
        else:
            streak = 0

        d_out = (2.0 / err.size) * err
        d_w, d_b, _ = mlp_backward(weights, acts, d_out)
        opt.step([*weights, *biases], [*d_w, *d_b])

    eval_rows = val_idx if len(val_idx) else train_idx
    pred, _ = mlp_forward(weights, biases, x[eval_rows])
    val_l2 = float(np.linalg.norm(pred - y[eval_rows], axis=1).mean())
    return SketchRegressor(weights, biases, validation_l2=val_l2, loss_history=history)


def predict_latent(reg: SketchRegressor, sketch: GrayImage, category: str) -> LatentCode:
    row = sketch_input(sketch, category)
    pred, _ = mlp_forward(reg.weights, reg.biases, row[None, :])
    return LatentCode(pred[0])


# ---------------------------------------------------------------------------
# Retrieval


@dataclass(frozen=True)
class RetrievalEntry:
    shape_id: str
    score: float
    stl_path: str = ""


@dataclass(frozen=True)
class RetrievalResult:
    """Ranked retrieval outcome.

    mode "distance" ranks ascending, mode "similarity" descending; the
    ordering is validated at construction.
    """

    entries: tuple
    mode: str
    query: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.mode not in ("distance", "similarity"):
            raise InvalidParams(f"mode must be distance or similarity, got {self.mode!r}")
        object.__setattr__(self, "entries", tuple(self.entries))
        scores = [e.score for e in self.entries]
        if self.mode == "distance":
            ok = all(a <= b for a, b in zip(scores, scores[1:]))
        else:
            ok = all(a >= b for a, b in zip(scores, scores[1:]))
        if not ok:
            raise InvalidParams(f"scores not monotone for mode {self.mode}: {scores}")

    @property
    def shape_ids(self) -> list:
        return [e.shape_id for e in self.entries]


def _category_of(shape_id: str) -> str:
    return shape_id.split("-", 1)[0]


def retrieve_by_latent(
    z_hat: LatentCode,
    category: str,
    k: int,
    latent_table: dict,
    stl_paths: dict | None = None,
) -> RetrievalResult:
    """Rank a category's stored codes by L2 distance to `z_hat`.

    Exact-distance ties break lexicographically on shape id.  If k
    exceeds the category size the full category is returned.
    """
    if category not in CATEGORIES:
        raise InvalidParams(f"unknown category {category!r}")
    if k < 1:
        raise InvalidParams(f"k must be >= 1, got {k}")
    members = [
        (sid, code) for sid, code in latent_table.items() if _category_of(sid) == category
    ]
    if not members:
        raise EmptyCategory(f"latent table has no shapes in category {category!r}")

    ranked = sorted(
        (
            (float(np.linalg.norm(code.values - z_hat.values)), sid)
            for sid, code in members
        )
    )
    entries = [
        RetrievalEntry(sid, dist, (stl_paths or {}).get(sid, ""))
        for dist, sid in ranked[:k]
    ]
    return RetrievalResult(
        entries,
        mode="distance",
        query={"category": category, "k": k, "candidates": len(members)},
    )


@dataclass(frozen=True)
class FeatureEntry:
    features: FeatureVec
    stl_path: str
    sketch_path: str = ""


@dataclass(frozen=True)
class FeatureIndex:
    """shape_id -> descriptor + artifact paths, the feature-search database."""

    entries: dict

    def __post_init__(self) -> None:
        for sid, entry in self.entries.items():
            if not isinstance(entry, FeatureEntry):
                raise InvalidParams(f"index entry for {sid!r} is not a FeatureEntry")

    def __len__(self) -> int:
        return len(self.entries)


def retrieve_by_feature(query: GrayImage, db: FeatureIndex, k: int) -> RetrievalResult:
    """Rank index entries by cosine similarity to the query's descriptor,
    skipping entries whose geometry file is missing on disk (each skip
    promotes the next-ranked candidate).

    Database entries with an all-zero descriptor cannot be ranked and are
    ignored; an all-zero query raises UndefinedSimilarity.
    """
    if k < 1:
        raise InvalidParams(f"k must be >= 1, got {k}")
    if len(db) == 0:
        raise EmptyCategory("feature index is empty")
    q = feature_descriptor(query)
    qn = float(np.linalg.norm(q.values))
    if qn == 0.0:
        raise UndefinedSimilarity("query sketch has a zero descriptor")

    scored = []
    for sid, entry in db.entries.items():
        dn = float(np.linalg.norm(entry.features.values))
        if dn == 0.0:
            continue
        sim = float(q.values @ entry.features.values) / (qn * dn)
        scored.append((-sim, sid, entry))
    scored.sort(key=lambda t: (t[0], t[1]))

    entries = []
    skipped = []
    for neg_sim, sid, entry in scored:
        if len(entries) == k:
            break
        if entry.stl_path and os.path.exists(entry.stl_path):
            entries.append(RetrievalEntry(sid, -neg_sim, entry.stl_path))
        else:
            skipped.append(sid)
    return RetrievalResult(
        entries,
        mode="similarity",
        query={"k": k, "candidates": len(scored), "skipped_missing_geometry": skipped},
    )


# ---------------------------------------------------------------------------
# Evaluation


@dataclass(frozen=True)
class EvalReport:
    """Percentile ranks of ground-truth shapes under latent retrieval.

    Histograms use 100 bins of width 1 percentile.  Three rates are
    reported: rank1_rate (true shape ranked first), top1pct_rate (the
    literal percentile <= 1 criterion, meaningful once categories hold
    >= 100 shapes), and success_rate = rank 1 OR percentile <= 1 — the
    small-library mapping of the 1% criterion, which coincides with
    top1pct_rate at scale.
    """

    per_category: dict
    rank1_rate: float
    top1pct_rate: float
    success_rate: float
    count: int

    def to_jsonable(self) -> dict:
        return {
            "per_category": self.per_category,
            "rank1_rate": self.rank1_rate,
            "top1pct_rate": self.top1pct_rate,
            "success_rate": self.success_rate,
            "count": self.count,
        }


def percentile_rank_eval(reg: SketchRegressor, testset, latent_table: dict) -> EvalReport:
    """Score (sketch, category, true_shape_id) queries: predict a code,
    rank the category, record the true shape's percentile rank."""
    testset = list(testset)
    if not testset:
        raise InvalidParams("testset is empty")

    per_cat: dict = {}
    rank1 = 0
    top1pct = 0
    success = 0
    for sketch, category, true_id in testset:
        result = retrieve_by_latent(
            predict_latent(reg, sketch, category),
            category,
            k=len(latent_table),
            latent_table=latent_table,
        )
        ids = result.shape_ids
        if true_id not in ids:
            raise InvalidParams(
                f"ground-truth shape {true_id!r} missing from category {category!r}"
            )
        rank = ids.index(true_id) + 1
        size = len(ids)
        pct = 100.0 * rank / size

        stats = per_cat.setdefault(
            category,
            {
                "histogram": [0] * 100,
                "percentiles": [],
                "rank1": 0,
                "top1pct": 0,
                "success": 0,
                "count": 0,
            },
        )
        stats["histogram"][min(99, math.ceil(pct) - 1)] += 1
        stats["percentiles"].append(pct)
        stats["count"] += 1
        if rank == 1:
            stats["rank1"] += 1
            rank1 += 1
        if pct <= 1.0:
            stats["top1pct"] += 1
            top1pct += 1
        if rank == 1 or pct <= 1.0:
            stats["success"] += 1
            success += 1

    for stats in per_cat.values():
        stats["rank1_rate"] = stats.pop("rank1") / stats["count"]
        stats["top1pct_rate"] = stats.pop("top1pct") / stats["count"]
        stats["success_rate"] = stats.pop("success") / stats["count"]
    return EvalReport(
        per_category=per_cat,
        rank1_rate=rank1 / len(testset),
        top1pct_rate=top1pct / len(testset),
        success_rate=success / len(testset),
        count=len(testset),
    )


# ---------------------------------------------------------------------------
# Persistence


def save_feature_index(index: FeatureIndex, path) -> None:
    payload = {
        sid: {
            "features": entry.features.values.tolist(),
            "stl_path": entry.stl_path,
            "sketch_path": entry.sketch_path,
        }
        for sid, entry in index.entries.items()
    }
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write feature index {path}: {exc}") from exc


def load_feature_index(path) -> FeatureIndex:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read feature index {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise IoError(f"feature index {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise IoError(f"feature index {path} must be a JSON object")
    entries = {}
    for sid, rec in payload.items():
        try:
            entries[sid] = FeatureEntry(
                features=FeatureVec(np.asarray(rec["features"], dtype=np.float64)),
                stl_path=str(rec["stl_path"]),
                sketch_path=str(rec.get("sketch_path", "")),
            )
        except (KeyError, TypeError, ValueError, InvalidParams) as exc:
            raise IoError(f"feature index entry {sid!r} is malformed: {exc}") from exc
    return FeatureIndex(entries)


def save_eval_report(report: EvalReport, path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report.to_jsonable(), fh, sort_keys=True, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write evaluation report {path}: {exc}") from exc
