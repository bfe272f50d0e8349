"""Implicit shape codec: a latent-conditioned SDF decoder.

Each shape is represented by a 16-dimensional latent code; a shared MLP
maps (code ⊕ Fourier-encoded position) to a signed-distance value.  Codes
and decoder weights are optimized jointly (auto-decoder: there is no
encoder network) under a clamped-L1 objective with an L2 penalty on the
codes.  New shapes are embedded by optimizing a code against a frozen
decoder; meshes come back out through marching cubes over the decoded
field; shape blending is a weighted average of codes.

Positional encoding order (fixed, documented): for frequency index
k = 0..8 ascending, then coordinate axis x,y,z ascending, emit
sin(2^k*pi*coord) then cos(2^k*pi*coord) — 9 * 3 * 2 = 54 components, all
in [-1, 1].
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    EmptyReconstruction,
    InferenceDiverged,
    InvalidModel,
    InvalidParams,
    InvalidWeights,
    IoError,
    NumericalError,
    TrainingDiverged,
)
from .geometry import ScalarField3, SdfSamples, TriMesh, marching_cubes
from .nn import Adam, init_layers, mlp_backward, mlp_forward

__all__ = [
    "LATENT_DIM",
    "ENCODING_DIM",
    "INPUT_DIM",
    "HIDDEN_WIDTH",
    "HIDDEN_LAYERS",
    "LatentCode",
    "DecoderParams",
    "TrainConfig",
    "TrainResult",
    "CodecGradients",
    "encode_position",
    "encode_positions",
    "forward",
    "clamped_l1",
    "objective",
    "backward",
    "train",
    "infer_latent",
    "infer_latents",
    "decoded_field",
    "reconstruct",
    "interpolate",
    "save_checkpoint",
    "load_checkpoint",
    "save_latent_table",
    "load_latent_table",
]

LATENT_DIM = 16
FOURIER_FREQS = 9  # frequency exponents k = 0..8
ENCODING_DIM = 2 * 3 * FOURIER_FREQS  # 54
INPUT_DIM = LATENT_DIM + ENCODING_DIM  # 70
HIDDEN_WIDTH = 512
HIDDEN_LAYERS = 8

_CHECKPOINT_MAGIC = b"SDFC"
_CHECKPOINT_VERSION = 1

# Divergence rule shared by train and infer_latent: loss above 10x the
# initial value for this many consecutive steps aborts the run.
_DIVERGENCE_FACTOR = 10.0
_DIVERGENCE_PATIENCE = 1000


# ---------------------------------------------------------------------------
# Types


@dataclass(frozen=True)
class LatentCode:
    """A 16-dimensional shape code."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (LATENT_DIM,):
            raise InvalidModel(f"latent code must have {LATENT_DIM} values, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise InvalidModel("latent code contains non-finite values")
        object.__setattr__(self, "values", v)


@dataclass
class DecoderParams:
    """Weights and biases of the decoder MLP.

    The canonical decoder has 8 hidden layers of width 512 between the
    70-dimensional input and the scalar output; smaller probe networks
    with the same input/output contract are allowed for testing.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if not self.weights or len(self.weights) != len(self.biases):
            raise InvalidModel("decoder needs matching weight/bias lists")
        if self.weights[0].shape[0] != INPUT_DIM:
            raise InvalidModel(
                f"decoder input dimension must be {INPUT_DIM}, got {self.weights[0].shape[0]}"
            )
        if self.weights[-1].shape[1] != 1:
            raise InvalidModel("decoder output must be scalar")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise InvalidModel(f"layer {i} has inconsistent shapes")
            if i > 0 and w.shape[0] != self.weights[i - 1].shape[1]:
                raise InvalidModel(f"layer {i} input does not match layer {i-1} output")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise InvalidModel(f"layer {i} contains non-finite parameters")

    @property
    def hidden_widths(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.weights[:-1])

    @property
    def is_canonical(self) -> bool:
        return self.hidden_widths == (HIDDEN_WIDTH,) * HIDDEN_LAYERS

    @classmethod
    def create(
        cls,
        rng: np.random.Generator | int = 0,
        hidden: Sequence[int] = (HIDDEN_WIDTH,) * HIDDEN_LAYERS,
        dtype: np.dtype | type = np.float64,
    ) -> "DecoderParams":
        # Small output-layer init keeps initial predictions inside the
        # clamp band, so every sample carries gradient from step one.
        sizes = [INPUT_DIM, *hidden, 1]
        weights, biases = init_layers(sizes, rng, dtype, out_scale=0.01)
        return cls(weights, biases)

    def copy(self) -> "DecoderParams":
        return DecoderParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def astype(self, dtype: np.dtype | type) -> "DecoderParams":
        return DecoderParams(
            [w.astype(dtype) for w in self.weights],
            [b.astype(dtype) for b in self.biases],
        )


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings for training and latent inference."""

    delta: float = 0.1  # loss clamp half-width
    lam: float = 1e-4  # latent L2 penalty weight
    lr_weights: float = 1e-4
    lr_latents: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 20000
    batch_size: int = 256
    seed: int = 0

    def __post_init__(self) -> None:
        if self.delta <= 0:
            raise InvalidParams(f"delta must be positive, got {self.delta}")
        if self.lam < 0:
            raise InvalidParams(f"lam must be non-negative, got {self.lam}")
        if self.lr_weights <= 0 or self.lr_latents <= 0:
            raise InvalidParams("learning rates must be positive")
        if self.steps < 1 or self.batch_size < 1:
            raise InvalidParams("steps and batch_size must be at least 1")


@dataclass
class TrainResult:
    params: DecoderParams
    latents: dict[str, LatentCode]
    loss_history: np.ndarray


@dataclass
class CodecGradients:
    d_weights: list[np.ndarray]
    d_biases: list[np.ndarray]
    d_latent: np.ndarray


# ---------------------------------------------------------------------------
# Encoding and forward evaluation


def encode_positions(points: np.ndarray) -> np.ndarray:
    """Fourier features for an (N, 3) array of positions, shape (N, 54)."""
    p = np.asarray(points, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 3:
        raise InvalidModel(f"expected (N, 3) positions, got shape {p.shape}")
    freqs = (2.0 ** np.arange(FOURIER_FREQS)) * np.pi  # (9,)
    ang = (p[:, None, :] * freqs[None, :, None]).reshape(len(p), 3 * FOURIER_FREQS)
    out = np.empty((len(p), ENCODING_DIM), dtype=p.dtype)
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang)
    return out


def encode_position(point: np.ndarray) -> np.ndarray:
    """Fourier features for a single 3D point, shape (54,)."""
    p = np.asarray(point, dtype=np.float64).reshape(1, 3)
    return encode_positions(p)[0]


def _forward_batch(
    params: DecoderParams, codes: np.ndarray, positions: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Decoder outputs (N,) plus layer activations for a batch."""
    enc = encode_positions(positions).astype(codes.dtype, copy=False)
    x = np.concatenate([codes, enc], axis=1)
    out, acts = mlp_forward(params.weights, params.biases, x)
    return out[:, 0], acts


def forward(params: DecoderParams, z: LatentCode, x: np.ndarray) -> float | np.ndarray:
    """Predicted SDF value(s) at `x` ((3,) or (N, 3)) for code `z`."""
    expected = params.weights[0].shape[0] - ENCODING_DIM
    if z.values.shape[0] != expected:
        raise InvalidModel(
            f"latent dimension {z.values.shape[0]} does not match decoder input ({expected})"
        )
    pts = np.asarray(x, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(1, 3) if single else pts
    dtype = params.weights[0].dtype
    codes = np.broadcast_to(z.values.astype(dtype), (len(pts), LATENT_DIM))
    out, _ = _forward_batch(params, codes, pts)
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# Objective


def clamped_l1(pred, target, delta: float = 0.1):
    """|clamp(pred, ±delta) − clamp(target, ±delta)|, elementwise."""
    if delta <= 0:
        raise InvalidParams(f"delta must be positive, got {delta}")
    p = np.clip(pred, -delta, delta)
    t = np.clip(target, -delta, delta)
    out = np.abs(p - t)
    return float(out) if np.isscalar(pred) or np.ndim(pred) == 0 else out


def objective(
    params: DecoderParams, z: LatentCode, batch: SdfSamples, cfg: TrainConfig
) -> float:
    """Mean clamped-L1 over the batch plus the latent penalty lam*||z||^2."""
    codes = np.broadcast_to(
        z.values.astype(params.weights[0].dtype), (len(batch.positions), LATENT_DIM)
    )
    pred, _ = _forward_batch(params, codes, batch.positions)
    data = float(np.mean(clamped_l1(pred, batch.values, cfg.delta)))
    return data + cfg.lam * float(z.values @ z.values)


def _clamp_grad(pred: np.ndarray, target: np.ndarray, delta: float) -> np.ndarray:
    """d/d pred of clamped-L1: sign of the clamped difference where the
    prediction is strictly inside the clamp band, zero elsewhere."""
    diff = np.clip(pred, -delta, delta) - np.clip(target, -delta, delta)
    inside = (pred > -delta) & (pred < delta)
    return np.sign(diff) * inside


def backward(
    params: DecoderParams, z: LatentCode, batch: SdfSamples, cfg: TrainConfig
) -> CodecGradients:
    """Gradients of `objective` w.r.t. all weights, biases, and z."""
    n = len(batch.positions)
    if n == 0:
        raise InvalidParams("batch must be non-empty")
    dtype = params.weights[0].dtype
    codes = np.broadcast_to(z.values.astype(dtype), (n, LATENT_DIM))
    pred, acts = _forward_batch(params, codes, batch.positions)
    d_pred = _clamp_grad(pred, batch.values, cfg.delta) / n
    d_weights, d_biases, d_input = mlp_backward(params.weights, acts, d_pred[:, None])
    d_latent = d_input[:, :LATENT_DIM].sum(axis=0) + 2.0 * cfg.lam * z.values
    for g in (*d_weights, *d_biases, d_latent):
        if not np.isfinite(g).all():
            raise NumericalError("non-finite gradient encountered")
    return CodecGradients(d_weights, d_biases, d_latent)


# ---------------------------------------------------------------------------
# Training


def _as_pairs(dataset) -> list[tuple[str, SdfSamples]]:
    if isinstance(dataset, Mapping):
        return list(dataset.items())
    return list(dataset)


def train(
    dataset: Mapping[str, SdfSamples] | Iterable[tuple[str, SdfSamples]],
    cfg: TrainConfig = TrainConfig(),
    hidden: Sequence[int] = (HIDDEN_WIDTH,) * HIDDEN_LAYERS,
    dtype: np.dtype | type = np.float64,
) -> TrainResult:
    """Jointly optimize decoder weights and one latent code per shape.

    Each Adam step draws `batch_size` (shape, sample) pairs — the shape
    uniformly, then one of its samples uniformly — and updates the weights
    and every code that appeared in the batch.  Fully deterministic for a
    given config.  Raises TrainingDiverged if the per-step loss stays
    above 10x its initial value for 1000 consecutive steps.
    """
    pairs = _as_pairs(dataset)
    if len(pairs) < 2:
        raise InvalidParams("training needs at least 2 shapes")
    for sid, samples in pairs:
        if len(samples.positions) < 1000:
            raise InvalidParams(f"shape {sid!r} has fewer than 1000 samples")

    dtype = np.dtype(dtype).type
    rng = np.random.default_rng(cfg.seed)
    params = DecoderParams.create(rng, hidden=hidden, dtype=dtype)
    n_shapes = len(pairs)
    latents = (rng.standard_normal((n_shapes, LATENT_DIM)) * 0.01).astype(dtype)

    positions = np.concatenate([s.positions for _, s in pairs]).astype(dtype)
    targets = np.concatenate([s.values for _, s in pairs]).astype(dtype)
    counts = np.array([len(s.positions) for _, s in pairs])
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])

    adam_w = Adam(params.weights + params.biases, cfg.lr_weights, cfg.beta1, cfg.beta2, cfg.eps)
    adam_z = Adam([latents], cfg.lr_latents, cfg.beta1, cfg.beta2, cfg.eps)

    lam = dtype(cfg.lam)
    history = np.empty(cfg.steps, dtype=np.float64)
    initial_loss = None
    bad_streak = 0

    for step in range(cfg.steps):
        shape_idx = rng.integers(0, n_shapes, size=cfg.batch_size)
        flat = offsets[shape_idx] + rng.integers(0, counts[shape_idx])
        x = positions[flat]
        s = targets[flat]
        z_rows = latents[shape_idx]

        enc = encode_positions(x).astype(dtype, copy=False)
        inp = np.concatenate([z_rows, enc], axis=1)
        out, acts = mlp_forward(params.weights, params.biases, inp)
        pred = out[:, 0]

        data_loss = float(np.mean(clamped_l1(pred, s, cfg.delta)))
        reg_loss = cfg.lam * float(np.mean(np.sum(z_rows * z_rows, axis=1)))
        loss = data_loss + reg_loss
        history[step] = loss

        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at step {step}")
        if initial_loss is None:
            initial_loss = loss
        if loss > _DIVERGENCE_FACTOR * max(initial_loss, 1e-12):
            bad_streak += 1
            if bad_streak >= _DIVERGENCE_PATIENCE:
                raise TrainingDiverged(
                    f"loss {loss:.4g} above 10x initial for {bad_streak} steps"
                )
        else:
            bad_streak = 0

        d_pred = _clamp_grad(pred, s, cfg.delta) / cfg.batch_size
        d_weights, d_biases, d_input = mlp_backward(params.weights, acts, d_pred[:, None])
        d_latent_rows = d_input[:, :LATENT_DIM] + (2.0 * lam / cfg.batch_size) * z_rows
        d_latents = np.zeros_like(latents)
        np.add.at(d_latents, shape_idx, d_latent_rows)

        adam_w.step(params.weights + params.biases, d_weights + d_biases)
        adam_z.step([latents], [d_latents])

    latents64 = latents.astype(np.float64)
    codes = {sid: LatentCode(latents64[i]) for i, (sid, _) in enumerate(pairs)}
    return TrainResult(params.astype(np.float64), codes, history)


# ---------------------------------------------------------------------------
# Latent inference


def infer_latents(
    params: DecoderParams,
    sample_sets: Sequence[SdfSamples],
    cfg: TrainConfig = TrainConfig(steps=800),
    rows_per_shape: int = 4,
) -> list[LatentCode]:
    """Optimize one code per sample set against frozen decoder weights.

    All codes are optimized jointly — their objectives are independent, so
    a joint Adam run is exactly equivalent to per-shape runs while sharing
    each step's matrix work.  Returns the final iterate per shape.
    """
    if not sample_sets:
        return []
    for s in sample_sets:
        if len(s.positions) == 0:
            raise InvalidParams("every sample set must be non-empty")
    dtype = params.weights[0].dtype
    m = len(sample_sets)
    rng = np.random.default_rng(cfg.seed)
    codes = (rng.standard_normal((m, LATENT_DIM)) * 0.01).astype(dtype)
    adam = Adam([codes], cfg.lr_latents, cfg.beta1, cfg.beta2, cfg.eps)

    positions = [np.asarray(s.positions, dtype=dtype) for s in sample_sets]
    targets = [np.asarray(s.values, dtype=dtype) for s in sample_sets]
    counts = np.array([len(p) for p in positions])
    owner = np.repeat(np.arange(m), rows_per_shape)

    initial_loss = None
    bad_streak = 0
    for step in range(cfg.steps):
        pick = [rng.integers(0, counts[i], size=rows_per_shape) for i in range(m)]
        x = np.concatenate([positions[i][pick[i]] for i in range(m)])
        s = np.concatenate([targets[i][pick[i]] for i in range(m)])
        z_rows = codes[owner]

        enc = encode_positions(x).astype(dtype, copy=False)
        inp = np.concatenate([z_rows, enc], axis=1)
        out, acts = mlp_forward(params.weights, params.biases, inp)
        pred = out[:, 0]

        loss = float(np.mean(clamped_l1(pred, s, cfg.delta)))
        loss += cfg.lam * float(np.mean(np.sum(z_rows * z_rows, axis=1)))
        if not np.isfinite(loss):
            raise InferenceDiverged(f"non-finite loss at step {step}")
        if initial_loss is None:
            initial_loss = loss
        if loss > _DIVERGENCE_FACTOR * max(initial_loss, 1e-12):
            bad_streak += 1
            if bad_streak >= _DIVERGENCE_PATIENCE:
                raise InferenceDiverged(
                    f"loss {loss:.4g} above 10x initial for {bad_streak} steps"
                )
        else:
            bad_streak = 0

        d_pred = _clamp_grad(pred, s, cfg.delta) / len(x)
        _, _, d_input = mlp_backward(params.weights, acts, d_pred[:, None])
        d_rows = d_input[:, :LATENT_DIM] + (2.0 * cfg.lam / len(x)) * z_rows
        d_codes = np.zeros_like(codes)
        np.add.at(d_codes, owner, d_rows)
        adam.step([codes], [d_codes])

    codes64 = codes.astype(np.float64)
    return [LatentCode(codes64[i]) for i in range(m)]


def infer_latent(
    params: DecoderParams, samples: SdfSamples, cfg: TrainConfig = TrainConfig(steps=800)
) -> LatentCode:
    """Best-loss latent code for one sample set under a frozen decoder."""
    if len(samples.positions) == 0:
        raise InvalidParams("samples must be non-empty")
    dtype = params.weights[0].dtype
    rng = np.random.default_rng(cfg.seed)
    z = (rng.standard_normal(LATENT_DIM) * 0.01).astype(dtype)
    adam = Adam([z], cfg.lr_latents, cfg.beta1, cfg.beta2, cfg.eps)

    positions = np.asarray(samples.positions, dtype=dtype)
    targets = np.asarray(samples.values, dtype=dtype)
    n = len(positions)
    batch = min(cfg.batch_size, n)

    best_loss = np.inf
    best_z = z.copy()
    initial_loss = None
    bad_streak = 0
    for step in range(cfg.steps):
        idx = rng.integers(0, n, size=batch)
        x = positions[idx]
        s = targets[idx]
        z_rows = np.broadcast_to(z, (batch, LATENT_DIM))

        enc = encode_positions(x).astype(dtype, copy=False)
        inp = np.concatenate([z_rows, enc], axis=1)
        out, acts = mlp_forward(params.weights, params.biases, inp)
        pred = out[:, 0]

        loss = float(np.mean(clamped_l1(pred, s, cfg.delta)))
        loss += cfg.lam * float(z @ z)
        if not np.isfinite(loss):
            raise InferenceDiverged(f"non-finite loss at step {step}")
        if loss < best_loss:
            best_loss = loss
            best_z = z.copy()
        if initial_loss is None:
            initial_loss = loss
        if loss > _DIVERGENCE_FACTOR * max(initial_loss, 1e-12):
            bad_streak += 1
            if bad_streak >= _DIVERGENCE_PATIENCE:
                raise InferenceDiverged(
                    f"loss {loss:.4g} above 10x initial for {bad_streak} steps"
                )
        else:
            bad_streak = 0

        d_pred = _clamp_grad(pred, s, cfg.delta) / batch
        _, _, d_input = mlp_backward(params.weights, acts, d_pred[:, None])
        dz = d_input[:, :LATENT_DIM].sum(axis=0) + 2.0 * cfg.lam * z
        adam.step([z], [dz])

    return LatentCode(best_z.astype(np.float64))


# ---------------------------------------------------------------------------
# Reconstruction and interpolation


def decoded_field(
    params: DecoderParams, z: LatentCode, fast: bool = True, guard: bool = True
) -> ScalarField3:
    """The decoder as a scalar field p -> forward(params, z, p).

    With `fast`, grid-scale evaluations run in float32 internally (the
    decoded surface tolerance is far above float32 resolution); outputs
    are returned as float64 either way.

    With `guard`, values are floored at ||p|| - 1.  Every shape in this
    codec lives inside the unit ball, whose true signed distance obeys
    SDF(p) >= ||p|| - 1 everywhere, so the floor is exact for a correct
    field and only suppresses decoder extrapolation noise in the never-
    sampled corners of the [-1, 1]^3 cube.
    """
    dtype = np.float32 if fast else np.float64
    weights = [w.astype(dtype) for w in params.weights]
    biases = [b.astype(dtype) for b in params.biases]
    zv = z.values.astype(dtype)

    def fn(points: np.ndarray) -> np.ndarray:
        enc = encode_positions(points).astype(dtype)
        codes = np.broadcast_to(zv, (len(points), LATENT_DIM))
        x = np.concatenate([codes, enc], axis=1)
        out, _ = mlp_forward(weights, biases, x)
        values = out[:, 0].astype(np.float64)
        if guard:
            floor = np.linalg.norm(points, axis=1) - 1.0
            np.maximum(values, floor, out=values)
        return values

    return ScalarField3(fn, lipschitz_bound=2.0, name="decoded-sdf")


def reconstruct(params: DecoderParams, z: LatentCode, resolution: int = 64) -> TriMesh:
    """Marching cubes over the decoded field; raises EmptyReconstruction
    if the field has no zero crossing in the unit cube."""
    mesh = marching_cubes(decoded_field(params, z), resolution)
    if mesh.is_empty:
        raise EmptyReconstruction(
            f"decoded field has no surface at resolution {resolution}"
        )
    return mesh


def interpolate(codes: Sequence[LatentCode], weights: Sequence[float]) -> LatentCode:
    """Componentwise weighted average of latent codes."""
    if len(codes) != len(weights):
        raise InvalidWeights(
            f"{len(codes)} codes but {len(weights)} weights"
        )
    if len(codes) == 0:
        raise InvalidWeights("need at least one code")
    w = np.asarray(weights, dtype=np.float64)
    if abs(float(w.sum()) - 1.0) > 1e-9:
        raise InvalidWeights(f"weights must sum to 1, got {w.sum()!r}")
    out = np.zeros(LATENT_DIM)
    for wi, code in zip(w, codes):
        out += wi * code.values
    return LatentCode(out)


# ---------------------------------------------------------------------------
# Persistence


def save_checkpoint(params: DecoderParams, path) -> None:
    """Versioned binary checkpoint: magic, version, layer shapes, payload."""
    blob = bytearray()
    blob += _CHECKPOINT_MAGIC
    blob += struct.pack("<I", _CHECKPOINT_VERSION)
    blob += struct.pack("<I", len(params.weights))
    for w in params.weights:
        blob += struct.pack("<II", w.shape[0], w.shape[1])
    for w, b in zip(params.weights, params.biases):
        blob += w.astype("<f8").tobytes(order="C")
        blob += b.astype("<f8").tobytes(order="C")
    try:
        with open(path, "wb") as fh:
            fh.write(bytes(blob))
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> DecoderParams:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    if blob[:4] != _CHECKPOINT_MAGIC:
        raise InvalidModel(f"bad checkpoint magic in {path}")
    pos = 4
    try:
        (version,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        if version != _CHECKPOINT_VERSION:
            raise InvalidModel(f"unsupported checkpoint version {version}")
        (n_layers,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        shapes = []
        for _ in range(n_layers):
            fan_in, fan_out = struct.unpack_from("<II", blob, pos)
            pos += 8
            shapes.append((fan_in, fan_out))
        weights, biases = [], []
        for fan_in, fan_out in shapes:
            nw = fan_in * fan_out * 8
            w = np.frombuffer(blob, dtype="<f8", count=fan_in * fan_out, offset=pos)
            pos += nw
            b = np.frombuffer(blob, dtype="<f8", count=fan_out, offset=pos)
            pos += fan_out * 8
            weights.append(w.reshape(fan_in, fan_out).astype(np.float64))
            biases.append(b.astype(np.float64))
    except (struct.error, ValueError) as exc:
        raise InvalidModel(f"truncated or corrupt checkpoint {path}: {exc}") from exc
    if pos != len(blob):
        raise InvalidModel(f"checkpoint {path} has {len(blob) - pos} trailing bytes")
    return DecoderParams(weights, biases)


def save_latent_table(latents: Mapping[str, LatentCode], path) -> None:
    """Latent table as JSON {shape_id: [16 floats]}, keys sorted."""
    table = {sid: [float(v) for v in code.values] for sid, code in latents.items()}
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(table, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write latent table {path}: {exc}") from exc


def load_latent_table(path) -> dict[str, LatentCode]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            table = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read latent table {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidModel(f"latent table {path} is not valid JSON: {exc}") from exc
    if not isinstance(table, dict):
        raise InvalidModel(f"latent table {path} must be a JSON object")
    return {sid: LatentCode(np.asarray(vals, dtype=np.float64)) for sid, vals in table.items()}
