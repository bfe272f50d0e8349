"""Dense multilayer perceptron with hand-written reverse-mode gradients.

Plain-numpy building blocks for the shape codec and the sketch regressor:
He-initialized fully connected layers, ReLU activations (zero subgradient
at the kink), and an Adam optimizer with bias correction.  Everything is
bit-deterministic for a given seed and dtype.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidModel

__all__ = ["init_layers", "mlp_forward", "mlp_backward", "Adam"]


def init_layers(
    sizes: list[int] | tuple[int, ...],
    rng: np.random.Generator | int,
    dtype: np.dtype | type = np.float64,
    out_scale: float = 1.0,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """He-initialized (weights, biases) for the dense chain `sizes`.

    ``sizes = [in, h1, ..., out]`` produces ``len(sizes) - 1`` layers;
    weights are drawn N(0, 2/fan_in), biases start at zero.  The final
    layer's weights are additionally multiplied by `out_scale` — callers
    whose loss is flat outside a band around zero need initial outputs
    inside that band, otherwise most of the first batches carry no
    gradient.
    """
    if len(sizes) < 2 or any(int(s) <= 0 for s in sizes):
        raise InvalidModel(f"invalid layer sizes {sizes!r}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        scale = np.sqrt(2.0 / fan_in)
        weights.append((rng.standard_normal((fan_in, fan_out)) * scale).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    weights[-1] *= out_scale
    return weights, biases


def mlp_forward(
    weights: list[np.ndarray],
    biases: list[np.ndarray],
    x: np.ndarray,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass: ReLU after every layer except the last (linear) one.

    Returns ``(output, activations)`` where ``activations[l]`` is the input
    to layer ``l`` — exactly what `mlp_backward` needs.
    """
    acts = [x]
    h = x
    last = len(weights) - 1
    for l, (w, b) in enumerate(zip(weights, biases)):
        h = h @ w + b
        if l < last:
            np.maximum(h, 0.0, out=h)
            acts.append(h)
    return h, acts


def mlp_backward(
    weights: list[np.ndarray],
    acts: list[np.ndarray],
    d_out: np.ndarray,
) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
    """Reverse-mode gradients from ``d_out`` (gradient w.r.t. the output).

    Returns ``(d_weights, d_biases, d_input)``.  ReLU kinks use the zero
    subgradient (mask is ``activation > 0``).
    """
    n = len(weights)
    d_weights: list[np.ndarray] = [np.empty(0)] * n
    d_biases: list[np.ndarray] = [np.empty(0)] * n
    g = d_out
    for l in range(n - 1, -1, -1):
        d_weights[l] = acts[l].T @ g
        d_biases[l] = g.sum(axis=0)
        g = g @ weights[l].T
        if l > 0:
            g = g * (acts[l] > 0)
    return d_weights, d_biases, g


class Adam:
    """Adam with bias correction over a fixed list of parameter arrays.

    `step` updates the parameter arrays in place; moment buffers match the
    parameters' dtype so the whole update is deterministic for a given
    seed/dtype choice.
    """

    def __init__(
        self,
        params: list[np.ndarray],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        if lr <= 0:
            raise InvalidModel(f"learning rate must be positive, got {lr}")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self._m = [np.zeros_like(p) for p in params]
        self._v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if len(params) != len(self._m) or len(grads) != len(self._m):
            raise InvalidModel("parameter/gradient count mismatch")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
