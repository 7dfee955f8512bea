"""Dense feedforward classifiers with explicit forward/backward passes.

All numeric state is float64 numpy arrays with samples as rows: features
are ``(n, F)``, logits ``(n, C)``. Layer ``k`` computes
``h_k = act(h_{k-1} @ W_k + b_k)`` with no activation after the last
layer. Backward passes are hand-written per-layer formulas (affine, tanh,
relu) so they can be checked entry-by-entry against central finite
differences; ``grad_check`` is that checker.

Conventions fixed here and asserted in the test suite:
    - row-major, batch-as-rows everywhere;
    - the loss owns the mean-over-batch factor, so ``backward`` never
      rescales the upstream gradient;
    - the relu subgradient at exactly 0 is 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import hashlib

import numpy as np

from .errors import ConfigError, ContractError, NumericError, ShapeError

# The sole numeric container: a 2-D, C-ordered float64 array.
Matrix = np.ndarray

ACTIVATIONS = ("tanh", "relu")

# dLoss/dParameter for each layer, shaped exactly like the layer.
ParamGrads = list[tuple[Matrix, Matrix]]

LossFn = Callable[[Matrix], tuple[float, Matrix]]


def ensure_matrix(values, name: str = "matrix") -> Matrix:
    """Coerce to a 2-D float64 array and enforce the finiteness invariant."""
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name} must be non-empty, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NumericError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class MlpParams:
    """Parameters of a feedforward classifier.

    ``layers[k] = (weight, bias)`` with weight ``(in_k, out_k)`` and bias
    ``(1, out_k)``. Consecutive dims must chain; a broken chain is
    rejected here, at construction, never at forward time.
    """

    layers: tuple[tuple[Matrix, Matrix], ...]
    hidden_activation: str = "tanh"

    def __post_init__(self):
        if self.hidden_activation not in ACTIVATIONS:
            raise ConfigError(
                f"hidden_activation must be one of {ACTIVATIONS}, "
                f"got {self.hidden_activation!r}"
            )
        if not self.layers:
            raise ShapeError("model needs at least one layer")
        checked = []
        prev_out = None
        for k, (weight, bias) in enumerate(self.layers):
            weight = ensure_matrix(weight, f"layer {k} weight")
            bias = ensure_matrix(bias, f"layer {k} bias")
            if bias.shape != (1, weight.shape[1]):
                raise ShapeError(
                    f"layer {k} bias shape {bias.shape} does not match "
                    f"weight columns {weight.shape[1]}"
                )
            if prev_out is not None and weight.shape[0] != prev_out:
                raise ShapeError(
                    f"layer {k} expects {weight.shape[0]} inputs but "
                    f"layer {k - 1} produces {prev_out}"
                )
            prev_out = weight.shape[1]
            checked.append((weight, bias))
        object.__setattr__(self, "layers", tuple(checked))

    @property
    def dims(self) -> tuple[int, ...]:
        """(input_dim, hidden..., output_dim)."""
        return (self.layers[0][0].shape[0],) + tuple(
            w.shape[1] for w, _ in self.layers
        )

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[1]


def init_mlp(
    dims: Sequence[int],
    hidden_activation: str = "tanh",
    rng: np.random.Generator | None = None,
) -> MlpParams:
    """Build an MlpParams with N(0, 1/fan_in) weights and zero biases.

    ``dims`` is (input, hidden..., output); ``dims=[F, C]`` gives a
    linear model.
    """
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ConfigError(f"dims must be >=2 positive integers, got {dims}")
    if rng is None:
        rng = np.random.default_rng()
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weight = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
        bias = np.zeros((1, fan_out))
        layers.append((weight, bias))
    return MlpParams(layers=tuple(layers), hidden_activation=hidden_activation)


@dataclass(frozen=True)
class ForwardCache:
    """Activations saved by forward for reuse in backward.

    ``layer_inputs[k]`` is the input to layer ``k`` (so ``layer_inputs[0]``
    is the feature batch and, for k >= 1, the post-activation output of
    layer k-1). The signature ties the cache to the producing model and
    batch so a stale cache is rejected instead of silently misused.
    """

    layer_inputs: tuple[Matrix, ...]
    signature: tuple


def _signature(model: MlpParams, n: int) -> tuple:
    return (model.dims, model.hidden_activation, n)


def _activate(z: Matrix, kind: str) -> Matrix:
    if kind == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _activation_deriv_from_output(a: Matrix, kind: str) -> Matrix:
    # Both derivatives are recoverable from the activated output: for
    # tanh, 1 - a^2; for relu, 1 where a > 0 (0 at the kink).
    if kind == "tanh":
        return 1.0 - a * a
    return (a > 0.0).astype(np.float64)


def forward(model: MlpParams, features: Matrix) -> tuple[Matrix, ForwardCache]:
    """Run the network on a feature batch.

    Returns ``(logits, cache)`` with logits ``(n, C)``; the cache is
    enough for ``backward`` without recomputation.
    """
    features = ensure_matrix(features, "features")
    if features.shape[1] != model.input_dim:
        raise ShapeError(
            f"features have {features.shape[1]} columns but layer 0 "
            f"expects {model.input_dim}"
        )
    last = len(model.layers) - 1
    h = features
    layer_inputs = [features]
    for k, (weight, bias) in enumerate(model.layers):
        z = h @ weight + bias
        h = _activate(z, model.hidden_activation) if k < last else z
        if k < last:
            layer_inputs.append(h)
    logits = h
    if not np.isfinite(logits).all():
        raise NumericError("forward produced non-finite logits")
    cache = ForwardCache(
        layer_inputs=tuple(layer_inputs),
        signature=_signature(model, features.shape[0]),
    )
    return logits, cache


def backward(model: MlpParams, cache: ForwardCache, d_logits: Matrix) -> ParamGrads:
    """Backpropagate dLoss/dLogits to gradients for every parameter.

    For layer k with input h and upstream delta:
        dW_k = h^T @ delta,   db_k = sum_rows(delta),
        delta_{k-1} = (delta @ W_k^T) * act'(h).
    The upstream gradient carries any batch-mean factor already.
    """
    d_logits = ensure_matrix(d_logits, "d_logits")
    if cache.signature != _signature(model, d_logits.shape[0]):
        raise ContractError(
            "cache does not match this model/batch; rerun forward"
        )
    if d_logits.shape[1] != model.output_dim:
        raise ShapeError(
            f"d_logits has {d_logits.shape[1]} columns, model outputs "
            f"{model.output_dim}"
        )
    grads: ParamGrads = [None] * len(model.layers)  # type: ignore[list-item]
    delta = d_logits
    for k in range(len(model.layers) - 1, -1, -1):
        h_in = cache.layer_inputs[k]
        weight, _ = model.layers[k]
        grads[k] = (h_in.T @ delta, delta.sum(axis=0, keepdims=True))
        if k > 0:
            delta = (delta @ weight.T) * _activation_deriv_from_output(
                h_in, model.hidden_activation
            )
    return grads


def grad_check(
    model: MlpParams,
    loss_fn: LossFn,
    features: Matrix,
    eps: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-FD gradients.

    ``loss_fn(logits) -> (loss, dLoss_dLogits)`` closes over whatever
    targets it needs. Every parameter entry is probed at +/- eps and
    compared as |analytic - fd| / max(1e-12, |analytic| + |fd|).
    """
    if not (0.0 < eps <= 1e-3):
        raise ConfigError(f"eps must be in (0, 1e-3], got {eps}")
    features = ensure_matrix(features, "features")
    logits, cache = forward(model, features)
    loss0, d_logits = loss_fn(logits)
    if not np.isfinite(loss0):
        raise NumericError("loss is non-finite at the evaluation point")
    analytic = backward(model, cache, d_logits)

    def loss_at(layers) -> float:
        probed = MlpParams(layers=layers, hidden_activation=model.hidden_activation)
        value, _ = loss_fn(forward(probed, features)[0])
        if not np.isfinite(value):
            raise NumericError("loss became non-finite during FD probing")
        return value

    worst = 0.0
    layers = [(w.copy(), b.copy()) for w, b in model.layers]
    for k, (weight, bias) in enumerate(layers):
        for arr, grad in ((weight, analytic[k][0]), (bias, analytic[k][1])):
            flat = arr.reshape(-1)
            gflat = grad.reshape(-1)
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + eps
                plus = loss_at(tuple((w, b) for w, b in layers))
                flat[i] = original - eps
                minus = loss_at(tuple((w, b) for w, b in layers))
                flat[i] = original
                fd = (plus - minus) / (2.0 * eps)
                err = abs(gflat[i] - fd) / max(1e-12, abs(gflat[i]) + abs(fd))
                worst = max(worst, err)
    return worst


def params_checksum(model: MlpParams) -> str:
    """Content hash of the parameters, for immutability assertions."""
    digest = hashlib.sha256()
    digest.update(repr((model.dims, model.hidden_activation)).encode())
    for weight, bias in model.layers:
        digest.update(weight.tobytes())
        digest.update(bias.tobytes())
    return digest.hexdigest()
