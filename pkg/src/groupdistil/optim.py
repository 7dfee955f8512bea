"""SGD and Adam parameter updates with a group-weight scale factor.

The scale multiplies the GRADIENT, not the finished step: scaling the
gradient is the same as scaling the loss by the active group weight,
which is the semantics the weighted objective asks for. Under SGD both
readings coincide; under Adam they do not, and the gradient reading is
the one implemented here (moments accumulate the scaled gradient).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .network import MlpParams, ParamGrads

OPTIMIZERS = ("sgd", "adam")


@dataclass(frozen=True)
class OptConfig:
    kind: str = "adam"
    eta_theta: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise ConfigError(f"kind must be one of {OPTIMIZERS}, got {self.kind!r}")
        if not (self.eta_theta > 0 and np.isfinite(self.eta_theta)):
            raise ConfigError(f"eta_theta must be > 0, got {self.eta_theta}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("betas must lie in [0, 1)")
        if self.eps < 0:
            raise ConfigError("eps must be >= 0")


@dataclass
class OptState:
    """Adam moment accumulators shaped like the parameters; empty for SGD."""

    step: int = 0
    m: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    v: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)


def init_opt_state(params: MlpParams, cfg: OptConfig) -> OptState:
    if cfg.kind == "sgd":
        return OptState()
    zeros = lambda: [
        (np.zeros_like(w), np.zeros_like(b)) for w, b in params.layers
    ]
    return OptState(step=0, m=zeros(), v=zeros())


def _check_grads(params: MlpParams, grads: ParamGrads) -> None:
    if len(grads) != len(params.layers):
        raise ShapeError(
            f"got {len(grads)} gradient layers for {len(params.layers)} "
            f"parameter layers"
        )
    for k, ((w, b), (gw, gb)) in enumerate(zip(params.layers, grads)):
        if gw.shape != w.shape or gb.shape != b.shape:
            raise ShapeError(f"gradient shapes for layer {k} do not mirror params")


def sgd_step(
    params: MlpParams, grads: ParamGrads, scale: float, cfg: OptConfig
) -> MlpParams:
    """theta <- theta - eta_theta * scale * grad, elementwise."""
    _check_grads(params, grads)
    factor = cfg.eta_theta * scale
    layers = tuple(
        (w - factor * gw, b - factor * gb)
        for (w, b), (gw, gb) in zip(params.layers, grads)
    )
    return MlpParams(layers=layers, hidden_activation=params.hidden_activation)


def adam_step(
    params: MlpParams,
    grads: ParamGrads,
    scale: float,
    state: OptState,
    cfg: OptConfig,
) -> tuple[MlpParams, OptState]:
    """One bias-corrected Adam step on the scaled gradient.

    Moments update even when scale is 0 (the recursion sees a zero
    gradient), mirroring what scaling the loss would do.
    """
    _check_grads(params, grads)
    if len(state.m) != len(params.layers):
        raise ShapeError("optimizer state does not mirror the parameters")
    t = state.step + 1
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    new_layers = []
    new_m = []
    new_v = []
    for (w, b), (gw, gb), (mw, mb), (vw, vb) in zip(
        params.layers, grads, state.m, state.v
    ):
        out_w_b = []
        for value, grad, m_prev, v_prev in ((w, gw, mw, vw), (b, gb, mb, vb)):
            g = scale * grad
            m = cfg.beta1 * m_prev + (1.0 - cfg.beta1) * g
            v = cfg.beta2 * v_prev + (1.0 - cfg.beta2) * g * g
            step = cfg.eta_theta * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
            if not np.isfinite(step).all():
                raise NumericError("adam step produced non-finite values")
            out_w_b.append((value - step, m, v))
        (w2, mw2, vw2), (b2, mb2, vb2) = out_w_b
        new_layers.append((w2, b2))
        new_m.append((mw2, mb2))
        new_v.append((vw2, vb2))
    params2 = MlpParams(
        layers=tuple(new_layers), hidden_activation=params.hidden_activation
    )
    return params2, OptState(step=t, m=new_m, v=new_v)


def apply_update(
    params: MlpParams,
    grads: ParamGrads,
    scale: float,
    state: OptState,
    cfg: OptConfig,
) -> tuple[MlpParams, OptState]:
    """Dispatch to the configured optimizer; SGD passes state through."""
    if cfg.kind == "sgd":
        return sgd_step(params, grads, scale, cfg), state
    return adam_step(params, grads, scale, state, cfg)
