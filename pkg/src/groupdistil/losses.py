"""Classification and distillation losses with analytic logit gradients.

The distillation objective combines a hard-label term and a softened
teacher-matching term:

    loss = (1 - alpha) * H(y, softmax(z_S))
         + alpha * tau^2 * KL(p_T, softmax(z_S / tau))

where p_T is the teacher's class distribution already softened at the
same tau. Its exact logit gradient is

    (1 - alpha) * (softmax(z_S) - y) / n
    + alpha * tau * (softmax(z_S / tau) - p_T) / n.

Every loss reduces by the arithmetic mean over the batch, so loss
magnitudes are batch-size invariant (this interacts with the group
weight step size; see robust_weights).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .network import Matrix, ensure_matrix

logger = logging.getLogger(__name__)

# Applied inside log() only, never to stored probabilities.
LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class KdConfig:
    """Distillation knobs: term balance alpha in [0, 1], temperature tau > 0."""

    alpha: float = 0.9
    tau: float = 4.0

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if not (self.tau > 0.0 and np.isfinite(self.tau)):
            raise ConfigError(f"tau must be positive and finite, got {self.tau}")


@dataclass(frozen=True)
class GroupLossVector:
    """Per-domain loss values plus how many samples produced each."""

    losses: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        losses = np.asarray(self.losses, dtype=np.float64).reshape(-1)
        counts = np.asarray(self.counts, dtype=np.int64).reshape(-1)
        if losses.shape != counts.shape:
            raise ShapeError(
                f"losses ({losses.shape}) and counts ({counts.shape}) differ"
            )
        if not np.isfinite(losses).all():
            raise ShapeError("per-group losses must be finite")
        object.__setattr__(self, "losses", losses)
        object.__setattr__(self, "counts", counts)


def softmax_tau(logits: Matrix, tau: float) -> Matrix:
    """Row-wise softmax of logits / tau, stable for any logit magnitude.

    The row max is subtracted before exponentiation, which also makes the
    output invariant to adding a constant to all logits in a row.
    """
    if not (tau > 0.0 and np.isfinite(tau)):
        raise ConfigError(f"tau must be positive and finite, got {tau}")
    logits = ensure_matrix(logits, "logits")
    scaled = logits / tau
    scaled = scaled - scaled.max(axis=1, keepdims=True)
    exp = np.exp(scaled)
    return exp / exp.sum(axis=1, keepdims=True)


def one_hot(labels, num_classes: int) -> Matrix:
    """Integer labels (n,) -> one-hot matrix (n, num_classes)."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size == 0:
        raise ShapeError("labels must be non-empty")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ShapeError(
            f"labels must lie in [0, {num_classes}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _check_same_shape(a: Matrix, b: Matrix, what: str) -> tuple[Matrix, Matrix]:
    a = ensure_matrix(a, f"{what} target")
    b = ensure_matrix(b, f"{what} prediction")
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")
    return a, b


def cross_entropy(target: Matrix, pred: Matrix) -> float:
    """Mean over the batch of -sum_c target_c * log(pred_c).

    ``target`` may be any distribution rows (one-hot included). Predicted
    probabilities are floored at LOG_FLOOR inside the log only.
    """
    target, pred = _check_same_shape(target, pred, "cross_entropy")
    return float(-np.mean(np.sum(target * np.log(np.maximum(pred, LOG_FLOOR)), axis=1)))


def kl_div(p: Matrix, q: Matrix) -> float:
    """Mean over the batch of sum_c p_c * log(p_c / q_c), with 0 log 0 := 0."""
    p, q = _check_same_shape(p, q, "kl_div")
    logs = np.log(np.maximum(p, LOG_FLOOR)) - np.log(np.maximum(q, LOG_FLOOR))
    return float(np.mean(np.sum(p * logs, axis=1)))


def softmax_ce(labels_onehot: Matrix, logits: Matrix) -> tuple[float, Matrix]:
    """Hard-label cross-entropy on raw logits, with its logit gradient.

    Returns ``(loss, (softmax(logits) - y) / n)``. This is the plain
    classification loss used for non-distilled training.
    """
    probs = softmax_tau(logits, 1.0)
    labels_onehot, probs = _check_same_shape(labels_onehot, probs, "softmax_ce")
    loss = cross_entropy(labels_onehot, probs)
    grad = (probs - labels_onehot) / labels_onehot.shape[0]
    return loss, grad


def kd_loss(
    labels_onehot: Matrix,
    student_logits: Matrix,
    teacher_probs_tau: Matrix | None,
    cfg: KdConfig,
) -> tuple[float, Matrix]:
    """Distillation loss and its gradient in the student logits.

    ``teacher_probs_tau`` must already be the teacher distribution
    softened at cfg.tau (or an exact target distribution such as one-hot
    labels). At alpha = 0 the teacher term is skipped entirely and the
    teacher input is ignored (it may be None); at alpha = 1 the
    hard-label term is skipped. Both reductions are exact, not just
    multiplications by zero.
    """
    student_logits = ensure_matrix(student_logits, "student_logits")
    labels_onehot = ensure_matrix(labels_onehot, "labels")
    if labels_onehot.shape != student_logits.shape:
        raise ShapeError(
            f"labels shape {labels_onehot.shape} does not match logits "
            f"{student_logits.shape}"
        )
    n = student_logits.shape[0]

    loss = 0.0
    grad = np.zeros_like(student_logits)
    if cfg.alpha < 1.0:
        hard_probs = softmax_tau(student_logits, 1.0)
        ce = cross_entropy(labels_onehot, hard_probs)
        if cfg.alpha == 0.0:
            return ce, (hard_probs - labels_onehot) / n
        loss += (1.0 - cfg.alpha) * ce
        grad += (1.0 - cfg.alpha) * ((hard_probs - labels_onehot) / n)
    if teacher_probs_tau is None:
        raise ConfigError("teacher probabilities are required when alpha > 0")
    teacher_probs_tau = ensure_matrix(teacher_probs_tau, "teacher_probs")
    if teacher_probs_tau.shape != student_logits.shape:
        raise ShapeError(
            f"teacher probs shape {teacher_probs_tau.shape} does not match "
            f"logits {student_logits.shape}"
        )
    soft_probs = softmax_tau(student_logits, cfg.tau)
    kl = kl_div(teacher_probs_tau, soft_probs)
    loss += cfg.alpha * cfg.tau**2 * kl
    grad += (cfg.alpha * cfg.tau) * ((soft_probs - teacher_probs_tau) / n)
    return float(loss), grad


def group_distil_loss(per_group: GroupLossVector, weights) -> float:
    """Weighted sum over domains: sum_d w_d * loss_d.

    Domains with zero contributing samples add 0 regardless of the
    stored loss value; they are logged so silent dropouts are visible.
    """
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if weights.shape != per_group.losses.shape:
        raise ShapeError(
            f"weights ({weights.shape}) and per-group losses "
            f"({per_group.losses.shape}) differ"
        )
    active = per_group.counts > 0
    if not active.all():
        empty = np.flatnonzero(~active).tolist()
        logger.warning("groups with no samples contribute 0: %s", empty)
    return float(np.sum(weights[active] * per_group.losses[active]))
