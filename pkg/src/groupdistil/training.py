"""Training procedures and evaluation.

Three procedures share one per-step skeleton:

    group_dro      domain-homogeneous batches, hard-label cross-entropy,
                   multiplicative group-weight update, weight-scaled step;
    group_distil   the same loop with the distillation loss against a
                   frozen teacher instead of cross-entropy;
    kd             pooled (domain-blind) batches, distillation loss,
                   unscaled steps - the standard distillation baseline.

A plain pooled cross-entropy loop (`train_erm`) is kept as the
non-robust control. Within a step the order is fixed: sample a domain,
compute the loss, update the group weights, then take the parameter
step scaled by the sampled domain's POST-update weight.

Every run is a pure function of (initial parameters, dataset, config):
the config seed creates the run's own generator, and identical configs
replay bit-identical logs.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    Dataset,
    LabeledBatch,
    draw_domain,
    sample_domain_batch,
    sample_pooled_batch,
)
from .errors import ConfigError, ContractError, DataError, NumericError
from .losses import KdConfig, kd_loss, one_hot, softmax_ce, softmax_tau
from .network import (
    Matrix,
    MlpParams,
    backward,
    forward,
    params_checksum,
)
from .optim import OptConfig, OptState, apply_update, init_opt_state
from .robust_weights import EgConfig, eg_update, init_uniform, snapshot

logger = logging.getLogger(__name__)

METHODS = ("group_dro", "kd", "group_distil", "erm")

FLOAT_FMT = "%.17g"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """One training run's settings; defaults follow the benchmark setup."""

    steps: int = 3000
    batch_size: int = 128
    kd: KdConfig = field(default_factory=KdConfig)
    eg: EgConfig = field(default_factory=EgConfig)
    opt: OptConfig = field(default_factory=OptConfig)
    seed: int = 0
    method: str = "group_distil"
    log_every: int = 50

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.log_every < 1:
            raise ConfigError(f"log_every must be >= 1, got {self.log_every}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")


@dataclass(frozen=True)
class Metrics:
    """Per-group and aggregate test accuracies, all in [0, 1]."""

    per_group_accuracy: tuple[float, ...]
    worst_group_accuracy: float
    average_accuracy: float
    adjusted_average_accuracy: float

    def to_dict(self) -> dict:
        return {
            "per_group_accuracy": list(self.per_group_accuracy),
            "worst_group_accuracy": self.worst_group_accuracy,
            "average_accuracy": self.average_accuracy,
            "adjusted_average_accuracy": self.adjusted_average_accuracy,
        }


@dataclass(frozen=True)
class LogRow:
    step: int
    domain: int
    loss: float
    weights: tuple[float, ...]


@dataclass
class RunRecord:
    """Everything one run produced: config echo, per-step rows, metrics."""

    config: TrainConfig
    seed: int
    rows: list[LogRow] = field(default_factory=list)
    metrics: Metrics | None = None


@dataclass(frozen=True)
class OracleTeacher:
    """Teacher stand-in that emits exact one-hot label distributions.

    One-hot targets are unreachable from finite logits, so this cannot be
    expressed as an MlpParams; it exists to test reductions of the
    distillation loop to hard-label training.
    """

    num_classes: int


Teacher = "MlpParams | OracleTeacher"


def _soft_targets(
    teacher, batch: LabeledBatch, num_classes: int, tau: float
) -> Matrix:
    if isinstance(teacher, OracleTeacher):
        return one_hot(batch.labels, teacher.num_classes)
    logits, _ = forward(teacher, batch.features)
    return softmax_tau(logits, tau)


def _teacher_output_dim(teacher) -> int:
    if isinstance(teacher, OracleTeacher):
        return teacher.num_classes
    return teacher.output_dim


def _check_model_fits(model: MlpParams, data: Dataset, who: str) -> None:
    if model.input_dim != data.features.shape[1]:
        raise ConfigError(
            f"{who} expects {model.input_dim} features, dataset has "
            f"{data.features.shape[1]}"
        )
    if model.output_dim != data.num_classes:
        raise ConfigError(
            f"{who} outputs {model.output_dim} classes, dataset has "
            f"{data.num_classes}"
        )


def _check_domains_nonempty(data: Dataset) -> None:
    for d in range(data.num_domains):
        if len(data.domain_indices.get(d, ())) == 0:
            raise DataError(f"domain {d} has no training samples")


def _should_log(t: int, cfg: TrainConfig) -> bool:
    return t % cfg.log_every == 0 or t == cfg.steps


def _finite_or_abort(loss: float, t: int) -> float:
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss at step {t}")
    return float(loss)


def train_group_dro(
    model_init: MlpParams, train: Dataset, cfg: TrainConfig
) -> tuple[MlpParams, RunRecord]:
    """Group-robust training from hard labels.

    Per step: draw a domain uniformly, sample a batch from it, compute
    mean cross-entropy, upweight that domain by exp(eta_w * loss),
    renormalize, then step the parameters scaled by the new weight.
    """
    _check_model_fits(model_init, train, "model")
    _check_domains_nonempty(train)
    rng = np.random.default_rng(cfg.seed)
    record = RunRecord(config=cfg, seed=cfg.seed)
    weights = init_uniform(train.num_domains)
    params = model_init
    state = init_opt_state(params, cfg.opt)
    for t in range(1, cfg.steps + 1):
        d = draw_domain(rng, train.num_domains)
        batch = sample_domain_batch(train, d, cfg.batch_size, rng)
        logits, cache = forward(params, batch.features)
        loss, d_logits = softmax_ce(one_hot(batch.labels, train.num_classes), logits)
        loss = _finite_or_abort(loss, t)
        weights = eg_update(weights, d, loss, cfg.eg)
        grads = backward(params, cache, d_logits)
        params, state = apply_update(params, grads, weights[d], state, cfg.opt)
        if _should_log(t, cfg):
            record.rows.append(LogRow(t, d, loss, tuple(snapshot(weights))))
    return params, record


def train_group_distil(
    student_init: MlpParams, teacher, train: Dataset, cfg: TrainConfig
) -> tuple[MlpParams, RunRecord]:
    """Group-robust distillation: the group_dro loop with the
    distillation loss in place of cross-entropy.

    The teacher is frozen; its soft targets are recomputed per batch at
    cfg.kd.tau. An OracleTeacher supplies exact one-hot targets instead.
    """
    _check_model_fits(student_init, train, "student")
    _check_domains_nonempty(train)
    if _teacher_output_dim(teacher) != student_init.output_dim:
        raise ConfigError(
            f"teacher outputs {_teacher_output_dim(teacher)} classes, "
            f"student outputs {student_init.output_dim}"
        )
    before = None
    if isinstance(teacher, MlpParams):
        before = params_checksum(teacher)
    rng = np.random.default_rng(cfg.seed)
    record = RunRecord(config=cfg, seed=cfg.seed)
    weights = init_uniform(train.num_domains)
    params = student_init
    state = init_opt_state(params, cfg.opt)
    for t in range(1, cfg.steps + 1):
        d = draw_domain(rng, train.num_domains)
        batch = sample_domain_batch(train, d, cfg.batch_size, rng)
        targets = (
            _soft_targets(teacher, batch, train.num_classes, cfg.kd.tau)
            if cfg.kd.alpha > 0.0
            else None
        )
        logits, cache = forward(params, batch.features)
        loss, d_logits = kd_loss(
            one_hot(batch.labels, train.num_classes), logits, targets, cfg.kd
        )
        loss = _finite_or_abort(loss, t)
        weights = eg_update(weights, d, loss, cfg.eg)
        grads = backward(params, cache, d_logits)
        params, state = apply_update(params, grads, weights[d], state, cfg.opt)
        if _should_log(t, cfg):
            record.rows.append(LogRow(t, d, loss, tuple(snapshot(weights))))
    if before is not None and params_checksum(teacher) != before:
        raise ContractError("teacher parameters changed during distillation")
    return params, record


def train_kd(
    student_init: MlpParams, teacher, train: Dataset, cfg: TrainConfig
) -> tuple[MlpParams, RunRecord]:
    """Vanilla distillation on pooled, domain-blind batches.

    No group weights: every step minimizes the distillation loss against
    the frozen teacher at full scale. Logged rows carry domain -1 and
    the (never-updated) uniform weight vector so all run logs share one
    schema.
    """
    _check_model_fits(student_init, train, "student")
    if _teacher_output_dim(teacher) != student_init.output_dim:
        raise ConfigError(
            f"teacher outputs {_teacher_output_dim(teacher)} classes, "
            f"student outputs {student_init.output_dim}"
        )
    before = None
    if isinstance(teacher, MlpParams):
        before = params_checksum(teacher)
    rng = np.random.default_rng(cfg.seed)
    record = RunRecord(config=cfg, seed=cfg.seed)
    weights = init_uniform(train.num_domains)
    params = student_init
    state = init_opt_state(params, cfg.opt)
    for t in range(1, cfg.steps + 1):
        batch = sample_pooled_batch(train, cfg.batch_size, rng)
        targets = (
            _soft_targets(teacher, batch, train.num_classes, cfg.kd.tau)
            if cfg.kd.alpha > 0.0
            else None
        )
        logits, cache = forward(params, batch.features)
        loss, d_logits = kd_loss(
            one_hot(batch.labels, train.num_classes), logits, targets, cfg.kd
        )
        loss = _finite_or_abort(loss, t)
        grads = backward(params, cache, d_logits)
        params, state = apply_update(params, grads, 1.0, state, cfg.opt)
        if _should_log(t, cfg):
            record.rows.append(LogRow(t, -1, loss, tuple(snapshot(weights))))
    if before is not None and params_checksum(teacher) != before:
        raise ContractError("teacher parameters changed during distillation")
    return params, record


def train_erm(
    model_init: MlpParams, train: Dataset, cfg: TrainConfig
) -> tuple[MlpParams, RunRecord]:
    """Plain average-loss training: pooled batches, cross-entropy,
    unscaled steps. The non-robust control arm."""
    _check_model_fits(model_init, train, "model")
    rng = np.random.default_rng(cfg.seed)
    record = RunRecord(config=cfg, seed=cfg.seed)
    weights = init_uniform(train.num_domains)
    params = model_init
    state = init_opt_state(params, cfg.opt)
    for t in range(1, cfg.steps + 1):
        batch = sample_pooled_batch(train, cfg.batch_size, rng)
        logits, cache = forward(params, batch.features)
        loss, d_logits = softmax_ce(one_hot(batch.labels, train.num_classes), logits)
        loss = _finite_or_abort(loss, t)
        grads = backward(params, cache, d_logits)
        params, state = apply_update(params, grads, 1.0, state, cfg.opt)
        if _should_log(t, cfg):
            record.rows.append(LogRow(t, -1, loss, tuple(snapshot(weights))))
    return params, record


def predict(model: MlpParams, features: Matrix) -> np.ndarray:
    """Class predictions by argmax over logits (first index on ties)."""
    logits, _ = forward(model, features)
    return np.argmax(logits, axis=1)


def evaluate(
    model: MlpParams, test: Dataset, train_group_proportions
) -> Metrics:
    """Per-group, worst-group, pooled and train-proportion-weighted
    accuracy on a test set with every group present."""
    _check_model_fits(model, test, "model")
    props = np.asarray(train_group_proportions, dtype=np.float64).reshape(-1)
    if props.shape[0] != test.num_domains:
        raise ConfigError(
            f"need {test.num_domains} train proportions, got {props.shape[0]}"
        )
    preds = predict(model, test.features)
    correct = preds == test.labels
    per_group = []
    for d in range(test.num_domains):
        indices = test.domain_indices.get(d)
        if indices is None or len(indices) == 0:
            raise DataError(f"group {d} has no test samples")
        per_group.append(float(correct[indices].mean()))
    return Metrics(
        per_group_accuracy=tuple(per_group),
        worst_group_accuracy=min(per_group),
        average_accuracy=float(correct.mean()),
        adjusted_average_accuracy=float(np.dot(props, per_group)),
    )


def train_for_method(
    method: str,
    model_init: MlpParams,
    teacher,
    train: Dataset,
    cfg: TrainConfig,
) -> tuple[MlpParams, RunRecord]:
    """Dispatch helper used by the CLI and the experiment runner."""
    if method == "group_dro":
        return train_group_dro(model_init, train, cfg)
    if method == "erm":
        return train_erm(model_init, train, cfg)
    if teacher is None:
        raise ConfigError(f"method {method!r} requires a teacher")
    if method == "kd":
        return train_kd(model_init, teacher, train, cfg)
    if method == "group_distil":
        return train_group_distil(model_init, teacher, train, cfg)
    raise ConfigError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# run artifacts: checkpoint JSON, per-run CSV log, metrics JSON


def _json17(value) -> str:
    # json.dump cannot format floats; this fixed-schema writer prints
    # every float with 17 significant digits for exact round-trips.
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return FLOAT_FMT % float(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_json17(v) for v in value) + "]"
    if isinstance(value, dict):
        return (
            "{"
            + ", ".join(f"{json.dumps(k)}: {_json17(v)}" for k, v in value.items())
            + "}"
        )
    raise TypeError(f"cannot serialize {type(value)!r}")


def save_checkpoint(model: MlpParams, path) -> None:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "dims": list(model.dims),
        "hidden_activation": model.hidden_activation,
        "layers": [
            {"weight": w.tolist(), "bias": b.reshape(-1).tolist()}
            for w, b in model.layers
        ],
    }
    Path(path).write_text(_json17(doc) + "\n")


def load_checkpoint(path) -> MlpParams:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON") from exc
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ConfigError(
            f"{path}: unsupported checkpoint format_version {version!r}"
        )
    layers = tuple(
        (
            np.asarray(layer["weight"], dtype=np.float64),
            np.asarray(layer["bias"], dtype=np.float64).reshape(1, -1),
        )
        for layer in doc["layers"]
    )
    model = MlpParams(layers=layers, hidden_activation=doc["hidden_activation"])
    if list(model.dims) != list(doc["dims"]):
        raise ConfigError(f"{path}: dims field does not match stored layers")
    return model


def write_run_csv(record: RunRecord, num_domains: int, path) -> None:
    """Per-step log: step,domain,loss,w_0..w_{D-1}."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["step", "domain", "loss"] + [f"w_{d}" for d in range(num_domains)]
        )
        for row in record.rows:
            writer.writerow(
                [row.step, row.domain, FLOAT_FMT % row.loss]
                + [FLOAT_FMT % w for w in row.weights]
            )


def write_metrics_json(record: RunRecord, path) -> None:
    if record.metrics is None:
        raise ContractError("run record has no metrics attached yet")
    doc = {
        "config": asdict(record.config),
        "seed": record.seed,
        **record.metrics.to_dict(),
    }
    with Path(path).open("w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
