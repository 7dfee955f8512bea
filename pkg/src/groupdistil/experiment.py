"""Multi-seed comparison experiment: teacher plus three student arms.

For every seed the runner trains a group-robust teacher, then three
students from one shared initialization: a group-robust student from
scratch (`dro_student`), a vanilla distilled student (`kd`), and a
group-robust distilled student (`group_distil`). Per-arm metrics land
under ``<output_dir>/seed_<s>/<arm>/``; the summary table aggregates
mean and sample (n-1) standard deviation across seeds.

Seeds are independent jobs and may run in parallel; every job
regenerates the (deterministic) dataset from its spec and owns its own
generator, so parallel and serial execution produce byte-identical
artifacts.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import Dataset, GroupShiftSpec, generate
from .errors import ConfigError
from .losses import KdConfig
from .network import ACTIVATIONS, MlpParams, init_mlp
from .optim import OptConfig
from .robust_weights import EgConfig
from .training import (
    Metrics,
    TrainConfig,
    evaluate,
    save_checkpoint,
    train_for_method,
    write_metrics_json,
    write_run_csv,
)

STUDENT_ARMS = ("dro_student", "kd", "group_distil")
ARM_METHODS = {
    "teacher": "group_dro",
    "dro_student": "group_dro",
    "kd": "kd",
    "group_distil": "group_distil",
}


@dataclass(frozen=True)
class ArmConfig:
    """Architecture plus training settings for one model arm."""

    hidden_dims: tuple[int, ...] = (16,)
    activation: str = "tanh"
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        object.__setattr__(
            self, "hidden_dims", tuple(int(h) for h in self.hidden_dims)
        )
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError(f"hidden_dims must be positive, got {self.hidden_dims}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(
                f"activation must be one of {ACTIVATIONS}, got {self.activation!r}"
            )

    def dims(self, feature_dim: int, num_classes: int) -> tuple[int, ...]:
        return (feature_dim,) + self.hidden_dims + (num_classes,)


@dataclass(frozen=True)
class ExperimentConfig:
    data: GroupShiftSpec = field(default_factory=GroupShiftSpec)
    teacher: ArmConfig = field(default_factory=ArmConfig)
    dro_student: ArmConfig = field(default_factory=ArmConfig)
    kd: ArmConfig = field(default_factory=ArmConfig)
    group_distil: ArmConfig = field(default_factory=ArmConfig)
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    output_dir: str = "runs/default"

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds must be distinct, got {list(self.seeds)}")
        for arm in ("teacher",) + STUDENT_ARMS:
            cfg: ArmConfig = getattr(self, arm)
            if cfg.train.method != ARM_METHODS[arm]:
                raise ConfigError(
                    f"arm {arm!r} must use method {ARM_METHODS[arm]!r}, "
                    f"got {cfg.train.method!r}"
                )

    def arm(self, name: str) -> ArmConfig:
        if name not in ARM_METHODS:
            raise ConfigError(f"unknown arm {name!r}")
        return getattr(self, name)


def default_experiment_config(output_dir: str = "runs/default") -> ExperimentConfig:
    """The benchmark experiment: 4-group shifted data, tanh MLPs,
    distillation at alpha=0.9 / tau=4, group-weight step 0.01.

    The teacher is a wider net trained long enough with hard labels that
    it stays strong on average but imperfect on the rare groups; the
    students are deliberately small, so what they keep is decided by how
    training weights the groups. These step/width/learning-rate choices
    are calibrated so each arm shows its characteristic behavior within
    seconds per seed.
    """
    student_train = TrainConfig(
        steps=6000,
        batch_size=128,
        kd=KdConfig(alpha=0.9, tau=4.0),
        eg=EgConfig(eta_w=0.01),
        opt=OptConfig(kind="adam", eta_theta=1e-2),
        log_every=50,
    )
    teacher_train = replace(
        student_train,
        steps=3000,
        opt=OptConfig(kind="adam", eta_theta=5e-3),
        method="group_dro",
    )
    student_arch = dict(hidden_dims=(4,), activation="tanh")
    return ExperimentConfig(
        data=GroupShiftSpec(),
        teacher=ArmConfig(hidden_dims=(32,), activation="tanh", train=teacher_train),
        dro_student=ArmConfig(
            **student_arch, train=replace(student_train, method="group_dro")
        ),
        kd=ArmConfig(**student_arch, train=replace(student_train, method="kd")),
        group_distil=ArmConfig(
            **student_arch, train=replace(student_train, method="group_distil")
        ),
        seeds=(1, 2, 3, 4, 5),
        output_dir=output_dir,
    )


# ---------------------------------------------------------------------------
# config (de)serialization


def _build(cls, doc: dict, where: str, **overrides):
    known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown field(s) in {where}: {sorted(unknown)}")
    return cls(**{**doc, **overrides})


def _arm_from_dict(doc: dict, arm: str) -> ArmConfig:
    doc = dict(doc)
    train_doc = dict(doc.pop("train", {}))
    method = train_doc.pop("method", ARM_METHODS[arm])
    if method != ARM_METHODS[arm]:
        raise ConfigError(
            f"{arm}.train.method must be {ARM_METHODS[arm]!r}, got {method!r}"
        )
    kd = _build(KdConfig, train_doc.pop("kd", {}), f"{arm}.train.kd")
    eg = _build(EgConfig, train_doc.pop("eg", {}), f"{arm}.train.eg")
    opt = _build(OptConfig, train_doc.pop("opt", {}), f"{arm}.train.opt")
    train = _build(
        TrainConfig, train_doc, f"{arm}.train", kd=kd, eg=eg, opt=opt, method=method
    )
    return _build(ArmConfig, doc, arm, train=train)


def experiment_config_from_dict(doc: dict) -> ExperimentConfig:
    doc = dict(doc)
    data = _build(GroupShiftSpec, dict(doc.pop("data", {})), "data")
    arms = {
        arm: _arm_from_dict(doc.pop(arm, {}), arm)
        for arm in ("teacher",) + STUDENT_ARMS
    }
    return _build(ExperimentConfig, doc, "experiment config", data=data, **arms)


def experiment_config_to_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)


def load_experiment_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return experiment_config_from_dict(doc)


def save_experiment_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(
        json.dumps(experiment_config_to_dict(cfg), indent=2) + "\n"
    )


# ---------------------------------------------------------------------------
# running


def _run_arm(
    cfg: ExperimentConfig,
    arm: str,
    seed: int,
    teacher: MlpParams | None,
    train: Dataset,
    test: Dataset,
    out_dir: Path,
) -> tuple[MlpParams, Metrics]:
    arm_cfg = cfg.arm(arm)
    run_cfg = replace(arm_cfg.train, seed=seed)
    init = init_mlp(
        arm_cfg.dims(cfg.data.feature_dim, cfg.data.num_classes),
        arm_cfg.activation,
        np.random.default_rng(seed),
    )
    params, record = train_for_method(run_cfg.method, init, teacher, train, run_cfg)
    record.metrics = evaluate(params, test, cfg.data.train_group_proportions)
    arm_dir = out_dir / arm
    arm_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, arm_dir / "checkpoint.json")
    write_run_csv(record, train.num_domains, arm_dir / "run.csv")
    write_metrics_json(record, arm_dir / "metrics.json")
    return params, record.metrics


def run_seed(cfg: ExperimentConfig, seed: int) -> dict[str, Metrics]:
    """Teacher then all three student arms for one seed.

    Regenerates the dataset from its spec (deterministic) so seed jobs
    stay independent across processes.
    """
    train, test = generate(cfg.data)
    out_dir = Path(cfg.output_dir) / f"seed_{seed}"
    results: dict[str, Metrics] = {}
    teacher_params, results["teacher"] = _run_arm(
        cfg, "teacher", seed, None, train, test, out_dir
    )
    for arm in STUDENT_ARMS:
        teacher_arg = teacher_params if ARM_METHODS[arm] != "group_dro" else None
        _, results[arm] = _run_arm(cfg, arm, seed, teacher_arg, train, test, out_dir)
    return results


@dataclass(frozen=True)
class SummaryRow:
    arm: str
    worst_mean: float
    worst_std: float
    adjusted_mean: float
    adjusted_std: float
    average_mean: float
    average_std: float


def summarize(
    cfg: ExperimentConfig, per_seed: dict[int, dict[str, Metrics]]
) -> list[SummaryRow]:
    """One row per student arm, ordered by mean worst-group accuracy
    (best first); aggregates use the sample (n-1) standard deviation."""
    rows = []
    for arm in STUDENT_ARMS:
        worst = [per_seed[s][arm].worst_group_accuracy for s in cfg.seeds]
        adjusted = [per_seed[s][arm].adjusted_average_accuracy for s in cfg.seeds]
        average = [per_seed[s][arm].average_accuracy for s in cfg.seeds]
        rows.append(
            SummaryRow(
                arm=arm,
                worst_mean=float(np.mean(worst)),
                worst_std=float(np.std(worst, ddof=1)),
                adjusted_mean=float(np.mean(adjusted)),
                adjusted_std=float(np.std(adjusted, ddof=1)),
                average_mean=float(np.mean(average)),
                average_std=float(np.std(average, ddof=1)),
            )
        )
    rows.sort(key=lambda r: (-r.worst_mean, r.arm))
    return rows


def write_summary_csv(rows: list[SummaryRow], path) -> None:
    header = (
        "arm,worst_group_mean,worst_group_std,"
        "adjusted_avg_mean,adjusted_avg_std,average_mean,average_std"
    )
    lines = [header]
    for r in rows:
        lines.append(
            ",".join(
                [r.arm]
                + [
                    "%.17g" % v
                    for v in (
                        r.worst_mean,
                        r.worst_std,
                        r.adjusted_mean,
                        r.adjusted_std,
                        r.average_mean,
                        r.average_std,
                    )
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def format_summary_text(rows: list[SummaryRow]) -> str:
    """Aligned mean +/- std table, accuracies in percent."""
    headers = ["arm", "worst-group acc (%)", "adjusted avg acc (%)", "avg acc (%)"]
    body = [
        [
            r.arm,
            f"{100 * r.worst_mean:.2f} +/- {100 * r.worst_std:.2f}",
            f"{100 * r.adjusted_mean:.2f} +/- {100 * r.adjusted_std:.2f}",
            f"{100 * r.average_mean:.2f} +/- {100 * r.average_std:.2f}",
        ]
        for r in rows
    ]
    widths = [
        max(len(row[i]) for row in [headers] + body) for i in range(len(headers))
    ]
    lines = [
        "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip()
        for row in [headers] + body
    ]
    return "\n".join(lines) + "\n"


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> list[SummaryRow]:
    """All seeds, optionally in parallel; writes summary.csv/summary.txt.

    If any seed fails, the successful seeds' partial summary and the
    failure details land in partial_results.json and the first failure
    is re-raised.
    """
    if len(cfg.seeds) < 2:
        raise ConfigError(
            f"need >= 2 seeds for mean/std summaries, got {len(cfg.seeds)}"
        )
    if jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {jobs}")
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_experiment_config(cfg, out_dir / "config_echo.json")

    per_seed: dict[int, dict[str, Metrics]] = {}
    failures: list[tuple[int, BaseException]] = []
    if jobs == 1:
        for seed in cfg.seeds:
            try:
                per_seed[seed] = run_seed(cfg, seed)
            except Exception as exc:  # noqa: BLE001 - reported per seed
                failures.append((seed, exc))
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(cfg.seeds))) as pool:
            futures = {seed: pool.submit(run_seed, cfg, seed) for seed in cfg.seeds}
            for seed in cfg.seeds:
                try:
                    per_seed[seed] = futures[seed].result()
                except Exception as exc:  # noqa: BLE001
                    failures.append((seed, exc))

    if failures:
        doc = {
            "failed_seeds": [
                {"seed": s, "error_type": type(e).__name__, "error": str(e)}
                for s, e in failures
            ],
            "completed_seeds": sorted(per_seed),
        }
        (out_dir / "partial_results.json").write_text(json.dumps(doc, indent=2) + "\n")
        raise failures[0][1]

    rows = summarize(cfg, per_seed)
    write_summary_csv(rows, out_dir / "summary.csv")
    (out_dir / "summary.txt").write_text(format_summary_text(rows))
    return rows
