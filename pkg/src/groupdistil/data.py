"""Synthetic sub-population-shift benchmark and per-domain samplers.

Samples carry a class label y and a spurious attribute a; the pair forms
the domain d = y * A + a. Each sample is

    x = core_margin * u_y + spurious_margin * v_a + noise,

where u_y = e_y and v_a = e_{C+a} are disjoint coordinate directions and
the noise is isotropic N(0, noise_std^2). The training set follows the
configured group proportions (typically skewed so that the spurious
attribute predicts the label on most samples); the test set is balanced,
so a model leaning on the spurious direction degrades on the rare
groups.

Randomness comes from numpy's PCG64 via np.random.default_rng; the seed
fully determines every dataset and batch, and the stream is documented
and portable, so fixtures freeze across machines.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .network import Matrix, ensure_matrix

FLOAT_FMT = "%.17g"  # exact float64 round-trip


@dataclass(frozen=True)
class GroupShiftSpec:
    """Generator settings for one benchmark instance.

    Defaults give the 4-group desk-scale benchmark: 2 classes x 2
    spurious attributes, 90% of training mass on the aligned groups
    (y == a) and a balanced test set, with the spurious direction more
    separable than the class direction so it is the tempting shortcut.
    """

    num_classes: int = 2
    num_spurious: int = 2
    feature_dim: int = 10
    core_margin: float = 2.0
    spurious_margin: float = 3.0
    noise_std: float = 1.0
    train_group_proportions: tuple[float, ...] = (0.45, 0.05, 0.05, 0.45)
    n_train: int = 2000
    n_test_per_group: int = 500
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(
            self,
            "train_group_proportions",
            tuple(float(p) for p in self.train_group_proportions),
        )
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.num_spurious < 1:
            raise ConfigError("num_spurious must be >= 1")
        if self.feature_dim < self.num_classes + self.num_spurious:
            raise ConfigError(
                "feature_dim must be >= num_classes + num_spurious to give "
                "the class and spurious directions disjoint coordinates"
            )
        if self.core_margin < 0 or self.spurious_margin < 0:
            raise ConfigError("margins must be >= 0")
        if not self.noise_std > 0:
            raise ConfigError("noise_std must be > 0")
        props = self.train_group_proportions
        if len(props) != self.num_domains:
            raise ConfigError(
                f"train_group_proportions needs {self.num_domains} entries, "
                f"got {len(props)}"
            )
        if any(p < 0 for p in props):
            raise ConfigError("train_group_proportions must be nonnegative")
        if abs(sum(props) - 1.0) > 1e-9:
            raise ConfigError(
                f"train_group_proportions must sum to 1, got {sum(props)!r}"
            )
        if self.n_train < 1 or self.n_test_per_group < 1:
            raise ConfigError("n_train and n_test_per_group must be >= 1")

    @property
    def num_domains(self) -> int:
        return self.num_classes * self.num_spurious


@dataclass(frozen=True)
class Dataset:
    """Features plus labels and domain ids, with per-domain index lists."""

    features: Matrix
    labels: np.ndarray
    domains: np.ndarray
    num_classes: int
    num_spurious: int
    domain_indices: dict[int, np.ndarray] = field(init=False)

    def __post_init__(self):
        features = ensure_matrix(self.features, "features")
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        domains = np.asarray(self.domains, dtype=np.int64).reshape(-1)
        n = features.shape[0]
        if labels.shape[0] != n or domains.shape[0] != n:
            raise ShapeError(
                f"features ({n} rows), labels ({labels.shape[0]}) and "
                f"domains ({domains.shape[0]}) disagree"
            )
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise DataError("labels out of range")
        if domains.size and (domains.min() < 0 or domains.max() >= self.num_domains):
            raise DataError("domain ids out of range")
        # d = y * A + a, so the label is recoverable as d // A.
        bad = np.flatnonzero(domains // self.num_spurious != labels)
        if bad.size:
            raise DataError(
                f"sample {bad[0]}: domain {domains[bad[0]]} encodes label "
                f"{domains[bad[0]] // self.num_spurious}, stored label is "
                f"{labels[bad[0]]}"
            )
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "domains", domains)
        object.__setattr__(self, "domain_indices", split_by_domain(domains))

    @property
    def num_domains(self) -> int:
        return self.num_classes * self.num_spurious

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    def domain_counts(self) -> list[int]:
        return [
            len(self.domain_indices.get(d, ()))
            for d in range(self.num_domains)
        ]


@dataclass(frozen=True)
class LabeledBatch:
    """A feature/label batch; domains has one id per sample."""

    features: Matrix
    labels: np.ndarray
    domains: np.ndarray

    def __post_init__(self):
        features = ensure_matrix(self.features, "batch features")
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        domains = np.asarray(self.domains, dtype=np.int64).reshape(-1)
        if labels.shape[0] != features.shape[0] or domains.shape[0] != features.shape[0]:
            raise ShapeError("batch features/labels/domains lengths disagree")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "domains", domains)


def largest_remainder_counts(proportions, total: int) -> list[int]:
    """Integer counts summing to total, by largest-remainder rounding."""
    proportions = np.asarray(proportions, dtype=np.float64)
    quotas = proportions * total
    counts = np.floor(quotas).astype(np.int64)
    shortfall = total - int(counts.sum())
    # Ties broken by lower index for a deterministic result.
    order = np.lexsort((np.arange(proportions.size), -(quotas - counts)))
    for i in order[:shortfall]:
        counts[i] += 1
    return counts.tolist()


def _group_mean(spec: GroupShiftSpec, label: int, attr: int) -> np.ndarray:
    mean = np.zeros(spec.feature_dim)
    mean[label] = spec.core_margin
    mean[spec.num_classes + attr] = spec.spurious_margin
    return mean


def _materialize(
    spec: GroupShiftSpec, counts: list[int], rng: np.random.Generator
) -> Dataset:
    blocks = []
    labels = []
    domains = []
    for d, count in enumerate(counts):
        label, attr = divmod(d, spec.num_spurious)
        mean = _group_mean(spec, label, attr)
        noise = rng.normal(0.0, spec.noise_std, size=(count, spec.feature_dim))
        blocks.append(mean + noise)
        labels.extend([label] * count)
        domains.extend([d] * count)
    return Dataset(
        features=np.vstack(blocks),
        labels=np.asarray(labels),
        domains=np.asarray(domains),
        num_classes=spec.num_classes,
        num_spurious=spec.num_spurious,
    )


def generate(spec: GroupShiftSpec) -> tuple[Dataset, Dataset]:
    """Deterministically generate (train, test) for a spec.

    Train group sizes follow train_group_proportions under
    largest-remainder rounding; the test set holds exactly
    n_test_per_group samples per group.
    """
    counts = largest_remainder_counts(spec.train_group_proportions, spec.n_train)
    for d, (count, prop) in enumerate(zip(counts, spec.train_group_proportions)):
        if count == 0 and prop > 0:
            raise ConfigError(
                f"group {d} has proportion {prop} but rounds to 0 samples; "
                f"increase n_train"
            )
    rng = np.random.default_rng(spec.seed)
    train = _materialize(spec, counts, rng)
    test = _materialize(spec, [spec.n_test_per_group] * spec.num_domains, rng)
    return train, test


def draw_domain(rng: np.random.Generator, num_domains: int) -> int:
    """One uniform domain id; consumes exactly one draw from rng."""
    if num_domains < 1:
        raise ConfigError(f"num_domains must be >= 1, got {num_domains}")
    return int(rng.integers(num_domains))


def sample_domain_batch(
    data: Dataset, d: int, batch_size: int, rng: np.random.Generator
) -> LabeledBatch:
    """Uniform with-replacement batch from one domain.

    Replacement matters: minority domains can hold fewer samples than a
    batch.
    """
    indices = data.domain_indices.get(int(d))
    if indices is None or len(indices) == 0:
        raise DataError(f"domain {d} has no samples")
    picks = indices[rng.integers(0, len(indices), size=batch_size)]
    return LabeledBatch(
        features=data.features[picks],
        labels=data.labels[picks],
        domains=data.domains[picks],
    )


def sample_pooled_batch(
    data: Dataset, batch_size: int, rng: np.random.Generator
) -> LabeledBatch:
    """Uniform with-replacement batch from the whole set (domain-blind)."""
    picks = rng.integers(0, data.num_samples, size=batch_size)
    return LabeledBatch(
        features=data.features[picks],
        labels=data.labels[picks],
        domains=data.domains[picks],
    )


def split_by_domain(domains) -> dict[int, np.ndarray]:
    """Map each domain id present to its sample indices (a partition).

    Absent domains are omitted rather than mapped to empty lists.
    """
    domains = np.asarray(domains, dtype=np.int64).reshape(-1)
    return {
        int(d): np.flatnonzero(domains == d)
        for d in np.unique(domains)
    }


def save_dataset(data: Dataset, path) -> None:
    """Write `n,F,C,A` then one `label,domain,f_1..f_F` row per sample."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [data.num_samples, data.features.shape[1], data.num_classes,
             data.num_spurious]
        )
        for i in range(data.num_samples):
            writer.writerow(
                [int(data.labels[i]), int(data.domains[i])]
                + [FLOAT_FMT % v for v in data.features[i]]
            )


def load_dataset(path) -> Dataset:
    """Read a file written by save_dataset; validates the header counts."""
    path = Path(path)
    with path.open("r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
            n, feat_dim, num_classes, num_spurious = (int(v) for v in header)
        except (StopIteration, ValueError) as exc:
            raise DataError(f"{path}: malformed header") from exc
        labels = np.empty(n, dtype=np.int64)
        domains = np.empty(n, dtype=np.int64)
        features = np.empty((n, feat_dim))
        i = -1
        for i, row in enumerate(reader):
            if i >= n or len(row) != 2 + feat_dim:
                raise DataError(f"{path}: row {i + 2} does not match header")
            labels[i] = int(row[0])
            domains[i] = int(row[1])
            features[i] = [float(v) for v in row[2:]]
        if i + 1 != n:
            raise DataError(f"{path}: expected {n} rows, found {i + 1}")
    return Dataset(
        features=features,
        labels=labels,
        domains=domains,
        num_classes=num_classes,
        num_spurious=num_spurious,
    )
