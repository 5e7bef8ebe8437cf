"""Datasets, the synthetic rotated-blobs generator and feature CSV files."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, EmptyInputError, LabelError, ParseError, ShapeError
from .tensor import DTYPE, as_matrix


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: Optional[np.ndarray]
    domain_tag: str
    num_classes: int

    def __post_init__(self):
        x = as_matrix(self.features, name="features")
        object.__setattr__(self, "features", x)
        if x.shape[0] < 1:
            raise EmptyInputError(f"dataset {self.domain_tag!r} has no rows")
        if x.shape[1] < 2:
            raise ShapeError(f"dataset {self.domain_tag!r} needs at least 2 feature columns")
        if self.labels is not None:
            y = np.asarray(self.labels, dtype=np.int64)
            if y.shape != (x.shape[0],):
                raise ShapeError(f"expected {x.shape[0]} labels, got shape {y.shape}")
            if y.min() < 0 or y.max() >= self.num_classes:
                raise LabelError(f"labels must lie in [0, {self.num_classes})")
            object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def without_labels(self) -> "LabeledDataset":
        return LabeledDataset(self.features, None, self.domain_tag, self.num_classes)

    def equals(self, other: "LabeledDataset") -> bool:
        if self.num_classes != other.num_classes or self.features.shape != other.features.shape:
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        same_labels = self.labels is None or np.array_equal(self.labels, other.labels)
        return same_labels and np.array_equal(self.features, other.features)


@dataclass(frozen=True)
class ShiftSpec:
    num_classes: int = 3
    samples_per_class: int = 200
    input_dim: int = 8
    rotation_degrees: float = 45.0
    translation: Sequence[float] = field(default_factory=lambda: (3.0,))
    class_std: float = 0.5
    seed: int = 0

    def translation_vector(self) -> np.ndarray:
        t = np.asarray(self.translation, dtype=DTYPE).ravel()
        if t.size == 1:
            return np.full(self.input_dim, t[0])
        if t.size != self.input_dim:
            raise ConfigError(f"translation has {t.size} entries, expected 1 or {self.input_dim}")
        return t

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.samples_per_class < 2:
            raise ConfigError("samples_per_class must be at least 2")
        if self.input_dim < 2:
            raise ConfigError("input_dim must be at least 2")
        if self.num_classes > 2 * self.input_dim:
            raise ConfigError(f"at most {2 * self.input_dim} classes fit in {self.input_dim} dimensions")
        if not self.class_std > 0:
            raise ConfigError("class_std must be positive")
        if not all(math.isfinite(x) for x in self.translation_vector()) or not math.isfinite(self.rotation_degrees):
            raise ConfigError("rotation and translation must be finite")


def class_centers(num_classes: int, input_dim: int, class_std: float) -> np.ndarray:
    """Centers on scaled coordinate axes, pairwise at least ``4 * class_std`` apart.

    The first ``input_dim`` classes sit on ``+s * e_c``; further classes on
    ``-s * e_(c - input_dim)``.
    """
    s = 4.0 * class_std / math.sqrt(2.0)
    centers = np.zeros((num_classes, input_dim), dtype=DTYPE)
    for c in range(num_classes):
        if c < input_dim:
            centers[c, c] = s
        else:
            centers[c, c - input_dim] = -s
    return centers


def rotate_first_two(x: np.ndarray, degrees: float) -> np.ndarray:
    rad = math.radians(degrees)
    c, s = math.cos(rad), math.sin(rad)
    out = x.copy()
    out[:, 0] = c * x[:, 0] - s * x[:, 1]
    out[:, 1] = s * x[:, 0] + c * x[:, 1]
    return out


def generate_shifted_pair(spec: ShiftSpec) -> tuple[LabeledDataset, LabeledDataset]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    centers = class_centers(spec.num_classes, spec.input_dim, spec.class_std)
    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    n = labels.size

    def draw():
        return centers[labels] + rng.normal(0.0, spec.class_std, size=(n, spec.input_dim))

    source_x = draw()
    target_x = rotate_first_two(draw(), spec.rotation_degrees) + spec.translation_vector()
    source = LabeledDataset(source_x, labels.copy(), "source", spec.num_classes)
    target = LabeledDataset(target_x, labels.copy(), "target", spec.num_classes)
    return source, target


# -- CSV ------------------------------------------------------------------


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def load_feature_csv(path, has_labels: bool = True, *, num_classes: Optional[int] = None, domain_tag: Optional[str] = None) -> LabeledDataset:
    """Read a feature CSV; with ``has_labels`` the last column is the class index."""
    path = Path(path)
    text = path.read_bytes().decode("utf-8")
    rows: list[list[float]] = []
    labels: list[int] = []
    width = None
    first = True
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        tokens = [t.strip() for t in line.split(",")]
        if first:
            first = False
            if not _is_number(tokens[0]):
                continue  # header
        if width is None:
            width = len(tokens)
        elif len(tokens) != width:
            raise ParseError(f"expected {width} fields, found {len(tokens)}", lineno)
        if has_labels:
            label_tok, tokens = tokens[-1], tokens[:-1]
            try:
                label = int(label_tok)
            except ValueError:
                raise ParseError(f"label {label_tok!r} is not an integer", lineno) from None
            if label < 0:
                raise ParseError(f"negative label {label}", lineno)
            labels.append(label)
        try:
            values = [float(t) for t in tokens]
        except ValueError as exc:
            raise ParseError(f"bad number ({exc})", lineno) from None
        if not all(math.isfinite(x) for x in values):
            raise ParseError("non-finite value", lineno)
        rows.append(values)
    if not rows:
        raise EmptyInputError(f"{path}: no data rows")
    features = np.array(rows, dtype=DTYPE)
    y = np.array(labels, dtype=np.int64) if has_labels else None
    if num_classes is None:
        num_classes = int(y.max()) + 1 if has_labels else 0
    return LabeledDataset(features, y, domain_tag or path.stem, num_classes)


def save_feature_csv(dataset: LabeledDataset, path) -> None:
    """Write features with 17 significant digits and the label last, Unix newlines."""
    lines = []
    x = dataset.features
    for i in range(x.shape[0]):
        fields = [f"{v:.17g}" for v in x[i]]
        if dataset.labels is not None:
            fields.append(str(int(dataset.labels[i])))
        lines.append(",".join(fields))
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8"))


# -- batching -------------------------------------------------------------


def batch_iterator(dataset_or_size, batch_size: int, seed: int, epoch: int, *, stream: int = 0) -> list[np.ndarray]:
    """Shuffled row-index batches for one epoch.

    The permutation depends only on ``(seed, epoch, stream)``. A trailing
    batch with fewer than 2 rows is dropped.
    """
    if batch_size < 2:
        raise ConfigError("batch_size must be at least 2")
    n = dataset_or_size if isinstance(dataset_or_size, (int, np.integer)) else len(dataset_or_size)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), int(epoch), int(stream)]))
    order = rng.permutation(n)
    batches = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if batches and batches[-1].size < 2:
        batches.pop()
    return batches
