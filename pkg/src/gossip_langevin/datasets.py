"""CSV ingestion, standardization and disjoint partitioning across agents."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import IntegrityError, ValidationError
from .models import Shard
from .numerics import RngStream

MAX_REJECT_FRACTION = 0.10


@dataclass(frozen=True)
class CsvSchema:
    """How to read one tabular file.

    ``label_column`` is a header name or a zero-based index. Binary labels
    map ``positive_label`` to 1 and ``negative_label`` to 0; when
    ``negative_label`` is None every other token maps to 0. Setting
    ``positive_label`` to None reads real-valued responses.
    """

    label_column: str | int
    positive_label: str | None = "1"
    negative_label: str | None = None
    delimiter: str = ","
    header: bool = True
    drop_columns: tuple = ()

    def to_dict(self) -> dict:
        return {
            "label_column": self.label_column,
            "positive_label": self.positive_label,
            "negative_label": self.negative_label,
            "delimiter": self.delimiter,
            "header": self.header,
            "drop_columns": list(self.drop_columns),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CsvSchema":
        doc = dict(doc)
        doc["drop_columns"] = tuple(doc.get("drop_columns", ()))
        return cls(**doc)


# wdbc.data: id, diagnosis (M/B), 30 real features, no header
BREAST_CANCER = CsvSchema(label_column=1, positive_label="M", negative_label="B", header=False, drop_columns=(0,))
# magic04.data: 10 real features, class (g/h), no header
TELESCOPE = CsvSchema(label_column=10, positive_label="g", negative_label="h", header=False)
SCHEMAS = {"breast-cancer": BREAST_CANCER, "telescope": TELESCOPE}


@dataclass(frozen=True)
class Normalization:
    """Per-column affine map ``z = (x - mean) / scale``.

    Zero-variance columns get ``scale = 1`` so they are only centered.
    """

    mean: np.ndarray
    scale: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.scale

    def invert(self, Z: np.ndarray) -> np.ndarray:
        return Z * self.scale + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}


@dataclass(frozen=True)
class TabularDataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...]
    normalization: Normalization | None = None
    rejected: int = 0
    rows_read: int = 0

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


def _column_index(names: list[str], col: str | int) -> int:
    if isinstance(col, int):
        if not 0 <= col < len(names):
            raise ValidationError(f"label column {col} out of range for {len(names)} columns")
        return col
    if col not in names:
        raise ValidationError(f"label column {col!r} not found in header")
    return names.index(col)


def load_csv(path: str | Path, schema: CsvSchema, max_reject_fraction: float = MAX_REJECT_FRACTION) -> TabularDataset:
    """Parse a CSV file; malformed rows are dropped and counted.

    Rejecting more than ``max_reject_fraction`` of the rows (10% by
    default) is treated as a schema mismatch.
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"dataset file not found: {path}")
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh, delimiter=schema.delimiter) if r and any(c.strip() for c in r)]
    if schema.header:
        if not rows:
            raise ValidationError(f"{path} is empty")
        names = [c.strip() for c in rows[0]]
        rows = rows[1:]
    else:
        width = max((len(r) for r in rows), default=0)
        names = [f"x{j}" for j in range(width)]
    if not rows:
        raise ValidationError(f"{path} has no data rows")
    label_idx = _column_index(names, schema.label_column)
    dropped = {_column_index(names, c) for c in schema.drop_columns}
    feat_idx = [j for j in range(len(names)) if j != label_idx and j not in dropped]

    feats, labels = [], []
    rejected = 0
    for row in rows:
        if len(row) != len(names):
            rejected += 1
            continue
        token = row[label_idx].strip()
        try:
            vals = [float(row[j]) for j in feat_idx]
            if schema.positive_label is None:
                lab = float(token)
            elif token == schema.positive_label:
                lab = 1.0
            elif schema.negative_label is None or token == schema.negative_label:
                lab = 0.0
            else:
                raise ValueError(token)
        except ValueError:
            rejected += 1
            continue
        if not (np.all(np.isfinite(vals)) and np.isfinite(lab)):
            rejected += 1
            continue
        feats.append(vals)
        labels.append(lab)

    if rejected > max_reject_fraction * len(rows):
        raise ValidationError(f"{path}: rejected {rejected} of {len(rows)} rows (limit {max_reject_fraction:.0%})")
    return TabularDataset(
        X=np.array(feats, dtype=np.float64).reshape(len(feats), len(feat_idx)),
        y=np.array(labels, dtype=np.float64),
        feature_names=tuple(names[j] for j in feat_idx),
        rejected=rejected,
        rows_read=len(rows),
    )


def standardize(ds: TabularDataset) -> TabularDataset:
    """Center every column and scale it to unit (population) std."""
    mean = ds.X.mean(axis=0)
    std = ds.X.std(axis=0)
    scale = np.where(std > 0, std, 1.0)
    norm = Normalization(mean=mean, scale=scale)
    return TabularDataset(norm.apply(ds.X), ds.y, ds.feature_names, norm, ds.rejected, ds.rows_read)


@dataclass(frozen=True)
class Partition:
    """Test split plus disjoint per-agent training index lists."""

    n_agents: int
    shards: tuple[np.ndarray, ...]
    train: np.ndarray
    test: np.ndarray
    meta: dict = field(default_factory=dict)

    def shard_sizes(self) -> list[int]:
        return [len(s) for s in self.shards]

    def to_dict(self) -> dict:
        return {
            "n_agents": self.n_agents,
            "train": self.train.tolist(),
            "test": self.test.tolist(),
            "shards": [s.tolist() for s in self.shards],
            "meta": self.meta,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def from_dict(cls, doc: dict) -> "Partition":
        try:
            p = cls(
                n_agents=int(doc["n_agents"]),
                shards=tuple(np.asarray(s, dtype=np.int64) for s in doc["shards"]),
                train=np.asarray(doc["train"], dtype=np.int64),
                test=np.asarray(doc["test"], dtype=np.int64),
                meta=doc.get("meta", {}),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise IntegrityError(f"malformed partition manifest: {exc}") from exc
        joined = np.sort(np.concatenate(p.shards)) if p.shards else np.zeros(0, np.int64)
        if len(p.shards) != p.n_agents or not np.array_equal(joined, np.sort(p.train)):
            raise IntegrityError("partition shards do not reassemble the training indices")
        return p

    @classmethod
    def load(cls, path: str | Path) -> "Partition":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise IntegrityError(f"cannot read partition manifest {path}: {exc}") from exc
        return cls.from_dict(doc)


def shuffled_indices(n: int, stream: RngStream) -> np.ndarray:
    return np.argsort(stream.uniform(n), kind="stable")


def split_and_partition(n: int, test_fraction: float, n_agents: int, stream: RngStream) -> Partition:
    """Shuffle ``0..n-1``, hold out ``round(test_fraction * n)`` rows, deal the rest round-robin."""
    if not 0 <= test_fraction < 1:
        raise ValidationError("test fraction must lie in [0, 1)")
    if n_agents < 1:
        raise ValidationError("agent count must be at least 1")
    perm = shuffled_indices(n, stream)
    n_test = int(round(test_fraction * n))
    test, train = perm[:n_test], perm[n_test:]
    if n_agents > len(train):
        raise ValidationError(f"{n_agents} agents but only {len(train)} training rows")
    shards = tuple(train[i::n_agents].copy() for i in range(n_agents))
    return Partition(n_agents, shards, train, test, {"n": n, "test_fraction": test_fraction})


def partition_shards(X: np.ndarray, y: np.ndarray, part: Partition) -> list[Shard]:
    return [Shard(X[idx], y[idx]) for idx in part.shards]


def holdout_data(X: np.ndarray, y: np.ndarray, part: Partition) -> tuple[np.ndarray, np.ndarray]:
    return X[part.test], y[part.test]


def route_synthetic(X: np.ndarray, y: np.ndarray, n_agents: int, stream: RngStream) -> list[Shard]:
    """Deal generated data to agents with the same shuffle-and-round-robin rule."""
    part = split_and_partition(X.shape[0], 0.0, n_agents, stream)
    return partition_shards(X, y, part)


def write_dataset_csv(path: str | Path, ds: TabularDataset) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(ds.feature_names) + ["label"])
        for row, lab in zip(ds.X, ds.y):
            w.writerow([repr(float(v)) for v in row] + [repr(float(lab))])


def read_prepared_csv(path: str | Path) -> TabularDataset:
    return load_csv(path, CsvSchema(label_column="label", positive_label=None))


def stack_shards(shards: Sequence[Shard]) -> tuple[np.ndarray, np.ndarray]:
    return np.concatenate([s.X for s in shards]), np.concatenate([s.y for s in shards])
