"""Sample/label containers, CSV persistence, z-scoring and stratified splits."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .schema import N_CLASSES, KpiSchema, RootCause

DEFAULT_LENGTH = 40


class LabelSource(str, enum.Enum):
    RULE = "rule"
    EXPERT = "expert"


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class KpiSample:
    """One degraded session: an (m, l) matrix of KPI values."""

    values: np.ndarray
    sample_id: str
    schema: KpiSchema

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != self.schema.m:
            raise DatasetError(f"sample {self.sample_id}: expected ({self.schema.m}, l) values, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DatasetError(f"sample {self.sample_id}: non-finite value")
        object.__setattr__(self, "values", v)

    @property
    def l(self) -> int:
        return self.values.shape[1]

    def channel(self, name: str) -> np.ndarray:
        return self.values[self.schema.index(name)]


@dataclass
class LabeledDataset:
    """Stacked samples with their root-cause labels and label sources.

    ``values`` has shape (N, m, l). ``labels`` holds class ids 1..6.
    """

    values: np.ndarray
    labels: np.ndarray
    sources: list
    sample_ids: list
    schema: KpiSchema
    normalization_stats: np.ndarray | None = None  # (m, 2): mean, std
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.sources = [LabelSource(s) for s in self.sources]
        self.sample_ids = [str(s) for s in self.sample_ids]
        n = len(self.sample_ids)
        if self.values.ndim != 3:
            if n == 0 and self.values.size == 0:
                self.values = self.values.reshape(0, self.schema.m, DEFAULT_LENGTH)
            else:
                raise DatasetError(f"values must be (N, m, l), got {self.values.shape}")
        if not (self.values.shape[0] == len(self.labels) == len(self.sources) == n):
            raise DatasetError("samples, labels and sources must have equal length")
        if self.values.shape[1] != self.schema.m:
            raise DatasetError(f"channel count {self.values.shape[1]} != schema m={self.schema.m}")
        if n and (self.labels.min() < 1 or self.labels.max() > N_CLASSES):
            raise DatasetError("unknown class id in labels")
        if len(set(self.sample_ids)) != n:
            raise DatasetError("sample ids must be unique")
        if not np.all(np.isfinite(self.values)):
            raise DatasetError("non-finite value in dataset")
        if self.normalization_stats is not None:
            st = np.asarray(self.normalization_stats, dtype=np.float64)
            if st.shape != (self.schema.m, 2) or np.any(st[:, 1] <= 0):
                raise DatasetError("normalization stats must be (m, 2) with positive std")
            self.normalization_stats = st

    def __len__(self):
        return len(self.sample_ids)

    @property
    def l(self) -> int:
        return self.values.shape[2]

    @property
    def samples(self) -> list[KpiSample]:
        return [KpiSample(v, sid, self.schema) for v, sid in zip(self.values, self.sample_ids)]

    @property
    def root_causes(self) -> list[RootCause]:
        return [RootCause(int(y)) for y in self.labels]

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(
            self.values[idx],
            self.labels[idx],
            [self.sources[i] for i in idx],
            [self.sample_ids[i] for i in idx],
            self.schema,
            self.normalization_stats,
            dict(self.meta),
        )

    def with_values(self, values, normalization_stats=None) -> "LabeledDataset":
        return LabeledDataset(values, self.labels.copy(), list(self.sources), list(self.sample_ids),
                              self.schema, normalization_stats, dict(self.meta))

    def all_from(self, source: LabelSource) -> bool:
        return all(s == LabelSource(source) for s in self.sources)

    @staticmethod
    def concat(parts) -> "LabeledDataset":
        parts = list(parts)
        if not parts:
            raise DatasetError("nothing to concatenate")
        schema = parts[0].schema
        if any(p.schema != schema for p in parts):
            raise DatasetError("cannot concatenate datasets with different schemas")
        return LabeledDataset(
            np.concatenate([p.values for p in parts]),
            np.concatenate([p.labels for p in parts]),
            [s for p in parts for s in p.sources],
            [s for p in parts for s in p.sample_ids],
            schema,
            parts[0].normalization_stats,
        )

    def equals(self, other: "LabeledDataset") -> bool:
        same_stats = (self.normalization_stats is None and other.normalization_stats is None) or (
            self.normalization_stats is not None
            and other.normalization_stats is not None
            and np.array_equal(self.normalization_stats, other.normalization_stats)
        )
        return (
            self.schema == other.schema
            and self.sample_ids == other.sample_ids
            and self.sources == other.sources
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.values, other.values)
            and same_stats
        )


# --- normalization -----------------------------------------------------------


def fit_zscore(values: np.ndarray) -> np.ndarray:
    """Per-channel population (mean, std) over samples x timesteps.

    Constant channels get std 1 so they map to zero.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise DatasetError("cannot normalize an empty dataset")
    mean = values.mean(axis=(0, 2))
    std = values.std(axis=(0, 2))
    std = np.where(std > 1e-12 * np.maximum(1.0, np.abs(mean)), std, 1.0)
    return np.stack([mean, std], axis=1)


def apply_zscore(values: np.ndarray, stats: np.ndarray) -> np.ndarray:
    return (values - stats[None, :, 0, None]) / stats[None, :, 1, None]


def invert_zscore(values: np.ndarray, stats: np.ndarray) -> np.ndarray:
    return values * stats[None, :, 1, None] + stats[None, :, 0, None]


def zscore_fit_transform(dataset: LabeledDataset, stats=None) -> LabeledDataset:
    """Standardize each channel; reuse ``stats`` when given (e.g. train stats on a test set)."""
    if len(dataset) == 0:
        raise DatasetError("cannot normalize an empty dataset")
    if stats is None:
        stats = fit_zscore(dataset.values)
    return dataset.with_values(apply_zscore(dataset.values, stats), normalization_stats=stats)


def denormalize(dataset: LabeledDataset) -> LabeledDataset:
    if dataset.normalization_stats is None:
        raise DatasetError("dataset carries no normalization stats")
    return dataset.with_values(invert_zscore(dataset.values, dataset.normalization_stats))


# --- splitting ---------------------------------------------------------------


def split_dataset(dataset: LabeledDataset, fractions=(0.7, 0.15, 0.15), seed=0):
    """Class-stratified, seeded split into (train, validation, test).

    Per class, counts are allocated by largest remainder so that every
    partition is as close to its fraction as integer counts allow.
    """
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise DatasetError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    if len(dataset) == 0:
        raise DatasetError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    targets = _allocate(len(dataset), fr)
    parts = [[], [], []]
    leftovers = []
    for c in np.unique(dataset.labels):
        idx = np.flatnonzero(dataset.labels == c)
        idx = idx[rng.permutation(len(idx))]
        counts = np.floor(len(idx) * fr).astype(int)
        start = 0
        for p, k in zip(parts, counts):
            p.extend(idx[start:start + k].tolist())
            start += k
        leftovers.extend(idx[start:].tolist())
    # leftover samples go to whichever partition is furthest below its target
    for i in leftovers:
        deficit = targets - np.array([len(p) for p in parts])
        parts[int(np.argmax(deficit))].append(i)
    return tuple(dataset.subset(sorted(p)) for p in parts)


def _allocate(n, fractions):
    raw = n * fractions
    counts = np.floor(raw).astype(int)
    rem = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    for i in order[:rem]:
        counts[i] += 1
    return counts


# --- CSV persistence ---------------------------------------------------------


def save_dataset(dataset: LabeledDataset, samples_path, labels_path, schema_path=None, stats_path=None):
    """Write the samples CSV (one row per sample/timestep) and the labels CSV."""
    names = dataset.schema.names
    with open(samples_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "t", *names])
        for sid, mat in zip(dataset.sample_ids, dataset.values):
            for t in range(mat.shape[1]):
                w.writerow([sid, t, *(repr(float(x)) for x in mat[:, t])])
    with open(labels_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "class_id", "source"])
        for sid, y, s in zip(dataset.sample_ids, dataset.labels, dataset.sources):
            w.writerow([sid, int(y), s.value])
    if schema_path is not None:
        dataset.schema.save(schema_path)
    if stats_path is not None and dataset.normalization_stats is not None:
        with open(stats_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kpi", "mean", "std"])
            for name, (mu, sd) in zip(names, dataset.normalization_stats):
                w.writerow([name, repr(float(mu)), repr(float(sd))])


def load_dataset(samples_path, labels_path, schema: KpiSchema, stats_path=None) -> LabeledDataset:
    names = schema.names
    rows: dict[str, list] = {}
    order = []
    with open(samples_path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or header[:2] != ["sample_id", "t"] or header[2:] != names:
            raise DatasetError(f"{samples_path}: malformed header; expected sample_id,t,<{len(names)} KPI names>")
        for lineno, row in enumerate(r, start=2):
            if len(row) != len(header):
                raise DatasetError(f"{samples_path}: row {lineno} has {len(row)} columns, expected {len(header)}")
            sid = row[0]
            try:
                t = int(row[1])
                vals = [float(x) for x in row[2:]]
            except ValueError as exc:
                raise DatasetError(f"{samples_path}: row {lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise DatasetError(f"{samples_path}: row {lineno}: non-finite value")
            if sid not in rows:
                rows[sid] = []
                order.append(sid)
            if t != len(rows[sid]):
                raise DatasetError(f"{samples_path}: row {lineno}: timestep {t} out of order for {sid}")
            rows[sid].append(vals)
    labels = {}
    with open(labels_path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != ["sample_id", "class_id", "source"]:
            raise DatasetError(f"{labels_path}: malformed header")
        for lineno, row in enumerate(r, start=2):
            if len(row) != 3:
                raise DatasetError(f"{labels_path}: row {lineno} has {len(row)} columns, expected 3")
            try:
                cid = RootCause.from_id(row[1]).value
            except ValueError:
                raise DatasetError(f"{labels_path}: row {lineno}: unknown class id {row[1]!r}") from None
            try:
                src = LabelSource(row[2])
            except ValueError:
                raise DatasetError(f"{labels_path}: row {lineno}: unknown source {row[2]!r}") from None
            labels[row[0]] = (cid, src)
    if set(labels) != set(order):
        missing = sorted(set(order) ^ set(labels))[:5]
        raise DatasetError(f"samples and labels disagree on ids, e.g. {missing}")
    lengths = {len(rows[s]) for s in order}
    if len(lengths) > 1:
        raise DatasetError(f"samples have unequal lengths {sorted(lengths)}")
    values = np.array([np.array(rows[s]).T for s in order]) if order else np.zeros((0, schema.m, DEFAULT_LENGTH))
    stats = None
    if stats_path is not None and Path(stats_path).exists():
        with open(stats_path, newline="") as fh:
            r = csv.reader(fh)
            next(r)
            st = {row[0]: (float(row[1]), float(row[2])) for row in r}
        stats = np.array([st[n] for n in names])
    return LabeledDataset(
        values,
        [labels[s][0] for s in order],
        [labels[s][1] for s in order],
        order,
        schema,
        stats,
    )
