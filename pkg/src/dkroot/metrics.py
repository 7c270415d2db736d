"""Clustering and dependence metrics, accuracy reporting, view audits and baselines.

Variances and standard deviations are population (divide by n) throughout.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .optim import as_generator
from .schema import N_CLASSES

MI_BINS = 16


class MetricError(ValueError):
    pass


@dataclass
class PointCloud:
    vectors: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        self.vectors = v.reshape(len(v), -1)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.vectors) != len(self.labels):
            raise MetricError("point cloud: vectors and labels differ in length")
        if len(self.vectors) < 2:
            raise MetricError("point cloud needs at least 2 points")

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def centroids(self):
        cl = self.classes
        return cl, np.stack([self.vectors[self.labels == c].mean(axis=0) for c in cl])

    def _need_two_classes(self, what):
        if len(self.classes) < 2:
            raise MetricError(f"{what} needs at least two classes")


# accuracy ------------------------------------------------------------------------


def accuracy(predictions, labels) -> float:
    p, y = np.asarray(predictions), np.asarray(labels)
    if p.shape != y.shape:
        raise MetricError("accuracy: predictions and labels differ in length")
    if p.size == 0:
        raise MetricError("accuracy: empty input")
    return float(np.mean(p == y))


def mean_std(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std())


# separability ------------------------------------------------------------------


EXACT_PAIRWISE_LIMIT = 2 ** 25  # n_a * n_b * D entries below which differences are formed directly


def _pairwise(a, b=None):
    """Euclidean distance matrix. Small inputs use exact differences, large ones the Gram form
    on centred data (centring keeps the cancellation error translation-independent)."""
    b = a if b is None else b
    if len(a) * len(b) * a.shape[1] <= EXACT_PAIRWISE_LIMIT:
        return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    mu = np.concatenate([a, b]).mean(0)
    a, b = a - mu, b - mu
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.sqrt(np.maximum(sq, 0.0))


def avg_interclass_distance(cloud: PointCloud) -> float:
    """Mean Euclidean distance over unordered pairs of class centroids."""
    cloud._need_two_classes("inter-class distance")
    _, c = cloud.centroids()
    d = _pairwise(c)
    iu = np.triu_indices(len(c), 1)
    return float(d[iu].mean())


def silhouette(cloud: PointCloud) -> float:
    """Mean silhouette. Points in singleton classes contribute 0."""
    cloud._need_two_classes("silhouette")
    x, y = cloud.vectors, cloud.labels
    d = _pairwise(x)
    cl = cloud.classes
    onehot = (y[:, None] == cl[None, :]).astype(np.float64)
    counts = onehot.sum(0)
    sums = d @ onehot  # (n, k): distance sums to each class
    own = np.searchsorted(cl, y)
    n_own = counts[own]
    a = np.where(n_own > 1, sums[np.arange(len(x)), own] / np.maximum(n_own - 1, 1), 0.0)
    means = sums / counts[None, :]
    means[np.arange(len(x)), own] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where((n_own > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


def calinski_harabasz(cloud: PointCloud) -> float:
    cloud._need_two_classes("Calinski-Harabasz")
    x, y = cloud.vectors, cloud.labels
    cl, c = cloud.centroids()
    k, n = len(cl), len(x)
    if n <= k:
        raise MetricError("Calinski-Harabasz needs more points than classes")
    g = x.mean(axis=0)
    counts = np.array([(y == v).sum() for v in cl])
    between = float((counts * ((c - g) ** 2).sum(1)).sum())
    within = float(((x - c[np.searchsorted(cl, y)]) ** 2).sum())
    if within == 0:
        return math.inf
    return (between / (k - 1)) / (within / (n - k))


def davies_bouldin(cloud: PointCloud) -> float:
    cloud._need_two_classes("Davies-Bouldin")
    x, y = cloud.vectors, cloud.labels
    cl, c = cloud.centroids()
    s = np.array([np.linalg.norm(x[y == v] - c[i], axis=1).mean() for i, v in enumerate(cl)])
    m = _pairwise(c)
    np.fill_diagonal(m, np.inf)
    if np.any(m == 0):
        return math.inf
    r = (s[:, None] + s[None, :]) / m
    return float(r.max(axis=1).mean())


def mutual_information(cloud: PointCloud, bins=MI_BINS) -> float:
    """Average over dimensions of the plug-in MI (nats) between a binned feature and the label.

    Each dimension is cut into ``bins`` equal-width bins over its observed range;
    constant dimensions contribute 0.
    """
    x, y = cloud.vectors, cloud.labels
    n, dims = x.shape
    if n < 10:
        raise MetricError("mutual information needs at least 10 points")
    cl, yi = np.unique(y, return_inverse=True)
    k = len(cl)
    lo, hi = x.min(0), x.max(0)
    span = hi - lo
    const = span <= 0
    b = np.floor((x - lo) / np.where(const, 1.0, span) * bins).astype(np.int64)
    b = np.clip(b, 0, bins - 1)
    codes = (np.arange(dims)[None, :] * bins + b) * k + yi[:, None]
    joint = np.bincount(codes.ravel(), minlength=dims * bins * k).reshape(dims, bins, k) / n
    pb = joint.sum(2, keepdims=True)
    py = np.bincount(yi, minlength=k)[None, None, :] / n
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(joint > 0, joint * np.log(joint / (pb * py)), 0.0)
    mi = terms.sum(axis=(1, 2))
    mi[const] = 0.0
    return float(max(mi.mean(), 0.0))


def intra_class_variance(cloud: PointCloud) -> dict:
    """Per class present: mean over dimensions of the population variance. Absent classes are omitted."""
    return {int(c): float(cloud.vectors[cloud.labels == c].var(axis=0).mean()) for c in cloud.classes}


# view audit ------------------------------------------------------------------------


def _strip(ids):
    return [str(i).rsplit(":", 1)[0] if str(i).endswith((":weak", ":strong")) else str(i) for i in ids]


def l2_view_audit(originals, weak_noised, weak_denoised, strong_noised, strong_denoised, ids=None) -> dict:
    """Mean and std of per-sample L2 distance to the original for each condition.

    ``ids`` may be a dict of sample-id lists keyed like the arguments; all must
    match the originals after dropping ``:weak``/``:strong`` suffixes.
    """
    arrays = {"weak_noise": weak_noised, "weak_denoise": weak_denoised,
              "strong_noise": strong_noised, "strong_denoise": strong_denoised}
    x0 = np.asarray(originals, dtype=np.float64)
    if ids is not None:
        ref = _strip(ids["originals"])
        for key, val in ids.items():
            if _strip(val) != ref:
                raise MetricError(f"l2 audit: sample ids of {key} do not match the originals")
    out = {}
    for key, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape != x0.shape:
            raise MetricError(f"l2 audit: {key} shape {arr.shape} != {x0.shape}")
        d = np.sqrt(((arr - x0) ** 2).reshape(len(x0), -1).sum(1))
        out[key] = {"mean": float(d.mean()), "std": float(d.std())}
    return out


def l2_distances(a, b) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    return np.sqrt(((a - b) ** 2).reshape(len(a), -1).sum(1))


# classical augmentation ----------------------------------------------------------


def classical_augment(kind, x, params=None, rng=0) -> np.ndarray:
    """Noise injection (x + ratio * sigma_channel * N(0,1)) or per-timestep scaling (x * alpha_t).

    Works on one (m, l) sample or an (n, m, l) batch.
    """
    params = dict(params or {})
    g = as_generator(rng)
    x = np.asarray(x, dtype=np.float64)
    if kind == "noise_injection":
        ratio = float(params.get("ratio", 0.1))
        sigma = x.std(axis=-1, keepdims=True)
        return x + ratio * sigma * g.standard_normal(x.shape)
    if kind == "scaling":
        sigma = float(params.get("sigma", 1.1))
        shape = x.shape[:-2] + (1, x.shape[-1])
        return x * g.normal(1.0, sigma, size=shape)
    raise ValueError(f"unknown augmentation kind {kind!r}")


# KNN baselines ---------------------------------------------------------------------


def stat_features(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    f = np.stack([x.mean(-1), x.std(-1), x.min(-1), x.max(-1), x[..., -1] - x[..., 0]], axis=-1)
    return f.reshape(len(x), -1)


def sliding_distance(a, b, window) -> float:
    """Min over aligned windows of the Euclidean distance between the windowed (m, w) blocks."""
    per_t = ((np.asarray(a) - np.asarray(b)) ** 2).sum(0)
    c = np.concatenate([[0.0], np.cumsum(per_t)])
    return float(np.sqrt(max((c[window:] - c[:-window]).min(), 0.0)))


def _vote(labels, k_idx):
    votes = np.bincount(labels[k_idx], minlength=N_CLASSES + 1)
    return int(np.argmax(votes))  # argmax takes the first (smallest id) on ties


def knn_baseline(kind, train_x, train_y, test_x, k=1, window=None) -> np.ndarray:
    train_x = np.asarray(train_x, dtype=np.float64)
    test_x = np.asarray(test_x, dtype=np.float64)
    train_y = np.asarray(train_y, dtype=np.int64)
    if len(train_x) == 0:
        raise MetricError("knn: empty training set")
    if k < 1:
        raise MetricError("knn: k must be >= 1")
    k = min(k, len(train_x))
    if kind == "stat":
        d = _pairwise(stat_features(test_x), stat_features(train_x))
    elif kind == "sliding":
        l = train_x.shape[-1]
        window = l if window is None else int(window)
        if not 1 <= window <= l:
            raise MetricError("knn: window must lie in 1..l")
        chunk = max(1, 2 ** 24 // max(1, train_x[0].size * len(train_x)))
        d = np.empty((len(test_x), len(train_x)))
        for s in range(0, len(test_x), chunk):
            per_t = ((test_x[s:s + chunk, None] - train_x[None]) ** 2).sum(2)  # (chunk, n_train, l)
            c = np.concatenate([np.zeros(per_t.shape[:2] + (1,)), np.cumsum(per_t, axis=-1)], axis=-1)
            d[s:s + chunk] = np.sqrt(np.maximum((c[..., window:] - c[..., :-window]).min(-1), 0.0))
    else:
        raise ValueError(f"unknown knn kind {kind!r}")
    order = np.argsort(d, axis=1, kind="stable")[:, :k]
    return np.array([_vote(train_y, row) for row in order], dtype=np.int64)


# reports -------------------------------------------------------------------------


@dataclass
class MetricsReport:
    avg_interclass_distance: float = float("nan")
    silhouette: float = float("nan")
    calinski_harabasz: float = float("nan")
    davies_bouldin: float = float("nan")
    mutual_information_nats: float = float("nan")
    per_class_intra_variance: dict = field(default_factory=dict)
    accuracy_mean: float | None = None
    accuracy_std: float | None = None

    @classmethod
    def from_cloud(cls, cloud: PointCloud, accuracies=None) -> "MetricsReport":
        rep = cls(
            avg_interclass_distance(cloud),
            silhouette(cloud),
            calinski_harabasz(cloud),
            davies_bouldin(cloud),
            mutual_information(cloud),
            intra_class_variance(cloud),
        )
        if accuracies is not None:
            rep.accuracy_mean, rep.accuracy_std = mean_std(accuracies)
        return rep

    def to_json(self) -> dict:
        d = asdict(self)
        d["per_class_intra_variance"] = {str(c): d["per_class_intra_variance"].get(c)
                                         for c in range(1, N_CLASSES + 1)}
        return {k: _json_num(v) for k, v in d.items()}

    def csv_row(self) -> dict:
        d = self.to_json()
        var = d.pop("per_class_intra_variance")
        d.update({f"intra_var_class{c}": v for c, v in var.items()})
        return d


def _json_num(v):
    if isinstance(v, dict):
        return {k: _json_num(x) for k, x in v.items()}
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if isinstance(v, float) and math.isnan(v):
        return None
    return v


def write_json(path, obj):
    Path(path).write_text(json.dumps(_json_num(obj), indent=2, sort_keys=True) + "\n")


def write_csv(path, rows: list[dict]):
    if not rows:
        Path(path).write_text("")
        return
    keys = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in keys})
