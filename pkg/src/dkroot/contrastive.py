"""Shared conv encoder and supervised contrastive pretraining on rule labels."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .dataset import LabeledDataset, LabelSource
from .diffusion import NoiseSchedule, ViewPolicy, augment_pair, check_source
from .optim import Adam, ParamStore, fingerprint, load_checkpoint, save_checkpoint
from .schema import N_CLASSES
from .tensor import Tensor, no_grad


@dataclass
class EncoderConfig:
    channels: tuple = (64, 128, 128)
    kernel: int = 3
    stride: int = 2

    @property
    def blocks(self) -> int:
        return len(self.channels)

    def to_json(self):
        return {"blocks": self.blocks, "channels": list(self.channels), "kernel": self.kernel, "stride": self.stride}

    @classmethod
    def from_json(cls, d):
        d = dict(d)
        blocks = d.pop("blocks", None)
        ch = tuple(d.pop("channels", cls.channels))
        if blocks is not None and blocks != len(ch):
            raise ValueError("encoder config: 'blocks' disagrees with the channel list")
        return cls(channels=ch, **d)


class Encoder:
    """Conv blocks (conv + ReLU, stride-2 time pooling) over an (m, l) window."""

    def __init__(self, m, l, config: EncoderConfig | None = None, seed=0):
        self.config = config or EncoderConfig()
        self.m, self.l = m, l
        rng = np.random.default_rng([seed, 11])
        self.params = ParamStore()
        self.layers = []
        c_in, k = m, self.config.kernel
        for i, c_out in enumerate(self.config.channels):
            w = self.params.add(f"enc{i}_w", rng.normal(0, math.sqrt(2.0 / (c_in * k)), (c_out, c_in, k)))
            b = self.params.add(f"enc{i}_b", np.zeros(c_out))
            self.layers.append((w, b))
            c_in = c_out

    @property
    def out_length(self) -> int:
        n = self.l
        for _ in self.config.channels:
            n = -(-n // self.config.stride)
        return n

    @property
    def D(self) -> int:
        return self.config.channels[-1] * self.out_length

    def spec(self) -> dict:
        return {"m": self.m, "l": self.l, "encoder": self.config.to_json()}

    def __call__(self, x) -> Tensor:
        return encode(x, self)

    def save(self, path, meta=None):
        meta = dict(meta or {})
        meta["encoder_spec"] = self.spec()
        save_checkpoint(path, self.params, meta, fingerprint(self.spec()))

    @classmethod
    def load(cls, path):
        arrays, meta = load_checkpoint(path)
        spec = meta["encoder_spec"]
        enc = cls(spec["m"], spec["l"], EncoderConfig.from_json(spec["encoder"]))
        load_checkpoint(path, fingerprint(enc.spec()))
        enc.params.load_arrays(arrays)
        return enc, meta

    def copy(self) -> "Encoder":
        other = Encoder(self.m, self.l, self.config)
        other.params.load_arrays(self.params.arrays())
        return other


def encode(x, encoder: Encoder) -> Tensor:
    """Feature map (c, l') for one (m, l) sample, or (n, c, l') for a batch."""
    h = x if isinstance(x, Tensor) else Tensor(x)
    if h.shape[-2:] != (encoder.m, encoder.l):
        raise ValueError(f"encode: expected (..., {encoder.m}, {encoder.l}) input, got {h.shape}")
    for w, b in encoder.layers:
        h = T.relu(T.conv1d(h, w, b, stride=encoder.config.stride))
    return h


def flatten(feature_map: Tensor) -> Tensor:
    if feature_map.ndim == 2:
        return T.reshape(feature_map, (-1,))
    return T.reshape(feature_map, (feature_map.shape[0], -1))


def normalize_flatten(feature_map) -> Tensor:
    """vec(z) / ||vec(z)||. A 2-D input is one feature map; a 3-D input is a batch of them."""
    z = feature_map if isinstance(feature_map, Tensor) else Tensor(feature_map)
    if z.ndim >= 2:
        z = flatten(z)
    return T.l2_normalize(z)


def embed(values, encoder: Encoder, batch_size=512, normalize=True) -> np.ndarray:
    """Flattened (optionally l2-normalized) features for an (N, m, l) array, no gradients."""
    out = []
    with no_grad():
        for s in range(0, len(values), batch_size):
            f = flatten(encode(values[s:s + batch_size], encoder))
            out.append(T.l2_normalize(f).data if normalize else f.data)
    return np.concatenate(out) if out else np.zeros((0, encoder.D))


# loss ------------------------------------------------------------------------------


def positive_mask(labels) -> np.ndarray:
    """M_ij = 1 when labels match and i != j. ``labels`` already lists both views."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or np.any((labels < 1) | (labels > N_CLASSES)):
        raise ValueError("positive_mask: labels must be class ids 1..6")
    m = (labels[:, None] == labels[None, :]).astype(np.float64)
    np.fill_diagonal(m, 0.0)
    return m


@dataclass
class ContrastBatch:
    features: Tensor  # (2N, D): all view-1 rows then all view-2 rows
    labels: np.ndarray  # (N,)
    mask: np.ndarray = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.shape[0] != 2 * len(self.labels):
            raise ValueError("contrast batch: need two feature rows per label")
        if self.mask is None:
            self.mask = positive_mask(np.concatenate([self.labels, self.labels]))


def make_batch(z_strong: Tensor, z_weak: Tensor, labels) -> ContrastBatch:
    return ContrastBatch(T.concat([z_strong, z_weak], axis=0), labels)


def supcon_loss(batch: ContrastBatch, tau=0.1) -> Tensor:
    """Supervised contrastive loss over a two-view batch.

    The softmax for anchor i runs over every k != i. Anchors without any
    positive are dropped and the mean is taken over the remaining ones.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    z = batch.features
    n = z.shape[0]
    if n < 2:
        raise ValueError("supcon_loss needs at least two feature rows")
    s = T.matmul(z, T.transpose(z)) * (1.0 / tau)
    others = ~np.eye(n, dtype=bool)
    lse = T.logsumexp(s, axis=1, mask=others)
    log_p = s - T.reshape(lse, (n, 1))
    pos = batch.mask
    counts = pos.sum(axis=1)
    keep = counts > 0
    if not keep.any():
        raise ValueError("supcon_loss: no anchor has a positive")
    weights = np.where(keep[:, None], pos / np.maximum(counts, 1)[:, None], 0.0)
    return -T.tsum(log_p * weights) * (1.0 / keep.sum())


def supcon_reference(features, labels2n, tau) -> float:
    """Literal double-loop evaluation of the loss (test oracle)."""
    z = np.asarray(features, dtype=np.float64)
    n = len(z)
    total, anchors = 0.0, 0
    for i in range(n):
        pos = [k for k in range(n) if k != i and labels2n[k] == labels2n[i]]
        if not pos:
            continue
        denom = sum(math.exp(float(z[i] @ z[k]) / tau) for k in range(n) if k != i)
        total += -sum(float(z[i] @ z[k]) / tau - math.log(denom) for k in pos) / len(pos)
        anchors += 1
    return total / anchors


# training ------------------------------------------------------------------------


@dataclass
class PretrainConfig:
    epochs: int = 20
    batch_size: int = 128
    tau: float = 0.1
    lr: float = 1e-3
    seed: int = 0
    fresh_views_per_epoch: bool = True
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def to_json(self):
        d = asdict(self)
        d["encoder"] = self.encoder.to_json()
        return d

    @classmethod
    def from_json(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown pretrain config fields {sorted(unknown)}")
        if "encoder" in d:
            d["encoder"] = EncoderConfig.from_json(d["encoder"])
        return cls(**d)


def stratified_batches(labels, batch_size, rng):
    """Shuffle within each class, interleave classes round-robin, then cut into batches.

    Every batch then holds roughly batch_size/k samples of each present class.
    """
    labels = np.asarray(labels)
    pools = [list(rng.permutation(np.flatnonzero(labels == c))) for c in np.unique(labels)]
    order = []
    while any(pools):
        for p in pools:
            if p:
                order.append(p.pop())
    order = np.array(order, dtype=np.int64)
    return [order[s:s + batch_size] for s in range(0, len(order), batch_size)]


def pretrain(rule_data: LabeledDataset, predictor, schedule: NoiseSchedule, policy: ViewPolicy | None = None,
             config: PretrainConfig | None = None, log=None):
    """Contrastive pretraining on diffusion views. Returns (encoder, trace of (epoch, step, loss))."""
    config = config or PretrainConfig()
    policy = policy or ViewPolicy()
    if predictor is None:
        raise ValueError("pretrain needs a trained diffusion checkpoint")
    check_source(rule_data, LabelSource.RULE, "contrastive pretraining")
    encoder = Encoder(rule_data.schema.m, rule_data.l, config.encoder, seed=config.seed)
    opt = Adam(encoder.params, lr=config.lr)
    rng = np.random.default_rng([config.seed, 2])
    x, y = rule_data.values, rule_data.labels
    trace = []
    weak = strong = None
    for epoch in range(config.epochs):
        if config.fresh_views_per_epoch or weak is None:
            weak, strong = _views(x, y, predictor, schedule, policy, rng)
        step_losses = []
        for step, idx in enumerate(stratified_batches(y, config.batch_size, rng)):
            encoder.params.zero_grad()
            zs = normalize_flatten(encode(strong[idx], encoder))
            zw = normalize_flatten(encode(weak[idx], encoder))
            loss = supcon_loss(make_batch(zs, zw, y[idx]), config.tau)
            loss.backward()
            opt.step()
            trace.append((epoch + 1, step + 1, float(loss.data)))
            step_losses.append(float(loss.data))
        if log is not None:
            log(f"pretrain epoch {epoch + 1}/{config.epochs} loss {np.mean(step_losses):.4f}")
    return encoder, trace


def _views(x, y, predictor, schedule, policy, rng, chunk=500):
    weak, strong = np.empty_like(x), np.empty_like(x)
    for s in range(0, len(x), chunk):
        sl = slice(s, s + chunk)
        weak[sl], strong[sl] = augment_pair(x[sl], y[sl], policy, predictor, schedule, rng)
    return weak, strong


def epoch_means(trace) -> list[float]:
    by_epoch = {}
    for e, _, loss in trace:
        by_epoch.setdefault(e, []).append(loss)
    return [float(np.mean(by_epoch[e])) for e in sorted(by_epoch)]


def write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "step", "loss"])
        for e, s, loss in trace:
            w.writerow([e, s, repr(loss)])


def save_pretrain_config(path, config: PretrainConfig):
    Path(path).write_text(json.dumps(config.to_json(), indent=2))
