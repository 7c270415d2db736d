"""Class-conditional diffusion: schedule, noise predictor, training and view synthesis.

The predictor is trained on expert-labeled samples to recover the noise added
by the closed-form forward process. Augmented views are then produced with a
single reverse step from a noised sample: a small timestep gives a weak view,
a larger one a strong view.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .dataset import LabeledDataset, LabelSource
from .optim import Adam, ParamStore, as_generator, fingerprint, load_checkpoint, save_checkpoint
from .schema import N_CLASSES
from .tensor import NumericError, Tensor, no_grad


class ContractError(ValueError):
    """A stage received data it must not see (wrong label source, unnormalized input)."""


# schedule ------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta)

    def abar(self, t):
        """ᾱ at 1-based timestep(s) t."""
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"timestep out of range 1..{self.T}")
        return self.alpha_bar[t - 1]


def build_schedule(T=100, beta_start=1e-4, beta_end=0.02, kind="linear") -> NoiseSchedule:
    if kind != "linear":
        raise ValueError(f"unknown schedule kind {kind!r}")
    if int(T) != T or T < 2:
        raise ValueError("T must be an integer >= 2")
    if not (0 < beta_start <= beta_end < 1):
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    beta = np.linspace(beta_start, beta_end, int(T))
    alpha = 1.0 - beta
    return NoiseSchedule(beta, alpha, np.cumprod(alpha))


def forward_noise(x0, t, eps, schedule: NoiseSchedule):
    """X_t = sqrt(ᾱ_t) x0 + sqrt(1-ᾱ_t) eps. ``t`` may be a scalar or one step per batch row."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {eps.shape} != x0 shape {x0.shape}")
    ab = schedule.abar(t)
    if np.ndim(ab):
        ab = ab.reshape(-1, *([1] * (x0.ndim - 1)))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


# predictor -----------------------------------------------------------------------


def _he(rng, shape, fan_in, gain=1.0):
    return rng.normal(0.0, gain * math.sqrt(2.0 / fan_in), size=shape)


class ConditionEmbedder:
    """Label and timestep embeddings projected to m channels and fused with x_t.

    The two embedding rows are added, projected to m, broadcast over time,
    concatenated with x_t (2m channels) and fused back to m by a convolution.
    """

    def __init__(self, m, T, d=32, kernel=3, rng=None, params: ParamStore | None = None, prefix="cond."):
        if d < 1:
            raise ValueError("embedding dimension must be >= 1")
        rng = as_generator(0 if rng is None else rng)
        self.m, self.T, self.d, self.kernel = m, T, d, kernel
        self.params = params if params is not None else ParamStore()
        p = prefix
        self.label_table = self.params.add(p + "label_table", rng.normal(0, 1.0, (N_CLASSES, d)))
        self.timestep_table = self.params.add(p + "timestep_table", rng.normal(0, 1.0, (T, d)))
        self.proj_w = self.params.add(p + "proj_w", rng.normal(0, 1.0 / math.sqrt(d), (m, d)))
        self.proj_b = self.params.add(p + "proj_b", np.zeros(m))
        self.fuse_w = self.params.add(p + "fuse_w", _he(rng, (m, 2 * m, kernel), 2 * m * kernel, 0.7))
        self.fuse_b = self.params.add(p + "fuse_b", np.zeros(m))

    def __call__(self, x_t, t, y) -> Tensor:
        x_t = x_t if isinstance(x_t, Tensor) else Tensor(x_t)
        single = x_t.ndim == 2
        if single:
            x_t = T.reshape(x_t, (1, *x_t.shape))
        n, m, length = x_t.shape
        if m != self.m:
            raise ValueError(f"condition: input has {m} channels, embedder expects {self.m}")
        y = np.broadcast_to(np.asarray(y, dtype=np.int64), (n,))
        t = np.broadcast_to(np.asarray(t, dtype=np.int64), (n,))
        if np.any((y < 1) | (y > N_CLASSES)):
            raise ValueError("condition: label out of range 1..6")
        if np.any((t < 1) | (t > self.T)):
            raise ValueError(f"condition: timestep out of range 1..{self.T}")
        e = T.embedding(self.label_table, y - 1) + T.embedding(self.timestep_table, t - 1)
        e = T.dense(e, self.proj_w, self.proj_b)  # (n, m)
        e = T.broadcast_to(T.reshape(e, (n, m, 1)), (n, m, length))
        out = T.conv1d(T.concat([x_t, e], axis=1), self.fuse_w, self.fuse_b)
        return T.reshape(out, (m, length)) if single else out


class NoisePredictor:
    """ε̂(x_t, t, y): condition fusion followed by a small U-shaped conv net.

    Channels m -> c1 -> c2 (stride-2 in time) -> c1 (nearest upsample) -> m,
    with a skip connection from the first encoder stage into the decoder.
    """

    def __init__(self, m, T, d=32, channels=(64, 128), kernel=3, seed=0):
        rng = np.random.default_rng(seed)
        self.m, self.T, self.d, self.channels, self.kernel = m, T, d, tuple(channels), kernel
        self.params = ParamStore()
        self.embedder = ConditionEmbedder(m, T, d, kernel, rng, self.params)
        c1, c2 = self.channels
        k = kernel
        add = self.params.add
        self.w1, self.b1 = add("enc1_w", _he(rng, (c1, m, k), m * k)), add("enc1_b", np.zeros(c1))
        self.w2, self.b2 = add("enc2_w", _he(rng, (c2, c1, k), c1 * k)), add("enc2_b", np.zeros(c2))
        self.w3, self.b3 = add("dec1_w", _he(rng, (c1, c2, k), c2 * k)), add("dec1_b", np.zeros(c1))
        self.w4, self.b4 = add("out_w", _he(rng, (m, c1, k), c1 * k, 0.5)), add("out_b", np.zeros(m))

    def config(self) -> dict:
        return {"m": self.m, "T": self.T, "d": self.d, "channels": list(self.channels), "kernel": self.kernel}

    def __call__(self, x_t, t, y) -> Tensor:
        x_t = x_t if isinstance(x_t, Tensor) else Tensor(x_t)
        single = x_t.ndim == 2
        if single:
            x_t = T.reshape(x_t, (1, *x_t.shape))
        length = x_t.shape[-1]
        h0 = self.embedder(x_t, t, y)
        h1 = T.relu(T.conv1d(h0, self.w1, self.b1))
        h2 = T.relu(T.conv1d(h1, self.w2, self.b2, stride=2))
        u = T.upsample(h2, 2)
        if u.shape[-1] != length:
            u = u[..., :length]
        h3 = T.relu(T.conv1d(u, self.w3, self.b3)) + h1
        out = T.conv1d(h3, self.w4, self.b4)
        return T.reshape(out, out.shape[1:]) if single else out

    def save(self, path, meta=None):
        meta = dict(meta or {})
        meta["predictor"] = self.config()
        save_checkpoint(path, self.params, meta, fingerprint(self.config()))

    @classmethod
    def load(cls, path) -> "NoisePredictor":
        arrays, meta = load_checkpoint(path)
        cfg = meta["predictor"]
        obj = cls(cfg["m"], cfg["T"], cfg["d"], tuple(cfg["channels"]), cfg["kernel"])
        load_checkpoint(path, fingerprint(obj.config()))
        obj.params.load_arrays(arrays)
        return obj


def condition(x_t, t, y, embedder: ConditionEmbedder) -> Tensor:
    return embedder(x_t, t, y)


# training ------------------------------------------------------------------------


def diffusion_loss(x0, y, schedule: NoiseSchedule, predictor, rng, t=None) -> Tensor:
    """Mean squared error between predicted and true noise for a batch (n, m, l)."""
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim == 2:
        x0 = x0[None]
    n = len(x0)
    if n == 0:
        raise ValueError("diffusion_loss: empty batch")
    g = as_generator(rng)
    if t is None:
        t = g.integers(1, schedule.T + 1, size=n)
    eps = g.standard_normal(x0.shape)
    x_t = forward_noise(x0, t, eps, schedule)
    pred = predictor(Tensor(x_t), t, np.broadcast_to(np.asarray(y), (n,)))
    return T.mse(pred, Tensor(eps))


@dataclass
class ViewPolicy:
    alpha_frac: float = 0.2
    beta_low_frac: float = 0.2
    beta_high_frac: float = 0.5

    def validate(self):
        if not (0 < self.alpha_frac <= 1):
            raise ValueError("alpha_frac must lie in (0, 1]")
        if not (self.alpha_frac <= self.beta_low_frac < self.beta_high_frac <= 1):
            raise ValueError("need alpha_frac <= beta_low_frac < beta_high_frac <= 1")
        return self

    def ranges(self, T):
        self.validate()
        weak = (1, int(math.floor(self.alpha_frac * T)))
        strong = (max(1, int(math.floor(self.beta_low_frac * T))), int(math.floor(self.beta_high_frac * T)))
        if weak[1] < weak[0] or strong[1] < strong[0]:
            raise ValueError(f"view policy gives an empty timestep range at T={T}")
        return weak, strong

    def overlaps(self, T) -> bool:
        weak, strong = self.ranges(T)
        return strong[0] <= weak[1]


@dataclass
class DiffusionConfig:
    T: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02
    embed_dim: int = 32
    epochs: int = 300
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    channels: tuple = (64, 128)
    view_policy: ViewPolicy = field(default_factory=ViewPolicy)

    def to_json(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "DiffusionConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown diffusion config fields {sorted(unknown)}")
        if "view_policy" in d:
            d["view_policy"] = ViewPolicy(**d["view_policy"]).validate()
        if "channels" in d:
            d["channels"] = tuple(d["channels"])
        return cls(**d)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path) -> "DiffusionConfig":
        return cls.from_json(json.loads(Path(path).read_text()))


def check_source(data: LabeledDataset, source: LabelSource, stage: str):
    if len(data) == 0:
        raise ContractError(f"{stage}: empty dataset")
    if not data.all_from(source):
        raise ContractError(f"{stage}: requires only {source.value}-labeled samples")
    if data.normalization_stats is None:
        raise ContractError(f"{stage}: data must be z-score normalized first")


def train_diffusion(expert_data: LabeledDataset, config: DiffusionConfig | None = None, log=None):
    """Fit the noise predictor on expert samples. Returns (predictor, schedule, loss_trace)."""
    config = config or DiffusionConfig()
    check_source(expert_data, LabelSource.EXPERT, "diffusion training")
    schedule = build_schedule(config.T, config.beta_start, config.beta_end)
    predictor = NoisePredictor(expert_data.schema.m, config.T, config.embed_dim, config.channels, seed=config.seed)
    opt = Adam(predictor.params, lr=config.lr)
    rng = np.random.default_rng([config.seed, 1])
    x, y = expert_data.values, expert_data.labels
    n = len(x)
    trace = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            predictor.params.zero_grad()
            loss = diffusion_loss(x[idx], y[idx], schedule, predictor, rng)
            loss.backward()
            opt.step()
            total += float(loss.data) * len(idx)
        trace.append(total / n)
        if log is not None:
            log(f"diffusion epoch {epoch + 1}/{config.epochs} loss {trace[-1]:.4f}")
    if len(trace) >= 2 and trace[-1] > trace[0]:
        warnings.warn("diffusion training loss did not decrease", RuntimeWarning)
    return predictor, schedule, trace


# augmentation --------------------------------------------------------------------


def sample_view_timesteps(policy: ViewPolicy, T, rng, size=None):
    """Draw (t_weak, t_strong, overlap_flag). ``size`` gives arrays of draws."""
    (w0, w1), (s0, s1) = policy.ranges(T)
    g = as_generator(rng)
    tw = g.integers(w0, w1 + 1, size=size)
    ts = g.integers(s0, s1 + 1, size=size)
    return tw, ts, s0 <= w1


def augment_single_step(x0, t, y, predictor, schedule: NoiseSchedule, rng, return_noised=False):
    """Noise x0 to step t with fresh ε, then take one reverse step to an x0 estimate."""
    x0 = np.asarray(x0, dtype=np.float64)
    ab = schedule.abar(t)
    if np.any(ab <= 1e-12):
        raise NumericError("alpha_bar too small for a single-step reverse update")
    eps = as_generator(rng).standard_normal(x0.shape)
    x_t = forward_noise(x0, t, eps, schedule)
    with no_grad():
        eps_hat = predictor(Tensor(x_t), t, y)
    eps_hat = eps_hat.data if isinstance(eps_hat, Tensor) else np.asarray(eps_hat, dtype=np.float64)
    if np.ndim(ab):
        ab = ab.reshape(-1, *([1] * (x0.ndim - 1)))
    out = (x_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite augmented view")
    return (out, x_t) if return_noised else out


def augment_pair(x0, y, policy: ViewPolicy, predictor, schedule: NoiseSchedule, rng, return_info=False):
    """(weak_view, strong_view) with independent timesteps and noise. Works per sample or per batch."""
    g = as_generator(rng)
    x0 = np.asarray(x0, dtype=np.float64)
    size = len(x0) if x0.ndim == 3 else None
    tw, ts, overlap = sample_view_timesteps(policy, schedule.T, g, size)
    weak, weak_noised = augment_single_step(x0, tw, y, predictor, schedule, g, return_noised=True)
    strong, strong_noised = augment_single_step(x0, ts, y, predictor, schedule, g, return_noised=True)
    if return_info:
        info = {"t_weak": tw, "t_strong": ts, "overlap": overlap,
                "weak_noised": weak_noised, "strong_noised": strong_noised}
        return weak, strong, info
    return weak, strong


def augment_dataset(data: LabeledDataset, predictor, schedule, policy: ViewPolicy, seed=0, batch_size=256):
    """Weak and strong views for every sample, as two datasets with ``:weak``/``:strong`` ids."""
    rng = np.random.default_rng([seed, 7])
    weak, strong = np.empty_like(data.values), np.empty_like(data.values)
    for s in range(0, len(data), batch_size):
        sl = slice(s, s + batch_size)
        weak[sl], strong[sl] = augment_pair(data.values[sl], data.labels[sl], policy, predictor, schedule, rng)

    def view(values, suffix):
        return LabeledDataset(values, data.labels.copy(), list(data.sources),
                              [f"{i}:{suffix}" for i in data.sample_ids], data.schema,
                              data.normalization_stats, dict(data.meta))

    return view(weak, "weak"), view(strong, "strong")
