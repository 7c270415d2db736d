"""Classification head, expert fine-tuning and the four ablation training modes."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .contrastive import Encoder, EncoderConfig, encode, flatten, stratified_batches
from .dataset import LabeledDataset, LabelSource
from .diffusion import ContractError, check_source
from .optim import Adam, ParamStore, fingerprint, load_checkpoint, save_checkpoint
from .schema import N_CLASSES
from .tensor import Tensor, no_grad


class Mode(str, enum.Enum):
    FULL = "full"
    LINEAR = "linear"


class Ablation(str, enum.Enum):
    CNN_EXP = "cnn_exp"
    CNN_FULL = "cnn_full"
    DKROOT_FULL = "dkroot_full"
    FT_LINEAR = "ft_linear"


class ClassifierHead:
    """Dense map from flattened encoder features to 6 logits."""

    def __init__(self, D, seed=0, zero=False):
        rng = np.random.default_rng([seed, 13])
        self.D = D
        self.params = ParamStore()
        w = np.zeros((N_CLASSES, D)) if zero else rng.normal(0, 1.0 / math.sqrt(D), (N_CLASSES, D))
        self.w = self.params.add("head_w", w)
        self.b = self.params.add("head_b", np.zeros(N_CLASSES))

    def __call__(self, features) -> Tensor:
        return T.dense(features, self.w, self.b)


def logits(x, encoder: Encoder, head: ClassifierHead) -> Tensor:
    h = encode(x, encoder)
    return head(flatten(h))


def predict_proba(x, encoder: Encoder, head: ClassifierHead, batch_size=512) -> np.ndarray:
    """Class probabilities, (6,) for one sample or (n, 6) for a batch."""
    x = np.asarray(x, dtype=np.float64)
    with no_grad():
        if x.ndim == 2:
            return T.softmax(logits(x, encoder, head)).data
        out = [T.softmax(logits(x[s:s + batch_size], encoder, head), axis=-1).data
               for s in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, N_CLASSES))


def predict(x, encoder, head) -> np.ndarray:
    return np.argmax(predict_proba(x, encoder, head), axis=-1) + 1


def cross_entropy(logit: Tensor, labels) -> Tensor:
    """Mean negative log-probability of the true class, from logits via log-softmax."""
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if np.any((labels < 1) | (labels > N_CLASSES)):
        raise ValueError("cross_entropy: label out of range 1..6")
    if logit.ndim == 1:
        logit = T.reshape(logit, (1, -1))
    lp = T.log_softmax(logit, axis=-1)
    picked = lp[np.arange(len(labels)), labels - 1]
    return -T.mean(picked)


def log_loss(probas, labels) -> float:
    """Cross-entropy of already-normalized probability rows."""
    p = np.atleast_2d(np.asarray(probas, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if np.any((labels < 1) | (labels > N_CLASSES)):
        raise ValueError("log_loss: label out of range 1..6")
    return float(-np.mean(np.log(p[np.arange(len(labels)), labels - 1])))


@dataclass
class FinetuneConfig:
    mode: Mode = Mode.FULL
    epochs: int = 60
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        self.mode = Mode(self.mode)

    def to_json(self):
        d = asdict(self)
        d["mode"] = self.mode.value
        return d

    @classmethod
    def from_json(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown finetune config fields {sorted(unknown)}")
        return cls(**d)


@dataclass
class FinetuneResult:
    encoder: Encoder
    head: ClassifierHead
    trace: list = field(default_factory=list)  # dicts: epoch, loss, train_acc, val_acc
    best_epoch: int = 0


def _accuracy(x, y, encoder, head):
    if len(x) == 0:
        return float("nan")
    return float(np.mean(predict(x, encoder, head) == y))


def _fit(train: LabeledDataset, encoder: Encoder, config: FinetuneConfig, val: LabeledDataset | None, log=None):
    head = ClassifierHead(encoder.D, seed=config.seed)
    names = head.params.names()
    params = ParamStore().update(head.params)
    if config.mode is Mode.FULL:
        params.update(encoder.params)
        names += encoder.params.names()
    opt = Adam(params, lr=config.lr, names=names)
    rng = np.random.default_rng([config.seed, 3])
    x, y = train.values, train.labels
    frozen = config.mode is Mode.LINEAR
    cached = None
    if frozen:
        # the encoder never changes, so its features are computed once
        with no_grad():
            cached = flatten(encode(x, encoder)).data
    result = FinetuneResult(encoder, head)
    best = (-np.inf, -np.inf)
    best_arrays = (encoder.params.arrays(), head.params.arrays())
    for epoch in range(config.epochs):
        total = 0.0
        for idx in stratified_batches(y, config.batch_size, rng):
            params.zero_grad()
            feats = Tensor(cached[idx]) if frozen else flatten(encode(x[idx], encoder))
            loss = cross_entropy(head(feats), y[idx])
            loss.backward()
            opt.step()
            total += float(loss.data) * len(idx)
        entry = {"epoch": epoch + 1, "loss": total / len(x), "train_acc": _accuracy(x, y, encoder, head)}
        if val is not None and len(val):
            entry["val_acc"] = _accuracy(val.values, val.labels, encoder, head)
            with no_grad():
                entry["val_loss"] = float(cross_entropy(logits(val.values, encoder, head), val.labels).data)
            # validation accuracy first, validation loss breaks ties
            score = (entry["val_acc"], -entry["val_loss"])
            if score > best:
                best = score
                best_arrays = (encoder.params.arrays(), head.params.arrays())
                result.best_epoch = epoch + 1
        result.trace.append(entry)
        if log is not None:
            log(f"finetune epoch {epoch + 1}/{config.epochs} " + " ".join(
                f"{k}={v:.4f}" for k, v in entry.items() if k != "epoch"))
    if val is not None and len(val) and config.epochs > 0:
        encoder.params.load_arrays(best_arrays[0])
        head.params.load_arrays(best_arrays[1])
    else:
        result.best_epoch = config.epochs
    return result


def finetune(expert_train: LabeledDataset, encoder: Encoder, config: FinetuneConfig | None = None,
             val: LabeledDataset | None = None, log=None) -> FinetuneResult:
    """Train a head (and in FULL mode the encoder) on expert labels.

    The given encoder is copied, so a pretrained checkpoint is never modified.
    The returned weights are those of the best validation epoch when ``val`` is given.
    """
    config = config or FinetuneConfig()
    if encoder is None:
        raise ContractError("finetune needs an encoder checkpoint")
    check_source(expert_train, LabelSource.EXPERT, "finetuning")
    return _fit(expert_train, encoder.copy(), config, val, log)


@dataclass
class AblationData:
    expert_train: LabeledDataset
    expert_val: LabeledDataset | None = None
    rule: LabeledDataset | None = None
    pretrained: Encoder | None = None


def train_ablation(mode, data: AblationData, config: FinetuneConfig | None = None,
                   encoder_config: EncoderConfig | None = None, log=None) -> FinetuneResult:
    """Train one ablation variant. All variants share the encoder architecture."""
    mode = Ablation(mode)
    config = config or FinetuneConfig()
    if data.expert_train is None or len(data.expert_train) == 0:
        raise ContractError(f"{mode.value}: expert training set is empty")
    check_source(data.expert_train, LabelSource.EXPERT, mode.value)
    if mode in (Ablation.CNN_EXP, Ablation.CNN_FULL):
        enc_cfg = encoder_config or (data.pretrained.config if data.pretrained is not None else EncoderConfig())
        scratch = Encoder(data.expert_train.schema.m, data.expert_train.l, enc_cfg, seed=config.seed + 1000)
        train = data.expert_train
        if mode is Ablation.CNN_FULL:
            if data.rule is None or len(data.rule) == 0:
                raise ContractError("cnn_full: rule-labeled data required")
            check_source(data.rule, LabelSource.RULE, mode.value)
            train = LabeledDataset.concat([data.rule, data.expert_train])
        cfg = FinetuneConfig(Mode.FULL, config.epochs, config.batch_size, config.lr, config.seed)
        return _fit(train, scratch, cfg, data.expert_val, log)
    if data.pretrained is None:
        raise ContractError(f"{mode.value}: pretrained encoder checkpoint required (run pretrain first)")
    m = Mode.FULL if mode is Ablation.DKROOT_FULL else Mode.LINEAR
    cfg = FinetuneConfig(m, config.epochs, config.batch_size, config.lr, config.seed)
    return _fit(data.expert_train, data.pretrained.copy(), cfg, data.expert_val, log)


def save_model(path, result: FinetuneResult, meta=None):
    meta = dict(meta or {})
    meta["encoder_spec"] = result.encoder.spec()
    params = ParamStore().update(result.encoder.params).update(result.head.params)
    save_checkpoint(path, params, meta, fingerprint(result.encoder.spec()))


def load_model(path):
    arrays, meta = load_checkpoint(path)
    spec = meta["encoder_spec"]
    enc = Encoder(spec["m"], spec["l"], EncoderConfig.from_json(spec["encoder"]))
    load_checkpoint(path, fingerprint(enc.spec()))
    head = ClassifierHead(enc.D)
    enc.params.load_arrays({k: arrays[k] for k in enc.params.names()})
    head.params.load_arrays({k: arrays[k] for k in head.params.names()})
    return enc, head, meta


def write_predictions(path, sample_ids, probas):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "predicted_class"] + [f"p{c}" for c in range(1, N_CLASSES + 1)])
        for sid, p in zip(sample_ids, probas):
            w.writerow([sid, int(np.argmax(p)) + 1] + [repr(float(v)) for v in p])
