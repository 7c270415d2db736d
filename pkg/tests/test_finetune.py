import math

import numpy as np
import pytest

from dkroot import finetune as F
from dkroot import tensor as T
from dkroot.contrastive import Encoder, EncoderConfig, encode, flatten
from dkroot.dataset import zscore_fit_transform
from dkroot.diffusion import ContractError
from dkroot.finetune import (
    Ablation,
    AblationData,
    ClassifierHead,
    FinetuneConfig,
    Mode,
    cross_entropy,
    finetune,
    load_model,
    log_loss,
    predict,
    predict_proba,
    train_ablation,
    write_predictions,
)
from dkroot.optim import ParamStore, finite_diff_check
from dkroot.synth import make_expert_pool, make_rule_pool
from dkroot.tensor import Tensor

SMALL = EncoderConfig(channels=(8, 8, 8))


@pytest.fixture(scope="module")
def pools():
    expert = zscore_fit_transform(make_expert_pool(60, seed=0))
    rule = zscore_fit_transform(make_rule_pool(90, seed=0), expert.normalization_stats)
    return expert, rule


def enc_for(data, seed=0):
    return Encoder(data.schema.m, data.l, SMALL, seed=seed)


# head, probabilities, loss ---------------------------------------------------------


def test_zero_head_is_uniform(pools):
    expert, _ = pools
    enc = enc_for(expert)
    p = predict_proba(expert.values[:5], enc, ClassifierHead(enc.D, zero=True))
    assert np.allclose(p, 1 / 6, atol=1e-15)


def test_softmax_closed_form():
    p = T.softmax(Tensor([math.log(3), 0, 0, 0, 0, 0])).data
    assert abs(p[0] - 3 / 8) < 1e-15


def test_probabilities_sum_to_one(pools):
    expert, _ = pools
    enc = enc_for(expert, seed=3)
    p = predict_proba(expert.values, enc, ClassifierHead(enc.D, seed=3))
    assert p.shape == (len(expert), 6)
    assert np.all(np.abs(p.sum(1) - 1) < 1e-9)
    single = predict_proba(expert.values[0], enc, ClassifierHead(enc.D, seed=3))
    assert np.allclose(single, p[0], atol=1e-12)


def test_cross_entropy_examples():
    big = np.full((2, 6), -1e3)
    big[0, 2] = big[1, 4] = 0.0
    assert float(cross_entropy(Tensor(big), [3, 5]).data) < 1e-12
    assert abs(float(cross_entropy(Tensor(np.zeros((4, 6))), [1, 2, 3, 6]).data) - math.log(6)) < 1e-12
    z = np.random.default_rng(0).normal(size=(2, 6))
    a = float(cross_entropy(Tensor(z[:1]), [2]).data)
    b = float(cross_entropy(Tensor(z[1:]), [4]).data)
    assert abs(float(cross_entropy(Tensor(z), [2, 4]).data) - (a + b) / 2) < 1e-12
    with pytest.raises(ValueError):
        cross_entropy(Tensor(z), [0, 7])


def test_cross_entropy_equals_mean_negative_log_probability():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(9, 6)) * 3
    y = rng.integers(1, 7, size=9)
    p = np.exp(z - z.max(1, keepdims=True))
    p /= p.sum(1, keepdims=True)
    assert abs(float(cross_entropy(Tensor(z), y).data) - log_loss(p, y)) < 1e-12
    assert abs(log_loss(p, y) + np.mean(np.log(p[np.arange(9), y - 1]))) < 1e-12


def test_argmax_ignores_constant_shift(pools):
    expert, _ = pools
    enc = enc_for(expert, seed=2)
    head = ClassifierHead(enc.D, seed=2)
    before = predict(expert.values, enc, head)
    head.b.data += 17.5
    assert np.array_equal(predict(expert.values, enc, head), before)


def test_head_cross_entropy_gradient():
    enc = Encoder(3, 16, SMALL, seed=1)
    head = ClassifierHead(enc.D, seed=1)
    x = np.random.default_rng(2).normal(size=(4, 3, 16))
    ps = ParamStore().update(enc.params).update(head.params)
    rep = finite_diff_check(lambda: cross_entropy(head(flatten(encode(x, enc))), [1, 2, 6, 2]), ps,
                            step=1e-5, tolerance=1e-3)
    assert rep.passed, str(rep)
    feats = Tensor(np.random.default_rng(3).normal(size=(5, enc.D)))
    rep = finite_diff_check(lambda: cross_entropy(head(feats), [1, 2, 3, 4, 5]), head.params,
                            step=1e-5, tolerance=1e-5)
    assert rep.passed, str(rep)


# fine-tuning ---------------------------------------------------------------------


def test_zero_epochs_leaves_everything_at_init(pools):
    expert, _ = pools
    enc = enc_for(expert, seed=4)
    res = finetune(expert, enc, FinetuneConfig(epochs=0, seed=6))
    fresh = ClassifierHead(enc.D, seed=6)
    assert np.array_equal(res.head.w.data, fresh.w.data)
    assert all(np.array_equal(res.encoder.params[n].data, enc.params[n].data) for n in enc.params.names())
    assert res.trace == []


def test_linear_mode_freezes_encoder_bitwise(pools):
    expert, _ = pools
    enc = enc_for(expert, seed=5)
    before = {n: a.copy() for n, a in enc.params.arrays().items()}
    res = finetune(expert, enc, FinetuneConfig(Mode.LINEAR, epochs=5, seed=1))
    for n, a in before.items():
        assert np.array_equal(res.encoder.params[n].data, a)
        assert np.array_equal(enc.params[n].data, a)
    assert not np.array_equal(res.head.w.data, ClassifierHead(enc.D, seed=1).w.data)


def test_full_mode_updates_a_copy(pools):
    expert, _ = pools
    enc = enc_for(expert, seed=5)
    before = enc.params.arrays()
    res = finetune(expert, enc, FinetuneConfig(Mode.FULL, epochs=2, seed=1))
    assert all(np.array_equal(enc.params[n].data, a) for n, a in before.items())
    assert any(not np.array_equal(res.encoder.params[n].data, a) for n, a in before.items())


def test_full_mode_fits_the_training_set(pools):
    expert, _ = pools
    res = finetune(expert, Encoder(expert.schema.m, expert.l, seed=0), FinetuneConfig(epochs=30, seed=0))
    assert res.trace[-1]["train_acc"] >= 0.95


def test_finetune_is_deterministic(pools):
    expert, _ = pools
    a = finetune(expert, enc_for(expert), FinetuneConfig(epochs=3, seed=2), val=expert.subset(range(12)))
    b = finetune(expert, enc_for(expert), FinetuneConfig(epochs=3, seed=2), val=expert.subset(range(12)))
    assert a.trace == b.trace and a.best_epoch == b.best_epoch
    assert np.array_equal(a.head.w.data, b.head.w.data)
    assert {"epoch", "loss", "train_acc", "val_acc", "val_loss"} <= set(a.trace[0])


def test_best_validation_epoch_is_restored(pools):
    expert, _ = pools
    val = expert.subset(range(20))
    res = finetune(expert, enc_for(expert), FinetuneConfig(epochs=6, seed=3), val=val)
    best = max(res.trace, key=lambda e: (e["val_acc"], -e["val_loss"]))
    assert res.best_epoch == best["epoch"]
    acc = np.mean(predict(val.values, res.encoder, res.head) == val.labels)
    assert acc == best["val_acc"]


def test_finetune_contract_errors(pools):
    expert, rule = pools
    with pytest.raises(ContractError):
        finetune(rule, enc_for(rule), FinetuneConfig(epochs=1))
    with pytest.raises(ContractError):
        finetune(expert, None)
    with pytest.raises(ValueError):
        FinetuneConfig.from_json({"mode": "full", "momentum": 0.9})
    assert FinetuneConfig.from_json(FinetuneConfig(Mode.LINEAR).to_json()).mode is Mode.LINEAR


# ablation routing ------------------------------------------------------------------


def test_ablation_routing(pools, monkeypatch):
    expert, rule = pools
    seen = {}

    def spy(train, encoder, config, val, log=None):
        seen["n"], seen["mode"], seen["encoder"] = len(train), config.mode, encoder
        return F.FinetuneResult(encoder, ClassifierHead(encoder.D))

    monkeypatch.setattr(F, "_fit", spy)
    pre = enc_for(expert, seed=9)
    data = AblationData(expert, None, rule, pre)
    train_ablation(Ablation.CNN_FULL, data, encoder_config=SMALL)
    assert seen["n"] == len(rule) + len(expert) and seen["mode"] is Mode.FULL
    train_ablation(Ablation.CNN_EXP, data, encoder_config=SMALL)
    assert seen["n"] == len(expert)
    assert not np.array_equal(seen["encoder"].params["enc0_w"].data, pre.params["enc0_w"].data)
    train_ablation(Ablation.FT_LINEAR, data)
    assert seen["mode"] is Mode.LINEAR and seen["encoder"] is not pre
    assert np.array_equal(seen["encoder"].params["enc0_w"].data, pre.params["enc0_w"].data)
    train_ablation(Ablation.DKROOT_FULL, data)
    assert seen["mode"] is Mode.FULL and seen["encoder"].D == pre.D


def test_ablation_errors(pools):
    expert, rule = pools
    with pytest.raises(ContractError):
        train_ablation(Ablation.CNN_EXP, AblationData(expert.subset([])))
    with pytest.raises(ContractError):
        train_ablation(Ablation.CNN_FULL, AblationData(expert), FinetuneConfig(epochs=0))
    with pytest.raises(ContractError):
        train_ablation(Ablation.DKROOT_FULL, AblationData(expert, rule=rule))
    with pytest.raises(ContractError):
        train_ablation(Ablation.CNN_FULL, AblationData(expert, rule=expert), FinetuneConfig(epochs=0))
    with pytest.raises(ValueError):
        train_ablation("cnn_rule", AblationData(expert))


# persistence -----------------------------------------------------------------------


def test_model_roundtrip_and_prediction_export(pools, tmp_path):
    expert, _ = pools
    res = finetune(expert, enc_for(expert), FinetuneConfig(epochs=1))
    F.save_model(tmp_path / "m.npz", res, {"mode": "full"})
    enc, head, meta = load_model(tmp_path / "m.npz")
    assert meta["mode"] == "full"
    p = predict_proba(expert.values, enc, head)
    assert np.array_equal(p, predict_proba(expert.values, res.encoder, res.head))
    write_predictions(tmp_path / "p.csv", expert.sample_ids, p)
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "sample_id,predicted_class,p1,p2,p3,p4,p5,p6"
    assert len(lines) == len(expert) + 1
