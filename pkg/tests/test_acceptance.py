"""Acceptance criteria, each checked at its stated tolerance.

Every test records one PASS/FAIL line that is printed in the terminal summary.
The pipeline criteria (6, 7, 8, 10) run the real CLI with the default config,
which takes roughly half an hour.
"""

import hashlib
import json
import math
import shutil
import time
import zlib

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from dkroot import tensor as T
from dkroot.cli import main
from dkroot.contrastive import (
    ContrastBatch,
    Encoder,
    EncoderConfig,
    encode,
    flatten,
    make_batch,
    normalize_flatten,
    supcon_loss,
    supcon_reference,
)
from dkroot.diffusion import NoisePredictor, augment_single_step, build_schedule, forward_noise
from dkroot.finetune import ClassifierHead, cross_entropy
from dkroot.metrics import (
    PointCloud,
    avg_interclass_distance,
    calinski_harabasz,
    davies_bouldin,
    intra_class_variance,
    silhouette,
)
from dkroot.optim import ParamStore, finite_diff_check
from dkroot.rules import default_ruleset, rule_label
from dkroot.schema import RootCause, default_schema
from dkroot.synth import PROFILES
from test_metrics import random_cloud, ref_ch, ref_db, ref_inter, ref_intra, ref_silhouette
from test_numeric_core import PRIMITIVES

SCHEMA = default_schema()


def record(n, ok, detail, seconds, limit):
    within = seconds < limit
    status = "PASS" if ok and within else "FAIL"
    line = f"criterion {n} {status}: {detail}; runtime {seconds:.1f}s (limit {limit:.0f}s)"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line
    assert within, line


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


# 1-5, 9: property suites -----------------------------------------------------------


def test_criterion_1_forward_noise_moments():
    t0 = time.perf_counter()
    s = build_schedule()
    x0 = np.array([[1.0, -1.5, 2.0], [-2.5, 3.0, -1.0]])
    worst_mean = worst_var = 0.0
    for t in (1, 25, 50, 100):
        rng = np.random.default_rng(t)
        eps = rng.standard_normal((10000,) + x0.shape)
        draws = forward_noise(np.broadcast_to(x0, eps.shape), np.full(10000, t), eps, s)
        ab = s.alpha_bar[t - 1]
        worst_mean = max(worst_mean, np.max(np.abs(draws.mean(0) / (math.sqrt(ab) * x0) - 1)))
        worst_var = max(worst_var, np.max(np.abs(draws.var(0) / (1 - ab) - 1)))
    ok = worst_mean <= 0.05 and worst_var <= 0.05
    record(1, ok, f"max relative error mean {worst_mean:.4f}, variance {worst_var:.4f} (tol 0.05)",
           time.perf_counter() - t0, 10)


def test_criterion_2_oracle_inversion():
    t0 = time.perf_counter()
    s = build_schedule()
    x0 = np.random.default_rng(0).normal(size=(4, 40))
    worst = 0.0
    for t in range(1, s.T + 1):
        eps = np.random.default_rng(t).standard_normal(x0.shape)
        out = augment_single_step(x0, t, 1, lambda *a: T.Tensor(eps), s, np.random.default_rng(t))
        worst = max(worst, float(np.max(np.abs(out - x0))))
    record(2, worst < 1e-9, f"max |x0_hat - x0| over t=1..{s.T} is {worst:.2e} (tol 1e-9)",
           time.perf_counter() - t0, 1)


def test_criterion_3_supcon_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = 0.0
    for k in range(50):
        n = int(rng.integers(1, 33))  # 2n features, so batch sizes 2..64
        labels = rng.integers(1, int(rng.integers(1, 7)) + 1, size=n)
        tau = [0.05, 0.1, 1.0][k % 3]
        z = rng.normal(size=(2 * n, 8))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        fast = float(supcon_loss(ContrastBatch(T.Tensor(z), labels), tau).data)
        worst = max(worst, abs(fast - supcon_reference(z, np.concatenate([labels, labels]), tau)))
    same = np.tile([[0.6, 0.8, 0.0]], (4, 1))
    ln3 = max(abs(float(supcon_loss(ContrastBatch(T.Tensor(same), [2, 2]), tau).data) - math.log(3))
              for tau in (0.05, 0.1, 1.0))
    ok = worst < 1e-9 and ln3 < 1e-9
    record(3, ok, f"fast vs double loop max diff {worst:.2e}, identical-embedding fixture off ln 3 by {ln3:.2e}",
           time.perf_counter() - t0, 5)


def test_criterion_4_gradient_suite():
    t0 = time.perf_counter()
    failures, worst_prim, worst_comp = [], 0.0, 0.0
    for name, fn in sorted(PRIMITIVES.items()):
        rng = np.random.default_rng(zlib.crc32(name.encode()))
        ps = ParamStore()
        ps.add("a", rng.normal(size=(3, 4)) + 0.05)
        ps.add("b", rng.normal(size=(3, 4)))
        rep = finite_diff_check(lambda: fn(ps["a"], ps["b"]), ps, step=1e-5, tolerance=1e-5)
        worst_prim = max(worst_prim, rep.max_error)
        if not rep.passed:
            failures.append(name)

    rng = np.random.default_rng(5)
    ps = ParamStore()
    for k, shape in (("x", (2, 3, 7)), ("w", (4, 3, 3)), ("b", (4,)), ("table", (6, 3))):
        ps.add(k, rng.normal(size=shape))
    idx = np.array([0, 2, 2, 5])
    rep = finite_diff_check(lambda: T.tsum(T.square(T.conv1d(ps["x"], ps["w"], ps["b"], stride=2)))
                            + T.tsum(T.square(T.embedding(ps["table"], idx))), ps, step=1e-5, tolerance=1e-5)
    worst_prim = max(worst_prim, rep.max_error)
    if not rep.passed:
        failures.append("conv1d/embedding")

    # composites on reduced-width nets
    p = NoisePredictor(3, 10, d=2, channels=(4, 5), seed=1)
    x = rng.normal(size=(2, 3, 6))
    target = rng.normal(size=x.shape)
    composites = {"noise predictor": (lambda: T.mse(p(T.Tensor(x), np.array([2, 9]), np.array([1, 4])),
                                                     T.Tensor(target)), p.params)}
    enc = Encoder(3, 16, EncoderConfig(channels=(6, 8, 8)), seed=2)
    xs, xw = rng.normal(size=(4, 3, 16)), rng.normal(size=(4, 3, 16))
    composites["encoder+supcon"] = (
        lambda: supcon_loss(make_batch(normalize_flatten(encode(xs, enc)), normalize_flatten(encode(xw, enc)),
                                       [1, 1, 2, 3]), 0.5), enc.params)
    head = ClassifierHead(enc.D, seed=1)
    both = ParamStore().update(enc.params).update(head.params)
    composites["encoder+head+cross-entropy"] = (
        lambda: cross_entropy(head(flatten(encode(xs, enc))), [1, 2, 6, 2]), both)
    for name, (loss, params) in composites.items():
        rep = finite_diff_check(loss, params, step=1e-5, tolerance=1e-3)
        worst_comp = max(worst_comp, rep.max_error)
        if not rep.passed:
            failures.append(name)
    detail = (f"{len(PRIMITIVES) + 1} primitive checks max rel err {worst_prim:.1e} (tol 1e-5), "
              f"3 composites max rel err {worst_comp:.1e} (tol 1e-3)")
    if failures:
        detail += f", failed: {failures}"
    record(4, not failures, detail, time.perf_counter() - t0, 60)


def test_criterion_5_clustering_oracles():
    t0 = time.perf_counter()
    four = PointCloud([[0.0], [0.2], [10.0], [10.2]], [1, 1, 2, 2])
    sil, ch, db = silhouette(four), calinski_harabasz(four), davies_bouldin(four)
    checks = {
        "silhouette 0.980 +- 0.001": abs(sil - 0.980) <= 0.001,
        "CH 4900.5 +- 0.1": abs(ch - 4900.5) <= 0.1,
        "DB 0.02 +- 1e-6": abs(db - 0.02) <= 1e-6,
    }
    worst = 0.0
    for seed in range(20):
        c = random_cloud(seed)
        fast_intra, ref = intra_class_variance(c), ref_intra(c)
        worst = max(worst,
                    abs(silhouette(c) - ref_silhouette(c)),
                    abs(calinski_harabasz(c) - ref_ch(c)) / max(1.0, abs(ref_ch(c))),
                    abs(davies_bouldin(c) - ref_db(c)),
                    abs(avg_interclass_distance(c) - ref_inter(c)),
                    max(abs(fast_intra[k] - v) for k, v in ref.items()))
    checks["20 random clouds within 1e-9"] = worst < 1e-9
    failed = [k for k, v in checks.items() if not v]
    detail = f"fixture silhouette {sil:.4f}, CH {ch:.4f}, DB {db:.6f}; random-cloud max diff {worst:.1e}"
    if failed:
        detail += f"; failed sub-checks: {failed}"
    record(5, not failed, detail, time.perf_counter() - t0, 5)


def coverage_sample(**kw):
    """Normal-level sample with the five uplink-coverage conditions set through kw."""
    levels = dict(PDCP_UL_LATENCY=250.0, RLC_UL_LATENCY=210.0, UL_RLC_SDU=100.0, UL_RLC_RETX_SDU=20.0,
                  UL_RBLER=0.15, UL_DMRS_RSRP_MIN=-130.0)
    levels.update(kw)
    x = np.array([[PROFILES[n][0]] * 40 for n in SCHEMA.names], dtype=float)
    for name, v in levels.items():
        x[SCHEMA.index(name)] = v
    return x


COVERAGE = RootCause.UPLINK_WEAK_COVERAGE
TRUTH_TABLE = [
    # (1) PDCP latency >= 200
    (dict(PDCP_UL_LATENCY=200.0), COVERAGE),
    (dict(PDCP_UL_LATENCY=199.99), None),
    # (2) RLC latency >= 200
    (dict(RLC_UL_LATENCY=200.0), COVERAGE),
    (dict(RLC_UL_LATENCY=199.99), None),
    # (3) retransmission ratio RETX / (SDU + 1e-5) > 0.1
    (dict(UL_RLC_RETX_SDU=10.001), COVERAGE),
    (dict(UL_RLC_RETX_SDU=10.0), None),
    (dict(UL_RLC_SDU=0.0, UL_RLC_RETX_SDU=2e-6), COVERAGE),  # 2e-6 / 1e-5 = 0.2
    (dict(UL_RLC_SDU=0.0, UL_RLC_RETX_SDU=1e-6), None),  # 1e-6 / 1e-5 = 0.1, not above
    # (4) block error rate >= 0.1
    (dict(UL_RBLER=0.1), COVERAGE),
    (dict(UL_RBLER=0.0999), None),
    # (5) DMRS RSRP <= -125 or SRS RSRP <= -130
    (dict(UL_DMRS_RSRP_MIN=-125.0), COVERAGE),
    (dict(UL_DMRS_RSRP_MIN=-120.0, UL_SRS_RSRP=-125.0), None),
]


def test_criterion_9_rule_truth_table():
    t0 = time.perf_counter()
    rules = default_ruleset()
    wrong = [(kw, want) for kw, want in TRUTH_TABLE if rule_label(coverage_sample(**kw), rules, SCHEMA) is not want]
    detail = f"{len(TRUTH_TABLE) - len(wrong)}/{len(TRUTH_TABLE)} boundary cases correct"
    if wrong:
        detail += f", wrong: {wrong}"
    record(9, len(TRUTH_TABLE) == 12 and not wrong, detail, time.perf_counter() - t0, 1)


# 6-8, 10: the pipeline on default synthetic data -----------------------------------


def run_all(root, seeds):
    t0 = time.perf_counter()
    assert main(["--out", str(root), "run", "all", "--seeds", str(seeds)]) == 0
    return time.perf_counter() - t0


@pytest.fixture(scope="module")
def data_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance_data")
    t0 = time.perf_counter()
    assert main(["--out", str(root), "gen-data"]) == 0
    return root, time.perf_counter() - t0


@pytest.fixture(scope="module")
def five_seed_run(data_root, tmp_path_factory):
    src, gen_seconds = data_root
    root = tmp_path_factory.mktemp("acceptance_5seeds")
    shutil.copytree(src, root, dirs_exist_ok=True)
    wall = run_all(root, 5) + gen_seconds
    metrics = json.loads((root / "evaluate" / "metrics.json").read_text())
    stages = json.loads((root / "manifest.json").read_text())["stages"]
    return metrics, {k: v["seconds"] for k, v in stages.items()}, wall


def test_criterion_6_view_distance_ordering(five_seed_run):
    m, sec, _ = five_seed_run
    a = m["l2_audit"]
    mean = {k: a[k]["mean"] for k in ("weak_noise", "weak_denoise", "strong_noise", "strong_denoise")}
    checks = {
        "strong-noise > weak-noise": mean["strong_noise"] > mean["weak_noise"],
        "weak noise > denoise": mean["weak_noise"] > mean["weak_denoise"],
        "strong noise > denoise": mean["strong_noise"] > mean["strong_denoise"],
        "paired strong-denoise > weak-denoise >= 90%": a["paired_strong_gt_weak_denoise"] >= 0.9,
    }
    failed = [k for k, v in checks.items() if not v]
    detail = (f"strong noise/denoise {mean['strong_noise']:.2f}/{mean['strong_denoise']:.2f}, "
              f"weak {mean['weak_noise']:.2f}/{mean['weak_denoise']:.2f}, "
              f"paired {a['paired_strong_gt_weak_denoise']:.3f} over {a['n']} samples")
    if failed:
        detail += f"; failed: {failed}"
    # diffusion training plus the evaluation stage that runs the audit
    record(6, not failed, detail, sec["diffusion"] + sec["evaluate"], 600)


def test_criterion_7_augmentation_battery_direction(five_seed_run):
    m, sec, _ = five_seed_run
    raw = m["augmentation"]["raw"]
    strong, noise, weak, orig = raw["dkroot_strong"], raw["noise_injection"], raw["dkroot_weak"], raw["original"]
    ratios = {c: weak["per_class_intra_variance"][c] / v for c, v in orig["per_class_intra_variance"].items()}
    worst = max(abs(r - 1) for r in ratios.values())
    checks = {
        "strong MI > noise-injection MI": strong["mutual_information_nats"] > noise["mutual_information_nats"],
        "strong silhouette > noise-injection silhouette": strong["silhouette"] > noise["silhouette"],
        "weak intra-class variance within 10%": worst <= 0.10,
    }
    failed = [k for k, v in checks.items() if not v]
    detail = (f"MI strong {strong['mutual_information_nats']:.4f} vs noise {noise['mutual_information_nats']:.4f}, "
              f"silhouette strong {strong['silhouette']:.4f} vs noise {noise['silhouette']:.4f}, "
              f"weak/original intra variance worst deviation {worst:.3f}")
    if failed:
        detail += f"; failed: {failed}"
    record(7, not failed, detail, sec["evaluate"], 300)


def test_criterion_8_ablation_ordering(five_seed_run):
    m, _, wall = five_seed_run
    acc = {v: r["mean"] for v, r in m["ablation"].items()}
    gaps = {
        "dkroot_full - cnn_exp": acc["dkroot_full"] - acc["cnn_exp"],
        "dkroot_full - ft_linear": acc["dkroot_full"] - acc["ft_linear"],
        "cnn_exp - cnn_full": acc["cnn_exp"] - acc["cnn_full"],
    }
    checks = {f"{k} >= 0.01": g >= 0.01 for k, g in gaps.items()}
    prog = m["embedding_progress"]
    avg = {stage: {k: float(np.mean([p[stage][k] for p in prog])) for k in prog[0][stage]}
           for stage in ("post_pretrain", "post_finetune")}
    pre, ft = avg["post_pretrain"], avg["post_finetune"]
    checks["silhouette rises after fine-tuning"] = ft["silhouette"] > pre["silhouette"]
    checks["CH rises after fine-tuning"] = ft["calinski_harabasz"] > pre["calinski_harabasz"]
    checks["DB falls after fine-tuning"] = ft["davies_bouldin"] < pre["davies_bouldin"]
    failed = [k for k, v in checks.items() if not v]
    detail = ("mean accuracy " + ", ".join(f"{v} {a:.4f}" for v, a in acc.items())
              + f"; silhouette {pre['silhouette']:.3f} -> {ft['silhouette']:.3f}, "
              f"CH {pre['calinski_harabasz']:.1f} -> {ft['calinski_harabasz']:.1f}, "
              f"DB {pre['davies_bouldin']:.3f} -> {ft['davies_bouldin']:.3f}")
    if failed:
        detail += f"; failed: {failed}"
    record(8, not failed, detail, wall, 45 * 60)


def test_criterion_10_determinism(data_root, tmp_path):
    src, _ = data_root
    roots = [tmp_path / "a", tmp_path / "b"]
    seconds = 0.0
    for r in roots:
        shutil.copytree(src, r)
        seconds += run_all(r, 3)
    a, b = (digest(r / "evaluate" / "metrics.json") for r in roots)
    record(10, a == b, f"two `run all --seeds 3` runs give metrics.json sha256 {a[:12]} and {b[:12]}",
           seconds, 2 * 45 * 60)
