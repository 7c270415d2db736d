"""Run layout, configuration and the stage runners behind the command line.

A run lives under one output root::

    data/        raw pools written by gen-data (CSV + schema)
    diffusion/   noise predictor checkpoint, config, loss trace
    pretrain/    seed<k>/ encoder checkpoint and loss trace
    finetune/    seed<k>/ fine-tuned model, trace, test predictions
    ablation/    seed<k>/ per-variant results
    evaluate/    metrics.json plus plot-data CSVs
    manifest.json

Every checkpoint records a fingerprint of the configuration that produced it,
so a stage refuses to build on a checkpoint made under a different config.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from pathlib import Path

import numpy as np

from .contrastive import Encoder, PretrainConfig, embed, pretrain, write_trace
from .dataset import (
    LabeledDataset,
    LabelSource,
    apply_zscore,
    fit_zscore,
    load_dataset,
    save_dataset,
    split_dataset,
)
from .diffusion import DiffusionConfig, NoisePredictor, ViewPolicy, augment_pair, build_schedule, train_diffusion
from .finetune import (
    Ablation,
    AblationData,
    FinetuneConfig,
    Mode,
    finetune,
    load_model,
    predict,
    predict_proba,
    save_model,
    train_ablation,
    write_predictions,
)
from .metrics import (
    MetricsReport,
    PointCloud,
    accuracy,
    calinski_harabasz,
    classical_augment,
    davies_bouldin,
    knn_baseline,
    l2_view_audit,
    mean_std,
    silhouette,
    write_csv,
    write_json,
)
from .optim import fingerprint
from .schema import N_CLASSES, KpiSchema, default_schema
from .synth import generate_pool, make_expert_pool, make_rule_pool

log = logging.getLogger("dkroot")

OUT_ENV = "DKROOT_OUT"
STAGES = ("diffusion", "pretrain", "finetune", "ablation", "evaluate")
VARIANTS = [a.value for a in (Ablation.DKROOT_FULL, Ablation.CNN_EXP, Ablation.CNN_FULL, Ablation.FT_LINEAR)]


class ConfigError(ValueError):
    pass


class DependencyError(RuntimeError):
    pass


# configuration -------------------------------------------------------------------


def default_config() -> dict:
    pre = PretrainConfig().to_json()
    pre.pop("seed")
    return {
        "data": {"n_rule": 3000, "n_expert": 185, "n_test": 600, "scale": 1.0, "seed": 0, "length": 40,
                 "split": [0.7, 0.15, 0.15]},
        "diffusion": DiffusionConfig().to_json(),
        "pretrain": pre,
        "finetune": {"epochs": 60, "batch_size": 32, "lr": 1e-3},
        "evaluate": {"audit_samples": 300, "knn_window": 20},
    }


def _merge(base, over, path=""):
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config field {path}{k}")
        if isinstance(base[k], dict) and k not in ("view_policy", "encoder"):
            if not isinstance(v, dict):
                raise ConfigError(f"config field {path}{k} must be an object")
            _merge(base[k], v, f"{path}{k}.")
        else:
            base[k] = v
    return base


def resolve_config(path=None, overrides=None) -> dict:
    """Defaults, then the JSON file, then flag overrides; validated by building every stage config."""
    cfg = default_config()
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        _merge(cfg, raw)
    if overrides:
        _merge(cfg, overrides)
    try:
        DiffusionConfig.from_json(cfg["diffusion"])
        PretrainConfig.from_json({**cfg["pretrain"], "seed": 0})
        FinetuneConfig.from_json({**cfg["finetune"], "seed": 0})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    d = cfg["data"]
    if not 0 < float(d["scale"]) <= 1e3:
        raise ConfigError("data.scale must be positive")
    if min(d["n_rule"], d["n_expert"], d["n_test"]) < 1:
        raise ConfigError("data pool sizes must be positive")
    return cfg


def pool_sizes(data_cfg) -> dict:
    """Scaled pool sizes: floor(n * scale), with at least 6 expert and test samples so every class appears."""
    s = float(data_cfg["scale"])
    return {"rule": max(1, math.floor(data_cfg["n_rule"] * s + 1e-9)),
            "expert": max(N_CLASSES, math.floor(data_cfg["n_expert"] * s + 1e-9)),
            "test": max(N_CLASSES, math.floor(data_cfg["n_test"] * s + 1e-9))}


def parse_seeds(text) -> list[int]:
    """``"5"`` means seeds 0..4; ``"3,7"`` lists seeds explicitly."""
    text = str(text).strip()
    try:
        if "," in text:
            seeds = [int(s) for s in text.split(",") if s.strip()]
        else:
            seeds = list(range(int(text)))
    except ValueError:
        raise ConfigError(f"bad seed list {text!r}") from None
    if not seeds or len(set(seeds)) != len(seeds) or min(seeds) < 0:
        raise ConfigError(f"bad seed list {text!r}")
    return seeds


# workspace -----------------------------------------------------------------------


class Workspace:
    def __init__(self, root=None):
        self.root = Path(root or os.environ.get(OUT_ENV) or "runs")

    def path(self, *parts) -> Path:
        return self.root.joinpath(*parts)

    def seed_dir(self, stage, seed) -> Path:
        return self.path(stage, f"seed{seed}")

    def ensure(self, *parts) -> Path:
        p = self.path(*parts)
        try:
            p.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create {p}: {exc}") from None
        return p

    # manifest
    def manifest(self) -> dict:
        p = self.path("manifest.json")
        return json.loads(p.read_text()) if p.exists() else {"stages": {}}

    def record(self, stage, cfg, seeds, checkpoints, artifacts, seconds):
        man = self.manifest()
        man["config"] = cfg
        man["config_fingerprint"] = fingerprint(cfg)
        if seeds is not None:
            man["seeds"] = sorted(set(man.get("seeds", [])) | set(seeds))
        man["run_id"] = fingerprint([man["config_fingerprint"], man.get("seeds", [])])
        man["stages"][stage] = {"checkpoints": [str(c) for c in checkpoints],
                                "artifacts": [str(a) for a in artifacts], "seconds": round(seconds, 3)}
        self.path("manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")


# data ------------------------------------------------------------------------------


DATA_FILES = ("rule", "expert", "test")


def gen_data(ws: Workspace, cfg: dict) -> dict:
    """Write the rule pool, the expert pool and an independent ground-truth test pool."""
    d = cfg["data"]
    sizes = pool_sizes(d)
    schema = default_schema()
    rule = make_rule_pool(sizes["rule"], d["seed"], schema, l=d["length"])
    expert = make_expert_pool(sizes["expert"], d["seed"], schema, l=d["length"])
    v, y, info = generate_pool(sizes["test"], d["seed"], schema, l=d["length"], stream=5000, prefix="t")
    test = LabeledDataset(v, y, [LabelSource.EXPERT] * len(y), info["ids"], schema)
    out = ws.ensure("data")
    for name, ds in zip(DATA_FILES, (rule, expert, test)):
        save_dataset(ds, out / f"{name}_samples.csv", out / f"{name}_labels.csv")
    schema.save(out / "schema.json")
    (out / "data_config.json").write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")
    counts = {name: np.bincount(ds.labels, minlength=N_CLASSES + 1)[1:].tolist()
              for name, ds in zip(DATA_FILES, (rule, expert, test))}
    return counts


def label_file(samples_path, out_path, ruleset, schema: KpiSchema | None = None) -> dict:
    """Rule-label every sample of a samples CSV. Samples no rule covers are left out."""
    from .rules import label_many

    schema = schema or default_schema()
    values, ids = _read_samples(samples_path, schema)
    labels = label_many(values, ruleset, schema)
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "class_id", "source"])
        for sid, y in zip(ids, labels):
            if y > 0:
                w.writerow([sid, int(y), LabelSource.RULE.value])
    counts = {str(c): int((labels == c).sum()) for c in range(1, N_CLASSES + 1)}
    counts["unlabeled"] = int((labels == 0).sum())
    return counts


def _read_samples(path, schema):
    rows, order = {}, []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or header[:2] != ["sample_id", "t"] or header[2:] != schema.names:
            raise ConfigError(f"{path}: not a samples file for this schema")
        for row in r:
            if row[0] not in rows:
                rows[row[0]] = []
                order.append(row[0])
            rows[row[0]].append([float(x) for x in row[2:]])
    return np.array([np.array(rows[s]).T for s in order]), order


class Data:
    """Loaded pools, split and z-scored with statistics from rule + expert-train."""

    def __init__(self, ws: Workspace, cfg: dict):
        d = ws.path("data")
        if not (d / "schema.json").exists():
            raise DependencyError(f"no dataset under {d}; run gen-data first")
        if json.loads((d / "data_config.json").read_text()) != cfg["data"]:
            raise DependencyError("dataset was generated with a different data config; re-run gen-data")
        schema = KpiSchema.load(d / "schema.json")
        raw = {n: load_dataset(d / f"{n}_samples.csv", d / f"{n}_labels.csv", schema) for n in DATA_FILES}
        train, val, hold = split_dataset(raw["expert"], tuple(cfg["data"]["split"]), seed=cfg["data"]["seed"])
        stats = fit_zscore(np.concatenate([raw["rule"].values, train.values]))
        z = lambda ds: ds.with_values(apply_zscore(ds.values, stats), stats)
        self.rule, self.train, self.val, self.expert_test, self.test = (
            z(raw["rule"]), z(train), z(val), z(hold), z(raw["test"]))
        self.schema = schema
        self.fingerprint = fingerprint(cfg["data"])


# stage fingerprints -----------------------------------------------------------------


def _fp_diffusion(cfg):
    return fingerprint(["diffusion", cfg["data"], cfg["diffusion"]])


def _fp_pretrain(cfg, seed):
    return fingerprint(["pretrain", _fp_diffusion(cfg), cfg["pretrain"], seed])


def _fp_finetune(cfg, seed):
    return fingerprint(["finetune", _fp_pretrain(cfg, seed), cfg["finetune"], seed])


def _check_fp(meta, expected, path, stage):
    if meta.get("stage_fingerprint") != expected:
        raise DependencyError(f"{path} was produced under a different config; re-run `run {stage}`")


def load_diffusion(ws: Workspace, cfg):
    p = ws.path("diffusion", "predictor.npz")
    if not p.exists():
        raise DependencyError("no diffusion checkpoint; run `run diffusion` first")
    pred = NoisePredictor.load(p)
    meta = json.loads(ws.path("diffusion", "meta.json").read_text())
    _check_fp(meta, _fp_diffusion(cfg), p, "diffusion")
    dc = DiffusionConfig.from_json(cfg["diffusion"])
    return pred, build_schedule(dc.T, dc.beta_start, dc.beta_end), dc.view_policy


def load_encoder(ws: Workspace, cfg, seed) -> Encoder:
    p = ws.seed_dir("pretrain", seed) / "encoder.npz"
    if not p.exists():
        raise DependencyError(f"no pretrained encoder for seed {seed}; run `run pretrain` first")
    enc, meta = Encoder.load(p)
    _check_fp(meta, _fp_pretrain(cfg, seed), p, "pretrain")
    return enc


def load_finetuned(ws: Workspace, cfg, seed):
    p = ws.seed_dir("finetune", seed) / "model.npz"
    if not p.exists():
        raise DependencyError(f"no fine-tuned model for seed {seed}; run `run finetune` first")
    enc, head, meta = load_model(p)
    _check_fp(meta, _fp_finetune(cfg, seed), p, "finetune")
    return enc, head


# stages -----------------------------------------------------------------------------


def run_diffusion(ws, cfg, data: Data, seeds=None):
    t0 = time.perf_counter()
    dc = DiffusionConfig.from_json(cfg["diffusion"])
    pred, _, trace = train_diffusion(data.train, dc, log=log.debug)
    out = ws.ensure("diffusion")
    pred.save(out / "predictor.npz")
    dc.save(out / "config.json")
    (out / "meta.json").write_text(json.dumps({"stage_fingerprint": _fp_diffusion(cfg)}, indent=2) + "\n")
    write_csv(out / "loss.csv", [{"epoch": i + 1, "loss": repr(v)} for i, v in enumerate(trace)])
    log.info("diffusion: loss %.4f -> %.4f over %d epochs", trace[0] if trace else float("nan"),
             trace[-1] if trace else float("nan"), len(trace))
    ws.record("diffusion", cfg, None, [out / "predictor.npz"], [out / "loss.csv"], time.perf_counter() - t0)


def run_pretrain(ws, cfg, data: Data, seeds):
    t0 = time.perf_counter()
    pred, schedule, policy = load_diffusion(ws, cfg)
    ckpts, arts = [], []
    for seed in seeds:
        pc = PretrainConfig.from_json({**cfg["pretrain"], "seed": seed})
        enc, trace = pretrain(data.rule, pred, schedule, policy, pc, log=log.debug)
        out = ws.ensure("pretrain", f"seed{seed}")
        enc.save(out / "encoder.npz", {"stage_fingerprint": _fp_pretrain(cfg, seed), "config": pc.to_json()})
        write_trace(out / "loss.csv", trace)
        ckpts.append(out / "encoder.npz")
        arts.append(out / "loss.csv")
        log.info("pretrain seed %d: final step loss %.4f", seed, trace[-1][2] if trace else float("nan"))
    ws.record("pretrain", cfg, seeds, ckpts, arts, time.perf_counter() - t0)


def _ft_config(cfg, seed, mode=Mode.FULL):
    return FinetuneConfig.from_json({**cfg["finetune"], "seed": seed, "mode": mode.value})


def _write_curve(path, trace):
    write_csv(path, [{k: (repr(v) if isinstance(v, float) else v) for k, v in e.items()} for e in trace])


def run_finetune(ws, cfg, data: Data, seeds):
    t0 = time.perf_counter()
    encs = {s: load_encoder(ws, cfg, s) for s in seeds}
    ckpts, arts = [], []
    for seed in seeds:
        res = finetune(data.train, encs[seed], _ft_config(cfg, seed), val=data.val, log=log.debug)
        out = ws.ensure("finetune", f"seed{seed}")
        save_model(out / "model.npz", res, {"stage_fingerprint": _fp_finetune(cfg, seed),
                                            "best_epoch": res.best_epoch})
        _write_curve(out / "trace.csv", res.trace)
        write_predictions(out / "predictions.csv", data.test.sample_ids,
                          predict_proba(data.test.values, res.encoder, res.head))
        ckpts.append(out / "model.npz")
        arts += [out / "trace.csv", out / "predictions.csv"]
        log.info("finetune seed %d: best epoch %d", seed, res.best_epoch)
    ws.record("finetune", cfg, seeds, ckpts, arts, time.perf_counter() - t0)


def run_ablation(ws, cfg, data: Data, seeds):
    t0 = time.perf_counter()
    arts = []
    for seed in seeds:
        pre = load_encoder(ws, cfg, seed)
        ab = AblationData(data.train, data.val, data.rule, pre)
        out = ws.ensure("ablation", f"seed{seed}")
        results = {}
        for v in VARIANTS:
            if v == Ablation.DKROOT_FULL.value:
                # identical computation to the finetune stage, so reuse its checkpoint
                enc, head = load_finetuned(ws, cfg, seed)
            else:
                res = train_ablation(v, ab, _ft_config(cfg, seed), log=log.debug)
                enc, head = res.encoder, res.head
                _write_curve(out / f"{v}_trace.csv", res.trace)
            results[v] = {
                "test_accuracy": accuracy(predict(data.test.values, enc, head), data.test.labels),
                "expert_test_accuracy": accuracy(predict(data.expert_test.values, enc, head),
                                                 data.expert_test.labels),
            }
            log.info("ablation seed %d %-12s test acc %.4f", seed, v, results[v]["test_accuracy"])
        write_json(out / "results.json", results)
        arts.append(out / "results.json")
    ws.record("ablation", cfg, seeds, [], arts, time.perf_counter() - t0)


# evaluation -------------------------------------------------------------------------


def _report(x, labels) -> dict:
    return MetricsReport.from_cloud(PointCloud(x, labels)).to_json()


def _separation(x, labels) -> dict:
    c = PointCloud(x, labels)
    return {"silhouette": silhouette(c), "calinski_harabasz": calinski_harabasz(c),
            "davies_bouldin": davies_bouldin(c)}


def augmentation_battery(data: Data, pred, schedule, policy, encoder=None, seed=0) -> dict:
    """Metrics of original, diffusion weak/strong, noise-injection and scaling views of the test pool."""
    x, y = data.test.values, data.test.labels
    g = np.random.default_rng([seed, 21])
    weak, strong = augment_pair(x, y, policy, pred, schedule, g)
    views = {
        "original": x,
        "dkroot_weak": weak,
        "dkroot_strong": strong,
        "noise_injection": classical_augment("noise_injection", x, {"ratio": 0.1}, g),
        "scaling": classical_augment("scaling", x, {"sigma": 1.1}, g),
    }
    out = {"raw": {k: _report(v, y) for k, v in views.items()}}
    if encoder is not None:
        out["embedding"] = {k: _report(embed(v, encoder), y) for k, v in views.items()}
    return out


def view_audit(data: Data, pred, schedule, policy, n, seed=0) -> dict:
    x, y = data.test.values[:n], data.test.labels[:n]
    g = np.random.default_rng([seed, 22])
    weak, strong, info = augment_pair(x, y, policy, pred, schedule, g, return_info=True)
    summary = l2_view_audit(x, info["weak_noised"], weak, info["strong_noised"], strong)
    d = lambda a: np.sqrt(((a - x) ** 2).reshape(len(x), -1).sum(1))
    summary["paired_strong_gt_weak_denoise"] = float(np.mean(d(strong) > d(weak)))
    summary["n"] = int(len(x))
    return summary


def run_evaluate(ws, cfg, data: Data, seeds):
    t0 = time.perf_counter()
    pred, schedule, policy = load_diffusion(ws, cfg)
    ev = cfg["evaluate"]
    first = seeds[0]
    enc0 = load_encoder(ws, cfg, first)
    metrics = {
        "config_fingerprint": fingerprint(cfg),
        "seeds": list(seeds),
        "augmentation": augmentation_battery(data, pred, schedule, policy, enc0, seed=first),
        "l2_audit": view_audit(data, pred, schedule, policy, min(ev["audit_samples"], len(data.test)), first),
    }
    per_seed, progress = {v: [] for v in VARIANTS}, []
    for seed in seeds:
        p = ws.seed_dir("ablation", seed) / "results.json"
        if not p.exists():
            raise DependencyError(f"no ablation results for seed {seed}; run `run ablation` first")
        res = json.loads(p.read_text())
        for v in VARIANTS:
            per_seed[v].append(res[v])
        enc_pre = load_encoder(ws, cfg, seed)
        enc_ft, _ = load_finetuned(ws, cfg, seed)
        progress.append({"seed": seed,
                         "post_pretrain": _separation(embed(data.test.values, enc_pre), data.test.labels),
                         "post_finetune": _separation(embed(data.test.values, enc_ft), data.test.labels)})
    table = {}
    for v in VARIANTS:
        acc = [r["test_accuracy"] for r in per_seed[v]]
        exp = [r["expert_test_accuracy"] for r in per_seed[v]]
        m, s = mean_std(acc)
        em, es = mean_std(exp)
        table[v] = {"per_seed": acc, "mean": m, "std": s, "expert_test_mean": em, "expert_test_std": es}
    metrics["ablation"] = table
    metrics["embedding_progress"] = progress
    metrics["knn_baselines"] = knn_baselines(data, ev["knn_window"])
    out = ws.ensure("evaluate")
    write_json(out / "metrics.json", metrics)
    _export_tables(out, metrics)
    ws.record("evaluate", cfg, seeds, [], sorted(str(p) for p in out.iterdir()), time.perf_counter() - t0)
    return metrics


def knn_baselines(data: Data, window) -> dict:
    tx, ty = data.train.values, data.train.labels
    out = {}
    for kind in ("stat", "sliding"):
        pred = knn_baseline(kind, tx, ty, data.test.values, k=1, window=min(window, data.test.l))
        out[kind] = accuracy(pred, data.test.labels)
    return out


def _export_tables(out: Path, metrics: dict):
    rows = []
    for space, views in metrics["augmentation"].items():
        for view, rep in views.items():
            row = {"feature_space": space, "view": view}
            row.update({k: v for k, v in rep.items() if k != "per_class_intra_variance"})
            row.update({f"intra_var_class{c}": v for c, v in rep["per_class_intra_variance"].items()})
            rows.append(row)
    write_csv(out / "augmentation_metrics.csv", rows)
    audit = metrics["l2_audit"]
    write_csv(out / "l2_audit.csv", [{"condition": c, "mean": audit[c]["mean"], "std": audit[c]["std"]}
                                     for c in ("weak_noise", "weak_denoise", "strong_noise", "strong_denoise")])
    write_csv(out / "ablation.csv", [{"variant": v, "mean": r["mean"], "std": r["std"],
                                      **{f"seed{s}": a for s, a in zip(metrics["seeds"], r["per_seed"])}}
                                     for v, r in metrics["ablation"].items()])
    write_csv(out / "embedding_progress.csv", [
        {"seed": p["seed"], "stage": stage, **p[stage]}
        for p in metrics["embedding_progress"] for stage in ("post_pretrain", "post_finetune")])


RUNNERS = {"diffusion": run_diffusion, "pretrain": run_pretrain, "finetune": run_finetune,
           "ablation": run_ablation, "evaluate": run_evaluate}


def run_stage(ws: Workspace, cfg: dict, stage: str, seeds) -> None:
    stages = STAGES if stage == "all" else (stage,)
    if any(s not in RUNNERS for s in stages):
        raise ConfigError(f"unknown stage {stage!r}")
    # the data section is fixed when the pools are generated
    stored = ws.path("data", "data_config.json")
    if stored.exists():
        cfg["data"] = json.loads(stored.read_text())
    data = Data(ws, cfg)
    for s in stages:
        log.info("stage %s, seeds %s", s, list(seeds))
        RUNNERS[s](ws, cfg, data, list(seeds))


# report -----------------------------------------------------------------------------


def format_report(metrics: dict) -> str:
    lines = [f"seeds: {metrics['seeds']}", "", "test accuracy (mean +- population std over seeds)"]
    for v, r in metrics["ablation"].items():
        lines.append(f"  {v:12s} {r['mean']:.4f} +- {r['std']:.4f}   held-out expert {r['expert_test_mean']:.4f}")
    lines.append("  knn baselines: " + ", ".join(f"{k} {v:.4f}" for k, v in metrics["knn_baselines"].items()))
    lines += ["", "augmentation metrics (raw z-scored features)",
              f"  {'view':16s} {'inter':>8s} {'sil':>8s} {'CH':>10s} {'DB':>8s} {'MI':>8s}"]
    for view, rep in metrics["augmentation"]["raw"].items():
        lines.append(f"  {view:16s} {_num(rep['avg_interclass_distance']):>8s} {_num(rep['silhouette']):>8s} "
                     f"{_num(rep['calinski_harabasz']):>10s} {_num(rep['davies_bouldin']):>8s} "
                     f"{_num(rep['mutual_information_nats']):>8s}")
    a = metrics["l2_audit"]
    lines += ["", "L2 distance to the original (mean +- std)"]
    for c in ("weak_noise", "weak_denoise", "strong_noise", "strong_denoise"):
        lines.append(f"  {c:15s} {a[c]['mean']:.3f} +- {a[c]['std']:.3f}")
    lines.append(f"  strong denoise further than weak in {100 * a['paired_strong_gt_weak_denoise']:.1f}% of pairs")
    lines += ["", "test-pool embedding separation, post-pretrain -> post-finetune"]
    for p in metrics["embedding_progress"]:
        a, b = p["post_pretrain"], p["post_finetune"]
        lines.append(f"  seed {p['seed']}: silhouette {a['silhouette']:.4f} -> {b['silhouette']:.4f}, "
                     f"CH {_num(a['calinski_harabasz'])} -> {_num(b['calinski_harabasz'])}, "
                     f"DB {_num(a['davies_bouldin'])} -> {_num(b['davies_bouldin'])}")
    return "\n".join(lines)


def _num(v):
    return v if isinstance(v, str) else f"{v:.4f}" if abs(v) < 1e4 else f"{v:.1f}"


def read_metrics(ws: Workspace) -> dict:
    p = ws.path("evaluate", "metrics.json")
    if not p.exists():
        raise DependencyError("no metrics yet; run `run evaluate` first")
    return json.loads(p.read_text())
