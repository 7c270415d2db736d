"""Synthetic degraded-session generator for the six root causes.

Every sample is a high-latency session: a smooth per-sample baseline on every
KPI, then one degradation episode (ramp up, plateau, ramp down) carrying the
class signature. Signatures have two parts:

* primary symptoms drive the KPIs that the default ruleset inspects. At full
  strength they cross the rule thresholds; the plateau level is an override,
  so crossing is decided by the drawn strength alone.
* secondary symptoms shift KPIs no rule looks at. They scale with severity
  and are what a learned model can use beyond the rules.

Below full severity two things corrupt the rule label without touching the
true class: the key primary KPIs may stay under threshold (masking), and the
pair-partner class (1<->2, 3<->4, 5<->6) may show its rule symptoms without its
secondary signature (co-occurrence). Rules fire in ascending class order, so
co-occurrence flips even classes to their odd partner while odd classes only
flip when masked.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import DEFAULT_LENGTH, KpiSample, LabeledDataset, LabelSource
from .rules import RuleSet, default_ruleset, label_many
from .schema import N_CLASSES, KpiSchema, RootCause, default_schema

# Rule thresholds sit at this fraction of the way from normal to extreme.
THRESHOLD_STRENGTH = 0.7
CROSS_STRENGTH = (0.8, 1.0)
MASKED_STRENGTH = (0.35, 0.6)
PRIMARY_JITTER = 0.02

MASK_PROB = 0.08
COOCCUR_PROB = 0.28
# co-occurrence probability ramps from 0 at severity 1 to COOCCUR_PROB at 1 - COOCCUR_RAMP
COOCCUR_RAMP = 0.05
# secondary shifts in units of the KPI's between-sample sd, at severity 1
SECONDARY_SCALE = 2.0

PARTNER = {1: 2, 2: 1, 3: 4, 4: 3, 5: 6, 6: 5}

# name: (normal, between-sample sd, fluctuation sd, lo, hi)
PROFILES = {
    "UL_DMRS_SINR": (12.0, 2.0, 1.0, 6.0, 22.0),
    "UL_WB_PRE_SINR": (8.0, 1.5, 0.8, 3.0, 16.0),
    "UL_SRS_RSRP": (-100.0, 4.0, 1.5, -115.0, -80.0),
    "UL_DMRS_RSRP_AVG": (-95.0, 4.0, 1.5, -110.0, -75.0),
    "SS_SINR": (10.0, 2.0, 1.0, 5.0, 22.0),
    "RSRP_DIFF_NEIGH_CNT": (0.5, 0.3, 0.3, 0.0, 1.8),
    "TOP1_NEIGH_SSB_RSRP": (-100.0, 4.0, 1.5, -120.0, -80.0),
    "SERV_SSB_RSRP": (-88.0, 5.0, 1.5, -105.0, -65.0),
    "SERV_SSB_RSRQ": (-10.0, 1.2, 0.6, -15.0, -5.0),
    "CQI_AVG_CW0": (10.0, 1.0, 0.6, 7.5, 15.0),
    "DL_PRB_UTIL": (0.5, 0.08, 0.05, 0.1, 0.8),
    "UL_PRB_UTIL": (0.4, 0.08, 0.05, 0.05, 0.7),
    "DL_CCE_FAIL_RATE": (0.01, 0.004, 0.004, 0.0, 0.05),
    "UL_CCE_FAIL_RATE": (0.01, 0.004, 0.004, 0.0, 0.05),
    "CCE_UTIL_RATE": (0.4, 0.07, 0.05, 0.1, 0.72),
    "DL_CCE_USAGE_RATIO": (0.55, 0.05, 0.03, 0.3, 0.8),
    "COMMON_CCE_USAGE": (0.15, 0.03, 0.02, 0.0, 0.4),
    "UL_CCE_USAGE_RATIO": (0.45, 0.05, 0.03, 0.2, 0.7),
    "UL_SCHED_FAIL_RATE_CCE": (0.01, 0.004, 0.004, 0.0, 0.05),
    "UL_SCHED_FAIL_CNT_CCE": (2.0, 1.0, 1.0, 0.0, 10.0),
    "DL_SCHED_FAIL_RATE_CCE": (0.01, 0.004, 0.004, 0.0, 0.05),
    "DL_SCHED_FAIL_CNT_CCE": (2.0, 1.0, 1.0, 0.0, 10.0),
    "DL_CCE_FAIL_CNT_TOTAL": (3.0, 1.5, 1.0, 0.0, 15.0),
    "DL_CCE_FAIL_RATE_TOTAL": (0.01, 0.004, 0.004, 0.0, 0.05),
    "DL_CCE_FAIL_CNT_QUOTA": (1.0, 0.5, 0.5, 0.0, 6.0),
    "DL_CCE_FAIL_CNT_CONFLICT": (1.0, 0.5, 0.5, 0.0, 6.0),
    "UL_CCE_FAIL_CNT_TOTAL": (3.0, 1.5, 1.0, 0.0, 15.0),
    "UL_CCE_FAIL_RATE_TOTAL": (0.01, 0.004, 0.004, 0.0, 0.05),
    "UL_CCE_FAIL_CNT_CONFLICT": (1.0, 0.5, 0.5, 0.0, 6.0),
    "DL_RLC_TPUT": (20.0, 5.0, 2.0, 2.0, 50.0),
    "DL_RLC_LASTTTI_RATIO": (0.3, 0.06, 0.04, 0.05, 0.6),
    "UL_RLC_TPUT": (5.0, 1.5, 0.6, 0.5, 15.0),
    "UL_RLC_SMALLPKT_RATIO": (0.3, 0.06, 0.04, 0.05, 0.6),
    "PDCP_DL_TPUT": (22.0, 5.0, 2.0, 2.0, 55.0),
    "PDCP_DL_LATENCY": (40.0, 8.0, 5.0, 10.0, 120.0),
    "PDCP_UL_TPUT": (5.5, 1.5, 0.6, 0.5, 16.0),
    "PDCP_UL_LATENCY": (40.0, 8.0, 5.0, 10.0, 120.0),
    "RLC_UL_LATENCY": (30.0, 6.0, 4.0, 5.0, 100.0),
    "RLC_DL_LATENCY": (30.0, 6.0, 4.0, 5.0, 100.0),
    "UL_RLC_RETX_SDU": (6.0, 2.0, 1.0, 0.0, 10.0),
    "UL_RLC_SDU": (200.0, 30.0, 10.0, 120.0, 320.0),
    "UL_RBLER": (0.03, 0.01, 0.006, 0.0, 0.07),
    "DL_RBLER": (0.03, 0.01, 0.006, 0.0, 0.07),
    "UL_DTX_Ratio": (0.05, 0.015, 0.01, 0.0, 0.12),
    "UL_MAC_HARQ_RETX_MAX": (10.0, 3.0, 2.0, 0.0, 30.0),
    "DL_MAC_HARQ_RETX_MAX": (10.0, 3.0, 2.0, 0.0, 30.0),
    "UL_DMRS_RSRP_MIN": (-105.0, 4.0, 1.5, -118.0, -85.0),
}


def _extreme(normal, threshold):
    return normal + (threshold - normal) / THRESHOLD_STRENGTH


# Primary symptoms: (kpi, threshold it must cross, key?). Key symptoms are the
# ones masking holds below threshold; support symptoms always cross.
PRIMARY = {
    1: [("UL_DMRS_SINR", 0.0, True), ("UL_WB_PRE_SINR", -3.0, True)],
    2: [
        ("UL_DMRS_RSRP_MIN", -125.0, True),
        ("UL_SRS_RSRP", -130.0, True),
        ("UL_RBLER", 0.1, False),
        ("UL_MAC_HARQ_RETX_MAX", 50.0, False),
        ("UL_DTX_Ratio", 0.2, False),
    ],
    3: [("SS_SINR", 0.0, True), ("RSRP_DIFF_NEIGH_CNT", 3.0, False)],
    4: [("SERV_SSB_RSRP", -115.0, True), ("CQI_AVG_CW0", 5.0, False)],
    5: [("DL_PRB_UTIL", 0.9, True), ("UL_PRB_UTIL", 0.9, True)],
    6: [
        ("CCE_UTIL_RATE", 0.85, True),
        ("DL_CCE_FAIL_RATE", 0.1, False),
        ("UL_SCHED_FAIL_RATE_CCE", 0.1, False),
    ],
}
# Retransmission share for class 2 (rule compares RETX/SDU against 0.1).
RETX_RATIO = (0.03, 0.1)

# Secondary symptoms: (kpi, shift at severity 1 in units of the KPI's between-sample sd).
SECONDARY = {
    1: [("UL_RLC_TPUT", -1.6), ("PDCP_UL_TPUT", -1.4), ("UL_RLC_SMALLPKT_RATIO", 1.5), ("UL_CCE_USAGE_RATIO", 1.2)],
    2: [("UL_DMRS_RSRP_AVG", -2.0), ("UL_DMRS_SINR", -0.8), ("UL_RLC_TPUT", -1.2), ("UL_PRB_UTIL", 1.4)],
    3: [("TOP1_NEIGH_SSB_RSRP", 1.8), ("SERV_SSB_RSRQ", -1.8), ("DL_RLC_TPUT", -1.2), ("DL_RLC_LASTTTI_RATIO", 1.4)],
    4: [("TOP1_NEIGH_SSB_RSRP", -1.8), ("SS_SINR", -1.4), ("SERV_SSB_RSRQ", -1.2), ("PDCP_DL_TPUT", -1.5)],
    5: [("PDCP_DL_TPUT", 1.5), ("DL_RLC_LASTTTI_RATIO", -1.4), ("COMMON_CCE_USAGE", -1.0), ("DL_RLC_TPUT", 1.3)],
    6: [("DL_CCE_FAIL_CNT_TOTAL", 2.0), ("UL_CCE_FAIL_CNT_TOTAL", 1.8), ("COMMON_CCE_USAGE", 1.6), ("DL_SCHED_FAIL_CNT_CCE", 1.6)],
}
# Which latency direction spikes for each class.
LATENCY = {
    1: ("PDCP_UL_LATENCY", "RLC_UL_LATENCY"),
    2: ("PDCP_UL_LATENCY", "RLC_UL_LATENCY"),
    3: ("PDCP_DL_LATENCY", "RLC_DL_LATENCY"),
    4: ("PDCP_DL_LATENCY", "RLC_DL_LATENCY"),
    5: ("PDCP_DL_LATENCY", "RLC_DL_LATENCY", "PDCP_UL_LATENCY", "RLC_UL_LATENCY"),
    6: ("PDCP_DL_LATENCY", "RLC_DL_LATENCY", "PDCP_UL_LATENCY", "RLC_UL_LATENCY"),
}
LATENCY_PEAK = (215.0, 400.0)
RATIO_CAPPED = {"DL_PRB_UTIL", "UL_PRB_UTIL", "CCE_UTIL_RATE"}


def required_kpis() -> set[str]:
    names = set(PROFILES)
    return names


@dataclass(frozen=True)
class ScenarioConfig:
    class_id: int
    n_samples: int
    seed: int = 0
    severity: float = 1.0
    l: int = DEFAULT_LENGTH

    def validate(self):
        RootCause.from_id(self.class_id)
        if int(self.n_samples) < 1:
            raise ValueError("n_samples ≥ 1 required")
        if not 0.0 <= float(self.severity) <= 1.0:
            raise ValueError("severity must lie in [0, 1]")
        if int(self.l) < 16:
            raise ValueError("sequence length l must be at least 16")


def _ar1(rng, n, l, phi=0.85):
    e = rng.standard_normal((n, l))
    out = np.empty((n, l))
    out[:, 0] = e[:, 0]
    c = np.sqrt(1 - phi**2)
    for t in range(1, l):
        out[:, t] = phi * out[:, t - 1] + c * e[:, t]
    return out


def _envelope(rng, l):
    plateau = int(rng.integers(6, 13))
    up, down = 2, 3
    onset = int(rng.integers(2, l - plateau - up - down - 1))
    env = np.zeros(l)
    env[onset:onset + up] = np.linspace(0.0, 1.0, up + 2)[1:-1]
    env[onset + up:onset + up + plateau] = 1.0
    env[onset + up + plateau:onset + up + plateau + down] = np.linspace(1.0, 0.0, down + 2)[1:-1]
    return env


def _generate_one(rng, class_id, severity, l, schema: KpiSchema):
    idx = {n: i for i, n in enumerate(schema.names)}
    m = schema.m
    x = np.empty((m, l))
    fl = _ar1(rng, m, l)
    for name, i in idx.items():
        normal, between, fluct, lo, hi = PROFILES.get(name, (0.0, 1.0, 0.5, -np.inf, np.inf))
        base = normal + between * rng.standard_normal() + fluct * fl[i]
        x[i] = np.clip(base, lo, hi)

    env = _envelope(rng, l)

    masked = rng.random() < MASK_PROB * np.clip((0.8 - severity) / 0.3, 0.0, 1.0)
    cooccur = rng.random() < COOCCUR_PROB * min(1.0, (1.0 - severity) / COOCCUR_RAMP)

    def override(name, level, jitter_scale):
        i = idx[name]
        jit = rng.uniform(-1.0, 1.0, l) * jitter_scale
        x[i] = (1.0 - env) * x[i] + env * (level + jit)

    def plant_primary(c, key_masked):
        for name, thr, key in PRIMARY[c]:
            normal = PROFILES[name][0]
            ext = _extreme(normal, thr)
            lo_s, hi_s = MASKED_STRENGTH if (key and key_masked) else CROSS_STRENGTH
            s = rng.uniform(lo_s, hi_s)
            level = normal + s * (ext - normal)
            if name in RATIO_CAPPED:
                level = min(level, 0.99)
            override(name, level, PRIMARY_JITTER * abs(ext - normal))
        if c == 2:
            r_ext = _extreme(*RETX_RATIO)
            s = rng.uniform(*CROSS_STRENGTH)
            ratio = RETX_RATIO[0] + s * (r_ext - RETX_RATIO[0])
            sdu = idx["UL_RLC_SDU"]
            override("UL_RLC_RETX_SDU", 0.0, 0.0)
            # retx follows the SDU count so the per-timestep ratio hits the target on the plateau
            x[idx["UL_RLC_RETX_SDU"]] += env * ratio * x[sdu]
            x[idx["UL_RLC_RETX_SDU"]] = np.maximum(x[idx["UL_RLC_RETX_SDU"]], 0.0)

    plant_primary(class_id, masked)
    if cooccur:
        plant_primary(PARTNER[class_id], False)

    for name, shift in SECONDARY[class_id]:
        between = PROFILES[name][1]
        x[idx[name]] += env * severity * SECONDARY_SCALE * shift * between * rng.uniform(0.7, 1.3)

    peak = rng.uniform(*LATENCY_PEAK)
    for name in LATENCY[class_id]:
        level = peak * rng.uniform(0.95, 1.05) if name.startswith("PDCP") else 0.9 * peak
        override(name, max(level, 205.0), 3.0)
    return x, {"masked": bool(masked), "cooccur": bool(cooccur)}


def _check_schema(schema, ruleset):
    missing = sorted(required_kpis() - set(schema.names))
    if missing:
        raise ValueError(f"schema missing a required channel: {missing}")
    if ruleset is not None:
        ruleset.check_schema(schema)


def _sample_rng(seed, class_id, index, stream=0):
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), int(stream), int(class_id), int(index)]))


def synth_generate(config: ScenarioConfig, schema: KpiSchema | None = None, ruleset: RuleSet | None = None):
    """Generate ``config.n_samples`` samples of one class at fixed severity."""
    config.validate()
    schema = schema or default_schema()
    _check_schema(schema, ruleset if ruleset is not None else default_ruleset())
    out = []
    for k in range(int(config.n_samples)):
        rng = _sample_rng(config.seed, config.class_id, k)
        x, _ = _generate_one(rng, int(config.class_id), float(config.severity), int(config.l), schema)
        out.append(KpiSample(x, f"c{config.class_id}-s{config.seed}-{k}", schema))
    return out


def generate_pool(n, seed, schema=None, severity_range=(0.5, 1.0), l=DEFAULT_LENGTH, stream=0, prefix="x"):
    """Balanced pool with per-sample severity ~ U(severity_range).

    Returns (values, true_labels, info) where ``info`` holds severities and the
    masking/co-occurrence flags.
    """
    schema = schema or default_schema()
    _check_schema(schema, None)
    values = np.empty((n, schema.m, l))
    labels = np.empty(n, dtype=np.int64)
    sev = np.empty(n)
    masked = np.zeros(n, dtype=bool)
    cooc = np.zeros(n, dtype=bool)
    for k in range(n):
        c = k % N_CLASSES + 1
        rng = _sample_rng(seed, 0, k, stream)
        s = rng.uniform(*severity_range)
        values[k], flags = _generate_one(rng, c, s, l, schema)
        labels[k], sev[k] = c, s
        masked[k], cooc[k] = flags["masked"], flags["cooccur"]
    ids = [f"{prefix}{k:05d}" for k in range(n)]
    return values, labels, {"severity": sev, "masked": masked, "cooccur": cooc, "ids": ids}


def make_rule_pool(n, seed, schema=None, ruleset=None, l=DEFAULT_LENGTH) -> LabeledDataset:
    """Draw sessions until ``n`` carry a rule label; labels come from the ruleset, not the generator.

    The generator's true class is kept in ``meta['true_labels']`` for diagnostics only.
    """
    schema = schema or default_schema()
    ruleset = ruleset or default_ruleset()
    _check_schema(schema, ruleset)
    vals, rule_y, true_y, ids = [], [], [], []
    batch = max(64, n // 4)
    drawn = 0
    while len(rule_y) < n:
        v, y, info = generate_pool(batch, seed, schema, l=l, stream=1 + drawn // batch, prefix="r")
        r = label_many(v, ruleset, schema)
        for k in np.flatnonzero(r > 0):
            if len(rule_y) == n:
                break
            vals.append(v[k])
            rule_y.append(r[k])
            true_y.append(y[k])
            ids.append(f"r{len(ids):05d}")
        drawn += batch
    ds = LabeledDataset(np.array(vals), rule_y, [LabelSource.RULE] * n, ids, schema)
    ds.meta["true_labels"] = np.array(true_y)
    return ds


def make_expert_pool(n, seed, schema=None, l=DEFAULT_LENGTH, prefix="e", stream=1000) -> LabeledDataset:
    """Expert pool: generator ground truth as labels, balanced over classes."""
    v, y, info = generate_pool(n, seed, schema, l=l, stream=stream, prefix=prefix)
    ds = LabeledDataset(v, y, [LabelSource.EXPERT] * n, info["ids"], schema or default_schema())
    ds.meta["true_labels"] = y.copy()
    return ds
