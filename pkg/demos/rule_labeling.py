"""How the rule engine labels a KPI window, condition by condition.

    python3 demos/rule_labeling.py
"""

import numpy as np

from dkroot.rules import default_ruleset, rule_label
from dkroot.schema import default_schema
from dkroot.synth import PROFILES

schema = default_schema()
rules = default_ruleset()

# every KPI at its normal level, then plant an uplink coverage problem
x = np.array([[PROFILES[n][0]] * 40 for n in schema.names], dtype=float)
for name, level in dict(PDCP_UL_LATENCY=250.0, RLC_UL_LATENCY=210.0, UL_RLC_SDU=100.0,
                        UL_RLC_RETX_SDU=20.0, UL_RBLER=0.15, UL_DMRS_RSRP_MIN=-130.0).items():
    x[schema.index(name)] = level

rule = rules.rule_for(2)
for i, group in enumerate(rule.groups, 1):
    parts = []
    for c in group:
        what = c.kpi or f"{c.ratio_of[0]}/({c.ratio_of[1]}+{c.epsilon:g})"
        parts.append(f"{what} {c.effective_reduction}={c.reduce(x, schema):.4g} {c.comparator} {c.threshold:g}"
                     f" -> {c.holds(x, schema)}")
    print(f"condition {i}:\n  " + "\n  ".join(parts))
print("label:", rule_label(x, rules, schema))

# raise the RSRP above both thresholds and the rule no longer fires
x[schema.index("UL_DMRS_RSRP_MIN")] = -120.0
x[schema.index("UL_SRS_RSRP")] = -125.0
print("label with healthy RSRP:", rule_label(x, rules, schema))
