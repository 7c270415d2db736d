"""KPI channel schema and the root-cause label space."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path


class Layer(str, enum.Enum):
    PHY = "PHY"
    MAC = "MAC"
    RLC = "RLC"
    PDCP = "PDCP"


@dataclass(frozen=True)
class KpiDescriptor:
    name: str
    layer: Layer
    unit: str = ""

    def __post_init__(self):
        object.__setattr__(self, "layer", Layer(self.layer))


# KPIs referenced by the uplink-weak-coverage labeling rule.
RULE_KPIS = [
    ("PDCP_UL_LATENCY", "PDCP", "ms"),
    ("PDCP_DL_LATENCY", "PDCP", "ms"),
    ("RLC_UL_LATENCY", "RLC", "ms"),
    ("RLC_DL_LATENCY", "RLC", "ms"),
    ("UL_RLC_RETX_SDU", "RLC", "count"),
    ("UL_RLC_SDU", "RLC", "count"),
    ("UL_RBLER", "PHY", "ratio"),
    ("DL_RBLER", "PHY", "ratio"),
    ("UL_DTX_Ratio", "MAC", "ratio"),
    ("UL_MAC_HARQ_RETX_MAX", "MAC", "count"),
    ("DL_MAC_HARQ_RETX_MAX", "MAC", "count"),
    ("UL_DMRS_RSRP_MIN", "PHY", "dBm"),
    ("UL_SRS_RSRP", "PHY", "dBm"),
]

# Full model input list with protocol-layer mapping.
INPUT_KPIS = [
    ("UL_DMRS_SINR", "PHY", "dB"),
    ("UL_WB_PRE_SINR", "PHY", "dB"),
    ("UL_SRS_RSRP", "PHY", "dBm"),
    ("UL_DMRS_RSRP_AVG", "PHY", "dBm"),
    ("SS_SINR", "PHY", "dB"),
    ("RSRP_DIFF_NEIGH_CNT", "PHY", "count"),
    ("TOP1_NEIGH_SSB_RSRP", "PHY", "dBm"),
    ("SERV_SSB_RSRP", "PHY", "dBm"),
    ("SERV_SSB_RSRQ", "PHY", "dB"),
    ("CQI_AVG_CW0", "PHY", "index"),
    ("DL_PRB_UTIL", "MAC", "ratio"),
    ("UL_PRB_UTIL", "MAC", "ratio"),
    ("DL_CCE_FAIL_RATE", "MAC", "ratio"),
    ("UL_CCE_FAIL_RATE", "MAC", "ratio"),
    ("CCE_UTIL_RATE", "MAC", "ratio"),
    ("DL_CCE_USAGE_RATIO", "MAC", "ratio"),
    ("COMMON_CCE_USAGE", "MAC", "ratio"),
    ("UL_CCE_USAGE_RATIO", "MAC", "ratio"),
    ("UL_SCHED_FAIL_RATE_CCE", "MAC", "ratio"),
    ("UL_SCHED_FAIL_CNT_CCE", "MAC", "count"),
    ("DL_SCHED_FAIL_RATE_CCE", "MAC", "ratio"),
    ("DL_SCHED_FAIL_CNT_CCE", "MAC", "count"),
    ("DL_CCE_FAIL_CNT_TOTAL", "MAC", "count"),
    ("DL_CCE_FAIL_RATE_TOTAL", "MAC", "ratio"),
    ("DL_CCE_FAIL_CNT_QUOTA", "MAC", "count"),
    ("DL_CCE_FAIL_CNT_CONFLICT", "MAC", "count"),
    ("UL_CCE_FAIL_CNT_TOTAL", "MAC", "count"),
    ("UL_CCE_FAIL_RATE_TOTAL", "MAC", "ratio"),
    ("UL_CCE_FAIL_CNT_CONFLICT", "MAC", "count"),
    ("DL_RLC_TPUT", "RLC", "Mbit"),
    ("DL_RLC_LASTTTI_RATIO", "RLC", "ratio"),
    ("UL_RLC_TPUT", "RLC", "Mbit"),
    ("UL_RLC_SMALLPKT_RATIO", "RLC", "ratio"),
    ("PDCP_DL_TPUT", "PDCP", "Mbit"),
    ("PDCP_DL_LATENCY", "PDCP", "ms"),
    ("PDCP_UL_TPUT", "PDCP", "Mbit"),
    ("PDCP_UL_LATENCY", "PDCP", "ms"),
]


class KpiSchema:
    """Ordered, name-unique list of KPI channels."""

    def __init__(self, descriptors):
        descriptors = [d if isinstance(d, KpiDescriptor) else KpiDescriptor(**d) for d in descriptors]
        names = [d.name for d in descriptors]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"duplicate KPI names in schema: {dup}")
        if not descriptors:
            raise ValueError("schema must contain at least one KPI")
        self.descriptors = tuple(descriptors)
        self._index = {n: i for i, n in enumerate(names)}

    @property
    def m(self) -> int:
        return len(self.descriptors)

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.descriptors]

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"KPI {name!r} not in schema") from None

    def __contains__(self, name) -> bool:
        return name in self._index

    def __eq__(self, other):
        return isinstance(other, KpiSchema) and self.descriptors == other.descriptors

    def __hash__(self):
        return hash(self.descriptors)

    def __repr__(self):
        return f"KpiSchema(m={self.m})"

    def fingerprint(self) -> str:
        import hashlib

        payload = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]

    def to_json(self) -> list[dict]:
        return [{"name": d.name, "layer": d.layer.value, "unit": d.unit} for d in self.descriptors]

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path) -> "KpiSchema":
        raw = json.loads(Path(path).read_text())
        if not isinstance(raw, list):
            raise ValueError("schema file must hold a JSON list of {name, layer, unit}")
        return cls(KpiDescriptor(r["name"], r["layer"], r.get("unit", "")) for r in raw)


def default_schema() -> KpiSchema:
    """Union of the input-KPI table and the rule-KPI table, first occurrence wins."""
    seen = {}
    for name, layer, unit in INPUT_KPIS + RULE_KPIS:
        seen.setdefault(name, KpiDescriptor(name, layer, unit))
    return KpiSchema(seen.values())


ROOT_CAUSES = {
    1: "Uplink Interference",
    2: "Uplink Weak Coverage",
    3: "Downlink Interference",
    4: "Downlink Weak Coverage",
    5: "Traffic Channel Overload",
    6: "Control Channel Overload",
}
N_CLASSES = len(ROOT_CAUSES)


class RootCause(int, enum.Enum):
    UPLINK_INTERFERENCE = 1
    UPLINK_WEAK_COVERAGE = 2
    DOWNLINK_INTERFERENCE = 3
    DOWNLINK_WEAK_COVERAGE = 4
    TRAFFIC_CHANNEL_OVERLOAD = 5
    CONTROL_CHANNEL_OVERLOAD = 6

    @property
    def label(self) -> str:
        return ROOT_CAUSES[self.value]

    @classmethod
    def from_id(cls, class_id) -> "RootCause":
        try:
            return cls(int(class_id))
        except (ValueError, TypeError):
            raise ValueError(f"unknown class id {class_id!r}; expected 1..{N_CLASSES}") from None

    @classmethod
    def from_name(cls, name: str) -> "RootCause":
        for k, v in ROOT_CAUSES.items():
            if v == name:
                return cls(k)
        raise ValueError(f"unknown root cause {name!r}")
