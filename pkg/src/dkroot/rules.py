"""Threshold rules that assign weak (rule-based) root-cause labels.

A ruleset is a list of rules in ascending class-id order. Each rule is an
AND over condition groups; a group is either a single condition or an
``any_of`` list whose members are OR-ed. Conditions reduce a KPI (or a
per-timestep KPI ratio) over the window and compare it to a threshold.
"""

from __future__ import annotations

import json
import operator
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .schema import KpiSchema, RootCause

COMPARATORS = {"ge": operator.ge, "le": operator.le, "gt": operator.gt, "lt": operator.lt}
REDUCTIONS = {"max": np.max, "min": np.min, "mean": np.mean}


class RuleError(ValueError):
    pass


@dataclass(frozen=True)
class Condition:
    comparator: str
    threshold: float
    kpi: str | None = None
    ratio_of: tuple[str, str] | None = None
    epsilon: float = 0.0
    reduction: str | None = None

    def __post_init__(self):
        if self.comparator not in COMPARATORS:
            raise RuleError(f"unknown comparator {self.comparator!r}")
        if (self.kpi is None) == (self.ratio_of is None):
            raise RuleError("condition needs exactly one of 'kpi' or 'ratio_of'")
        if self.reduction is not None and self.reduction not in REDUCTIONS:
            raise RuleError(f"unknown reduction {self.reduction!r}")

    @property
    def kpis(self) -> tuple[str, ...]:
        return (self.kpi,) if self.kpi is not None else tuple(self.ratio_of)

    @property
    def effective_reduction(self) -> str:
        # "any timestep crosses": max for upper thresholds, min for lower ones
        if self.reduction is not None:
            return self.reduction
        return "max" if self.comparator in ("ge", "gt") else "min"

    def series(self, values: np.ndarray, schema: KpiSchema) -> np.ndarray:
        if self.kpi is not None:
            return values[schema.index(self.kpi)]
        num, den = self.ratio_of
        return values[schema.index(num)] / (values[schema.index(den)] + self.epsilon)

    def reduce(self, values, schema) -> float:
        return float(REDUCTIONS[self.effective_reduction](self.series(values, schema)))

    def holds(self, values, schema) -> bool:
        return bool(COMPARATORS[self.comparator](self.reduce(values, schema), self.threshold))

    def to_json(self) -> dict:
        out = {"comparator": self.comparator, "threshold": self.threshold}
        if self.kpi is not None:
            out["kpi"] = self.kpi
        else:
            out["ratio_of"] = list(self.ratio_of)
            out["epsilon"] = self.epsilon
        if self.reduction is not None:
            out["reduction"] = self.reduction
        return out

    @classmethod
    def from_json(cls, d: dict) -> "Condition":
        unknown = set(d) - {"kpi", "ratio_of", "epsilon", "comparator", "threshold", "reduction"}
        if unknown:
            raise RuleError(f"unknown condition fields {sorted(unknown)}")
        try:
            return cls(
                comparator=d["comparator"],
                threshold=float(d["threshold"]),
                kpi=d.get("kpi"),
                ratio_of=tuple(d["ratio_of"]) if "ratio_of" in d else None,
                epsilon=float(d.get("epsilon", 0.0)),
                reduction=d.get("reduction"),
            )
        except KeyError as exc:
            raise RuleError(f"condition missing field {exc}") from None


@dataclass(frozen=True)
class Rule:
    class_id: int
    groups: tuple[tuple[Condition, ...], ...]  # AND over groups, OR within a group

    def holds(self, values, schema) -> bool:
        return all(any(c.holds(values, schema) for c in g) for g in self.groups)

    @property
    def kpis(self) -> set[str]:
        return {k for g in self.groups for c in g for k in c.kpis}


class RuleSet:
    def __init__(self, rules):
        rules = sorted(rules, key=lambda r: r.class_id)
        ids = [r.class_id for r in rules]
        if len(set(ids)) != len(ids):
            raise RuleError("duplicate class id in ruleset")
        for cid in ids:
            RootCause.from_id(cid)
        self.rules = tuple(rules)

    @property
    def kpis(self) -> set[str]:
        return set().union(*(r.kpis for r in self.rules)) if self.rules else set()

    def rule_for(self, class_id) -> Rule:
        for r in self.rules:
            if r.class_id == int(class_id):
                return r
        raise KeyError(class_id)

    def check_schema(self, schema: KpiSchema):
        missing = sorted(k for k in self.kpis if k not in schema)
        if missing:
            raise RuleError(f"ruleset references KPIs missing from schema: {missing}")

    def to_json(self) -> list:
        return [
            {
                "class_id": r.class_id,
                "conditions": [
                    g[0].to_json() if len(g) == 1 else {"any_of": [c.to_json() for c in g]} for g in r.groups
                ],
            }
            for r in self.rules
        ]

    @classmethod
    def from_json(cls, raw) -> "RuleSet":
        if isinstance(raw, dict):
            raw = raw.get("rules", raw)
        rules = []
        for r in raw:
            groups = []
            for g in r["conditions"]:
                if "any_of" in g:
                    groups.append(tuple(Condition.from_json(c) for c in g["any_of"]))
                else:
                    groups.append((Condition.from_json(g),))
            rules.append(Rule(int(r["class_id"]), tuple(groups)))
        return cls(rules)

    @classmethod
    def load(cls, path) -> "RuleSet":
        return cls.from_json(json.loads(Path(path).read_text()))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2))


def default_ruleset() -> RuleSet:
    text = resources.files("dkroot.data").joinpath("default_rules.json").read_text()
    return RuleSet.from_json(json.loads(text))


def rule_label(sample, ruleset: RuleSet, schema: KpiSchema | None = None) -> RootCause | None:
    """First rule (ascending class id) that the sample satisfies, else None.

    ``sample`` is a :class:`KpiSample` or a raw (m, l) array plus ``schema``.
    """
    if schema is None:
        schema = sample.schema
        values = sample.values
    else:
        values = np.asarray(getattr(sample, "values", sample), dtype=np.float64)
    ruleset.check_schema(schema)
    for rule in ruleset.rules:
        if rule.holds(values, schema):
            return RootCause(rule.class_id)
    return None


def label_many(values: np.ndarray, ruleset: RuleSet, schema: KpiSchema) -> np.ndarray:
    """Vector of rule labels for an (N, m, l) stack; 0 where no rule fires."""
    ruleset.check_schema(schema)
    out = np.zeros(len(values), dtype=np.int64)
    for i, v in enumerate(values):
        for rule in ruleset.rules:
            if rule.holds(v, schema):
                out[i] = rule.class_id
                break
    return out
