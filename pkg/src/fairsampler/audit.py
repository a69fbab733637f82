"""Representation audit and construction of the candidate oversampling set.

A group is under-represented when it trails the majority group by more than
``threshold`` of the whole population (``rule="share"``, the default), or by
more than ``threshold`` of the majority count (``rule="ratio"``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

from .data import LABEL, Dataset, GroupKey, GroupSpec, group_counts, resolve_names
from .errors import EmptyDataset, InputError, UnknownAttribute

STANDALONE = "standalone-imbalanced"
COMBINATION = "combination-imbalanced"
FORCED = "forced-by-config"


@dataclass(frozen=True)
class ImbalanceFinding:
    spec: GroupSpec
    counts: dict
    majority_key: GroupKey
    under_represented: tuple
    threshold: float
    rule: str = "share"

    @property
    def imbalanced(self) -> bool:
        return bool(self.under_represented)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def to_json(self) -> dict:
        n = self.total
        return {
            "spec": str(self.spec),
            "threshold": self.threshold,
            "rule": self.rule,
            "n": n,
            "counts": {str(k): c for k, c in self.counts.items()},
            "shares": {str(k): c / n for k, c in self.counts.items()},
            "majority": str(self.majority_key),
            "under_represented": [str(k) for k in self.under_represented],
            "imbalanced": self.imbalanced,
        }


def _majority(counts: dict) -> GroupKey:
    # sorted keys + strict ">" keeps the canonically first key on ties
    best = None
    for key in sorted(counts):
        if best is None or counts[key] > counts[best]:
            best = key
    return best


def under_represented(counts: dict, threshold: float = 0.15, rule: str = "share") -> list:
    """Keys of ``counts`` that trail the majority by more than the threshold.

    ``counts`` may hold raw counts or population shares; only ratios matter.
    """
    if not 0 < threshold < 1:
        raise InputError(f"threshold must lie in (0, 1), got {threshold}")
    if rule not in ("share", "ratio"):
        raise InputError(f"unknown imbalance rule {rule!r}")
    if not counts:
        raise EmptyDataset("no groups to audit")
    top = counts[_majority(counts)]
    denom = sum(counts.values()) if rule == "share" else top
    return [k for k in counts if (top - counts[k]) / denom > threshold]


def detect_imbalance(dataset: Dataset, spec: GroupSpec, threshold: float = 0.15,
                     rule: str = "share") -> ImbalanceFinding:
    resolve_names(dataset, spec.names)
    if len(dataset) == 0:
        raise EmptyDataset("cannot audit an empty dataset")
    counts = group_counts(dataset, spec)
    under = tuple(under_represented(counts, threshold, rule))
    return ImbalanceFinding(spec, counts, _majority(counts), under, threshold, rule)


@dataclass
class CandidateSet:
    specs: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    findings: dict = field(default_factory=dict)

    def add(self, spec: GroupSpec, provenance: str, finding: ImbalanceFinding | None = None):
        if spec in self.provenance:
            return
        self.specs.append(spec)
        self.provenance[spec] = provenance
        if finding is not None:
            self.findings[spec] = finding

    def __iter__(self):
        return iter(self.specs)

    def __len__(self):
        return len(self.specs)

    def __contains__(self, spec):
        return spec in self.provenance

    def to_json(self) -> list:
        out = []
        for spec in self.specs:
            entry = {"spec": str(spec), "provenance": self.provenance[spec]}
            if spec in self.findings:
                entry["finding"] = self.findings[spec].to_json()
            out.append(entry)
        return out


def build_candidate_set(dataset: Dataset, biased_attributes, max_combo_arity: int = 3,
                        threshold: float = 0.15, rule: str = "share",
                        forced=()) -> CandidateSet:
    """Collect every attribute or attribute combination whose groups are imbalanced.

    Standalone schema attributes and the label are audited first. Then each
    biased attribute that is itself balanced is combined with the other
    attributes and the label, up to ``max_combo_arity`` names per spec, and
    imbalanced combinations are kept. ``forced`` specs are appended last.
    """
    if max_combo_arity < 1:
        raise InputError("max_combo_arity must be >= 1")
    schema_names = dataset.schema.names
    for name in biased_attributes:
        if name not in schema_names:
            raise UnknownAttribute(name)

    standalone = sorted(GroupSpec.of(n) for n in (*schema_names, LABEL))
    balanced = set()
    result = CandidateSet()
    for spec in standalone:
        finding = detect_imbalance(dataset, spec, threshold, rule)
        if finding.imbalanced:
            result.add(spec, STANDALONE, finding)
        else:
            balanced.add(spec.names[0])

    combos = set()
    pool = (*schema_names, LABEL)
    for attr in biased_attributes:
        if attr not in balanced:
            continue
        others = [n for n in pool if n != attr]
        for size in range(1, max_combo_arity):
            for extra in combinations(others, size):
                combos.add(GroupSpec((attr, *extra)))
    for spec in sorted(combos, key=lambda s: (s.arity, s.names)):
        finding = detect_imbalance(dataset, spec, threshold, rule)
        if finding.imbalanced:
            result.add(spec, COMBINATION, finding)

    for spec in forced:
        spec = spec if isinstance(spec, GroupSpec) else GroupSpec.parse(spec)
        resolve_names(dataset, spec.names)
        result.add(spec, FORCED, detect_imbalance(dataset, spec, threshold, rule))
    return result
