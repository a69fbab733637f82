"""Target-count rules and random oversampling with replacement.

A plan maps every group of a :class:`GroupSpec` to a target size that is
never below the group's current size. :func:`apply_plan` realises the plan by
duplicating existing records; no feature values are ever synthesised.

Strategies
----------
equal     every group grows to the largest group's size
majority  only the largest group grows, by 50% (floored)
cascade   each group grows to the size of the next larger group
minor     groups grow to the majority size, except groups below a noise floor
within    two stages over a (main attribute x sub attributes) grid
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .data import CLUSTER, LABEL, Dataset, GroupKey, GroupSpec, partition_by_group, resolve_names
from .errors import EmptyGroups, InputError, PlanGroupMismatch, TargetBelowOriginal


class OversamplingWarning(UserWarning):
    pass


class Strategy(str, Enum):
    EQUAL = "equal"
    MAJORITY = "majority"
    CASCADE = "cascade"
    MINOR = "minor"
    WITHIN = "within"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class SamplingPlan:
    spec: GroupSpec
    targets: dict
    strategy: Strategy
    seed: int = 0
    flags: tuple = ()
    stages: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        object.__setattr__(self, "targets", {k: int(self.targets[k]) for k in sorted(self.targets)})
        if not 0 <= int(self.seed) < 2**64:
            raise InputError("plan seed must be an unsigned 64-bit integer")

    def to_json(self) -> dict:
        return {
            "spec": str(self.spec),
            "strategy": str(self.strategy),
            "seed": int(self.seed),
            "targets": {str(k): v for k, v in self.targets.items()},
            "flags": list(self.flags),
            "stages": [{str(k): v for k, v in stage.items()} for stage in self.stages],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SamplingPlan":
        spec = GroupSpec.parse(obj["spec"])

        def keyed(d):
            return {GroupKey(spec, tuple(k.split("|"))): int(v) for k, v in d.items()}

        return cls(spec, keyed(obj["targets"]), Strategy(obj["strategy"]), int(obj["seed"]),
                   tuple(obj.get("flags", ())), tuple(keyed(s) for s in obj.get("stages", ())))


def _check_counts(counts: dict):
    if not counts:
        raise EmptyGroups("no groups to oversample")
    if any(c < 1 for c in counts.values()):
        raise EmptyGroups("every group needs at least one member")


def _majority_key(counts: dict):
    best = None
    for key in sorted(counts):
        if best is None or counts[key] > counts[best]:
            best = key
    return best


def plan_equal(counts: dict) -> dict:
    _check_counts(counts)
    top = max(counts.values())
    return {k: top for k in counts}


def plan_majority(counts: dict) -> dict:
    _check_counts(counts)
    if len(counts) > 2:
        warnings.warn(
            f"majority oversampling on {len(counts)} groups grows only one of them",
            OversamplingWarning, stacklevel=2,
        )
    key = _majority_key(counts)
    targets = dict(counts)
    targets[key] = (3 * counts[key]) // 2
    return targets


def plan_cascade(counts: dict) -> dict:
    _check_counts(counts)
    sizes = sorted(set(counts.values()))
    nxt = {a: b for a, b in zip(sizes, sizes[1:])}
    return {k: nxt.get(c, c) for k, c in counts.items()}


def plan_minor(counts: dict, noise_floor: int = 10) -> dict:
    _check_counts(counts)
    key = _majority_key(counts)
    top = counts[key]
    return {k: (top if c >= noise_floor else c) for k, c in counts.items()}


def minor_guarded(counts: dict, noise_floor: int = 10) -> list:
    """Groups that the noise floor keeps from growing under ``minor``."""
    key = _majority_key(counts)
    return [k for k, c in counts.items() if k != key and c < noise_floor]


def within_main_attribute(spec: GroupSpec) -> str:
    """Main attribute used by ``within``: cluster, else the label, else the first name."""
    if spec.arity < 2:
        raise InputError("within oversampling needs a combined spec (>= 2 attributes)")
    for name in (CLUSTER, LABEL):
        if name in spec.names:
            return name
    return spec.names[0]


def plan_within(dataset: Dataset, main_attribute: str, sub_attributes) -> SamplingPlan:
    sub_attributes = tuple(sub_attributes)
    if not sub_attributes or main_attribute in sub_attributes:
        raise InputError("within needs a main attribute and distinct sub attributes")
    resolve_names(dataset, (main_attribute, *sub_attributes))
    spec = GroupSpec((main_attribute, *sub_attributes))
    counts = {k: len(v) for k, v in partition_by_group(dataset, spec).items()}
    return _within_from_counts(spec, counts, main_attribute)


def _within_from_counts(spec, counts, main_attribute):
    _check_counts(counts)
    pos = spec.names.index(main_attribute)
    by_main: dict = {}
    for key in sorted(counts):
        by_main.setdefault(key.values[pos], []).append(key)

    def sub_values(key):
        return key.values[:pos] + key.values[pos + 1:]

    flags = []
    all_sub = {sub_values(k) for k in counts}
    for m, keys in by_main.items():
        missing = sorted(all_sub - {sub_values(k) for k in keys})
        if missing:
            flags.append(f"within: {main_attribute}={m} has no cells {missing}")
            warnings.warn(
                f"{main_attribute}={m} has no members for {missing}; cells stay absent",
                OversamplingWarning, stacklevel=3,
            )

    stage1 = {}
    for keys in by_main.values():
        top = max(counts[k] for k in keys)
        for k in keys:
            stage1[k] = top
    totals = {m: sum(stage1[k] for k in keys) for m, keys in by_main.items()}
    goal = max(totals.values())
    stage2 = {}
    for m, keys in by_main.items():
        base, extra = divmod(goal, len(keys))
        for i, k in enumerate(keys):
            stage2[k] = base + (1 if i < extra else 0)
    return SamplingPlan(spec, stage2, Strategy.WITHIN, flags=tuple(flags),
                        stages=(stage1, stage2))


def make_plan(dataset: Dataset, spec: GroupSpec, strategy, seed: int = 0,
              noise_floor: int = 10) -> SamplingPlan:
    """Compute the plan for ``strategy`` over the groups of ``spec`` in ``dataset``."""
    strategy = Strategy(strategy)
    resolve_names(dataset, spec.names)
    counts = {k: len(v) for k, v in partition_by_group(dataset, spec).items()}
    flags = ()
    if strategy is Strategy.EQUAL:
        targets = plan_equal(counts)
    elif strategy is Strategy.MAJORITY:
        targets = plan_majority(counts)
        if len(counts) > 2:
            flags = (f"majority: only the largest of {len(counts)} groups grows",)
    elif strategy is Strategy.CASCADE:
        targets = plan_cascade(counts)
    elif strategy is Strategy.MINOR:
        targets = plan_minor(counts, noise_floor)
        guarded = minor_guarded(counts, noise_floor)
        if guarded:
            flags = (f"minor: noise floor {noise_floor} kept {[str(k) for k in guarded]} unchanged",)
    else:
        plan = _within_from_counts(spec, counts, within_main_attribute(spec))
        return SamplingPlan(spec, plan.targets, Strategy.WITHIN, seed, plan.flags, plan.stages)
    return SamplingPlan(spec, targets, strategy, seed, flags)


@dataclass(frozen=True)
class ResampledDataset:
    base: Dataset
    extra_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def indices(self) -> np.ndarray:
        """All base rows followed by the duplicates, in draw order."""
        return np.concatenate([np.arange(len(self.base), dtype=np.int64), self.extra_indices])

    def records(self) -> list:
        return [self.base.records[i] for i in self.indices()]

    def __len__(self):
        return len(self.base) + len(self.extra_indices)


def group_seed(seed: int, key: GroupKey) -> np.random.SeedSequence:
    """Per-group seed: adding or removing other groups never changes this stream."""
    digest = hashlib.sha256(
        json.dumps([list(key.spec.names), list(key.values)]).encode()
    ).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    seed = int(seed)
    return np.random.SeedSequence([seed & 0xFFFFFFFF, seed >> 32, *words])


def apply_plan(dataset: Dataset, plan: SamplingPlan) -> ResampledDataset:
    parts = partition_by_group(dataset, plan.spec)
    if set(parts) != set(plan.targets):
        raise PlanGroupMismatch(
            f"plan groups {sorted(map(str, plan.targets))} != data groups {sorted(map(str, parts))}"
        )
    draws = []
    for key, members in parts.items():
        need = plan.targets[key] - len(members)
        if need < 0:
            raise TargetBelowOriginal(f"group {key}: target {plan.targets[key]} < {len(members)}")
        if need == 0:
            continue
        rng = np.random.default_rng(group_seed(plan.seed, key))
        draws.append(members[rng.integers(0, len(members), size=need)])
    extra = np.concatenate(draws) if draws else np.zeros(0, dtype=np.int64)
    return ResampledDataset(dataset, extra.astype(np.int64))
