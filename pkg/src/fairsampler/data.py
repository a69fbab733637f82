"""Dataset representation, grouping and file ingestion.

Every record is one student: categorical demographic attributes, a T x D
behaviour sequence and a binary label (1 = needs intervention). The label is
reachable as the pseudo-attribute ``"intervention"`` and, once clustering has
run, the behavioural profile as ``"cluster"``. All grouping goes through
:class:`GroupSpec`, so label, cluster and demographic groups share one path.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    ClusterNotAssigned,
    CoverageMismatch,
    DuplicateStudentId,
    InconsistentFeatureDim,
    InputError,
    MalformedRecord,
    SchemaViolation,
    UnknownAttribute,
)

LABEL = "intervention"
CLUSTER = "cluster"
RESERVED = (LABEL, CLUSTER)


@dataclass(frozen=True, eq=False)
class StudentRecord:
    student_id: str
    attributes: Mapping[str, str]
    behavior: np.ndarray
    label: int

    def __post_init__(self):
        behavior = np.array(self.behavior, dtype=float, ndmin=2, copy=True)
        behavior.setflags(write=False)
        object.__setattr__(self, "behavior", behavior)
        object.__setattr__(self, "attributes", dict(self.attributes))

    def __eq__(self, other):
        if not isinstance(other, StudentRecord):
            return NotImplemented
        return (
            self.student_id == other.student_id
            and self.label == other.label
            and self.attributes == other.attributes
            and self.behavior.shape == other.behavior.shape
            and np.array_equal(self.behavior, other.behavior)
        )

    __hash__ = None

    @property
    def length(self) -> int:
        return self.behavior.shape[0]

    def to_json(self) -> dict:
        return {
            "student_id": self.student_id,
            "attributes": dict(self.attributes),
            "label": int(self.label),
            "behavior": self.behavior.tolist(),
        }


@dataclass(frozen=True)
class AttributeSchema:
    """Declared categorical attributes: ``((name, (value, ...)), ...)``."""

    attributes: tuple
    label_name: str = LABEL

    def __post_init__(self):
        attrs = tuple((str(n), tuple(str(v) for v in vals)) for n, vals in self.attributes)
        object.__setattr__(self, "attributes", attrs)
        if self.label_name != LABEL:
            raise InputError(f"label name is fixed to {LABEL!r}")
        names = [n for n, _ in attrs]
        if len(set(names)) != len(names):
            raise InputError(f"duplicate attribute names in schema: {names}")
        for name, values in attrs:
            if name in RESERVED:
                raise InputError(f"attribute name {name!r} is reserved")
            if len(set(values)) < 2:
                raise InputError(f"attribute {name!r} needs at least 2 distinct values")

    @property
    def names(self) -> tuple:
        return tuple(n for n, _ in self.attributes)

    def values(self, name: str) -> tuple:
        for n, vals in self.attributes:
            if n == name:
                return vals
        raise UnknownAttribute(name)

    @classmethod
    def from_json(cls, obj: dict) -> "AttributeSchema":
        try:
            attrs = tuple((a["name"], tuple(a["values"])) for a in obj["attributes"])
        except (KeyError, TypeError) as exc:
            raise InputError(f"invalid schema document: {exc}") from exc
        return cls(attrs)

    def to_json(self) -> dict:
        return {"attributes": [{"name": n, "values": list(v)} for n, v in self.attributes]}


@dataclass(frozen=True, order=True)
class GroupSpec:
    """Canonical (sorted, duplicate-free) selection of grouping attributes."""

    names: tuple

    def __init__(self, names: Iterable[str]):
        if isinstance(names, str):
            names = (names,)
        names = tuple(names)
        if not names:
            raise InputError("GroupSpec needs at least one attribute name")
        if len(set(names)) != len(names):
            raise InputError(f"duplicate names in GroupSpec: {names}")
        object.__setattr__(self, "names", tuple(sorted(names)))

    @classmethod
    def of(cls, *names: str) -> "GroupSpec":
        return cls(names)

    @classmethod
    def parse(cls, text: str) -> "GroupSpec":
        return cls(p.strip() for p in text.split("+") if p.strip())

    @property
    def arity(self) -> int:
        return len(self.names)

    def __str__(self):
        return "+".join(self.names)

    def __repr__(self):
        return f"GroupSpec({str(self)!r})"


@dataclass(frozen=True, order=True)
class GroupKey:
    spec: GroupSpec
    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(str(v) for v in self.values))
        if len(self.values) != self.spec.arity:
            raise InputError(f"{len(self.values)} values for spec {self.spec}")

    def __str__(self):
        return "|".join(self.values)

    def as_dict(self) -> dict:
        return dict(zip(self.spec.names, self.values))


@dataclass(frozen=True, eq=False)
class Dataset:
    schema: AttributeSchema
    records: tuple
    cluster_assignment: Mapping[str, int] | None = None

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        _validate_records(self.schema, self.records)
        if self.cluster_assignment is not None:
            assignment = {str(k): int(v) for k, v in self.cluster_assignment.items()}
            ids = {r.student_id for r in self.records}
            if set(assignment) != ids:
                raise CoverageMismatch(
                    "cluster assignment must cover every student id exactly once"
                )
            object.__setattr__(self, "cluster_assignment", assignment)

    def __len__(self):
        return len(self.records)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.schema == other.schema
            and self.records == other.records
            and self.cluster_assignment == other.cluster_assignment
        )

    __hash__ = None

    @property
    def feature_dim(self) -> int:
        return self.records[0].behavior.shape[1] if self.records else 0

    @cached_property
    def student_ids(self) -> np.ndarray:
        return np.array([r.student_id for r in self.records], dtype=object)

    @cached_property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=int)

    def column(self, name: str) -> list:
        """Categorical values of ``name`` per record, as strings."""
        if name == LABEL:
            return [str(r.label) for r in self.records]
        if name == CLUSTER:
            if self.cluster_assignment is None:
                raise ClusterNotAssigned("spec references 'cluster' before clustering")
            return [str(self.cluster_assignment[r.student_id]) for r in self.records]
        if name not in self.schema.names:
            raise UnknownAttribute(name)
        return [r.attributes[name] for r in self.records]

    def group_keys(self, spec: GroupSpec) -> list:
        columns = [self.column(n) for n in spec.names]
        return [GroupKey(spec, vals) for vals in zip(*columns)]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        records = [self.records[i] for i in indices]
        assignment = None
        if self.cluster_assignment is not None:
            assignment = {r.student_id: self.cluster_assignment[r.student_id] for r in records}
        return Dataset(self.schema, records, assignment)

    def with_clusters(self, assignment: Mapping[str, int]) -> "Dataset":
        return Dataset(self.schema, self.records, assignment)


def _validate_records(schema: AttributeSchema, records: Sequence[StudentRecord]):
    seen = set()
    dim = None
    declared = set(schema.names)
    for row, rec in enumerate(records):
        if rec.student_id in seen:
            raise DuplicateStudentId(f"duplicate student_id {rec.student_id!r} (record {row})")
        seen.add(rec.student_id)
        if set(rec.attributes) != declared:
            missing = declared - set(rec.attributes)
            extra = set(rec.attributes) - declared
            raise SchemaViolation(row, sorted(missing | extra)[0],
                                  f"missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, allowed in schema.attributes:
            if rec.attributes[name] not in allowed:
                raise SchemaViolation(row, name, f"value {rec.attributes[name]!r} not in schema")
        if rec.label not in (0, 1):
            raise MalformedRecord(row, f"label must be 0 or 1, got {rec.label!r}")
        if rec.behavior.ndim != 2 or rec.behavior.shape[0] < 1 or rec.behavior.shape[1] < 1:
            raise MalformedRecord(row, "behavior must be a non-empty T x D array")
        if not np.all(np.isfinite(rec.behavior)):
            raise MalformedRecord(row, "behavior contains non-finite values")
        if dim is None:
            dim = rec.behavior.shape[1]
        elif rec.behavior.shape[1] != dim:
            raise InconsistentFeatureDim(
                f"record {row} has feature dim {rec.behavior.shape[1]}, expected {dim}"
            )


def partition_by_group(dataset: Dataset, spec: GroupSpec) -> dict:
    """Map each non-empty group to the ascending indices of its records.

    Keys come out in canonical order.
    """
    buckets: dict = {}
    for i, key in enumerate(dataset.group_keys(spec)):
        buckets.setdefault(key, []).append(i)
    return {k: np.asarray(buckets[k], dtype=np.int64) for k in sorted(buckets)}


def group_counts(dataset: Dataset, spec: GroupSpec) -> dict:
    return {k: len(v) for k, v in partition_by_group(dataset, spec).items()}


# ---------------------------------------------------------------- file I/O

def load_schema(path) -> AttributeSchema:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc
    return AttributeSchema.from_json(obj)


def _parse_record(obj, row: int, schema: AttributeSchema) -> StudentRecord:
    if not isinstance(obj, dict):
        raise MalformedRecord(row, "expected a JSON object")
    for fld in ("student_id", "attributes", "label", "behavior"):
        if fld not in obj:
            raise MalformedRecord(row, f"missing field {fld!r}")
    sid = obj["student_id"]
    if not isinstance(sid, str) or not sid:
        raise MalformedRecord(row, "student_id must be a non-empty string")
    attrs = obj["attributes"]
    if not isinstance(attrs, dict) or not all(isinstance(v, str) for v in attrs.values()):
        raise MalformedRecord(row, "attributes must map names to strings")
    label = obj["label"]
    if isinstance(label, bool) or label not in (0, 1):
        raise MalformedRecord(row, f"label must be 0 or 1, got {label!r}")
    for name, allowed in schema.attributes:
        if name not in attrs:
            raise SchemaViolation(row, name, "missing value")
        if attrs[name] not in allowed:
            raise SchemaViolation(row, name, f"value {attrs[name]!r} not in schema")
    extra = set(attrs) - set(schema.names)
    if extra:
        raise SchemaViolation(row, sorted(extra)[0], "attribute not declared in schema")
    beh = obj["behavior"]
    if (not isinstance(beh, list) or not beh
            or not all(isinstance(step, list) and step for step in beh)):
        raise MalformedRecord(row, "behavior must be a non-empty array of non-empty arrays")
    if len({len(step) for step in beh}) != 1:
        raise MalformedRecord(row, "behavior steps have differing dimensions")
    try:
        arr = np.array(beh, dtype=float)
    except (TypeError, ValueError) as exc:
        raise MalformedRecord(row, f"behavior is not numeric ({exc})") from exc
    if not np.all(np.isfinite(arr)):
        raise MalformedRecord(row, "behavior contains non-finite values")
    return StudentRecord(sid, attrs, arr, int(label))


def _finish(schema, records, rows):
    seen = {}
    dim = None
    for rec, row in zip(records, rows):
        if rec.student_id in seen:
            raise DuplicateStudentId(
                f"row {row}: student_id {rec.student_id!r} already used on row {seen[rec.student_id]}"
            )
        seen[rec.student_id] = row
        d = rec.behavior.shape[1]
        if dim is None:
            dim = d
        elif d != dim:
            raise InconsistentFeatureDim(f"row {row}: feature dim {d}, expected {dim}")
    return Dataset(schema, records)


def load_dataset(records_path, schema_path, fmt: str = "jsonl") -> Dataset:
    """Read a records file plus its schema into a validated :class:`Dataset`.

    ``fmt`` is ``"jsonl"`` (one JSON object per line) or ``"csv"`` (wide
    format with ``behavior_t{t}_f{f}`` columns). Row numbers in errors are
    1-based line numbers of the records file.
    """
    schema = load_schema(schema_path)
    if fmt == "csv":
        return _load_csv(Path(records_path), schema)
    if fmt != "jsonl":
        raise InputError(f"unknown records format {fmt!r}")
    records, rows = [], []
    with open(records_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(lineno, f"invalid JSON ({exc.msg})") from exc
            records.append(_parse_record(obj, lineno, schema))
            rows.append(lineno)
    return _finish(schema, records, rows)


_BEHAVIOR_COL = re.compile(r"^behavior_t(\d+)_f(\d+)$")


def _load_csv(path: Path, schema: AttributeSchema) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        cells = {}
        for col in header:
            m = _BEHAVIOR_COL.match(col)
            if m:
                cells[(int(m.group(1)), int(m.group(2)))] = col
        if not cells:
            raise MalformedRecord(1, "no behavior_t{t}_f{f} columns")
        n_t = max(t for t, _ in cells) + 1
        n_f = max(f for _, f in cells) + 1
        if len(cells) != n_t * n_f:
            raise MalformedRecord(1, "behavior columns do not form a full T x D grid")
        records, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            steps = []
            for t in range(n_t):
                raw = [row[cells[(t, f)]].strip() for f in range(n_f)]
                if all(v == "" for v in raw):
                    break
                if any(v == "" for v in raw):
                    raise MalformedRecord(lineno, f"partially missing behavior at step {t}")
                steps.append([float(v) for v in raw])
            # trailing empty steps encode shorter sequences; a gap followed by data is an error
            for t in range(len(steps), n_t):
                if any(row[cells[(t, f)]].strip() for f in range(n_f)):
                    raise MalformedRecord(lineno, f"missing behavior at step {len(steps)}")
            try:
                label = int(row.get("label", ""))
            except ValueError:
                raise MalformedRecord(lineno, f"label must be 0 or 1, got {row.get('label')!r}")
            obj = {
                "student_id": row.get("student_id", ""),
                "attributes": {n: row.get(n) for n in schema.names if row.get(n) is not None},
                "label": label,
                "behavior": steps,
            }
            records.append(_parse_record(obj, lineno, schema))
            rows.append(lineno)
    return _finish(schema, records, rows)


def save_dataset(dataset: Dataset, records_path, schema_path, fmt: str = "jsonl"):
    """Write ``dataset`` in the external format; floats use shortest round-trip text."""
    Path(schema_path).write_text(json.dumps(dataset.schema.to_json(), indent=2) + "\n")
    if fmt == "jsonl":
        with open(records_path, "w") as fh:
            for rec in dataset.records:
                fh.write(json.dumps(rec.to_json()) + "\n")
        return
    if fmt != "csv":
        raise InputError(f"unknown records format {fmt!r}")
    n_t = max(r.length for r in dataset.records)
    n_f = dataset.feature_dim
    beh_cols = [f"behavior_t{t}_f{f}" for t in range(n_t) for f in range(n_f)]
    with open(records_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["student_id", "label", *dataset.schema.names, *beh_cols])
        for rec in dataset.records:
            flat = [repr(float(v)) for v in rec.behavior.ravel()]
            flat += [""] * (len(beh_cols) - len(flat))
            writer.writerow([rec.student_id, rec.label,
                             *(rec.attributes[n] for n in dataset.schema.names), *flat])


def resolve_names(dataset: Dataset, names: Iterable[str]):
    """Raise if any name cannot be used in a GroupSpec over ``dataset``."""
    for n in names:
        if n == LABEL:
            continue
        if n == CLUSTER:
            if dataset.cluster_assignment is None:
                raise ClusterNotAssigned("spec references 'cluster' before clustering")
            continue
        if n not in dataset.schema.names:
            raise UnknownAttribute(n)
