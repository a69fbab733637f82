"""Run configuration and the audit -> cluster -> sweep -> select workflow.

A run directory holds::

    config.json      the RunConfig (everything needed to replay the run)
    audit.json       imbalance findings, biased attributes, candidate set, baseline report
    clusters.json    behavioural clustering (absent when clustering is off)
    plans/           per-configuration sampling plans, one entry per fold
    reports/         one FairnessReport per configuration
    selection.json   the chosen configuration and the decision trace
    report.txt       human-readable rendering of the above

Every JSON artifact is a pure function of config.json, so rerunning a stage
with the persisted config rewrites byte-identical files.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .audit import build_candidate_set, detect_imbalance
from .clustering import ClusteringResult, assign_clusters, embed_behavior, kmeans, raw_features, select_k
from .data import CLUSTER, LABEL, Dataset, GroupSpec, load_dataset
from .errors import InvalidConfig, MissingArtifacts
from .evaluation import (
    FairnessReport,
    Mitigation,
    render_report,
    run_configuration,
    select_technique,
)
from .predictor import PredictorConfig
from .sampling import Strategy
from .synthetic import generate, preset

ALL_STRATEGIES = tuple(s.value for s in Strategy)

# combinations the original analyses added to the candidate set by hand
PRESET_FORCED = {
    "tuglet-like": ("gender+intervention", "intervention+school", "gender+intervention+school"),
    "flipped-like": ("gender", "country+gender", "intervention", "gender+intervention",
                     "country+intervention"),
    "uniform-null": (),
}


@dataclass(frozen=True)
class RunConfig:
    """Everything a run depends on. The output directory is deliberately not part of it."""

    records: str | None = None
    schema: str | None = None
    records_format: str = "jsonl"
    preset: str | None = None
    n_students: int | None = None
    audited_attributes: tuple | None = None
    threshold: float = 0.15
    imbalance_rule: str = "share"
    max_combo_arity: int = 3
    bias_gap: float = 0.05
    forced_specs: tuple = ()
    strategies: tuple = ALL_STRATEGIES
    cluster_mode: str = "auto"
    cluster_k: int | None = None
    k_range: tuple = (2, 8)
    behavioral_specs: tuple | None = None
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    folds: int = 10
    seed: int = 0
    aggregation: str = "pooled"
    noise_floor: int = 10
    degradation_limit: float = 0.15

    def __post_init__(self):
        if isinstance(self.predictor, dict):
            object.__setattr__(self, "predictor", PredictorConfig.from_json(self.predictor))
        for name in ("audited_attributes", "behavioral_specs"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(value))
        object.__setattr__(self, "forced_specs", tuple(self.forced_specs))
        object.__setattr__(self, "strategies", tuple(str(Strategy(s)) for s in self.strategies))
        object.__setattr__(self, "k_range", tuple(int(k) for k in self.k_range))
        self.validate()

    def validate(self):
        if (self.preset is None) == (self.records is None):
            raise InvalidConfig("give exactly one of a preset name or a records path")
        if self.records is not None and self.schema is None:
            raise InvalidConfig("a records file needs a schema file")
        if self.records_format not in ("jsonl", "csv"):
            raise InvalidConfig(f"unknown records format {self.records_format!r}")
        if not self.strategies:
            raise InvalidConfig("at least one strategy is required")
        if self.cluster_mode not in ("off", "fixed", "auto"):
            raise InvalidConfig(f"cluster_mode must be off, fixed or auto, not {self.cluster_mode!r}")
        if self.cluster_mode == "fixed" and (self.cluster_k is None or self.cluster_k < 2):
            raise InvalidConfig("fixed clustering needs cluster_k >= 2")
        if self.cluster_mode == "off" and self.behavioral_specs:
            raise InvalidConfig("behavioural oversampling needs clustering (cluster_mode != off)")
        if len(self.k_range) != 2 or not 2 <= self.k_range[0] <= self.k_range[1]:
            raise InvalidConfig("k_range must be (lo, hi) with 2 <= lo <= hi")
        if self.folds < 2:
            raise InvalidConfig("at least two folds are required")
        if not 0 <= self.seed < 2**64:
            raise InvalidConfig("seed must be an unsigned 64-bit integer")
        if self.aggregation not in ("pooled", "macro"):
            raise InvalidConfig(f"unknown aggregation {self.aggregation!r}")
        if not 0 < self.threshold < 1:
            raise InvalidConfig("imbalance threshold must lie in (0, 1)")
        if self.max_combo_arity < 1:
            raise InvalidConfig("max_combo_arity must be >= 1")

    def to_json(self) -> dict:
        out = asdict(self)
        out["predictor"] = self.predictor.to_json()
        for key, value in out.items():
            if isinstance(value, tuple):
                out[key] = list(value)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys {sorted(unknown)}")
        return cls(**obj)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise MissingArtifacts(f"config file not found: {path}")
        try:
            return cls.from_json(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"{path}: invalid JSON ({exc})") from exc

    @classmethod
    def for_preset(cls, name: str, **changes) -> "RunConfig":
        """Config for a synthetic preset, with that context's hand-picked combinations forced."""
        changes.setdefault("forced_specs", PRESET_FORCED.get(name, ()))
        return cls(preset=name, **changes)

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **changes)


# ------------------------------------------------------------------ helpers

def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write(path: Path, text: str):
    # unchanged files are left alone so a repeated run touches nothing
    if path.exists() and path.read_text() == text:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def artifact_name(config_id: str) -> str:
    return config_id.replace(":", "__") + ".json"


def load_input(config: RunConfig) -> Dataset:
    if config.preset is not None:
        scenario = preset(config.preset).with_(seed=config.seed)
        if config.n_students is not None:
            scenario = scenario.with_(n_students=config.n_students)
        return generate(scenario).dataset
    for path in (config.records, config.schema):
        if not Path(path).exists():
            raise MissingArtifacts(f"input file not found: {path}")
    return load_dataset(config.records, config.schema, config.records_format)


def audited(config: RunConfig, dataset: Dataset) -> list:
    if config.audited_attributes is not None:
        return list(config.audited_attributes)
    return list(dataset.schema.names)


def prepare_run_dir(config: RunConfig, out) -> Path:
    """Create ``out`` and persist the config; refuse to mix two configs in one directory."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.json"
    text = config.dumps()
    if path.exists():
        if RunConfig.load(path) != config:
            raise InvalidConfig(f"{out} already holds a run with a different configuration")
        return out
    _write(path, text)
    return out


def _run_kwargs(config: RunConfig, attrs, features):
    return dict(audited_attributes=attrs, k=config.folds, seed=config.seed,
                predictor=config.predictor, aggregation=config.aggregation,
                features=features, noise_floor=config.noise_floor)


def _features(config, dataset):
    return None if config.predictor.kind != "reference-logistic" else raw_features(dataset.records)


# ------------------------------------------------------------------ stages

def run_audit(config: RunConfig, out) -> dict:
    out = prepare_run_dir(config, out)
    dataset = load_input(config)
    attrs = audited(config, dataset)
    baseline = run_configuration(dataset, Mitigation(), **_run_kwargs(
        config, attrs, _features(config, dataset))).report
    findings = [detect_imbalance(dataset, GroupSpec.of(n), config.threshold, config.imbalance_rule)
                for n in (*dataset.schema.names, LABEL)]
    biased = [a for a in attrs
              if baseline.fnr_gaps.get(a) is not None and baseline.fnr_gaps[a] > config.bias_gap]
    candidates = build_candidate_set(dataset, biased, config.max_combo_arity, config.threshold,
                                     config.imbalance_rule, config.forced_specs)
    result = {
        "n_records": len(dataset),
        "audited_attributes": attrs,
        "imbalance": [f.to_json() for f in findings],
        "imbalanced": [str(f.spec) for f in findings if f.imbalanced],
        "biased_attributes": biased,
        "candidates": candidates.to_json(),
        "baseline": baseline.to_json(),
    }
    _write(out / "audit.json", _dump(result))
    return result


def run_cluster(config: RunConfig, out) -> dict | None:
    out = prepare_run_dir(config, out)
    if config.cluster_mode == "off":
        return None
    dataset = load_input(config)
    emb = embed_behavior(dataset)
    if config.cluster_mode == "fixed":
        result = kmeans(emb, config.cluster_k, seed=config.seed)
    else:
        result = select_k(emb, config.k_range, seed=config.seed)
    obj = result.to_json()
    obj["mode"] = config.cluster_mode
    obj["sizes"] = {str(c): n for c, n in result.sizes().items()}
    _write(out / "clusters.json", _dump(obj))
    return obj


def sweep_mitigations(config: RunConfig, audit: dict, attrs, clustered: bool) -> list:
    """Baseline, every strategy over every candidate, then the behavioural variants."""
    out = [Mitigation()]
    seen = set()

    def add(kind, spec):
        for strategy in config.strategies:
            if strategy == Strategy.WITHIN.value and spec.arity < 2:
                continue
            m = Mitigation(kind, strategy, spec)
            if m.config_id not in seen:
                seen.add(m.config_id)
                out.append(m)

    for entry in audit["candidates"]:
        add("demographic", GroupSpec.parse(entry["spec"]))
    if clustered:
        specs = config.behavioral_specs
        if specs is None:
            specs = [CLUSTER, f"{CLUSTER}+{LABEL}", *(f"{CLUSTER}+{a}" for a in attrs)]
        for text in specs:
            add("behavioral", GroupSpec.parse(text))
    return out


def _evaluate(args):
    dataset, mitigation, kwargs = args
    run = run_configuration(dataset, mitigation, **kwargs)
    plans = [None if f.plan is None else f.plan.to_json() for f in run.folds]
    return run.report, plans


def run_mitigate(config: RunConfig, out, workers: int = 1, log=None) -> dict:
    """Full sweep with resume: configurations whose report already exists are skipped."""
    out = prepare_run_dir(config, out)
    audit_path = out / "audit.json"
    audit = json.loads(audit_path.read_text()) if audit_path.exists() else run_audit(config, out)
    dataset = load_input(config)
    clustered = config.cluster_mode != "off"
    if clustered:
        cpath = out / "clusters.json"
        cobj = json.loads(cpath.read_text()) if cpath.exists() else run_cluster(config, out)
        dataset = assign_clusters(dataset, ClusteringResult.from_json(cobj))
    attrs = audit["audited_attributes"]
    mitigations = sweep_mitigations(config, audit, attrs, clustered)
    kwargs = _run_kwargs(config, attrs, _features(config, dataset))

    todo = [m for m in mitigations
            if not (out / "reports" / artifact_name(m.config_id)).exists()]
    if log:
        log(f"{len(mitigations)} configurations, {len(mitigations) - len(todo)} already done")
    jobs = [(dataset, m, kwargs) for m in todo]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_evaluate, jobs))
    else:
        results = map(_evaluate, jobs)
    for m, (report, plans) in zip(todo, results):
        if m.kind != "baseline":
            _write(out / "plans" / artifact_name(m.config_id), _dump(plans))
        _write(out / "reports" / artifact_name(m.config_id), report.dumps())
        if log:
            log(f"  {m.config_id}: selection score {report.selection_score}")

    reports = [FairnessReport.from_json(json.loads(
        (out / "reports" / artifact_name(m.config_id)).read_text())) for m in mitigations]
    baseline = reports[0]
    selection = select_technique(reports, baseline, config.degradation_limit)
    sel = selection.to_json()
    sel["baseline_selection_score"] = baseline.selection_score
    sel["configurations"] = [m.config_id for m in mitigations]
    _write(out / "selection.json", _dump(sel))
    _write(out / "report.txt", render_run(out))
    return sel


def render_run(out) -> str:
    """Consolidated text report of a finished run directory."""
    out = Path(out)
    needed = [out / "config.json", out / "selection.json", out / "reports"]
    missing = [str(p) for p in needed if not p.exists()]
    if missing:
        raise MissingArtifacts(f"run directory is incomplete, missing: {', '.join(missing)}")
    selection = json.loads((out / "selection.json").read_text())
    lines = ["fairness sweep report", ""]
    audit_path = out / "audit.json"
    if audit_path.exists():
        audit = json.loads(audit_path.read_text())
        lines.append("imbalanced groupings: " + (", ".join(audit["imbalanced"]) or "none"))
        lines.append("biased attributes: " + (", ".join(audit["biased_attributes"]) or "none"))
        lines.append("candidates: " + (", ".join(c["spec"] for c in audit["candidates"]) or "none"))
        lines.append("")
    reports = {}
    for cid in selection["configurations"]:
        path = out / "reports" / artifact_name(cid)
        if not path.exists():
            raise MissingArtifacts(f"missing report for {cid}: {path}")
        reports[cid] = json.loads(path.read_text())

    def fmt(v):
        return "  n/a" if v is None else f"{v:.3f}"

    attrs = next(iter(reports.values()))["audited_attributes"]
    head = f"{'configuration':<44} {'AUC':>6} {'FNR':>6} {'FPR':>6} {'score':>6}"
    lines += ["summary (FNR gap per attribute after the score column)",
              head + "".join(f" {a[:10]:>10}" for a in attrs)]
    for cid, rep in reports.items():
        lines.append(f"{cid:<44} {rep['auc_mean']:6.3f} {fmt(rep['overall_fnr']):>6} "
                     f"{fmt(rep['overall_fpr']):>6} {fmt(rep['selection_score']):>6}"
                     + "".join(f" {fmt(rep['fnr_gaps'].get(a)):>10}" for a in attrs))
    lines += ["", f"selected: {selection['chosen']}"]
    for flag in selection["flags"]:
        lines.append(f"selection flag: {flag}")
    lines.append("decision trace:")
    for t in selection["trace"]:
        lines.append(f"  {t['rank']:>3}. {t['config_id']:<44} score {fmt(t['selection_score'])}"
                     f"  FNR {fmt(t['overall_fnr'])}  {t['verdict']}")
    lines.append("")
    for rep in reports.values():
        lines += [render_report(rep), ""]
    return "\n".join(lines)
