"""Student-stratified cross-validation with per-group error rates.

Each configuration (baseline, or a strategy applied to a grouping spec) is
trained on rebalanced training folds and scored on untouched test folds.
Test predictions are pooled over folds to compute per-group FNR/FPR; the FNR
gap of an attribute is max - min over its groups with at least
``min_reported`` members. Configurations are ranked by the mean gap over the
audited attributes.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .clustering import raw_features
from .data import Dataset, GroupKey, GroupSpec, partition_by_group, resolve_names
from .errors import (
    AlignmentMismatch,
    EmptyCandidates,
    InputError,
    InvalidK,
    LeakageError,
    SingleClass,
    SingleClassFold,
    TooFewRecords,
)
from .predictor import EXTERNAL, PredictorConfig, external_scores, fit, predict_proba
from .sampling import OversamplingWarning, SamplingPlan, Strategy, apply_plan, make_plan

MIN_REPORTED = 10


# ------------------------------------------------------------------ folds

@dataclass(frozen=True)
class FoldAssignment:
    k: int
    fold_of: np.ndarray
    student_ids: tuple

    @property
    def folds(self) -> dict:
        return {sid: int(f) for sid, f in zip(self.student_ids, self.fold_of)}

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != fold)

    def label_counts(self, labels) -> list:
        labels = np.asarray(labels)
        return [(int(np.sum((self.fold_of == f) & (labels == 0))),
                 int(np.sum((self.fold_of == f) & (labels == 1)))) for f in range(self.k)]


def stratified_folds(dataset: Dataset, k: int = 10, seed: int = 0) -> FoldAssignment:
    """Shuffle each label stratum and deal it round-robin into ``k`` folds.

    Dealing continues across strata (label 0 first, then label 1) so fold
    sizes never differ by more than one.
    """
    if k < 2:
        raise InvalidK("k must be at least 2 to hold out data")
    labels = dataset.labels
    for value in (0, 1):
        if np.sum(labels == value) < k:
            raise TooFewRecords(f"label {value} has fewer than k={k} records")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for value in (0, 1):
        idx = np.flatnonzero(labels == value)
        idx = idx[rng.permutation(len(idx))]
        fold_of[idx] = (offset + np.arange(len(idx))) % k
        offset = (offset + len(idx)) % k
    return FoldAssignment(k, fold_of, tuple(dataset.student_ids))


# ------------------------------------------------------------------ metrics

def auc(scores, labels) -> float:
    """ROC AUC via the Mann-Whitney U statistic (ties count one half)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise AlignmentMismatch("scores and labels differ in length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both labels")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class GroupMetrics:
    group: GroupKey
    n: int
    tp: int
    fn: int
    fp: int
    tn: int
    reported: bool

    @property
    def fnr(self):
        return self.fn / (self.fn + self.tp) if self.fn + self.tp else None

    @property
    def fpr(self):
        return self.fp / (self.fp + self.tn) if self.fp + self.tn else None

    def to_json(self) -> dict:
        return {"group": str(self.group), "n": self.n, "tp": self.tp, "fn": self.fn,
                "fp": self.fp, "tn": self.tn, "fnr": self.fnr, "fpr": self.fpr,
                "reported": self.reported}


def _confusion(pred, truth):
    return (int(np.sum((pred == 1) & (truth == 1))), int(np.sum((pred == 0) & (truth == 1))),
            int(np.sum((pred == 1) & (truth == 0))), int(np.sum((pred == 0) & (truth == 0))))


def confusion_by_group(predictions, labels, dataset: Dataset, spec: GroupSpec,
                       min_reported: int = MIN_REPORTED) -> list:
    """Exact confusion counts for every group of ``spec``, in canonical order.

    ``predictions`` and ``labels`` are aligned with ``dataset.records``.
    Groups with fewer than ``min_reported`` members are flagged unreported.
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if len(predictions) != len(dataset) or len(labels) != len(dataset):
        raise AlignmentMismatch(
            f"{len(predictions)} predictions / {len(labels)} labels for {len(dataset)} records"
        )
    out = []
    for key, idx in partition_by_group(dataset, spec).items():
        tp, fn, fp, tn = _confusion(predictions[idx], labels[idx])
        out.append(GroupMetrics(key, len(idx), tp, fn, fp, tn, len(idx) >= min_reported))
    return out


def rate_gap(rates) -> float | None:
    rates = [r for r in rates if r is not None]
    return max(rates) - min(rates) if len(rates) >= 2 else None


# ------------------------------------------------------------------ configurations

@dataclass(frozen=True)
class Mitigation:
    """What to oversample: nothing (baseline), or ``strategy`` over ``spec``."""

    kind: str = "baseline"
    strategy: Strategy | None = None
    spec: GroupSpec | None = None

    def __post_init__(self):
        if self.kind not in ("baseline", "demographic", "behavioral"):
            raise InputError(f"unknown mitigation kind {self.kind!r}")
        if self.kind == "baseline":
            if self.strategy is not None or self.spec is not None:
                raise InputError("baseline takes no strategy or spec")
            return
        if self.strategy is None or self.spec is None:
            raise InputError(f"{self.kind} mitigation needs a strategy and a spec")
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if self.strategy is Strategy.WITHIN and self.spec.arity < 2:
            raise InputError("within oversampling needs a combined spec")

    @classmethod
    def baseline(cls):
        return cls()

    @property
    def config_id(self) -> str:
        if self.kind == "baseline":
            return "baseline"
        return f"{self.strategy}:{self.spec}"

    def to_json(self) -> dict:
        return {"kind": self.kind,
                "strategy": None if self.strategy is None else str(self.strategy),
                "spec": None if self.spec is None else str(self.spec)}

    @classmethod
    def from_json(cls, obj) -> "Mitigation":
        spec = obj.get("spec")
        return cls(obj["kind"], obj.get("strategy"), None if spec is None else GroupSpec.parse(spec))


@dataclass
class FairnessReport:
    config_id: str
    mitigation: dict
    seed: int
    k: int
    aggregation: str
    audited_attributes: list
    auc_mean: float
    auc_std: float
    fold_aucs: list
    overall_fnr: float | None
    overall_fpr: float | None
    groups: dict
    fnr_gaps: dict
    fpr_gaps: dict
    selection_score: float | None
    flags: list = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, obj) -> "FairnessReport":
        return cls(**obj)

    def to_table(self) -> str:
        return render_report(self.to_json())


def render_report(rep: dict) -> str:
    """Plain-text table for one serialized report."""

    def fmt(v):
        return "  n/a" if v is None else f"{v:.3f}"

    lines = [
        f"configuration {rep['config_id']}  (seed {rep['seed']}, {rep['k']} folds, {rep['aggregation']})",
        f"  AUC {rep['auc_mean']:.3f} +/- {rep['auc_std']:.3f}   overall FNR {fmt(rep['overall_fnr'])}"
        f"   overall FPR {fmt(rep['overall_fpr'])}   selection score {fmt(rep['selection_score'])}",
    ]
    for attr in rep["audited_attributes"]:
        lines.append(f"  {attr}: FNR gap {fmt(rep['fnr_gaps'].get(attr))}, "
                     f"FPR gap {fmt(rep['fpr_gaps'].get(attr))}")
        for g in rep["groups"][attr]:
            if g["reported"]:
                lines.append(f"    {g['group']:<12} n={g['n']:<5} FNR {fmt(g['fnr'])}  FPR {fmt(g['fpr'])}")
            else:
                lines.append(f"    {g['group']:<12} n={g['n']:<5} excluded (<{MIN_REPORTED})")
    for flag in rep["flags"]:
        lines.append(f"  flag: {flag}")
    return "\n".join(lines)


@dataclass
class FoldOutcome:
    fold: int
    train_rows: np.ndarray
    test_rows: np.ndarray
    plan: SamplingPlan | None
    model: object
    scores: np.ndarray | None


@dataclass
class ConfigurationRun:
    report: FairnessReport
    folds: list


def fold_seed(seed: int, fold: int) -> int:
    state = np.random.SeedSequence([int(seed), int(fold)]).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def run_fold(dataset: Dataset, folds: FoldAssignment, fold: int, mitigation: Mitigation,
             predictor: PredictorConfig = PredictorConfig(), seed: int = 0,
             features: np.ndarray | None = None, noise_floor: int = 10) -> FoldOutcome:
    """Rebalance training fold ``fold``, train on it, and score its test fold.

    Raises :class:`LeakageError` if any training row (duplicates included)
    shares a student id with the test fold.
    """
    train_idx = folds.train_indices(fold)
    test_idx = folds.test_indices(fold)
    plan = None
    rows = train_idx
    if mitigation.kind != "baseline":
        train_ds = dataset.subset(train_idx)
        with warnings.catch_warnings():
            # the plan carries the same messages as flags, which the report keeps
            warnings.simplefilter("ignore", OversamplingWarning)
            plan = make_plan(train_ds, mitigation.spec, mitigation.strategy,
                             fold_seed(seed, fold), noise_floor)
        rows = train_idx[apply_plan(train_ds, plan).indices()]
    ids = dataset.student_ids
    if set(ids[rows]) & set(ids[test_idx]):
        raise LeakageError(f"fold {fold}: training and test folds share student ids")
    labels = dataset.labels
    if len(np.unique(labels[rows])) < 2:
        raise SingleClassFold(f"fold {fold}: training rows carry a single label")
    if predictor.kind == EXTERNAL:
        model = None
        scores = external_scores(predictor.command, [dataset.records[i] for i in rows],
                                 [dataset.records[i] for i in test_idx])
    else:
        if features is None:
            features = raw_features(dataset.records)
        model = fit(features[rows], labels[rows], predictor)
        scores = predict_proba(model, features[test_idx])
    return FoldOutcome(fold, rows, test_idx, plan, model, scores)


def run_configuration(dataset: Dataset, mitigation: Mitigation, audited_attributes=None,
                      k: int = 10, seed: int = 0,
                      predictor: PredictorConfig = PredictorConfig(),
                      aggregation: str = "pooled", features: np.ndarray | None = None,
                      noise_floor: int = 10, min_reported: int = MIN_REPORTED) -> ConfigurationRun:
    if aggregation not in ("pooled", "macro"):
        raise InputError(f"unknown aggregation {aggregation!r}")
    audited = list(dataset.schema.names if audited_attributes is None else audited_attributes)
    resolve_names(dataset, audited)
    if mitigation.spec is not None:
        resolve_names(dataset, mitigation.spec.names)
    if features is None and predictor.kind != EXTERNAL:
        features = raw_features(dataset.records)

    folds = stratified_folds(dataset, k, seed)
    labels = dataset.labels
    scores = np.full(len(dataset), np.nan)
    flags = []
    plan_flags: dict = {}
    outcomes = []
    fold_aucs = []
    for f in range(k):
        try:
            out = run_fold(dataset, folds, f, mitigation, predictor, seed, features, noise_floor)
        except SingleClassFold as exc:
            flags.append(f"single-class-fold: {exc}")
            continue
        outcomes.append(out)
        scores[out.test_rows] = out.scores
        fold_aucs.append(auc(out.scores, labels[out.test_rows]))
        if out.plan is not None:
            for msg in out.plan.flags:
                plan_flags.setdefault(msg, []).append(f)
    flags.extend(f"folds {','.join(map(str, fs))}: {msg}" for msg, fs in plan_flags.items())

    scored = ~np.isnan(scores)
    pred = np.where(scores >= predictor.threshold, 1, 0)
    scored_ds = dataset if scored.all() else dataset.subset(np.flatnonzero(scored))
    pred_s, labels_s = pred[scored], labels[scored]
    tp, fn, fp, tn = _confusion(pred_s, labels_s)

    groups, fnr_gaps, fpr_gaps = {}, {}, {}
    for attr in audited:
        metrics = confusion_by_group(pred_s, labels_s, scored_ds, GroupSpec.of(attr), min_reported)
        groups[attr] = [m.to_json() for m in metrics]
        reported = [m for m in metrics if m.reported]
        if aggregation == "pooled":
            fnr_gaps[attr] = rate_gap([m.fnr for m in reported])
            fpr_gaps[attr] = rate_gap([m.fpr for m in reported])
        else:
            fnr_gaps[attr], fpr_gaps[attr] = _macro_gaps(
                dataset, attr, reported, outcomes, pred, labels)
            for g in groups[attr]:
                g["fold_mean_fnr"], g["fold_mean_fpr"] = _fold_means(
                    dataset, attr, g["group"], outcomes, pred, labels)
        if fnr_gaps[attr] is None:
            flags.append(f"{attr}: FNR gap undefined (fewer than two reported groups with positives)")

    defined = [g for g in (fnr_gaps[a] for a in audited) if g is not None]
    report = FairnessReport(
        config_id=mitigation.config_id,
        mitigation=mitigation.to_json(),
        seed=int(seed),
        k=k,
        aggregation=aggregation,
        audited_attributes=audited,
        auc_mean=float(np.mean(fold_aucs)) if fold_aucs else float("nan"),
        auc_std=float(np.std(fold_aucs)) if fold_aucs else float("nan"),
        fold_aucs=[float(a) for a in fold_aucs],
        overall_fnr=fn / (fn + tp) if fn + tp else None,
        overall_fpr=fp / (fp + tn) if fp + tn else None,
        groups=groups,
        fnr_gaps=fnr_gaps,
        fpr_gaps=fpr_gaps,
        selection_score=float(np.mean(defined)) if defined else None,
        flags=flags,
    )
    return ConfigurationRun(report, outcomes)


def _fold_means(dataset, attr, group_str, outcomes, pred, labels):
    col = np.array(dataset.column(attr), dtype=object)
    fnrs, fprs = [], []
    for out in outcomes:
        idx = out.test_rows[col[out.test_rows] == group_str]
        tp, fn, fp, tn = _confusion(pred[idx], labels[idx])
        if fn + tp:
            fnrs.append(fn / (fn + tp))
        if fp + tn:
            fprs.append(fp / (fp + tn))
    return (float(np.mean(fnrs)) if fnrs else None, float(np.mean(fprs)) if fprs else None)


def _macro_gaps(dataset, attr, reported, outcomes, pred, labels):
    means = [_fold_means(dataset, attr, str(m.group), outcomes, pred, labels) for m in reported]
    return rate_gap([a for a, _ in means]), rate_gap([b for _, b in means])


def evaluate_configuration(dataset: Dataset, mitigation: Mitigation, audited_attributes=None,
                           k: int = 10, seed: int = 0, **kwargs) -> FairnessReport:
    return run_configuration(dataset, mitigation, audited_attributes, k, seed, **kwargs).report


# ------------------------------------------------------------------ selection

@dataclass
class Selection:
    chosen: FairnessReport
    trace: list
    flags: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"chosen": self.chosen.config_id, "flags": list(self.flags), "trace": self.trace}


def select_technique(reports, baseline: FairnessReport, degradation_limit: float = 0.15) -> Selection:
    """Lowest mean FNR gap wins, unless its overall FNR exceeds the baseline's by the limit.

    Candidates are ranked by (selection score, overall FNR, config id);
    unscored candidates go last. The first candidate within the degradation
    limit is chosen. When none qualifies, the top-ranked one is returned and
    flagged ``degradation-accepted``.
    """
    reports = list(reports)
    if not reports:
        raise EmptyCandidates("no candidate reports to select from")
    audited = {tuple(r.audited_attributes) for r in reports + [baseline]}
    if len(audited) > 1:
        raise InputError("all reports must be scored on the same audited attributes")

    def rank_key(r):
        score = np.inf if r.selection_score is None else r.selection_score
        fnr = np.inf if r.overall_fnr is None else r.overall_fnr
        return (score, fnr, r.config_id)

    ranked = sorted(reports, key=rank_key)
    base_fnr = baseline.overall_fnr if baseline.overall_fnr is not None else 0.0
    limit = base_fnr + degradation_limit + 1e-12
    trace = []
    chosen = None
    for rank, r in enumerate(ranked, start=1):
        within = r.overall_fnr is None or r.overall_fnr <= limit
        if chosen is not None:
            verdict = "not-needed"
        elif within:
            verdict = "selected"
            chosen = r
        else:
            verdict = "skipped-degradation"
        trace.append({"rank": rank, "config_id": r.config_id,
                      "selection_score": r.selection_score,
                      "overall_fnr": r.overall_fnr, "verdict": verdict})
    flags = []
    if chosen is None:
        chosen = ranked[0]
        trace[0]["verdict"] = "selected-degradation-accepted"
        flags.append("degradation-accepted")
    return Selection(chosen, trace, flags)
