"""At-risk detector: L2-regularised logistic regression on the behaviour embedding.

Training uses full-batch gradient descent on

    mean_i [log(1 + exp(z_i)) - y_i z_i] + l2 * ||w||^2,   z_i = x_i . w + b

with features standardised on the training rows only. An external model can
be plugged in through a subprocess that reads record files and writes one
score per line.
"""

from __future__ import annotations

import json
import shlex
import subprocess
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .clustering import Standardizer, raw_features
from .errors import DimensionMismatch, InputError, NonFiniteLoss, SingleClassFold

REFERENCE = "reference-logistic"
EXTERNAL = "external"


@dataclass(frozen=True)
class PredictorConfig:
    kind: str = REFERENCE
    learning_rate: float = 0.05
    epochs: int = 200
    l2: float = 1e-3
    threshold: float = 0.5
    seed: int = 0
    # external models only; "{train}", "{test}" and "{scores}" are substituted
    command: tuple = ()

    def __post_init__(self):
        if self.kind not in (REFERENCE, EXTERNAL):
            raise InputError(f"unknown model kind {self.kind!r}")
        if not self.learning_rate > 0:
            raise InputError("learning_rate must be positive")
        if int(self.epochs) < 1:
            raise InputError("epochs must be >= 1")
        if self.l2 < 0:
            raise InputError("l2 must be >= 0")
        if not 0 < self.threshold < 1:
            raise InputError("threshold must lie in (0, 1)")
        if self.kind == EXTERNAL and not self.command:
            raise InputError("external models need a command")
        object.__setattr__(self, "command", tuple(self.command))

    def to_json(self) -> dict:
        out = asdict(self)
        out["command"] = list(self.command)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "PredictorConfig":
        return cls(**obj)


@dataclass
class TrainedModel:
    weights: np.ndarray
    bias: float
    scaler: Standardizer
    loss_trace: list = field(default_factory=list)
    config: PredictorConfig = field(default_factory=PredictorConfig)

    def to_json(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "standardization": self.scaler.to_json(),
            "loss_trace": list(self.loss_trace),
            "config": self.config.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrainedModel":
        return cls(np.asarray(obj["weights"], dtype=float), float(obj["bias"]),
                   Standardizer.from_json(obj["standardization"]), list(obj["loss_trace"]),
                   PredictorConfig.from_json(obj["config"]))


def sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def loss_and_grad(w, b, x, y, l2, sample_weight=None):
    """Regularised mean logistic loss and its gradient ``(loss, dw, db)``.

    ``sample_weight`` turns the mean into a weighted mean; duplicating a row
    is the same as giving it weight 2.
    """
    z = x @ w + b
    if sample_weight is None:
        sample_weight = np.ones(len(y))
    sw = sample_weight / sample_weight.sum()
    loss = float(sw @ (np.logaddexp(0.0, z) - y * z) + l2 * (w @ w))
    r = sw * (sigmoid(z) - y)
    return loss, x.T @ r + 2 * l2 * w, float(r.sum())


def fit(raw: np.ndarray, y: np.ndarray, config: PredictorConfig = PredictorConfig()) -> TrainedModel:
    """Train the reference model on an unstandardised feature matrix."""
    y = np.asarray(y, dtype=float)
    if len(np.unique(y)) < 2:
        raise SingleClassFold("training rows contain a single label")
    scaler = Standardizer.fit(raw)
    x = scaler.transform(raw)
    rng = np.random.default_rng(config.seed)
    w = rng.uniform(-0.01, 0.01, size=x.shape[1])
    b = 0.0
    trace = []
    for _ in range(int(config.epochs)):
        loss, gw, gb = loss_and_grad(w, b, x, y, config.l2)
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"loss became {loss}")
        trace.append(loss)
        w = w - config.learning_rate * gw
        b = b - config.learning_rate * gb
    loss, _, _ = loss_and_grad(w, b, x, y, config.l2)
    if not np.isfinite(loss) or not np.all(np.isfinite(w)):
        raise NonFiniteLoss(f"loss became {loss}")
    trace.append(loss)
    return TrainedModel(w, float(b), scaler, trace, config)


def train(train_records, config: PredictorConfig = PredictorConfig()) -> TrainedModel:
    records = list(train_records)
    return fit(raw_features(records), np.array([r.label for r in records]), config)


def _as_features(records_or_raw):
    if isinstance(records_or_raw, np.ndarray):
        return records_or_raw
    return raw_features(list(records_or_raw))


def predict_proba(model: TrainedModel, records) -> np.ndarray:
    """Scores in (0, 1); accepts records or an unstandardised feature matrix."""
    raw = _as_features(records)
    if raw.ndim != 2 or raw.shape[1] != len(model.weights):
        raise DimensionMismatch(f"expected {len(model.weights)} features, got {raw.shape}")
    return sigmoid(model.scaler.transform(raw) @ model.weights + model.bias)


def predict_label(model: TrainedModel, records, threshold: float | None = None) -> np.ndarray:
    threshold = model.config.threshold if threshold is None else threshold
    return (predict_proba(model, records) >= threshold).astype(int)


def external_scores(command, train_records, test_records) -> np.ndarray:
    """Run an external model: ``command`` gets train/test JSONL paths and writes scores.

    The score file holds one decimal number per line, in the order of the
    test records.
    """
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        paths = {"train": tmp / "train.jsonl", "test": tmp / "test.jsonl",
                 "scores": tmp / "scores.txt"}
        for name, recs in (("train", train_records), ("test", test_records)):
            with open(paths[name], "w") as fh:
                for r in recs:
                    fh.write(json.dumps(r.to_json()) + "\n")
        if isinstance(command, str):
            command = shlex.split(command)
        argv = [str(a).format(**{k: str(v) for k, v in paths.items()}) for a in command]
        proc = subprocess.run(argv, capture_output=True, text=True)
        if proc.returncode != 0:
            raise RuntimeError(f"external model failed ({proc.returncode}): {proc.stderr.strip()}")
        lines = [ln for ln in paths["scores"].read_text().splitlines() if ln.strip()]
    scores = np.array([float(ln) for ln in lines])
    if len(scores) != len(test_records):
        raise DimensionMismatch(f"external model wrote {len(scores)} scores for {len(test_records)} records")
    return scores
