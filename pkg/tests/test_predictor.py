import sys
import textwrap

import numpy as np
import pytest

from fairsampler.errors import DimensionMismatch, InputError, SingleClassFold
from fairsampler.predictor import (
    EXTERNAL,
    PredictorConfig,
    TrainedModel,
    external_scores,
    fit,
    loss_and_grad,
    predict_label,
    predict_proba,
    sigmoid,
    train,
)


def numeric_grad(f, theta, h=1e-6):
    g = np.zeros_like(theta)
    for i in range(len(theta)):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


@pytest.mark.parametrize("seed", range(20))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    n, d = rng.integers(5, 40), rng.integers(1, 6)
    x = rng.normal(size=(n, d))
    y = rng.integers(0, 2, size=n).astype(float)
    sw = rng.uniform(0.5, 3, size=n) if seed % 2 else None
    theta = rng.normal(size=d + 1)

    def f(t):
        return loss_and_grad(t[:-1], t[-1], x, y, 0.01, sw)[0]

    _, gw, gb = loss_and_grad(theta[:-1], theta[-1], x, y, 0.01, sw)
    np.testing.assert_allclose(np.r_[gw, gb], numeric_grad(f, theta), rtol=1e-5, atol=1e-9)


def test_sample_weight_equals_duplication(rng):
    x = rng.normal(size=(12, 3))
    y = rng.integers(0, 2, size=12).astype(float)
    w, b = rng.normal(size=3), 0.3
    counts = rng.integers(1, 4, size=12)
    dup = loss_and_grad(w, b, np.repeat(x, counts, axis=0), np.repeat(y, counts), 0.1)
    wt = loss_and_grad(w, b, x, y, 0.1, counts.astype(float))
    assert dup[0] == pytest.approx(wt[0], rel=1e-12)
    np.testing.assert_allclose(dup[1], wt[1], rtol=1e-12)


def test_sigmoid_is_stable():
    z = np.array([-1000.0, 0.0, 1000.0])
    np.testing.assert_array_equal(sigmoid(z), [0.0, 0.5, 1.0])


def test_training_reduces_loss_and_separates(rng):
    x = rng.normal(size=(200, 4))
    y = (x @ [1.5, -1, 0, 0.5] + 0.3 * rng.normal(size=200) > 0).astype(int)
    model = fit(x, y)
    trace = model.loss_trace
    assert len(trace) == 201
    assert all(b <= a for a, b in zip(trace, trace[1:]))
    assert (predict_label(model, x) == y).mean() > 0.9


def test_single_class_and_dimension_errors(rng):
    x = rng.normal(size=(10, 2))
    with pytest.raises(SingleClassFold):
        fit(x, np.zeros(10))
    model = fit(x, np.arange(10) % 2)
    with pytest.raises(DimensionMismatch):
        predict_proba(model, rng.normal(size=(3, 5)))


def test_config_validation():
    for bad in ({"learning_rate": 0}, {"epochs": 0}, {"l2": -1}, {"threshold": 1.0},
                {"kind": "svm"}, {"kind": EXTERNAL}):
        with pytest.raises(InputError):
            PredictorConfig(**bad)


def test_model_json_round_trip(small_dataset):
    model = train(small_dataset.records, PredictorConfig(epochs=20, seed=3))
    back = TrainedModel.from_json(model.to_json())
    np.testing.assert_array_equal(predict_proba(back, small_dataset.records),
                                  predict_proba(model, small_dataset.records))
    assert back.config == model.config


def test_external_model_protocol(tmp_path, small_dataset):
    script = tmp_path / "model.py"
    # scores each test record by its first behaviour value
    script.write_text(textwrap.dedent("""
        import json, sys
        _, train, test, out = sys.argv
        assert sum(1 for _ in open(train)) > 0
        with open(out, "w") as fh:
            for line in open(test):
                rec = json.loads(line)
                fh.write(f"{rec['behavior'][0][0]}\\n")
    """))
    cmd = [sys.executable, str(script), "{train}", "{test}", "{scores}"]
    recs = small_dataset.records
    scores = external_scores(cmd, recs[:50], recs[50:])
    np.testing.assert_allclose(scores, [r.behavior[0, 0] for r in recs[50:]])
    bad = [sys.executable, "-c", "import sys; sys.exit(3)"]
    with pytest.raises(RuntimeError):
        external_scores(bad, recs[:5], recs[5:])
