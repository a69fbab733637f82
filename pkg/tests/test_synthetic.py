import json

import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from fairsampler.clustering import embed_behavior, kmeans
from fairsampler.data import load_dataset
from fairsampler.errors import InvalidConfig, UnknownPreset
from fairsampler.evaluation import Mitigation, run_configuration
from fairsampler.synthetic import (
    PRESETS,
    ScenarioConfig,
    fit_coupling,
    generate,
    latent_trajectories,
    population_summary,
    preset,
)


def shares(values):
    vals, counts = np.unique(values, return_counts=True)
    return dict(zip(vals, counts / counts.sum()))


def mutual_information(a, b):
    """Plug-in MI in nats between two discrete sequences."""
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    joint = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(joint, (ai, bi), 1)
    joint /= joint.sum()
    outer = joint.sum(1, keepdims=True) * joint.sum(0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / outer[nz])))


def simple_config(**changes):
    base = dict(n_students=50, attributes=(("g", ("a", "b"), (0.5, 0.5)),),
                archetypes=("x", "y"), trajectories=np.zeros((2, 3, 1)), noise=0.1,
                coupling=np.full((2, 2), 0.5), outcome_logits=(0.0, 0.0))
    base.update(changes)
    return ScenarioConfig(**base)


@pytest.fixture(scope="module")
def tuglet():
    return preset("tuglet-like")


@pytest.fixture(scope="module")
def flipped():
    return preset("flipped-like")


# ---------------------------------------------------------------- config and generation


@pytest.mark.parametrize("changes", [
    {"n_students": 0},
    {"noise": 0.0},
    {"attributes": (("g", ("a", "b"), (0.5, 0.6)),)},
    {"coupling": np.array([[0.5, 0.4], [0.5, 0.5]])},
    {"outcome_logits": (0.0,)},
    {"trajectories": np.zeros((3, 3, 1))},
])
def test_config_validation(changes):
    with pytest.raises(InvalidConfig):
        simple_config(**changes)


def test_generation_is_deterministic_and_valid():
    cfg = preset("uniform-null").with_(n_students=300, seed=9)
    a, b = generate(cfg), generate(cfg)
    assert a.dataset == b.dataset and a.archetypes == b.archetypes
    assert generate(cfg.with_(seed=10)).dataset != a.dataset
    assert set(a.archetypes) == set(a.dataset.student_ids)


def test_config_json_round_trip(tuglet):
    back = ScenarioConfig.from_json(json.loads(json.dumps(tuglet.to_json())))
    assert generate(back.with_(n_students=100)).dataset == generate(tuglet.with_(n_students=100)).dataset


def test_write_round_trip(tmp_path, flipped):
    cohort = generate(flipped.with_(n_students=120))
    for fmt in ("jsonl", "csv"):
        out = cohort.write(tmp_path / fmt, fmt)
        back = load_dataset(out / f"records.{fmt}", out / "schema.json", fmt=fmt)
        assert back == cohort.dataset
        truth = json.loads((out / "ground_truth.json").read_text())
        assert truth["archetypes"] == cohort.archetypes
        assert truth["archetype_names"] == list(flipped.archetypes)


def test_unknown_preset():
    with pytest.raises(UnknownPreset):
        preset("tuglet")
    assert set(PRESETS) == {"flipped-like", "tuglet-like", "uniform-null"}


def test_fit_coupling_hits_shares(rng):
    cell_p = np.array([0.2, 0.3, 0.5])
    tilt = rng.uniform(0.2, 5, size=(3, 4))
    target = np.array([0.1, 0.2, 0.3, 0.4])
    rows = fit_coupling(cell_p, tilt, target)
    np.testing.assert_allclose(rows.sum(1), 1, atol=1e-12)
    np.testing.assert_allclose(cell_p @ rows, target, atol=1e-9)


def test_latent_trajectories_are_linear_ramps():
    traj = latent_trajectories([[1, 2]], [[1, 0], [0, 1]], n_steps=4)
    np.testing.assert_allclose(traj[0, -1], [1, 2])
    np.testing.assert_allclose(np.diff(traj[0], axis=0), 0.25 * np.array([[1, 2]] * 3))


def test_low_noise_archetypes_are_recovered(tuglet):
    cohort = generate(tuglet.with_(noise=1e-3, n_students=600, seed=3))
    res = kmeans(embed_behavior(cohort.dataset), len(tuglet.archetypes), seed=0)
    ids = cohort.dataset.student_ids
    truth = [cohort.archetypes[s] for s in ids]
    found = [res.assignment[s] for s in ids]
    assert adjusted_rand_score(truth, found) >= 0.95


def test_uniform_coupling_has_no_mutual_information():
    cohort = generate(preset("uniform-null").with_(n_students=5000, seed=1))
    ds = cohort.dataset
    cells = [f"{g}|{r}" for g, r in zip(ds.column("gender"), ds.column("region"))]
    arche = [cohort.archetypes[s] for s in ds.student_ids]
    assert mutual_information(cells, arche) < 0.02


# ---------------------------------------------------------------- published marginals


def test_population_level_targets(tuglet, flipped):
    t = population_summary(tuglet)
    assert t["label_rate"] == pytest.approx(0.47, abs=1e-9)
    assert t["attributes"]["school"]["share_of_positives"]["M"] == pytest.approx(0.58, abs=1e-9)
    np.testing.assert_allclose(list(t["archetype_shares"].values()),
                               [0.14, 0.23, 0.34, 0.04, 0.13, 0.12], atol=1e-9)
    f = population_summary(flipped)
    assert f["label_rate"] == pytest.approx(0.42, abs=1e-9)
    # the published profile shares sum to 101%, so they are renormalized
    published = np.array([0.15, 0.16, 0.26, 0.24, 0.20])
    np.testing.assert_allclose(list(f["archetype_shares"].values()),
                               published / published.sum(), atol=1e-9)
    assert f["attributes"]["country"]["share_of_positives"]["CO"] == pytest.approx(0.62, abs=0.01)


def test_flipped_marginals_at_scale(flipped):
    ds = generate(flipped.with_(n_students=10_000, seed=2)).dataset
    g = shares(ds.column("gender"))
    assert abs(g["F"] - 0.35) <= 0.02 and abs(g["M"] - 0.65) <= 0.02
    assert abs(ds.labels.mean() - 0.42) <= 0.02


def test_tuglet_school_interaction_at_scale(tuglet):
    ds = generate(tuglet.with_(n_students=10_000, seed=2)).dataset
    school = np.array(ds.column("school"))
    assert abs(np.mean(school[ds.labels == 1] == "M") - 0.58) <= 0.03
    g = shares(ds.column("gender"))
    assert abs(g["F"] - 0.48) <= 0.02 and abs(g["M"] - 0.51) <= 0.02
    assert abs(ds.labels.mean() - 0.47) <= 0.02


# ---------------------------------------------------------------- statistical structure


@pytest.mark.slow
def test_uniform_null_has_small_gaps():
    gaps = []
    for seed in range(10):
        ds = generate(preset("uniform-null").with_(seed=seed)).dataset
        rep = run_configuration(ds, Mitigation.baseline(), ["gender", "region"], seed=seed).report
        gaps.append([rep.fnr_gaps["gender"], rep.fnr_gaps["region"]])
    assert np.all(np.mean(gaps, axis=0) < 0.05)


@pytest.mark.slow
def test_flipped_females_are_missed_more(flipped):
    worse = 0
    for seed in range(10):
        ds = generate(flipped.with_(seed=seed)).dataset
        rep = run_configuration(ds, Mitigation.baseline(), ["gender"], seed=seed).report
        fnr = {g["group"]: g["fnr"] for g in rep.groups["gender"]}
        worse += fnr["F"] > fnr["M"]
    assert worse >= 8
