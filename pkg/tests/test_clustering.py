import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import adjusted_rand_score
from sklearn.metrics import silhouette_score as sk_silhouette

from fairsampler.clustering import (
    ClusteringResult,
    Standardizer,
    assign_clusters,
    embed_behavior,
    kmeans,
    raw_features,
    select_k,
    silhouette_score,
    summarize_sequence,
)
from fairsampler.data import CLUSTER, AttributeSchema, Dataset, StudentRecord
from fairsampler.errors import CoverageMismatch, DegenerateData, InputError, KTooLarge


def blobs(n_per=40, sigma=0.05, k=3, dim=4, seed=0):
    rng = np.random.default_rng(seed)
    centers = rng.normal(scale=3.0, size=(k, dim))
    x = np.concatenate([c + sigma * rng.normal(size=(n_per, dim)) for c in centers])
    return x, np.repeat(np.arange(k), n_per)


def summary_oracle(seq):
    # slope by an explicit per-feature polyfit
    t = np.arange(len(seq))
    slopes = [np.polyfit(t, seq[:, d], 1)[0] if len(seq) > 1 else 0.0
              for d in range(seq.shape[1])]
    return np.concatenate([seq.mean(0), seq.std(0), seq[-1], slopes])


@pytest.mark.parametrize("steps", [1, 2, 5, 10])
def test_summary_embedding_matches_oracle(rng, steps):
    seq = rng.normal(size=(steps, 3))
    np.testing.assert_allclose(summarize_sequence(seq), summary_oracle(seq), atol=1e-12)


def test_fast_path_matches_per_record(rng):
    schema = AttributeSchema((("g", ("a", "b")),))
    same = [StudentRecord(f"s{i}", {"g": "a"}, rng.normal(size=(6, 2)), 0) for i in range(20)]
    ragged = same + [StudentRecord("x", {"g": "b"}, rng.normal(size=(3, 2)), 1)]
    fast = raw_features(Dataset(schema, same).records)
    slow = np.stack([summarize_sequence(r.behavior) for r in same])
    np.testing.assert_allclose(fast, slow, atol=1e-12)
    np.testing.assert_allclose(raw_features(ragged)[:20], slow, atol=1e-12)


def test_linear_ramp_has_exact_slope():
    seq = np.outer(np.arange(10.0), [0.5, -2.0]) + 3.0
    out = summarize_sequence(seq)
    np.testing.assert_allclose(out[6:8], [0.5, -2.0])
    np.testing.assert_allclose(out[4:6], seq[-1])


def test_standardizer_zero_variance_and_round_trip(rng):
    x = np.c_[rng.normal(3, 2, size=50), np.full(50, 7.0)]
    sc = Standardizer.fit(x)
    z = sc.transform(x)
    np.testing.assert_allclose(z[:, 0].mean(), 0, atol=1e-12)
    np.testing.assert_allclose(z[:, 0].std(), 1, atol=1e-12)
    assert np.all(z[:, 1] == 0)
    back = Standardizer.from_json(sc.to_json())
    np.testing.assert_array_equal(back.transform(x), z)


def test_three_blobs_recovered_exactly():
    x, truth = blobs()
    res = kmeans(x, 3, seed=1)
    labels = np.array([res.assignment[str(i)] for i in range(len(x))])
    assert adjusted_rand_score(truth, labels) == 1.0


def test_select_k_finds_three():
    x, _ = blobs(n_per=30, sigma=0.1, seed=3)
    assert select_k(x, (2, 6), seed=0).k == 3


@pytest.mark.parametrize("seed", range(5))
def test_silhouette_matches_sklearn(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(60, 3))
    labels = rng.integers(0, 4, size=60)
    labels[0] = 9  # a singleton cluster scores 0 in both
    assert silhouette_score(x, labels) == pytest.approx(sk_silhouette(x, labels), abs=1e-12)


def test_silhouette_single_cluster_is_zero():
    assert silhouette_score(np.eye(3), np.zeros(3)) == 0.0


def test_errors():
    with pytest.raises(DegenerateData):
        kmeans(np.ones((10, 2)), 2)
    x = np.repeat(np.eye(3), 4, axis=0)
    with pytest.raises(KTooLarge):
        kmeans(x, 4)
    with pytest.raises(InputError):
        kmeans(x, 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 7))
def test_no_empty_clusters_and_determinism(seed, k):
    rng = np.random.default_rng(seed)
    # heavy duplication stresses the empty-cluster repair
    x = np.repeat(rng.normal(size=(k + 2, 2)), rng.integers(1, 6, size=k + 2), axis=0)
    res = kmeans(x, k, seed=seed, restarts=3)
    assert all(v > 0 for v in res.sizes().values())
    again = kmeans(x, k, seed=seed, restarts=3)
    assert again.assignment == res.assignment
    assert res.inertia_trace[-1] == pytest.approx(res.inertia)


def test_lloyd_inertia_is_monotone():
    x, _ = blobs(n_per=50, sigma=1.0, k=4, seed=5)
    trace = kmeans(x, 4, seed=2, restarts=1).inertia_trace
    assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))


def test_embedding_assignment_and_json(small_dataset, tmp_path):
    emb = embed_behavior(small_dataset)
    assert emb.dim == 4 * small_dataset.feature_dim
    res = kmeans(emb, 3, seed=4)
    res.save(tmp_path / "c.json")
    back = ClusteringResult.load(tmp_path / "c.json")
    assert back.assignment == res.assignment and back.k == 3
    clustered = assign_clusters(small_dataset, back)
    assert set(clustered.column(CLUSTER)) <= {"0", "1", "2"}
    back.assignment.pop(next(iter(back.assignment)))
    with pytest.raises(CoverageMismatch):
        assign_clusters(small_dataset, back)
