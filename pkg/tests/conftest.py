import numpy as np
import pytest

from fairsampler.data import AttributeSchema, Dataset, StudentRecord


def make_dataset(rows, schema=None, seed=0, steps=4, dim=2):
    """Dataset from ``(attributes, label)`` pairs with random behaviour."""
    rng = np.random.default_rng(seed)
    rows = list(rows)
    if schema is None:
        names = sorted({k for attrs, _ in rows for k in attrs})
        schema = AttributeSchema(tuple(
            (n, tuple(sorted({a[n] for a, _ in rows} | {"_unused"}))) for n in names))
    records = [StudentRecord(f"s{i:04d}", attrs, rng.normal(size=(steps, dim)), label)
               for i, (attrs, label) in enumerate(rows)]
    return Dataset(schema, records)


def from_counts(counts, name="g", seed=0):
    """Single-attribute dataset with ``counts[value]`` records per value; labels alternate."""
    rows = []
    for value, c in counts.items():
        rows += [({name: value}, i % 2) for i in range(c)]
    return make_dataset(rows, seed=seed)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_dataset():
    rows = []
    for g, s, y, n in [("F", "H", 0, 12), ("F", "H", 1, 8), ("F", "M", 0, 6), ("F", "M", 1, 14),
                       ("M", "H", 0, 15), ("M", "H", 1, 5), ("M", "M", 0, 9), ("M", "M", 1, 11)]:
        rows += [({"gender": g, "school": s}, y)] * n
    schema = AttributeSchema((("gender", ("F", "M")), ("school", ("H", "M"))))
    return make_dataset(rows, schema=schema, seed=7)
