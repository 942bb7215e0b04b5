import numpy as np
import pytest

from fairslate import (
    ArrivalSchedule,
    Dataset,
    PreferenceStore,
    ProviderCatalog,
    SyntheticSpec,
    generate_dataset,
)


def make_store(matrix, users=None, items=None):
    matrix = np.asarray(matrix, dtype=np.float64)
    n_users, n_items = matrix.shape
    users = users or [f"u{j}" for j in range(n_users)]
    items = items or [f"i{j}" for j in range(n_items)]
    return PreferenceStore(users, items, matrix)


@pytest.fixture
def tiny_dataset():
    """4 users x 6 items x 3 providers over 2 intervals, fully handcrafted."""
    matrix = np.array(
        [
            [0.9, 0.8, 0.7, 0.3, 0.2, 0.1],
            [0.1, 0.9, 0.2, 0.8, 0.3, 0.7],
            [0.5, 0.5, 0.5, 0.5, 0.5, 0.5],
            [0.0, 0.1, 0.2, 0.3, 0.4, 0.9],
        ]
    )
    store = make_store(matrix)
    catalog = ProviderCatalog(
        {"i0": "pa", "i1": "pa", "i2": "pa", "i3": "pb", "i4": "pb", "i5": "pc"}
    )
    schedule = ArrivalSchedule(
        arrivals=((1, "u0"), (1, "u1"), (2, "u2"), (2, "u3")),
        interval_count=2,
    )
    return Dataset(store=store, catalog=catalog, schedule=schedule)


@pytest.fixture(scope="session")
def reference_dataset():
    """The standard mid-size benchmark: skewed providers, sinusoidal traffic."""
    spec = SyntheticSpec(
        users=1000,
        items=500,
        providers=20,
        score_distribution="beta-skewed",
        provider_size_skew=1.0,
        traffic_pattern="sinusoidal",
        seed=42,
    )
    return generate_dataset(spec, intervals=8)
