import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "smogcast",
    deadline=None,
    max_examples=30,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("smogcast")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synth_pipeline():
    """One small synthetic end-to-end preprocessing, shared across tests."""
    from smogcast import ingest, pipeline

    a, b = ingest.synthesize(seed=0, hours=3000)
    spec = pipeline.SplitSpec.single_split(len(a), 0.70, 0.15)
    datasets = pipeline.split(a, b, spec)
    train_a = np.concatenate([c.a for c in datasets.train])
    selection = pipeline.select_features(train_a, datasets.a_names)
    datasets = pipeline.apply_selection(datasets, selection)
    scaler_a = pipeline.fit_scaler(datasets.train, datasets.a_names, "a")
    scaler_b = pipeline.fit_scaler(datasets.train, datasets.b_names, "b")
    scaled = pipeline.scale_datasets(datasets, scaler_a, scaler_b)
    train_pairs, stats = pipeline.generate_pairs(scaled.train)
    val_pairs, _ = pipeline.generate_pairs(scaled.validation)
    test_pairs, _ = pipeline.generate_pairs(scaled.test)
    return {
        "selection": selection,
        "scaler_a": scaler_a,
        "scaler_b": scaler_b,
        "train": train_pairs,
        "validation": val_pairs,
        "test": test_pairs,
        "stats": stats,
        "n_features": train_pairs[0].input.shape[1],
    }
