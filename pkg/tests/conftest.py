import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from dualseg import ExperimentConfig, GeneratorSpec, generate_sample

torch.set_num_threads(1)

# CPU timing is noisy under load; correctness only, no deadlines.
settings.register_profile(
    "desk", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("desk")

TINY = ExperimentConfig(image_size=64, embed_dim=32, num_heads=2, pixel_dim=16,
                        ssm_state_dim=4, batch_size=2, epochs=2)


@pytest.fixture(scope="session")
def tiny_config() -> ExperimentConfig:
    return TINY


@pytest.fixture(scope="session")
def tiny_spec() -> GeneratorSpec:
    return GeneratorSpec.for_image_size(64)


@pytest.fixture(scope="session")
def tiny_samples(tiny_spec):
    samples = [generate_sample(seed, tiny_spec) for seed in range(4)]
    for i, s in enumerate(samples):
        s.sample_id = f"sample_{i:04d}"
        s.validate()
    return samples


def random_label_map(rng: np.random.Generator, size: int, max_instances: int,
                     num_classes: int = 2) -> tuple[np.ndarray, dict[int, int]]:
    """Random disc instances (later ids overwrite earlier ones) + classes."""
    ids = np.zeros((size, size), np.int32)
    n = int(rng.integers(0, max_instances + 1))
    yy, xx = np.mgrid[0:size, 0:size]
    for k in range(1, n + 1):
        cy, cx = rng.uniform(0, size, 2)
        r = rng.uniform(1.0, max(2.0, size / 4))
        ids[(yy - cy) ** 2 + (xx - cx) ** 2 <= r ** 2] = k
    present = [int(k) for k in np.unique(ids) if k != 0]
    classes = {k: int(rng.integers(1, num_classes + 1)) for k in present}
    # overwriting can shrink earlier ids to zero pixels; relabel contiguously
    relabel = {old: new for new, old in enumerate(present, start=1)}
    out = np.zeros_like(ids)
    for old, new in relabel.items():
        out[ids == old] = new
    return out, {relabel[k]: c for k, c in classes.items()}
