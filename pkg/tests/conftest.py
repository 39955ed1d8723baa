import numpy as np
import pytest

from advkit.dataset import generate_dataset
from advkit.image import Image
from advkit.model import train
from advkit.rng import SplitMix64


def random_image(seed: int, size: int = 32) -> Image:
    rng = np.random.default_rng(seed)
    return Image(rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8))


def natural_image(seed: int = 7, size: int = 64) -> Image:
    """Smooth photo-like test image: low-frequency gradients plus texture."""
    rng = SplitMix64(seed)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64) / size
    base = np.stack(
        [
            120 + 80 * np.sin(2.2 * xs + 0.5) * np.cos(1.7 * ys),
            110 + 70 * np.cos(1.3 * xs) * np.sin(2.9 * ys + 1.0),
            100 + 60 * np.sin(1.9 * (xs + ys)),
        ],
        axis=2,
    )
    base += 6.0 * rng.normals(size * size * 3).reshape(size, size, 3)
    return Image(np.clip(np.floor(base + 0.5), 0, 255).astype(np.uint8))


@pytest.fixture(scope="session")
def bundled_data():
    return generate_dataset(seed=0)


@pytest.fixture(scope="session")
def bundled_train(bundled_data):
    return bundled_data[0]


@pytest.fixture(scope="session")
def bundled_test(bundled_data):
    return bundled_data[1]


@pytest.fixture(scope="session")
def victim_params(bundled_train):
    params, _ = train(bundled_train, epochs=10, lr=0.05, seed=0)
    return params


@pytest.fixture(scope="session")
def shadow_params(bundled_train):
    """Same data as the victim, different seed: the transfer-attack setup."""
    params, _ = train(bundled_train, epochs=10, lr=0.05, seed=100)
    return params


@pytest.fixture(scope="session")
def defended_stack(bundled_train):
    """Hardened params + deployment pipeline; built once, timed."""
    import time

    from advkit.defense import train_defended

    t0 = time.monotonic()
    params, deploy = train_defended(bundled_train, seed=0)
    return params, deploy, time.monotonic() - t0


@pytest.fixture(scope="session")
def small_data():
    """Tiny corpus for unit tests that only need a working model."""
    train_ds, test_ds = generate_dataset(seed=3, n_train=96, n_test=30)
    return train_ds, test_ds


@pytest.fixture(scope="session")
def small_params(small_data):
    params, _ = train(small_data[0], epochs=6, lr=0.05, seed=1)
    return params
