import numpy as np
import pytest
from hypothesis import settings

from faith import Volume, write_volume

settings.register_profile("ci", max_examples=25, deadline=None)
settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


@pytest.fixture
def volume_on_disk(tmp_path):
    """Factory writing a zyx array as a raw+sidecar pair, returning the path."""

    def _write(data_zyx, name="vol"):
        raw, _ = write_volume(tmp_path / name, np.asarray(data_zyx))
        return raw

    return _write


@pytest.fixture
def small_noise_volume(rng):
    data = rng.integers(0, 256, size=(12, 12, 12)).astype(np.uint8)
    return Volume.from_array(data)
