import numpy as np
import pytest

from src.config_schema import Group, LesionGeometry, NetworkConfig, PhantomSpec


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def small_network_config() -> NetworkConfig:
    return NetworkConfig(
        input_extents=(8, 8, 3, 4),
        channel_widths=[2, 4],
        time_pool_schedule=[2, 2],
        dtype="float64",
    )


@pytest.fixture
def small_phantom_spec() -> PhantomSpec:
    return PhantomSpec(
        extents=(16, 16, 3, 8),
        lesion=LesionGeometry(penumbra_radii=(4.0, 4.0, 1.5), core_radii=(2.0, 2.0, 1.0)),
        groups=[Group.LVO, Group.NON_LVO, Group.WIS],
        seed=7,
    )
