import pytest

from corridor_rl.network import NetworkConfig, build_corridor, mini_config


@pytest.fixture(scope="session")
def full_network():
    return build_corridor(NetworkConfig())


@pytest.fixture(scope="session")
def mini_network():
    return build_corridor(mini_config())
