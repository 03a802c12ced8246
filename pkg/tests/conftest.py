import numpy as np
import pytest

from urnsim import DistributionSpec, build_distribution


@pytest.fixture(scope="session")
def zipf2():
    return build_distribution(DistributionSpec(family="zipf", s=2.0))


@pytest.fixture(scope="session")
def zipf_log21():
    return build_distribution(DistributionSpec(family="zipf_log", s=2.0, a=1.0))


@pytest.fixture(scope="session")
def theta_one_log():
    return build_distribution(DistributionSpec(family="theta_one_log"))


@pytest.fixture(scope="session")
def geometric_half():
    return build_distribution(DistributionSpec(family="geometric", q=0.5))


@pytest.fixture()
def rng():
    return np.random.default_rng(np.random.SeedSequence(20240817))
