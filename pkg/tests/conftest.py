import pytest
from hypothesis import settings

from diamondgmc.lattice import LatticeParams
from diamondgmc.rfunction import VarianceProfile

# property tests explore a fixed corpus so the suite is reproducible
settings.register_profile("deterministic", derandomize=True)
settings.load_profile("deterministic")


@pytest.fixture(scope="session")
def profile2():
    return VarianceProfile(2)


@pytest.fixture(scope="session")
def profile3():
    return VarianceProfile(3)


@pytest.fixture(scope="session")
def params2():
    return LatticeParams(2, 2)
