import numpy as np
import pytest

from mssv.model import ModelSpec


@pytest.fixture
def spec_smoke() -> ModelSpec:
    """Small reference model used across the unit tests."""
    return ModelSpec(
        r=0.05, rho1=-0.6, rho2=-0.4, rho12=0.3,
        eps=0.01, delta=0.01,
        m_y=0.0, nu_y=0.5, m_z=0.4, nu_z=0.3,
        a=1.0, b=0.5, gamma1=0.3, gamma2=0.25,
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
