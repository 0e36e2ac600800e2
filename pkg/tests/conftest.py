import numpy as np
import pytest

from semitick import (
    ConstantIntensity,
    MarkLayout,
    MarketMakingSpec,
    MarketState,
    SaturatingIntensity,
    SemiMarkovKernel,
)


@pytest.fixture(scope="session")
def symmetric_kernel():
    return SemiMarkovKernel(ConstantIntensity(0.5), ConstantIntensity(0.5), 0.01)


@pytest.fixture(scope="session")
def asymmetric_kernel():
    return SemiMarkovKernel(ConstantIntensity(0.8), ConstantIntensity(0.4), 0.01)


@pytest.fixture(scope="session")
def saturating_kernel():
    return SemiMarkovKernel(
        SaturatingIntensity(base=0.2, gain=1.0, rate=2.0),
        SaturatingIntensity(base=0.3, gain=0.5, rate=1.0),
        0.01,
    )


@pytest.fixture(scope="session")
def symmetric_layout(symmetric_kernel):
    return MarkLayout(
        symmetric_kernel,
        ConstantIntensity(1.0),
        ConstantIntensity(1.0),
        (0.1, 0.5, 0.3, 0.1),
        (0.1, 0.5, 0.3, 0.1),
    )


@pytest.fixture(scope="session")
def asymmetric_layout(asymmetric_kernel):
    return MarkLayout(
        asymmetric_kernel,
        ConstantIntensity(1.5),
        ConstantIntensity(1.0),
        (0.2, 0.5, 0.3),
        (0.1, 0.6, 0.3),
    )


@pytest.fixture(scope="session")
def saturating_layout(saturating_kernel):
    return MarkLayout(
        saturating_kernel,
        SaturatingIntensity(base=0.5, gain=0.8, rate=1.5),
        ConstantIntensity(0.9),
        (0.25, 0.5, 0.25),
        (0.25, 0.5, 0.25),
    )


@pytest.fixture(scope="session")
def start_state():
    return MarketState(price=1.0, state=2, age=0.0)
