import numpy as np
import pytest

from subtemper import (
    GpRegressionModel,
    MvnMeanModel,
    RngStream,
    simulate_gp_data,
    simulate_mvn_data,
)


@pytest.fixture(scope="session")
def mvn_model():
    """D=2, N=64 MVN mean model with identity covariance, data attached."""
    proto = MvnMeanModel(2, sigma0=1.0)
    data = simulate_mvn_data(proto, np.array([0.7, -0.3]), 64, RngStream(7).substream(1))
    return proto.with_data(data)


@pytest.fixture(scope="session")
def gp_model():
    """D=2, N=24 GP regression model with simulated data attached."""
    proto = GpRegressionModel(2)
    data, _ = simulate_gp_data(proto, 24, RngStream(5).substream(4))
    return proto.with_data(data)
