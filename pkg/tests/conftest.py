import numpy as np
import pytest

from dualcv import ModelSpec, Payoff, StreamKey, fit_value_functions
from dualcv.streams import uniform_open

# correlation matrix of the 5-asset example configuration
RHO_5D = np.array([
    [1.0, 0.9, 0.0, 0.0, 0.2],
    [0.9, 1.0, 0.0, 0.0, 0.2],
    [0.0, 0.0, 1.0, -0.5, 0.2],
    [0.0, 0.0, -0.5, 1.0, -0.2],
    [0.2, 0.2, 0.2, -0.2, 1.0],
])


def make_model_2d(**overrides):
    params = dict(dim=2, rate=0.0, dividends=0.02, sigmas=0.2, rho=np.eye(2),
                  spot=100.0, horizon=1.0, n_dates=20)
    params.update(overrides)
    return ModelSpec(**params)


def make_model_5d(**overrides):
    params = dict(dim=5, rate=0.0, dividends=0.02, sigmas=0.2, rho=RHO_5D,
                  spot=100.0, horizon=1.0, n_dates=10)
    params.update(overrides)
    return ModelSpec(**params)


@pytest.fixture(scope="session")
def model2d():
    return make_model_2d()


@pytest.fixture(scope="session")
def payoff100():
    return Payoff(strike=100.0)


@pytest.fixture(scope="session")
def vfun2d(model2d, payoff100):
    """Moderate-size value-function fit shared by statistical tests."""
    return fit_value_functions(model2d, payoff100, 20_000, 2, StreamKey(seed=2024))


# --- test doubles -----------------------------------------------------------


class FunctionValue:
    """Value-function double applying one callable at every date."""

    def __init__(self, fn):
        self.fn = fn

    def value(self, date, x):
        return self.fn(np.asarray(x, dtype=np.float64))


def zero_value():
    return FunctionValue(lambda x: np.zeros(x.shape[:-1]))


def constant_value(c):
    return FunctionValue(lambda x: np.full(x.shape[:-1], float(c)))


def first_coordinate_value():
    return FunctionValue(lambda x: x[..., 0])


class TwoAtomDynamics:
    """Additive walk with innovations of +-1, each with probability 1/2."""

    def __init__(self, spot=100.0, n_dates=1):
        self.dim = 1
        self.m = 1
        self.n_dates = n_dates
        self.spot = np.array([float(spot)])

    def step(self, x, xi, date):
        return np.asarray(x, dtype=np.float64) + np.asarray(xi, dtype=np.float64)

    def innovations(self, key, shape, offset=0):
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        count = int(np.prod(shape)) if shape else 1
        u = uniform_open(key, count, offset)
        return np.where(u < 0.5, -1.0, 1.0).reshape(shape)


def gauss_hermite_expectation(fn, n_nodes=64):
    """E[fn(Z)] for standard normal Z via Gauss-Hermite quadrature."""
    nodes, weights = np.polynomial.hermite_e.hermegauss(n_nodes)
    weights = weights / weights.sum()
    return float(np.sum(weights * fn(nodes)))
