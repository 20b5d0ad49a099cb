import numpy as np
import pytest

from pdepl.models import (YeastModelConfig, YEAST_TRUE_THETA,
                          build_yeast_model, single_node_model)


@pytest.fixture(scope="session")
def yeast_model():
    return build_yeast_model(YeastModelConfig())


@pytest.fixture(scope="session")
def yeast_model_71():
    return build_yeast_model(YeastModelConfig(n_nodes=71))


@pytest.fixture(scope="session")
def theta_true():
    return YEAST_TRUE_THETA.copy()


def make_scalar_linear_model(t_final=2.0):
    """u' = -theta*u + 1, u(0) = 0; S(theta) = (1 - exp(-theta t)) / theta."""

    def rhs(theta, u, t):
        return -theta[0] * u + 1.0

    def jac_u(theta, u, t):
        return np.array([[-theta[0]]])

    def jac_theta(theta, u, t):
        return np.array([[-u[0]]])

    def d2_uu(theta, u, t, a, b):
        return np.zeros(1)

    def d2_thetau(theta, u, t, i, a):
        return -a

    def d2_thetatheta(theta, u, t, i, j):
        return np.zeros(1)

    return single_node_model(rhs, jac_u, jac_theta, n_param=1,
                             t_final=t_final, u0=[0.0], d2_uu=d2_uu,
                             d2_thetau=d2_thetau,
                             d2_thetatheta=d2_thetatheta,
                             name="scalar-linear")


def scalar_linear_solution(theta, t):
    return (1.0 - np.exp(-theta * t)) / theta


@pytest.fixture
def scalar_model():
    return make_scalar_linear_model()
