import numpy as np
import pytest

from pdepl.errors import CapabilityError
from pdepl.likelihood import (Dataset, NoiseSpec, Observation, ObsOps,
                              generate_data, nll, nll_grad, nll_hess)
from pdepl.models import TOL_TIGHT, simulate
from pdepl.sensitivities import adjoint_gradient, forward_sensitivities

from conftest import make_scalar_linear_model, scalar_linear_solution


class TestScalarModel:
    def test_first_order_matches_analytic_derivative(self, scalar_model):
        theta = np.array([1.0])
        times = [0.0, 0.5, 1.0, 2.0]
        b = forward_sensitivities(scalar_model, theta, times, order=1,
                                  tol=(1e-12, 1e-10))
        for k, t in enumerate(times):
            exact = (theta[0] * t * np.exp(-theta[0] * t)
                     - 1.0 + np.exp(-theta[0] * t)) / theta[0] ** 2
            # e = dS/dtheta = (theta t e^{-theta t} - 1 + e^{-theta t})/theta^2
            if t == 0.0:
                assert b.first[k, 0, 0] == 0.0
            else:
                assert b.first[k, 0, 0] == pytest.approx(exact, rel=1e-7)
            assert b.trajectory.states[k, 0] == pytest.approx(
                scalar_linear_solution(theta[0], t), rel=1e-8, abs=1e-12)

    def test_second_order_matches_fd_of_first(self, scalar_model):
        theta = np.array([1.0])
        times = [0.0, 1.0, 2.0]
        b2 = forward_sensitivities(scalar_model, theta, times, order=2,
                                   tol=(1e-12, 1e-10))
        h = 1e-4
        bp = forward_sensitivities(scalar_model, theta + h, times, order=1,
                                   tol=(1e-12, 1e-10))
        bm = forward_sensitivities(scalar_model, theta - h, times, order=1,
                                   tol=(1e-12, 1e-10))
        fd = (bp.first[:, 0, 0] - bm.first[:, 0, 0]) / (2 * h)
        assert np.allclose(b2.second_at(0, 0)[:, 0], fd, rtol=1e-5,
                           atol=1e-9)
        assert np.all(b2.second_at(0, 0)[0] == 0.0)

    def test_order_two_requires_callbacks(self):
        model = make_scalar_linear_model()
        model = type(model)(**{**model.__dict__, "d2_uu": None})
        with pytest.raises(CapabilityError):
            forward_sensitivities(model, np.array([1.0]), [0.0, 1.0], order=2)


@pytest.fixture(scope="module")
def yeast_bundle2(yeast_model_71, theta_true):
    return forward_sensitivities(yeast_model_71, theta_true,
                                 [0.0, 30.0, 100.0], order=2, tol=TOL_TIGHT)


class TestYeastSensitivities:
    def test_initial_conditions_vanish(self, yeast_bundle2):
        assert np.all(yeast_bundle2.first[0] == 0.0)
        assert np.all(yeast_bundle2.second_at(2, 3)[0] == 0.0)

    def test_static_scale_params_have_zero_sensitivities(self, yeast_bundle2):
        assert np.all(yeast_bundle2.first[:, 4:, :] == 0.0)
        assert np.all(yeast_bundle2.second_at(4, 4) == 0.0)
        assert np.all(yeast_bundle2.second_at(0, 5) == 0.0)

    def test_first_order_matches_fd(self, yeast_model_71, theta_true,
                                    yeast_bundle2):
        # FD sims need tighter tolerances than the bundle so the solver
        # noise floor stays below the comparison threshold
        t_idx, t = 2, 100.0
        for i in (0, 1, 2, 3):
            h = 1e-3 * theta_true[i]
            tp, tm = theta_true.copy(), theta_true.copy()
            tp[i] += h
            tm[i] -= h
            fd_tol = (1e-12, 1e-10)
            up = simulate(yeast_model_71, tp, [t], tol=fd_tol).states[0]
            um = simulate(yeast_model_71, tm, [t], tol=fd_tol).states[0]
            fd = (up - um) / (2 * h)
            e = yeast_bundle2.first[t_idx, i]
            assert np.max(np.abs(e - fd)) / np.max(np.abs(fd)) < 1e-5

    def test_beta_sensitivity_is_linear_response(self, yeast_model_71,
                                                 theta_true, yeast_bundle2):
        # the source is linear in beta, so e_beta = u_src / beta where u_src
        # is the response to the unit-beta source; equivalently the FD of
        # e_beta in beta reproduces z_(beta,beta)
        h = 1e-3 * theta_true[2]
        tp, tm = theta_true.copy(), theta_true.copy()
        tp[2] += h
        tm[2] -= h
        bp = forward_sensitivities(yeast_model_71, tp, [100.0], 1, TOL_TIGHT)
        bm = forward_sensitivities(yeast_model_71, tm, [100.0], 1, TOL_TIGHT)
        fd = (bp.first[0, 2] - bm.first[0, 2]) / (2 * h)
        z = yeast_bundle2.second_at(2, 2)[2]
        assert np.max(np.abs(z - fd)) / max(np.max(np.abs(fd)), 1e-12) < 1e-4

    def test_second_order_symmetric_in_pair(self, yeast_bundle2):
        assert yeast_bundle2.second_at(3, 1) is yeast_bundle2.second_at(1, 3)


@pytest.fixture(scope="module")
def scalar_dataset():
    obs = [Observation(kind="domain_integral", time=1.5, ybar=0.9,
                       sigma=0.1)]
    return Dataset(observations=obs)


class TestAdjointGradient:
    def test_scalar_model_adjoint_equals_forward(self, scalar_dataset):
        model = make_scalar_linear_model()
        theta = np.array([1.3])
        gf = nll_grad(model, theta, scalar_dataset, method="forward",
                      tol=(1e-12, 1e-10))
        ga = nll_grad(model, theta, scalar_dataset, method="adjoint",
                      tol=(1e-12, 1e-10))
        assert ga[0] == pytest.approx(gf[0], rel=1e-6)

    def test_yeast_adjoint_equals_forward(self, yeast_model_71, theta_true):
        data = generate_data(yeast_model_71, theta_true, NoiseSpec(),
                             seed=11, tol=TOL_TIGHT)
        gf = nll_grad(yeast_model_71, theta_true, data, method="forward",
                      tol=TOL_TIGHT)
        ga = nll_grad(yeast_model_71, theta_true, data, method="adjoint",
                      tol=TOL_TIGHT)
        assert np.all(np.abs(ga - gf) <= 1e-5 * np.abs(gf))

    def test_gradient_vanishes_at_noise_free_truth(self, yeast_model_71,
                                                   theta_true):
        data = generate_data(yeast_model_71, theta_true,
                             NoiseSpec(apply_noise=False), seed=0,
                             tol=(1e-11, 1e-9))
        g = nll_grad(yeast_model_71, theta_true, data, tol=(1e-11, 1e-9))
        assert np.max(np.abs(g * theta_true)) < 1e-4
