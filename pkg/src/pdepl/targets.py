"""Scalar profile targets: the quantity pinned during profile calculation.

A target is a scalar function of the parameters and (optionally) the state
at finitely many time points.  Besides its value, each target exposes the
first and second partial derivatives needed to assemble constrained
optimality systems; :func:`reduced_target_derivatives` composes them with a
sensitivity bundle into derivatives of the reduced map ``g(theta) =
G(theta, S(theta))``.
"""

import numpy as np

from .likelihood import point_weights
from .models import simulate, TOL_PROD
from .sensitivities import SensitivityBundle


class ProfileTarget:
    """Base class; concrete targets override the derivative pieces.

    Attributes
    ----------
    kind : str
    label : str
        Human-readable name used in reports and file names.
    log_scale : bool
        Whether profiling should traverse the target on a log10 axis
        (positive, decade-spanning quantities).
    state_times : tuple of float
        Times at which the target reads the state; empty for pure
        parameter functions.
    """

    kind = "custom"
    label = "target"
    log_scale = False
    state_times = ()

    def value(self, theta, states):
        raise NotImplementedError

    def d_theta(self, theta, states):
        return np.zeros(len(theta))

    def d_u(self, theta, states, t):
        raise NotImplementedError

    def d2_theta(self, theta, states):
        return np.zeros((len(theta), len(theta)))

    def d2_uu_quad(self, theta, states, t, V):
        """Matrix of G_uu[v_a, v_b] over rows of V at time t; zero default."""
        m = V.shape[0]
        return np.zeros((m, m))

    def evaluate(self, model, theta, tol=TOL_PROD):
        """Reduced value g(theta), simulating when the target needs state."""
        states = {}
        if self.state_times:
            traj = simulate(model, theta, sorted(self.state_times), tol=tol)
            states = {t: traj.state_at(t) for t in self.state_times}
        return self.value(np.asarray(theta, dtype=float), states)


class ParameterTarget(ProfileTarget):
    """g(theta) = theta_i."""

    kind = "single_parameter"

    def __init__(self, index, label=None, log_scale=True):
        self.index = index
        self.label = label or f"theta_{index + 1}"
        self.log_scale = log_scale

    def value(self, theta, states):
        return float(theta[self.index])

    def d_theta(self, theta, states):
        g = np.zeros(len(theta))
        g[self.index] = 1.0
        return g


class ParameterRatioTarget(ProfileTarget):
    """g(theta) = theta_i / theta_j."""

    kind = "parameter_ratio"

    def __init__(self, i_num, i_den, label=None, log_scale=True):
        self.i_num, self.i_den = i_num, i_den
        self.label = label or f"theta_{i_num + 1}/theta_{i_den + 1}"
        self.log_scale = log_scale

    def value(self, theta, states):
        return float(theta[self.i_num] / theta[self.i_den])

    def d_theta(self, theta, states):
        g = np.zeros(len(theta))
        g[self.i_num] = 1.0 / theta[self.i_den]
        g[self.i_den] = -theta[self.i_num] / theta[self.i_den] ** 2
        return g

    def d2_theta(self, theta, states):
        H = np.zeros((len(theta), len(theta)))
        i, j = self.i_num, self.i_den
        H[i, j] = H[j, i] = -1.0 / theta[j] ** 2
        H[j, j] = 2.0 * theta[i] / theta[j] ** 3
        return H


class StateRatioTarget(ProfileTarget):
    """G(theta, u) = u(t, x_num) / u(t, x_den), by linear interpolation."""

    kind = "state_ratio"

    def __init__(self, time, x_num, x_den, grid, label=None, log_scale=False):
        self.time = float(time)
        self.state_times = (self.time,)
        self.w_num = point_weights(grid, x_num)
        self.w_den = point_weights(grid, x_den)
        self.label = label or f"u({time:g},{x_num:g})/u({time:g},{x_den:g})"
        self.log_scale = log_scale

    def value(self, theta, states):
        u = states[self.time]
        return float((self.w_num @ u) / (self.w_den @ u))

    def d_u(self, theta, states, t):
        u = states[self.time]
        num, den = self.w_num @ u, self.w_den @ u
        return self.w_num / den - num / den**2 * self.w_den

    def d2_uu_quad(self, theta, states, t, V):
        u = states[self.time]
        num, den = self.w_num @ u, self.w_den @ u
        A = V @ self.w_num  # (m,)
        B = V @ self.w_den
        return (-(np.outer(A, B) + np.outer(B, A)) / den**2
                + 2.0 * num / den**3 * np.outer(B, B))


class CustomTarget(ProfileTarget):
    """Parameter-only target given as plain callables (used by oracles)."""

    kind = "custom"

    def __init__(self, value_fn, grad_fn, hess_fn=None, label="custom",
                 log_scale=False):
        self._value, self._grad, self._hess = value_fn, grad_fn, hess_fn
        self.label = label
        self.log_scale = log_scale

    def value(self, theta, states):
        return float(self._value(theta))

    def d_theta(self, theta, states):
        return np.asarray(self._grad(theta), dtype=float)

    def d2_theta(self, theta, states):
        if self._hess is None:
            return np.zeros((len(theta), len(theta)))
        return np.asarray(self._hess(theta), dtype=float)


def states_dict(target, bundle: SensitivityBundle):
    return {t: bundle.trajectory.state_at(t) for t in target.state_times}


def reduced_target_derivatives(target, theta, bundle: SensitivityBundle,
                               order=1):
    """Derivatives of g(theta) = G(theta, S(theta)) from a bundle.

    Returns ``(g, grad)`` for order 1 and ``(g, grad, hess)`` for order 2.
    """
    theta = np.asarray(theta, dtype=float)
    states = states_dict(target, bundle)
    g = target.value(theta, states)
    grad = target.d_theta(theta, states)
    E_at = {}
    for t in target.state_times:
        ti = bundle.time_index(t)
        E_at[t] = bundle.first[ti]  # (n_param, n_state)
        grad = grad + E_at[t] @ target.d_u(theta, states, t)
    if order == 1:
        return g, grad
    n_param = len(theta)
    H = target.d2_theta(theta, states)
    for t in target.state_times:
        ti = bundle.time_index(t)
        gu = target.d_u(theta, states, t)
        H = H + target.d2_uu_quad(theta, states, t, E_at[t])
        zterm = np.zeros((n_param, n_param))
        for a in range(n_param):
            for b in range(a, n_param):
                zterm[a, b] = zterm[b, a] = gu @ bundle.second_at(a, b)[ti]
        H = H + zterm
    return g, grad, 0.5 * (H + H.T)


def fd_target_check(target, model, theta, tol=(1e-10, 1e-8), rel_step=1e-5):
    """Max relative error of the target gradient vs central differences."""
    theta = np.asarray(theta, dtype=float)
    from .sensitivities import forward_sensitivities

    times = sorted(target.state_times) or [model.t_final]
    bundle = forward_sensitivities(model, theta, times, 1, tol)
    _, grad = reduced_target_derivatives(target, theta, bundle, order=1)
    fd = np.zeros_like(grad)
    for i in range(len(theta)):
        h = rel_step * max(abs(theta[i]), 1e-8)
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        fd[i] = (target.evaluate(model, tp, tol)
                 - target.evaluate(model, tm, tol)) / (2 * h)
    scale = max(np.max(np.abs(fd)), 1e-12)
    return float(np.max(np.abs(grad - fd)) / scale)
