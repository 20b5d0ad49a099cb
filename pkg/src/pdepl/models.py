"""Semidiscrete model interface and the fission-yeast gradient model.

A :class:`ModelSpec` describes a dynamical system ``u' = rhs(theta, u, t)``
obtained from a PDE by the method of lines, together with the analytic
derivatives needed for sensitivity analysis.  All derivative callbacks
follow the *derivative-of-rhs* convention: ``jac_u = d rhs / du``,
``jac_theta = d rhs / dtheta`` and the second-order callbacks return
directional second derivatives of ``rhs``.  Finite-difference checks of any
callback against ``rhs`` therefore apply directly.

The concrete model here describes membrane gradient formation in fission
yeast: diffusion, quadratic dimerisation decay and a Gaussian source at the
cell tip,

    u_t = D u_xx - alpha u^2 + beta / (sqrt(2 pi) rho) exp(-x^2 / (2 rho^2))

on ``[-L, L]`` with no-flux boundaries and ``u(0) = 0``.  The parameter
vector is ``theta = (D, alpha, beta, rho, s1, s2)``; the two scale factors
``s1, s2`` enter only the observation operators, never the dynamics.
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError
from .odes import IntegrationResult, integrate_stiff, pack_banded

YEAST_PARAM_NAMES = ("D", "alpha", "beta", "rho", "s1", "s2")

#: Reference ("true") parameter values used for data generation defaults.
YEAST_TRUE_THETA = np.array([0.10, 4.00e-4, 8.00e3, 0.60, 2.87e-4, 2.70e-5])

#: Tolerance pairs (abstol, reltol): tight regime for derivative
#: verification, production regime for profiling (the solver is called
#: thousands of times there).
TOL_TIGHT = (1e-10, 1e-8)
TOL_PROD = (1e-8, 1e-6)


@dataclass(frozen=True)
class ModelSpec:
    """Semidiscrete dynamical system with analytic derivatives.

    Attributes
    ----------
    n_state, n_param : int
        State and parameter dimensions.
    t_final : float
        End of the admissible time window.
    u0 : ndarray
        Initial state, length ``n_state``.
    rhs : callable ``(theta, u, t) -> ndarray``
    jac_u : callable ``(theta, u, t) -> matrix``
        ``d rhs / du``; sparse or dense.
    jac_theta : callable ``(theta, u, t) -> (n_state, n_param) ndarray``
    d2_uu : callable ``(theta, u, t, a, b) -> ndarray``
        Directional second derivative of ``rhs`` in the state; must be
        symmetric and bilinear in ``(a, b)``.
    d2_thetau : callable ``(theta, u, t, i, a) -> ndarray``
        Mixed second derivative, direction ``a`` in the state.
    d2_thetatheta : callable ``(theta, u, t, i, j) -> ndarray``
    jac_bandwidth : int or None
        Half-bandwidth of ``jac_u``; enables the banded LSODA fast path.
    dynamic_params : tuple of int or None
        Indices of parameters that enter the dynamics.  State sensitivities
        for all other parameters vanish identically and are skipped.
        ``None`` means all parameters enter.
    """

    n_state: int
    n_param: int
    t_final: float
    u0: np.ndarray
    rhs: callable
    jac_u: callable
    jac_theta: callable
    d2_uu: callable = None
    d2_thetau: callable = None
    d2_thetatheta: callable = None
    jac_bandwidth: int = None
    dynamic_params: tuple = None
    name: str = "model"
    param_names: tuple = None
    grid: np.ndarray = None  # node coordinates for 1-D MOL models

    def dynamic_indices(self):
        if self.dynamic_params is None:
            return tuple(range(self.n_param))
        return tuple(self.dynamic_params)

    def has_second_order(self):
        return (self.d2_uu is not None and self.d2_thetau is not None
                and self.d2_thetatheta is not None)


@dataclass
class Trajectory:
    """Solution values on requested output times plus solver counters."""

    times: np.ndarray
    states: np.ndarray  # (len(times), n_state)
    solver_stats: dict = field(default_factory=dict)

    def state_at(self, t):
        idx = np.nonzero(np.isclose(self.times, t, rtol=0.0, atol=1e-12))[0]
        if idx.size == 0:
            raise KeyError(f"time {t} not among trajectory outputs")
        return self.states[idx[0]]

    def to_csv(self, path):
        n = self.states.shape[1]
        header = "t," + ",".join(f"u_{i + 1}" for i in range(n))
        data = np.column_stack([self.times, self.states])
        np.savetxt(path, data, delimiter=",", header=header, comments="")


@dataclass(frozen=True)
class YeastModelConfig:
    """Grid and domain configuration for the yeast gradient model."""

    L: float = 7.0
    n_nodes: int = 141
    t_final: float = 100.0
    theta: np.ndarray = field(default_factory=lambda: YEAST_TRUE_THETA.copy())

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))
        if self.L <= 0:
            raise ConfigurationError(f"L must be positive, got {self.L}")
        if self.n_nodes < 3 or self.n_nodes % 2 == 0:
            raise ConfigurationError(
                f"n_nodes must be an odd integer >= 3, got {self.n_nodes}")
        if self.t_final <= 0:
            raise ConfigurationError(
                f"t_final must be positive, got {self.t_final}")
        if self.theta.shape != (6,):
            raise ConfigurationError(
                f"theta must have 6 entries (D, alpha, beta, rho, s1, s2), "
                f"got shape {self.theta.shape}")
        D, alpha, beta, rho, s1, s2 = self.theta
        for name, val, strict in (("D", D, False), ("alpha", alpha, False),
                                  ("beta", beta, False), ("rho", rho, True),
                                  ("s1", s1, True), ("s2", s2, True)):
            if strict and val <= 0:
                raise ConfigurationError(f"{name} must be > 0, got {val}")
            if not strict and val < 0:
                raise ConfigurationError(f"{name} must be >= 0, got {val}")

    @property
    def dx(self):
        return 2.0 * self.L / (self.n_nodes - 1)

    @property
    def grid(self):
        return np.linspace(-self.L, self.L, self.n_nodes)

    @classmethod
    def from_dict(cls, d):
        kwargs = {}
        for key in ("L", "n_nodes", "t_final", "theta"):
            if key in d:
                kwargs[key] = d[key]
        return cls(**kwargs)

    def to_dict(self):
        return {"L": self.L, "n_nodes": self.n_nodes,
                "t_final": self.t_final, "theta": list(map(float, self.theta))}


def load_yeast_config(path):
    """Read a model configuration from a JSON file.

    Recognised keys: ``L``, ``n_nodes``, ``t_final``, ``theta`` and an
    optional ``tolerances`` pair ``[abstol, reltol]``.

    Returns
    -------
    (YeastModelConfig, (abstol, reltol))
    """
    with open(path) as fh:
        d = json.load(fh)
    tol = tuple(d.get("tolerances", TOL_PROD))
    if len(tol) != 2 or tol[0] <= 0 or tol[1] <= 0:
        raise ConfigurationError(f"tolerances must be two positive values, got {tol}")
    return YeastModelConfig.from_dict(d), tol


def _neumann_laplacian(n, dx):
    """Second-order Laplacian with reflected ghost nodes (CSR, half-bw 1)."""
    main = np.full(n, -2.0)
    off = np.ones(n - 1)
    lap = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    lap[0, 1] = 2.0
    lap[n - 1, n - 2] = 2.0
    return sp.csr_matrix(lap / dx**2)


def build_yeast_model(config: YeastModelConfig) -> ModelSpec:
    """Method-of-lines discretization of the yeast gradient model.

    Interior nodes use second-order central differences for ``D u_xx``;
    the no-flux boundary is imposed by ghost-node reflection at the same
    order.  Reaction and source act pointwise on the grid.
    """
    x = config.grid
    n = config.n_nodes
    lap = _neumann_laplacian(n, config.dx)

    def gauss(beta, rho):
        return beta / (np.sqrt(2.0 * np.pi) * rho) * np.exp(-x**2 / (2.0 * rho**2))

    def dgauss_drho(beta, rho):
        return gauss(beta, rho) * (x**2 - rho**2) / rho**3

    def rhs(theta, u, t):
        D, alpha, beta, rho = theta[:4]
        return D * (lap @ u) - alpha * u * u + gauss(beta, rho)

    def jac_u(theta, u, t):
        D, alpha = theta[0], theta[1]
        return D * lap - sp.diags(2.0 * alpha * u)

    def jac_theta(theta, u, t):
        D, alpha, beta, rho = theta[:4]
        cols = np.zeros((n, 6))
        cols[:, 0] = lap @ u
        cols[:, 1] = -u * u
        cols[:, 2] = gauss(1.0, rho)
        cols[:, 3] = dgauss_drho(beta, rho)
        return cols

    def d2_uu(theta, u, t, a, b):
        return -2.0 * theta[1] * a * b

    def d2_thetau(theta, u, t, i, a):
        if i == 0:
            return lap @ a
        if i == 1:
            return -2.0 * u * a
        return np.zeros(n)

    def d2_thetatheta(theta, u, t, i, j):
        beta, rho = theta[2], theta[3]
        i, j = min(i, j), max(i, j)
        if (i, j) == (2, 3):
            return dgauss_drho(1.0, rho)
        if (i, j) == (3, 3):
            g = gauss(beta, rho)
            return g * ((x**2 / rho**3 - 1.0 / rho)**2
                        - 3.0 * x**2 / rho**4 + 1.0 / rho**2)
        return np.zeros(n)

    return ModelSpec(
        n_state=n, n_param=6, t_final=config.t_final,
        u0=np.zeros(n), rhs=rhs, jac_u=jac_u, jac_theta=jac_theta,
        d2_uu=d2_uu, d2_thetau=d2_thetau, d2_thetatheta=d2_thetatheta,
        jac_bandwidth=1, dynamic_params=(0, 1, 2, 3),
        name=f"yeast-{n}", param_names=YEAST_PARAM_NAMES, grid=x,
    )


def _check_times(model, times):
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(np.diff(times) <= 0):
        raise ConfigurationError("output times must be strictly increasing")
    if times[0] < 0 or times[-1] > model.t_final + 1e-12:
        raise ConfigurationError(
            f"output times must lie in [0, {model.t_final}]")
    return times


def simulate(model: ModelSpec, theta, times, tol=TOL_PROD) -> Trajectory:
    """Adaptive error-controlled stiff integration of the model.

    Parameters
    ----------
    theta : parameter vector.
    times : increasing output times within ``[0, t_final]``.
    tol : (abstol, reltol) pair controlling the local error.
    """
    theta = np.asarray(theta, dtype=float)
    times = _check_times(model, times)
    abstol, reltol = tol
    if abstol <= 0 or reltol <= 0:
        raise ConfigurationError("tolerances must be positive")

    t_solve = times if times[0] == 0.0 else np.concatenate([[0.0], times])

    def fun(t, y):
        return model.rhs(theta, y, t)

    if model.jac_bandwidth is not None:
        bw = model.jac_bandwidth
        band = (bw, bw)

        def jac(t, y):
            return pack_banded(model.jac_u(theta, y, t), bw, bw, model.n_state)
    else:
        band = None

        def jac(t, y):
            J = model.jac_u(theta, y, t)
            return J.toarray() if sp.issparse(J) else J

    res = integrate_stiff(fun, model.u0, t_solve, rtol=reltol, atol=abstol,
                          jac=jac, band=band)
    states = res.states if times[0] == 0.0 else res.states[1:]
    if times[0] == 0.0:
        states[0] = model.u0
    return Trajectory(times=times, states=states, solver_stats=res.stats)


def single_node_model(rhs, jac_u, jac_theta, n_param, t_final, u0,
                      d2_uu=None, d2_thetau=None, d2_thetatheta=None,
                      name="scalar"):
    """Convenience builder for small test models given scalar-style callbacks."""
    u0 = np.atleast_1d(np.asarray(u0, dtype=float))
    return ModelSpec(
        n_state=u0.size, n_param=n_param, t_final=t_final, u0=u0,
        rhs=rhs, jac_u=jac_u, jac_theta=jac_theta, d2_uu=d2_uu,
        d2_thetau=d2_thetau, d2_thetatheta=d2_thetatheta,
        jac_bandwidth=None, name=name, grid=np.zeros(u0.size),
    )


def coarsened(config: YeastModelConfig, n_nodes) -> YeastModelConfig:
    """Same physical setup on a coarser grid."""
    return replace(config, n_nodes=n_nodes)
