"""Datasets, observation operators and the negative log-likelihood.

Observations are scalar functionals of the state trajectory,

    Q_k(theta, u) = scale_k * integral over region_k of u(t_k, x) dx,

where the region is either a subinterval (``region_integral``) or the whole
domain (``domain_integral``) and ``scale_k`` is 1 or one of the parameters
(the fluorescence scales).  Spatial integrals use the exact integral of the
piecewise-linear nodal interpolant, which reduces to trapezoidal weights
when the region boundaries coincide with grid nodes.

For additive Gaussian noise with known standard deviations the negative
log-likelihood is

    j(theta) = 1/2 sum_k [ log(2 pi sigma_k^2)
                           + ((ybar_k - Q_k(theta, S(theta))) / sigma_k)^2 ].

``sigma_k`` are treated as known constants throughout; the machinery only
assumes a twice continuously differentiable objective, so other noise
models could be swapped in behind the same interfaces.
"""

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigurationError, ObjectiveEvaluationError, SimulationError
from .models import ModelSpec, TOL_PROD, simulate
from .sensitivities import AdjointObjective, SensitivityBundle, \
    adjoint_gradient, forward_sensitivities

DATASET_SCHEMA = "pdepl-dataset-1"

LN_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class Observation:
    """One measured value with its operator descriptor."""

    kind: str  # "region_integral" | "domain_integral"
    time: float
    ybar: float
    sigma: float
    region: tuple = None  # (a, b); required for region_integral
    scale_param: int = None  # index into theta, or None (absolute)

    def __post_init__(self):
        if self.kind not in ("region_integral", "domain_integral"):
            raise ConfigurationError(f"unknown observation kind {self.kind!r}")
        if self.sigma <= 0:
            raise ConfigurationError(f"sigma must be > 0, got {self.sigma}")
        if self.kind == "region_integral":
            if self.region is None or self.region[0] >= self.region[1]:
                raise ConfigurationError(
                    f"region_integral needs a nonempty interval, got {self.region}")
        if self.time < 0:
            raise ConfigurationError(f"time must be >= 0, got {self.time}")


@dataclass
class Dataset:
    """Ordered collection of observations plus generation provenance."""

    observations: list
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.observations)

    def times(self):
        return np.unique([o.time for o in self.observations])

    def to_dict(self):
        obs = []
        for o in self.observations:
            d = {"kind": o.kind, "time": o.time}
            if o.region is not None:
                d["region"] = [o.region[0], o.region[1]]
            if o.scale_param is not None:
                d["scale_param"] = o.scale_param
            d["ybar"] = o.ybar
            d["sigma"] = o.sigma
            obs.append(d)
        return {"schema": DATASET_SCHEMA, "observations": obs,
                "meta": self.meta}

    @classmethod
    def from_dict(cls, d):
        if d.get("schema") != DATASET_SCHEMA:
            raise ConfigurationError(
                f"unsupported dataset schema {d.get('schema')!r}")
        obs = []
        for o in d["observations"]:
            obs.append(Observation(
                kind=o["kind"], time=float(o["time"]), ybar=float(o["ybar"]),
                sigma=float(o["sigma"]),
                region=tuple(o["region"]) if "region" in o else None,
                scale_param=o.get("scale_param")))
        return cls(observations=obs, meta=d.get("meta", {}))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class NoiseSpec:
    """Relative noise with a floor, applied per sub-dataset.

    ``sigma_k = max(rel * |y_k|, floor * max_m |y_m|)`` with the max taken
    within each observation group.  ``apply_noise=False`` keeps the sigma
    model but draws no perturbation (noise-free data).
    """

    rel: float = 0.10
    floor: float = 0.01
    apply_noise: bool = True

    def sigmas(self, y_group):
        y_group = np.asarray(y_group, dtype=float)
        base = self.floor * np.max(np.abs(y_group))
        s = np.maximum(self.rel * np.abs(y_group), base)
        if np.any(s <= 0):
            raise ConfigurationError(
                "noise spec produced non-positive sigma; "
                "raise rel or floor")
        return s


def interval_weights(grid, a, b):
    """Integration weights of the piecewise-linear interpolant over [a, b].

    ``w @ u`` equals the exact integral of the nodal interpolant of ``u``
    over the interval; region endpoints may fall inside grid cells.
    """
    grid = np.asarray(grid, dtype=float)
    n = grid.size
    if n == 1:
        # degenerate single-node model: the observation is the state itself
        return np.ones(1)
    if a < grid[0] - 1e-12 or b > grid[-1] + 1e-12:
        raise ConfigurationError(
            f"region [{a}, {b}] outside domain [{grid[0]}, {grid[-1]}]")
    a, b = max(a, grid[0]), min(b, grid[-1])
    w = np.zeros(n)
    i0 = max(int(np.searchsorted(grid, a, side="right")) - 1, 0)
    i1 = min(int(np.searchsorted(grid, b, side="left")), n - 1)
    for i in range(i0, i1):
        lo, hi = max(a, grid[i]), min(b, grid[i + 1])
        if hi <= lo:
            continue
        h = hi - lo
        s = (0.5 * (lo + hi) - grid[i]) / (grid[i + 1] - grid[i])
        w[i] += h * (1.0 - s)
        w[i + 1] += h * s
    return w


def point_weights(grid, x):
    """Linear-interpolation weights for evaluating u at position ``x``."""
    grid = np.asarray(grid, dtype=float)
    n = grid.size
    if n == 1:
        return np.ones(1)
    if x < grid[0] - 1e-12 or x > grid[-1] + 1e-12:
        raise ConfigurationError(f"point {x} outside domain")
    i = int(np.clip(np.searchsorted(grid, x) - 1, 0, n - 2))
    s = (x - grid[i]) / (grid[i + 1] - grid[i])
    w = np.zeros(n)
    w[i], w[i + 1] = 1.0 - s, s
    return w


class ObsOps(AdjointObjective):
    """Precomputed observation machinery for one (model, dataset) pair.

    Holds the integration weight vector, time index and scale index of
    every observation, and assembles the likelihood value and its
    derivatives from trajectories / sensitivity bundles.
    """

    def __init__(self, model: ModelSpec, dataset: Dataset, eval_times=None):
        if model.grid is None:
            raise ConfigurationError(
                "model lacks grid metadata required by integral observations")
        self.model = model
        self.dataset = dataset
        self.times = dataset.times() if eval_times is None \
            else np.asarray(eval_times, dtype=float)
        self.K = len(dataset)
        grid = model.grid
        lo, hi = float(grid[0]), float(grid[-1])
        self.weights = np.zeros((self.K, model.n_state))
        self.t_index = np.zeros(self.K, dtype=int)
        self.scale_idx = np.full(self.K, -1, dtype=int)
        self.sigma = np.zeros(self.K)
        self.ybar = np.zeros(self.K)
        for k, o in enumerate(dataset.observations):
            a, b = o.region if o.kind == "region_integral" else (lo, hi)
            self.weights[k] = interval_weights(grid, a, b)
            self.t_index[k] = int(np.nonzero(
                np.isclose(self.times, o.time, rtol=0.0, atol=1e-12))[0][0])
            if o.scale_param is not None:
                self.scale_idx[k] = o.scale_param
            self.sigma[k] = o.sigma
            self.ybar[k] = o.ybar
        self.const = 0.5 * np.sum(LN_2PI + 2.0 * np.log(self.sigma))

    # ---- values ---------------------------------------------------------

    def raw_integrals(self, states):
        """w_k @ u(t_k) for every observation, before scaling."""
        return np.array([self.weights[k] @ states[self.t_index[k]]
                         for k in range(self.K)])

    def scales(self, theta):
        s = np.ones(self.K)
        m = self.scale_idx >= 0
        s[m] = theta[self.scale_idx[m]]
        return s

    def q_values(self, theta, states):
        return self.scales(theta) * self.raw_integrals(states)

    def residuals(self, theta, states):
        return (self.ybar - self.q_values(theta, states)) / self.sigma

    def nll_from_states(self, theta, states):
        r = self.residuals(theta, states)
        return self.const + 0.5 * float(r @ r)

    # ---- derivatives from forward sensitivities -------------------------

    def _dq(self, theta, bundle: SensitivityBundle):
        """Total derivatives dQ_k/dtheta, shape (K, n_param)."""
        n_param = self.model.n_param
        states = bundle.trajectory.states
        sc = self.scales(theta)
        wu = self.raw_integrals(states)
        dq = np.zeros((self.K, n_param))
        for k in range(self.K):
            we = bundle.first[self.t_index[k]] @ self.weights[k]
            dq[k] = sc[k] * we
            if self.scale_idx[k] >= 0:
                dq[k, self.scale_idx[k]] += wu[k]
        return dq

    def grad(self, theta, bundle):
        r = self.residuals(theta, bundle.trajectory.states)
        return self._dq(theta, bundle).T @ (-r / self.sigma)

    def hess(self, theta, bundle, include_second=True):
        """Hessian of j; with ``include_second=False`` the curvature
        surrogate that drops the sensitivity-of-sensitivity term."""
        n_param = self.model.n_param
        states = bundle.trajectory.states
        r = self.residuals(theta, states)
        dq = self._dq(theta, bundle)
        H = (dq / self.sigma[:, None]**2).T @ dq
        sc = self.scales(theta)
        for k in range(self.K):
            coeff = -r[k] / self.sigma[k]
            ti = self.t_index[k]
            # curvature of Q_k: scale-sensitivity cross terms ...
            if self.scale_idx[k] >= 0:
                we = bundle.first[ti] @ self.weights[k]
                i = self.scale_idx[k]
                H[i, :] += coeff * we
                H[:, i] += coeff * we
            # ... and, when requested, the second-order sensitivity term
            if include_second:
                for a in range(n_param):
                    for b in range(a, n_param):
                        val = coeff * sc[k] * (
                            self.weights[k] @ bundle.second_at(a, b)[ti])
                        H[a, b] += val
                        if a != b:
                            H[b, a] += val
        return 0.5 * (H + H.T)

    # ---- adjoint interface ----------------------------------------------

    def jumps(self, theta, u_at):
        """Observation contributions dJ/du(t_k) grouped by time."""
        sc = self.scales(theta)
        jump = np.zeros((self.times.size, self.model.n_state))
        grad_direct = np.zeros(self.model.n_param)
        for k in range(self.K):
            u = np.atleast_1d(u_at(self.times[self.t_index[k]]))
            q = sc[k] * (self.weights[k] @ u)
            r = (self.ybar[k] - q) / self.sigma[k]
            jump[self.t_index[k]] += (-r / self.sigma[k]) * sc[k] * self.weights[k]
            if self.scale_idx[k] >= 0:
                grad_direct[self.scale_idx[k]] += \
                    (-r / self.sigma[k]) * (self.weights[k] @ u)
        return self.times, jump, grad_direct


# ---- module-level operations ---------------------------------------------

def yeast_observation_layout(L=7.0, t_profile=100.0, n_regions=60,
                             t_course=(0.0, 60.0, 10)):
    """Observation descriptors of the standard yeast measurement set-up.

    60 scaled region integrals of the concentration profile at t=100 s,
    10 scaled whole-domain integrals at equally spaced time points in
    [0, 60] s, and one absolute whole-domain integral at t=100 s.
    """
    layout = []
    for k in range(1, n_regions + 1):
        a = -L + L * (k - 1) / (n_regions / 2)
        b = -L + L * k / (n_regions / 2)
        layout.append(("region_integral", t_profile, (a, b), 4))
    for t in np.linspace(*t_course):
        layout.append(("domain_integral", float(t), None, 5))
    layout.append(("domain_integral", t_profile, None, None))
    return layout


def generate_data(model: ModelSpec, theta_true, noise: NoiseSpec = None,
                  seed: int = 0, tol=TOL_PROD, layout=None) -> Dataset:
    """Simulate at ``theta_true`` and corrupt with Gaussian noise.

    The sigma for each observation follows the noise spec within its
    sub-dataset (regions / time course / quantification); the perturbation
    is drawn from ``default_rng(seed)``, so a fixed seed reproduces the
    dataset bit-identically.
    """
    noise = noise or NoiseSpec()
    theta_true = np.asarray(theta_true, dtype=float)
    if layout is None:
        L = float(model.grid[-1])
        layout = yeast_observation_layout(L=L)
    times = np.unique([entry[1] for entry in layout])
    traj = simulate(model, theta_true, times, tol=tol)
    lo, hi = float(model.grid[0]), float(model.grid[-1])

    y = np.zeros(len(layout))
    for k, (kind, t, region, scale_param) in enumerate(layout):
        a, b = region if region is not None else (lo, hi)
        w = interval_weights(model.grid, a, b)
        val = w @ traj.state_at(t)
        if scale_param is not None:
            val *= theta_true[scale_param]
        y[k] = val

    # group observations by (kind, scale_param) to mirror the sub-datasets
    groups = {}
    for k, (kind, _, region, scale_param) in enumerate(layout):
        groups.setdefault((kind, scale_param), []).append(k)
    sigma = np.zeros_like(y)
    for idx in groups.values():
        sigma[idx] = noise.sigmas(y[idx])

    rng = np.random.default_rng(seed)
    eps = rng.normal(0.0, sigma) if noise.apply_noise else np.zeros_like(y)
    obs = []
    for k, (kind, t, region, scale_param) in enumerate(layout):
        obs.append(Observation(kind=kind, time=t, ybar=float(y[k] + eps[k]),
                               sigma=float(sigma[k]), region=region,
                               scale_param=scale_param))
    meta = {"seed": seed, "noise": asdict(noise),
            "theta_true": list(map(float, theta_true)),
            "model": model.name}
    return Dataset(observations=obs, meta=meta)


def nll(model, theta, dataset, tol=TOL_PROD):
    """Negative log-likelihood j(theta).  Simulation failures become
    :class:`ObjectiveEvaluationError` so optimizers can treat them as +inf."""
    ops = ObsOps(model, dataset)
    theta = np.asarray(theta, dtype=float)
    try:
        traj = simulate(model, theta, ops.times, tol=tol)
    except SimulationError as exc:
        raise ObjectiveEvaluationError(str(exc)) from exc
    return ops.nll_from_states(theta, traj.states)


def nll_grad(model, theta, dataset, method="forward", tol=TOL_PROD):
    """Gradient of j via forward sensitivities or the adjoint system."""
    ops = ObsOps(model, dataset)
    theta = np.asarray(theta, dtype=float)
    try:
        if method == "forward":
            bundle = forward_sensitivities(model, theta, ops.times, 1, tol)
            return ops.grad(theta, bundle)
        if method == "adjoint":
            return adjoint_gradient(model, theta, ops, tol=tol)
    except SimulationError as exc:
        raise ObjectiveEvaluationError(str(exc)) from exc
    raise ConfigurationError(f"unknown gradient method {method!r}")


def nll_hess(model, theta, dataset, tol=TOL_PROD):
    """Hessian of j from second-order forward sensitivities."""
    ops = ObsOps(model, dataset)
    theta = np.asarray(theta, dtype=float)
    bundle = forward_sensitivities(model, theta, ops.times, 2, tol)
    return ops.hess(theta, bundle, include_second=True)


def fim(model, theta, dataset, tol=TOL_PROD):
    """First-order curvature surrogate (drops second-order sensitivities)."""
    ops = ObsOps(model, dataset)
    theta = np.asarray(theta, dtype=float)
    bundle = forward_sensitivities(model, theta, ops.times, 1, tol)
    return ops.hess(theta, bundle, include_second=False)
