"""Objective evaluators: the boundary between models and optimizers.

Optimization and profile continuation run in internal coordinates ``x``
(log10 of the positive model parameters by default, since their plausible
ranges span decades).  :class:`PdeObjective` wraps the likelihood of a
(model, dataset) pair behind a small interface —

    j(x), grad(x), hess(x), fim(x), value_and_grad(x)

— applying the chain rule of the coordinate map and caching per-point
sensitivity solves so that value, gradient, curvature and any profile
target share one forward solve.  Every actual model integration increments
the counters; those counts are the hardware-independent cost metric
reported by the profiling tools.

:class:`BoundTarget` expresses a :class:`~pdepl.targets.ProfileTarget` in
the same internal coordinates, optionally traversing the target value on a
log10 axis.
"""

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .errors import CapabilityError, ObjectiveEvaluationError, SimulationError
from .likelihood import ObsOps
from .models import TOL_PROD, simulate
from .sensitivities import forward_sensitivities
from .targets import reduced_target_derivatives

LN10 = float(np.log(10.0))


@dataclass
class Counters:
    n_sim: int = 0
    n_sens1: int = 0
    n_sens2: int = 0

    @property
    def forward_solves(self):
        return self.n_sim + self.n_sens1 + self.n_sens2

    def as_dict(self):
        return {"n_sim": self.n_sim, "n_sens1": self.n_sens1,
                "n_sens2": self.n_sens2,
                "forward_solves": self.forward_solves}

    def snapshot(self):
        return Counters(self.n_sim, self.n_sens1, self.n_sens2)

    def since(self, other):
        return Counters(self.n_sim - other.n_sim,
                        self.n_sens1 - other.n_sens1,
                        self.n_sens2 - other.n_sens2)


class BaseObjective:
    """Default wiring shared by all objective evaluators."""

    bounds = None  # (lo, hi) arrays in internal coordinates

    def __init__(self):
        self.counters = Counters()

    @property
    def dim(self):
        raise NotImplementedError

    def j(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def value_and_grad(self, x):
        return self.j(x), self.grad(x)

    def hess(self, x):
        raise CapabilityError("objective has no Hessian")

    def fim(self, x):
        return self.hess(x)

    # identity parameter map; overridden when internal coords differ
    def to_linear(self, x):
        return np.asarray(x, dtype=float)

    def to_internal(self, theta):
        return np.asarray(theta, dtype=float)

    def dtheta_dx(self, x):
        return np.ones(self.dim)

    def d2theta_dx2(self, x):
        return np.zeros(self.dim)


class QuadraticObjective(BaseObjective):
    """j(x) = 1/2 (x - a)^T A (x - a) + c0; analytic benchmark problem."""

    def __init__(self, A, a, c0=0.0, bounds=None):
        super().__init__()
        self.A = np.asarray(A, dtype=float)
        self.a = np.asarray(a, dtype=float)
        self.c0 = float(c0)
        self.bounds = bounds

    @property
    def dim(self):
        return self.a.size

    def j(self, x):
        d = np.asarray(x, dtype=float) - self.a
        return 0.5 * float(d @ self.A @ d) + self.c0

    def grad(self, x):
        return self.A @ (np.asarray(x, dtype=float) - self.a)

    def hess(self, x):
        return self.A.copy()


class _Record:
    __slots__ = ("level", "traj", "bundle", "j")

    def __init__(self):
        self.level = -1
        self.traj = None
        self.bundle = None
        self.j = None


class PdeObjective(BaseObjective):
    """Cached, counted likelihood evaluator in log10 parameter coordinates.

    Parameters
    ----------
    model, dataset
        The forward model and the measurements.
    log_mask : bool array or True
        Which parameters are represented on a log10 axis internally.
    tol : (abstol, reltol)
        Simulation tolerances used for every solve.
    target_times : iterable of float
        Extra trajectory output times needed by profile targets, merged
        with the observation times so targets reuse the cached solves.
    """

    def __init__(self, model, dataset, log_mask=True, tol=TOL_PROD,
                 target_times=(), bounds=None, cache_size=64):
        super().__init__()
        self.model = model
        self.dataset = dataset
        self.tol = tol
        if log_mask is True:
            log_mask = np.ones(model.n_param, dtype=bool)
        elif log_mask is False or log_mask is None:
            log_mask = np.zeros(model.n_param, dtype=bool)
        self.log_mask = np.asarray(log_mask, dtype=bool)
        self.bounds = bounds
        obs_times = dataset.times()
        self.out_times = np.unique(np.concatenate(
            [obs_times, np.asarray(list(target_times), dtype=float)])) \
            if len(tuple(target_times)) else obs_times
        self.ops = ObsOps(model, dataset, eval_times=self.out_times)
        self._cache = OrderedDict()
        self._cache_size = cache_size

    @property
    def dim(self):
        return self.model.n_param

    # ---- parameter map ----------------------------------------------------

    def to_linear(self, x):
        x = np.asarray(x, dtype=float)
        theta = x.copy()
        theta[self.log_mask] = 10.0 ** x[self.log_mask]
        return theta

    def to_internal(self, theta):
        theta = np.asarray(theta, dtype=float)
        x = theta.copy()
        x[self.log_mask] = np.log10(theta[self.log_mask])
        return x

    def dtheta_dx(self, x):
        d = np.ones(self.dim)
        theta = self.to_linear(x)
        d[self.log_mask] = theta[self.log_mask] * LN10
        return d

    def d2theta_dx2(self, x):
        d = np.zeros(self.dim)
        theta = self.to_linear(x)
        d[self.log_mask] = theta[self.log_mask] * LN10**2
        return d

    # ---- cached evaluation -------------------------------------------------

    def _get(self, x, level):
        x = np.asarray(x, dtype=float)
        key = x.tobytes()
        rec = self._cache.get(key)
        if rec is not None and rec.level >= level:
            self._cache.move_to_end(key)
            return rec
        if rec is None:
            rec = _Record()
        theta = self.to_linear(x)
        try:
            if level == 0:
                rec.traj = simulate(self.model, theta, self.out_times, self.tol)
                self.counters.n_sim += 1
            else:
                order = min(level, 2)
                rec.bundle = forward_sensitivities(
                    self.model, theta, self.out_times, order, self.tol)
                rec.traj = rec.bundle.trajectory
                if order == 1:
                    self.counters.n_sens1 += 1
                else:
                    self.counters.n_sens2 += 1
        except SimulationError as exc:
            raise ObjectiveEvaluationError(str(exc)) from exc
        rec.level = level
        rec.j = self.ops.nll_from_states(theta, rec.traj.states)
        self._cache[key] = rec
        self._cache.move_to_end(key)
        while len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return rec

    def j(self, x):
        return self._get(x, 0).j

    def grad(self, x):
        rec = self._get(x, 1)
        theta = self.to_linear(x)
        return self.ops.grad(theta, rec.bundle) * self.dtheta_dx(x)

    def value_and_grad(self, x):
        rec = self._get(x, 1)
        theta = self.to_linear(x)
        return rec.j, self.ops.grad(theta, rec.bundle) * self.dtheta_dx(x)

    def _chain_hess(self, x, H_theta, grad_theta):
        d = self.dtheta_dx(x)
        return (d[:, None] * H_theta * d[None, :]
                + np.diag(grad_theta * self.d2theta_dx2(x)))

    def hess(self, x):
        rec = self._get(x, 2)
        theta = self.to_linear(x)
        H = self.ops.hess(theta, rec.bundle, include_second=True)
        return self._chain_hess(x, H, self.ops.grad(theta, rec.bundle))

    def fim(self, x):
        rec = self._get(x, 1)
        theta = self.to_linear(x)
        W = self.ops.hess(theta, rec.bundle, include_second=False)
        return self._chain_hess(x, W, self.ops.grad(theta, rec.bundle))

    def grad_theta(self, x):
        """Gradient in linear parameter coordinates (diagnostics)."""
        rec = self._get(x, 1)
        return self.ops.grad(self.to_linear(x), rec.bundle)


class BoundTarget:
    """A profile target expressed in an objective's internal coordinates.

    The traversal coordinate is ``ct = log10(g)`` when the target is marked
    ``log_scale`` (all positive parameter-type targets), else ``ct = g``.
    Parameter-only targets never trigger model solves; state-dependent
    targets read the objective's cached sensitivity bundles.
    """

    def __init__(self, objective, target):
        self.objective = objective
        self.target = target
        self.label = target.label
        self.log_scale = bool(target.log_scale)
        self.kind = target.kind
        self.coordinate_index = None
        self._coeffs = None
        mask = getattr(objective, "log_mask", None)
        if mask is None:
            mask = np.zeros(objective.dim, dtype=bool)
        if target.kind == "single_parameter":
            i = target.index
            if self.log_scale == bool(mask[i]):
                self.coordinate_index = i
                e = np.zeros(objective.dim)
                e[i] = 1.0
                self._coeffs = e
        elif target.kind == "parameter_ratio" and self.log_scale \
                and mask[target.i_num] and mask[target.i_den]:
            e = np.zeros(objective.dim)
            e[target.i_num], e[target.i_den] = 1.0, -1.0
            self._coeffs = e

    # ---- constraint-value coordinate ---------------------------------------

    def c_internal(self, c):
        return float(np.log10(c)) if self.log_scale else float(c)

    def c_linear(self, ct):
        return float(10.0 ** ct) if self.log_scale else float(ct)

    def linear_coeffs(self):
        """(coeffs,) when ct is an exact linear function of x, else None."""
        return self._coeffs

    def internal_bounds(self):
        """Reachable ct interval implied by the objective's box, if linear."""
        if self._coeffs is None or self.objective.bounds is None:
            return None
        box = np.asarray(self.objective.bounds, dtype=float)
        lo, hi = box[:, 0], box[:, 1]
        c = self._coeffs
        return (float(np.sum(np.where(c > 0, c * lo, c * hi))),
                float(np.sum(np.where(c > 0, c * hi, c * lo))))

    # ---- derivatives in internal coordinates -------------------------------

    def _pieces(self, x, order):
        obj = self.objective
        theta = obj.to_linear(x)
        if self.target.state_times:
            rec = obj._get(x, order)
            out = reduced_target_derivatives(self.target, theta, rec.bundle,
                                             order=order)
            g, grad_theta = out[0], out[1]
            hess_theta = out[2] if order == 2 else None
        else:
            g = self.target.value(theta, {})
            grad_theta = self.target.d_theta(theta, {})
            hess_theta = self.target.d2_theta(theta, {}) if order == 2 else None
        return g, grad_theta, hess_theta

    def value(self, x):
        if self._coeffs is not None:
            return float(self._coeffs @ np.asarray(x, dtype=float))
        theta = self.objective.to_linear(x)
        if self.target.state_times:
            rec = self.objective._get(x, 0)
            states = {t: rec.traj.state_at(t) for t in self.target.state_times}
            g = self.target.value(theta, states)
        else:
            g = self.target.value(theta, {})
        return self.c_internal(g)

    def grad(self, x):
        if self._coeffs is not None:
            return self._coeffs.copy()
        g, grad_theta, _ = self._pieces(x, 1)
        d = self.objective.dtheta_dx(x)
        gx = grad_theta * d
        return gx / (g * LN10) if self.log_scale else gx

    def hess(self, x):
        if self._coeffs is not None:
            return np.zeros((self.objective.dim, self.objective.dim))
        g, grad_theta, hess_theta = self._pieces(x, 2)
        obj = self.objective
        d = obj.dtheta_dx(x)
        gx = grad_theta * d
        Hx = (d[:, None] * hess_theta * d[None, :]
              + np.diag(grad_theta * obj.d2theta_dx2(x)))
        if not self.log_scale:
            return Hx
        return Hx / (g * LN10) - np.outer(gx, gx) / (g**2 * LN10)
