"""Maximum-likelihood estimation and equality-constrained local fits.

Multi-start local optimization over a log10 box: starting points come from
a Latin hypercube design, each start runs a projected quasi-Newton descent
(L-BFGS-B) with the exact sensitivity gradient, and the best converged
optimum wins (ties broken by lowest start index).  The same machinery with
one coordinate pinned (or an augmented-Lagrangian outer loop for general
scalar constraints) provides the re-optimization step of profile
calculation.
"""

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import (ConfigurationError, EstimationError,
                     InfeasibleConstraintError, ObjectiveEvaluationError)
from .models import TOL_PROD, build_yeast_model, YeastModelConfig
from .objective import BoundTarget, PdeObjective

#: Default log10 search box bracketing the plausible yeast parameter ranges.
YEAST_BOUNDS_LOG10 = np.array([
    [-3.0, 1.1],   # D
    [-6.0, 0.0],   # alpha
    [1.0, 8.7],    # beta
    [-2.0, 1.0],   # rho
    [-6.0, -2.0],  # s1
    [-7.0, -3.0],  # s2
])

_FAIL_VALUE = 1e15


@dataclass
class OptimizerConfig:
    """Settings for local optimization and the multi-start wrapper."""

    bounds: np.ndarray = None  # (dim, 2) box in internal coordinates
    max_iter: int = 300
    grad_tol: float = 1e-5
    step_tol: float = 1e-11    # relative decrease termination (ftol)
    n_starts: int = 20
    seed: int = 0
    val_tol: float = 1e-4      # clustering tolerance on objective values
    constraint_tol: float = 1e-6
    al_mu0: float = 10.0
    al_max_outer: int = 15

    def __post_init__(self):
        if self.bounds is not None:
            self.bounds = np.asarray(self.bounds, dtype=float)
            if not np.all(np.isfinite(self.bounds)):
                raise ConfigurationError("bounds must be finite")
            if np.any(self.bounds[:, 0] >= self.bounds[:, 1]):
                raise ConfigurationError("bounds must satisfy lo < hi")
        if self.n_starts < 1:
            raise ConfigurationError("n_starts must be >= 1")


@dataclass
class StartRecord:
    index: int
    x0: np.ndarray
    x: np.ndarray
    fun: float
    n_iter: int
    converged: bool
    message: str = ""


@dataclass
class FitResult:
    """Outcome of a multi-start fit."""

    x_hat: np.ndarray          # internal (log10) coordinates
    theta_hat: np.ndarray      # linear-scale parameters
    j_hat: float
    converged: bool
    grad_norm: float
    cluster_fraction: float
    starts: list = field(default_factory=list)
    seed: int = 0

    def to_dict(self):
        return {
            "x_hat_log10": list(map(float, self.x_hat)),
            "theta_hat": list(map(float, self.theta_hat)),
            "j_hat": float(self.j_hat),
            "converged": bool(self.converged),
            "grad_norm": float(self.grad_norm),
            "cluster_fraction": float(self.cluster_fraction),
            "seed": self.seed,
            "starts": [
                {"index": s.index, "x0": list(map(float, s.x0)),
                 "x": list(map(float, s.x)), "fun": float(s.fun),
                 "n_iter": s.n_iter, "converged": bool(s.converged),
                 "message": s.message}
                for s in self.starts],
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")


@dataclass
class ConstrainedFit:
    x: np.ndarray
    lam: float
    j: float
    kkt_residual: float
    constraint_gap: float
    n_iter: int
    converged: bool


def latin_hypercube(n_starts, bounds, seed):
    """Latin hypercube design: each 1-D projection hits each of the
    ``n_starts`` equal bins exactly once.  Deterministic given the seed."""
    bounds = np.asarray(bounds, dtype=float)
    dim = bounds.shape[0]
    rng = np.random.default_rng(seed)
    pts = np.empty((n_starts, dim))
    for d in range(dim):
        perm = rng.permutation(n_starts)
        pts[:, d] = (perm + rng.uniform(size=n_starts)) / n_starts
    return bounds[:, 0] + pts * (bounds[:, 1] - bounds[:, 0])


def projected_grad_norm(x, g, bounds, tol=1e-10):
    """Sup-norm of the gradient projected onto the feasible box."""
    if bounds is None:
        return float(np.max(np.abs(g))) if len(g) else 0.0
    lo, hi = bounds[:, 0], bounds[:, 1]
    pg = g.copy()
    at_lo = x <= lo + tol
    at_hi = x >= hi - tol
    pg[at_lo] = np.minimum(g[at_lo], 0.0)
    pg[at_hi] = np.maximum(g[at_hi], 0.0)
    return float(np.max(np.abs(pg))) if len(pg) else 0.0


def _safe_value_and_grad(objective):
    def fg(x):
        try:
            f, g = objective.value_and_grad(x)
        except ObjectiveEvaluationError:
            return _FAIL_VALUE, np.zeros(len(x))
        if not np.isfinite(f):
            return _FAIL_VALUE, np.zeros(len(x))
        return f, g
    return fg


def _lbfgsb(fun_grad, x0, bounds, config):
    opts = {"maxiter": config.max_iter, "ftol": config.step_tol,
            "gtol": config.grad_tol, "maxfun": 20 * config.max_iter,
            "maxcor": 20}
    res = minimize(fun_grad, x0, jac=True, method="L-BFGS-B",
                   bounds=[tuple(b) for b in bounds] if bounds is not None else None,
                   options=opts)
    return res


def minimize_objective(objective, x0, config):
    """One local descent; returns a StartRecord-shaped tuple."""
    res = _lbfgsb(_safe_value_and_grad(objective), np.asarray(x0, float),
                  config.bounds, config)
    return np.asarray(res.x), float(res.fun), int(res.nit), \
        bool(res.success), str(res.message)


def fit_objective(objective, config: OptimizerConfig, x0_list=None):
    """Multi-start local optimization of a generic objective."""
    if config.bounds is None:
        raise ConfigurationError("fit requires bounds")
    if x0_list is None:
        x0_list = latin_hypercube(config.n_starts, config.bounds, config.seed)
    starts = []
    for idx, x0 in enumerate(x0_list):
        x, fun, nit, conv, msg = minimize_objective(objective, x0, config)
        starts.append(StartRecord(idx, np.asarray(x0, float), x, fun, nit,
                                  conv and fun < _FAIL_VALUE, msg))
    ok = [s for s in starts if s.fun < _FAIL_VALUE]
    if not ok:
        raise EstimationError("all optimization starts failed",
                              diagnostics=starts)
    best = min(ok, key=lambda s: (s.fun, s.index))
    cluster = float(np.mean([s.fun <= best.fun + 2 * config.val_tol
                             for s in starts]))
    _, g = objective.value_and_grad(best.x)
    gnorm = projected_grad_norm(best.x, g, config.bounds)
    theta_hat = objective.to_linear(best.x)
    return FitResult(x_hat=best.x, theta_hat=theta_hat, j_hat=best.fun,
                     converged=best.converged, grad_norm=gnorm,
                     cluster_fraction=cluster, starts=starts,
                     seed=config.seed)


def _yeast_start_worker(args):
    (model_dict, dataset_dict, tol, bounds, cfg_kw, x0, idx) = args
    from .likelihood import Dataset
    model = build_yeast_model(YeastModelConfig.from_dict(model_dict))
    dataset = Dataset.from_dict(dataset_dict)
    obj = PdeObjective(model, dataset, tol=tol, bounds=None)
    config = OptimizerConfig(bounds=np.asarray(bounds), **cfg_kw)
    x, fun, nit, conv, msg = minimize_objective(obj, x0, config)
    return idx, x0, x, fun, nit, conv, msg


def fit(model, dataset, config: OptimizerConfig = None, tol=TOL_PROD,
        jobs=1, model_config=None):
    """Multi-start maximum-likelihood fit of a PDE model.

    ``jobs > 1`` runs starts in parallel processes; this requires
    ``model_config`` (a :class:`YeastModelConfig`) so workers can rebuild
    the model.  The reduction over starts is deterministic either way.
    """
    config = config or OptimizerConfig(bounds=YEAST_BOUNDS_LOG10)
    objective = PdeObjective(model, dataset, tol=tol, bounds=config.bounds)
    if jobs <= 1 or model_config is None:
        return fit_objective(objective, config)

    x0_list = latin_hypercube(config.n_starts, config.bounds, config.seed)
    cfg_kw = {"max_iter": config.max_iter, "grad_tol": config.grad_tol,
              "step_tol": config.step_tol}
    payloads = [(model_config.to_dict(), dataset.to_dict(), tol,
                 config.bounds.tolist(), cfg_kw, x0, i)
                for i, x0 in enumerate(x0_list)]
    starts = [None] * len(payloads)
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        for idx, x0, x, fun, nit, conv, msg in pool.map(_yeast_start_worker,
                                                        payloads):
            starts[idx] = StartRecord(idx, np.asarray(x0), np.asarray(x),
                                      fun, nit, conv and fun < _FAIL_VALUE,
                                      msg)
    ok = [s for s in starts if s.fun < _FAIL_VALUE]
    if not ok:
        raise EstimationError("all optimization starts failed",
                              diagnostics=starts)
    best = min(ok, key=lambda s: (s.fun, s.index))
    cluster = float(np.mean([s.fun <= best.fun + 2 * config.val_tol
                             for s in starts]))
    _, g = objective.value_and_grad(best.x)
    gnorm = projected_grad_norm(best.x, g, config.bounds)
    return FitResult(x_hat=best.x, theta_hat=objective.to_linear(best.x),
                     j_hat=best.fun, converged=best.converged,
                     grad_norm=gnorm, cluster_fraction=cluster,
                     starts=starts, seed=config.seed)


# ---- equality-constrained local optimization ------------------------------

def constrained_fit_objective(objective, btarget: BoundTarget, c_internal,
                              x_init, config: OptimizerConfig,
                              lam_init=0.0) -> ConstrainedFit:
    """Minimize j subject to the bound target pinned at ``c_internal``.

    Coordinate targets are handled by elimination (exact constraint
    satisfaction); everything else runs an augmented-Lagrangian outer loop
    around the box-projected local optimizer.  The returned multiplier
    satisfies ``grad j + lam * grad g ~ 0`` at the solution.
    """
    x_init = np.asarray(x_init, dtype=float)
    bounds = config.bounds
    if btarget.coordinate_index is not None:
        return _constrained_by_elimination(objective, btarget, c_internal,
                                           x_init, config)

    lam = float(lam_init)
    mu = config.al_mu0
    x = x_init.copy()
    viol_prev = np.inf
    total_iter = 0
    fg_obj = _safe_value_and_grad(objective)

    for _ in range(config.al_max_outer):
        def fg(xx):
            f, g = fg_obj(xx)
            if f >= _FAIL_VALUE:
                return f, g
            gv = btarget.value(xx) - c_internal
            gg = btarget.grad(xx)
            return (f + lam * gv + 0.5 * mu * gv * gv,
                    g + (lam + mu * gv) * gg)

        res = _lbfgsb(fg, x, bounds, config)
        x = np.asarray(res.x)
        total_iter += int(res.nit)
        gv = btarget.value(x) - c_internal
        lam_new = lam + mu * gv
        fx, gradx = fg_obj(x)
        kkt = projected_grad_norm(x, gradx + lam_new * btarget.grad(x), bounds)
        if abs(gv) < config.constraint_tol and kkt < 10 * config.grad_tol:
            return ConstrainedFit(x=x, lam=lam_new, j=fx, kkt_residual=kkt,
                                  constraint_gap=abs(gv),
                                  n_iter=total_iter, converged=True)
        lam = lam_new
        if abs(gv) > 0.25 * viol_prev:
            mu = min(mu * 10.0, 1e12)
        viol_prev = abs(gv)

    if abs(gv) > 100 * config.constraint_tol:
        raise InfeasibleConstraintError(
            f"constraint |g - c| = {abs(gv):.3e} not attainable "
            f"(target {btarget.label}, c_internal={c_internal:.6g})")
    return ConstrainedFit(x=x, lam=lam, j=fx, kkt_residual=kkt,
                          constraint_gap=abs(gv), n_iter=total_iter,
                          converged=False)


def _constrained_by_elimination(objective, btarget, c_internal, x_init,
                                config):
    i = btarget.coordinate_index
    bounds = config.bounds
    if bounds is not None and not (bounds[i, 0] - 1e-12 <= c_internal
                                   <= bounds[i, 1] + 1e-12):
        raise InfeasibleConstraintError(
            f"pinned value {c_internal:.6g} outside bounds "
            f"[{bounds[i, 0]}, {bounds[i, 1]}] of coordinate {i}")
    free = [d for d in range(objective.dim) if d != i]
    fg_obj = _safe_value_and_grad(objective)

    def embed(xf):
        x = np.empty(objective.dim)
        x[free] = xf
        x[i] = c_internal
        return x

    def fg(xf):
        f, g = fg_obj(embed(xf))
        return f, g[free]

    sub_bounds = bounds[free] if bounds is not None else None
    sub_config = OptimizerConfig(bounds=sub_bounds, max_iter=config.max_iter,
                                 grad_tol=config.grad_tol,
                                 step_tol=config.step_tol)
    res = _lbfgsb(fg, x_init[free], sub_bounds, sub_config)
    x = embed(np.asarray(res.x))
    fx, gradx = fg_obj(x)
    lam = -float(gradx[i])
    kkt_vec = gradx + lam * btarget.grad(x)
    kkt = projected_grad_norm(x, kkt_vec, bounds)
    converged = bool(res.success or res.status == 1) and fx < _FAIL_VALUE
    return ConstrainedFit(x=x, lam=lam, j=fx, kkt_residual=kkt,
                          constraint_gap=0.0, n_iter=int(res.nit),
                          converged=converged)


def constrained_fit(model, dataset, target, c, theta_init,
                    config: OptimizerConfig = None, tol=TOL_PROD):
    """Constrained fit in model terms: returns ``(theta_c, lam, j_c)``.

    ``c`` and ``theta_init`` are linear-scale; the optimization itself runs
    in the internal log10 coordinates.
    """
    config = config or OptimizerConfig(bounds=YEAST_BOUNDS_LOG10)
    objective = PdeObjective(model, dataset, tol=tol,
                             target_times=target.state_times)
    bt = BoundTarget(objective, target)
    x_init = objective.to_internal(np.asarray(theta_init, dtype=float))
    res = constrained_fit_objective(objective, bt, bt.c_internal(c),
                                    x_init, config)
    return objective.to_linear(res.x), res.lam, res.j
