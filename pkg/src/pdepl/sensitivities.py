"""Forward sensitivities of the parameter-to-state map and adjoint gradients.

First-order sensitivities ``e_i = dS/dtheta_i`` solve the linearized system

    e_i' = jac_u e_i + jac_theta[:, i],      e_i(0) = 0,

and second-order sensitivities ``z_ij = d^2 S / dtheta_i dtheta_j`` solve

    z_ij' = jac_u z_ij + d2_uu(e_i, e_j) + d2_thetau(i, e_j)
            + d2_thetau(j, e_i) + d2_thetatheta(i, j),   z_ij(0) = 0.

All equations share the state Jacobian, so the state and every requested
sensitivity are integrated as one coupled stiff system on a common adaptive
grid.  Parameters that do not enter the dynamics (``model.dynamic_params``)
have identically zero state sensitivities and are skipped.

The adjoint route computes the objective gradient from one backward solve
instead of ``n_theta`` forward ones; discrete measurements enter the adjoint
as jump conditions at the observation times.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import CapabilityError
from .models import ModelSpec, Trajectory, TOL_PROD, _check_times
from .odes import integrate_dense, integrate_stiff, pack_banded


@dataclass
class SensitivityBundle:
    """Base trajectory plus sensitivity trajectories on shared output times.

    ``first[t_index, i, :]`` holds ``e_i`` at the corresponding output time;
    ``second`` maps unordered index pairs to ``(n_times, n_state)`` arrays
    and is ``None`` for first-order bundles.
    """

    trajectory: Trajectory
    first: np.ndarray  # (n_times, n_param, n_state)
    second: dict = None  # {(i, j): (n_times, n_state)}
    order: int = 1
    solver_stats: dict = field(default_factory=dict)

    @property
    def times(self):
        return self.trajectory.times

    def time_index(self, t):
        idx = np.nonzero(np.isclose(self.times, t, rtol=0.0, atol=1e-12))[0]
        if idx.size == 0:
            raise KeyError(f"time {t} not among bundle outputs")
        return int(idx[0])

    def second_at(self, i, j):
        if self.second is None:
            raise CapabilityError("bundle was computed with order=1")
        return self.second[(min(i, j), max(i, j))]


def _pairs(indices):
    return [(a, b) for ai, a in enumerate(indices) for b in indices[ai:]]


def forward_sensitivities(model: ModelSpec, theta, times, order=1,
                          tol=TOL_PROD) -> SensitivityBundle:
    """Solve state and sensitivity equations as one coupled system.

    Parameters
    ----------
    order : 1 or 2
        Second order requires the model's second-derivative callbacks and
        adds one equation block per unordered pair of dynamic parameters.
    """
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2, got {order}")
    if order == 2 and not model.has_second_order():
        raise CapabilityError(
            "model lacks second-derivative callbacks required for order=2")
    theta = np.asarray(theta, dtype=float)
    times = _check_times(model, times)
    abstol, reltol = tol

    n = model.n_state
    dyn = list(model.dynamic_indices())
    nd = len(dyn)
    pairs = _pairs(dyn) if order == 2 else []
    nsys = 1 + nd + len(pairs)

    def fun(t, y):
        Y = y.reshape(n, nsys).T
        u = Y[0]
        J = model.jac_u(theta, u, t)
        out = np.empty_like(Y)
        out[0] = model.rhs(theta, u, t)
        jt = model.jac_theta(theta, u, t)
        E = Y[1:1 + nd]
        out[1:1 + nd] = (J @ E.T).T + jt[:, dyn].T
        for k, (a, b) in enumerate(pairs):
            ea, eb = E[dyn.index(a)], E[dyn.index(b)]
            h = model.d2_uu(theta, u, t, ea, eb)
            h = h + model.d2_thetau(theta, u, t, a, eb)
            h = h + model.d2_thetau(theta, u, t, b, ea)
            h = h + model.d2_thetatheta(theta, u, t, a, b)
            out[1 + nd + k] = J @ Y[1 + nd + k] + h
        return out.T.ravel()

    if model.jac_bandwidth is not None:
        bw = model.jac_bandwidth
        MU = bw * nsys
        band = (MU, MU)

        def jac(t, y):
            u = y.reshape(n, nsys)[:, 0]
            packed_n = pack_banded(model.jac_u(theta, u, t), bw, bw, n)
            packed = np.zeros((2 * MU + 1, n * nsys))
            for delta in range(-bw, bw + 1):
                packed[MU - delta * nsys] = np.repeat(packed_n[bw - delta], nsys)
            return packed
    else:
        band = None

        def jac(t, y):
            u = y.reshape(n, nsys)[:, 0]
            J = model.jac_u(theta, u, t)
            if sp.issparse(J):
                return sp.block_diag([J] * nsys, format="csc")
            return np.kron(np.eye(nsys), np.asarray(J))

    y0 = np.zeros(n * nsys)
    y0[0::nsys] = model.u0
    t_solve = times if times[0] == 0.0 else np.concatenate([[0.0], times])
    res = integrate_stiff(fun, y0, t_solve, rtol=reltol, atol=abstol,
                          jac=jac, band=band)
    Y = res.states.reshape(len(t_solve), n, nsys).transpose(0, 2, 1)
    if times[0] != 0.0:
        Y = Y[1:]
    else:
        Y[0, 0] = model.u0
        Y[0, 1:] = 0.0

    traj = Trajectory(times=times, states=Y[:, 0].copy(),
                      solver_stats=res.stats)
    first = np.zeros((len(times), model.n_param, n))
    for pos, i in enumerate(dyn):
        first[:, i, :] = Y[:, 1 + pos, :]
    second = None
    if order == 2:
        second = {}
        zero = np.zeros((len(times), n))
        for i in range(model.n_param):
            for j in range(i, model.n_param):
                second[(i, j)] = zero
        for k, (a, b) in enumerate(pairs):
            second[(a, b)] = Y[:, 1 + nd + k, :].copy()
    return SensitivityBundle(trajectory=traj, first=first, second=second,
                             order=order, solver_stats=res.stats)


class AdjointObjective:
    """Data the adjoint solver needs about an objective ``J(theta, u)``.

    ``jumps(theta, u_at)`` must return ``(times, jump_rows, grad_direct)``:
    the observation times, the state-derivative contributions ``dJ/du(t_k)``
    entering the adjoint as jumps (one row per time), and the direct partial
    ``J_theta``.  ``u_at`` is a callable evaluating the state trajectory.
    """

    def jumps(self, theta, u_at):  # pragma: no cover - interface only
        raise NotImplementedError


def adjoint_gradient(model: ModelSpec, theta, objective, tol=TOL_PROD):
    """Objective gradient via one backward adjoint solve.

    Integrates ``p' = -jac_u^T p`` backward from ``p(T) = 0`` with jump
    conditions ``p(t_k^-) = p(t_k^+) - dJ/du(t_k)`` at observation times and
    accumulates the quadrature ``int <jac_theta_i, p> dt`` alongside, so the
    time integral shares the backward integrator's error control.  Returns
    ``J_theta - int <jac_theta, p> dt``.
    """
    theta = np.asarray(theta, dtype=float)
    abstol, reltol = tol
    n, npar = model.n_state, model.n_param

    def ffun(t, y):
        return model.rhs(theta, y, t)

    def fjac(t, y):
        J = model.jac_u(theta, y, t)
        return J.toarray() if sp.issparse(J) else np.asarray(J)

    fwd = integrate_dense(ffun, model.u0, (0.0, model.t_final),
                          rtol=reltol, atol=abstol, jac=fjac)
    u_at = fwd.dense

    obs_times, jump_rows, grad_direct = objective.jumps(theta, u_at)
    obs_times = np.asarray(obs_times, dtype=float)
    order = np.argsort(-obs_times)
    obs_times, jump_rows = obs_times[order], np.asarray(jump_rows)[order]

    T = model.t_final

    def bfun(tau, y):
        u = u_at(T - tau)
        p = y[:n]
        J = model.jac_u(theta, u, T - tau)
        dp = J.T @ p if sp.issparse(J) else np.asarray(J).T @ p
        dq = model.jac_theta(theta, u, T - tau).T @ p
        return np.concatenate([dp, dq])

    def bjac(tau, y):
        u = u_at(T - tau)
        J = model.jac_u(theta, u, T - tau)
        Jd = J.toarray() if sp.issparse(J) else np.asarray(J)
        out = np.zeros((n + npar, n + npar))
        out[:n, :n] = Jd.T
        out[n:, :n] = model.jac_theta(theta, u, T - tau).T
        return out

    y = np.zeros(n + npar)
    tau = 0.0
    seg_ends = [T - t for t in obs_times if t < T] + [T]
    k = 0
    while k < len(obs_times) and obs_times[k] >= T - 1e-12:
        y[:n] -= jump_rows[k]
        k += 1
    for tau_end in seg_ends:
        if tau_end > tau + 1e-13:
            res = integrate_stiff(bfun, y, np.array([tau, tau_end]),
                                  rtol=reltol, atol=abstol, jac=bjac,
                                  band=None)
            y = res.states[-1]
            tau = tau_end
        while k < len(obs_times) and abs((T - obs_times[k]) - tau) <= 1e-12:
            y[:n] -= jump_rows[k]
            k += 1
    return grad_direct - y[n:]
