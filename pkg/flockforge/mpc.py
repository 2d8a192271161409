#!/usr/bin/env python
# -*- coding: utf-8 -*-
from __future__ import (absolute_import, division, print_function,
                        unicode_literals)

import logging
import time

import numpy as np

from flockforge import cost as fc
from flockforge.dynamics import (AgentState, FlockState, clamp_vector,
                                 advance_control_step, nearest_neighbors,
                                 _seek)
from flockforge.trajectory import Trajectory

"""
This module contains the receding-horizon controllers of the flock. At every
control step an acceleration plan over ``T`` control steps is optimized by
projected gradient descent with a backtracking line search, either for the
whole flock at once (centralized) or for one agent whose neighbors are assumed
to coast (distributed). The first action of the plan is applied and the rest
is discarded.
"""

logger = logging.getLogger(__name__)


# Parameters of the optimizer
class MpcParams(object):
    """
    Parameters of the receding-horizon optimization. None of the defaults is
    a published value.

    Parameters
    ----------
    horizon : ``int``, optional
        Number of predicted control steps T. Default is 3.

    descent_iters : ``int``, optional
        Cap on gradient-descent iterations. Default is 50.

    step_size : ``float``, optional
        First trial step of every line search. Default is 1.0.

    backtrack : ``float``, optional
        Step shrink factor of the line search, in (0, 1). Default is 0.5.

    tol : ``float``, optional
        The descent stops when the relative improvement of an accepted step
        falls below ``tol``. Default is 1e-6.

    max_backtracks : ``int``, optional
        Cap on step halvings per iteration. Default is 30.

    gradient : ``str``, optional
        ``'analytic'`` (reverse accumulation through the dynamics) or
        ``'finite'`` (central differences, for debugging). Default is
        ``'analytic'``.

    warm_start : ``bool``, optional
        If ``True``, controllers start each solve from the previous plan
        shifted by one control step. Default is ``False``.
    """
    def __init__(self, horizon=3, descent_iters=50, step_size=1.0,
                 backtrack=0.5, tol=1e-6, max_backtracks=30,
                 gradient='analytic', warm_start=False):
        if int(horizon) != horizon or horizon < 1:
            raise ValueError('horizon must be an integer >= 1.')
        if int(descent_iters) != descent_iters or descent_iters < 1:
            raise ValueError('descent_iters must be an integer >= 1.')
        if not 0 < backtrack < 1:
            raise ValueError('backtrack must be in (0, 1).')
        if not step_size > 0:
            raise ValueError('step_size must be positive.')
        if gradient not in ('analytic', 'finite'):
            raise ValueError('gradient must be "analytic" or "finite".')
        self.horizon = int(horizon)
        self.descent_iters = int(descent_iters)
        self.step_size = float(step_size)
        self.backtrack = float(backtrack)
        self.tol = float(tol)
        self.max_backtracks = int(max_backtracks)
        self.gradient = gradient
        self.warm_start = bool(warm_start)

    def to_dict(self):
        return {'horizon': self.horizon, 'descent_iters': self.descent_iters,
                'step_size': self.step_size, 'backtrack': self.backtrack,
                'tol': self.tol, 'max_backtracks': self.max_backtracks,
                'gradient': self.gradient, 'warm_start': self.warm_start}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# A sequence of predicted accelerations
class ControlPlan(object):
    """
    Predicted accelerations ``a(k + t | k)``.

    Parameters
    ----------
    accelerations : array_like
        Array of shape ``(T, m, dim)``: T control steps, m planned agents.
    """
    def __init__(self, accelerations):
        self.accelerations = np.array(accelerations, dtype=float)
        if self.accelerations.ndim != 3:
            raise ValueError('A plan is a (T, m, dim) array.')

    @classmethod
    def zeros(cls, horizon, m, dim):
        return cls(np.zeros((horizon, m, dim)))

    @property
    def horizon(self):
        return self.accelerations.shape[0]

    @property
    def first_action(self):
        return self.accelerations[0]

    def project(self, a_max):
        """Clamp every acceleration to magnitude ``a_max``."""
        return ControlPlan(clamp_vector(self.accelerations, a_max))

    def shifted(self):
        """The plan advanced by one control step, padded with zeros."""
        acc = np.zeros_like(self.accelerations)
        acc[:-1] = self.accelerations[1:]
        return ControlPlan(acc)


# Outcome of one plan optimization
class SolveResult(object):
    def __init__(self, plan, cost, zero_cost, iterations):
        self.plan = plan
        self.cost = cost
        self.zero_cost = zero_cost
        self.iterations = iterations

    def __repr__(self):
        return 'SolveResult(cost={}, zero_cost={}, iterations={})'.format(
            self.cost, self.zero_cost, self.iterations)


def _clamp_vjp(u, g, bound):
    """Vector-Jacobian product of the row-wise clamp at ``u``."""
    norm = np.linalg.norm(u, axis=1, keepdims=True)
    outside = norm > bound
    safe = np.where(outside, norm, 1.0)
    radial = u * np.sum(u * g, axis=1, keepdims=True) / safe ** 2
    return np.where(outside, bound / safe * (g - radial), g)


def _rollout(positions, velocities, acc, sim, lam, cost_fn, predator=None,
             predator_bounds=None, seek_predator=True, gradient=False):
    """
    Simulate ``acc`` (shape ``(T, n, dim)``) forward and accumulate the
    predicted cost. The predator, if any, either seeks the predicted centroid
    or coasts, and is treated as exogenous by the gradient.

    Returns
    -------
    total : ``float``

    grad : ``numpy.ndarray`` or ``None``
        Gradient with respect to ``acc``.
    """
    dt, v_max = sim.dt, sim.v_max
    p, v = positions, velocities
    pred_p = pred_v = None
    if predator is not None:
        pred_p, pred_v = predator
        pred_a_max, pred_v_max = predator_bounds
    tape = []
    cost_grads = []
    total = 0.0
    for t in range(len(acc)):
        a = acc[t]
        if pred_p is not None:
            pred_a = _seek(pred_p, p.mean(axis=0), pred_a_max) \
                if seek_predator else np.zeros_like(pred_p)
        for _ in range(sim.eta):
            u = v + dt * a
            if gradient:
                tape.append(u)
            p = p + dt * v
            v = clamp_vector(u, v_max)
            if pred_p is not None:
                pred_p = pred_p + dt * pred_v
                pred_v = clamp_vector(pred_v + dt * pred_a, pred_v_max)
        value, g = cost_fn(p, pred_p, gradient)
        total += value
        cost_grads.append(g)
    total += lam * float(np.sum(acc ** 2))
    if not gradient:
        return total, None

    grad = np.zeros_like(acc)
    gp = np.zeros_like(positions)
    gv = np.zeros_like(velocities)
    k = len(tape)
    for t in reversed(range(len(acc))):
        gp = gp + cost_grads[t]
        for _ in range(sim.eta):
            k -= 1
            gu = _clamp_vjp(tape[k], gv, v_max)
            grad[t] += dt * gu
            gv = gu + dt * gp
    grad += 2.0 * lam * acc
    return total, grad


def _finite_difference(value, acc, mask, h=1e-6):
    grad = np.zeros_like(acc)
    for index in zip(*np.nonzero(np.broadcast_to(mask, acc.shape))):
        step = np.zeros_like(acc)
        step[index] = h
        grad[index] = (value(acc + step) - value(acc - step)) / (2.0 * h)
    return grad


def _descend(value_and_grad, value, shape, mask, mpc, a_max, init=None):
    """
    Projected gradient descent with backtracking from the zero plan (or
    from ``init`` when it is better). Only accepts strict decreases.
    """
    zero = np.zeros(shape)
    zero_cost = value(zero)
    plan, current = zero, zero_cost
    if init is not None:
        init = clamp_vector(init * mask, a_max)
        init_cost = value(init)
        if init_cost < zero_cost:
            plan, current = init, init_cost

    iterations = 0
    for iterations in range(1, mpc.descent_iters + 1):
        if mpc.gradient == 'analytic':
            grad = value_and_grad(plan)[1]
        else:
            grad = _finite_difference(value, plan, mask)
        grad = grad * mask
        if not np.any(grad):
            break
        alpha = mpc.step_size
        accepted = False
        for _ in range(mpc.max_backtracks):
            trial = clamp_vector(plan - alpha * grad, a_max)
            trial_cost = value(trial)
            if trial_cost < current:
                accepted = True
                break
            alpha *= mpc.backtrack
        if not accepted:
            break
        improvement = (current - trial_cost) / max(abs(current), 1e-300)
        plan, current = trial, trial_cost
        if improvement < mpc.tol:
            break
    if current == zero_cost and not np.any(plan):
        logger.debug('Descent made no progress; returning the zero plan.')
    return SolveResult(ControlPlan(plan), current, zero_cost, iterations)


def _safe(fn):
    # a trial plan that drives two agents onto each other is rejected
    def wrapped(acc):
        try:
            return fn(acc)
        except fc.CoincidentAgentsError:
            return np.inf
    return wrapped


def _predator_of(flock, sim, pp):
    if flock.predator is None:
        return None, None
    if pp is None:
        raise ValueError('PredatorParams are required when the flock has a '
                         'predator.')
    return ((flock.predator.p, flock.predator.v),
            (pp.f_p * sim.a_max, pp.f_p * sim.v_max))


def _flock_cost_fn(spec):
    def cost_fn(p, pred_p, gradient):
        if gradient:
            value, grad = fc.task_cost_with_gradient(p, spec, pred_p)
            return value.total, grad
        return fc.task_cost(p, spec, pred_p).total, None
    return cost_fn


def _agent_cost_fn(spec):
    def cost_fn(p, pred_p, gradient):
        if gradient:
            value, grad = fc.agent_cost_with_gradient(p, spec, pred_p)
            return value.total, grad
        return fc.agent_cost(p, spec, pred_p).total, None
    return cost_fn


def _plan_array(plan):
    if isinstance(plan, ControlPlan):
        return plan.accelerations
    return np.asarray(plan, dtype=float)


def rollout_cost(flock, plan, spec, mpc, sim, pp=None):
    """
    Predicted cost of a centralized plan:
    ``sum_t J(p(k + t | k)) + lam * sum_t |a(k + t | k)|**2``.

    Parameters
    ----------
    flock : ``FlockState``

    plan : ``ControlPlan`` or array_like
        Accelerations of shape ``(T, n, dim)``.

    spec : ``CostSpec``

    mpc : ``MpcParams``

    sim : ``SimParams``

    pp : ``PredatorParams`` or ``None``, optional
        Needed when the flock has a predator.

    Returns
    -------
    cost : ``float``
    """
    acc = _plan_array(plan)
    if acc.shape != (mpc.horizon, flock.n, flock.dim):
        raise ValueError('Plan shape {} does not match (T, n, dim) = {}.'
                         .format(acc.shape,
                                 (mpc.horizon, flock.n, flock.dim)))
    predator, bounds = _predator_of(flock, sim, pp)
    return _rollout(flock.positions, flock.velocities, acc, sim, spec.lam,
                    _flock_cost_fn(spec), predator, bounds)[0]


def solve_centralized(flock, spec, mpc, sim, pp=None, init=None,
                      full_output=False):
    """
    Optimize the accelerations of the whole flock over the horizon.

    Parameters
    ----------
    flock : ``FlockState``
        At least two agents.

    spec : ``CostSpec``

    mpc : ``MpcParams``

    sim : ``SimParams``

    pp : ``PredatorParams`` or ``None``, optional

    init : ``ControlPlan`` or ``None``, optional
        Warm-start plan; used only if it beats the zero plan.

    full_output : ``bool``, optional
        If ``True``, also return the ``SolveResult``. Default is ``False``.

    Returns
    -------
    acc : ``numpy.ndarray``
        First action ``a(k | k)``, shape ``(n, dim)``.
    """
    if flock.n < 2:
        raise ValueError('The centralized controller needs at least two '
                         'agents.')
    predator, bounds = _predator_of(flock, sim, pp)
    cost_fn = _flock_cost_fn(spec)
    p, v = flock.positions, flock.velocities

    def value_and_grad(acc):
        return _rollout(p, v, acc, sim, spec.lam, cost_fn, predator, bounds,
                        gradient=True)

    def value(acc):
        return _rollout(p, v, acc, sim, spec.lam, cost_fn, predator,
                        bounds)[0]

    shape = (mpc.horizon, flock.n, flock.dim)
    result = _descend(value_and_grad, _safe(value), shape, np.ones(shape),
                      mpc, sim.a_max,
                      None if init is None else _plan_array(init))
    action = result.plan.first_action.copy()
    if full_output:
        return action, result
    return action


def solve_distributed(flock, i, N, spec, mpc, sim, init=None,
                      full_output=False):
    """
    Optimize the accelerations of agent ``i`` over the horizon from its own
    state and its ``N`` nearest neighbors, which are predicted to move with
    constant velocity. A predator, if any, is also predicted to coast.

    Returns
    -------
    acc : ``numpy.ndarray``
        First action ``a_i(k | k)``, shape ``(dim,)``.
    """
    neighbors = nearest_neighbors(flock, i, N)
    rows = [i] + neighbors
    p = flock.positions[rows]
    v = flock.velocities[rows]
    predator = None
    if flock.predator is not None:
        predator = (flock.predator.p, flock.predator.v)
    # bounds are irrelevant to a coasting predator
    bounds = (sim.a_max, np.inf)
    cost_fn = _agent_cost_fn(spec)

    def value_and_grad(acc):
        return _rollout(p, v, acc, sim, spec.lam, cost_fn, predator, bounds,
                        seek_predator=False, gradient=True)

    def value(acc):
        return _rollout(p, v, acc, sim, spec.lam, cost_fn, predator, bounds,
                        seek_predator=False)[0]

    shape = (mpc.horizon, len(rows), flock.dim)
    mask = np.zeros(shape)
    mask[:, 0, :] = 1.0
    if init is not None:
        full = np.zeros(shape)
        full[:, 0, :] = _plan_array(init)[:, 0, :]
        init = full
    result = _descend(value_and_grad, _safe(value), shape, mask, mpc,
                      sim.a_max, init)
    action = result.plan.first_action[0].copy()
    if full_output:
        return action, result
    return action


# Controllers share the call signature ``controller(flock) -> (n, dim)``
class ZeroController(object):
    """Always commands zero acceleration."""
    name = 'zero'

    def __call__(self, flock):
        return np.zeros_like(flock.positions)


class CentralizedController(object):
    """
    Centralized MPC over the whole flock.

    Parameters
    ----------
    spec : ``CostSpec``

    mpc : ``MpcParams``

    sim : ``SimParams``

    pp : ``PredatorParams`` or ``None``, optional
    """
    name = 'cmpc'

    def __init__(self, spec, mpc, sim, pp=None):
        self.spec = spec
        self.mpc = mpc
        self.sim = sim
        self.pp = pp
        self._plan = None

    def __call__(self, flock):
        init = None
        if self.mpc.warm_start and self._plan is not None:
            init = self._plan.shifted()
        action, result = solve_centralized(flock, self.spec, self.mpc,
                                           self.sim, self.pp, init,
                                           full_output=True)
        self._plan = result.plan
        return action


class DistributedController(object):
    """
    Distributed MPC: every agent solves its own problem from its
    ``n_neighbors`` nearest neighbors.
    """
    name = 'dmpc'

    def __init__(self, spec, mpc, sim, n_neighbors=5):
        self.spec = spec
        self.mpc = mpc
        self.sim = sim
        self.n_neighbors = int(n_neighbors)
        self._plans = {}

    def __call__(self, flock):
        acc = np.zeros_like(flock.positions)
        for i in range(flock.n):
            init = None
            if self.mpc.warm_start and i in self._plans:
                init = self._plans[i].shifted()
            acc[i], result = solve_distributed(
                flock, i, self.n_neighbors, self.spec, self.mpc, self.sim,
                init, full_output=True)
            self._plans[i] = result.plan
        return acc


def control_loop(initial, controller, sim, pp=None, meta=None,
                 n_steps=None, verbose=False):
    """
    Run ``controller`` in closed loop on the point model.

    At each control step the controller is queried for every agent, the
    accelerations are clamped to ``a_max`` and held for ``eta`` time steps;
    the predator, if any, follows ``predator_control``. Collisions are not
    checked here.

    Parameters
    ----------
    initial : ``FlockState``

    controller : callable
        ``controller(flock) -> (n, dim)`` accelerations.

    sim : ``SimParams``

    pp : ``PredatorParams`` or ``None``, optional

    meta : ``dict`` or ``None``, optional
        Stored in the trajectory.

    n_steps : ``int`` or ``None``, optional
        Number of control steps; ``sim.n_control_steps`` if ``None``.

    verbose : ``bool``, optional
        Log progress at INFO level. Default is ``False``.

    Returns
    -------
    traj : ``Trajectory``
        ``n_steps + 1`` states and ``n_steps`` actions. The mean controller
        time per agent decision is stored in ``traj.timing``.
    """
    if n_steps is None:
        n_steps = sim.n_control_steps
    level = logging.INFO if verbose else logging.DEBUG
    traj = Trajectory(meta=meta)
    flock = initial
    traj.append(flock)
    elapsed = 0.0
    for k in range(n_steps):
        start = time.perf_counter()
        acc = controller(flock)
        elapsed += time.perf_counter() - start
        acc = clamp_vector(acc, sim.a_max)
        flock = advance_control_step(flock, acc, sim, pp)
        traj.append(flock, acc)
        if (k + 1) % 50 == 0:
            logger.log(level, 'Control step %d/%d done', k + 1, n_steps)
    decisions = max(n_steps * initial.n, 1)
    traj.timing = {'controller': getattr(controller, 'name',
                                         type(controller).__name__),
                   'mean_seconds_per_decision': elapsed / decisions}
    return traj


def replay(initial, accelerations, sim, pp=None):
    """
    Re-apply recorded accelerations to ``initial`` and return the list of
    visited states (including ``initial``).
    """
    states = [initial]
    flock = initial
    for acc in accelerations:
        flock = advance_control_step(flock, acc, sim, pp)
        states.append(flock)
    return states


__all__ = ['MpcParams', 'ControlPlan', 'SolveResult', 'rollout_cost',
           'solve_centralized', 'solve_distributed', 'control_loop',
           'replay', 'ZeroController', 'CentralizedController',
           'DistributedController']
