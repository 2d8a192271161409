#!/usr/bin/env python
# -*- coding: utf-8 -*-
from __future__ import (absolute_import, division, print_function,
                        unicode_literals)

import numpy as np
from scipy.spatial import distance

from flockforge.dynamics import Obstacle

"""
This module contains the flocking cost terms and their analytic gradients:
cohesion, separation, the exact-penalty terms for inter-agent collisions,
obstacles and the predator, target seeking, and the task compositions built
from them. All functions take positions as an ``(n, dim)`` array.
"""

TASKS = ('BasicFlocking', 'CollisionAvoidance', 'ObstacleTarget',
         'PredatorAvoidance')

# Tasks whose cost contains the exact-penalty term
PENALTY_TASKS = ('CollisionAvoidance', 'ObstacleTarget', 'PredatorAvoidance')


class CoincidentAgentsError(ArithmeticError):
    """
    Raised when the separation term is evaluated on two agents at exactly
    the same position (the term is infinite there).
    """
    pass


# Task, weights and thresholds of a cost
class CostSpec(object):
    """
    Task selector and weights of the flocking cost.

    Parameters
    ----------
    task : ``str``, optional
        One of ``'BasicFlocking'``, ``'CollisionAvoidance'``,
        ``'ObstacleTarget'`` and ``'PredatorAvoidance'``. Default is
        ``'BasicFlocking'``.

    omega : ``float``, optional
        Separation weight. Default is 2000 (the centralized value; the
        distributed controller is usually run with 30).

    rho : ``float``, optional
        Penalty weight. Default is 100,000.

    omega_t : ``float``, optional
        Target-seeking weight. Not a published value. Default is 1.

    lam : ``float``, optional
        Control-effort weight. Not a published value. Default is 1.

    d_min : ``float``, optional
        Inter-agent and obstacle clearance. Default is 2.

    d_min_pred : ``float``, optional
        Predator clearance. Default is 4.

    r : ``float``, optional
        Radius of the separation neighborhood. Not a published value.
        Default is ``5 * d_min``.

    target : array_like or ``None``, optional
        Target position; required by, and only allowed for,
        ``'ObstacleTarget'``.

    obstacles : sequence or ``None``, optional
        List of ``Obstacle`` objects.
    """
    def __init__(self, task='BasicFlocking', omega=2000.0, rho=1e5,
                 omega_t=1.0, lam=1.0, d_min=2.0, d_min_pred=4.0, r=None,
                 target=None, obstacles=None):
        if task not in TASKS:
            raise ValueError('task must be one of {}.'.format(TASKS))
        self.task = task
        self.omega = float(omega)
        self.rho = float(rho)
        self.omega_t = float(omega_t)
        self.lam = float(lam)
        self.d_min = float(d_min)
        self.d_min_pred = float(d_min_pred)
        self.r = 5.0 * self.d_min if r is None else float(r)
        self.target = None if target is None else np.array(target,
                                                           dtype=float)
        self.obstacles = list(obstacles) if obstacles is not None else []

        if min(self.omega, self.rho, self.omega_t, self.lam) < 0:
            raise ValueError('Cost weights must be non-negative.')
        if task in PENALTY_TASKS and not self.rho > 0:
            raise ValueError('rho must be positive for task {}.'.format(task))
        if self.d_min_pred < self.d_min:
            raise ValueError('d_min_pred must be at least d_min.')
        if (self.target is not None) != (task == 'ObstacleTarget'):
            raise ValueError('A target is required by, and only allowed for, '
                             'the ObstacleTarget task.')

    @property
    def uses_penalty(self):
        return self.task in PENALTY_TASKS

    def with_obstacles(self, obstacles):
        """A copy of this cost with another obstacle field."""
        d = self.to_dict()
        d['obstacles'] = [o.to_dict() for o in obstacles]
        return CostSpec.from_dict(d)

    def to_dict(self):
        return {'task': self.task, 'omega': self.omega, 'rho': self.rho,
                'omega_t': self.omega_t, 'lam': self.lam,
                'd_min': self.d_min, 'd_min_pred': self.d_min_pred,
                'r': self.r,
                'target': None if self.target is None
                else self.target.tolist(),
                'obstacles': [o.to_dict() for o in self.obstacles]}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d['obstacles'] = [o if isinstance(o, Obstacle) else
                          Obstacle.from_dict(o)
                          for o in d.get('obstacles') or []]
        return cls(**d)


# Labeled cost breakdown
class CostValue(object):
    """
    A cost value with its unweighted terms.

    Parameters
    ----------
    terms : ``dict``
        Unweighted values of ``'cohesion'``, ``'separation'``,
        ``'penalty'``, ``'target'`` and ``'effort'``.

    weights : ``dict``
        Weight of each term in the total.
    """
    TERMS = ('cohesion', 'separation', 'penalty', 'target', 'effort')

    def __init__(self, terms, weights):
        self.terms = {key: float(terms.get(key, 0.0)) for key in self.TERMS}
        self.weights = {key: float(weights.get(key, 0.0))
                        for key in self.TERMS}

    @property
    def weighted(self):
        return {key: self.weights[key] * self.terms[key]
                for key in self.TERMS}

    @property
    def total(self):
        return sum(self.weighted.values())

    def __float__(self):
        return self.total

    def __repr__(self):
        return 'CostValue(total={}, terms={})'.format(self.total, self.terms)


def _check_size(positions, minimum=2):
    positions = np.asarray(positions, dtype=float)
    if positions.ndim != 2 or len(positions) < minimum:
        raise ValueError('Need an (n, dim) array with n >= {}.'
                         .format(minimum))
    return positions


def _pairs(positions):
    """Unordered pairs (i < j), their offsets p_i - p_j and distances."""
    n = len(positions)
    i, j = np.triu_indices(n, k=1)
    diff = positions[i] - positions[j]
    dist = distance.pdist(positions)
    return i, j, diff, dist


def _scatter_pairs(n, i, j, pair_grad):
    """Accumulate d/dp_i (and -d/dp_i on p_j) of pairwise terms."""
    grad = np.zeros((n, pair_grad.shape[1]))
    np.add.at(grad, i, pair_grad)
    np.add.at(grad, j, -pair_grad)
    return grad


def cohesion_cost(positions):
    """
    Mean squared pairwise distance,
    ``2 / (n (n - 1)) * sum_{i<j} |p_ij|**2``.
    """
    positions = _check_size(positions)
    n = len(positions)
    return 2.0 / (n * (n - 1)) * np.sum(distance.pdist(positions,
                                                       'sqeuclidean'))


def cohesion_gradient(positions):
    positions = _check_size(positions)
    n = len(positions)
    return 4.0 / (n * (n - 1)) * (n * positions - positions.sum(axis=0))


def separation_cost(positions, r):
    """
    Sum of ``1 / |p_ij|**2`` over unordered pairs closer than ``r``.

    Raises
    ------
    CoincidentAgentsError
        If two agents share a position.
    """
    positions = _check_size(positions)
    dist = distance.pdist(positions)
    if np.any(dist == 0):
        raise CoincidentAgentsError('Two agents are at the same position.')
    inside = dist < r
    return float(np.sum(1.0 / dist[inside] ** 2))


def separation_gradient(positions, r):
    positions = _check_size(positions)
    i, j, diff, dist = _pairs(positions)
    if np.any(dist == 0):
        raise CoincidentAgentsError('Two agents are at the same position.')
    coef = np.where(dist < r, -2.0 / dist ** 4, 0.0)
    return _scatter_pairs(len(positions), i, j, coef[:, None] * diff)


# Violation vectors. Each helper returns (violations, gradient of
# 0.5 * sum(violations**2)), which is all the penalty norm needs.
def _collision_violations(positions, d_min, only=None):
    n = len(positions)
    i, j, diff, dist = _pairs(positions)
    if only is not None:
        keep = (i == only) | (j == only)
        i, j, diff, dist = i[keep], j[keep], diff[keep], dist[keep]
    viol = np.maximum(d_min - dist, 0.0)
    unit = diff / np.where(dist > 0, dist, 1.0)[:, None]
    # subgradient 0 for exactly coincident agents
    unit[dist == 0] = 0.0
    grad = _scatter_pairs(n, i, j, -(viol[:, None] * unit))
    return viol, grad


def _obstacle_violations(positions, obstacles, d_min, only=None):
    grad = np.zeros_like(positions)
    if len(obstacles) == 0:
        return np.zeros(0), grad
    rows = np.arange(len(positions)) if only is None else np.array([only])
    viol = []
    for o in obstacles:
        offset = positions[rows] - o.center
        norm = np.linalg.norm(offset, axis=1)
        v = np.maximum(d_min - (norm - o.radius), 0.0)
        unit = offset / np.where(norm > 0, norm, 1.0)[:, None]
        unit[norm == 0] = 0.0
        grad[rows] += -(v[:, None] * unit)
        viol.append(v)
    return np.concatenate(viol), grad


def _predator_violations(positions, p_pred, d_min_pred, only=None):
    grad = np.zeros_like(positions)
    rows = np.arange(len(positions)) if only is None else np.array([only])
    offset = positions[rows] - np.asarray(p_pred, dtype=float)
    norm = np.linalg.norm(offset, axis=1)
    viol = np.maximum(d_min_pred - norm, 0.0)
    unit = offset / np.where(norm > 0, norm, 1.0)[:, None]
    unit[norm == 0] = 0.0
    grad[rows] = -(viol[:, None] * unit)
    return viol, grad


def _norm_of(parts):
    """2-norm of the stacked violations and its (sub)gradient."""
    viol = np.concatenate([v for v, _ in parts])
    value = np.sqrt(np.sum(viol ** 2))
    if value == 0:
        return 0.0, np.zeros_like(parts[0][1])
    return value, sum(g for _, g in parts) / value


def collision_penalty(positions, d_min):
    """
    2-norm of the vector of ``max(d_min - |p_ij|, 0)`` over unordered pairs.
    """
    positions = _check_size(positions)
    return _norm_of([_collision_violations(positions, d_min)])[0]


def obstacle_penalty(positions, obstacles, d_min):
    """
    2-norm over (agent, obstacle) pairs of ``max(d_min - dist, 0)``, where
    ``dist`` is the signed distance to the obstacle boundary. An agent inside
    an obstacle contributes ``d_min`` plus its penetration depth.
    """
    positions = _check_size(positions, minimum=1)
    return _norm_of([_obstacle_violations(positions, obstacles, d_min)])[0]


def target_cost(positions, g):
    """Mean squared distance of the agents to the target ``g``."""
    positions = _check_size(positions, minimum=1)
    if g is None:
        raise ValueError('A target is required.')
    return float(np.mean(np.sum((positions - g) ** 2, axis=1)))


def predator_penalty(positions, p_pred, d_min_pred):
    """
    2-norm over agents of ``max(d_min_pred - |p_i - p_pred|, 0)``.
    """
    positions = _check_size(positions, minimum=1)
    if p_pred is None:
        raise ValueError('A predator position is required.')
    return _norm_of([_predator_violations(positions, p_pred,
                                          d_min_pred)])[0]


def _penalty_parts(positions, spec, predator, only=None):
    parts = [_collision_violations(positions, spec.d_min, only)]
    if spec.task == 'ObstacleTarget':
        parts.append(_obstacle_violations(positions, spec.obstacles,
                                          spec.d_min, only))
    elif spec.task == 'PredatorAvoidance':
        if predator is None:
            raise ValueError('The PredatorAvoidance task needs the predator '
                             'position.')
        parts.append(_predator_violations(positions, predator,
                                          spec.d_min_pred, only))
    return parts


def _weights(spec, separation):
    return {'cohesion': 1.0,
            'separation': spec.omega if separation else 0.0,
            'penalty': spec.rho if spec.uses_penalty else 0.0,
            'target': spec.omega_t if spec.task == 'ObstacleTarget'
            else 0.0,
            'effort': spec.lam}


def _evaluate_flock(positions, spec, predator, gradient):
    positions = _check_size(positions)
    terms = {'cohesion': cohesion_cost(positions)}
    grad = cohesion_gradient(positions) if gradient else None
    if spec.task == 'BasicFlocking':
        terms['separation'] = separation_cost(positions, spec.r)
        if gradient:
            grad = grad + spec.omega * separation_gradient(positions, spec.r)
    else:
        terms['penalty'], pen_grad = _norm_of(
            _penalty_parts(positions, spec, predator))
        if gradient:
            grad = grad + spec.rho * pen_grad
    if spec.task == 'ObstacleTarget':
        terms['target'] = target_cost(positions, spec.target)
        if gradient:
            grad = grad + spec.omega_t * 2.0 * (positions - spec.target) / \
                len(positions)
    value = CostValue(terms, _weights(spec, spec.task == 'BasicFlocking'))
    return value, grad


def task_cost(positions, spec, predator=None):
    """
    The task cost J1..J4 of a flock configuration.

    - ``BasicFlocking``: cohesion + omega * separation
    - ``CollisionAvoidance``: cohesion + rho * J_CA
    - ``ObstacleTarget``: cohesion + omega_t * J_TS
      + rho * sqrt(J_CA**2 + J_OA**2)
    - ``PredatorAvoidance``: cohesion + rho * sqrt(J_CA**2 + J_PA**2)

    The separation term is dropped whenever the collision penalty is
    present.

    Parameters
    ----------
    positions : array_like
        Agent positions, shape ``(n, dim)``, ``n >= 2``.

    spec : ``CostSpec``

    predator : array_like or ``None``, optional
        Predator position (required by ``'PredatorAvoidance'``).

    Returns
    -------
    value : ``CostValue``
    """
    return _evaluate_flock(positions, spec, predator, False)[0]


def task_cost_gradient(positions, spec, predator=None):
    """
    Gradient of ``task_cost`` with respect to every agent position. Kinks of
    ``max(., 0)`` and the origin of the penalty norm get the zero
    subgradient.

    Returns
    -------
    grad : ``numpy.ndarray``
        Shape ``(n, dim)``.
    """
    return _evaluate_flock(positions, spec, predator, True)[1]


def _evaluate_agent(local, spec, predator, gradient):
    local = _check_size(local)
    n_nb = len(local) - 1
    diff = local[0] - local[1:]
    sq = np.sum(diff ** 2, axis=1)
    grad = np.zeros_like(local) if gradient else None

    terms = {'cohesion': np.sum(sq) / n_nb}
    if gradient:
        grad[0] += 2.0 * diff.sum(axis=0) / n_nb
    if spec.task == 'BasicFlocking':
        if np.any(sq == 0):
            raise CoincidentAgentsError('Agent shares its position with a '
                                        'neighbor.')
        terms['separation'] = np.sum(1.0 / sq)
        if gradient:
            grad[0] += spec.omega * np.sum(-2.0 * diff / (sq ** 2)[:, None],
                                           axis=0)
    else:
        terms['penalty'], pen_grad = _norm_of(
            _penalty_parts(local, spec, predator, only=0))
        if gradient:
            grad[0] += spec.rho * pen_grad[0]
    if spec.task == 'ObstacleTarget':
        terms['target'] = np.sum((local[0] - spec.target) ** 2)
        if gradient:
            grad[0] += spec.omega_t * 2.0 * (local[0] - spec.target)
    value = CostValue(terms, _weights(spec, spec.task == 'BasicFlocking'))
    return value, grad


def agent_cost(local_positions, spec, predator=None):
    """
    Cost seen by a single agent from its neighborhood (row 0 is the agent,
    the remaining rows are its neighbors).

    For ``'BasicFlocking'`` this is
    ``mean_j |p_0j|**2 + omega * sum_j 1 / |p_0j|**2``; for the other tasks
    the neighbor cohesion term is combined with penalty entries that involve
    agent 0 only (its pairs with the neighbors, its obstacle distances, its
    predator distance) and, for ``'ObstacleTarget'``, its own squared
    distance to the target.

    Returns
    -------
    value : ``CostValue``
    """
    return _evaluate_agent(local_positions, spec, predator, False)[0]


def agent_cost_gradient(local_positions, spec, predator=None):
    """
    Gradient of ``agent_cost``; only row 0 is nonzero.
    """
    return _evaluate_agent(local_positions, spec, predator, True)[1]


def task_cost_with_gradient(positions, spec, predator=None):
    """``task_cost`` and ``task_cost_gradient`` in one evaluation."""
    return _evaluate_flock(positions, spec, predator, True)


def agent_cost_with_gradient(local_positions, spec, predator=None):
    """``agent_cost`` and ``agent_cost_gradient`` in one evaluation."""
    return _evaluate_agent(local_positions, spec, predator, True)
