#!/usr/bin/env python
# -*- coding: utf-8 -*-
from __future__ import (absolute_import, division, print_function,
                        unicode_literals)

import json
import logging

import numpy as np
from astropy.table import Table
from scipy.spatial import distance

from flockforge.dynamics import FlockState

"""
This module contains the evaluation measures of a flock: diameter, velocity
convergence, collision events, converged statistics over runs and the
difference curves between two sets of runs.
"""

logger = logging.getLogger(__name__)

COLLISION_TYPES = ('ic', 'oc', 'pc')


def _positions(flock):
    if isinstance(flock, FlockState):
        return flock.positions
    return np.asarray(flock, dtype=float)


def _velocities(flock):
    if isinstance(flock, FlockState):
        return flock.velocities
    return np.asarray(flock, dtype=float)


def diameter(flock):
    """
    Largest distance between two agents.

    Parameters
    ----------
    flock : ``FlockState`` or array_like
        The flock or an ``(n, dim)`` array of positions, ``n >= 2``.

    Returns
    -------
    d : ``float``
    """
    positions = _positions(flock)
    if len(positions) < 2:
        raise ValueError('The diameter needs at least two agents.')
    return float(np.max(distance.pdist(positions)))


def velocity_convergence(flock):
    """
    Mean squared deviation of the agent velocities from the flock-average
    velocity.

    Parameters
    ----------
    flock : ``FlockState`` or array_like
        The flock or an ``(n, dim)`` array of velocities.
    """
    v = _velocities(flock)
    return float(np.mean(np.sum((v - v.mean(axis=0)) ** 2, axis=1)))


def lift(trajectories, fn):
    """
    Apply a state metric to every recorded state.

    Parameters
    ----------
    trajectories : sequence of ``Trajectory``

    fn : callable
        ``fn(FlockState) -> float``.

    Returns
    -------
    series : ``list`` of ``numpy.ndarray``
        One series per trajectory, one value per state.
    """
    return [np.array([fn(s) for s in traj.states]) for traj in trajectories]


def _state_collisions(state, d_min, d_min_pred, obstacles):
    """Number of violating pairs of each type in one state."""
    p = state.positions
    counts = {'ic': 0, 'oc': 0, 'pc': 0}
    if len(p) >= 2:
        counts['ic'] = int(np.sum(distance.pdist(p) < d_min))
    if obstacles:
        gaps = np.min([o.boundary_distance(p) for o in obstacles], axis=0)
        counts['oc'] = int(np.sum(gaps < d_min))
    if state.predator is not None and d_min_pred is not None:
        gaps = np.linalg.norm(p - state.predator.p, axis=1)
        counts['pc'] = int(np.sum(gaps < d_min_pred))
    return counts


# Collisions of one trajectory
class CollisionEvents(object):
    """
    Per-state collision counts of one trajectory.

    Attributes
    ----------
    per_state : ``dict``
        For each of ``'ic'``, ``'oc'`` and ``'pc'``, an integer array with the
        number of violating pairs (agent pairs, agent-obstacle or
        agent-predator) in every state.

    pairs : ``dict``
        Number of checked pairs per state for each type.
    """
    def __init__(self, per_state, pairs):
        self.per_state = per_state
        self.pairs = pairs

    @property
    def n_states(self):
        return len(self.per_state['ic'])

    @property
    def counts(self):
        return {key: int(np.sum(self.per_state[key]))
                for key in COLLISION_TYPES}

    @property
    def flags(self):
        return {key: self.per_state[key] > 0 for key in COLLISION_TYPES}


def collision_events(traj, d_min, d_min_pred=None, obstacles=None):
    """
    Inter-agent (IC), obstacle (OC) and predator (PC) collisions along a
    trajectory. An IC is a pair closer than ``d_min``; an OC an agent whose
    closest obstacle point is nearer than ``d_min``; a PC an agent nearer
    than ``d_min_pred`` to the predator.

    Parameters
    ----------
    traj : ``Trajectory``

    d_min : ``float``

    d_min_pred : ``float`` or ``None``, optional
        Predator clearance; predator collisions are not checked if ``None``.

    obstacles : sequence or ``None``, optional
        The trajectory's own obstacles if ``None``.

    Returns
    -------
    events : ``CollisionEvents``
    """
    obstacles = traj.obstacles if obstacles is None else obstacles
    per_state = {key: [] for key in COLLISION_TYPES}
    for state in traj.states:
        counts = _state_collisions(state, d_min, d_min_pred, obstacles)
        for key in COLLISION_TYPES:
            per_state[key].append(counts[key])
    n = traj.states[0].n if traj.states else 0
    has_predator = bool(traj.states) and traj.states[0].predator is not None
    pairs = {'ic': n * (n - 1) // 2,
             'oc': n if obstacles else 0,
             'pc': n if has_predator and d_min_pred is not None else 0}
    return CollisionEvents({key: np.array(val, dtype=int)
                            for key, val in per_state.items()}, pairs)


# Per-step measures of one trajectory
class MetricSeries(object):
    """
    Diameter and velocity convergence of every state of one trajectory,
    with its collision events.
    """
    def __init__(self, diameter, vc, events):
        self.diameter = np.asarray(diameter, dtype=float)
        self.vc = np.asarray(vc, dtype=float)
        self.events = events

    def __len__(self):
        return len(self.diameter)

    def to_table(self):
        table = Table([np.arange(len(self)), self.diameter, self.vc],
                      names=('step', 'diameter', 'vc'))
        for key in COLLISION_TYPES:
            table[key] = self.events.per_state[key]
        return table


def metric_series(traj, d_min, d_min_pred=None):
    return MetricSeries(lift([traj], diameter)[0],
                        lift([traj], velocity_convergence)[0],
                        collision_events(traj, d_min, d_min_pred))


def converged_stats(series):
    """
    Mean and population standard deviation of the final-state diameter and
    velocity convergence over runs.

    Parameters
    ----------
    series : sequence of ``MetricSeries``
        At least one run.

    Returns
    -------
    stats : ``dict``
        Keys ``diameter_mean``, ``diameter_sd``, ``vc_mean``, ``vc_sd``.
    """
    series = list(series)
    if not series:
        raise ValueError('converged_stats needs at least one run.')
    final_d = np.array([s.diameter[-1] for s in series])
    final_vc = np.array([s.vc[-1] for s in series])
    return {'diameter_mean': float(np.mean(final_d)),
            'diameter_sd': float(np.std(final_d)),
            'vc_mean': float(np.mean(final_vc)),
            'vc_sd': float(np.std(final_vc))}


def series_difference(set_a, set_b):
    """
    Pointwise mean of the series of ``set_a`` minus that of ``set_b``.
    Series of different lengths are truncated to the shortest one.

    Parameters
    ----------
    set_a, set_b : sequence of array_like
        Non-empty sets of per-step series.

    Returns
    -------
    delta : ``numpy.ndarray``
    """
    set_a = [np.asarray(s, dtype=float) for s in set_a]
    set_b = [np.asarray(s, dtype=float) for s in set_b]
    if not set_a or not set_b:
        raise ValueError('series_difference needs two non-empty sets.')
    lengths = [len(s) for s in set_a + set_b]
    length = min(lengths)
    if max(lengths) != length:
        logger.warning('Series lengths differ (%d to %d); truncating to %d',
                       length, max(lengths), length)
    mean_a = np.mean([s[:length] for s in set_a], axis=0)
    mean_b = np.mean([s[:length] for s in set_b], axis=0)
    return mean_a - mean_b


# Summary of a set of runs
class EvalReport(object):
    """
    Converged statistics, collision counts and rates and controller timing
    of a set of runs.

    Parameters
    ----------
    controller : ``str``

    task : ``str``

    n_runs : ``int``

    stats : ``dict``
        Output of ``converged_stats``.

    counts : ``dict``
        Collision counts per type.

    rates : ``dict``
        Fraction of states with at least one collision of each type.

    pair_rates : ``dict``
        Counts divided by the number of (state, pair) checks.

    count_mode : ``str``
        ``'instances'`` or ``'states'``.

    timing : ``float`` or ``None``
        Mean seconds per agent decision.
    """
    def __init__(self, controller, task, n_runs, stats, counts, rates,
                 pair_rates, count_mode='instances', timing=None):
        self.controller = controller
        self.task = task
        self.n_runs = int(n_runs)
        self.stats = stats
        self.counts = counts
        self.rates = rates
        self.pair_rates = pair_rates
        self.count_mode = count_mode
        self.timing = timing

    def to_dict(self, with_timing=False):
        d = {'controller': self.controller, 'task': self.task,
             'n_runs': self.n_runs, 'count_mode': self.count_mode}
        d.update(self.stats)
        for key in COLLISION_TYPES:
            d[key + '_count'] = self.counts[key]
            d[key + '_rate'] = self.rates[key]
            d[key + '_pair_rate'] = self.pair_rates[key]
        if with_timing:
            d['seconds_per_decision'] = self.timing
        return d

    def to_table(self):
        d = self.to_dict()
        return Table(rows=[[d[key] for key in sorted(d)]], names=sorted(d))


def evaluate(trajectories, d_min, d_min_pred=None, controller='', task='',
             count_mode='instances', timing=None):
    """
    Build the ``EvalReport`` of a set of runs.

    Parameters
    ----------
    trajectories : sequence of ``Trajectory``

    d_min : ``float``

    d_min_pred : ``float`` or ``None``, optional

    controller, task : ``str``, optional
        Labels copied into the report.

    count_mode : ``str``, optional
        ``'instances'`` counts every violating (state, pair); ``'states'``
        counts states with at least one violation. Default is
        ``'instances'``.

    timing : ``float`` or ``None``, optional
        Mean seconds per agent decision.

    Returns
    -------
    report : ``EvalReport``
    """
    if count_mode not in ('instances', 'states'):
        raise ValueError('count_mode must be "instances" or "states".')
    series = [metric_series(t, d_min, d_min_pred) for t in trajectories]
    stats = converged_stats(series)
    n_states = sum(len(s) for s in series)
    counts, rates, pair_rates = {}, {}, {}
    for key in COLLISION_TYPES:
        instances = sum(s.events.counts[key] for s in series)
        flagged = sum(int(np.sum(s.events.flags[key])) for s in series)
        checks = sum(len(s) * s.events.pairs[key] for s in series)
        counts[key] = instances if count_mode == 'instances' else flagged
        rates[key] = flagged / n_states if n_states else 0.0
        pair_rates[key] = instances / checks if checks else 0.0
    return EvalReport(controller, task, len(series), stats, counts, rates,
                      pair_rates, count_mode, timing)


def write_report(report, prefix):
    """
    Write ``<prefix>.csv`` (one row) and ``<prefix>.json``.
    """
    report.to_table().write(prefix + '.csv', format='ascii.csv',
                            overwrite=True)
    with open(prefix + '.json', 'w') as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)


def write_series(series, path):
    """
    Write the per-step mean and standard deviation of diameter and velocity
    convergence over a set of runs, one row per control step.
    """
    series = list(series)
    length = min(len(s) for s in series)
    d = np.array([s.diameter[:length] for s in series])
    vc = np.array([s.vc[:length] for s in series])
    table = Table([np.arange(length), d.mean(axis=0), d.std(axis=0),
                   vc.mean(axis=0), vc.std(axis=0)],
                  names=('step', 'diameter_mean', 'diameter_sd', 'vc_mean',
                         'vc_sd'))
    table.write(path, format='ascii.csv', overwrite=True)
    return table


def write_difference(delta_d, delta_vc, path):
    """
    Write difference curves with columns ``step``, ``delta_diameter`` and
    ``delta_vc``.
    """
    length = min(len(delta_d), len(delta_vc))
    table = Table([np.arange(length), np.asarray(delta_d)[:length],
                   np.asarray(delta_vc)[:length]],
                  names=('step', 'delta_diameter', 'delta_vc'))
    table.write(path, format='ascii.csv', overwrite=True)
    return table
