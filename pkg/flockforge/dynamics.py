#!/usr/bin/env python
# -*- coding: utf-8 -*-
from __future__ import (absolute_import, division, print_function,
                        unicode_literals)

import logging

import numpy as np
from scipy.spatial import distance

"""
This module contains the discrete-time point-mass model of the flock: agent
and flock states, the predator, obstacle geometry and the sampling of initial
configurations. Positions and velocities of a flock are kept as ``(n, dim)``
arrays; the agent index is the row index and never changes along a
trajectory.
"""

logger = logging.getLogger(__name__)


class SamplingError(RuntimeError):
    """
    Raised when no recoverable configuration is found within the rejection
    cap.
    """
    pass


class DivergenceError(FloatingPointError):
    """
    Raised when a simulated state or a training loss stops being finite.
    """
    pass


# Simulation parameters of the point model
class SimParams(object):
    """
    Parameters of the discrete-time point model.

    Parameters
    ----------
    dt : ``float``, optional
        Duration of one time step. Default is 0.1.

    eta : ``int``, optional
        Number of time steps during which one acceleration command is held.
        Default is 3.

    v_max : ``float``, optional
        Speed bound. Default is 2.0.

    a_max : ``float``, optional
        Acceleration bound. Default is 1.5.

    dim : ``int``, optional
        Spatial dimension, 2 or 3. Default is 2.

    sim_time : ``float``, optional
        Total simulated time. Default is 100.
    """
    def __init__(self, dt=0.1, eta=3, v_max=2.0, a_max=1.5, dim=2,
                 sim_time=100.0):
        if not dt > 0:
            raise ValueError('dt must be positive.')
        if int(eta) != eta or eta < 1:
            raise ValueError('eta must be an integer >= 1.')
        if not v_max > 0:
            raise ValueError('v_max must be positive.')
        if not a_max > 0:
            raise ValueError('a_max must be positive.')
        if dim not in (2, 3):
            raise ValueError('dim must be 2 or 3.')
        if sim_time < 0:
            raise ValueError('sim_time must be non-negative.')
        self.dt = float(dt)
        self.eta = int(eta)
        self.v_max = float(v_max)
        self.a_max = float(a_max)
        self.dim = int(dim)
        self.sim_time = float(sim_time)

    @property
    def control_period(self):
        """Duration of one control step, ``dt * eta``."""
        return self.dt * self.eta

    @property
    def n_control_steps(self):
        """Number of control steps that fit in ``sim_time`` (floor)."""
        return int(np.floor(self.sim_time / self.control_period + 1e-9))

    def to_dict(self):
        return {'dt': self.dt, 'eta': self.eta, 'v_max': self.v_max,
                'a_max': self.a_max, 'dim': self.dim,
                'sim_time': self.sim_time}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# Predator parameters
class PredatorParams(object):
    """
    Parameters of the predator.

    Parameters
    ----------
    f_p : ``float``, optional
        Agility factor; the predator's speed and acceleration bounds are the
        agents' bounds multiplied by ``f_p``. Default is 1.25.

    d_start : ``float``, optional
        Initial distance from the flock centroid. Default is 50.

    bearing : sequence or ``None``, optional
        Direction from the centroid to the initial predator position. If
        ``None``, the +x axis is used. Default is ``None``.
    """
    def __init__(self, f_p=1.25, d_start=50.0, bearing=None):
        if not f_p > 1:
            raise ValueError('f_p must be greater than 1.')
        if d_start < 0:
            raise ValueError('d_start must be non-negative.')
        self.f_p = float(f_p)
        self.d_start = float(d_start)
        if bearing is None:
            self.bearing = None
        else:
            bearing = np.asarray(bearing, dtype=float)
            norm = np.linalg.norm(bearing)
            if norm == 0:
                raise ValueError('bearing must be a nonzero vector.')
            self.bearing = bearing / norm

    def to_dict(self):
        bearing = None if self.bearing is None else self.bearing.tolist()
        return {'f_p': self.f_p, 'd_start': self.d_start, 'bearing': bearing}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# The state of one agent
class AgentState(object):
    """
    Position and velocity of one agent (or of the predator).

    Parameters
    ----------
    p : array_like
        Position vector.

    v : array_like
        Velocity vector, same length as ``p``.
    """
    def __init__(self, p, v):
        self.p = np.array(p, dtype=float)
        self.v = np.array(v, dtype=float)
        if self.p.shape != self.v.shape or self.p.ndim != 1:
            raise ValueError('p and v must be vectors of equal length.')

    def __eq__(self, other):
        return (isinstance(other, AgentState) and
                np.array_equal(self.p, other.p) and
                np.array_equal(self.v, other.v))

    def __repr__(self):
        return 'AgentState(p={}, v={})'.format(self.p.tolist(),
                                               self.v.tolist())


# Circular (2D) or spherical (3D) obstacle
class Obstacle(object):
    """
    An obstacle shaped as a circle (2D) or a sphere (3D).

    Parameters
    ----------
    center : array_like
        Center of the obstacle.

    radius : ``float``
        Radius of the obstacle.
    """
    def __init__(self, center, radius):
        if not radius > 0:
            raise ValueError('Obstacle radius must be positive.')
        self.center = np.array(center, dtype=float)
        self.radius = float(radius)

    def boundary_distance(self, p):
        """
        Signed distance from point(s) ``p`` to the obstacle boundary
        (negative inside the obstacle).
        """
        p = np.asarray(p, dtype=float)
        return np.linalg.norm(p - self.center, axis=-1) - self.radius

    def closest_point(self, p):
        """
        Closest boundary point to point(s) ``p``. A point exactly at the
        center is projected along +x.
        """
        p = np.asarray(p, dtype=float)
        offset = p - self.center
        norm = np.linalg.norm(offset, axis=-1, keepdims=True)
        unit = np.zeros_like(offset)
        unit[..., 0] = 1.0
        unit = np.where(norm > 0, offset / np.where(norm > 0, norm, 1.0),
                        unit)
        return self.center + self.radius * unit

    def to_dict(self):
        return {'center': self.center.tolist(), 'radius': self.radius}

    @classmethod
    def from_dict(cls, d):
        return cls(d['center'], d['radius'])

    def __eq__(self, other):
        return (isinstance(other, Obstacle) and
                np.array_equal(self.center, other.center) and
                self.radius == other.radius)


# The state of the flock at one time step
class FlockState(object):
    """
    The configuration of the flock at a given time step.

    Parameters
    ----------
    positions : array_like
        Agent positions, shape ``(n, dim)``.

    velocities : array_like
        Agent velocities, shape ``(n, dim)``.

    predator : ``AgentState`` or ``None``, optional
        The predator, if there is one. Default is ``None``.

    obstacles : sequence or ``None``, optional
        List of ``Obstacle`` objects. Default is ``None`` (no obstacles).

    time_step : ``int``, optional
        The time step index k. Default is 0.
    """
    def __init__(self, positions, velocities, predator=None, obstacles=None,
                 time_step=0):
        self.positions = np.array(positions, dtype=float)
        self.velocities = np.array(velocities, dtype=float)
        if self.positions.ndim != 2 or \
                self.positions.shape != self.velocities.shape:
            raise ValueError('positions and velocities must be (n, dim) '
                             'arrays of the same shape.')
        if len(self.positions) < 1:
            raise ValueError('A flock needs at least one agent.')
        self.predator = predator
        self.obstacles = list(obstacles) if obstacles is not None else []
        self.time_step = int(time_step)

    @property
    def n(self):
        return self.positions.shape[0]

    @property
    def dim(self):
        return self.positions.shape[1]

    @property
    def agents(self):
        """List of ``AgentState``, in agent-index order."""
        return [AgentState(p, v) for p, v in zip(self.positions,
                                                 self.velocities)]

    @property
    def centroid(self):
        return self.positions.mean(axis=0)

    def copy(self):
        predator = None
        if self.predator is not None:
            predator = AgentState(self.predator.p, self.predator.v)
        return FlockState(self.positions, self.velocities, predator,
                          self.obstacles, self.time_step)

    def __eq__(self, other):
        return (isinstance(other, FlockState) and
                np.array_equal(self.positions, other.positions) and
                np.array_equal(self.velocities, other.velocities) and
                self.predator == other.predator and
                self.obstacles == other.obstacles and
                self.time_step == other.time_step)


def clamp_vector(x, bound):
    """
    Rescale ``x`` to magnitude ``bound`` if it is longer than ``bound``.
    Works row-wise on ``(n, dim)`` arrays.

    Parameters
    ----------
    x : array_like
        A vector or an array of row vectors.

    bound : ``float``
        Magnitude bound (> 0).

    Returns
    -------
    clamped : ``numpy.ndarray``
        The clamped vector(s); the direction is preserved.
    """
    if not bound > 0:
        raise ValueError('bound must be positive.')
    x = np.asarray(x, dtype=float)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    scale = np.where(norm > bound, bound / np.where(norm > 0, norm, 1.0), 1.0)
    return x * scale


# Eq. of motion of one agent
def step_agent(s, a, params):
    """
    Advance one agent by one time step. The position update uses the velocity
    before the update.

    Parameters
    ----------
    s : ``AgentState``
        Current state.

    a : array_like
        Acceleration, already clamped to ``params.a_max``.

    params : ``SimParams``
        Simulation parameters.

    Returns
    -------
    new_state : ``AgentState``
    """
    p, v = step_flock(s.p[None, :], s.v[None, :],
                      np.asarray(a, dtype=float)[None, :], params.dt,
                      params.v_max)
    return AgentState(p[0], v[0])


def step_flock(positions, velocities, accelerations, dt, v_max):
    """
    Vectorized ``step_agent``: one time step for every row.

    Returns
    -------
    positions, velocities : ``numpy.ndarray``
    """
    new_p = positions + dt * velocities
    new_v = clamp_vector(velocities + dt * accelerations, v_max)
    return new_p, new_v


def predator_control(flock, params, pp):
    """
    Acceleration of the predator: maximal (``f_p * a_max``) and pointed at
    the flock centroid.

    Parameters
    ----------
    flock : ``FlockState``
        The flock, with a predator.

    params : ``SimParams``

    pp : ``PredatorParams``

    Returns
    -------
    acc : ``numpy.ndarray``
        Zero if the predator sits exactly on the centroid.
    """
    if flock.predator is None:
        raise ValueError('The flock has no predator.')
    return _seek(flock.predator.p, flock.centroid, pp.f_p * params.a_max)


def _seek(p_from, p_to, magnitude):
    offset = np.asarray(p_to, dtype=float) - p_from
    norm = np.linalg.norm(offset)
    if norm == 0:
        return np.zeros_like(offset)
    return magnitude * offset / norm


def advance_control_step(flock, accelerations, params, pp=None,
                         predator_acc=None):
    """
    Hold ``accelerations`` for ``eta`` time steps. If the flock has a
    predator, it is advanced with ``predator_acc`` (computed with
    ``predator_control`` when ``None``) and the ``f_p``-scaled bounds.

    Returns
    -------
    new_flock : ``FlockState``
    """
    acc = clamp_vector(accelerations, params.a_max)
    p, v = flock.positions, flock.velocities
    for _ in range(params.eta):
        p, v = step_flock(p, v, acc, params.dt, params.v_max)

    predator = None
    if flock.predator is not None:
        if pp is None:
            raise ValueError('PredatorParams are required to move the '
                             'predator.')
        if predator_acc is None:
            predator_acc = predator_control(flock, params, pp)
        pred_acc = clamp_vector(predator_acc, pp.f_p * params.a_max)
        pp_pos = flock.predator.p[None, :]
        pp_vel = flock.predator.v[None, :]
        for _ in range(params.eta):
            pp_pos, pp_vel = step_flock(pp_pos, pp_vel, pred_acc, params.dt,
                                        pp.f_p * params.v_max)
        predator = AgentState(pp_pos[0], pp_vel[0])

    return FlockState(p, v, predator, flock.obstacles,
                      flock.time_step + params.eta)


def nearest_neighbors(flock, i, N):
    """
    The ``N`` agents closest to agent ``i``, sorted by ascending distance,
    ties broken by the lower agent index.

    Parameters
    ----------
    flock : ``FlockState`` or array_like
        The flock, or an ``(n, dim)`` array of positions.

    i : ``int``
        Agent index.

    N : ``int``
        Neighborhood size, at most ``n - 1``.

    Returns
    -------
    indices : ``list``
    """
    positions = _positions_of(flock)
    n = len(positions)
    if N > n - 1:
        raise ValueError('Cannot find {} neighbors in a flock of {} '
                         'agents.'.format(N, n))
    diff = positions - positions[i]
    dist = np.einsum('ij,ij->i', diff, diff)
    dist[i] = np.inf
    return [int(j) for j in np.argsort(dist, kind='stable')[:N]]


def neighbor_table(positions, N):
    """
    ``nearest_neighbors`` for every agent at once.

    Returns
    -------
    table : ``numpy.ndarray``
        Integer array of shape ``(n, N)``.
    """
    positions = np.asarray(positions, dtype=float)
    n = len(positions)
    if N > n - 1:
        raise ValueError('Cannot find {} neighbors in a flock of {} '
                         'agents.'.format(N, n))
    dist = distance.squareform(distance.pdist(positions, 'sqeuclidean'))
    np.fill_diagonal(dist, np.inf)
    return np.argsort(dist, axis=1, kind='stable')[:, :N]


def _positions_of(flock):
    if isinstance(flock, FlockState):
        return flock.positions
    return np.asarray(flock, dtype=float)


def is_recoverable(positions, velocities, a_max, d_min):
    """
    Check that every pair of agents can avoid closing within ``d_min`` by
    braking at ``a_max``.

    For a pair with gap ``g`` and closing speed ``u`` (positive when
    approaching), both agents braking at ``a_max`` stop closing after a
    distance ``u**2 / (4 * a_max)``; the pair is recoverable when
    ``g - u**2 / (4 * a_max) > d_min``.

    Returns
    -------
    ok : ``bool``
    """
    positions = np.asarray(positions, dtype=float)
    velocities = np.asarray(velocities, dtype=float)
    n = len(positions)
    if n < 2:
        return True
    i, j = np.triu_indices(n, k=1)
    dp = positions[j] - positions[i]
    dv = velocities[j] - velocities[i]
    gap = np.linalg.norm(dp, axis=1)
    unit = dp / np.where(gap > 0, gap, 1.0)[:, None]
    closing = np.maximum(-np.einsum('ij,ij->i', dv, unit), 0.0)
    return bool(np.all(gap - closing ** 2 / (4.0 * a_max) > d_min))


def sample_initial_flock(n, rng_seed, params, d_min, position_box=(-15, 15),
                         velocity_box=(0, 1), max_attempts=10000):
    """
    Sample a recoverable initial configuration. Positions and velocities are
    drawn uniformly from the given boxes (the same interval in every
    coordinate) and the draw is repeated until ``is_recoverable`` holds.

    Parameters
    ----------
    n : ``int``
        Number of agents.

    rng_seed : ``int``
        Seed of the ``numpy`` PCG64 generator.

    params : ``SimParams``

    d_min : ``float``
        Minimum separation.

    position_box, velocity_box : tuple, optional
        Sampling intervals. Defaults are (-15, 15) and (0, 1).

    max_attempts : ``int``, optional
        Rejection cap. Default is 10,000.

    Returns
    -------
    flock : ``FlockState``
    """
    if n < 1:
        raise ValueError('n must be at least 1.')
    rng = np.random.default_rng(rng_seed)
    shape = (n, params.dim)
    for attempt in range(max_attempts):
        p = rng.uniform(position_box[0], position_box[1], size=shape)
        v = rng.uniform(velocity_box[0], velocity_box[1], size=shape)
        if is_recoverable(p, v, params.a_max, d_min):
            if attempt >= 1000:
                logger.warning('Recoverable flock of %d agents found after '
                               '%d attempts', n, attempt + 1)
            return FlockState(p, v)
    raise SamplingError('No recoverable configuration of {} agents after {} '
                        'attempts; the position box is too small.'
                        .format(n, max_attempts))


def place_predator(flock, pp):
    """
    Put a predator at rest at distance ``pp.d_start`` from the flock
    centroid, along ``pp.bearing`` (+x by default).

    Returns
    -------
    flock : ``FlockState``
        A copy of ``flock`` with the predator set.
    """
    if pp.bearing is None:
        bearing = np.zeros(flock.dim)
        bearing[0] = 1.0
    else:
        bearing = pp.bearing
        if len(bearing) != flock.dim:
            raise ValueError('Predator bearing has the wrong dimension.')
    new = flock.copy()
    new.predator = AgentState(flock.centroid + pp.d_start * bearing,
                              np.zeros(flock.dim))
    return new


def sample_obstacles(m, rng_seed, dim=2, box=((25, 55), (-15, 15)),
                     radius_range=(1.5, 3.0), clearance=2.0, avoid=None,
                     max_attempts=10000):
    """
    Sample ``m`` non-overlapping obstacles uniformly inside ``box``. The
    default box is a corridor between the flock's sampling box and a target
    placed beyond it on the +x axis. Coordinates past the box's listed axes
    (the third one in 3D) are sampled from the last listed interval.

    Parameters
    ----------
    m : ``int``
        Number of obstacles.

    rng_seed : ``int``

    dim : ``int``, optional
        Spatial dimension. Default is 2.

    box : sequence of (low, high), optional
        Sampling interval per axis.

    radius_range : tuple, optional
        Interval of the uniformly drawn radii. Default is (1.5, 3.0).

    clearance : ``float``, optional
        Minimum gap between two obstacle boundaries. Default is 2.0.

    avoid : array_like, optional
        Points, such as the initial agent positions or the target, that
        every obstacle boundary keeps at least ``clearance`` away from.

    Returns
    -------
    obstacles : ``list`` of ``Obstacle``
    """
    rng = np.random.default_rng(rng_seed)
    box = [tuple(b) for b in box]
    while len(box) < dim:
        box.append(box[-1])
    low = np.array([b[0] for b in box[:dim]], dtype=float)
    high = np.array([b[1] for b in box[:dim]], dtype=float)
    avoid = np.empty((0, dim)) if avoid is None else \
        np.atleast_2d(np.asarray(avoid, dtype=float))
    obstacles = []
    attempts = 0
    while len(obstacles) < m:
        attempts += 1
        if attempts > max_attempts:
            raise SamplingError('Could not place {} obstacles in the box.'
                                .format(m))
        center = rng.uniform(low, high)
        radius = rng.uniform(radius_range[0], radius_range[1])
        if all(np.linalg.norm(center - o.center) > radius + o.radius +
               clearance for o in obstacles) and \
                np.all(np.linalg.norm(avoid - center, axis=1) >
                       radius + clearance):
            obstacles.append(Obstacle(center, radius))
    return obstacles


def closest_obstacle_point(p, obstacles):
    """
    Closest boundary point on any obstacle to each point in ``p``.

    Parameters
    ----------
    p : array_like
        A point or an ``(n, dim)`` array of points.

    obstacles : sequence of ``Obstacle``
        At least one obstacle.

    Returns
    -------
    points : ``numpy.ndarray``
        Same shape as ``p``.
    """
    if len(obstacles) == 0:
        raise ValueError('At least one obstacle is required.')
    p = np.asarray(p, dtype=float)
    dists = np.stack([o.boundary_distance(p) for o in obstacles], axis=-1)
    points = np.stack([o.closest_point(p) for o in obstacles], axis=-2)
    nearest = np.argmin(dists, axis=-1)
    return np.take_along_axis(points, nearest[..., None, None],
                              axis=-2)[..., 0, :]
