#!/usr/bin/env python
# -*- coding: utf-8 -*-
from __future__ import (absolute_import, division, print_function,
                        unicode_literals)

import json
import logging

import numpy as np

from flockforge.dynamics import AgentState, FlockState, Obstacle

"""
This module contains the ``Trajectory`` class, which stores a closed-loop run
of the flock, and its line-per-record JSON file format (``*.traj.jsonl``).
Floats are written with ``repr`` precision, so reading a written file gives
back the same numbers bit by bit.
"""

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class FormatError(ValueError):
    """
    A malformed or incompatible file.

    Parameters
    ----------
    message : ``str``

    path : ``str`` or ``None``, optional
        The file being read.

    line : ``int`` or ``None``, optional
        1-based index of the offending record.
    """
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ''
        if path is not None:
            where += '{}'.format(path)
        if line is not None:
            where += ':{}'.format(line)
        if where:
            message = '{}: {}'.format(where, message)
        super(FormatError, self).__init__(message)


# A recorded closed-loop run
class Trajectory(object):
    """
    A sequence of flock states with the accelerations applied between them.

    Parameters
    ----------
    meta : ``dict`` or ``None``, optional
        Run description (task, seed, parameter snapshot, ...). Must be JSON
        serializable.

    states : sequence or ``None``, optional
        List of ``FlockState``, one per recorded control step plus the
        initial state.

    accelerations : sequence or ``None``, optional
        List of ``(n, dim)`` arrays; ``accelerations[k]`` moves
        ``states[k]`` to ``states[k + 1]``.

    quad_states : sequence or ``None``, optional
        List of ``(n, 12)`` arrays, one per state, when the plant is a
        quadrotor flock.
    """
    def __init__(self, meta=None, states=None, accelerations=None,
                 quad_states=None):
        self.meta = dict(meta) if meta is not None else {}
        self.states = list(states) if states is not None else []
        self.accelerations = [np.asarray(a, dtype=float) for a in
                              accelerations] if accelerations else []
        self.quad_states = [np.asarray(q, dtype=float) for q in
                            quad_states] if quad_states else None
        # run-time measurements; never written to file
        self.timing = {}

    def __len__(self):
        return len(self.states)

    @property
    def n_actions(self):
        return len(self.accelerations)

    @property
    def positions(self):
        """Array of shape ``(len, n, dim)``."""
        return np.array([s.positions for s in self.states])

    @property
    def velocities(self):
        """Array of shape ``(len, n, dim)``."""
        return np.array([s.velocities for s in self.states])

    @property
    def obstacles(self):
        return self.states[0].obstacles if self.states else []

    def append(self, state, acceleration=None, quad_state=None):
        """Record the next state and the action that led to it."""
        if acceleration is not None:
            self.accelerations.append(np.asarray(acceleration, dtype=float))
        self.states.append(state)
        if quad_state is not None:
            if self.quad_states is None:
                self.quad_states = []
            self.quad_states.append(np.asarray(quad_state, dtype=float))

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return False
        same_quads = (self.quad_states is None) == \
            (other.quad_states is None)
        if same_quads and self.quad_states is not None:
            same_quads = len(self.quad_states) == len(other.quad_states) \
                and all(np.array_equal(a, b) for a, b in
                        zip(self.quad_states, other.quad_states))
        return (self.meta == other.meta and self.states == other.states and
                len(self.accelerations) == len(other.accelerations) and
                all(np.array_equal(a, b) for a, b in
                    zip(self.accelerations, other.accelerations)) and
                same_quads)


def _agent_to_dict(agent):
    if agent is None:
        return None
    return {'p': agent.p.tolist(), 'v': agent.v.tolist()}


def write_trajectory(traj, path):
    """
    Write a trajectory as one header record followed by one record per
    state.

    Parameters
    ----------
    traj : ``Trajectory``

    path : ``str``
        Output file, conventionally ``*.traj.jsonl``.
    """
    header = {'schema_version': SCHEMA_VERSION, 'kind': 'trajectory',
              'meta': traj.meta,
              'obstacles': [o.to_dict() for o in traj.obstacles],
              'n_states': len(traj.states)}
    with open(path, 'w') as f:
        f.write(json.dumps(header, sort_keys=True) + '\n')
        for k, state in enumerate(traj.states):
            record = {'step': k, 'time_step': state.time_step,
                      'positions': state.positions.tolist(),
                      'velocities': state.velocities.tolist(),
                      'predator': _agent_to_dict(state.predator),
                      'accelerations': traj.accelerations[k].tolist()
                      if k < traj.n_actions else None}
            if traj.quad_states is not None:
                record['quad_state'] = traj.quad_states[k].tolist()
            f.write(json.dumps(record, sort_keys=True) + '\n')


def read_header(f, path, kind):
    """
    Read and check the header record of a ``flockforge`` JSONL file.
    """
    first = f.readline()
    if not first:
        raise FormatError('empty file', path, 1)
    try:
        header = json.loads(first)
    except ValueError as err:
        raise FormatError('invalid JSON ({})'.format(err), path, 1)
    if not isinstance(header, dict) or header.get('kind') != kind:
        raise FormatError('not a {} file'.format(kind), path, 1)
    if header.get('schema_version') != SCHEMA_VERSION:
        raise FormatError('unsupported schema_version {!r}'.format(
            header.get('schema_version')), path, 1)
    return header


def iter_records(f, path, start=2):
    """Yield ``(line_number, record)`` for the remaining lines of ``f``."""
    for number, line in enumerate(f, start=start):
        if not line.strip():
            continue
        try:
            yield number, json.loads(line)
        except ValueError as err:
            raise FormatError('invalid JSON ({})'.format(err), path, number)


def read_trajectory(path):
    """
    Read a trajectory written by ``write_trajectory``.

    Returns
    -------
    traj : ``Trajectory``

    Raises
    ------
    FormatError
        On a malformed record or a schema version mismatch.
    """
    with open(path, 'r') as f:
        header = read_header(f, path, 'trajectory')
        try:
            obstacles = [Obstacle.from_dict(o) for o in
                         header.get('obstacles', [])]
        except (KeyError, TypeError, ValueError) as err:
            raise FormatError('bad obstacle field ({})'.format(err), path, 1)
        traj = Trajectory(meta=header.get('meta', {}))
        pending = None
        number = 1
        for number, record in iter_records(f, path):
            try:
                pred = record['predator']
                predator = None if pred is None else \
                    AgentState(pred['p'], pred['v'])
                state = FlockState(record['positions'], record['velocities'],
                                   predator, obstacles, record['time_step'])
                acc = record['accelerations']
                quad = record.get('quad_state')
            except (KeyError, TypeError, ValueError) as err:
                raise FormatError('bad state record ({})'.format(err), path,
                                  number)
            # the action stored with state k leads to state k + 1
            if traj.states and pending is None:
                # a stored None action can only close the trajectory
                raise FormatError('state without a preceding action', path,
                                  number)
            if traj.states:
                traj.accelerations.append(pending)
            traj.states.append(state)
            if quad is not None:
                if traj.quad_states is None:
                    traj.quad_states = []
                traj.quad_states.append(np.asarray(quad, dtype=float))
            pending = None if acc is None else np.asarray(acc, dtype=float)
        if pending is not None:
            raise FormatError('final state carries an action', path, number)
    n_states = header.get('n_states')
    if n_states is not None and n_states != len(traj.states):
        raise FormatError('expected {} states, found {}'.format(
            n_states, len(traj.states)), path)
    return traj
