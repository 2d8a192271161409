#!/usr/bin/env python
# -*- coding: utf-8 -*-
from __future__ import (absolute_import, division, print_function,
                        unicode_literals)

import json
import logging

import numpy as np

from flockforge import config
from flockforge.dynamics import (sample_initial_flock, sample_obstacles,
                                 place_predator)
from flockforge.mpc import CentralizedController, control_loop
from flockforge.network import (FeatureVector, TrainingSample,
                                encode_features, layout_for, layout_width)
from flockforge.trajectory import (SCHEMA_VERSION, FormatError, read_header,
                                   iter_records)

"""
This module generates the expert data: closed-loop runs of the centralized
controller from seeded random initial states, and the per-agent
state-action samples extracted from them.
"""

logger = logging.getLogger(__name__)


# The labeled samples of one task
class Dataset(object):
    """
    Feature / label pairs with the trajectory each pair comes from.

    Parameters
    ----------
    layout : ``str``
        Feature layout shared by all samples.

    inputs : array_like
        Features, shape ``(m, width)``.

    labels : array_like
        Expert accelerations, shape ``(m, dim)``.

    trajectory_ids : array_like
        Index of the source trajectory of every sample, shape ``(m,)``.

    n_neighbors : ``int``, optional
        Default is 5.

    sources : ``list`` or ``None``, optional
        Seed of every source trajectory, indexed by trajectory id.
    """
    def __init__(self, layout, inputs, labels, trajectory_ids,
                 n_neighbors=5, sources=None):
        self.layout = layout
        self.n_neighbors = int(n_neighbors)
        width = layout_width(layout, self.n_neighbors)
        dim = 3 if layout == 'BF36' else 2
        self.inputs = np.array(inputs, dtype=float).reshape(-1, width)
        self.labels = np.array(labels, dtype=float).reshape(-1, dim)
        self.trajectory_ids = np.array(trajectory_ids, dtype=int).reshape(-1)
        self.sources = list(sources) if sources is not None else []
        if not len(self.inputs) == len(self.labels) == \
                len(self.trajectory_ids):
            raise ValueError('inputs, labels and trajectory_ids must have '
                             'the same length.')

    def __len__(self):
        return len(self.inputs)

    def arrays(self):
        """``(inputs, labels)``."""
        return self.inputs, self.labels

    @property
    def samples(self):
        """The dataset as a list of ``TrainingSample``."""
        return [TrainingSample(FeatureVector(x, self.layout,
                                             self.n_neighbors), y)
                for x, y in zip(self.inputs, self.labels)]

    def subset(self, mask):
        """Samples selected by a boolean mask or an index array."""
        return Dataset(self.layout, self.inputs[mask], self.labels[mask],
                       self.trajectory_ids[mask], self.n_neighbors,
                       self.sources)

    def __eq__(self, other):
        return (isinstance(other, Dataset) and
                self.layout == other.layout and
                self.n_neighbors == other.n_neighbors and
                self.sources == other.sources and
                np.array_equal(self.inputs, other.inputs) and
                np.array_equal(self.labels, other.labels) and
                np.array_equal(self.trajectory_ids, other.trajectory_ids))


def initial_condition(task, n_agents, seed, sim, spec, pp=None,
                      n_obstacles=5):
    """
    The seeded initial state of one run.

    The flock is drawn with ``sample_initial_flock``; the ``ObstacleTarget``
    task adds ``n_obstacles`` obstacles from an independent stream of the
    same seed, clear of the flock and the target, and ``PredatorAvoidance``
    places the predator.

    Returns
    -------
    flock : ``FlockState``

    spec : ``CostSpec``
        ``spec`` with this run's obstacles.
    """
    flock = sample_initial_flock(n_agents, seed, sim, spec.d_min)
    if task == 'ObstacleTarget':
        keep_clear = flock.positions if spec.target is None else \
            np.vstack([flock.positions, spec.target])
        obstacles = sample_obstacles(n_obstacles, [seed, 1], sim.dim,
                                     avoid=keep_clear)
        flock.obstacles = obstacles
        spec = spec.with_obstacles(obstacles)
    elif task == 'PredatorAvoidance':
        if pp is None:
            raise ValueError('The PredatorAvoidance task needs '
                             'PredatorParams.')
        flock = place_predator(flock, pp)
    return flock, spec


def run_meta(task, seed, index, controller, sim, spec, mpc=None, pp=None):
    """Description of one run, stored in its trajectory."""
    return {'task': task, 'seed': int(seed), 'index': int(index),
            'controller': controller, 'sim': sim.to_dict(),
            'cost': spec.to_dict(),
            'mpc': None if mpc is None else mpc.to_dict(),
            'predator': None if pp is None else pp.to_dict()}


def _expert_run(args):
    task, n_agents, seed, index, sim, spec, mpc, pp, n_obstacles, verbose = \
        args
    flock, run_spec = initial_condition(task, n_agents, seed, sim, spec, pp,
                                        n_obstacles)
    controller = CentralizedController(run_spec, mpc, sim, pp)
    meta = run_meta(task, seed, index, 'cmpc', sim, run_spec, mpc, pp)
    traj = control_loop(flock, controller, sim, pp, meta, verbose=verbose)
    logger.log(logging.INFO if verbose else logging.DEBUG,
               'Expert trajectory %d (seed %d) done', index, seed)
    return traj


def generate_expert_data(task, n_agents, n_trajectories, seed, sim, spec,
                         mpc, pp=None, n_obstacles=5, n_workers=None,
                         verbose=False):
    """
    Run the centralized controller from ``n_trajectories`` seeded initial
    states. Trajectory ``k`` uses seed ``seed + k``.

    Parameters
    ----------
    task : ``str``
        Must equal ``spec.task``.

    n_agents : ``int``

    n_trajectories : ``int``

    seed : ``int``

    sim : ``SimParams``

    spec : ``CostSpec``

    mpc : ``MpcParams``

    pp : ``PredatorParams`` or ``None``, optional
        Required by ``PredatorAvoidance``.

    n_obstacles : ``int``, optional
        Obstacles per run for ``ObstacleTarget``. Default is 5.

    n_workers : ``int`` or ``None``, optional
        Size of the process pool; ``FLOCKFORGE_THREADS`` if ``None``.

    verbose : ``bool``, optional
        Log progress at INFO level. Default is ``False``.

    Returns
    -------
    trajectories : ``list`` of ``Trajectory``
    """
    if task != spec.task:
        raise ValueError('task {} does not match the cost task {}.'.format(
            task, spec.task))
    jobs = [(task, n_agents, seed + k, k, sim, spec, mpc, pp, n_obstacles,
             verbose)
            for k in range(n_trajectories)]
    return config.run_parallel(_expert_run, jobs, n_workers)


def _target_of(traj):
    return (traj.meta.get('cost') or {}).get('target')


def extract_samples(trajs, task, N=5):
    """
    One sample per trajectory, control step and agent: the encoded
    observation and the acceleration the expert applied. The last state of
    each trajectory has no action and gives no sample.

    Parameters
    ----------
    trajs : sequence of ``Trajectory``

    task : ``str``

    N : ``int``, optional
        Neighborhood size. Default is 5.

    Returns
    -------
    dataset : ``Dataset``
    """
    inputs, labels, ids, sources = [], [], [], []
    layout = None
    for k, traj in enumerate(trajs):
        if not traj.states:
            continue
        dim = traj.states[0].dim
        if layout is None:
            layout = layout_for(task, dim)
        elif layout != layout_for(task, dim):
            raise ValueError('Trajectories mix 2D and 3D states.')
        target = _target_of(traj)
        sources.append(traj.meta.get('seed'))
        for state, acc in zip(traj.states, traj.accelerations):
            for i in range(state.n):
                inputs.append(encode_features(state, i, task, N,
                                              target=target).values)
                labels.append(acc[i])
                ids.append(k)
    if layout is None:
        layout = layout_for(task, 2)
    return Dataset(layout, inputs, labels, ids, N, sources)


def split_by_trajectory(dataset, fraction=0.1, seed=0):
    """
    Hold out a fraction of the source trajectories (never a fraction of the
    samples of one trajectory).

    Returns
    -------
    train, held_out : ``Dataset``
    """
    if not 0 <= fraction < 1:
        raise ValueError('fraction must be in [0, 1).')
    ids = np.unique(dataset.trajectory_ids)
    n_held = int(round(fraction * len(ids)))
    if fraction > 0 and len(ids) > 1:
        n_held = max(n_held, 1)
    held = np.random.default_rng(seed).permutation(ids)[:n_held]
    mask = np.isin(dataset.trajectory_ids, held)
    return dataset.subset(~mask), dataset.subset(mask)


def write_dataset(dataset, path):
    """
    Write a dataset as a header record followed by one record per sample
    (``*.data.jsonl``).
    """
    header = {'schema_version': SCHEMA_VERSION, 'kind': 'dataset',
              'layout': dataset.layout, 'n_neighbors': dataset.n_neighbors,
              'n_samples': len(dataset), 'sources': dataset.sources}
    with open(path, 'w') as f:
        f.write(json.dumps(header, sort_keys=True) + '\n')
        for x, y, k in zip(dataset.inputs, dataset.labels,
                           dataset.trajectory_ids):
            f.write(json.dumps({'trajectory': int(k),
                                'features': x.tolist(),
                                'label': y.tolist()}, sort_keys=True) + '\n')


def read_dataset(path):
    """
    Read a dataset written by ``write_dataset``.

    Raises
    ------
    FormatError
        On a malformed record or a schema version mismatch.
    """
    with open(path, 'r') as f:
        header = read_header(f, path, 'dataset')
        try:
            layout = header['layout']
            n_neighbors = int(header.get('n_neighbors', 5))
            width = layout_width(layout, n_neighbors)
        except (KeyError, TypeError, ValueError) as err:
            raise FormatError('bad header ({})'.format(err), path, 1)
        inputs, labels, ids = [], [], []
        for number, record in iter_records(f, path):
            try:
                x = record['features']
                y = record['label']
                k = int(record['trajectory'])
            except (KeyError, TypeError, ValueError) as err:
                raise FormatError('bad sample record ({})'.format(err), path,
                                  number)
            if len(x) != width:
                raise FormatError('expected {} features, found {}'.format(
                    width, len(x)), path, number)
            inputs.append(x)
            labels.append(y)
            ids.append(k)
    n_samples = header.get('n_samples')
    if n_samples is not None and n_samples != len(inputs):
        raise FormatError('expected {} samples, found {}'.format(
            n_samples, len(inputs)), path)
    try:
        return Dataset(layout, inputs, labels, ids, n_neighbors,
                       header.get('sources'))
    except ValueError as err:
        raise FormatError(str(err), path)
