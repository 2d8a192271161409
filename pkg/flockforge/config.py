#!/usr/bin/env python
# -*- coding: utf-8 -*-
from __future__ import (absolute_import, division, print_function,
                        unicode_literals)

import copy
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor

from flockforge.cost import CostSpec, TASKS
from flockforge.dynamics import SimParams, PredatorParams
from flockforge.mpc import MpcParams
from flockforge.network import AdamConfig, Architecture, layout_for
from flockforge.quadrotor import AttitudeGains, QuadParams

"""
This module contains the experiment configuration: the profiles, the merging
of a JSON document and command-line overrides on top of them, and the
validation that turns every section into its parameter object.
"""

logger = logging.getLogger(__name__)

THREADS_VARIABLE = 'FLOCKFORGE_THREADS'

# Target of the ObstacleTarget task when the configuration gives none; it
# lies beyond the obstacle corridor on the +x axis
DEFAULT_TARGET = (80.0, 0.0)

_BASE = {
    'profile': 'paper2d',
    'task': 'BasicFlocking',
    'sim': {'dt': 0.1, 'eta': 3, 'v_max': 2.0, 'a_max': 1.5, 'dim': 2,
            'sim_time': 100.0},
    'predator': {'f_p': 1.25, 'd_start': 50.0, 'bearing': None},
    'cost': {'omega': 2000.0, 'omega_dmpc': 30.0, 'rho': 1e5,
             'omega_t': 1.0, 'lam': 1.0, 'd_min': 2.0, 'd_min_pred': 4.0,
             'r': None, 'target': None},
    'mpc': {'horizon': 3, 'descent_iters': 50, 'step_size': 1.0,
            'backtrack': 0.5, 'tol': 1e-6, 'max_backtracks': 30,
            'gradient': 'analytic', 'warm_start': False},
    'network': {'n_neighbors': 5, 'hidden': [64, 64, 64, 64, 64],
                'activation': 'sigmoid', 'holdout_fraction': 0.1},
    'adam': {'lr': 1e-4, 'beta1': 0.9, 'beta2': 0.999, 'epsilon': 1e-8,
             'epochs': 10000, 'batch_size': 500, 'rng_seed': 0},
    'experiment': {'n_agents': 30, 'n_trajectories': 100, 'n_test': 100,
                   'seed': 0, 'test_seed': 100000, 'n_obstacles': 5,
                   'out_dir': 'out', 'count_mode': 'instances'},
    'quad': {'params': {}, 'gains': {}, 'inner_steps': 10,
             'gyroscopic': False},
}

PROFILES = {
    'paper2d': {},
    'desk2d': {'experiment': {'n_agents': 10, 'n_trajectories': 20,
                              'n_test': 10},
               'adam': {'epochs': 2000}},
    'paper3d': {'sim': {'dim': 3, 'sim_time': 119.7},
                'network': {'hidden': [84, 84, 84, 84, 84],
                            'activation': 'relu'},
                'experiment': {'n_agents': 20, 'n_trajectories': 400,
                               'n_test': 100}},
    'desk3d': {'sim': {'dim': 3, 'sim_time': 30.0},
               'network': {'hidden': [84, 84, 84, 84, 84],
                           'activation': 'relu'},
               'adam': {'epochs': 500},
               'experiment': {'n_agents': 8, 'n_trajectories': 10,
                              'n_test': 5}},
}


class ConfigError(ValueError):
    """
    An invalid configuration.

    Parameters
    ----------
    field : ``str``
        Dotted path of the offending field, e.g. ``'sim.dt'``.

    message : ``str``
    """
    def __init__(self, field, message):
        self.field = field
        self.message = message
        super(ConfigError, self).__init__('{}: {}'.format(field, message))

    def __reduce__(self):
        return (ConfigError, (self.field, self.message))


def _merge(base, update, path=''):
    """Recursive key-by-key update of ``base``; unknown keys are errors."""
    for key, value in update.items():
        where = path + key
        if key not in base:
            raise ConfigError(where, 'unknown key')
        if isinstance(base[key], dict) and key != 'params' and \
                key != 'gains':
            if not isinstance(value, dict):
                raise ConfigError(where, 'expected an object')
            _merge(base[key], value, where + '.')
        elif isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(where, 'expected an object')
            base[key].update(value)
        else:
            base[key] = value
    return base


def parse_override(text):
    """
    Split ``'section.key=value'`` into ``('section.key', value)``, with the
    value decoded as JSON when possible.
    """
    if '=' not in text:
        raise ConfigError(text, 'overrides take the form section.key=value')
    path, raw = text.split('=', 1)
    try:
        value = json.loads(raw)
    except ValueError:
        value = raw
    return path.strip(), value


def _nested(path, value):
    keys = path.split('.')
    d = value
    for key in reversed(keys):
        d = {key: d}
    return d


# The resolved experiment configuration
class ExperimentConfig(object):
    """
    A validated experiment configuration.

    Parameters
    ----------
    data : ``dict``
        A fully merged configuration document (see ``resolve``).
    """
    def __init__(self, data):
        self.data = copy.deepcopy(data)
        self.validate()

    @property
    def profile(self):
        return self.data['profile']

    @property
    def task(self):
        return self.data['task']

    @property
    def experiment(self):
        return self.data['experiment']

    @property
    def network(self):
        return self.data['network']

    @property
    def quad(self):
        return self.data['quad']

    def _build(self, section, factory, d=None, prefix=None):
        d = self.data[section] if d is None else d
        prefix = section if prefix is None else prefix
        try:
            return factory(d)
        except (TypeError, ValueError) as err:
            message = str(err)
            key = message.split(' ')[0]
            field = prefix + '.' + key if key in d else prefix
            raise ConfigError(field, message)

    def sim_params(self):
        return self._build('sim', SimParams.from_dict)

    def predator_params(self):
        if self.task != 'PredatorAvoidance':
            return None
        return self._build('predator', PredatorParams.from_dict)

    def cost_spec(self, distributed=False):
        """
        The cost of the task; ``distributed`` selects the separation weight
        of the distributed controller.
        """
        d = dict(self.data['cost'])
        omega_dmpc = d.pop('omega_dmpc')
        if distributed:
            d['omega'] = omega_dmpc
        d['task'] = self.task
        if self.task == 'ObstacleTarget':
            if d['target'] is None:
                d['target'] = list(DEFAULT_TARGET) + \
                    [0.0] * (self.data['sim']['dim'] - 2)
        else:
            d['target'] = None
        return self._build('cost', CostSpec.from_dict, d)

    def mpc_params(self):
        return self._build('mpc', MpcParams.from_dict)

    def architecture(self):
        d = {'hidden': self.network['hidden'],
             'activation': self.network['activation']}
        return self._build('network', Architecture.from_dict, d)

    def adam_config(self):
        return self._build('adam', AdamConfig.from_dict)

    def quad_params(self):
        return self._build('quad', QuadParams.from_dict,
                           self.quad['params'], 'quad.params')

    def attitude_gains(self):
        return self._build('quad', AttitudeGains.from_dict,
                           self.quad['gains'], 'quad.gains')

    def layout(self):
        try:
            return layout_for(self.task, self.data['sim']['dim'])
        except ValueError as err:
            raise ConfigError('task', str(err))

    def validate(self):
        """
        Build every parameter object and check the cross-field rules.

        Raises
        ------
        ConfigError
        """
        if self.task not in TASKS:
            raise ConfigError('task', 'must be one of {}'.format(TASKS))
        if self.profile not in PROFILES:
            raise ConfigError('profile', 'must be one of {}'.format(
                sorted(PROFILES)))
        sim = self.sim_params()
        self.layout()
        self.predator_params()
        self.cost_spec()
        self.cost_spec(distributed=True)
        self.mpc_params()
        self.architecture()
        self.adam_config()
        if sim.dim == 3:
            self.quad_params()
            self.attitude_gains()

        exp = self.experiment
        for key in ('n_agents', 'n_trajectories', 'n_test', 'n_obstacles',
                    'seed', 'test_seed'):
            if not isinstance(exp[key], int) or exp[key] < 0:
                raise ConfigError('experiment.' + key,
                                  'must be a non-negative integer')
        if exp['n_agents'] < 2:
            raise ConfigError('experiment.n_agents', 'must be at least 2')
        n_nb = self.network['n_neighbors']
        if not isinstance(n_nb, int) or not 1 <= n_nb <= exp['n_agents'] - 1:
            raise ConfigError('network.n_neighbors',
                              'must be an integer in [1, n_agents - 1]')
        if exp['count_mode'] not in ('instances', 'states'):
            raise ConfigError('experiment.count_mode',
                              'must be "instances" or "states"')
        if not 0 <= self.network['holdout_fraction'] < 1:
            raise ConfigError('network.holdout_fraction', 'must be in [0, 1)')
        if self.task == 'ObstacleTarget' and exp['n_obstacles'] < 1:
            raise ConfigError('experiment.n_obstacles',
                              'the ObstacleTarget task needs obstacles')
        if self.quad['inner_steps'] < 1:
            raise ConfigError('quad.inner_steps', 'must be at least 1')

    def to_dict(self):
        return copy.deepcopy(self.data)


def resolve(document=None, overrides=(), seed=None, out=None):
    """
    Merge a configuration document onto its profile.

    Parameters
    ----------
    document : ``dict`` or ``None``, optional
        Configuration document; its ``profile`` (default ``'paper2d'``)
        supplies the defaults.

    overrides : sequence of ``str``, optional
        ``'section.key=value'`` overrides, applied last.

    seed : ``int`` or ``None``, optional
        Overrides ``experiment.seed``.

    out : ``str`` or ``None``, optional
        Overrides ``experiment.out_dir``.

    Returns
    -------
    config : ``ExperimentConfig``
    """
    document = dict(document or {})
    profile = document.get('profile', 'paper2d')
    if profile not in PROFILES:
        raise ConfigError('profile', 'must be one of {}'.format(
            sorted(PROFILES)))
    data = copy.deepcopy(_BASE)
    _merge(data, copy.deepcopy(PROFILES[profile]))
    _merge(data, document)
    for text in overrides:
        path, value = parse_override(text)
        _merge(data, _nested(path, value))
    if seed is not None:
        data['experiment']['seed'] = int(seed)
    if out is not None:
        data['experiment']['out_dir'] = out
    return ExperimentConfig(data)


def load_config(path=None, overrides=(), seed=None, out=None, profile=None):
    """
    Read a JSON configuration file (or start from a profile when ``path``
    is ``None``) and resolve it. A ``manifest.json`` written by the command
    line is accepted too; its recorded configuration is used.
    """
    document = {}
    if path is not None:
        with open(path, 'r') as f:
            try:
                document = json.load(f)
            except ValueError as err:
                raise ConfigError(path, 'invalid JSON ({})'.format(err))
        if isinstance(document, dict) and 'command' in document and \
                'config' in document:
            # rerun from a manifest
            document = document['config']
        if not isinstance(document, dict):
            raise ConfigError(path, 'expected a JSON object')
    if profile is not None:
        document['profile'] = profile
    return resolve(document, overrides, seed, out)


def worker_count():
    """Size of the process pool, from ``FLOCKFORGE_THREADS`` (default 1)."""
    raw = os.environ.get(THREADS_VARIABLE, '1')
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise ConfigError(THREADS_VARIABLE, 'must be an integer >= 1, got '
                          '{!r}'.format(raw))
    return n


def run_parallel(fn, items, n_workers=None):
    """
    ``[fn(item) for item in items]``, spread over a process pool of
    ``n_workers`` (``worker_count()`` if ``None``). Results keep the order
    of ``items``.
    """
    items = list(items)
    n_workers = worker_count() if n_workers is None else int(n_workers)
    if n_workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    logger.debug('Running %d jobs on %d processes', len(items), n_workers)
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(fn, items))
