#!/usr/bin/env python
# -*- coding: utf-8 -*-

from __future__ import (absolute_import, division, print_function,
                        unicode_literals)

import json
import pickle

import pytest

from flockforge import config
from flockforge.config import ConfigError


def test_defaults():
    cfg = config.resolve()
    assert cfg.profile == 'paper2d'
    assert cfg.task == 'BasicFlocking'
    sim = cfg.sim_params()
    assert (sim.dt, sim.eta, sim.v_max, sim.a_max, sim.dim) == \
        (0.1, 3, 2.0, 1.5, 2)
    assert sim.n_control_steps == 333
    assert cfg.cost_spec().omega == 2000.0
    assert cfg.cost_spec(distributed=True).omega == 30.0
    assert cfg.mpc_params().horizon == 3
    assert cfg.adam_config().lr == 1e-4
    assert cfg.layout() == 'BF24'
    assert cfg.predator_params() is None


def test_profiles():
    desk = config.resolve({'profile': 'desk2d'})
    assert desk.experiment['n_agents'] == 10
    assert desk.adam_config().epochs == 2000
    cube = config.resolve({'profile': 'paper3d'})
    assert cube.layout() == 'BF36'
    assert cube.architecture().activation == 'relu'
    assert list(cube.architecture().hidden) == [84] * 5
    assert cube.quad_params().m == pytest.approx(0.65)
    with pytest.raises(ConfigError) as err:
        config.resolve({'profile': 'laptop'})
    assert err.value.field == 'profile'


def test_precedence():
    cfg = config.resolve({'experiment': {'seed': 3}},
                         ['experiment.seed=4', 'sim.dt=0.05',
                          'experiment.out_dir=results'], seed=5)
    assert cfg.experiment['seed'] == 5
    assert cfg.sim_params().dt == 0.05
    # values that are not JSON stay strings
    assert cfg.experiment['out_dir'] == 'results'
    cfg = config.resolve({'experiment': {'seed': 3}}, ['experiment.seed=4'],
                         out='elsewhere')
    assert cfg.experiment['seed'] == 4
    assert cfg.experiment['out_dir'] == 'elsewhere'


def test_list_override():
    cfg = config.resolve(overrides=['network.hidden=[8, 8]'])
    assert list(cfg.architecture().hidden) == [8, 8]


@pytest.mark.parametrize('document,overrides,field', [
    ({'sim': {'dtt': 0.1}}, [], 'sim.dtt'),
    ({}, ['mpc.horizonn=2'], 'mpc.horizonn'),
    ({'sim': 3}, [], 'sim'),
    ({}, ['sim.dt=-1'], 'sim.dt'),
    ({}, ['mpc.horizon=0'], 'mpc.horizon'),
    ({'task': 'Herding'}, [], 'task'),
    ({}, ['experiment.n_agents=3'], 'network.n_neighbors'),
    ({}, ['experiment.n_agents=1'], 'experiment.n_agents'),
    ({}, ['experiment.count_mode="pairs"'], 'experiment.count_mode'),
    ({}, ['network.holdout_fraction=1.0'], 'network.holdout_fraction'),
    ({'profile': 'paper3d', 'task': 'ObstacleTarget'}, [], 'task'),
    ({'profile': 'paper3d', 'quad': {'params': {'mass': 1.0}}}, [],
     'quad.params'),
])
def test_errors_name_the_field(document, overrides, field):
    with pytest.raises(ConfigError) as err:
        config.resolve(document, overrides)
    assert err.value.field == field
    assert str(err.value).startswith(field + ':')


def test_bad_override_syntax():
    with pytest.raises(ConfigError):
        config.parse_override('sim.dt')
    assert config.parse_override('a.b= 2') == ('a.b', 2)


def test_obstacle_target_default():
    cfg = config.resolve({'task': 'ObstacleTarget'})
    assert list(cfg.cost_spec().target) == [80.0, 0.0]
    assert cfg.layout() == 'OA38'
    cfg = config.resolve({'task': 'ObstacleTarget',
                          'cost': {'target': [40.0, 5.0]}})
    assert list(cfg.cost_spec().target) == [40.0, 5.0]


def test_predator_section():
    cfg = config.resolve({'task': 'PredatorAvoidance'})
    assert cfg.predator_params().f_p == 1.25
    assert cfg.layout() == 'PA28'


def test_round_trip_through_dict():
    cfg = config.resolve({'profile': 'desk3d'}, ['adam.epochs=7'])
    again = config.ExperimentConfig(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()
    assert again.adam_config().epochs == 7


def test_load_config(tmp_path):
    path = tmp_path / 'experiment.json'
    path.write_text(json.dumps({'profile': 'desk2d',
                                'experiment': {'n_test': 3}}))
    cfg = config.load_config(str(path), ['adam.epochs=9'])
    assert cfg.experiment['n_test'] == 3
    assert cfg.adam_config().epochs == 9
    assert config.load_config(str(path), profile='desk3d').profile == \
        'desk3d'

    manifest = tmp_path / 'manifest.json'
    manifest.write_text(json.dumps({'command': 'train',
                                    'config': cfg.to_dict(),
                                    'outputs': {}}))
    assert config.load_config(str(manifest)).to_dict() == cfg.to_dict()

    path.write_text('{oops')
    with pytest.raises(ConfigError):
        config.load_config(str(path))
    path.write_text('[1, 2]')
    with pytest.raises(ConfigError):
        config.load_config(str(path))


def test_worker_count(monkeypatch):
    monkeypatch.delenv(config.THREADS_VARIABLE, raising=False)
    assert config.worker_count() == 1
    monkeypatch.setenv(config.THREADS_VARIABLE, '3')
    assert config.worker_count() == 3
    for bad in ('0', 'many'):
        monkeypatch.setenv(config.THREADS_VARIABLE, bad)
        with pytest.raises(ConfigError) as err:
            config.worker_count()
        assert err.value.field == config.THREADS_VARIABLE


def test_run_parallel_keeps_order():
    items = [-5, 3, -2, 8, -1]
    assert config.run_parallel(abs, items, 1) == [5, 3, 2, 8, 1]
    assert config.run_parallel(abs, items, 2) == [5, 3, 2, 8, 1]


def test_config_error_pickles():
    err = pickle.loads(pickle.dumps(ConfigError('sim.dt', 'bad')))
    assert err.field == 'sim.dt'
    assert str(err) == 'sim.dt: bad'
