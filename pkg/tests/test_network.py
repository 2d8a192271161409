#!/usr/bin/env python
# -*- coding: utf-8 -*-

from __future__ import (absolute_import, division, print_function,
                        unicode_literals)

import json
import math

import numpy as np
import numpy.testing as npt
import pytest

from flockforge import dataset, metrics, mpc, network
from flockforge.cost import CostSpec
from flockforge.dynamics import (AgentState, DivergenceError, FlockState,
                                 Obstacle, SimParams)
from flockforge.network import (AdamConfig, Architecture, FeatureVector,
                                MlpParameters, TrainingSample)
from flockforge.trajectory import FormatError


def _line_flock(n=7, dim=2):
    # agent k sits at x = k**1.5 so that distances are all different
    p = np.zeros((n, dim))
    p[:, 0] = np.arange(n) ** 1.5
    v = np.zeros((n, dim))
    v[:, 1] = np.arange(n)
    return FlockState(p, v)


@pytest.mark.parametrize('layout,width', sorted(
    network.LAYOUT_WIDTHS.items()))
def test_layout_widths(layout, width):
    assert network.layout_width(layout) == width


def test_layout_width_for_other_neighborhoods():
    assert network.layout_width('BF24', 3) == 16
    assert network.layout_width('OA38', 3) == 26
    with pytest.raises(ValueError):
        network.layout_width('XX10')
    with pytest.raises(ValueError):
        network.layout_for('ObstacleTarget', 3)


def test_encode_features_order():
    flock = _line_flock()
    f = network.encode_features(flock, 2, 'BasicFlocking')
    assert f.layout == 'BF24'
    rows = f.values.reshape(6, 4)
    # self first, then neighbors by distance from x = 2.83
    assert list(rows[:, 3]) == [2.0, 1.0, 3.0, 0.0, 4.0, 5.0]
    npt.assert_allclose(rows[0, :2], flock.positions[2])


def test_encode_obstacle_features():
    flock = _line_flock()
    obstacles = [Obstacle([0.0, 10.0], 2.0)]
    f = network.encode_features(flock, 0, 'ObstacleTarget',
                                obstacles=obstacles, target=[80.0, 0.0])
    assert f.layout == 'OA38' and len(f) == 38
    npt.assert_allclose(f.values[-2:], [80.0, 0.0])
    # closest obstacle point of agent 0 (at the origin)
    npt.assert_allclose(f.values[24:26], [0.0, 8.0])
    with pytest.raises(ValueError):
        network.encode_features(flock, 0, 'ObstacleTarget',
                                target=[80.0, 0.0])
    with pytest.raises(ValueError):
        network.encode_features(flock, 0, 'ObstacleTarget',
                                obstacles=obstacles)


def test_encode_predator_features():
    flock = _line_flock()
    with pytest.raises(ValueError):
        network.encode_features(flock, 0, 'PredatorAvoidance')
    flock.predator = AgentState([50.0, 0.0], [-1.0, 0.0])
    f = network.encode_features(flock, 0, 'PredatorAvoidance')
    assert len(f) == 28
    npt.assert_allclose(f.values[-4:], [50.0, 0.0, -1.0, 0.0])


def test_encode_3d_features():
    f = network.encode_features(_line_flock(dim=3), 0, 'BasicFlocking')
    assert f.layout == 'BF36' and len(f) == 36


def test_feature_vector_checks_width():
    with pytest.raises(ValueError):
        FeatureVector(np.zeros(23), 'BF24')


@pytest.mark.parametrize('width,out,arch,count', [
    (24, 2, Architecture(), 18370),
    (38, 2, Architecture(), 19266),
    (28, 2, Architecture(), 18626),
    (36, 3, Architecture.for_dim(3), 31923),
])
def test_parameter_counts(width, out, arch, count):
    params = MlpParameters.random(width, out, arch)
    assert params.n_parameters == count
    assert params.activations[-1] == 'identity'


def test_random_init_bounds_and_seed():
    a = MlpParameters.random(24, 2, rng_seed=3)
    assert a == MlpParameters.random(24, 2, rng_seed=3)
    assert not a == MlpParameters.random(24, 2, rng_seed=4)
    assert np.all(np.abs(a.weights[0]) <= 1 / np.sqrt(24))
    assert all(np.all(b == 0) for b in a.biases)


def test_forward_zero_network():
    params = MlpParameters([np.zeros((4, 3)), np.zeros((3, 2))],
                           [np.zeros(3), np.zeros(2)], ['relu', 'identity'])
    npt.assert_array_equal(network.forward(params, np.ones(4)), [0.0, 0.0])


def test_forward_identity_slice():
    w = np.eye(6)[:, :2]
    params = MlpParameters([w], [np.zeros(2)], ['identity'])
    x = np.arange(6.0)
    npt.assert_array_equal(network.forward(params, x), [0.0, 1.0])
    with pytest.raises(ValueError):
        network.forward(params, np.zeros(5))


def _straight_line(params, x):
    values = list(x)
    for w, b, tag in zip(params.weights, params.biases, params.activations):
        out = []
        for j in range(w.shape[1]):
            z = b[j] + sum(values[i] * w[i, j] for i in range(w.shape[0]))
            if tag == 'sigmoid':
                z = 1.0 / (1.0 + math.exp(-z))
            elif tag == 'relu':
                z = max(z, 0.0)
            out.append(z)
        values = out
    return values


@pytest.mark.parametrize('activation', ['sigmoid', 'relu'])
def test_forward_matches_straight_line_evaluator(activation):
    params = MlpParameters.random(6, 2, Architecture((5, 4), activation),
                                  rng_seed=1)
    rng = np.random.default_rng(2)
    for _ in range(10):
        x = rng.normal(size=6)
        npt.assert_allclose(network.forward(params, x),
                            _straight_line(params, x), rtol=0, atol=1e-10)


@pytest.mark.parametrize('activation', ['sigmoid', 'relu'])
def test_backprop_matches_finite_differences(activation, fd_gradient):
    params = MlpParameters.random(2, 2, Architecture((8,), activation),
                                  rng_seed=5)
    rng = np.random.default_rng(6)
    X = rng.normal(size=(7, 2))
    Y = rng.normal(size=(7, 2))
    loss, grads = network.backprop(params, X, Y)
    assert loss == pytest.approx(network.mse_loss(params, X, Y))
    for k, array in enumerate(params.arrays()):
        def fn(value):
            saved = array.copy()
            array[...] = value
            out = network.mse_loss(params, X, Y)
            array[...] = saved
            return out
        npt.assert_allclose(grads[k], fd_gradient(fn, array.copy()),
                            rtol=1e-5, atol=1e-8)


def test_adam_first_step():
    a = [np.array([1.0, -2.0, 0.5])]
    g = [np.array([0.3, -4.0, 0.0])]
    network.Adam(a, AdamConfig(lr=0.1)).step(g)
    # bias correction makes the first step lr * g / |g|
    npt.assert_allclose(a[0], [0.9, -1.9, 0.5], rtol=1e-6)


def test_adam_config_validation():
    for kwargs in ({'lr': 0.0}, {'beta1': 1.0}, {'epochs': -1},
                   {'batch_size': 0}):
        with pytest.raises(ValueError):
            AdamConfig(**kwargs)


def _samples(n, seed=0):
    rng = np.random.default_rng(seed)
    return [TrainingSample(FeatureVector(rng.uniform(-1, 1, 24), 'BF24'),
                           rng.uniform(-1.5, 1.5, 2)) for _ in range(n)]


def test_training_memorizes_small_set():
    samples = _samples(10)
    params, history = network.train(
        samples, AdamConfig(lr=1e-2, epochs=3000, batch_size=10),
        Architecture((32, 32)))
    assert len(history) == 3001
    assert history['mse'][-1] < 1e-2
    assert history['mse'][-1] < history['mse'][0]
    assert params.layout == 'BF24'


def test_training_recovers_linear_map():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(3, 2))
    b = np.array([0.5, -0.25])
    X = rng.normal(size=(200, 3))
    Y = X.dot(A) + b
    params, _ = network.train((X, Y), AdamConfig(lr=1e-2, epochs=2000,
                                                 batch_size=50),
                              Architecture(()))
    npt.assert_allclose(params.weights[0], A, atol=1e-2)
    npt.assert_allclose(params.biases[0], b, atol=1e-2)


def test_training_is_deterministic_with_validation():
    samples = _samples(30)
    config = AdamConfig(lr=1e-3, epochs=5, batch_size=8, rng_seed=4)
    runs = [network.train(samples[:20], config, Architecture((8,)),
                          validation=samples[20:]) for _ in range(2)]
    assert runs[0][0] == runs[1][0]
    assert list(runs[0][1]['mse']) == list(runs[1][1]['mse'])
    assert 'val_mse' in runs[0][1].colnames
    assert list(runs[0][1]['epoch']) == [0, 1, 2, 3, 4, 5]


def test_training_divergence():
    X = np.ones((4, 2))
    Y = np.full((4, 2), 1e200)
    with pytest.raises(DivergenceError):
        network.train((X, Y), AdamConfig(epochs=1), Architecture((4,)))
    with pytest.raises(ValueError):
        network.train([], AdamConfig(epochs=1))


def test_checkpoint_round_trip(tmp_path):
    params = MlpParameters.random(24, 2, Architecture((8, 8)), layout='BF24')
    path = str(tmp_path / 'checkpoint.json')
    network.save_checkpoint(params, path)
    assert network.load_checkpoint(path) == params


def test_checkpoint_errors(tmp_path):
    path = tmp_path / 'bad.json'
    path.write_text('{not json')
    with pytest.raises(FormatError):
        network.load_checkpoint(str(path))
    path.write_text(json.dumps({'kind': 'dataset', 'schema_version': 1}))
    with pytest.raises(FormatError):
        network.load_checkpoint(str(path))
    path.write_text(json.dumps({'kind': 'checkpoint', 'schema_version': 99}))
    with pytest.raises(FormatError):
        network.load_checkpoint(str(path))


def test_neural_controller_clamps_and_checks_layout():
    params = MlpParameters.random(24, 2, Architecture((8,)), layout='BF24')
    params.biases[-1][:] = [30.0, 40.0]
    flock = _line_flock()
    acc = network.neural_controller(params, flock, 1.5)
    assert acc.shape == (7, 2)
    npt.assert_allclose(np.linalg.norm(acc, axis=1), 1.5)
    with pytest.raises(ValueError):
        network.neural_controller(params, flock, 1.5, task='ObstacleTarget')
    controller = network.NeuralController(params, SimParams())
    npt.assert_allclose(controller(flock), acc)
    with pytest.raises(ValueError):
        network.NeuralController(params, SimParams(dim=3))


@pytest.mark.slow
def test_cloned_controller_tracks_the_expert():
    sim = SimParams()
    spec = CostSpec('BasicFlocking')
    trajs = dataset.generate_expert_data('BasicFlocking', 10, 20, 0, sim,
                                         spec, mpc.MpcParams())
    params, history = network.train(
        dataset.extract_samples(trajs, 'BasicFlocking'),
        AdamConfig(epochs=2000, batch_size=500))
    assert history['mse'][-1] <= 0.1 * history['mse'][1]

    seeds = range(1000, 1010)
    dnc, cmpc = [], []
    for seed in seeds:
        flock, _ = dataset.initial_condition('BasicFlocking', 10, seed, sim,
                                             spec)
        dnc.append(mpc.control_loop(flock, network.NeuralController(params,
                                                                    sim),
                                    sim))
        cmpc.append(mpc.control_loop(flock, mpc.CentralizedController(
            spec, mpc.MpcParams(), sim), sim))
    d_dnc = metrics.converged_stats(
        [metrics.metric_series(t, 2.0) for t in dnc])['diameter_mean']
    d_cmpc = metrics.converged_stats(
        [metrics.metric_series(t, 2.0) for t in cmpc])['diameter_mean']
    assert abs(d_dnc - d_cmpc) <= 0.25 * d_cmpc

    flock, _ = dataset.initial_condition('BasicFlocking', 10, 1000, sim,
                                         spec)
    dmpc = mpc.control_loop(flock, mpc.DistributedController(
        CostSpec('BasicFlocking', omega=30.0), mpc.MpcParams(), sim), sim,
        n_steps=20)
    assert 10 * dnc[0].timing['mean_seconds_per_decision'] <= \
        dmpc.timing['mean_seconds_per_decision']
