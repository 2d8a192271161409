#!/usr/bin/env python
# -*- coding: utf-8 -*-
from __future__ import (absolute_import, division, print_function,
                        unicode_literals)

import json
import logging

import numpy as np
from astropy.table import Table
from scipy.special import expit

from flockforge.dynamics import (DivergenceError, clamp_vector,
                                 closest_obstacle_point, nearest_neighbors)
from flockforge.trajectory import SCHEMA_VERSION, FormatError

"""
This module contains the distributed neural controller: the feature encoders
that turn the local observation of one agent into an input vector, a small
fully connected network written with ``numpy``, and its Adam / mean-squared
error trainer.
"""

logger = logging.getLogger(__name__)

# Feature width of every layout for a neighborhood of five agents
LAYOUT_WIDTHS = {'BF24': 24, 'CA24': 24, 'OA38': 38, 'PA28': 28, 'BF36': 36}

# Layout used for each (task, dimension)
TASK_LAYOUTS = {('BasicFlocking', 2): 'BF24',
                ('CollisionAvoidance', 2): 'CA24',
                ('ObstacleTarget', 2): 'OA38',
                ('PredatorAvoidance', 2): 'PA28',
                ('BasicFlocking', 3): 'BF36'}

ACTIVATIONS = ('sigmoid', 'relu', 'identity')


def layout_for(task, dim):
    """
    The feature layout of a task in dimension ``dim``.

    Raises
    ------
    ValueError
        If the task has no layout in that dimension.
    """
    try:
        return TASK_LAYOUTS[(task, int(dim))]
    except KeyError:
        raise ValueError('No feature layout for task {} in {}D.'.format(
            task, dim))


def layout_dim(layout):
    return 3 if layout == 'BF36' else 2


def layout_width(layout, n_neighbors=5):
    """
    Width of a feature vector: ``(N + 1)`` agents times ``2 * dim`` scalars,
    plus ``N + 1`` obstacle points and the target for ``OA38``, plus the
    predator position and velocity for ``PA28``.
    """
    if layout not in LAYOUT_WIDTHS:
        raise ValueError('Unknown feature layout {!r}.'.format(layout))
    dim = layout_dim(layout)
    width = (n_neighbors + 1) * 2 * dim
    if layout == 'OA38':
        width += (n_neighbors + 1) * dim + dim
    elif layout == 'PA28':
        width += 2 * dim
    return width


# Input of the network
class FeatureVector(object):
    """
    The encoded observation of one agent.

    Parameters
    ----------
    values : array_like
        The ordered scalars.

    layout : ``str``
        One of ``'BF24'``, ``'CA24'``, ``'OA38'``, ``'PA28'`` and
        ``'BF36'``.

    n_neighbors : ``int``, optional
        Neighborhood size the vector was encoded with. Default is 5, for
        which the length equals the number in the layout name.
    """
    def __init__(self, values, layout, n_neighbors=5):
        self.values = np.array(values, dtype=float)
        self.layout = layout
        self.n_neighbors = int(n_neighbors)
        expected = layout_width(layout, self.n_neighbors)
        if self.values.shape != (expected,):
            raise ValueError('Layout {} with N={} needs {} features, got {}.'
                             .format(layout, n_neighbors, expected,
                                     self.values.shape))

    def __len__(self):
        return len(self.values)


# One supervised example
class TrainingSample(object):
    """
    A feature vector and the expert acceleration for it.

    Parameters
    ----------
    features : ``FeatureVector``

    label : array_like
        Acceleration applied by the expert, ``dim`` components.
    """
    def __init__(self, features, label):
        self.features = features
        self.label = np.array(label, dtype=float)


def encode_features(flock, i, task, N=5, obstacles=None, target=None):
    """
    Encode the local observation of agent ``i``.

    The vector holds the position and velocity of agent ``i``, then those of
    its ``N`` nearest neighbors in ascending distance (ties by index), then
    the task extras: the closest obstacle point of each of these ``N + 1``
    agents and the target (``ObstacleTarget``), or the predator position and
    velocity (``PredatorAvoidance``). Coordinates are absolute.

    Parameters
    ----------
    flock : ``FlockState``

    i : ``int``
        Agent index.

    task : ``str``

    N : ``int``, optional
        Neighborhood size. Default is 5.

    obstacles : sequence or ``None``, optional
        Obstacles; ``flock.obstacles`` if ``None``.

    target : array_like or ``None``, optional
        Target position, required by ``ObstacleTarget``.

    Returns
    -------
    features : ``FeatureVector``
    """
    layout = layout_for(task, flock.dim)
    rows = [i] + nearest_neighbors(flock, i, N)
    parts = [np.concatenate([flock.positions[rows],
                             flock.velocities[rows]], axis=1).ravel()]
    if layout == 'OA38':
        obstacles = flock.obstacles if obstacles is None else obstacles
        if not obstacles:
            raise ValueError('The ObstacleTarget features need obstacles.')
        if target is None:
            raise ValueError('The ObstacleTarget features need a target.')
        parts.append(closest_obstacle_point(flock.positions[rows],
                                            obstacles).ravel())
        parts.append(np.asarray(target, dtype=float))
    elif layout == 'PA28':
        if flock.predator is None:
            raise ValueError('The PredatorAvoidance features need a '
                             'predator.')
        parts.append(flock.predator.p)
        parts.append(flock.predator.v)
    return FeatureVector(np.concatenate(parts), layout, N)


def encode_flock(flock, task, N=5, obstacles=None, target=None):
    """
    Feature matrix of every agent, shape ``(n, width)``.
    """
    return np.array([encode_features(flock, i, task, N, obstacles,
                                     target).values
                     for i in range(flock.n)])


# Hidden layers of the network
class Architecture(object):
    """
    Hidden layers of the multilayer perceptron.

    Parameters
    ----------
    hidden : sequence of ``int``, optional
        Width of each hidden layer. Default is five layers of 64.

    activation : ``str``, optional
        ``'sigmoid'`` or ``'relu'``. Default is ``'sigmoid'``.
    """
    def __init__(self, hidden=(64, 64, 64, 64, 64), activation='sigmoid'):
        self.hidden = [int(h) for h in hidden]
        if any(h < 1 for h in self.hidden):
            raise ValueError('Hidden layer widths must be positive.')
        if activation not in ('sigmoid', 'relu'):
            raise ValueError('activation must be "sigmoid" or "relu".')
        self.activation = activation

    @classmethod
    def for_dim(cls, dim):
        """Five sigmoid layers of 64 in 2D, five rectifier layers of 84 in
        3D."""
        if dim == 3:
            return cls((84,) * 5, 'relu')
        return cls((64,) * 5, 'sigmoid')

    def to_dict(self):
        return {'hidden': list(self.hidden), 'activation': self.activation}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# Weights of the network
class MlpParameters(object):
    """
    Weights, biases and activation of every layer. Weights are stored as
    ``(fan_in, fan_out)`` matrices so that a batch ``X`` of row vectors maps
    to ``X @ W + b``.

    Parameters
    ----------
    weights : sequence of array_like

    biases : sequence of array_like

    activations : sequence of ``str``
        Activation tag of each layer.

    layout : ``str`` or ``None``, optional
        Feature layout the network was trained on.

    n_neighbors : ``int``, optional
        Neighborhood size of the features. Default is 5.
    """
    def __init__(self, weights, biases, activations, layout=None,
                 n_neighbors=5):
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        self.activations = list(activations)
        self.layout = layout
        self.n_neighbors = int(n_neighbors)

        if not len(self.weights) == len(self.biases) == \
                len(self.activations) or not self.weights:
            raise ValueError('Need one weight, bias and activation per '
                             'layer.')
        for k, (w, b, act) in enumerate(zip(self.weights, self.biases,
                                            self.activations)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError('Layer {} has inconsistent shapes.'
                                 .format(k))
            if k > 0 and w.shape[0] != self.weights[k - 1].shape[1]:
                raise ValueError('Layer {} does not chain with layer {}.'
                                 .format(k, k - 1))
            if act not in ACTIVATIONS:
                raise ValueError('Unknown activation {!r}.'.format(act))
        if layout is not None and \
                self.input_width != layout_width(layout, self.n_neighbors):
            raise ValueError('Input width {} does not match layout {}.'
                             .format(self.input_width, layout))

    @classmethod
    def random(cls, input_width, output_width, arch=None, rng_seed=0,
               layout=None, n_neighbors=5):
        """
        Draw weights uniformly in ``[-1 / sqrt(fan_in), 1 / sqrt(fan_in)]``;
        biases start at zero. The output layer is linear.
        """
        if arch is None:
            arch = Architecture.for_dim(output_width)
        rng = np.random.default_rng(rng_seed)
        widths = [input_width] + arch.hidden + [output_width]
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        activations = [arch.activation] * len(arch.hidden) + ['identity']
        return cls(weights, biases, activations, layout, n_neighbors)

    @property
    def input_width(self):
        return self.weights[0].shape[0]

    @property
    def output_width(self):
        return self.weights[-1].shape[1]

    @property
    def n_parameters(self):
        return int(sum(w.size + b.size for w, b in zip(self.weights,
                                                       self.biases)))

    def arrays(self):
        """Weights and biases, interleaved per layer."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self):
        return MlpParameters(self.weights, self.biases, self.activations,
                             self.layout, self.n_neighbors)

    def to_dict(self):
        return {'layout': self.layout, 'n_neighbors': self.n_neighbors,
                'input_width': self.input_width,
                'output_width': self.output_width,
                'layers': [{'weight': w.tolist(), 'bias': b.tolist(),
                            'activation': act}
                           for w, b, act in zip(self.weights, self.biases,
                                                self.activations)]}

    @classmethod
    def from_dict(cls, d):
        layers = d['layers']
        return cls([l['weight'] for l in layers], [l['bias'] for l in layers],
                   [l['activation'] for l in layers], d.get('layout'),
                   d.get('n_neighbors', 5))

    def __eq__(self, other):
        return (isinstance(other, MlpParameters) and
                self.layout == other.layout and
                self.n_neighbors == other.n_neighbors and
                self.activations == other.activations and
                all(np.array_equal(a, b) for a, b in
                    zip(self.arrays(), other.arrays())))


def _activate(z, tag):
    if tag == 'sigmoid':
        return expit(z)
    elif tag == 'relu':
        return np.maximum(z, 0.0)
    return z


def _activation_derivative(a, z, tag):
    if tag == 'sigmoid':
        return a * (1.0 - a)
    elif tag == 'relu':
        return (z > 0).astype(float)
    return np.ones_like(z)


def _forward_pass(params, X):
    zs, acts = [], [X]
    for w, b, tag in zip(params.weights, params.biases, params.activations):
        z = acts[-1].dot(w) + b
        zs.append(z)
        acts.append(_activate(z, tag))
    return zs, acts


def forward(params, x):
    """
    Evaluate the network.

    Parameters
    ----------
    params : ``MlpParameters``

    x : ``FeatureVector`` or array_like
        One input of length ``input_width`` or a batch of shape
        ``(m, input_width)``.

    Returns
    -------
    y : ``numpy.ndarray``
        Shape ``(output_width,)`` or ``(m, output_width)``; not clamped.
    """
    if isinstance(x, FeatureVector):
        x = x.values
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.input_width:
        raise ValueError('Input has {} features, the network expects {}.'
                         .format(x.shape[-1], params.input_width))
    return _forward_pass(params, x)[1][-1]


def mse_loss(params, X, Y):
    """Mean of the squared errors over all samples and components."""
    return float(np.mean((forward(params, X) - Y) ** 2))


def backprop(params, X, Y):
    """
    Mean-squared error of a batch and its gradient.

    Returns
    -------
    loss : ``float``

    grads : ``list``
        Gradients in the order of ``params.arrays()``.
    """
    zs, acts = _forward_pass(params, X)
    err = acts[-1] - Y
    loss = float(np.mean(err ** 2))
    delta = 2.0 * err / err.size
    grads = []
    for k in reversed(range(len(params.weights))):
        delta = delta * _activation_derivative(acts[k + 1], zs[k],
                                               params.activations[k])
        grads = [acts[k].T.dot(delta), delta.sum(axis=0)] + grads
        if k > 0:
            delta = delta.dot(params.weights[k].T)
    return loss, grads


# Optimizer configuration
class AdamConfig(object):
    """
    Adam and minibatch settings.

    Parameters
    ----------
    lr : ``float``, optional
        Learning rate. Default is 1e-4.

    beta1, beta2 : ``float``, optional
        Decay rates of the moment estimates. Defaults are 0.9 and 0.999.

    epsilon : ``float``, optional
        Default is 1e-8.

    epochs : ``int``, optional
        Default is 10,000.

    batch_size : ``int``, optional
        Default is 500.

    rng_seed : ``int``, optional
        Seeds both the initialization and the shuffling. Default is 0.
    """
    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, epsilon=1e-8,
                 epochs=10000, batch_size=500, rng_seed=0):
        if not lr > 0:
            raise ValueError('lr must be positive.')
        if not (0 < beta1 < 1 and 0 < beta2 < 1):
            raise ValueError('beta1 and beta2 must be in (0, 1).')
        if not epsilon > 0:
            raise ValueError('epsilon must be positive.')
        if int(epochs) != epochs or epochs < 0:
            raise ValueError('epochs must be a non-negative integer.')
        if int(batch_size) != batch_size or batch_size < 1:
            raise ValueError('batch_size must be a positive integer.')
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.epochs = int(epochs)
        self.batch_size = int(batch_size)
        self.rng_seed = int(rng_seed)

    def to_dict(self):
        return {'lr': self.lr, 'beta1': self.beta1, 'beta2': self.beta2,
                'epsilon': self.epsilon, 'epochs': self.epochs,
                'batch_size': self.batch_size, 'rng_seed': self.rng_seed}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class Adam(object):
    """
    Adam update of a list of arrays, in place.

    Parameters
    ----------
    arrays : ``list`` of ``numpy.ndarray``
        The parameters to update.

    config : ``AdamConfig``
    """
    def __init__(self, arrays, config):
        self.arrays = arrays
        self.config = config
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, grads):
        c = self.config
        self.t += 1
        correction1 = 1.0 - c.beta1 ** self.t
        correction2 = 1.0 - c.beta2 ** self.t
        for a, g, m, v in zip(self.arrays, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g ** 2
            a -= c.lr * (m / correction1) / (np.sqrt(v / correction2) +
                                             c.epsilon)


def _as_arrays(samples):
    if hasattr(samples, 'arrays'):
        return samples.arrays()
    if isinstance(samples, tuple) and len(samples) == 2:
        return (np.asarray(samples[0], dtype=float),
                np.asarray(samples[1], dtype=float))
    samples = list(samples)
    if not samples:
        return np.zeros((0, 0)), np.zeros((0, 0))
    widths = set(len(s.features) for s in samples)
    if len(widths) > 1:
        raise ValueError('Samples have different feature widths: {}.'
                         .format(sorted(widths)))
    return (np.array([s.features.values for s in samples]),
            np.array([s.label for s in samples]))


def _layout_of(samples):
    if isinstance(samples, tuple):
        return None
    if hasattr(samples, 'layout'):
        return samples.layout
    return samples[0].features.layout


def train(samples, adam=None, arch=None, validation=None, init=None,
          verbose=False):
    """
    Fit the network to the samples by minimizing the mean-squared error
    with Adam over shuffled minibatches.

    Parameters
    ----------
    samples : ``Dataset``, sequence of ``TrainingSample`` or tuple
        The training set; a tuple is read as ``(X, Y)`` arrays.

    adam : ``AdamConfig`` or ``None``, optional
        Default settings if ``None``.

    arch : ``Architecture`` or ``None``, optional
        Hidden layers; the preset for the label dimension if ``None``.

    validation : same types as ``samples`` or ``None``, optional
        Held-out set evaluated after every epoch.

    init : ``MlpParameters`` or ``None``, optional
        Starting point; a seeded random network if ``None``.

    verbose : ``bool``, optional
        Log the loss at INFO level every 100 epochs. Default is ``False``.

    Returns
    -------
    params : ``MlpParameters``

    history : ``astropy.table.Table``
        Columns ``epoch`` and ``mse`` (and ``val_mse`` with a validation
        set). Row 0 is the loss of the initial network.
    """
    adam = AdamConfig() if adam is None else adam
    if not hasattr(samples, 'arrays') and not isinstance(samples, tuple):
        samples = list(samples)
    X, Y = _as_arrays(samples)
    if len(X) == 0:
        raise ValueError('Cannot train on an empty sample set.')
    layout = _layout_of(samples)
    if isinstance(samples, list):
        n_neighbors = samples[0].features.n_neighbors
    else:
        n_neighbors = getattr(samples, 'n_neighbors', 5)
    if init is None:
        params = MlpParameters.random(X.shape[1], Y.shape[1], arch,
                                      adam.rng_seed, layout, n_neighbors)
    else:
        params = init.copy()
    if X.shape[1] != params.input_width or Y.shape[1] != \
            params.output_width:
        raise ValueError('Samples are {} -> {}, the network is {} -> {}.'
                         .format(X.shape[1], Y.shape[1], params.input_width,
                                 params.output_width))
    if validation is not None:
        X_val, Y_val = _as_arrays(validation)

    # shuffling uses its own stream so that init and order do not interact
    rng = np.random.default_rng([adam.rng_seed, 1])
    optimizer = Adam(params.arrays(), adam)
    level = logging.INFO if verbose else logging.DEBUG

    epochs, losses, val_losses = [0], [mse_loss(params, X, Y)], []
    if validation is not None:
        val_losses.append(mse_loss(params, X_val, Y_val))
    m = len(X)
    for epoch in range(1, adam.epochs + 1):
        order = rng.permutation(m)
        total = 0.0
        for start in range(0, m, adam.batch_size):
            batch = order[start:start + adam.batch_size]
            loss, grads = backprop(params, X[batch], Y[batch])
            if not np.isfinite(loss):
                raise DivergenceError('Training loss is {} at epoch {}.'
                                      .format(loss, epoch))
            optimizer.step(grads)
            total += loss * len(batch)
        epochs.append(epoch)
        losses.append(total / m)
        if validation is not None:
            val_losses.append(mse_loss(params, X_val, Y_val))
        if epoch % 100 == 0:
            logger.log(level, 'Epoch %d: mse = %.6g', epoch, losses[-1])

    history = Table([epochs, losses], names=('epoch', 'mse'))
    if validation is not None:
        history['val_mse'] = val_losses
    history.meta['layout'] = layout
    return params, history


def save_checkpoint(params, path):
    """
    Write the network to a JSON checkpoint.
    """
    d = {'schema_version': SCHEMA_VERSION, 'kind': 'checkpoint'}
    d.update(params.to_dict())
    with open(path, 'w') as f:
        json.dump(d, f, sort_keys=True)


def load_checkpoint(path):
    """
    Read a network written by ``save_checkpoint``.

    Raises
    ------
    FormatError
        On a malformed file or a schema version mismatch.
    """
    with open(path, 'r') as f:
        try:
            d = json.load(f)
        except ValueError as err:
            raise FormatError('invalid JSON ({})'.format(err), path)
    if not isinstance(d, dict) or d.get('kind') != 'checkpoint':
        raise FormatError('not a checkpoint file', path)
    if d.get('schema_version') != SCHEMA_VERSION:
        raise FormatError('unsupported schema_version {!r}'.format(
            d.get('schema_version')), path)
    try:
        return MlpParameters.from_dict(d)
    except (KeyError, TypeError, ValueError) as err:
        raise FormatError('bad checkpoint ({})'.format(err), path)


def neural_controller(params, flock, a_max, task=None, target=None):
    """
    Accelerations of every agent from the same network: encode the local
    observation, evaluate, clamp to ``a_max``.

    Parameters
    ----------
    params : ``MlpParameters``
        A network with a feature layout.

    flock : ``FlockState``

    a_max : ``float``

    task : ``str`` or ``None``, optional
        Must agree with the network layout; inferred from it if ``None``.

    target : array_like or ``None``, optional
        Target position for ``ObstacleTarget``.

    Returns
    -------
    acc : ``numpy.ndarray``
        Shape ``(n, dim)``.
    """
    if params.layout is None:
        raise ValueError('The network has no feature layout.')
    if task is None:
        task = task_of(params.layout)
    elif layout_for(task, flock.dim) != params.layout:
        raise ValueError('Task {} in {}D does not match layout {}.'.format(
            task, flock.dim, params.layout))
    X = encode_flock(flock, task, params.n_neighbors, target=target)
    return clamp_vector(forward(params, X), a_max)


def task_of(layout):
    for (task, _), tag in TASK_LAYOUTS.items():
        if tag == layout:
            return task
    raise ValueError('Unknown feature layout {!r}.'.format(layout))


class NeuralController(object):
    """
    The distributed neural controller as a flock controller.

    Parameters
    ----------
    params : ``MlpParameters``

    sim : ``SimParams``

    target : array_like or ``None``, optional
    """
    name = 'dnc'

    def __init__(self, params, sim, target=None):
        self.params = params
        self.sim = sim
        self.task = task_of(params.layout)
        self.target = target
        if layout_dim(params.layout) != sim.dim:
            raise ValueError('Layout {} does not fit a {}D simulation.'
                             .format(params.layout, sim.dim))

    def __call__(self, flock):
        return neural_controller(self.params, flock, self.sim.a_max,
                                 self.task, self.target)
