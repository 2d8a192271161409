#!/usr/bin/env python
# -*- coding: utf-8 -*-
from __future__ import (absolute_import, division, print_function,
                        unicode_literals)

import argparse
import glob
import hashlib
import json
import logging
import os
import sys

import numpy as np

import flockforge
from flockforge import config as fconfig
from flockforge.config import ConfigError, ExperimentConfig
from flockforge.cost import CoincidentAgentsError
from flockforge.dataset import (extract_samples, generate_expert_data,
                                initial_condition, read_dataset, run_meta,
                                split_by_trajectory, write_dataset)
from flockforge.dynamics import DivergenceError, SamplingError
from flockforge.metrics import (evaluate, metric_series, write_difference,
                                write_report, write_series)
from flockforge.mpc import (CentralizedController, DistributedController,
                            control_loop)
from flockforge.network import (MlpParameters, NeuralController,
                                load_checkpoint, save_checkpoint, train)
from flockforge.quadrotor import quad_compare
from flockforge.trajectory import (FormatError, read_trajectory,
                                   write_trajectory)

"""
This module contains the ``flockforge`` command line: expert data generation,
training, closed-loop simulation, evaluation and the quadrotor comparison.
Every command writes its outputs under ``--out`` together with a
``manifest.json`` that records the resolved configuration and the SHA-256
digest of every output file.
"""

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_IO = 4

CONTROLLERS = ('cmpc', 'dmpc', 'checkpoint')


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir, command, cfg, outputs, extra=None):
    """
    Write ``manifest.json``: the command, the resolved configuration and the
    digest of every output (paths relative to ``out_dir``).
    """
    manifest = {'command': command, 'version': flockforge.__version__,
                'config': cfg.to_dict(),
                'outputs': {os.path.relpath(p, out_dir): _sha256(p)
                            for p in sorted(outputs)}}
    if extra:
        manifest.update(extra)
    path = os.path.join(out_dir, 'manifest.json')
    with open(path, 'w') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return path


def _write_timing(out_dir, timing):
    path = os.path.join(out_dir, 'timing.json')
    with open(path, 'w') as f:
        json.dump(timing, f, indent=2, sort_keys=True)


def _write_trajectories(trajs, directory):
    if not os.path.isdir(directory):
        os.makedirs(directory)
    paths = []
    for k, traj in enumerate(trajs):
        path = os.path.join(directory, 'traj_{:04d}.traj.jsonl'.format(k))
        write_trajectory(traj, path)
        paths.append(path)
    return paths


def _mean_timing(trajs):
    values = [t.timing.get('mean_seconds_per_decision') for t in trajs
              if t.timing]
    return float(np.mean(values)) if values else None


def _make_controller(cfg, kind, spec, checkpoint=None):
    """Controller of one run; ``spec`` carries the run's obstacles."""
    sim = cfg.sim_params()
    if kind == 'cmpc':
        return CentralizedController(spec, cfg.mpc_params(), sim,
                                     cfg.predator_params())
    elif kind == 'dmpc':
        local = cfg.cost_spec(distributed=True).with_obstacles(spec.obstacles)
        return DistributedController(local, cfg.mpc_params(), sim,
                                     cfg.network['n_neighbors'])
    params = MlpParameters.from_dict(checkpoint)
    if params.layout != cfg.layout():
        raise ConfigError('task', 'checkpoint layout {} does not match the '
                          'task layout {}'.format(params.layout,
                                                  cfg.layout()))
    return NeuralController(params, sim, spec.target)


def _closed_loop_job(job):
    cfg = ExperimentConfig(job['config'])
    sim = cfg.sim_params()
    pp = cfg.predator_params()
    flock, spec = initial_condition(cfg.task, job['n_agents'], job['seed'],
                                    sim, cfg.cost_spec(), pp,
                                    job['n_obstacles'])
    controller = _make_controller(cfg, job['controller'], spec,
                                  job['checkpoint'])
    meta = run_meta(cfg.task, job['seed'], job['index'], controller.name,
                    sim, spec, cfg.mpc_params(), pp)
    meta['n_agents'] = job['n_agents']
    return control_loop(flock, controller, sim, pp, meta,
                        verbose=job['verbose'])


def cmd_gen_data(cfg, args):
    exp = cfg.experiment
    out = exp['out_dir']
    trajs = generate_expert_data(cfg.task, exp['n_agents'],
                                 exp['n_trajectories'], exp['seed'],
                                 cfg.sim_params(), cfg.cost_spec(),
                                 cfg.mpc_params(), cfg.predator_params(),
                                 exp['n_obstacles'],
                                 verbose=args.verbose > 0)
    outputs = _write_trajectories(trajs, os.path.join(out, 'trajectories'))
    dataset = extract_samples(trajs, cfg.task, cfg.network['n_neighbors'])
    data_path = os.path.join(out, 'dataset.data.jsonl')
    write_dataset(dataset, data_path)
    outputs.append(data_path)
    logger.info('Wrote %d trajectories and %d samples', len(trajs),
                len(dataset))
    _write_timing(out, {'cmpc': _mean_timing(trajs)})
    seeds = [exp['seed'] + k for k in range(exp['n_trajectories'])]
    write_manifest(out, 'gen-data', cfg, outputs, {'seeds': seeds})


def cmd_train(cfg, args):
    out = cfg.experiment['out_dir']
    dataset = read_dataset(args.dataset)
    if dataset.layout != cfg.layout():
        raise ConfigError('task', 'dataset layout {} does not match the task '
                          'layout {}'.format(dataset.layout, cfg.layout()))
    adam = cfg.adam_config()
    train_set, held_out = split_by_trajectory(
        dataset, cfg.network['holdout_fraction'], adam.rng_seed)
    validation = held_out if len(held_out) else None
    params, history = train(train_set, adam, cfg.architecture(), validation,
                            verbose=args.verbose > 0)
    ckpt_path = os.path.join(out, 'checkpoint.json')
    save_checkpoint(params, ckpt_path)
    loss_path = os.path.join(out, 'loss.csv')
    history.write(loss_path, format='ascii.csv', overwrite=True)
    logger.info('Final training mse %.6g', history['mse'][-1])
    write_manifest(out, 'train', cfg, [ckpt_path, loss_path],
                   {'dataset': os.path.abspath(args.dataset),
                    'dataset_sha256': _sha256(args.dataset)})


def cmd_simulate(cfg, args):
    exp = cfg.experiment
    out = exp['out_dir']
    checkpoint = None
    if args.controller == 'checkpoint':
        if args.checkpoint is None:
            raise ConfigError('checkpoint', 'the checkpoint controller needs '
                              '--checkpoint')
        params = load_checkpoint(args.checkpoint)
        if params.layout != cfg.layout():
            raise ConfigError('task', 'checkpoint layout {} does not match '
                              'the task layout {}'.format(params.layout,
                                                          cfg.layout()))
        checkpoint = params.to_dict()
    n_agents = exp['n_agents'] if args.agents is None else args.agents
    n_obstacles = exp['n_obstacles'] if args.obstacles is None \
        else args.obstacles
    if n_agents < 2:
        raise ConfigError('experiment.n_agents', 'must be at least 2')
    if args.controller != 'cmpc' and \
            cfg.network['n_neighbors'] > n_agents - 1:
        raise ConfigError('network.n_neighbors', 'larger than the flock')
    seeds = [exp['test_seed'] + k for k in range(exp['n_test'])]
    jobs = [{'config': cfg.to_dict(), 'controller': args.controller,
             'checkpoint': checkpoint, 'seed': seed, 'index': k,
             'n_agents': n_agents, 'n_obstacles': n_obstacles,
             'verbose': args.verbose > 0}
            for k, seed in enumerate(seeds)]
    trajs = fconfig.run_parallel(_closed_loop_job, jobs)
    outputs = _write_trajectories(trajs, os.path.join(out, 'trajectories'))
    _write_timing(out, {args.controller: _mean_timing(trajs)})
    write_manifest(out, 'simulate', cfg, outputs,
                   {'seeds': seeds, 'controller': args.controller,
                    'n_agents': n_agents, 'n_obstacles': n_obstacles})


def _trajectory_paths(sources):
    paths = []
    for source in sources:
        if os.path.isdir(source):
            paths += sorted(glob.glob(os.path.join(source, '**',
                                                   '*.traj.jsonl'),
                                      recursive=True))
        else:
            paths.append(source)
    if not paths:
        raise FormatError('no trajectory files found in {}'.format(sources))
    return paths


def cmd_evaluate(cfg, args):
    out = cfg.experiment['out_dir']
    paths = _trajectory_paths(args.trajectories)
    trajs = [read_trajectory(p) for p in paths]
    spec = cfg.cost_spec()
    d_min_pred = spec.d_min_pred if cfg.task == 'PredatorAvoidance' \
        else None
    controller = trajs[0].meta.get('controller', '')
    report = evaluate(trajs, spec.d_min, d_min_pred, controller, cfg.task,
                      cfg.experiment['count_mode'])
    prefix = os.path.join(out, 'report')
    write_report(report, prefix)
    series_path = os.path.join(out, 'series.csv')
    write_series([metric_series(t, spec.d_min, d_min_pred) for t in trajs],
                 series_path)
    for key, value in sorted(report.to_dict().items()):
        logger.info('%s = %s', key, value)
    write_manifest(out, 'evaluate', cfg,
                   [prefix + '.csv', prefix + '.json', series_path],
                   {'inputs': {os.path.abspath(p): _sha256(p)
                               for p in paths}})


def cmd_quad_compare(cfg, args):
    exp = cfg.experiment
    out = exp['out_dir']
    sim = cfg.sim_params()
    if sim.dim != 3:
        raise ConfigError('sim.dim', 'quad-compare needs a 3D profile')
    if cfg.task != 'BasicFlocking':
        raise ConfigError('task', 'quad-compare runs the BasicFlocking task')
    params = load_checkpoint(args.checkpoint)
    if params.layout != 'BF36':
        raise ConfigError('checkpoint', 'quad-compare needs a BF36 network, '
                          'got {}'.format(params.layout))
    spec = cfg.cost_spec()
    seeds = [exp['test_seed'] + k for k in range(exp['n_test'])]
    initials = [initial_condition(cfg.task, exp['n_agents'], s, sim,
                                  spec)[0] for s in seeds]
    runs, curves = quad_compare(
        initials, lambda: NeuralController(params, sim),
        lambda: CentralizedController(spec, cfg.mpc_params(), sim), sim,
        cfg.quad_params(), cfg.attitude_gains(),
        meta={'task': cfg.task}, inner_steps=cfg.quad['inner_steps'],
        gyroscopic=cfg.quad['gyroscopic'])
    outputs, timing = [], {}
    for name in sorted(runs):
        outputs += _write_trajectories(runs[name], os.path.join(out, name))
        timing[name] = _mean_timing(runs[name])
    for name, (delta_d, delta_vc) in sorted(curves.items()):
        path = os.path.join(out, 'delta_{}.csv'.format(name))
        write_difference(delta_d, delta_vc, path)
        outputs.append(path)
    _write_timing(out, timing)
    write_manifest(out, 'quad-compare', cfg, outputs,
                   {'seeds': seeds,
                    'checkpoint_sha256': _sha256(args.checkpoint)})


COMMANDS = {'gen-data': cmd_gen_data, 'train': cmd_train,
            'simulate': cmd_simulate, 'evaluate': cmd_evaluate,
            'quad-compare': cmd_quad_compare}


def build_parser():
    parser = argparse.ArgumentParser(
        prog='flockforge',
        description='Model-predictive and neural flocking controllers.')
    sub = parser.add_subparsers(dest='command')
    sub.required = True

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', default=None,
                        help='JSON configuration (or a manifest.json to '
                             'rerun).')
    common.add_argument('--profile', default=None,
                        choices=sorted(fconfig.PROFILES),
                        help='Profile supplying the defaults.')
    common.add_argument('--seed', type=int, default=None,
                        help='Overrides experiment.seed.')
    common.add_argument('--out', default=None,
                        help='Output directory (experiment.out_dir).')
    common.add_argument('--set', action='append', default=[],
                        metavar='SECTION.KEY=VALUE',
                        help='Configuration override; repeatable.')
    common.add_argument('-v', '--verbose', action='count', default=0,
                        help='-v for progress, -vv for debugging output.')

    sub.add_parser('gen-data', parents=[common],
                   help='Generate expert trajectories and samples.')
    p = sub.add_parser('train', parents=[common],
                       help='Train the neural controller.')
    p.add_argument('--dataset', required=True, help='*.data.jsonl file.')
    p = sub.add_parser('simulate', parents=[common],
                       help='Run a controller from the test seeds.')
    p.add_argument('--controller', choices=CONTROLLERS, default='cmpc')
    p.add_argument('--checkpoint', default=None)
    p.add_argument('--agents', type=int, default=None,
                   help='Flock size (overrides experiment.n_agents).')
    p.add_argument('--obstacles', type=int, default=None,
                   help='Obstacle count (overrides experiment.n_obstacles).')
    p = sub.add_parser('evaluate', parents=[common],
                       help='Metrics of a set of trajectories.')
    p.add_argument('trajectories', nargs='+',
                   help='Trajectory files or directories.')
    p = sub.add_parser('quad-compare', parents=[common],
                       help='Point model against quadrotors.')
    p.add_argument('--checkpoint', required=True,
                   help='BF36 network checkpoint.')
    return parser


def _load(args):
    return fconfig.load_config(args.config, args.set, args.seed, args.out,
                               args.profile)


def main(argv=None):
    """
    Entry point of the ``flockforge`` command.

    Returns
    -------
    code : ``int``
        0 on success, 2 for a configuration or parameter error, 3 for a
        runtime failure (divergence, sampling) and 4 for an I/O or file
        format error.
    """
    args = build_parser().parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose,
                                                               2)]
    logging.basicConfig(level=level, stream=sys.stderr,
                        format='%(asctime)s %(name)s %(levelname)s '
                               '%(message)s')
    try:
        cfg = _load(args)
        out = cfg.experiment['out_dir']
        if not os.path.isdir(out):
            os.makedirs(out)
        COMMANDS[args.command](cfg, args)
    except ConfigError as err:
        logger.error('Configuration error: %s', err)
        return EXIT_CONFIG
    except (DivergenceError, SamplingError, CoincidentAgentsError) as err:
        logger.error('Run failed: %s', err)
        return EXIT_RUNTIME
    except (OSError, FormatError) as err:
        logger.error('I/O error: %s', err)
        return EXIT_IO
    except ValueError as err:
        logger.error('Invalid parameters: %s', err)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
