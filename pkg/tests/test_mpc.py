#!/usr/bin/env python
# -*- coding: utf-8 -*-

from __future__ import (absolute_import, division, print_function,
                        unicode_literals)

import itertools

import numpy as np
import numpy.testing as npt
import pytest

from flockforge import cost, dataset, dynamics, metrics, mpc
from flockforge.cost import CostSpec
from flockforge.dynamics import FlockState, PredatorParams, SimParams
from flockforge.mpc import ControlPlan, MpcParams

sim = SimParams()
basic = CostSpec('BasicFlocking')


def _pair(d, v=None):
    p = np.array([[0.0, 0.0], [d, 0.0]])
    return FlockState(p, np.zeros((2, 2)) if v is None else v)


def test_rollout_of_zero_plan_on_static_agents():
    flock = _pair(4.0)
    plan = ControlPlan.zeros(1, 2, 2)
    value = mpc.rollout_cost(flock, plan, basic, MpcParams(horizon=1), sim)
    assert value == pytest.approx(float(cost.task_cost(flock.positions,
                                                       basic)))


def test_rollout_adds_control_effort():
    flock = _pair(4.0)
    acc = np.zeros((1, 2, 2))
    acc[0, 0] = [0.6, 0.8]
    spec = CostSpec('BasicFlocking', lam=2.0)
    value = mpc.rollout_cost(flock, acc, spec, MpcParams(horizon=1), sim)
    moved = dynamics.advance_control_step(flock, acc[0], sim)
    assert value == pytest.approx(float(cost.task_cost(moved.positions,
                                                       spec)) + 2.0)


def test_two_step_rollout_matches_manual_unroll():
    rng = np.random.default_rng(0)
    flock = FlockState(rng.uniform(-3, 3, (2, 2)), rng.uniform(0, 1, (2, 2)))
    acc = rng.uniform(-1, 1, (2, 2, 2))
    first = dynamics.advance_control_step(flock, acc[0], sim)
    second = dynamics.advance_control_step(first, acc[1], sim)
    expected = float(cost.task_cost(first.positions, basic)) + \
        float(cost.task_cost(second.positions, basic)) + np.sum(acc ** 2)
    value = mpc.rollout_cost(flock, acc, basic, MpcParams(horizon=2), sim)
    assert value == pytest.approx(expected, rel=1e-12)


def test_rollout_checks_plan_shape():
    with pytest.raises(ValueError):
        mpc.rollout_cost(_pair(4.0), np.zeros((2, 2, 2)), basic,
                         MpcParams(horizon=3), sim)


@pytest.mark.parametrize('task', cost.TASKS)
def test_rollout_gradient_matches_finite_differences(task, fd_gradient):
    rng = np.random.default_rng(5)
    if task == 'ObstacleTarget':
        spec = CostSpec(task, target=[10.0, 0.0],
                        obstacles=[dynamics.Obstacle([1.0, 1.0], 1.0)])
    else:
        spec = CostSpec(task)
    predator = bounds = None
    if task == 'PredatorAvoidance':
        predator = (np.array([2.0, -1.0]), np.array([0.5, 0.0]))
        bounds = (1.875, 2.5)
    cost_fn = mpc._flock_cost_fn(spec)
    for _ in range(10):
        p = rng.uniform(-3, 3, (5, 2))
        v = rng.uniform(-0.5, 0.5, (5, 2))
        acc = rng.uniform(-1, 1, (3, 5, 2))
        # a coasting predator; the chasing one is exogenous to the gradient
        _, grad = mpc._rollout(p, v, acc, sim, spec.lam, cost_fn, predator,
                               bounds, seek_predator=False, gradient=True)
        fd = fd_gradient(lambda a: mpc._rollout(p, v, a, sim, spec.lam,
                                                cost_fn, predator, bounds,
                                                seek_predator=False)[0],
                         acc)
        scale = max(1.0, np.max(np.abs(fd)))
        npt.assert_allclose(grad, fd, rtol=1e-4, atol=1e-4 * scale)


def test_rollout_gradient_through_speed_clamp(fd_gradient):
    # the agents start at the speed bound, so the clamp is active
    p = np.array([[0.0, 0.0], [4.0, 1.0], [-2.0, 3.0]])
    v = np.array([[2.0, 0.0], [0.0, -2.0], [1.2, 1.6]])
    acc = np.random.default_rng(6).uniform(-1, 1, (2, 3, 2))
    cost_fn = mpc._flock_cost_fn(basic)
    _, grad = mpc._rollout(p, v, acc, sim, 1.0, cost_fn, gradient=True)
    fd = fd_gradient(lambda a: mpc._rollout(p, v, a, sim, 1.0, cost_fn)[0],
                     acc)
    npt.assert_allclose(grad, fd, rtol=1e-4, atol=1e-4)


def test_far_agents_accelerate_toward_each_other():
    acc = mpc.solve_centralized(_pair(30.0), basic, MpcParams(), sim)
    assert acc[0, 0] > 0
    assert acc[1, 0] < 0


def test_stationary_pair_gets_near_zero_action():
    d = 2000.0 ** 0.25
    acc = mpc.solve_centralized(_pair(d), basic, MpcParams(), sim)
    assert np.all(np.linalg.norm(acc, axis=1) < 1e-2 * sim.a_max)


def _task_instance(task, seed):
    spec = CostSpec(task, target=[80.0, 0.0]
                    if task == 'ObstacleTarget' else None)
    pp = PredatorParams() if task == 'PredatorAvoidance' else None
    flock, spec = dataset.initial_condition(task, 5, seed, sim, spec, pp,
                                            n_obstacles=3)
    return flock, spec, pp


@pytest.mark.parametrize('task', cost.TASKS)
def test_solve_never_worse_than_zero_plan(task):
    params = MpcParams()
    strict = 0
    for seed in range(50):
        flock, spec, pp = _task_instance(task, seed)
        acc, result = mpc.solve_centralized(flock, spec, params, sim, pp,
                                            full_output=True)
        assert result.cost <= result.zero_cost
        strict += result.cost < result.zero_cost
        assert np.all(np.linalg.norm(acc, axis=1) <= sim.a_max + 1e-12)
        assert result.cost == pytest.approx(mpc.rollout_cost(
            flock, result.plan, spec, params, sim, pp))
    assert strict / 50 >= 0.9


def test_bad_warm_start_is_ignored():
    flock = _pair(4.0)
    params = MpcParams(horizon=2)
    bad = np.zeros((2, 2, 2))
    bad[:, 0] = [1.5, 0.0]
    bad[:, 1] = [-1.5, 0.0]
    _, result = mpc.solve_centralized(flock, basic, params, sim,
                                      init=ControlPlan(bad),
                                      full_output=True)
    assert result.cost <= result.zero_cost


def test_descent_beats_brute_force_grid():
    # one control step of two sub-steps, so the plan moves the agents
    fine = SimParams(dt=0.5, eta=2)
    flock = FlockState([[0.0, 0.0], [3.0, 1.0]], np.zeros((2, 2)))
    spec = CostSpec('BasicFlocking', lam=0.1)
    params = MpcParams(horizon=1, descent_iters=200, tol=1e-12)
    _, result = mpc.solve_centralized(flock, spec, params, fine,
                                      full_output=True)
    axis = np.linspace(-1.5, 1.5, 13)
    best = np.inf
    for ax, ay, bx, by in itertools.product(axis, repeat=4):
        acc = dynamics.clamp_vector([[[ax, ay], [bx, by]]], fine.a_max)
        best = min(best, mpc.rollout_cost(flock, acc, spec, params, fine))
    assert result.cost <= best + 1e-9


def test_finite_difference_mode_agrees():
    flock = dynamics.sample_initial_flock(4, 1, sim, 2.0)
    _, analytic = mpc.solve_centralized(flock, basic, MpcParams(), sim,
                                        full_output=True)
    _, finite = mpc.solve_centralized(flock, basic,
                                      MpcParams(gradient='finite'), sim,
                                      full_output=True)
    assert finite.cost == pytest.approx(analytic.cost, rel=1e-4)


def test_distributed_agent_moves_toward_distant_neighbor():
    acc = mpc.solve_distributed(_pair(30.0), 0, 1, basic, MpcParams(), sim)
    assert acc.shape == (2,)
    assert acc[0] > 0


def test_distributed_stationary_distance():
    spec = CostSpec('BasicFlocking', omega=30.0)
    d = 30.0 ** 0.25
    acc = mpc.solve_distributed(_pair(d), 0, 1, spec, MpcParams(), sim)
    assert np.linalg.norm(acc) < 1e-2 * sim.a_max


def test_coasting_neighbor_equals_pre_advanced_neighbor():
    spec = CostSpec('BasicFlocking', omega=30.0)
    cost_fn = mpc._agent_cost_fn(spec)
    p = np.array([[0.0, 0.0], [3.0, 1.0]])
    v = np.array([[0.2, 0.1], [-0.5, 0.4]])
    acc = np.zeros((1, 2, 2))
    acc[0, 0] = [0.3, -0.2]
    moving = mpc._rollout(p, v, acc, sim, spec.lam, cost_fn)[0]
    ahead = p.copy()
    ahead[1] += sim.control_period * v[1]
    still = v.copy()
    still[1] = 0.0
    static = mpc._rollout(ahead, still, acc, sim, spec.lam, cost_fn)[0]
    assert moving == pytest.approx(static, rel=1e-12)


def test_distributed_and_centralized_agree_in_direction():
    rng = np.random.default_rng(8)
    for _ in range(50):
        d = rng.choice([rng.uniform(2.0, 5.0), rng.uniform(9.0, 20.0)])
        theta = rng.uniform(0, 2 * np.pi)
        half = 0.5 * d * np.array([np.cos(theta), np.sin(theta)])
        w = rng.uniform(-0.05, 0.05, 2)
        center = rng.uniform(-5, 5, 2)
        flock = FlockState([center + half, center - half], [w, -w])
        a_c = mpc.solve_centralized(flock, basic, MpcParams(), sim)
        a_d = mpc.solve_distributed(flock, 0, 1, basic, MpcParams(), sim)
        assert np.dot(a_c[0], a_d) > 0


def test_control_loop_lengths_and_drift():
    flock = dynamics.sample_initial_flock(6, 2, sim, 2.0)
    traj = mpc.control_loop(flock, mpc.ZeroController(), sim)
    assert len(traj.states) == 334
    assert len(traj.accelerations) == 333
    npt.assert_allclose(traj.states[-1].velocities, flock.velocities)
    npt.assert_allclose(traj.states[-1].positions,
                        flock.positions + 99.9 * flock.velocities)
    assert traj.timing['controller'] == 'zero'


def test_control_loop_is_deterministic_and_replayable():
    flock = dynamics.sample_initial_flock(5, 3, sim, 2.0)
    runs = [mpc.control_loop(flock, mpc.CentralizedController(
        basic, MpcParams(descent_iters=5), sim), sim, n_steps=4)
        for _ in range(2)]
    assert runs[0] == runs[1]
    for a in runs[0].accelerations:
        assert np.all(np.linalg.norm(a, axis=1) <= sim.a_max + 1e-12)
    states = mpc.replay(flock, runs[0].accelerations, sim)
    assert states == runs[0].states


def test_control_loop_with_predator():
    pp = PredatorParams()
    flock = dynamics.place_predator(
        dynamics.sample_initial_flock(5, 4, sim, 2.0), pp)
    controller = mpc.CentralizedController(
        CostSpec('PredatorAvoidance'), MpcParams(descent_iters=5), sim, pp)
    traj = mpc.control_loop(flock, controller, sim, pp, n_steps=3)
    start = np.linalg.norm(flock.predator.p - flock.centroid)
    end = np.linalg.norm(traj.states[-1].predator.p -
                         traj.states[-1].centroid)
    assert end < start


def test_distributed_controller_and_warm_start():
    flock = dynamics.sample_initial_flock(6, 5, sim, 2.0)
    params = MpcParams(descent_iters=5, warm_start=True)
    controller = mpc.DistributedController(CostSpec(omega=30.0), params, sim,
                                           n_neighbors=3)
    traj = mpc.control_loop(flock, controller, sim, n_steps=3)
    assert len(controller._plans) == 6
    assert traj.accelerations[0].shape == (6, 2)


def test_control_plan():
    plan = ControlPlan(np.arange(12.0).reshape(3, 2, 2))
    assert plan.horizon == 3
    npt.assert_array_equal(plan.shifted().accelerations[0],
                           plan.accelerations[1])
    npt.assert_array_equal(plan.shifted().accelerations[-1], 0.0)
    assert np.all(np.linalg.norm(plan.project(1.5).accelerations,
                                 axis=-1) <= 1.5 + 1e-12)
    with pytest.raises(ValueError):
        ControlPlan(np.zeros((2, 2)))


@pytest.mark.parametrize('kwargs', [{'horizon': 0}, {'descent_iters': 0},
                                    {'backtrack': 1.0},
                                    {'gradient': 'numeric'}])
def test_mpc_params_validation(kwargs):
    with pytest.raises(ValueError):
        MpcParams(**kwargs)


def _desk_runs(task, n_runs=10, n_agents=10):
    spec = CostSpec(task)
    controller = mpc.CentralizedController(spec, MpcParams(), sim)
    return [mpc.control_loop(
        dynamics.sample_initial_flock(n_agents, seed, sim, spec.d_min),
        controller, sim) for seed in range(n_runs)]


@pytest.mark.slow
def test_desk_flock_converges():
    trajs = _desk_runs('BasicFlocking')
    for d in metrics.lift(trajs, metrics.diameter):
        tail = d[-20:]
        assert np.std(tail) / np.mean(tail) < 0.05
    vc = metrics.lift(trajs, metrics.velocity_convergence)
    assert np.mean([s[-1] for s in vc]) < 0.25 * np.mean([s[0] for s in vc])


@pytest.mark.slow
def test_penalty_keeps_agents_apart():
    for traj in _desk_runs('CollisionAvoidance'):
        assert metrics.collision_events(traj, 2.0).counts['ic'] == 0
