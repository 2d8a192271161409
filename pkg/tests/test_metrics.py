#!/usr/bin/env python
# -*- coding: utf-8 -*-

from __future__ import (absolute_import, division, print_function,
                        unicode_literals)

import json

import numpy as np
import numpy.testing as npt
import pytest
from astropy.table import Table

from flockforge import metrics
from flockforge.dynamics import AgentState, FlockState, Obstacle
from flockforge.trajectory import Trajectory


def _traj(position_list, velocities=None, predator=None, obstacles=None):
    states = []
    for k, p in enumerate(position_list):
        p = np.asarray(p, dtype=float)
        v = np.zeros_like(p) if velocities is None else velocities[k]
        states.append(FlockState(p, v, predator, obstacles, 3 * k))
    return Trajectory(states=states, accelerations=[
        np.zeros_like(np.asarray(position_list[0], dtype=float))] *
        (len(states) - 1))


def test_diameter():
    p = [[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]]
    assert metrics.diameter(p) == pytest.approx(5.0)
    assert metrics.diameter(FlockState(p, np.zeros((3, 2)))) == \
        pytest.approx(5.0)
    with pytest.raises(ValueError):
        metrics.diameter([[1.0, 1.0]])


def test_velocity_convergence():
    assert metrics.velocity_convergence([[1.0, 2.0], [1.0, 2.0]]) == 0.0
    # mean (0, 0); squared deviations 1 and 1
    assert metrics.velocity_convergence([[1.0, 0.0], [-1.0, 0.0]]) == \
        pytest.approx(1.0)


def test_lift():
    traj = _traj([[[0.0, 0.0], [1.0, 0.0]], [[0.0, 0.0], [2.0, 0.0]]])
    series = metrics.lift([traj, traj], metrics.diameter)
    assert len(series) == 2
    npt.assert_allclose(series[0], [1.0, 2.0])


def test_inter_agent_collisions():
    states = [[[0.0, 0.0], [1.0, 0.0], [1.5, 0.0]],
              [[0.0, 0.0], [5.0, 0.0], [10.0, 0.0]],
              [[0.0, 0.0], [1.0, 0.0], [10.0, 0.0]]]
    events = metrics.collision_events(_traj(states), 2.0)
    npt.assert_array_equal(events.per_state['ic'], [3, 0, 1])
    assert events.counts['ic'] == 4
    npt.assert_array_equal(events.flags['ic'], [True, False, True])
    assert events.pairs == {'ic': 3, 'oc': 0, 'pc': 0}


def test_obstacle_and_predator_collisions():
    obstacles = [Obstacle([10.0, 0.0], 2.0)]
    predator = AgentState([0.0, 3.0], [0.0, 0.0])
    traj = _traj([[[0.0, 0.0], [7.0, 0.0]]], predator=predator,
                 obstacles=obstacles)
    events = metrics.collision_events(traj, 2.0, d_min_pred=4.0)
    assert events.counts == {'ic': 0, 'oc': 1, 'pc': 1}
    assert events.pairs['oc'] == 2 and events.pairs['pc'] == 2
    # no predator check without a predator clearance
    assert metrics.collision_events(traj, 2.0).counts['pc'] == 0


def test_converged_stats_use_final_state():
    runs = [metrics.MetricSeries([9.0, 2.0], [5.0, 1.0], None),
            metrics.MetricSeries([9.0, 4.0], [5.0, 3.0], None)]
    stats = metrics.converged_stats(runs)
    assert stats['diameter_mean'] == pytest.approx(3.0)
    # population standard deviation
    assert stats['diameter_sd'] == pytest.approx(1.0)
    assert stats['vc_mean'] == pytest.approx(2.0)
    with pytest.raises(ValueError):
        metrics.converged_stats([])


def test_series_difference():
    delta = metrics.series_difference([[1.0, 2.0, 3.0], [3.0, 4.0, 5.0]],
                                      [[0.0, 0.0, 0.0, 7.0]])
    npt.assert_allclose(delta, [2.0, 3.0, 4.0])
    with pytest.raises(ValueError):
        metrics.series_difference([], [[1.0]])


def _runs():
    close = [[0.0, 0.0], [1.0, 0.0], [1.5, 0.0]]
    apart = [[0.0, 0.0], [5.0, 0.0], [10.0, 0.0]]
    return [_traj([close, apart]), _traj([apart, apart])]


def test_evaluate_count_modes():
    report = metrics.evaluate(_runs(), 2.0, controller='cmpc',
                              task='CollisionAvoidance')
    assert report.n_runs == 2
    assert report.counts['ic'] == 3
    # one violating state out of four
    assert report.rates['ic'] == pytest.approx(0.25)
    assert report.pair_rates['ic'] == pytest.approx(3 / 12.0)
    assert report.stats['diameter_mean'] == pytest.approx(10.0)
    states = metrics.evaluate(_runs(), 2.0, count_mode='states')
    assert states.counts['ic'] == 1
    with pytest.raises(ValueError):
        metrics.evaluate(_runs(), 2.0, count_mode='pairs')


def test_report_excludes_timing():
    report = metrics.evaluate(_runs(), 2.0, timing=0.25)
    assert 'seconds_per_decision' not in report.to_dict()
    assert report.to_dict(with_timing=True)['seconds_per_decision'] == 0.25


def test_written_outputs(tmp_path):
    runs = _runs()
    report = metrics.evaluate(runs, 2.0, controller='dmpc', task='demo')
    prefix = str(tmp_path / 'report')
    metrics.write_report(report, prefix)
    table = Table.read(prefix + '.csv', format='ascii.csv')
    assert len(table) == 1
    assert table['controller'][0] == 'dmpc'
    assert table['ic_count'][0] == 3
    with open(prefix + '.json') as f:
        assert json.load(f) == report.to_dict()

    series = [metrics.metric_series(t, 2.0) for t in runs]
    table = metrics.write_series(series, str(tmp_path / 'series.csv'))
    npt.assert_allclose(table['diameter_mean'], [5.75, 10.0])
    assert list(table['step']) == [0, 1]

    table = metrics.write_difference([1.0, 2.0, 3.0], [0.5, 0.5],
                                     str(tmp_path / 'delta.csv'))
    again = Table.read(str(tmp_path / 'delta.csv'), format='ascii.csv')
    assert again.colnames == ['step', 'delta_diameter', 'delta_vc']
    assert len(again) == 2


def test_metric_series_table():
    series = metrics.metric_series(_runs()[0], 2.0)
    table = series.to_table()
    assert table.colnames == ['step', 'diameter', 'vc', 'ic', 'oc', 'pc']
    assert list(table['ic']) == [3, 0]
