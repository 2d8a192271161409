#!/usr/bin/env python
# -*- coding: utf-8 -*-
from __future__ import (absolute_import, division, print_function,
                        unicode_literals)

import logging
import time

import numpy as np
import astropy.units as u
import lmfit

from flockforge.dynamics import DivergenceError, FlockState, clamp_vector
from flockforge.metrics import (diameter, lift, series_difference,
                                velocity_convergence)
from flockforge.mpc import control_loop
from flockforge.trajectory import Trajectory

"""
This module contains the quadrotor plant: the rigid-body equations of motion,
the rotor mixing, a fourth-order Runge-Kutta integrator and the PID loop that
turns a commanded 3D acceleration into thrust and body moments. It also runs
a flock of quadrotors under a point-model controller and compares it with the
point model itself.

The state of a vehicle is the 12-vector
``[x, vx, y, vy, z, vz, phi, dphi, theta, dtheta, psi, dpsi]``; a flock is an
``(n, 12)`` array. The input is ``[u1, u2, u3, u4]``.
"""

logger = logging.getLogger(__name__)

X, VX, Y, VY, Z, VZ, PHI, DPHI, THETA, DTHETA, PSI, DPSI = range(12)
POSITION = [X, Y, Z]
VELOCITY = [VX, VY, VZ]
ANGLES = [PHI, THETA, PSI]
RATES = [DPHI, DTHETA, DPSI]


def _si(value, unit):
    if isinstance(value, u.Quantity):
        return float(value.to(unit).value)
    return float(value)


# Physical parameters of the vehicle
class QuadParams(object):
    """
    Physical parameters of a quadrotor. Every argument may be a plain number
    in SI units or an ``astropy.units.Quantity``.

    Parameters
    ----------
    m : ``float`` or ``astropy.units.Quantity``, optional
        Mass. Default is 0.650 kg.

    Ixx, Iyy, Izz : ``float`` or ``astropy.units.Quantity``, optional
        Moments of inertia. Defaults are 7.5e-3, 7.5e-3 and 1.3e-2 kg m2.

    Jr : ``float`` or ``astropy.units.Quantity``, optional
        Rotor inertia. Default is 6e-5 kg m2.

    L : ``float`` or ``astropy.units.Quantity``, optional
        Arm length. Default is 0.23 m.

    b : ``float`` or ``astropy.units.Quantity``, optional
        Thrust factor. Default is 3.13e-5 N s2.

    d : ``float`` or ``astropy.units.Quantity``, optional
        Drag factor. Default is 7.5e-7 N m s2.

    g : ``float`` or ``astropy.units.Quantity``, optional
        Gravity. Default is 9.81 m / s2.
    """
    def __init__(self, m=0.650, Ixx=7.5e-3, Iyy=7.5e-3, Izz=1.3e-2,
                 Jr=6e-5, L=0.23, b=3.13e-5, d=7.5e-7, g=9.81):
        inertia = u.kg * u.m ** 2
        self.m = _si(m, u.kg)
        self.Ixx = _si(Ixx, inertia)
        self.Iyy = _si(Iyy, inertia)
        self.Izz = _si(Izz, inertia)
        self.Jr = _si(Jr, inertia)
        self.L = _si(L, u.m)
        self.b = _si(b, u.N * u.s ** 2)
        self.d = _si(d, u.N * u.m * u.s ** 2)
        self.g = _si(g, u.m / u.s ** 2)
        for key, value in self.to_dict().items():
            if not value > 0:
                raise ValueError('{} must be positive.'.format(key))

    @property
    def hover_thrust(self):
        return self.m * self.g

    def to_dict(self):
        return {'m': self.m, 'Ixx': self.Ixx, 'Iyy': self.Iyy,
                'Izz': self.Izz, 'Jr': self.Jr, 'L': self.L, 'b': self.b,
                'd': self.d, 'g': self.g}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# Gains and limits of the acceleration tracker
class AttitudeGains(object):
    """
    Gains of the attitude PID loops (scaled by the axis inertia, so that
    they act as angular accelerations) and the limits of the tracker. None
    of the defaults is a published value.

    Parameters
    ----------
    kp, ki, kd : ``float``, optional
        Roll and pitch gains. Defaults are 100, 2 and 18.

    kp_yaw, ki_yaw, kd_yaw : ``float``, optional
        Yaw gains. Defaults are 25, 1 and 10.

    i_limit : ``float``, optional
        Bound on each integrated angle error. Default is 0.2 rad s.

    max_tilt : ``float``, optional
        Bound on the roll and pitch setpoints. Default is 0.5 rad.

    omega_max : ``float``, optional
        Rotor speed that bounds the total thrust at ``4 b omega_max**2``.
        Default is 450 rad / s.
    """
    def __init__(self, kp=100.0, ki=2.0, kd=18.0, kp_yaw=25.0, ki_yaw=1.0,
                 kd_yaw=10.0, i_limit=0.2, max_tilt=0.5, omega_max=450.0):
        self.kp = float(kp)
        self.ki = float(ki)
        self.kd = float(kd)
        self.kp_yaw = float(kp_yaw)
        self.ki_yaw = float(ki_yaw)
        self.kd_yaw = float(kd_yaw)
        self.i_limit = float(i_limit)
        self.max_tilt = float(max_tilt)
        self.omega_max = float(omega_max)
        if min(self.kp, self.ki, self.kd, self.kp_yaw, self.ki_yaw,
               self.kd_yaw, self.i_limit) < 0:
            raise ValueError('Gains and limits must be non-negative.')
        if not 0 < self.max_tilt < np.pi / 2:
            raise ValueError('max_tilt must be in (0, pi / 2).')
        if not self.omega_max > 0:
            raise ValueError('omega_max must be positive.')

    def max_thrust(self, params):
        return 4.0 * params.b * self.omega_max ** 2

    def to_dict(self):
        return {'kp': self.kp, 'ki': self.ki, 'kd': self.kd,
                'kp_yaw': self.kp_yaw, 'ki_yaw': self.ki_yaw,
                'kd_yaw': self.kd_yaw,
                'i_limit': self.i_limit, 'max_tilt': self.max_tilt,
                'omega_max': self.omega_max}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# A single vehicle
class QuadState(object):
    """
    Named view of one 12-component state vector. Angles are wrapped to
    (-pi, pi].
    """
    def __init__(self, vector=None):
        vector = np.zeros(12) if vector is None else \
            np.array(vector, dtype=float)
        if vector.shape != (12,):
            raise ValueError('A quadrotor state has 12 components.')
        vector[ANGLES] = wrap_angle(vector[ANGLES])
        self.vector = vector

    @classmethod
    def from_point(cls, p, v):
        vector = np.zeros(12)
        vector[POSITION] = p
        vector[VELOCITY] = v
        return cls(vector)

    @property
    def position(self):
        return self.vector[POSITION]

    @property
    def velocity(self):
        return self.vector[VELOCITY]

    @property
    def angles(self):
        return self.vector[ANGLES]

    @property
    def rates(self):
        return self.vector[RATES]


# Thrust and moments
class QuadInput(object):
    """
    Total thrust ``u1``, moments ``u2`` to ``u4`` and the total rotor speed
    ``omega_r`` of the gyroscopic terms.
    """
    def __init__(self, u1, u2=0.0, u3=0.0, u4=0.0, omega_r=0.0):
        if u1 < 0:
            raise ValueError('u1 must be non-negative.')
        self.u1 = float(u1)
        self.u2 = float(u2)
        self.u3 = float(u3)
        self.u4 = float(u4)
        self.omega_r = float(omega_r)

    @property
    def vector(self):
        return np.array([self.u1, self.u2, self.u3, self.u4])


def wrap_angle(a):
    """Wrap angles to (-pi, pi]; angles already in range are untouched."""
    a = np.asarray(a, dtype=float)
    wrapped = np.pi - np.mod(np.pi - a, 2.0 * np.pi)
    return np.where((a > np.pi) | (a <= -np.pi), wrapped, a)


def _inputs(inp):
    if isinstance(inp, QuadInput):
        return inp.vector, inp.omega_r
    return np.asarray(inp, dtype=float), 0.0


def quad_derivative(s, inp, params, omega_r=None):
    """
    Time derivative of the state.

    Parameters
    ----------
    s : ``QuadState`` or array_like
        One state vector or an ``(n, 12)`` array.

    inp : ``QuadInput`` or array_like
        ``[u1, u2, u3, u4]``, or an ``(n, 4)`` array.

    params : ``QuadParams``

    omega_r : ``float``, array_like or ``None``, optional
        Total rotor speed; taken from ``inp`` (0 for plain arrays) if
        ``None``.

    Returns
    -------
    ds : ``numpy.ndarray``
        Same shape as ``s``.
    """
    s = s.vector if isinstance(s, QuadState) else np.asarray(s, dtype=float)
    uvec, inp_omega = _inputs(inp)
    omega_r = inp_omega if omega_r is None else omega_r
    u1, u2, u3, u4 = np.moveaxis(np.broadcast_to(uvec, s.shape[:-1] + (4,)),
                                 -1, 0)
    phi, dphi = s[..., PHI], s[..., DPHI]
    theta, dtheta = s[..., THETA], s[..., DTHETA]
    psi, dpsi = s[..., PSI], s[..., DPSI]
    cphi, sphi = np.cos(phi), np.sin(phi)
    cth, sth = np.cos(theta), np.sin(theta)
    cpsi, spsi = np.cos(psi), np.sin(psi)
    p = params

    ds = np.empty_like(s)
    ds[..., X] = s[..., VX]
    ds[..., Y] = s[..., VY]
    ds[..., Z] = s[..., VZ]
    ds[..., VX] = (cphi * sth * cpsi + sphi * spsi) * u1 / p.m
    ds[..., VY] = (cphi * sth * spsi - sphi * cpsi) * u1 / p.m
    # exactly zero at level hover
    ds[..., VZ] = (cphi * cth * u1 - p.m * p.g) / p.m
    ds[..., PHI] = dphi
    ds[..., THETA] = dtheta
    ds[..., PSI] = dpsi
    ds[..., DPHI] = (dtheta * dpsi * (p.Iyy - p.Izz) -
                     p.Jr * dtheta * omega_r + u2) / p.Ixx
    ds[..., DTHETA] = (dpsi * dphi * (p.Izz - p.Ixx) +
                       p.Jr * dphi * omega_r + u3) / p.Iyy
    ds[..., DPSI] = (dphi * dtheta * (p.Ixx - p.Iyy) + u4) / p.Izz
    return ds


def rotor_mixing(params, thrusts=None, speeds=None):
    """
    Thrust and moments from the four rotors, given either their thrusts
    ``F_i`` or their speeds ``Omega_i`` (``F_i = b Omega_i**2`` and
    ``Q_i = d Omega_i**2``).

    ``u1 = sum F``, ``u2 = L (F4 - F2)``, ``u3 = L (F3 - F1)``,
    ``u4 = -Q1 + Q2 - Q3 + Q4`` and ``omega_r = sum Omega``.

    Returns
    -------
    inp : ``QuadInput``
    """
    if (thrusts is None) == (speeds is None):
        raise ValueError('Give either thrusts or speeds.')
    if speeds is not None:
        speeds = np.asarray(speeds, dtype=float)
        if np.any(speeds < 0):
            raise ValueError('Rotor speeds must be non-negative.')
        F = params.b * speeds ** 2
        Q = params.d * speeds ** 2
        omega_r = float(np.sum(speeds))
    else:
        F = np.asarray(thrusts, dtype=float)
        if np.any(F < 0):
            raise ValueError('Rotor thrusts must be non-negative.')
        Q = params.d / params.b * F
        omega_r = float(np.sum(np.sqrt(F / params.b)))
    return QuadInput(np.sum(F), params.L * (F[3] - F[1]),
                     params.L * (F[2] - F[0]), -Q[0] + Q[1] - Q[2] + Q[3],
                     omega_r)


def inverse_rotor_mixing(inp, params):
    """
    Rotor speeds that produce ``[u1, u2, u3, u4]``; squared speeds below
    zero are clamped to zero.

    Parameters
    ----------
    inp : ``QuadInput`` or array_like
        One input or an ``(n, 4)`` array.

    Returns
    -------
    speeds : ``numpy.ndarray``
        Shape ``(4,)`` or ``(n, 4)``.
    """
    uvec = _inputs(inp)[0]
    k = params.d / params.b
    L = params.L
    mixing = np.array([[1.0, 1.0, 1.0, 1.0],
                       [0.0, -L, 0.0, L],
                       [-L, 0.0, L, 0.0],
                       [-k, k, -k, k]])
    thrusts = np.linalg.solve(mixing, np.atleast_2d(uvec).T).T
    speeds = np.sqrt(np.maximum(thrusts, 0.0) / params.b)
    return speeds.reshape(np.shape(uvec))


def integrate_quad(s, inp, dt_inner, params, omega_r=None):
    """
    One fourth-order Runge-Kutta step with the input held.

    Raises
    ------
    DivergenceError
        If the new state is not finite.
    """
    if not dt_inner > 0:
        raise ValueError('dt_inner must be positive.')
    s = s.vector if isinstance(s, QuadState) else np.asarray(s, dtype=float)
    k1 = quad_derivative(s, inp, params, omega_r)
    k2 = quad_derivative(s + 0.5 * dt_inner * k1, inp, params, omega_r)
    k3 = quad_derivative(s + 0.5 * dt_inner * k2, inp, params, omega_r)
    k4 = quad_derivative(s + dt_inner * k3, inp, params, omega_r)
    new = s + dt_inner / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(new)):
        raise DivergenceError('Quadrotor state is not finite.')
    new[..., ANGLES] = wrap_angle(new[..., ANGLES])
    return new


def attitude_setpoint(s, a_cmd, gains, params):
    """
    Thrust and roll / pitch setpoints that point the thrust along
    ``a_cmd + g z``.

    Returns
    -------
    u1, phi_des, theta_des : ``numpy.ndarray``
    """
    s = np.atleast_2d(s)
    a_des = np.atleast_2d(a_cmd).astype(float).copy()
    a_des[:, 2] += params.g
    norm = np.linalg.norm(a_des, axis=1)
    unit = a_des / np.where(norm > 0, norm, 1.0)[:, None]
    unit[norm == 0] = [0.0, 0.0, 1.0]
    psi = s[:, PSI]
    # thrust direction in the yaw-aligned frame
    forward = unit[:, 0] * np.cos(psi) + unit[:, 1] * np.sin(psi)
    lateral = unit[:, 0] * np.sin(psi) - unit[:, 1] * np.cos(psi)
    theta_des = np.arctan2(forward, unit[:, 2])
    phi_des = np.arcsin(np.clip(lateral, -1.0, 1.0))
    theta_des = np.clip(theta_des, -gains.max_tilt, gains.max_tilt)
    phi_des = np.clip(phi_des, -gains.max_tilt, gains.max_tilt)
    u1 = np.clip(params.m * norm, 0.0, gains.max_thrust(params))
    return u1, phi_des, theta_des


def pid_acceleration_tracker(s, a_cmd, gains, params, integral=None,
                             dt=None):
    """
    Thrust and moments that track a commanded acceleration.

    The thrust magnitude and the roll / pitch setpoints come from
    ``attitude_setpoint``; the yaw setpoint is 0. Each attitude axis is held
    by a PID loop whose derivative acts on the measured rate.

    Parameters
    ----------
    s : array_like
        One state or an ``(n, 12)`` array.

    a_cmd : array_like
        Commanded accelerations, ``(3,)`` or ``(n, 3)``.

    gains : ``AttitudeGains``

    params : ``QuadParams``

    integral : ``numpy.ndarray`` or ``None``, optional
        Integrated roll, pitch and yaw errors, shape ``(n, 3)``; updated in
        place when ``dt`` is given.

    dt : ``float`` or ``None``, optional
        Duration over which the input will be held.

    Returns
    -------
    inp : ``numpy.ndarray``
        ``[u1, u2, u3, u4]``, shape ``(4,)`` or ``(n, 4)``.
    """
    single = np.ndim(s) == 1
    s = np.atleast_2d(np.asarray(s, dtype=float))
    u1, phi_des, theta_des = attitude_setpoint(s, a_cmd, gains, params)
    err = np.stack([phi_des - s[:, PHI], theta_des - s[:, THETA],
                    wrap_angle(-s[:, PSI])], axis=1)
    if integral is None:
        integral = np.zeros_like(err)
    elif dt is not None:
        integral += err * dt
        np.clip(integral, -gains.i_limit, gains.i_limit, out=integral)
    torque = gains.kp * err[:, :2] + gains.ki * integral[:, :2] - \
        gains.kd * s[:, [DPHI, DTHETA]]
    u2 = params.Ixx * torque[:, 0]
    u3 = params.Iyy * torque[:, 1]
    u4 = params.Izz * (gains.kp_yaw * err[:, 2] +
                       gains.ki_yaw * integral[:, 2] -
                       gains.kd_yaw * s[:, DPSI])
    inp = np.stack([u1, u2, u3, u4], axis=1)
    return inp[0] if single else inp


def _flock_of(quads, time_step=0):
    return FlockState(quads[:, POSITION], quads[:, VELOCITY],
                      time_step=time_step)


def quads_from_flock(flock):
    """Level, non-rotating vehicles at the positions and velocities of a 3D
    flock."""
    if flock.dim != 3:
        raise ValueError('Quadrotor flocks are three-dimensional.')
    quads = np.zeros((flock.n, 12))
    quads[:, POSITION] = flock.positions
    quads[:, VELOCITY] = flock.velocities
    return quads


def quad_flock_loop(initial, controller, sim, params=None, gains=None,
                    meta=None, n_steps=None, inner_steps=10,
                    gyroscopic=False, verbose=False):
    """
    Run a point-model controller on a flock of quadrotors.

    At each control step the positions and velocities are read off the
    vehicles and handed to ``controller``; the clamped accelerations are
    tracked by the PID loop over ``eta * inner_steps`` Runge-Kutta steps of
    ``dt / inner_steps``.

    Parameters
    ----------
    initial : ``FlockState`` or array_like
        A 3D flock (its vehicles start level) or an ``(n, 12)`` array.

    controller : callable
        ``controller(flock) -> (n, 3)`` accelerations.

    sim : ``SimParams``
        A 3D simulation.

    params : ``QuadParams`` or ``None``, optional

    gains : ``AttitudeGains`` or ``None``, optional

    meta : ``dict`` or ``None``, optional

    n_steps : ``int`` or ``None``, optional
        ``sim.n_control_steps`` if ``None``.

    inner_steps : ``int``, optional
        Inner steps per time step. Default is 10.

    gyroscopic : ``bool``, optional
        If ``True``, recover the rotor speeds from the inputs and include
        the gyroscopic terms. Default is ``False``.

    verbose : ``bool``, optional

    Returns
    -------
    traj : ``Trajectory``
        Point-model states with the full vehicle states attached.
    """
    params = QuadParams() if params is None else params
    gains = AttitudeGains() if gains is None else gains
    n_steps = sim.n_control_steps if n_steps is None else n_steps
    if sim.dim != 3:
        raise ValueError('Quadrotor flocks need a 3D simulation.')
    quads = quads_from_flock(initial) if isinstance(initial, FlockState) \
        else np.array(initial, dtype=float)
    dt_inner = sim.dt / inner_steps
    integral = np.zeros((len(quads), 3))
    level = logging.INFO if verbose else logging.DEBUG

    traj = Trajectory(meta=meta)
    flock = _flock_of(quads)
    traj.append(flock, quad_state=quads)
    elapsed = 0.0
    for k in range(n_steps):
        start = time.perf_counter()
        acc = controller(flock)
        elapsed += time.perf_counter() - start
        acc = clamp_vector(acc, sim.a_max)
        for _ in range(sim.eta * inner_steps):
            inp = pid_acceleration_tracker(quads, acc, gains, params,
                                           integral, dt_inner)
            omega_r = 0.0
            if gyroscopic:
                omega_r = inverse_rotor_mixing(inp, params).sum(axis=1)
            quads = integrate_quad(quads, inp, dt_inner, params, omega_r)
        flock = _flock_of(quads, flock.time_step + sim.eta)
        traj.append(flock, acc, quads)
        if (k + 1) % 50 == 0:
            logger.log(level, 'Quadrotor control step %d/%d done', k + 1,
                       n_steps)
    traj.timing = {'controller': getattr(controller, 'name',
                                         type(controller).__name__),
                   'mean_seconds_per_decision':
                   elapsed / max(n_steps * len(quads), 1)}
    return traj


def _step_residual(pars, params, step, t_final, dt):
    v = pars.valuesdict()
    gains = AttitudeGains(kp=v['kp'], ki=v['ki'], kd=v['kd'])
    s = np.zeros(12)
    integral = np.zeros((1, 3))
    # lateral command whose roll setpoint is -step
    a_cmd = np.array([[0.0, params.g * np.tan(step), 0.0]])
    residual = []
    for _ in range(int(round(t_final / dt))):
        inp = pid_acceleration_tracker(s[None, :], a_cmd, gains, params,
                                       integral, dt)
        s = integrate_quad(s, inp[0], dt, params, 0.0)
        residual.append(s[PHI] + step)
    return np.array(residual)


def tune_attitude_gains(params=None, guess=None, step=0.2, t_final=1.0,
                        dt=0.01, minimize_mode='Nelder'):
    """
    Tune the roll / pitch PID gains on the step response of the roll loop
    with ``lmfit.minimize``.

    Parameters
    ----------
    params : ``QuadParams`` or ``None``, optional

    guess : ``AttitudeGains`` or ``None``, optional
        Starting gains.

    step : ``float``, optional
        Size of the roll step, in rad. Default is 0.2.

    t_final : ``float``, optional
        Length of the response, in s. Default is 1.

    dt : ``float``, optional
        Integration step. Default is 0.01.

    minimize_mode : ``str``, optional
        ``lmfit`` method. Default is ``'Nelder'``.

    Returns
    -------
    gains : ``AttitudeGains``

    result : ``lmfit.MinimizerResult``
    """
    params = QuadParams() if params is None else params
    guess = AttitudeGains() if guess is None else guess
    pars = lmfit.Parameters()
    pars.add('kp', guess.kp, min=1.0, max=1000.0)
    pars.add('ki', guess.ki, min=0.0, max=50.0)
    pars.add('kd', guess.kd, min=0.0, max=100.0)
    result = lmfit.minimize(_step_residual, pars,
                            args=(params, step, t_final, dt),
                            method=minimize_mode)
    v = result.params.valuesdict()
    gains = AttitudeGains(**dict(guess.to_dict(), kp=v['kp'], ki=v['ki'],
                                 kd=v['kd']))
    logger.info('Tuned attitude gains: kp=%.4g ki=%.4g kd=%.4g', gains.kp,
                gains.ki, gains.kd)
    return gains, result


def quad_compare(initials, dnc, cmpc, sim, params=None, gains=None,
                 n_steps=None, meta=None, inner_steps=10, gyroscopic=False):
    """
    Run both controllers on the point model and on quadrotors from the same
    initial states, and compute the difference curves (point minus quad) of
    the mean diameter and velocity convergence.

    Parameters
    ----------
    initials : sequence of ``FlockState``
        3D initial states.

    dnc, cmpc : callable or ``None``
        Controller factories, ``factory() -> controller``; a fresh controller
        is built for every run. Either may be ``None`` to skip it.

    sim : ``SimParams``

    inner_steps, gyroscopic
        Passed to ``quad_flock_loop``.

    Returns
    -------
    runs : ``dict``
        Trajectory lists under ``'dnc-point'``, ``'dnc-quad'``,
        ``'cmpc-point'`` and ``'cmpc-quad'``.

    curves : ``dict``
        ``{'dnc': (delta_d, delta_vc), 'cmpc': (delta_d, delta_vc)}``.
    """
    runs, curves = {}, {}
    for name, factory in (('dnc', dnc), ('cmpc', cmpc)):
        if factory is None:
            continue
        point, quad = [], []
        for k, flock in enumerate(initials):
            run_meta = dict(meta or {}, index=k, controller=name)
            point.append(control_loop(flock, factory(), sim,
                                      meta=dict(run_meta, plant='point'),
                                      n_steps=n_steps))
            quad.append(quad_flock_loop(flock, factory(), sim, params,
                                        gains, dict(run_meta, plant='quad'),
                                        n_steps, inner_steps, gyroscopic))
        runs[name + '-point'] = point
        runs[name + '-quad'] = quad
        curves[name] = (series_difference(lift(point, diameter),
                                          lift(quad, diameter)),
                        series_difference(lift(point, velocity_convergence),
                                          lift(quad, velocity_convergence)))
    return runs, curves
