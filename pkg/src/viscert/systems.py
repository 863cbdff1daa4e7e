"""Black-box benchmark simulators and their failure oracles.

All simulators integrate with explicit Euler at a fixed step and accept a
batch of initial conditions, so an oracle call on ``(n, d)`` thetas runs one
vectorized rollout.  Randomness comes only from the generator passed in.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import HyperRect, Polytope2D, convex_hull

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    state_names: tuple[str, ...] = ()

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        x = np.asarray(self.states, dtype=float)
        if t.ndim != 1 or len(t) < 2 or x.shape[0] != len(t):
            raise ValueError("trajectory needs >= 2 samples and one state row per time")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("times must start at 0 and increase")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", x)

    def column(self, name: str) -> np.ndarray:
        return self.states[:, self.state_names.index(name)]


def _time_grid(horizon: float, dt: float) -> np.ndarray:
    steps = int(round(horizon / dt))
    if steps < 1 or abs(steps * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError(f"horizon {horizon} is not a whole number of steps of {dt}")
    return np.arange(steps + 1) * dt


def _batch(theta, dim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(theta, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != dim:
        raise ValueError(f"expected {dim}-D initial conditions, got shape {np.shape(theta)}")
    return x, single


# ---------------------------------------------------------------- ACC

ACC_STATES = ("gap", "v_leader", "v_follower")


@dataclass(frozen=True)
class AccParams:
    """Follower brakes with ``decel + drag * v^2``; leader holds its speed."""

    decel: float = 3.0
    drag: float = 0.01
    follower_speed: float = 10.0
    dt: float = 0.1
    horizon: float = 10.0
    decel_noise: float = 0.25
    drag_noise: float = 0.25
    velocity_noise_low: float = 0.0
    velocity_noise_high: float = 0.2
    noise: bool = True
    gap_max: float = 10.0
    leader_max: float = 10.0


def _acc_rollout(theta: np.ndarray, rng: np.random.Generator | None, p: AccParams, noise: bool):
    gap = theta[:, 0].copy()
    vl = theta[:, 1].copy()
    if np.any(gap < 0) or np.any(vl < 0):
        raise ValueError("ACC initial gap and leader velocity must be nonnegative")
    n = len(gap)
    times = _time_grid(p.horizon, p.dt)
    vf = np.full(n, p.follower_speed)
    gaps = np.empty((len(times), n))
    vfs = np.empty((len(times), n))
    gaps[0], vfs[0] = gap, vf
    for k in range(1, len(times)):
        if noise:
            u = rng.random((3, n))
            a = p.decel + p.decel_noise * (2.0 * u[0] - 1.0)
            c = p.drag * (1.0 + p.drag_noise * (2.0 * u[1] - 1.0))
            eta = p.velocity_noise_low + (p.velocity_noise_high - p.velocity_noise_low) * u[2]
        else:
            a, c, eta = p.decel, p.drag, 0.0
        gap = gap + (vl - vf) * p.dt
        vf = np.maximum(vf + (-a - c * vf * vf + eta) * p.dt, 0.0)
        gaps[k], vfs[k] = gap, vf
    if not (np.all(np.isfinite(gaps)) and np.all(np.isfinite(vfs))):
        raise SimulationError("ACC state became non-finite")
    return times, gaps, vl, vfs


def simulate_acc(theta, rng: np.random.Generator | None = None, params: AccParams = AccParams(),
                 noise: bool | None = None) -> Trajectory:
    """One ACC rollout from ``theta = (gap0, v_leader0)``."""
    noise = params.noise if noise is None else noise
    if noise and rng is None:
        raise ValueError("a noisy simulation needs an rng")
    x, _ = _batch(theta, 2)
    times, gaps, vl, vfs = _acc_rollout(x[:1], rng, params, noise)
    states = np.column_stack([gaps[:, 0], np.full(len(times), vl[0]), vfs[:, 0]])
    return Trajectory(times, states, ACC_STATES)


def acc_collision(theta, rng=None, params: AccParams = AccParams(), noise: bool | None = None):
    """1 where the gap reaches zero at any sampled time (including t = 0)."""
    noise = params.noise if noise is None else noise
    x, single = _batch(theta, 2)
    _, gaps, _, _ = _acc_rollout(x, rng, params, noise)
    loss = np.any(gaps <= 0.0, axis=0).astype(np.int8)
    return int(loss[0]) if single else loss


def acc_closing_distance(v_leader, params: AccParams = AccParams()) -> np.ndarray:
    """Largest gap the noise-free follower closes before matching the leader.

    Under the noise-free model ``gap(t) = gap0 - s(t)`` with ``s`` independent
    of ``gap0``, so a collision happens iff ``gap0 <= max_t s(t)``.
    """
    vl = np.atleast_1d(np.asarray(v_leader, dtype=float))
    theta = np.column_stack([np.zeros_like(vl), vl])
    _, gaps, _, _ = _acc_rollout(theta, None, params, noise=False)
    return np.maximum(-gaps.min(axis=0), 0.0)


def acc_candidate_set(params: AccParams = AccParams(), resolution: int = 257) -> Polytope2D:
    """Noise-free safe region in (gap0, v_leader), as a convex polygon.

    The boundary is the closing-distance curve sampled at ``resolution``
    leader speeds, closed off by the box ``[0, gap_max] x [0, leader_max]``.
    """
    gmax, vmax = params.gap_max, params.leader_max
    v = np.linspace(0.0, vmax, resolution)
    d = acc_closing_distance(v, params)
    pts = [(gmax, vmax)]
    if d[0] < gmax:
        pts.append((gmax, 0.0))
    else:
        lo, hi = 0.0, vmax
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if acc_closing_distance(mid, params)[0] >= gmax else (lo, mid)
        pts.append((gmax, hi))
        pts.append((float(acc_closing_distance(hi, params)[0]), hi))
    keep = d < gmax
    pts.extend(zip(d[keep], v[keep]))
    return convex_hull(np.array(pts))


# ---------------------------------------------------------------- quadrotor

QUAD_STATES = ("x", "y", "h", "vx", "vy", "vh", "roll", "pitch", "yaw", "p", "q", "r")
H_INDEX, VH_INDEX = 2, 5


@dataclass(frozen=True)
class QuadrotorParams:
    """Rigid-body quadrotor with a cascaded PD controller regulating hover.

    Gains give roughly one-second altitude settling.
    """

    mass: float = 0.5
    gravity: float = 9.81
    ixx: float = 0.0023
    iyy: float = 0.0023
    izz: float = 0.004
    hover_height: float = 1.0
    kp_h: float = 5.0
    kd_h: float = 3.5
    kp_xy: float = 1.0
    kd_xy: float = 1.5
    kp_att: float = 64.0
    kd_att: float = 16.0
    kp_yaw: float = 16.0
    kd_yaw: float = 8.0
    max_tilt: float = 0.3
    max_thrust_ratio: float = 2.0
    dt: float = 0.01
    horizon: float = 5.0
    rate_noise: float = 0.1
    noise: bool = True


def quadrotor_candidate_box(angle_halfwidth: float = 0.05, other_halfwidth: float = 0.4) -> HyperRect:
    """Offsets for angles/rates in +-0.05 and all other states in +-0.4."""
    half = np.full(12, other_halfwidth)
    half[6:] = angle_halfwidth
    return HyperRect(-half, half)


def _quad_rollout(theta: np.ndarray, rng, p: QuadrotorParams, noise: bool, keep_states: bool):
    n = len(theta)
    s = theta.copy()
    s[:, H_INDEX] += p.hover_height
    times = _time_grid(p.horizon, p.dt)
    hs = np.empty((len(times), n))
    hs[0] = s[:, H_INDEX]
    states = np.empty((len(times), n, 12)) if keep_states else None
    if keep_states:
        states[0] = s
    g, m = p.gravity, p.mass
    tmax = p.max_thrust_ratio * m * g
    with np.errstate(all="ignore"):
        for k in range(1, len(times)):
            x, y, h, vx, vy, vh, phi, th, psi, wp, wq, wr = s.T
            ax_d = -p.kp_xy * x - p.kd_xy * vx
            ay_d = -p.kp_xy * y - p.kd_xy * vy
            sp, cp = np.sin(psi), np.cos(psi)
            phi_d = np.clip((ax_d * sp - ay_d * cp) / g, -p.max_tilt, p.max_tilt)
            th_d = np.clip((ax_d * cp + ay_d * sp) / g, -p.max_tilt, p.max_tilt)
            cphi, sphi, cth, sth = np.cos(phi), np.sin(phi), np.cos(th), np.sin(th)
            tilt = np.maximum(cphi * cth, 0.2)
            thrust = m * (g + p.kp_h * (p.hover_height - h) - p.kd_h * vh) / tilt
            thrust = np.clip(thrust, 0.0, tmax)
            tau_p = p.ixx * (p.kp_att * (phi_d - phi) - p.kd_att * wp)
            tau_q = p.iyy * (p.kp_att * (th_d - th) - p.kd_att * wq)
            tau_r = p.izz * (p.kp_yaw * (0.0 - psi) - p.kd_yaw * wr)
            acc_x = thrust / m * (cphi * sth * cp + sphi * sp)
            acc_y = thrust / m * (cphi * sth * sp - sphi * cp)
            acc_h = thrust / m * cphi * cth - g
            dp = (tau_p + (p.iyy - p.izz) * wq * wr) / p.ixx
            dq = (tau_q + (p.izz - p.ixx) * wp * wr) / p.iyy
            dr = (tau_r + (p.ixx - p.iyy) * wp * wq) / p.izz
            if noise:
                d = p.rate_noise * (2.0 * rng.random((3, n)) - 1.0)
                dp, dq, dr = dp + d[0], dq + d[1], dr + d[2]
            deriv = np.column_stack([vx, vy, vh, acc_x, acc_y, acc_h, wp, wq, wr, dp, dq, dr])
            s = s + p.dt * deriv
            hs[k] = s[:, H_INDEX]
            if keep_states:
                states[k] = s
    return times, hs, states


def simulate_quadrotor(theta, rng: np.random.Generator | None = None,
                       params: QuadrotorParams = QuadrotorParams(), noise: bool | None = None) -> Trajectory:
    """One rollout from a 12-vector of offsets around hover at ``hover_height``."""
    noise = params.noise if noise is None else noise
    if noise and rng is None:
        raise ValueError("a noisy simulation needs an rng")
    x, _ = _batch(theta, 12)
    times, _, states = _quad_rollout(x[:1], rng, params, noise, keep_states=True)
    return Trajectory(times, states[:, 0, :], QUAD_STATES)


def stl_violation(times: np.ndarray, h: np.ndarray, horizon: float = 5.0,
                  lower: float = 0.92, upper: float = 1.5, settle: float = 1.0) -> np.ndarray:
    """Monitor ``F_[0,settle] G(h >= lower) and G(h <= upper)`` on samples.

    ``h`` has shape ``(T,)`` or ``(T, n)``.  Returns 1 for a violation.  A
    non-finite height is a violation.
    """
    times = np.asarray(times, dtype=float)
    h = np.asarray(h, dtype=float)
    if times[-1] < horizon - 1e-9:
        raise ValueError(f"trajectory ends at {times[-1]} s, before the {horizon} s horizon")
    h2 = h.reshape(len(times), -1)
    in_window = times <= horizon + 1e-9
    hw = h2[in_window]
    finite = np.all(np.isfinite(hw), axis=0)
    below_ok = np.nan_to_num(hw, nan=-np.inf) >= lower
    # suffix_ok[i] is True iff every sample from i onward stays above ``lower``
    suffix_ok = np.flip(np.logical_and.accumulate(np.flip(below_ok, axis=0), axis=0), axis=0)
    starts = times[in_window] <= settle + 1e-9
    eventually = np.any(suffix_ok[starts], axis=0)
    always = np.all(np.nan_to_num(hw, nan=np.inf) <= upper, axis=0)
    loss = (~(eventually & always & finite)).astype(np.int8)
    return loss if h.ndim == 2 else loss.reshape(())


def stl_monitor_quadrotor(traj: Trajectory) -> int:
    return int(stl_violation(traj.times, traj.column("h")))


def quadrotor_failure(theta, rng=None, params: QuadrotorParams = QuadrotorParams(),
                      noise: bool | None = None):
    noise = params.noise if noise is None else noise
    x, single = _batch(theta, 12)
    times, hs, _ = _quad_rollout(x, rng, params, noise, keep_states=False)
    blown = ~np.all(np.isfinite(hs), axis=0)
    if np.any(blown):
        log.warning("%d quadrotor rollouts diverged; counted as failures", int(blown.sum()))
    loss = stl_violation(times, hs, horizon=params.horizon)
    return int(loss[0]) if single else loss


# ---------------------------------------------------------------- synthetic

SYNTHETIC_THRESHOLD = 0.05


def synthetic_oracle(theta) -> int | np.ndarray:
    """1 iff the first coordinate lies in [0, 0.05]."""
    t = np.asarray(theta, dtype=float)
    first = t if t.ndim == 0 else t[..., 0]
    out = ((first >= 0.0) & (first <= SYNTHETIC_THRESHOLD)).astype(np.int8)
    return int(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- oracles

@dataclass(frozen=True)
class SyntheticOracle:
    dim: int = 2
    name = "synthetic"

    def __call__(self, thetas, rng=None) -> np.ndarray:
        x, _ = _batch(thetas, self.dim)
        return synthetic_oracle(x)


@dataclass(frozen=True)
class AccOracle:
    params: AccParams = AccParams()
    dim = 2
    name = "acc"

    def __call__(self, thetas, rng=None) -> np.ndarray:
        return acc_collision(np.atleast_2d(thetas), rng, self.params)


@dataclass(frozen=True)
class QuadrotorOracle:
    params: QuadrotorParams = QuadrotorParams()
    dim = 12
    name = "quadrotor"

    def __call__(self, thetas, rng=None) -> np.ndarray:
        return quadrotor_failure(np.atleast_2d(thetas), rng, self.params)
