"""User mobility and inertial sensing.

The arrival angle of each path follows a first-order autoregressive angular
velocity integrated per slot:

    a_n     = (1 - rho) * a_avg + rho * a_{n-1} + w_n,   w_n ~ N(0, drive_var)
    theta_n = theta_{n-1} + dt * a_n

with theta reflected at +-1 to stay a valid sine-angle; a reflection also
negates the velocity so the motion stays continuous instead of pinning to the
boundary. For rho close to 1 the velocity is a slowly wandering process with
stationary variance drive_var / (1 - rho^2) around a_avg.

The inertial block per cycle holds angular-velocity samples (first finite
difference of the angle over dt) and angular-acceleration samples (second
finite difference over dt^2), decimated within each cycle and corrupted by
additive Gaussian noise scaled to the per-channel signal power of the episode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DEFAULT_RHO",
    "DEFAULT_DRIVE_VAR",
    "MobilityParams",
    "Trajectory",
    "generate_trajectory",
    "synthesize_imu",
]

DEFAULT_RHO = 0.9999
# Chosen so the stationary velocity variance drive_var / (1 - rho^2) is 0.2.
DEFAULT_DRIVE_VAR = 0.2 * (1.0 - DEFAULT_RHO**2)


@dataclass(frozen=True)
class MobilityParams:
    """Angular mobility model parameters (sine-angle units per second)."""

    a_avg: float
    rho: float = DEFAULT_RHO
    drive_var: float = DEFAULT_DRIVE_VAR
    dt: float = 125e-6

    def __post_init__(self):
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"rho must lie in [0, 1), got {self.rho}")
        if self.drive_var < 0:
            raise ValueError("drive_var must be nonnegative")
        if not self.dt > 0:
            raise ValueError("dt must be positive")


@dataclass
class Trajectory:
    """Per-slot angle and angular-velocity tracks for each path."""

    aoa: np.ndarray  # (num_paths, num_slots)
    velocity: np.ndarray  # (num_paths, num_slots)
    dt: float

    def __post_init__(self):
        self.aoa = np.asarray(self.aoa, dtype=np.float64)
        self.velocity = np.asarray(self.velocity, dtype=np.float64)
        if self.aoa.shape != self.velocity.shape or self.aoa.ndim != 2:
            raise ValueError("aoa and velocity must share a (paths, slots) shape")

    @property
    def num_paths(self) -> int:
        return self.aoa.shape[0]

    @property
    def num_slots(self) -> int:
        return self.aoa.shape[1]


def generate_trajectory(
    params: MobilityParams,
    num_paths: int,
    num_slots: int,
    rng: np.random.Generator,
    init_aoa: np.ndarray | float | None = None,
    init_velocity: np.ndarray | float | None = None,
) -> Trajectory:
    """Simulate the reflected AR-velocity angle process for each path.

    Paths evolve independently from shared parameters. When not given,
    initial angles are drawn uniform on [-0.8, 0.8] and initial velocities
    from N(a_avg, 0.2), matching the stationary velocity spread.
    """
    if num_paths < 1 or num_slots < 1:
        raise ValueError("num_paths and num_slots must be >= 1")
    if init_aoa is None:
        init_aoa = rng.uniform(-0.8, 0.8, size=num_paths)
    init_aoa = np.broadcast_to(np.asarray(init_aoa, dtype=np.float64), (num_paths,))
    if np.any(np.abs(init_aoa) > 1.0):
        raise ValueError("initial aoa must lie in [-1, 1]")
    if init_velocity is None:
        init_velocity = rng.normal(params.a_avg, np.sqrt(0.2), size=num_paths)
    init_velocity = np.broadcast_to(np.asarray(init_velocity, dtype=np.float64), (num_paths,))

    drive = rng.normal(0.0, np.sqrt(params.drive_var), size=(num_paths, num_slots))
    aoa = np.empty((num_paths, num_slots))
    velocity = np.empty((num_paths, num_slots))
    pull = (1.0 - params.rho) * params.a_avg
    rho, dt = params.rho, params.dt

    for l in range(num_paths):
        th = float(init_aoa[l])
        v = float(init_velocity[l])
        w = drive[l]
        a_row = aoa[l]
        v_row = velocity[l]
        for n in range(num_slots):
            v = pull + rho * v + w[n]
            th += dt * v
            while th > 1.0 or th < -1.0:
                th = 2.0 - th if th > 1.0 else -2.0 - th
                v = -v
            a_row[n] = th
            v_row[n] = v
    return Trajectory(aoa, velocity, params.dt)


def synthesize_imu(
    traj: Trajectory,
    samples_per_cycle: int,
    cycle_slots: int,
    snr_db: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Decimated, noisy velocity/acceleration blocks for each tracking cycle.

    Returns shape (num_paths, num_cycles, 2*samples_per_cycle): the first
    samples_per_cycle entries of a block are angular-velocity samples, the
    rest angular-acceleration samples. Sample slots are end-aligned inside
    each cycle (the last sample sits on the cycle's final slot), so the block
    for cycle c is fully available when cycle c+1 starts.

    The additive noise variance per channel is the decimated channel's mean
    square over the whole episode times 10^(-snr_db/10); referencing episode
    power keeps momentarily silent stretches from being noise-free. Channels
    that are identically zero stay noiseless.
    """
    if samples_per_cycle < 1:
        raise ValueError("samples_per_cycle must be >= 1")
    if cycle_slots % samples_per_cycle != 0:
        raise ValueError(
            f"cycle_slots ({cycle_slots}) must be divisible by samples_per_cycle "
            f"({samples_per_cycle})"
        )
    stride = cycle_slots // samples_per_cycle
    num_cycles = traj.num_slots // cycle_slots
    if num_cycles < 1:
        raise ValueError("trajectory shorter than one cycle")

    dt = traj.dt
    vel = np.empty_like(traj.aoa)
    vel[:, 1:] = np.diff(traj.aoa, axis=1) / dt
    vel[:, 0] = vel[:, 1]
    acc = np.empty_like(vel)
    acc[:, 1:] = np.diff(vel, axis=1) / dt
    acc[:, 0] = acc[:, 1]

    base = np.arange(num_cycles)[:, None] * cycle_slots
    idx = base + (np.arange(samples_per_cycle)[None, :] + 1) * stride - 1
    v_s = vel[:, idx]  # (paths, cycles, K)
    a_s = acc[:, idx]

    factor = 10.0 ** (-snr_db / 10.0)
    if factor > 0:
        for samples in (v_s, a_s):
            power = np.mean(samples**2, axis=(1, 2))  # per path
            std = np.sqrt(power * factor)
            samples += rng.standard_normal(samples.shape) * std[:, None, None]
    return np.concatenate([v_s, a_s], axis=-1)
