"""Simulated IMU and the complementary tilt filter.

The IMU model stands in for the accelerometer/gyro pair of the physical
robot: the accelerometer channel reports tilt directly with additive
Gaussian noise, the gyro channel reports tilt rate with a constant bias
plus Gaussian noise.  Noise is drawn from a counter-based generator
keyed by (seed, sample index), so a reading depends only on those two
values: replaying a run reproduces it bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .plant import PlantState

DEFAULT_FILTER_WEIGHT = 0.98


@dataclass(frozen=True)
class ImuConfig:
    accel_noise_std: float = 0.0  # [rad]
    gyro_noise_std: float = 0.0  # [rad/s]
    gyro_bias: float = 0.0  # [rad/s]
    seed: int = 0

    def __post_init__(self) -> None:
        if self.accel_noise_std < 0 or self.gyro_noise_std < 0:
            raise ValueError("noise std fields must be non-negative")


@dataclass(frozen=True)
class ImuReading:
    theta_acc: float  # accelerometer-derived tilt [rad]
    omega_gyro: float  # gyro rate [rad/s]
    t: float  # [s]


@dataclass(frozen=True)
class FilterState:
    theta_filt: float = 0.0
    w: float = DEFAULT_FILTER_WEIGHT

    def __post_init__(self) -> None:
        if not 0.0 <= self.w <= 1.0:
            raise ValueError("filter weight must be in [0, 1]")


def _noise_pair(seed: int, index: int) -> tuple[float, float]:
    # Philox is counter-based: keying it with (seed, index) gives an
    # independent, reproducible stream per sample.
    gen = np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, index]))
    n = gen.standard_normal(2)
    return float(n[0]), float(n[1])


def sample_imu(state: PlantState, config: ImuConfig, t: float, index: int) -> ImuReading:
    """One IMU sample at control tick `index` (the noise-stream counter)."""
    if config.accel_noise_std > 0.0 or config.gyro_noise_std > 0.0:
        na, ng = _noise_pair(config.seed, index)
    else:
        na = ng = 0.0
    return ImuReading(
        theta_acc=state.theta_p + config.accel_noise_std * na,
        omega_gyro=state.omega_p + config.gyro_bias + config.gyro_noise_std * ng,
        t=t,
    )


def complementary_filter(prev: FilterState, reading: ImuReading, dt: float) -> FilterState:
    """One filter update: w * (gyro-propagated) + (1 - w) * accelerometer."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    fused = prev.w * (prev.theta_filt + reading.omega_gyro * dt) + (1.0 - prev.w) * reading.theta_acc
    return FilterState(theta_filt=fused, w=prev.w)
