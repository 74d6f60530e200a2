"""Trajectory, sensing, PID thrust and fuel accounting for one MU."""

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ..config import ControllerSettings
from ..errors import ConfigurationError

logger = logging.getLogger(__name__)


class Measurement(NamedTuple):
    position: np.ndarray
    velocity: np.ndarray


@dataclass
class MUControllerState:
    """Internal state of one MU's PID controller."""

    integral: np.ndarray = field(default_factory=lambda: np.zeros(3))
    last_command: np.ndarray = field(default_factory=lambda: np.zeros(3))
    last_measurement: Measurement = field(
        default_factory=lambda: Measurement(np.zeros(3), np.zeros(3))
    )
    fuel_used: float = 0.0
    active: bool = True
    sensor_faults: int = 0

    def reset_integral(self) -> None:
        self.integral = np.zeros(3)


def desired_position(
    t: float,
    r0: np.ndarray,
    r_final: np.ndarray,
    t_final: float,
) -> np.ndarray:
    """
    Straight-line reference from ``r0`` to ``r_final`` over ``t_final``.

    Holds ``r_final`` once ``t`` passes ``t_final``.

    Raises:
        ConfigurationError: If ``t_final`` is not positive
    """
    if not t_final > 0:
        raise ConfigurationError(f"t_final must be positive, got {t_final}")
    r0 = np.asarray(r0, dtype=float)
    r_final = np.asarray(r_final, dtype=float)
    if t >= t_final:
        return r_final.copy()
    fraction = max(t, 0.0) / t_final
    return r0 + fraction * (r_final - r0)


def sense(
    true_state: tuple[np.ndarray, np.ndarray],
    rng: np.random.Generator,
    config: ControllerSettings,
) -> Measurement:
    """Noisy position and velocity; each axis gets Gaussian noise with sigma = bound / 3."""
    position, velocity = (np.asarray(v, dtype=float) for v in true_state)
    noise = rng.standard_normal(6)
    return Measurement(
        position + noise[:3] * (config.pos_noise_3sigma / 3.0),
        velocity + noise[3:] * (config.vel_noise_3sigma / 3.0),
    )


def fuel_increment(saturated_thrust: np.ndarray, dt: float, isp: float, g0: float) -> float:
    """Propellant mass for a thrust held over ``dt``: |F| dt / (g0 Isp)."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return float(np.linalg.norm(saturated_thrust)) * dt / (g0 * isp)


def pid_thrust(
    controller: MUControllerState,
    measured: Measurement,
    desired: np.ndarray,
    dt_command: float,
    config: ControllerSettings,
) -> np.ndarray:
    """
    One command tick of the MU position controller.

    Per axis ``u = kp (r_d - r) - kd v + ki I``, using the integral
    accumulated before this tick, then clamped to the per-axis thrust
    limit. The integral then accumulates ``(r_d - r) dt_command`` and fuel
    is charged for the saturated command held over the tick.

    A non-finite measurement produces zero thrust and counts a sensor fault.
    """
    if not controller.active:
        controller.last_command = np.zeros(3)
        return controller.last_command

    position = np.asarray(measured.position, dtype=float)
    velocity = np.asarray(measured.velocity, dtype=float)
    if not (np.isfinite(position).all() and np.isfinite(velocity).all()):
        controller.sensor_faults += 1
        controller.last_command = np.zeros(3)
        logger.warning(f"Sensor fault: non-finite measurement {position}, {velocity}")
        return controller.last_command

    error = np.asarray(desired, dtype=float) - position
    command = config.kp * error - config.kd * velocity + config.ki * controller.integral
    limit = config.thrust_limit_per_axis
    saturated = np.clip(command, -limit, limit)

    controller.integral = controller.integral + error * dt_command
    controller.last_command = saturated
    controller.last_measurement = Measurement(position, velocity)
    controller.fuel_used += fuel_increment(saturated, dt_command, config.isp, config.g0)
    return saturated
