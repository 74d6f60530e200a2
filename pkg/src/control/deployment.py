"""Per-MU deployment control: 20 Hz sensing, PID commands and zero-order hold."""

import logging
import math
from enum import Enum
from typing import Optional

import numpy as np

from ..config import ControllerSettings
from ..dynamics.assembly import NetAssembly
from ..dynamics.state import SystemState
from .pid import Measurement, MUControllerState, desired_position, pid_thrust, sense

logger = logging.getLogger(__name__)

# Tolerance for landing exactly on a tick despite floating-point time.
TICK_EPS = 1e-9


class ControlPhase(str, Enum):
    DEPLOY = "deploy"
    OFF = "off"
    DOCKING = "docking"


class DeploymentController:
    """Control callback for :func:`src.dynamics.integrator.step`.

    Measurements refresh at the sensor rate and thrust commands at the
    command rate; between ticks the last command is held.
    """

    def __init__(
        self,
        assembly: NetAssembly,
        aiming_points: np.ndarray,
        config: ControllerSettings,
        initial_state: SystemState,
        rng: np.random.Generator,
        record: bool = False,
    ):
        aiming_points = np.asarray(aiming_points, dtype=float)
        if aiming_points.shape != (assembly.mu_count, 3):
            raise ValueError(
                f"expected {assembly.mu_count} aiming points, got shape {aiming_points.shape}"
            )
        self.assembly = assembly
        self.config = config
        self.rng = rng
        self.record = record

        self.phase = ControlPhase.DEPLOY
        self.origins = initial_state.positions[assembly.mu_indices].copy()
        self.targets = aiming_points.copy()
        self.reference_time = config.activation_time
        self.duration = config.t_final

        self.controllers = [MUControllerState() for _ in range(assembly.mu_count)]
        self.measurements = [
            Measurement(p.copy(), np.zeros(3)) for p in self.origins
        ]
        self.thrust = np.zeros((assembly.mu_count, 3))
        self.dt_command = 1.0 / config.command_rate
        self.dt_sensor = 1.0 / config.sensor_rate
        self._command_tick = -1
        self._sensor_tick = -1

        self.control_log: list[dict] = []
        self.tracking_log: list[tuple[float, list[float]]] = []

    def __call__(self, state: SystemState) -> np.ndarray:
        elapsed = state.time - self.config.activation_time
        if elapsed < -TICK_EPS or self.phase == ControlPhase.OFF:
            return np.zeros_like(self.thrust)

        sensor_tick = math.floor(elapsed / self.dt_sensor + TICK_EPS)
        if sensor_tick > self._sensor_tick:
            self._sensor_tick = sensor_tick
            self._sample(state)

        command_tick = math.floor(elapsed / self.dt_command + TICK_EPS)
        if command_tick > self._command_tick:
            self._command_tick = command_tick
            self._command(state.time)

        return self.thrust.copy()

    def desired(self, t: float) -> np.ndarray:
        """Reference position of every MU at time ``t``."""
        local = t - self.reference_time
        return np.array([
            desired_position(local, r0, rf, self.duration)
            for r0, rf in zip(self.origins, self.targets)
        ])

    def tracking_errors(self, state: SystemState) -> np.ndarray:
        """L2 distance between each MU's reference and true position."""
        true = state.positions[self.assembly.mu_indices]
        return np.linalg.norm(self.desired(state.time) - true, axis=1)

    def _sample(self, state: SystemState) -> None:
        idx = self.assembly.mu_indices
        self.measurements = [
            sense((state.positions[i], state.velocities[i]), self.rng, self.config) for i in idx
        ]
        self.tracking_log.append((state.time, self.tracking_errors(state).tolist()))

    def _command(self, t: float) -> None:
        desired = self.desired(t)
        for m, controller in enumerate(self.controllers):
            measured = self.measurements[m]
            self.thrust[m] = pid_thrust(controller, measured, desired[m], self.dt_command, self.config)
            if self.record:
                self.control_log.append({
                    "time": t,
                    "mu": m,
                    "phase": self.phase.value,
                    "desired": desired[m].tolist(),
                    "measured_position": np.asarray(measured.position).tolist(),
                    "measured_velocity": np.asarray(measured.velocity).tolist(),
                    "thrust": self.thrust[m].tolist(),
                    "fuel": controller.fuel_used,
                })

    def deactivate(self, t: float) -> None:
        """Switch all thrusters off (winch-closing net after the trigger)."""
        self.phase = ControlPhase.OFF
        for controller in self.controllers:
            controller.active = False
            controller.last_command = np.zeros(3)
        self.thrust[:] = 0.0
        logger.info(f"Thrusters deactivated at t={t:.3f} s")

    def retarget(
        self,
        state: SystemState,
        closing_positions: np.ndarray,
        duration: float,
    ) -> None:
        """Fly every MU from where it is now to its closing position over ``duration``."""
        self.phase = ControlPhase.DOCKING
        self.origins = state.positions[self.assembly.mu_indices].copy()
        self.targets = np.asarray(closing_positions, dtype=float).copy()
        self.reference_time = state.time
        self.duration = duration
        if self.config.reset_integral_on_retarget:
            for controller in self.controllers:
                controller.reset_integral()
        logger.info(f"MUs retargeted to closing positions at t={state.time:.3f} s")

    @property
    def fuel_per_mu(self) -> list[float]:
        return [c.fuel_used for c in self.controllers]

    @property
    def sensor_faults(self) -> int:
        return sum(c.sensor_faults for c in self.controllers)


def deployment_controller(
    assembly: NetAssembly,
    aiming_points: np.ndarray,
    config: ControllerSettings,
    initial_state: SystemState,
    rng: Optional[np.random.Generator] = None,
    record: bool = False,
) -> DeploymentController:
    """Build the control callback that drives the MUs toward their aiming points."""
    return DeploymentController(
        assembly,
        aiming_points,
        config,
        initial_state,
        rng if rng is not None else np.random.default_rng(),
        record=record,
    )
