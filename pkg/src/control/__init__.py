"""Maneuverable-unit guidance and control."""

from .deployment import ControlPhase, DeploymentController, deployment_controller
from .pid import (
    Measurement,
    MUControllerState,
    desired_position,
    fuel_increment,
    pid_thrust,
    sense,
)

__all__ = [
    "ControlPhase",
    "DeploymentController",
    "MUControllerState",
    "Measurement",
    "deployment_controller",
    "desired_position",
    "fuel_increment",
    "pid_thrust",
    "sense",
]
