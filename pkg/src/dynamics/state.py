"""Time-stamped state of every body in the simulation."""

from dataclasses import dataclass, field, replace

import numpy as np

from ..models import WinchMode


@dataclass
class SystemState:
    """Positions, velocities and mechanism state at one instant.

    Rows of ``positions`` and ``velocities`` follow the body order of the
    assembly: net nodes, central knot, MUs, chaser, debris.
    """

    time: float
    positions: np.ndarray
    velocities: np.ndarray
    debris_orientation: np.ndarray
    debris_angular_velocity: np.ndarray
    winch_mode: WinchMode = WinchMode.FREE_SPOOL
    deployed_tether_length: float = 0.0
    docking_joints: frozenset = field(default_factory=frozenset)
    loop_locks: frozenset = field(default_factory=frozenset)
    degenerate_links: int = 0

    def __post_init__(self):
        if self.positions.shape != self.velocities.shape:
            raise ValueError("positions and velocities must have the same shape")
        if self.deployed_tether_length < 0:
            raise ValueError("deployed tether length must be non-negative")

    def copy(self) -> "SystemState":
        return replace(
            self,
            positions=self.positions.copy(),
            velocities=self.velocities.copy(),
            debris_orientation=self.debris_orientation.copy(),
            debris_angular_velocity=self.debris_angular_velocity.copy(),
        )

    @property
    def body_count(self) -> int:
        return self.positions.shape[0]

    def lock_winch(self) -> "SystemState":
        """Lock the winch at the currently deployed tether length."""
        return replace(self, winch_mode=WinchMode.LOCKED)

    def with_joint(self, pair: tuple[int, int]) -> "SystemState":
        a, b = sorted(pair)
        return replace(self, docking_joints=self.docking_joints | {(a, b)})

    def with_loop_lock(self, pair: tuple[int, int]) -> "SystemState":
        """Lock two closing-loop slots together; slots index the closing loop, not body rows."""
        a, b = sorted(pair)
        return replace(self, loop_locks=self.loop_locks | {(a, b)})
