"""Closing trigger and the two net-closing mechanisms."""

import logging
import math
from typing import Optional

import numpy as np

from ..config import CaptureSettings
from ..dynamics.assembly import NetAssembly, frame_from_axis
from ..dynamics.forces import DEGENERATE_LENGTH
from ..dynamics.state import SystemState
from ..errors import ConfigurationError
from ..models import Variant

logger = logging.getLogger(__name__)


def com_separation(state: SystemState, assembly: NetAssembly) -> float:
    """Distance between the net center of mass and the debris center of mass."""
    return float(np.linalg.norm(assembly.net_com(state) - state.positions[assembly.debris_index]))


def closing_trigger(state: SystemState, assembly: NetAssembly, distance: float = 2.5) -> bool:
    """True when the net COM is within ``distance`` of the debris COM (inclusive)."""
    return com_separation(state, assembly) <= distance


class ClosingTrigger:
    """Once-only closing trigger; after firing it stays fired."""

    def __init__(self, assembly: NetAssembly, distance: float = 2.5):
        self.assembly = assembly
        self.distance = distance
        self.time: Optional[float] = None

    @property
    def fired(self) -> bool:
        return self.time is not None

    def update(self, state: SystemState) -> bool:
        """Check the condition; returns True only on the sample where it first holds."""
        if self.fired:
            return False
        if closing_trigger(state, self.assembly, self.distance):
            self.time = state.time
            logger.info(
                f"Closing trigger fired at t={state.time:.3f} s "
                f"(separation {com_separation(state, self.assembly):.3f} m)"
            )
            return True
        return False


class WinchClosing:
    """Closing line threaded through the closing-loop nodes of the 4-MU net.

    The line is a single tension-only cable around the loop. Its rest length
    starts at the loop length at the trigger and shrinks as every MU winch
    reels in at ``reel_rate`` until ``closing_min_length`` is reached. The
    winches stall at ``closing_max_tension``. Neighbouring loop nodes that
    come within ``lock_distance`` lock together for good, held by a
    zero-rest-length spring-damper with the line's stiffness and damping.
    """

    def __init__(
        self,
        assembly: NetAssembly,
        settings: CaptureSettings,
        start_time: float,
        initial_length: float,
    ):
        if assembly.closing_loop is None:
            raise ConfigurationError("winch closing needs a net with a closing loop")
        self.loop = assembly.closing_loop
        self.body_count = assembly.body_count
        self.stiffness = settings.closing_stiffness
        self.damping = settings.closing_damping
        self.max_tension = settings.closing_max_tension
        self.min_length = settings.closing_min_length
        self.lock_distance = settings.lock_distance
        self.reel_speed = settings.reel_rate * assembly.mu_count
        self.start_time = start_time
        self.initial_length = initial_length

    @classmethod
    def start(cls, assembly: NetAssembly, settings: CaptureSettings, state: SystemState) -> "WinchClosing":
        """Begin closing from the current loop shape."""
        closing = cls(assembly, settings, state.time, 0.0)
        closing.initial_length = closing.loop_length(state)
        logger.info(
            f"Winch closing started at t={state.time:.3f} s, loop length {closing.initial_length:.2f} m"
        )
        return closing

    def engage(self, state: SystemState) -> SystemState:
        """Lock every free pair of loop neighbours within the lock distance."""
        if state.time < self.start_time:
            return state
        p = state.positions[self.loop]
        gaps = np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1)
        count = len(self.loop)
        for k in np.flatnonzero(gaps <= self.lock_distance):
            pair = tuple(sorted((int(k), int((k + 1) % count))))
            if pair not in state.loop_locks:
                state = state.with_loop_lock(pair)
                logger.debug(f"Closing-loop slots {pair[0]}-{pair[1]} locked at t={state.time:.3f} s")
        return state

    def rest_length(self, t: float) -> float:
        elapsed = max(0.0, t - self.start_time)
        return max(self.min_length, self.initial_length - self.reel_speed * elapsed)

    def loop_length(self, state: SystemState) -> float:
        p = state.positions[self.loop]
        return float(np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1).sum())

    def _segments(self, state: SystemState) -> tuple[np.ndarray, float, float]:
        p = state.positions[self.loop]
        v = state.velocities[self.loop]
        delta = np.roll(p, -1, axis=0) - p
        length = np.linalg.norm(delta, axis=1)
        safe = np.where(length < DEGENERATE_LENGTH, np.inf, length)
        direction = delta / safe[:, None]
        rate = np.einsum("ij,ij->i", np.roll(v, -1, axis=0) - v, direction)
        return direction, float(length.sum()), float(rate.sum())

    def tension(self, state: SystemState) -> float:
        if state.time < self.start_time:
            return 0.0
        _, total, rate = self._segments(state)
        elongation = total - self.rest_length(state.time)
        return self._line_tension(elongation, rate)

    def _line_tension(self, elongation: float, rate: float) -> float:
        if elongation <= 0:
            return 0.0
        return min(self.max_tension, max(0.0, self.stiffness * elongation + self.damping * rate))

    def __call__(self, state: SystemState) -> np.ndarray:
        forces = np.zeros((self.body_count, 3))
        if state.time < self.start_time:
            return forces
        direction, total, rate = self._segments(state)
        elongation = total - self.rest_length(state.time)
        tension = self._line_tension(elongation, rate)
        if tension > 0.0:
            # Each node is pulled toward both loop neighbours.
            np.add.at(forces, self.loop, tension * (direction - np.roll(direction, 1, axis=0)))
        for a, b in state.loop_locks:
            ra, rb = self.loop[a], self.loop[b]
            pull = self.stiffness * (state.positions[rb] - state.positions[ra])
            pull += self.damping * (state.velocities[rb] - state.velocities[ra])
            forces[ra] += pull
            forces[rb] -= pull
        return forces


def debris_half_extent(state: SystemState, assembly: NetAssembly, axis: np.ndarray) -> float:
    """Half-width of the debris cylinder measured along a unit ``axis``."""
    debris = assembly.debris
    cos = min(1.0, abs(float(np.dot(state.debris_orientation[:, 2], axis))))
    return 0.5 * debris.length * cos + debris.radius * math.sqrt(1.0 - cos * cos)


def docking_closing_positions(
    state: SystemState,
    assembly: NetAssembly,
    settings: CaptureSettings,
    approach_axis: np.ndarray,
) -> np.ndarray:
    """
    Closing ring for the 8-MU net, one row per MU.

    MUs are spread evenly, in perimeter order, on a ring of
    ``docking_ring_radius`` centered on the approach axis and
    ``docking_offset`` beyond the debris COM. Without an offset the ring
    sits ``docking_clearance`` behind the debris surface.
    The ring keeps the angular phase and winding of the MUs' current layout.
    """
    axis = np.asarray(approach_axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    if settings.docking_offset is not None:
        offset = settings.docking_offset
    else:
        offset = debris_half_extent(state, assembly, axis) + settings.docking_clearance
    center = state.positions[assembly.debris_index] + offset * axis

    frame = frame_from_axis(axis)
    e1, e2 = frame[:, 0], frame[:, 1]
    ring = assembly.mu_ring
    rel = state.positions[assembly.mu_indices[ring]] - center
    px, py = rel @ e1, rel @ e2
    winding = 0.5 * float(np.dot(px, np.roll(py, -1)) - np.dot(py, np.roll(px, -1)))
    sign = 1.0 if winding >= 0 else -1.0
    phase = math.atan2(py[0], px[0])

    count = len(ring)
    targets = np.zeros((assembly.mu_count, 3))
    for k, mu in enumerate(ring):
        theta = phase + sign * 2.0 * math.pi * k / count
        targets[mu] = center + settings.docking_ring_radius * (math.cos(theta) * e1 + math.sin(theta) * e2)
    return targets


class DockingClosing:
    """Docking joints between adjacent MUs of the 8-MU net.

    Joints are zero-rest-length spring-dampers between MU pairs that
    neighbour each other around the perimeter. Once engaged a joint is
    never released.
    """

    def __init__(self, assembly: NetAssembly, settings: CaptureSettings):
        self.assembly = assembly
        self.distance = settings.docking_distance
        self.stiffness = settings.docking_stiffness
        self.damping = settings.docking_damping
        ring = assembly.mu_ring
        self.adjacent = [
            tuple(sorted((int(ring[k]), int(ring[(k + 1) % len(ring)])))) for k in range(len(ring))
        ]

    def engage(self, state: SystemState) -> SystemState:
        """Engage joints for every free adjacent pair within the docking distance."""
        mu_rows = self.assembly.mu_indices
        for a, b in self.adjacent:
            if (a, b) in state.docking_joints:
                continue
            gap = np.linalg.norm(state.positions[mu_rows[a]] - state.positions[mu_rows[b]])
            if gap <= self.distance:
                state = state.with_joint((a, b))
                logger.info(f"Docking joint MU{a + 1}-MU{b + 1} engaged at t={state.time:.3f} s")
        return state

    def __call__(self, state: SystemState) -> np.ndarray:
        forces = np.zeros((state.body_count, 3))
        mu_rows = self.assembly.mu_indices
        for a, b in state.docking_joints:
            ra, rb = mu_rows[a], mu_rows[b]
            pull = self.stiffness * (state.positions[rb] - state.positions[ra])
            pull += self.damping * (state.velocities[rb] - state.velocities[ra])
            forces[ra] += pull
            forces[rb] -= pull
        return forces


def locked_pairs(state: SystemState, assembly: NetAssembly, lock_distance: float = 0.05) -> int:
    """
    Number of locked closing pairs.

    For the 4-MU net, neighbouring closing-loop nodes within ``lock_distance``;
    for the 8-MU net, engaged docking joints.
    """
    if assembly.variant == Variant.EIGHT_MU:
        return len(state.docking_joints)
    p = state.positions[assembly.closing_loop]
    gaps = np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1)
    return int((gaps <= lock_distance).sum())
