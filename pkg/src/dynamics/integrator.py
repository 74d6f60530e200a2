"""Fixed-step semi-implicit Euler integration of the tether-net system."""

import logging
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from ..errors import IntegrationDiverged
from ..models import WinchMode
from .assembly import NetAssembly
from .forces import contact_forces, link_forces, tether_force
from .state import SystemState

logger = logging.getLogger(__name__)

# Extra force producers (closing line, docking joints) return one row per body.
ForceContribution = Callable[[SystemState], np.ndarray]


class ForceBreakdown(NamedTuple):
    total: np.ndarray
    debris_torque: np.ndarray
    tensions: np.ndarray
    degenerate: int


def accumulate_forces(
    state: SystemState,
    assembly: NetAssembly,
    controls: np.ndarray,
    extra_forces: Sequence[ForceContribution] = (),
) -> ForceBreakdown:
    """Sum cable, contact, tether, thrust and extra forces on every body."""
    total = np.zeros_like(state.positions)
    points = assembly.point_count

    cable, pair = link_forces(assembly, state)
    total[:points] += cable

    contact = contact_forces(state, assembly.debris, assembly.contact, assembly.point_radii)
    total[:points] += contact.point_forces
    total[assembly.debris_index] += contact.debris_force

    tether = tether_force(state, assembly, state.winch_mode)
    total[assembly.knot_index] += tether.on_knot
    total[assembly.chaser_index] += tether.on_chaser

    total[assembly.mu_indices] += controls

    for contribution in extra_forces:
        total += contribution(state)

    tensions = np.append(pair.tension, tether.tension)
    return ForceBreakdown(total, contact.debris_torque, tensions, int(pair.degenerate.sum()))


def _check_finite(forces: np.ndarray, state: SystemState, detail: str) -> None:
    finite = np.isfinite(forces).all(axis=1) & np.isfinite(state.positions).all(axis=1)
    finite &= np.isfinite(state.velocities).all(axis=1)
    if not finite.all():
        body = int(np.flatnonzero(~finite)[0])
        logger.error(f"Non-finite {detail} on body {body} at t={state.time:.6f} s")
        raise IntegrationDiverged(body, state.time, detail)


def _advance(
    state: SystemState,
    assembly: NetAssembly,
    controls: np.ndarray,
    h: float,
    extra_forces: Sequence[ForceContribution],
) -> SystemState:
    forces = accumulate_forces(state, assembly, controls, extra_forces)
    _check_finite(forces.total, state, "force or state")
    if not (forces.tensions >= 0).all():
        raise IntegrationDiverged(-1, state.time, "negative cable tension")

    velocities = state.velocities + forces.total / assembly.masses[:, None] * h
    positions = state.positions + velocities * h

    # Debris attitude: world-frame Euler equations with the gyroscopic term.
    rot = state.debris_orientation
    inertia_world = rot @ np.diag(assembly.debris.inertia) @ rot.T
    omega = state.debris_angular_velocity
    gyro = np.cross(omega, inertia_world @ omega)
    omega = omega + np.linalg.solve(inertia_world, forces.debris_torque - gyro) * h
    orientation = Rotation.from_rotvec(omega * h).as_matrix() @ rot

    deployed = state.deployed_tether_length
    if state.winch_mode == WinchMode.FREE_SPOOL:
        winch = positions[assembly.chaser_index] + assembly.winch_offset
        deployed = max(deployed, float(np.linalg.norm(positions[assembly.knot_index] - winch)))

    return SystemState(
        time=state.time + h,
        positions=positions,
        velocities=velocities,
        debris_orientation=orientation,
        debris_angular_velocity=omega,
        winch_mode=state.winch_mode,
        deployed_tether_length=deployed,
        docking_joints=state.docking_joints,
        loop_locks=state.loop_locks,
        degenerate_links=state.degenerate_links + forces.degenerate,
    )


def step(
    state: SystemState,
    assembly: NetAssembly,
    controls: np.ndarray,
    dt: float,
    extra_forces: Sequence[ForceContribution] = (),
) -> SystemState:
    """
    Advance the system by ``dt``.

    Semi-implicit Euler (velocity first, then position) over equal
    sub-steps no larger than the assembly's stable step. Thrust is held
    constant over ``dt``.

    Args:
        state: Current state
        assembly: Net assembly
        controls: Thrust on each MU, shape (mu_count, 3) (N)
        dt: Step (s)
        extra_forces: Additional force producers evaluated every sub-step

    Returns:
        State at ``state.time + dt``

    Raises:
        ValueError: If ``dt`` is not positive or controls have the wrong shape
        IntegrationDiverged: If any force or state component becomes non-finite
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    controls = np.asarray(controls, dtype=float)
    if controls.shape != (assembly.mu_count, 3):
        raise ValueError(f"controls must have shape ({assembly.mu_count}, 3), got {controls.shape}")

    substeps = assembly.substeps(dt)
    h = dt / substeps
    start = state.time
    degenerate_before = state.degenerate_links
    for _ in range(substeps):
        state = _advance(state, assembly, controls, h, extra_forces)
    state.time = start + dt

    if state.degenerate_links > degenerate_before:
        logger.debug(
            f"{state.degenerate_links - degenerate_before} degenerate link evaluations "
            f"at t={state.time:.3f} s"
        )
    return state


def simulate(
    state: SystemState,
    assembly: NetAssembly,
    dt: float,
    steps: int,
    controls: Optional[Callable[[SystemState], np.ndarray]] = None,
    extra_forces: Sequence[ForceContribution] = (),
) -> SystemState:
    """Run ``steps`` integration steps with an optional control callback."""
    zero = np.zeros((assembly.mu_count, 3))
    for _ in range(steps):
        thrust = controls(state) if controls is not None else zero
        state = step(state, assembly, thrust, dt, extra_forces)
    return state


def linear_momentum(state: SystemState, assembly: NetAssembly, bodies: Optional[np.ndarray] = None) -> np.ndarray:
    """Total linear momentum of the selected bodies (all by default)."""
    idx = np.arange(state.body_count) if bodies is None else bodies
    return (assembly.masses[idx, None] * state.velocities[idx]).sum(axis=0)


def mechanical_energy(state: SystemState, assembly: NetAssembly) -> float:
    """Kinetic energy of every body plus elastic energy of stretched links and tether."""
    kinetic = 0.5 * float((assembly.masses * (state.velocities ** 2).sum(axis=1)).sum())
    rot = state.debris_orientation
    inertia_world = rot @ np.diag(assembly.debris.inertia) @ rot.T
    omega = state.debris_angular_velocity
    kinetic += 0.5 * float(omega @ inertia_world @ omega)

    pos = state.positions
    length = np.linalg.norm(pos[assembly.link_b] - pos[assembly.link_a], axis=1)
    stretch = np.maximum(0.0, length - assembly.link_rest)
    elastic = 0.5 * float((assembly.link_stiffness * stretch ** 2).sum())

    if state.winch_mode == WinchMode.LOCKED:
        tether_len = np.linalg.norm(pos[assembly.knot_index] - assembly.winch_point(state))
        tether_stretch = max(0.0, tether_len - state.deployed_tether_length)
        elastic += 0.5 * assembly.tether_stiffness * tether_stretch ** 2
    return kinetic + elastic
