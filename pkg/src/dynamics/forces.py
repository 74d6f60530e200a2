"""Cable, contact and tether forces."""

import logging
from typing import NamedTuple

import numpy as np

from ..models import WinchMode
from .assembly import ContactParams, Link, NetAssembly, RigidBodySpec
from .state import SystemState

logger = logging.getLogger(__name__)

DEGENERATE_LENGTH = 1e-9


class CableForce(NamedTuple):
    """Forces on the two endpoints of one link."""
    on_a: np.ndarray
    on_b: np.ndarray
    tension: float
    degenerate: bool


class PairForces(NamedTuple):
    """Vectorized tension-only forces; ``on_a`` acts on the first endpoints."""
    on_a: np.ndarray
    tension: np.ndarray
    degenerate: np.ndarray


class ContactResult(NamedTuple):
    point_forces: np.ndarray
    debris_force: np.ndarray
    debris_torque: np.ndarray
    in_contact: np.ndarray


class TetherForce(NamedTuple):
    on_knot: np.ndarray
    on_chaser: np.ndarray
    tension: float


def tension_only_forces(
    pa: np.ndarray,
    pb: np.ndarray,
    va: np.ndarray,
    vb: np.ndarray,
    rest: np.ndarray,
    stiffness: np.ndarray,
    damping: np.ndarray,
) -> PairForces:
    """
    Spring-damper forces that cannot push.

    Tension is ``max(0, k (len - l0) + c d(len)/dt)`` while the element is
    stretched and exactly zero otherwise. The force on the first endpoint
    points toward the second; the second receives its negation.
    """
    delta = pb - pa
    length = np.linalg.norm(delta, axis=-1)
    degenerate = length < DEGENERATE_LENGTH
    safe = np.where(degenerate, 1.0, length)
    direction = delta / safe[..., None]
    elongation = length - rest
    rate = np.einsum("...i,...i->...", vb - va, direction)
    tension = np.where(
        (elongation > 0) & ~degenerate,
        np.maximum(0.0, stiffness * elongation + damping * rate),
        0.0,
    )
    return PairForces(tension[..., None] * direction, tension, degenerate)


def cable_force(link: Link, state: SystemState) -> CableForce:
    """Forces a single net thread applies to its endpoints."""
    a, b = link.node_a, link.node_b
    pair = tension_only_forces(
        state.positions[a],
        state.positions[b],
        state.velocities[a],
        state.velocities[b],
        np.float64(link.rest_length),
        np.float64(link.stiffness),
        np.float64(link.damping),
    )
    on_a = np.asarray(pair.on_a, dtype=float)
    return CableForce(on_a, -on_a, float(pair.tension), bool(pair.degenerate))


def link_forces(assembly: NetAssembly, state: SystemState) -> tuple[np.ndarray, PairForces]:
    """Net forces on the point bodies from every link of the assembly."""
    pos = state.positions
    vel = state.velocities
    a, b = assembly.link_a, assembly.link_b
    pair = tension_only_forces(
        pos[a], pos[b], vel[a], vel[b],
        assembly.link_rest, assembly.link_stiffness, assembly.link_damping,
    )
    forces = assembly.incidence @ pair.on_a
    return forces, pair


def _cylinder_contacts(
    points: np.ndarray,
    radii: np.ndarray,
    center: np.ndarray,
    axis: np.ndarray,
    radius: float,
    length: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Penetration depth and outward normal of points against a capped cylinder."""
    d = points - center
    z = d @ axis
    radial = d - z[:, None] * axis
    rho = np.linalg.norm(radial, axis=1)

    side_depth = radius + radii - rho
    cap_depth = 0.5 * length + radii - np.abs(z)
    depth = np.minimum(side_depth, cap_depth)

    use_side = (side_depth <= cap_depth) & (rho > DEGENERATE_LENGTH)
    side_normal = radial / np.where(rho > DEGENERATE_LENGTH, rho, 1.0)[:, None]
    cap_normal = np.where(z >= 0, 1.0, -1.0)[:, None] * axis
    normal = np.where(use_side[:, None], side_normal, cap_normal)
    return depth, normal


def contact_forces(
    state: SystemState,
    debris: RigidBodySpec,
    params: ContactParams,
    point_radii: np.ndarray,
) -> ContactResult:
    """
    Penalty contact between point bodies and the debris cylinder.

    The first ``len(point_radii)`` rows of the state are the point bodies;
    the debris is the last row. Normal force is
    ``(k_n * depth + c_n * max(0, approach speed)) * n``; tangential force is
    regularized Coulomb friction ``-mu |F_n| tanh(|v_t| / v_reg) * t``.
    """
    count = len(point_radii)
    points = state.positions[:count]
    point_vel = state.velocities[:count]
    center = state.positions[-1]
    axis = state.debris_orientation[:, 2]

    depth, normal = _cylinder_contacts(
        points, point_radii, center, axis, debris.radius, debris.length
    )
    in_contact = depth > 0

    forces = np.zeros_like(points)
    torque = np.zeros(3)
    if not in_contact.any():
        return ContactResult(forces, np.zeros(3), torque, in_contact)

    idx = np.flatnonzero(in_contact)
    n = normal[idx]
    lever = points[idx] - center
    surface_vel = state.velocities[-1] + np.cross(state.debris_angular_velocity, lever)
    v_rel = point_vel[idx] - surface_vel
    v_n = np.einsum("ij,ij->i", v_rel, n)

    f_n = params.normal_stiffness * depth[idx] + params.normal_damping * np.maximum(0.0, -v_n)
    v_t = v_rel - v_n[:, None] * n
    speed_t = np.linalg.norm(v_t, axis=1)
    t_hat = v_t / np.where(speed_t > 0, speed_t, 1.0)[:, None]
    f_t = -params.friction_coefficient * np.abs(f_n) * np.tanh(
        speed_t / params.friction_regularization_velocity
    )

    applied = f_n[:, None] * n + f_t[:, None] * t_hat
    forces[idx] = applied
    debris_force = -applied.sum(axis=0)
    torque = np.cross(lever, -applied).sum(axis=0)
    return ContactResult(forces, debris_force, torque, in_contact)


def tether_force(
    state: SystemState,
    assembly: NetAssembly,
    winch_mode: WinchMode,
) -> TetherForce:
    """
    Main tether between the central knot and the chaser winch.

    A free-spooling winch pays out line without tension. A locked winch
    holds the length deployed at locking as the rest length of a
    tension-only spring-damper.
    """
    zero = np.zeros(3)
    if winch_mode == WinchMode.FREE_SPOOL:
        return TetherForce(zero, zero.copy(), 0.0)

    knot = assembly.knot_index
    chaser = assembly.chaser_index
    pair = tension_only_forces(
        state.positions[knot],
        assembly.winch_point(state),
        state.velocities[knot],
        state.velocities[chaser],
        np.float64(state.deployed_tether_length),
        np.float64(assembly.tether_stiffness),
        np.float64(assembly.tether_damping),
    )
    on_knot = np.asarray(pair.on_a, dtype=float)
    return TetherForce(on_knot, -on_knot, float(pair.tension))
