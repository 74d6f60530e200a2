"""Net topology, body specifications and the stowed initial state."""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from scipy.sparse import csr_array

from ..config import CaptureSettings, ContactSettings, NetSettings
from ..errors import ConfigurationError
from ..models import Variant, WinchMode
from .state import SystemState

logger = logging.getLogger(__name__)

# Feature-loop node count of the 23x23 reference net.
REFERENCE_FEATURE_NODES = 165
REFERENCE_NET_NODES = 529


class BodyKind(str, Enum):
    CHASER = "chaser"
    DEBRIS = "debris"
    MU = "mu"


@dataclass(frozen=True)
class RigidBodySpec:
    """Mass and geometry of a rigid body.

    Boxes are described by ``half_extents``; the debris is a capped
    cylinder described by ``radius`` and ``length`` along its body z axis.
    """

    mass: float
    body_kind: BodyKind
    half_extents: Optional[tuple[float, float, float]] = None
    radius: Optional[float] = None
    length: Optional[float] = None

    def __post_init__(self):
        if not self.mass > 0:
            raise ConfigurationError(f"{self.body_kind.value} mass must be positive")
        if self.half_extents is None and (self.radius is None or self.length is None):
            raise ConfigurationError(f"{self.body_kind.value} needs box or cylinder geometry")
        dims = list(self.half_extents or ()) + [d for d in (self.radius, self.length) if d is not None]
        if min(dims) <= 0:
            raise ConfigurationError(f"{self.body_kind.value} geometry must be positive")

    @property
    def inertia(self) -> np.ndarray:
        """Principal moments of inertia in the body frame (kg m^2)."""
        m = self.mass
        if self.half_extents is not None:
            a, b, c = (2.0 * h for h in self.half_extents)
            return np.array([b * b + c * c, a * a + c * c, a * a + b * b]) * m / 12.0
        r, length = self.radius, self.length
        transverse = m * (3.0 * r * r + length * length) / 12.0
        return np.array([transverse, transverse, 0.5 * m * r * r])


@dataclass(frozen=True)
class ContactParams:
    """Penalty contact parameters."""

    normal_stiffness: float
    normal_damping: float
    friction_coefficient: float
    friction_regularization_velocity: float

    def __post_init__(self):
        values = (
            self.normal_stiffness,
            self.normal_damping,
            self.friction_coefficient,
            self.friction_regularization_velocity,
        )
        if min(values) <= 0:
            raise ConfigurationError("contact parameters must be strictly positive")
        if self.friction_coefficient > 2:
            raise ConfigurationError("friction coefficient must not exceed 2")

    @classmethod
    def from_settings(cls, settings: ContactSettings) -> "ContactParams":
        return cls(**settings.model_dump())


@dataclass(frozen=True)
class Link:
    """Tension-only spring-damper between two point bodies."""

    node_a: int
    node_b: int
    rest_length: float
    stiffness: float
    damping: float


@dataclass
class NetAssembly:
    """Topology and physical parameters of the tether-net system.

    Body rows of a :class:`SystemState` are ordered: net nodes, central
    knot, MUs, chaser, debris. Net nodes, knot and MUs are point bodies.
    """

    variant: Variant
    mesh: int
    side_length: float
    node_count: int
    node_mass: float
    link_a: np.ndarray
    link_b: np.ndarray
    link_rest: np.ndarray
    link_stiffness: np.ndarray
    link_damping: np.ndarray
    mu_attachments: dict[int, int]
    perimeter_loop: np.ndarray
    surrogate_loops: tuple[np.ndarray, ...]
    closing_loop: Optional[np.ndarray]
    mu_ring: np.ndarray
    masses: np.ndarray
    point_radii: np.ndarray
    mu_spec: RigidBodySpec
    chaser: RigidBodySpec
    debris: RigidBodySpec
    contact: ContactParams
    tether_stiffness: float
    tether_damping: float
    winch_offset: np.ndarray
    stable_dt: float
    incidence: csr_array = field(repr=False)

    @property
    def mu_count(self) -> int:
        return len(self.mu_attachments)

    @property
    def knot_index(self) -> int:
        return self.node_count

    @property
    def mu_indices(self) -> np.ndarray:
        start = self.node_count + 1
        return np.arange(start, start + self.mu_count)

    @property
    def point_count(self) -> int:
        return self.node_count + 1 + self.mu_count

    @property
    def chaser_index(self) -> int:
        return self.point_count

    @property
    def debris_index(self) -> int:
        return self.point_count + 1

    @property
    def body_count(self) -> int:
        return self.point_count + 2

    @property
    def net_indices(self) -> np.ndarray:
        """Net nodes and the central knot; the MUs are carried bodies."""
        return np.arange(self.node_count + 1)

    @property
    def max_mouth_area(self) -> float:
        """Mouth area of the fully flat net."""
        return self.side_length ** 2

    @property
    def link_list(self) -> list[Link]:
        return [
            Link(int(a), int(b), float(l0), float(k), float(c))
            for a, b, l0, k, c in zip(
                self.link_a, self.link_b, self.link_rest, self.link_stiffness, self.link_damping
            )
        ]

    @property
    def feature_node_count(self) -> int:
        return int(sum(len(loop) for loop in self.surrogate_loops))

    def link(self, index: int) -> Link:
        return Link(
            int(self.link_a[index]),
            int(self.link_b[index]),
            float(self.link_rest[index]),
            float(self.link_stiffness[index]),
            float(self.link_damping[index]),
        )

    def substeps(self, dt: float) -> int:
        """Number of equal sub-steps that keep a step of ``dt`` stable."""
        return max(1, math.ceil(dt / self.stable_dt - 1e-9))

    def net_com(self, state: SystemState) -> np.ndarray:
        """Mass-weighted center of the net nodes and knot."""
        idx = self.net_indices
        m = self.masses[idx]
        return (m[:, None] * state.positions[idx]).sum(axis=0) / m.sum()

    def winch_point(self, state: SystemState) -> np.ndarray:
        return state.positions[self.chaser_index] + self.winch_offset


def grid_index(i: int, j: int, n: int) -> int:
    """Node index of column ``i`` and row ``j`` on an ``n`` x ``n`` mesh."""
    return j * n + i


def ring_loop(n: int, offset: int) -> np.ndarray:
    """Ordered boundary of the sub-grid ``[offset, n-1-offset]``."""
    lo, hi = offset, n - 1 - offset
    if hi <= lo:
        raise ConfigurationError(f"no ring at offset {offset} on a {n}x{n} mesh")
    loop = [grid_index(i, lo, n) for i in range(lo, hi)]
    loop += [grid_index(hi, j, n) for j in range(lo, hi)]
    loop += [grid_index(i, hi, n) for i in range(hi, lo, -1)]
    loop += [grid_index(lo, j, n) for j in range(hi, lo, -1)]
    return np.array(loop, dtype=int)


def subsample_loop(loop: np.ndarray, count: int) -> np.ndarray:
    """Pick ``count`` evenly spaced members of a loop, keeping their order."""
    size = len(loop)
    picks = np.floor(np.arange(count) * size / count + 0.5).astype(int) % size
    return loop[picks]


def _surrogate_loops(n: int, requested: Optional[int]) -> tuple[np.ndarray, ...]:
    max_offset = (n - 2) // 2
    if max_offset < 2:
        return ()
    spacing = max(1, min((n - 1) // 10, (n - 2) // 4))
    rings = [ring_loop(n, k * spacing) for k in range(3)]
    capacity = 3 * min(len(r) for r in rings)

    if requested is None:
        scaled = REFERENCE_FEATURE_NODES * n * n / REFERENCE_NET_NODES
        requested = max(3, 3 * int(round(scaled / 3.0)))
        requested = min(requested, capacity)
    if requested % 3 != 0 or requested > capacity:
        raise ConfigurationError(
            f"feature_node_count {requested} must be a multiple of 3 and at most {capacity}"
        )
    per_ring = requested // 3
    return tuple(subsample_loop(r, per_ring) for r in rings)


def _mu_grid_cells(n: int, variant: Variant) -> list[tuple[int, int]]:
    """Grid cells of MU 1..N; corners first, then side midpoints."""
    last, mid = n - 1, (n - 1) // 2 if n % 2 else n // 2
    cells = [(0, 0), (last, 0), (0, last), (last, last)]
    if variant == Variant.EIGHT_MU:
        cells += [(mid, 0), (last, mid), (0, mid), (mid, last)]
    return cells


def _stable_dt(
    masses: np.ndarray,
    stiffness: np.ndarray,
    damping: np.ndarray,
    safety: float,
) -> float:
    """Critical step of semi-implicit Euler from per-body stiffness and damping sums."""
    omega = np.sqrt(2.0 * stiffness / masses)
    spring_limit = np.where(omega > 0, 2.0 / np.maximum(omega, 1e-300), np.inf)
    damping_limit = np.where(damping > 0, masses / np.maximum(damping, 1e-300), np.inf)
    return float(safety * min(spring_limit.min(), damping_limit.min()))


def build_assembly(
    net: NetSettings,
    contact: Optional[ContactSettings] = None,
    capture: Optional[CaptureSettings] = None,
    debris_position: tuple[float, float, float] = (0.0, 0.0, -50.0),
    closing: bool = True,
) -> tuple[NetAssembly, SystemState]:
    """
    Build the net assembly and its stowed initial state.

    The net is folded into a square of ``stowed_fraction`` of its side,
    centered in front of the chaser's debris-facing (-z) face, with the
    MUs protruding at the corners (and side midpoints for 8 MUs).

    Args:
        net: Net, body and integrator parameters
        contact: Penalty contact parameters
        capture: Closing-mechanism parameters (only used for the stable step)
        debris_position: Initial debris center of mass (m)
        closing: Size the stable step for the closing mechanism; a net that
            never runs the capture phase can leave it out

    Returns:
        Assembly and initial system state

    Raises:
        ConfigurationError: If the mesh or any physical constant is invalid
    """
    contact = contact or ContactSettings()
    capture = capture or CaptureSettings()
    n = net.mesh
    if n < 3:
        raise ConfigurationError(f"mesh resolution {n}x{n} is below 3x3")

    node_count = n * n
    node_mass = net.net_mass / node_count
    spacing = net.side_length / (n - 1)

    # Structural threads of the square mesh.
    link_a, link_b = [], []
    for j in range(n):
        for i in range(n):
            if i < n - 1:
                link_a.append(grid_index(i, j, n))
                link_b.append(grid_index(i + 1, j, n))
            if j < n - 1:
                link_a.append(grid_index(i, j, n))
                link_b.append(grid_index(i, j + 1, n))
    rest = [spacing] * len(link_a)

    knot = node_count
    center = grid_index(n // 2, n // 2, n)
    link_a.append(center)
    link_b.append(knot)
    rest.append(net.knot_thread_length)

    cells = _mu_grid_cells(n, net.variant)
    mu_attachments = {}
    for m, (i, j) in enumerate(cells):
        mu_attachments[m] = grid_index(i, j, n)
        link_a.append(grid_index(i, j, n))
        link_b.append(knot + 1 + m)
        rest.append(net.mu_thread_length)

    link_count = len(link_a)
    link_a = np.array(link_a, dtype=int)
    link_b = np.array(link_b, dtype=int)
    link_rest = np.array(rest, dtype=float)
    link_stiffness = np.full(link_count, net.stiffness)
    link_damping = np.full(link_count, net.damping)

    perimeter = ring_loop(n, 0)
    surrogate_loops = _surrogate_loops(n, net.feature_node_count)

    closing_loop = None
    if net.variant == Variant.FOUR_MU:
        if net.closing_loop_size > len(perimeter):
            raise ConfigurationError("closing loop is longer than the net perimeter")
        closing_loop = subsample_loop(perimeter, net.closing_loop_size)

    # MUs in the order they appear around the perimeter.
    perimeter_rank = {int(node): k for k, node in enumerate(perimeter)}
    mu_ring = np.array(sorted(mu_attachments, key=lambda m: perimeter_rank[mu_attachments[m]]))

    mu_count = len(cells)
    point_count = node_count + 1 + mu_count
    masses = np.concatenate([
        np.full(node_count, node_mass),
        [net.knot_mass],
        np.full(mu_count, net.mu_mass),
        [net.chaser_mass, net.debris_mass],
    ])
    mu_half = tuple(0.5 * d for d in net.mu_size)
    point_radii = np.concatenate([
        np.full(node_count + 1, net.node_radius),
        np.full(mu_count, max(mu_half)),
    ])

    mu_spec = RigidBodySpec(net.mu_mass, BodyKind.MU, half_extents=mu_half)
    chaser = RigidBodySpec(net.chaser_mass, BodyKind.CHASER, half_extents=(0.5 * net.chaser_side,) * 3)
    debris = RigidBodySpec(
        net.debris_mass, BodyKind.DEBRIS, radius=net.debris_radius, length=net.debris_length
    )
    contact_params = ContactParams.from_settings(contact)

    incidence = csr_array(
        (
            np.concatenate([np.ones(link_count), -np.ones(link_count)]),
            (np.concatenate([link_a, link_b]), np.concatenate([np.arange(link_count)] * 2)),
        ),
        shape=(point_count, link_count),
    )

    # Worst-case stiffness and damping seen by each point body.
    k_sum = np.zeros(point_count)
    c_sum = np.zeros(point_count)
    np.add.at(k_sum, link_a, link_stiffness)
    np.add.at(k_sum, link_b, link_stiffness)
    np.add.at(c_sum, link_a, link_damping)
    np.add.at(c_sum, link_b, link_damping)
    k_sum += contact.normal_stiffness
    c_sum += contact.normal_damping
    k_sum[knot] += net.tether_stiffness
    c_sum[knot] += net.tether_damping
    if closing and closing_loop is not None:
        # Closing line on both sides plus a lock to each loop neighbour.
        k_sum[closing_loop] += 6.0 * capture.closing_stiffness
        c_sum[closing_loop] += 6.0 * capture.closing_damping
    elif closing:
        mu_rows = np.arange(node_count + 1, point_count)
        k_sum[mu_rows] += 2.0 * capture.docking_stiffness
        c_sum[mu_rows] += 2.0 * capture.docking_damping
    stable_dt = _stable_dt(masses[:point_count], k_sum, c_sum, net.substep_safety)

    assembly = NetAssembly(
        variant=net.variant,
        mesh=n,
        side_length=net.side_length,
        node_count=node_count,
        node_mass=node_mass,
        link_a=link_a,
        link_b=link_b,
        link_rest=link_rest,
        link_stiffness=link_stiffness,
        link_damping=link_damping,
        mu_attachments=mu_attachments,
        perimeter_loop=perimeter,
        surrogate_loops=surrogate_loops,
        closing_loop=closing_loop,
        mu_ring=mu_ring,
        masses=masses,
        point_radii=point_radii,
        mu_spec=mu_spec,
        chaser=chaser,
        debris=debris,
        contact=contact_params,
        tether_stiffness=net.tether_stiffness,
        tether_damping=net.tether_damping,
        winch_offset=np.array([0.0, 0.0, -0.5 * net.chaser_side]),
        stable_dt=stable_dt,
        incidence=incidence,
    )
    state = stowed_state(assembly, net, debris_position)

    logger.info(
        f"Built {net.variant.value} assembly: {node_count} nodes, {link_count} links, "
        f"{mu_count} MUs, {assembly.substeps(net.dt)} sub-steps per {net.dt} s step"
    )
    return assembly, state


def frame_from_axis(axis: np.ndarray) -> np.ndarray:
    """Rotation matrix whose third column (body z, the cylinder axis) is ``axis``."""
    z = axis / np.linalg.norm(axis)
    helper = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = np.cross(helper, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.column_stack([x, y, z])


def stowed_state(
    assembly: NetAssembly,
    net: NetSettings,
    debris_position: tuple[float, float, float],
) -> SystemState:
    """Initial state with the net folded in front of the chaser."""
    n = assembly.mesh
    stowed_side = net.stowed_fraction * net.side_length
    face_z = -0.5 * net.chaser_side
    net_z = face_z - 0.3

    positions = np.zeros((assembly.body_count, 3))
    coords = (np.arange(n) / (n - 1) - 0.5) * stowed_side
    xx, yy = np.meshgrid(coords, coords)
    positions[: assembly.node_count, 0] = xx.ravel()
    positions[: assembly.node_count, 1] = yy.ravel()
    positions[: assembly.node_count, 2] = net_z

    center = positions[: assembly.node_count].mean(axis=0)
    positions[assembly.knot_index] = center + np.array([0.0, 0.0, 0.1])

    for m, node in assembly.mu_attachments.items():
        anchor = positions[node]
        outward = anchor - center
        outward[2] = 0.0
        norm = np.linalg.norm(outward)
        direction = outward / norm if norm > 0 else np.zeros(3)
        positions[assembly.mu_indices[m]] = anchor + net.mu_protrusion * direction

    positions[assembly.chaser_index] = 0.0
    positions[assembly.debris_index] = np.asarray(debris_position, dtype=float)

    axis = np.asarray(net.debris_axis, dtype=float)
    axis /= np.linalg.norm(axis)
    orientation = frame_from_axis(axis)

    velocities = np.zeros_like(positions)
    winch = positions[assembly.chaser_index] + assembly.winch_offset
    knot_distance = float(np.linalg.norm(positions[assembly.knot_index] - winch))

    return SystemState(
        time=0.0,
        positions=positions,
        velocities=velocities,
        debris_orientation=orientation,
        debris_angular_velocity=net.debris_spin_rate * axis,
        winch_mode=WinchMode.FREE_SPOOL,
        deployed_tether_length=knot_distance,
    )
