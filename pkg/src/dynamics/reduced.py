"""Reduced-order net for fast deployment and its prolongation to the full net."""

import logging
from dataclasses import replace
from typing import Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from ..config import NetSettings
from .assembly import NetAssembly
from .state import SystemState

logger = logging.getLogger(__name__)


def reduced_mesh(mesh: int, deployment_mesh: Optional[int]) -> Optional[int]:
    """Mesh of the reduced net, or None when the full net is simulated."""
    if deployment_mesh is None or deployment_mesh >= mesh:
        return None
    return deployment_mesh


def reduced_settings(net: NetSettings, mesh: int) -> NetSettings:
    """The same net on a coarser mesh.

    Side length, total mass and per-thread constants are kept; a square
    mesh of identical threads has the same sheet stiffness at any
    resolution.
    """
    return net.model_copy(update={
        "mesh": mesh,
        "closing_loop_size": min(net.closing_loop_size, 4 * (mesh - 1)),
        "feature_node_count": None,
    })


def prolong_state(state: SystemState, coarse: NetAssembly, full: NetAssembly) -> SystemState:
    """
    Full-net state interpolated from a reduced-net state.

    Node positions and velocities are bilinear in the grid coordinates of
    the coarse mesh. Knot, MU, chaser and debris rows carry over unchanged.

    Raises:
        ValueError: If the two assemblies are different variants
    """
    if coarse.variant != full.variant:
        raise ValueError(f"cannot prolong a {coarse.variant.value} net onto a {full.variant.value} net")
    r, n = coarse.mesh, full.mesh
    grid = np.linspace(0.0, 1.0, r)
    values = np.concatenate(
        [state.positions[: coarse.node_count], state.velocities[: coarse.node_count]], axis=1
    ).reshape(r, r, 6)
    interpolate = RegularGridInterpolator((grid, grid), values)

    fine = np.linspace(0.0, 1.0, n)
    rows, cols = np.meshgrid(fine, fine, indexing="ij")
    nodes = interpolate(np.column_stack([rows.ravel(), cols.ravel()]))

    positions = np.empty((full.body_count, 3))
    velocities = np.empty((full.body_count, 3))
    positions[: full.node_count] = nodes[:, :3]
    velocities[: full.node_count] = nodes[:, 3:]
    positions[full.node_count:] = state.positions[coarse.node_count:]
    velocities[full.node_count:] = state.velocities[coarse.node_count:]
    return replace(
        state,
        positions=positions,
        velocities=velocities,
        debris_orientation=state.debris_orientation.copy(),
        debris_angular_velocity=state.debris_angular_velocity.copy(),
    )
