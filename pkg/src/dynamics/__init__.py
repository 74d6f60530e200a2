"""Lumped-parameter net, rigid-body, tether and contact dynamics."""

from .assembly import (
    BodyKind,
    ContactParams,
    Link,
    NetAssembly,
    RigidBodySpec,
    build_assembly,
)
from .forces import cable_force, contact_forces, tether_force
from .integrator import linear_momentum, mechanical_energy, simulate, step
from .reduced import prolong_state, reduced_mesh, reduced_settings
from .state import SystemState

__all__ = [
    "BodyKind",
    "ContactParams",
    "Link",
    "NetAssembly",
    "RigidBodySpec",
    "SystemState",
    "build_assembly",
    "cable_force",
    "contact_forces",
    "linear_momentum",
    "mechanical_energy",
    "prolong_state",
    "reduced_mesh",
    "reduced_settings",
    "simulate",
    "step",
    "tether_force",
]
