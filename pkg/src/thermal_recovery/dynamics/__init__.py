"""Planar robot models and contact-constrained statics."""

from .model import (
    ContactConfig,
    ContactFrame,
    RobotModel,
    fixture_path,
    load_model,
)
from .statics import (
    StaticsSolution,
    actuator_effort_map,
    actuator_efforts,
    contact_jacobian,
    contact_nullspace,
    dyn_consistent_pinv,
    gravity_vector,
    mass_matrix,
    reaction_forces,
    solve_statics,
    static_torque,
)

__all__ = [
    "ContactConfig",
    "ContactFrame",
    "RobotModel",
    "StaticsSolution",
    "actuator_effort_map",
    "actuator_efforts",
    "contact_jacobian",
    "contact_nullspace",
    "dyn_consistent_pinv",
    "fixture_path",
    "gravity_vector",
    "load_model",
    "mass_matrix",
    "reaction_forces",
    "solve_statics",
    "static_torque",
]
