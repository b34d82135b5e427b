"""Contact-constrained statics of a floating-base robot.

At rest (zero velocity and acceleration) the equations of motion reduce to

    g(q) = S_a^T Gamma + J_c^T F_r

Projecting through the contact null space ``N_c = I - Jbar_c J_c`` removes the
reaction forces and gives the configuration-only torque

    Gamma(q) = (S_a N_c)bar^T N_c^T g(q)

where ``Xbar = A^-1 X^T (X A^-1 X^T)^+`` is the inertia-weighted
(dynamically consistent) generalized inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ActuationDeficiencyError, SingularityError
from .model import ContactConfig, RobotModel

PINV_RCOND = 1e-8


def mass_matrix(model: RobotModel, q) -> np.ndarray:
    """Joint-space inertia ``A(q)`` summed over link COM Jacobians."""
    Jv, Jw, _ = model.com_jacobians(q)
    return _inertia(model, Jv, Jw)


def _inertia(model, Jv, Jw):
    A = np.einsum("l,lki,lkj->ij", model._masses, Jv, Jv) + np.einsum("l,li,lj->ij", model._inertias, Jw, Jw)
    return 0.5 * (A + A.T)


def gravity_vector(model: RobotModel, q) -> np.ndarray:
    """Gradient of the gravitational potential energy with respect to ``q``."""
    Jv, _, _ = model.com_jacobians(q)
    return model.gravity * model._masses @ Jv[:, 1, :]


def contact_jacobian(model: RobotModel, q, contact: ContactConfig | None, fk=None) -> np.ndarray:
    if not contact:
        return np.zeros((0, model.n))
    fk = fk or model.forward_kinematics(q)
    return np.vstack([model.frame_jacobian(q, f, fk) for f in contact.frames])


def dyn_consistent_pinv(X, A, rcond: float = PINV_RCOND) -> np.ndarray:
    """``A^-1 X^T (X A^-1 X^T)^+`` with singular values below ``rcond * max`` dropped."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 0:
        return np.zeros((X.shape[1], 0))
    AinvXt = np.linalg.solve(A, X.T)
    lam = X @ AinvXt
    return AinvXt @ np.linalg.pinv(0.5 * (lam + lam.T), rcond=rcond, hermitian=True)


def _nullspace_from(Jc, A):
    n = A.shape[0]
    if Jc.shape[0] == 0:
        return np.eye(n), np.zeros((n, 0))
    Jbar = dyn_consistent_pinv(Jc, A)
    return np.eye(n) - Jbar @ Jc, Jbar


def contact_nullspace(model: RobotModel, q, contact: ContactConfig | None) -> np.ndarray:
    A = mass_matrix(model, q)
    return _nullspace_from(contact_jacobian(model, q, contact), A)[0]


def _rank(M, rcond=PINV_RCOND):
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > rcond * s[0])) if s[0] > 0 else 0


@dataclass
class StaticsSolution:
    """Everything the static balance produces at one configuration."""

    q: np.ndarray
    torque: np.ndarray
    reaction: np.ndarray
    efforts: np.ndarray
    mass_matrix: np.ndarray
    gravity: np.ndarray
    contact_jacobian: np.ndarray
    nullspace: np.ndarray

    def residual(self, selector) -> float:
        """``|N_c^T g - (S_a N_c)^T Gamma|``."""
        Nc = self.nullspace
        return float(np.linalg.norm(Nc.T @ self.gravity - (selector @ Nc).T @ self.torque))

    def balance_residual(self, selector) -> float:
        """``|g - S_a^T Gamma - J_c^T F_r|``."""
        r = self.gravity - selector.T @ self.torque - self.contact_jacobian.T @ self.reaction
        return float(np.linalg.norm(r))


def solve_statics(model: RobotModel, q, contact: ContactConfig | None, check: bool = True) -> StaticsSolution:
    """Torques, reactions and actuator efforts holding ``q`` at rest.

    Raises :class:`ActuationDeficiencyError` (when ``check``) if the actuated
    joints cannot span every contact-consistent motion, in which case no
    torque vector can balance gravity.
    """
    q = np.asarray(q, dtype=float)
    Jv, Jw, fk = model.com_jacobians(q)
    A = _inertia(model, Jv, Jw)
    g = model.gravity * model._masses @ Jv[:, 1, :]
    Jc = contact_jacobian(model, q, contact, fk)
    Nc, Jbar = _nullspace_from(Jc, A)
    SN = model.selector @ Nc
    if check:
        r_sn, r_n = _rank(SN), _rank(Nc)
        if r_sn < r_n:
            raise ActuationDeficiencyError(
                f"contact set {getattr(contact, 'name', 'none')!r}: actuated joints span "
                f"{r_sn} of {r_n} contact-consistent directions"
            )
    torque = dyn_consistent_pinv(SN, A).T @ (Nc.T @ g)
    reaction = Jbar.T @ (g - model.selector.T @ torque)
    efforts = actuator_effort_map(model, q) @ torque
    return StaticsSolution(q, torque, reaction, efforts, A, g, Jc, Nc)


def static_torque(model: RobotModel, q, contact: ContactConfig | None) -> np.ndarray:
    return solve_statics(model, q, contact).torque


def reaction_forces(model: RobotModel, q, torque, contact: ContactConfig | None) -> np.ndarray:
    """Contact reactions at rest: ``Jbar_c^T (g - S_a^T Gamma)``.

    Rows follow the contact frame order: ``(fx, fz)`` for point contacts and
    ``(fx, fz, moment)`` for flat ones.
    """
    if not contact:
        return np.zeros(0)
    A = mass_matrix(model, q)
    g = gravity_vector(model, q)
    Jbar = dyn_consistent_pinv(contact_jacobian(model, q, contact), A)
    return Jbar.T @ (g - model.selector.T @ np.asarray(torque, dtype=float))


def vertical_reaction(model: RobotModel, reaction, contact: ContactConfig | None) -> float:
    """Sum of the vertical force rows of a stacked reaction vector."""
    total, i = 0.0, 0
    for f in (contact.frames if contact else ()):
        rows = model.contacts[f].rows
        total += reaction[i + 1]
        i += rows
    return float(total)


def actuator_effort_map(model: RobotModel, q) -> np.ndarray:
    """``J_gamma(q)`` mapping joint torques to actuator efforts (rows follow
    ``model.actuator_names``, columns follow joints)."""
    q = np.asarray(q, dtype=float)
    Jg = np.zeros((len(model.actuator_names), model.m))
    row = 0
    for grp in model.actuator_groups:
        cols = [model.joint_index[j] for j in grp.joints]
        if grp.kind == "direct":
            Jg[row, cols[0]] = 1.0
            row += 1
            continue
        Jg[row:row + 2][:, cols] = np.linalg.inv(_pair_matrix(model, q, grp))
        row += 2
    return Jg


def _pair_matrix(model, q, grp):
    pitch = q[model.n_base + model.joint_index[grp.joints[0]]]
    c = np.cos(pitch)
    if abs(c) < 1e-6:
        raise SingularityError(grp.joints[0])
    r, d = grp.lever, grp.separation
    return np.array([[r * c, r * c], [d, -d]])


def pushrod_velocities(model: RobotModel, q, qdot) -> np.ndarray:
    """Actuator-side rates ``v`` with ``F . v == tau . qdot`` for every group."""
    q = np.asarray(q, dtype=float)
    jd = np.asarray(qdot, dtype=float)[model.n_base:]
    out = []
    for grp in model.actuator_groups:
        cols = [model.joint_index[j] for j in grp.joints]
        if grp.kind == "direct":
            out.append(jd[cols[0]])
        else:
            out.extend(_pair_matrix(model, q, grp).T @ jd[cols])
    return np.array(out)


def actuator_efforts(model: RobotModel, q, torque) -> np.ndarray:
    return actuator_effort_map(model, q) @ np.asarray(torque, dtype=float)
