"""Temperature potential over configurations and its contact-consistent descent.

For a fixed contact set the static torques, and therefore the actuator
efforts, are a function of the configuration alone. Feeding those efforts
through each node's closed-form thermal response gives the temperatures
expected after a horizon ``dt``; the potential is the weighted quadratic form
``T' Q T`` over those predictions. :func:`descend` walks downhill on it while
keeping the active contacts in place.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .dynamics.model import ContactConfig, RobotModel
from .dynamics.statics import contact_jacobian, solve_statics
from .errors import InfeasibleCommandError, InvalidInputError, InvalidStartError
from .thermal_core import ThermalParams, predict_temperature

__all__ = [
    "ThermalScene",
    "DescentSettings",
    "DescentResult",
    "predict_node_temperatures",
    "potential",
    "gradient_projected",
    "nullspace_basis",
    "gradient_nullspace_basis",
    "descend",
    "minimize_objective",
    "write_trace",
    "read_trace",
]

BLOCKS = ("base_linear", "base_rotary", "actuated")


@dataclass
class ThermalScene:
    """Thermal side of the problem: which nodes exist, how hot they are now,
    which actuator heats each one, and how much each one matters.

    ``q_weights`` is the diagonal of the cost matrix, in ``node_ids`` order.
    """

    node_ids: list[str]
    params: dict[str, ThermalParams]
    initial: dict[str, float]
    bindings: dict[str, str]
    q_weights: np.ndarray | None = None
    horizon: float = 20.0

    def __post_init__(self):
        self.node_ids = list(self.node_ids)
        if len(set(self.node_ids)) != len(self.node_ids):
            raise InvalidInputError("duplicate node ids in thermal scene")
        for nid in self.node_ids:
            for table, what in ((self.params, "parameters"), (self.initial, "initial temperature"),
                                (self.bindings, "actuator binding")):
                if nid not in table:
                    raise InvalidInputError(f"node {nid!r} has no {what}")
            if not math.isfinite(self.initial[nid]):
                raise InvalidInputError(f"initial temperature of {nid!r} is not finite")
        if self.q_weights is None:
            self.q_weights = np.ones(len(self.node_ids))
        self.q_weights = np.asarray(self.q_weights, dtype=float).copy()
        if self.q_weights.shape != (len(self.node_ids),):
            raise InvalidInputError(
                f"cost weights need {len(self.node_ids)} entries, got shape {self.q_weights.shape}")
        if np.any(~np.isfinite(self.q_weights)) or np.any(self.q_weights < 0):
            raise InvalidInputError("cost weights must be finite and non-negative")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise InvalidInputError(f"horizon must be positive, got {self.horizon}")

    @property
    def cost_matrix(self) -> np.ndarray:
        return np.diag(self.q_weights)

    @property
    def t0(self) -> np.ndarray:
        return np.array([self.initial[n] for n in self.node_ids])

    def check_bindings(self, model: RobotModel) -> None:
        missing = sorted({a for a in self.bindings.values() if a not in model.actuator_names})
        if missing:
            raise InvalidInputError(
                f"nodes bound to unknown actuators {missing}; model has {model.actuator_names}")

    def with_temperatures(self, temps: Mapping[str, float] | Sequence[float]) -> "ThermalScene":
        if not isinstance(temps, Mapping):
            temps = dict(zip(self.node_ids, temps))
        return replace(self, initial={**self.initial, **{k: float(v) for k, v in temps.items()}})

    def with_weights(self, weights) -> "ThermalScene":
        return replace(self, q_weights=np.asarray(weights, dtype=float))

    def with_horizon(self, horizon: float) -> "ThermalScene":
        return replace(self, horizon=float(horizon))


@dataclass(frozen=True)
class DescentSettings:
    """Knobs of the bounded-step descent.

    ``delta_max`` is the largest change allowed in one iterate per coordinate
    block: actuated joints (rad), base translation (m), base rotation (rad).
    """

    h: float = 1e-6
    delta_max: Mapping[str, float] = field(
        default_factory=lambda: {"actuated": 0.02, "base_linear": 0.01, "base_rotary": 0.02})
    max_iters: int = 500
    mode: str = "projected"
    grad_tol: float = 1e-9
    drift_tol: float = 1e-4
    max_halvings: int = 20

    def __post_init__(self):
        if not (self.h > 0):
            raise InvalidInputError(f"h must be positive, got {self.h}")
        if self.max_iters < 1:
            raise InvalidInputError("iteration limit must be at least 1")
        if self.mode not in ("projected", "basis"):
            raise InvalidInputError(f"gradient mode must be 'projected' or 'basis', got {self.mode!r}")
        for b in BLOCKS:
            if not (self.delta_max.get(b, 0) > 0):
                raise InvalidInputError(f"delta_max[{b!r}] must be positive")

    def block_limits(self, model: RobotModel) -> np.ndarray:
        return np.array([self.delta_max[b] for b in model.blocks])


@dataclass
class DescentResult:
    q: np.ndarray
    f: float
    f0: float
    iterations: int
    stop_reason: str
    trace: list[dict]
    aux_names: list[str]
    drift: float

    def __iter__(self):
        # allows ``q, f, trace = descend(...)``
        return iter((self.q, self.f, self.trace))


def _node_temperatures(scene: ThermalScene, model: RobotModel, efforts, horizon: float) -> np.ndarray:
    idx = model.actuator_index
    return np.array([
        predict_temperature(scene.params[n], scene.initial[n], float(efforts[idx[scene.bindings[n]]]), horizon)
        for n in scene.node_ids
    ])


def predict_node_temperatures(scene: ThermalScene, model: RobotModel, q, contact: ContactConfig | None,
                              horizon: float | None = None) -> np.ndarray:
    """Node temperatures after holding ``q`` for the scene horizon (or ``horizon``)."""
    sol = solve_statics(model, q, contact)
    return _node_temperatures(scene, model, sol.efforts, scene.horizon if horizon is None else horizon)


def potential(scene: ThermalScene, model: RobotModel, q, contact: ContactConfig | None) -> float:
    T = predict_node_temperatures(scene, model, q, contact)
    return float(T @ (scene.q_weights * T))


def _thermal_objective(scene: ThermalScene, model: RobotModel, contact, check=False):
    w = scene.q_weights

    def objective(q):
        sol = solve_statics(model, q, contact, check=check)
        T = _node_temperatures(scene, model, sol.efforts, scene.horizon)
        return float(T @ (w * T)), T

    return objective


def _nullspace_at(model, q, contact):
    return solve_statics(model, q, contact, check=False).nullspace


def _projected_fd(objective, q, Nc, h, f_q=None):
    f_q = objective(q)[0] if f_q is None else f_q
    grad = np.empty(len(q))
    for i in range(len(q)):
        grad[i] = (objective(q + h * Nc[:, i])[0] - f_q) / h
    return grad


def nullspace_basis(Nc, tol: float = 1e-9) -> np.ndarray:
    """Orthonormal basis of ``range(N_c)`` as the columns of an ``n x k`` array."""
    Nc = np.asarray(Nc, dtype=float)
    U, s, _ = np.linalg.svd(Nc)
    if s.size == 0 or s[0] == 0:
        return np.zeros((Nc.shape[0], 0))
    return U[:, s > tol * max(1.0, s[0])]


def _basis_fd(objective, q, V, h, f_q=None):
    f_q = objective(q)[0] if f_q is None else f_q
    grad = np.zeros(len(q))
    for v in V.T:
        grad += v * (objective(q + h * v)[0] - f_q) / h
    return grad


def gradient_projected(scene, model, q, contact, settings: DescentSettings | None = None) -> np.ndarray:
    """Forward differences along the contact-projected unit directions ``N_c e_i``."""
    settings = settings or DescentSettings()
    q = np.asarray(q, dtype=float)
    return _projected_fd(_thermal_objective(scene, model, contact), q, _nullspace_at(model, q, contact), settings.h)


def gradient_nullspace_basis(scene, model, q, contact, settings: DescentSettings | None = None) -> np.ndarray:
    """Directional differences along an orthonormal basis of the contact null space."""
    settings = settings or DescentSettings()
    q = np.asarray(q, dtype=float)
    V = nullspace_basis(_nullspace_at(model, q, contact))
    return _basis_fd(_thermal_objective(scene, model, contact), q, V, settings.h)


def _block_gains(model, grad, limits):
    k = np.zeros_like(grad)
    for b in BLOCKS:
        sel = model.blocks == b
        if not sel.any():
            continue
        peak = np.max(np.abs(grad[sel]))
        if peak > 0:
            k[sel] = limits[sel][0] / peak
    return k


def _block_excess(model, step, limits):
    """Largest ratio of a block's step to its limit."""
    ratio = np.abs(step) / limits
    return float(np.max(ratio)) if ratio.size else 0.0


def _contact_drift(model, q_a, q_b, contact):
    if not contact:
        return 0.0
    fk_a, fk_b = model.forward_kinematics(q_a), model.forward_kinematics(q_b)
    out = 0.0
    for f in contact.frames:
        d = model.frame_pose(q_a, f, fk_a) - model.frame_pose(q_b, f, fk_b)
        d[2] = (d[2] + math.pi) % (2 * math.pi) - math.pi
        rows = model.contacts[f].rows
        out = max(out, float(np.max(np.abs(d[:rows]))))
    return out


def minimize_objective(objective: Callable, model: RobotModel, q0, contact: ContactConfig | None,
                       settings: DescentSettings | None = None, aux_names=()) -> DescentResult:
    """Bounded-step descent of ``objective`` restricted to contact-preserving motion.

    ``objective(q)`` returns ``(value, aux)``, where ``aux`` is a vector that is
    logged in the trace. Each iterate steps along ``-k * grad`` projected
    through the contact null space, with per-block gains chosen so the largest
    component of each block moves by exactly its ``delta_max``. The
    candidate is clamped to the joint limits and pulled back onto the contact
    manifold. The descent stops at the iteration limit, when the gradient
    vanishes, or as soon as a candidate fails to lower the objective; the
    failing candidate is discarded.
    """
    settings = settings or DescentSettings()
    contact = contact if contact is not None else ContactConfig.none()
    q = np.array(q0, dtype=float)
    if q.shape != (model.n,):
        raise InvalidInputError(f"configuration needs {model.n} entries, got {q.shape}")
    if not np.all(np.isfinite(q)):
        raise InvalidInputError("configuration is not finite")
    resid = model.contact_residual(q, contact) if contact else np.zeros(0)
    if resid.size and np.max(np.abs(resid)) > 1e-6:
        raise InvalidStartError(
            f"start violates contact set {contact.name!r} by {np.max(np.abs(resid)):.3g}")
    if not model.within_limits(q, tol=1e-9):
        raise InvalidStartError("start configuration is outside the joint limits")
    solve_statics(model, q, contact, check=True)  # actuation check once, up front

    targets = model.contact_targets(contact, q) if contact else None
    limits = settings.block_limits(model)
    f, aux = objective(q)
    f0 = f
    trace = [_trace_row(0, f, 0.0, aux, q)]
    reason = "iteration limit"
    it = 0
    for it in range(1, settings.max_iters + 1):
        Nc = _nullspace_at(model, q, contact)
        if settings.mode == "projected":
            grad = _projected_fd(objective, q, Nc, settings.h, f)
        else:
            grad = _basis_fd(objective, q, nullspace_basis(Nc), settings.h, f)
        if np.max(np.abs(grad)) <= settings.grad_tol:
            reason = "stationary"
            break
        step = Nc @ (-_block_gains(model, grad, limits) * grad)
        excess = _block_excess(model, step, limits)
        if excess > 1.0:
            step = step / excess
        cand = None
        for _ in range(settings.max_halvings):
            trial = _restore(model, model.clamp(q + step), contact, targets)
            if trial is not None and model.within_limits(trial, tol=1e-9) \
                    and _block_excess(model, trial - q, limits) <= 1.0 + 1e-12:
                cand = trial
                break
            step = 0.5 * step
        if cand is None:
            reason = "no admissible step"
            break
        f_c, aux_c = objective(cand)
        if not f_c < f:
            reason = "cost increase"
            break
        trace.append(_trace_row(it, f_c, float(np.max(np.abs(cand - q))), aux_c, cand))
        q, f, aux = cand, f_c, aux_c
    drift = _contact_drift(model, np.asarray(q0, dtype=float), q, contact)
    return DescentResult(q, f, f0, it, reason, trace, list(aux_names), drift)


def _restore(model, q, contact, targets):
    """Pull a clamped candidate back onto the contact manifold, holding
    coordinates that sit on a joint limit where possible."""
    if not contact:
        return q
    pinned = (q <= model.lower) | (q >= model.upper)
    for free in ((~pinned) if pinned.any() else None, None):
        try:
            return model.project_to_contacts(q, contact, targets, free=free)
        except (InfeasibleCommandError, np.linalg.LinAlgError):
            continue
    return None


def _trace_row(i, f, max_dq, aux, q=None):
    row = {"iteration": i, "f": float(f), "max_dq": float(max_dq), "aux": np.asarray(aux, dtype=float).copy()}
    if q is not None:
        row["q"] = np.array(q, dtype=float)
    return row


def descend(scene: ThermalScene, model: RobotModel, q0, contact: ContactConfig | None,
            settings: DescentSettings | None = None) -> DescentResult:
    """Thermally minimizing configuration reachable from ``q0`` under ``contact``."""
    scene.check_bindings(model)
    return minimize_objective(_thermal_objective(scene, model, contact), model, q0, contact,
                              settings, aux_names=scene.node_ids)


def write_trace(result: DescentResult, path) -> None:
    """CSV with one row per accepted iterate: index, f, max |dq|, per-node temperature."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "f", "max_dq", *result.aux_names])
        for row in result.trace:
            w.writerow([row["iteration"], repr(row["f"]), repr(row["max_dq"]), *map(repr, row["aux"].tolist())])


def read_trace(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        names = header[3:]
        rows = [{"iteration": int(x[0]), "f": float(x[1]), "max_dq": float(x[2]),
                 "aux": np.array([float(v) for v in x[3:]])} for x in r]
    return names, rows
