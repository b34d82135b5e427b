"""Effort-driven first-order thermal model of a single actuator node.

The node obeys

    RC * dT/dt + T = F**2 * beta_r - F * beta_bias_r + t_offset

where ``F`` is the actuator effort (torque or force) and ``t_offset`` is a
learned constant that already contains the ambient temperature.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import yaml

from .errors import InvalidInputError

__all__ = [
    "ThermalParams",
    "ThermalNodeState",
    "joule_heating",
    "steady_state_temperature",
    "predict_temperature",
    "step_euler",
    "load_params",
    "save_params",
]


@dataclass(frozen=True)
class ThermalParams:
    """Lumped parameters of one thermal node.

    Attributes:
        rc: thermal time constant RC in seconds.
        beta_r: quadratic effort gain, degC per effort-unit squared.
        beta_bias_r: linear effort gain from the actuator bias, degC per
            effort-unit. May take either sign.
        t_offset: steady temperature at zero effort, degC (ambient included).
    """

    rc: float
    beta_r: float
    beta_bias_r: float = 0.0
    t_offset: float = 25.0

    def __post_init__(self):
        for name in ("rc", "beta_r", "beta_bias_r", "t_offset"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidInputError(f"{name} must be finite")
        if self.rc <= 0:
            raise InvalidInputError(f"rc must be positive, got {self.rc}")
        if self.beta_r <= 0:
            raise InvalidInputError(f"beta_r must be positive, got {self.beta_r}")

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ThermalParams":
        try:
            return cls(
                rc=float(d["rc"]),
                beta_r=float(d["beta_r"]),
                beta_bias_r=float(d.get("beta_bias_r", 0.0)),
                t_offset=float(d.get("t_offset", 25.0)),
            )
        except KeyError as exc:
            raise InvalidInputError(f"missing thermal parameter {exc}") from None


@dataclass(frozen=True)
class ThermalNodeState:
    node_id: str
    actuator_id: str
    temperature: float

    def __post_init__(self):
        if not math.isfinite(self.temperature):
            raise InvalidInputError(f"temperature of {self.node_id!r} is not finite")


def _check_effort(effort):
    if not math.isfinite(effort):
        raise InvalidInputError(f"effort must be finite, got {effort}")


def joule_heating(params: ThermalParams, effort: float) -> float:
    """Effort-dependent part of the forcing, ``F^2 beta_r - F beta_bias_r``."""
    _check_effort(effort)
    return effort * effort * params.beta_r - effort * params.beta_bias_r


def steady_state_temperature(params: ThermalParams, effort: float) -> float:
    return joule_heating(params, effort) + params.t_offset


def predict_temperature(params: ThermalParams, t0: float, effort: float, dt: float) -> float:
    """Closed-form temperature after holding ``effort`` for ``dt`` seconds."""
    if not dt >= 0:
        raise InvalidInputError(f"dt must be non-negative, got {dt}")
    if dt == 0:
        return t0
    decay = math.exp(-dt / params.rc)
    return t0 * decay + steady_state_temperature(params, effort) * (1.0 - decay)


def step_euler(params: ThermalParams, t: float, effort: float, dt: float) -> float:
    """One explicit Euler step. Keep ``dt`` at or below ``rc / 100``."""
    if not dt > 0:
        raise InvalidInputError(f"dt must be positive, got {dt}")
    return t + dt * (steady_state_temperature(params, effort) - t) / params.rc


def save_params(params: ThermalParams, path) -> None:
    Path(path).write_text(yaml.safe_dump(params.to_dict(), sort_keys=False))


def load_params(path) -> ThermalParams:
    data = yaml.safe_load(Path(path).read_text())
    if not isinstance(data, dict):
        raise InvalidInputError(f"{path}: expected a mapping of thermal parameters")
    return ThermalParams.from_dict(data)
