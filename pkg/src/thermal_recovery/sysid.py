"""Thermal parameter identification from telemetry.

Pipeline: low-pass prefiltering, derivative estimation, regression assembly,
Z-score feature scaling, batch gradient descent on the scaled problem and
conversion back to physical parameters.  Each regression row reads

    T_i - T_amb = [RC, beta_r, beta_bias_r, c] . [-dT_i/dt, F_i^2, -F_i, 1]

so the fitted constant ``c`` plus the ambient temperature is the
``t_offset`` of :class:`~thermal_recovery.thermal_core.ThermalParams`.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import signal

from .errors import (
    DegenerateDataError,
    FitRejectedError,
    InvalidInputError,
    StepSizeError,
)
from .thermal_core import ThermalParams, step_euler

logger = logging.getLogger(__name__)

TEMP_CUTOFF_HZ = 0.015
EFFORT_CUTOFF_HZ = 1.0
DEFAULT_AMBIENT_C = 25.0
FEATURE_NAMES = ("-dT/dt", "effort^2", "-effort", "bias")
MIN_SAMPLES = 100
TRANSIENT_TIME_CONSTANTS = 3.0


# --------------------------------------------------------------------------
# telemetry
# --------------------------------------------------------------------------


@dataclass
class TelemetryLog:
    """Uniformly sampled telemetry.

    ``efforts[a][i]`` is the effort of actuator ``a`` measured at
    ``sample_times[i]`` and treated as held until the next sample.
    """

    sample_times: np.ndarray
    temperatures: dict[str, np.ndarray]
    efforts: dict[str, np.ndarray]
    ambient: np.ndarray | float = DEFAULT_AMBIENT_C

    def __post_init__(self):
        self.sample_times = np.asarray(self.sample_times, dtype=float)
        self.temperatures = {k: np.asarray(v, dtype=float) for k, v in self.temperatures.items()}
        self.efforts = {k: np.asarray(v, dtype=float) for k, v in self.efforts.items()}

    def __len__(self):
        return len(self.sample_times)

    @property
    def nodes(self) -> list[str]:
        return list(self.temperatures)

    @property
    def actuators(self) -> list[str]:
        return list(self.efforts)

    @property
    def sample_period(self) -> float:
        return float(np.mean(np.diff(self.sample_times)))

    @property
    def sample_rate(self) -> float:
        return 1.0 / self.sample_period

    def ambient_series(self) -> np.ndarray:
        amb = np.asarray(self.ambient, dtype=float)
        if amb.ndim == 0:
            return np.full(len(self), float(amb))
        return amb

    def validate(self, min_samples: int = MIN_SAMPLES) -> None:
        n = len(self)
        if n < min_samples:
            raise InvalidInputError(f"log has {n} samples, need at least {min_samples}")
        dt = np.diff(self.sample_times)
        if np.any(dt <= 0):
            raise InvalidInputError("sample times must be strictly increasing")
        if not np.allclose(dt, dt[0], rtol=1e-6, atol=1e-9):
            raise InvalidInputError("sample times must be uniformly spaced")
        series = {**self.temperatures, **self.efforts, "ambient": self.ambient_series()}
        for name, s in series.items():
            if len(s) != n:
                raise InvalidInputError(f"series {name!r} has {len(s)} samples, expected {n}")
            if not np.all(np.isfinite(s)):
                raise InvalidInputError(f"series {name!r} contains non-finite values")

    def actuator_for(self, node: str) -> str:
        """Guess the effort channel driving ``node`` from the naming scheme.

        A node ``knee_l_core`` is bound to actuator ``knee_l`` when that
        column exists; the longest matching prefix wins.
        """
        if len(self.efforts) == 1:
            return next(iter(self.efforts))
        candidates = [a for a in self.efforts if node == a or node.startswith(a + "_")]
        if not candidates:
            raise InvalidInputError(
                f"cannot infer actuator for node {node!r}; available: {self.actuators}"
            )
        return max(candidates, key=len)

    # -- CSV --------------------------------------------------------------

    def write_csv(self, path) -> None:
        header = ["time_s", "ambient_c"]
        header += [f"{n}_temp_c" for n in self.temperatures]
        header += [f"{a}_effort" for a in self.efforts]
        amb = self.ambient_series()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            cols = [self.sample_times, amb, *self.temperatures.values(), *self.efforts.values()]
            for row in zip(*cols):
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def read_csv(cls, path) -> "TelemetryLog":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise InvalidInputError(f"{path}: empty file") from None
            rows = [[float(v) for v in row] for row in reader if row]
        if header[:2] != ["time_s", "ambient_c"]:
            raise InvalidInputError(f"{path}: header must start with time_s, ambient_c")
        data = np.array(rows, dtype=float).reshape(len(rows), len(header))
        temps, efforts = {}, {}
        for j, name in enumerate(header[2:], start=2):
            if name.endswith("_temp_c"):
                temps[name[: -len("_temp_c")]] = data[:, j]
            elif name.endswith("_effort"):
                efforts[name[: -len("_effort")]] = data[:, j]
            else:
                raise InvalidInputError(f"{path}: unrecognised column {name!r}")
        return cls(data[:, 0], temps, efforts, data[:, 1])


# --------------------------------------------------------------------------
# filters
# --------------------------------------------------------------------------


def _check_cutoff(cutoff, sample_rate):
    if not (0 < cutoff < sample_rate / 2):
        raise InvalidInputError(
            f"cutoff {cutoff} Hz must lie in (0, Nyquist={sample_rate / 2} Hz)"
        )


def _pole_coefficients(cutoff, sample_rate):
    # prewarped bilinear transform of 1 / (s / wc + 1)
    w = math.tan(math.pi * cutoff / sample_rate)
    return w / (1.0 + w), (1.0 - w) / (1.0 + w)


def lowpass(x, cutoff: float, sample_rate: float) -> np.ndarray:
    """Single-pole IIR low-pass (bilinear transform), unit DC gain.

    The filter state starts at the first sample, so a constant input passes
    through unchanged.
    """
    _check_cutoff(cutoff, sample_rate)
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return x.copy()
    a, b = _pole_coefficients(cutoff, sample_rate)
    num, den = [a, a], [1.0, -b]
    y, _ = signal.lfilter(num, den, x, zi=signal.lfilter_zi(num, den) * x[0])
    return y


def backward_difference(x, sample_rate: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    d = np.zeros_like(x)
    if x.size > 1:
        d[1:] = np.diff(x) * sample_rate
        d[0] = d[1]
    return d


def derivative_filter(x, cutoff: float, sample_rate: float) -> np.ndarray:
    """Backward-difference derivative followed by :func:`lowpass`.

    The backward difference estimates the slope half a sample in the past;
    :func:`build_regression` compensates by averaging adjacent samples of
    the other channels.
    """
    _check_cutoff(cutoff, sample_rate)
    return lowpass(backward_difference(x, sample_rate), cutoff, sample_rate)


def _midpoint(x):
    m = np.array(x, dtype=float)
    m[1:] = 0.5 * (m[1:] + m[:-1])
    return m


# --------------------------------------------------------------------------
# regression
# --------------------------------------------------------------------------


@dataclass
class RegressionSet:
    """Rows ``y = theta . x`` with features ``(-dT/dt, F^2, -F, 1)``."""

    features: np.ndarray
    targets: np.ndarray
    ambient: float = 0.0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        if self.features.ndim != 2 or self.features.shape[1] != 4:
            raise InvalidInputError("features must be an (m, 4) array")
        if len(self.targets) != len(self.features):
            raise InvalidInputError("features and targets differ in length")

    def __len__(self):
        return len(self.targets)


def build_regression(
    log: TelemetryLog,
    node: str,
    temp_cutoff: float = TEMP_CUTOFF_HZ,
    effort_cutoff: float = EFFORT_CUTOFF_HZ,
    actuator: str | None = None,
) -> RegressionSet:
    """Assemble regression rows for ``node``.

    Temperatures are low-passed at ``temp_cutoff`` and differentiated with
    :func:`derivative_filter` at the same cutoff.  Efforts are low-passed at
    ``effort_cutoff``; the ``F^2`` and ``F`` columns then go through the
    temperature filter as well so every column carries identical filter
    dynamics and the linear thermal relation survives filtering exactly.
    The first three temperature-filter time constants are dropped.
    """
    log.validate()
    if node not in log.temperatures:
        raise InvalidInputError(f"unknown node {node!r}; available: {log.nodes}")
    actuator = actuator or log.actuator_for(node)
    if actuator not in log.efforts:
        raise InvalidInputError(f"unknown actuator {actuator!r}; available: {log.actuators}")
    fs = log.sample_rate
    temp = log.temperatures[node]
    effort = _midpoint(lowpass(log.efforts[actuator], effort_cutoff, fs))

    t_f = lowpass(_midpoint(temp), temp_cutoff, fs)
    amb_f = lowpass(_midpoint(log.ambient_series()), temp_cutoff, fs)
    dt_f = derivative_filter(temp, temp_cutoff, fs)
    f2_f = lowpass(effort**2, temp_cutoff, fs)
    f1_f = lowpass(effort, temp_cutoff, fs)

    drop = transient_samples(temp_cutoff, fs)
    if len(temp) - drop < 10:
        raise InvalidInputError(
            f"log too short: {len(temp)} samples leave {len(temp) - drop} after "
            f"dropping the {drop}-sample filter transient"
        )
    sl = slice(drop, None)
    X = np.column_stack([-dt_f[sl], f2_f[sl], -f1_f[sl], np.ones(len(temp) - drop)])
    y = t_f[sl] - amb_f[sl]
    return RegressionSet(X, y, ambient=float(np.mean(amb_f[sl])))


def transient_samples(cutoff: float, sample_rate: float) -> int:
    tau = 1.0 / (2.0 * math.pi * cutoff)
    return int(math.ceil(TRANSIENT_TIME_CONSTANTS * tau * sample_rate))


@dataclass(frozen=True)
class ScalingStats:
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float
    ambient: float = 0.0

    def scale(self, rs: RegressionSet) -> RegressionSet:
        X = rs.features.copy()
        X[:, :3] = (X[:, :3] - self.x_mean) / self.x_std
        return RegressionSet(X, (rs.targets - self.y_mean) / self.y_std, rs.ambient)

    def unscale(self, rs: RegressionSet) -> RegressionSet:
        X = rs.features.copy()
        X[:, :3] = X[:, :3] * self.x_std + self.x_mean
        return RegressionSet(X, rs.targets * self.y_std + self.y_mean, rs.ambient)


def zscore(rs: RegressionSet) -> tuple[RegressionSet, ScalingStats]:
    """Standardize features 1-3 and the target (population sigma).

    The bias column is left as ones.
    """
    X = rs.features
    x_mean = X[:, :3].mean(axis=0)
    x_std = X[:, :3].std(axis=0)
    y_mean = float(rs.targets.mean())
    y_std = float(rs.targets.std())
    for j in range(3):
        if x_std[j] <= 1e-12 * max(1.0, abs(x_mean[j])):
            raise DegenerateDataError(FEATURE_NAMES[j])
    if y_std <= 1e-12 * max(1.0, abs(y_mean)):
        raise DegenerateDataError("target")
    stats = ScalingStats(x_mean, x_std, y_mean, y_std, rs.ambient)
    return stats.scale(rs), stats


@dataclass
class GradientDescentResult:
    theta: np.ndarray
    loss: float
    iterations: int
    converged: bool
    loss_history: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))


def batch_gradient_descent(
    scaled: RegressionSet,
    learning_rate: float = 0.1,
    max_iters: int = 200_000,
    grad_tol: float = 1e-9,
    record_every: int = 100,
) -> GradientDescentResult:
    """Minimize ``L = 1/(2m) sum (theta.x - y)^2`` from ``theta = 0``.

    The batch gradient ``(1/m) X^T (X theta - y)`` is evaluated through the
    precomputed Gram matrix, which is algebraically the same update at a
    per-iteration cost independent of ``m``.
    """
    if not learning_rate > 0:
        raise InvalidInputError("learning_rate must be positive")
    X, y = scaled.features, scaled.targets
    m = len(y)
    gram = X.T @ X / m
    xty = X.T @ y / m
    yty = float(y @ y) / m

    theta = np.zeros(X.shape[1])
    prev_loss = 0.5 * yty
    rising = 0
    history = [prev_loss]
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        grad = gram @ theta - xty
        if np.sqrt(grad @ grad) <= grad_tol:
            converged = True
            it -= 1
            break
        theta = theta - learning_rate * grad
        loss = 0.5 * theta @ gram @ theta - theta @ xty + 0.5 * yty
        rising = rising + 1 if loss > prev_loss else 0
        if rising >= 10:
            raise StepSizeError(
                f"loss increased for 10 consecutive iterations at iteration {it}; "
                f"reduce the learning rate (currently {learning_rate})"
            )
        prev_loss = loss
        if it % record_every == 0:
            history.append(loss)
    resid = X @ theta - y
    final = 0.5 * float(resid @ resid) / m
    if not converged:
        logger.warning("gradient descent hit max_iters=%d before grad_tol", max_iters)
    return GradientDescentResult(theta, final, it, converged, np.asarray(history))


def unscale_params(theta_z, stats: ScalingStats) -> ThermalParams:
    """Map scaled-problem parameters back to physical ``ThermalParams``.

    Raises :class:`FitRejectedError` when RC or beta_r come out non-positive.
    """
    theta_z = np.asarray(theta_z, dtype=float)
    theta = stats.y_std / stats.x_std * theta_z[:3]
    const = stats.y_mean - float(theta @ stats.x_mean) + stats.y_std * theta_z[3]
    rc, beta_r, beta_bias_r = (float(v) for v in theta)
    if rc <= 0 or beta_r <= 0:
        raise FitRejectedError(
            f"physically invalid fit: rc={rc:.6g}, beta_r={beta_r:.6g} (both must be > 0)"
        )
    return ThermalParams(rc, beta_r, beta_bias_r, float(const + stats.ambient))


def predict_rows(params: ThermalParams, rs: RegressionSet) -> np.ndarray:
    """Predicted targets ``T - T_amb`` of each regression row."""
    theta = np.array([params.rc, params.beta_r, params.beta_bias_r, params.t_offset - rs.ambient])
    return rs.features @ theta


# --------------------------------------------------------------------------
# end to end
# --------------------------------------------------------------------------


@dataclass
class FitSettings:
    temp_cutoff: float = TEMP_CUTOFF_HZ
    effort_cutoff: float = EFFORT_CUTOFF_HZ
    learning_rate: float = 0.1
    max_iters: int = 200_000
    grad_tol: float = 1e-9
    actuator: str | None = None


@dataclass
class FitReport:
    node: str
    actuator: str
    loss: float
    iterations: int
    converged: bool
    rmse: float
    rows: int
    loss_history: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))

    def to_dict(self) -> dict:
        return {
            "node": self.node,
            "actuator": self.actuator,
            "loss": float(self.loss),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "open_loop_rmse_c": float(self.rmse),
            "rows": int(self.rows),
        }


def fit(log: TelemetryLog, node: str, settings: FitSettings | None = None):
    """Identify the thermal parameters of one node.

    Returns ``(ThermalParams, FitReport)``.
    """
    settings = settings or FitSettings()
    actuator = settings.actuator or log.actuator_for(node)
    rs = build_regression(log, node, settings.temp_cutoff, settings.effort_cutoff, actuator)
    scaled, stats = zscore(rs)
    gd = batch_gradient_descent(
        scaled, settings.learning_rate, settings.max_iters, settings.grad_tol
    )
    params = unscale_params(gd.theta, stats)
    rmse = evaluate_open_loop(params, log, node, actuator=actuator)
    report = FitReport(node, actuator, gd.loss, gd.iterations, gd.converged, rmse, len(rs), gd.loss_history)
    return params, report


def open_loop_prediction(
    params: ThermalParams,
    log: TelemetryLog,
    node: str | None = None,
    actuator: str | None = None,
    initial: float | None = None,
) -> np.ndarray:
    """Euler-integrate the model on logged efforts, never reading temperatures.

    Starts at the log's first ambient sample unless ``initial`` is given.
    Steps longer than ``rc / 100`` are subdivided.
    """
    if actuator is None:
        if node is None:
            raise InvalidInputError("need a node or an actuator")
        actuator = log.actuator_for(node)
    efforts = log.efforts[actuator]
    t = log.sample_times
    out = np.empty(len(t))
    if len(t) == 0:
        return out
    temp = float(log.ambient_series()[0]) if initial is None else float(initial)
    out[0] = temp
    max_dt = params.rc / 100.0
    for i in range(1, len(t)):
        span = t[i] - t[i - 1]
        n_sub = max(1, math.ceil(span / max_dt - 1e-9))
        h = span / n_sub
        effort = float(efforts[i - 1])
        for _ in range(n_sub):
            temp = step_euler(params, temp, effort, h)
        out[i] = temp
    return out


def evaluate_open_loop(params: ThermalParams, log: TelemetryLog, node: str, actuator: str | None = None) -> float:
    """RMSE in degC between the open-loop prediction and the logged node."""
    pred = open_loop_prediction(params, log, node, actuator)
    err = pred - log.temperatures[node]
    return float(np.sqrt(np.mean(err**2)))


# --------------------------------------------------------------------------
# synthetic telemetry
# --------------------------------------------------------------------------


def squat_stand_schedule(
    duration: float,
    sample_rate: float = 10.0,
    interval: float = 270.0,
    squat_levels: Sequence[float] = (150.0, 100.0, 125.0, 75.0),
    stand_levels: Sequence[float] = (-150.0, -100.0, -125.0, -75.0),
) -> np.ndarray:
    """Piecewise-constant effort alternating squat and stand holds.

    Each hold lasts ``interval`` seconds; the level cycles through the given
    lists so the log excites F^2 and F independently.
    """
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    hold = np.floor(t / interval).astype(int)
    cycle = hold // 2
    squat = np.asarray(squat_levels, dtype=float)[cycle % len(squat_levels)]
    stand = np.asarray(stand_levels, dtype=float)[cycle % len(stand_levels)]
    return np.where(hold % 2 == 0, squat, stand)


def synthesize_log(
    nodes: Mapping[str, tuple[ThermalParams, str]],
    efforts: Mapping[str, np.ndarray],
    sample_rate: float = 10.0,
    ambient: float = DEFAULT_AMBIENT_C,
    noise: float = 0.0,
    seed: int | None = 0,
    initial: Mapping[str, float] | float | None = None,
) -> TelemetryLog:
    """Exact (zero-order-hold) telemetry from known node parameters.

    ``nodes`` maps node id to ``(params, actuator id)``.  Gaussian sensor
    noise of standard deviation ``noise`` is added to the temperatures.
    """
    efforts = {k: np.asarray(v, dtype=float) for k, v in efforts.items()}
    n = len(next(iter(efforts.values()))) if efforts else 0
    t = np.arange(n) / sample_rate
    dt = 1.0 / sample_rate
    rng = np.random.default_rng(seed)
    temps = {}
    for name, (params, act) in nodes.items():
        f = efforts[act]
        ss = f * f * params.beta_r - f * params.beta_bias_r + params.t_offset
        decay = math.exp(-dt / params.rc)
        if initial is None:
            t0 = ambient
        elif isinstance(initial, Mapping):
            t0 = initial.get(name, ambient)
        else:
            t0 = float(initial)
        x = np.empty(n)
        if n:
            # T[i] = T[i-1] e^{-dt/RC} + ss[i-1] (1 - e^{-dt/RC}), T[0] = t0
            x[:] = signal.lfilter([0.0, 1.0 - decay], [1.0, -decay], ss, zi=[t0])[0]
        temps[name] = x
    if noise > 0:
        for name in temps:
            temps[name] = temps[name] + rng.normal(0.0, noise, n)
    return TelemetryLog(t, temps, efforts, ambient)
