"""Contact-switching thermal recovery against a quasi-static plant.

The policy keeps a small menu of contact sets. Whenever it re-plans, it
re-weights the cost matrix from the sensed temperatures. It then runs one
thermal descent per contact set and moves the plant to whichever
(contact, configuration) pair predicts the lowest potential. The baseline
instead holds the configuration that minimizes squared joint torque and
ignores temperatures entirely.

The plant is deliberately simple. The configuration follows the command
exactly, torques come from statics, and each node is integrated with
explicit Euler.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

from .dynamics.model import ContactConfig, RobotModel, load_model
from .dynamics.statics import solve_statics
from .errors import (
    InfeasibleCommandError,
    InvalidInputError,
    NoStrategyError,
    ThermalRecoveryError,
)
from .thermal_core import ThermalParams, load_params, step_euler
from .thermal_ik import DescentResult, DescentSettings, ThermalScene, descend, minimize_objective

__all__ = [
    "RecoveryPolicy",
    "PlantState",
    "Plant",
    "Strategy",
    "RecoveryReport",
    "Scenario",
    "update_cost_matrix",
    "select_strategy",
    "min_effort_configuration",
    "simulate_plant",
    "run_recovery",
    "load_scenario",
]

CONTACT_TOL = 1e-3


@dataclass(frozen=True)
class RecoveryPolicy:
    """Thresholds, weights and timing of the recovery loop.

    ``reweight_threshold`` is the temperature above which a node receives the
    hot weight; it defaults to the safe threshold. ``horizon_rule`` is
    ``"fixed"`` (use ``horizon``) or ``"half_rc"`` (half the smallest time
    constant among hot nodes). ``time_budget`` caps simulated seconds.
    """

    contacts: tuple[str, ...] = ("double", "left_support", "right_support")
    warning: float = 75.0
    safe: float = 70.0
    hot_weight: float = 1e3
    nominal_weight: float = 1.0
    reweight_threshold: float | None = None
    horizon: float = 20.0
    horizon_rule: str = "fixed"
    nominal_pose: str = "nominal"
    nominal_contact: str = "double"
    transition: float = 2.0
    dt: float = 0.1
    time_budget: float = 900.0

    def __post_init__(self):
        object.__setattr__(self, "contacts", tuple(self.contacts))
        if not self.contacts:
            raise InvalidInputError("policy needs at least one contact set")
        if not self.safe < self.warning:
            raise InvalidInputError(f"safe threshold {self.safe} must be below warning {self.warning}")
        if not (self.hot_weight > 0 and self.nominal_weight > 0):
            raise InvalidInputError("cost weights must be positive")
        if not self.horizon > 0:
            raise InvalidInputError("horizon must be positive")
        if self.horizon_rule not in ("fixed", "half_rc"):
            raise InvalidInputError(f"horizon_rule must be 'fixed' or 'half_rc', got {self.horizon_rule!r}")
        if not (self.dt > 0 and self.transition >= 0 and self.time_budget > 0):
            raise InvalidInputError("dt, transition and time_budget must be positive")

    @property
    def trigger(self) -> float:
        return self.safe if self.reweight_threshold is None else self.reweight_threshold

    @classmethod
    def from_dict(cls, d: Mapping) -> "RecoveryPolicy":
        known = set(cls.__dataclass_fields__)
        extra = sorted(set(d) - known)
        if extra:
            raise InvalidInputError(f"unknown policy fields {extra}")
        return cls(**dict(d))

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def update_cost_matrix(policy: RecoveryPolicy, temperatures) -> np.ndarray:
    """Diagonal cost matrix: hot weight where a node exceeds the trigger."""
    T = np.asarray(temperatures, dtype=float)
    return np.diag(np.where(T > policy.trigger, policy.hot_weight, policy.nominal_weight))


def horizon_for(policy: RecoveryPolicy, scene: ThermalScene, temperatures) -> float:
    if policy.horizon_rule == "fixed":
        return policy.horizon
    hot = [n for n, t in zip(scene.node_ids, temperatures) if t > policy.trigger]
    pool = hot or scene.node_ids
    return min(scene.params[n].rc for n in pool) / 2.0


# ------------------------------------------------------------------- plant


@dataclass
class PlantState:
    q: np.ndarray
    temperatures: np.ndarray
    time: float
    contact: str

    def copy(self) -> "PlantState":
        return PlantState(self.q.copy(), self.temperatures.copy(), self.time, self.contact)


@dataclass
class Plant:
    """Quasi-static robot with thermal nodes; ``state`` advances in place."""

    model: RobotModel
    scene: ThermalScene
    state: PlantState

    def __post_init__(self):
        self.scene.check_bindings(self.model)
        self._act = np.array([self.model.actuator_index[self.scene.bindings[n]] for n in self.scene.node_ids])
        self._params = [self.scene.params[n] for n in self.scene.node_ids]

    @property
    def max_dt(self) -> float:
        return min(p.rc for p in self._params) / 100.0

    def copy(self) -> "Plant":
        return Plant(self.model, self.scene, self.state.copy())

    def efforts(self, q, contact: ContactConfig) -> np.ndarray:
        return solve_statics(self.model, q, contact, check=False).efforts

    def step(self, q, contact: ContactConfig, dt: float) -> np.ndarray:
        """Hold ``q`` for ``dt`` seconds; returns the node efforts used."""
        if contact:
            r = self.model.contact_residual(q, contact)
            if np.max(np.abs(r)) > CONTACT_TOL:
                raise InfeasibleCommandError(
                    f"command at t={self.state.time:.2f}s violates contact set {contact.name!r} "
                    f"by {np.max(np.abs(r)):.3g}")
        eff = self.efforts(q, contact)[self._act]
        T = self.state.temperatures
        self.state.temperatures = np.array([
            step_euler(p, t, float(f), dt) for p, t, f in zip(self._params, T, eff)])
        self.state.q = np.array(q, dtype=float)
        self.state.contact = contact.name
        # avoid accumulating round-off over thousands of steps
        self.state.time = round(self.state.time + dt, 9)
        return eff


def simulate_plant(plant: Plant, trajectory: Sequence, dt: float, contact: ContactConfig | str | None = None):
    """Drive ``plant`` through a sequence of commanded configurations.

    ``trajectory`` holds one configuration per step (or ``(q, contact)``
    pairs). Returns a list of state snapshots, one per step, after the step.
    """
    if not dt > 0:
        raise InvalidInputError(f"dt must be positive, got {dt}")
    if dt > plant.max_dt * (1 + 1e-12):
        raise InvalidInputError(f"dt={dt} exceeds the stable Euler step {plant.max_dt:.4g} s (RC/100)")
    default = _as_contact(plant.model, contact if contact is not None else plant.state.contact)
    out = []
    for cmd in trajectory:
        if isinstance(cmd, tuple):
            q, c = cmd[0], _as_contact(plant.model, cmd[1])
        else:
            q, c = cmd, default
        plant.step(q, c, dt)
        out.append(plant.state.copy())
    return out


def _as_contact(model, c) -> ContactConfig:
    return c if isinstance(c, ContactConfig) else model.contact_config(c)


# ---------------------------------------------------------------- strategy


@dataclass
class Strategy:
    contact: str
    q: np.ndarray
    f: float
    per_contact: dict[str, float]
    predicted: dict[str, np.ndarray]
    results: dict[str, DescentResult | None]


def _nominal_start(model, policy, contact):
    q_nom = model.pose(policy.nominal_pose, model.contact_config(policy.nominal_contact))
    return model.project_to_contacts(q_nom, contact) if contact else q_nom


def select_strategy(policy: RecoveryPolicy, scene: ThermalScene, model: RobotModel,
                    plant: PlantState | Plant | None = None, settings: DescentSettings | None = None,
                    cache: dict | None = None) -> Strategy:
    """Pick the contact set and configuration with the lowest predicted potential.

    The scene temperatures are replaced by the plant's sensed ones when a
    plant is given, and its cost weights are recomputed from them. Each
    contact set is descended from the nominal pose. ``cache`` keyed by
    ``(contact, hot pattern)`` reuses earlier minimizers, whose potential is
    re-evaluated at the current temperatures.
    """
    from .thermal_ik import potential, predict_node_temperatures

    if plant is not None:
        st = plant.state if isinstance(plant, Plant) else plant
        scene = scene.with_temperatures(st.temperatures)
    T = scene.t0
    scene = scene.with_weights(np.diag(update_cost_matrix(policy, T)))
    scene = scene.with_horizon(horizon_for(policy, scene, T))
    pattern = tuple(bool(x) for x in T > policy.trigger)
    best = None
    per, pred, results = {}, {}, {}
    errors = []
    for name in policy.contacts:
        c = model.contact_config(name)
        key = (name, pattern)
        try:
            if cache is not None and key in cache:
                q = cache[key]
                results[name] = None
            else:
                res = descend(scene, model, _nominal_start(model, policy, c), c, settings)
                q = res.q
                results[name] = res
                if cache is not None:
                    cache[key] = q
            f = potential(scene, model, q, c)
        except ThermalRecoveryError as exc:
            errors.append(f"{name}: {exc}")
            continue
        per[name] = f
        pred[name] = predict_node_temperatures(scene, model, q, c)
        if best is None or f < best[2]:
            best = (name, q, f)
    if best is None:
        raise NoStrategyError("no contact set admits a descent: " + "; ".join(errors))
    return Strategy(best[0], best[1], best[2], per, pred, results)


def min_effort_configuration(model: RobotModel, q0, contact: ContactConfig | None,
                             settings: DescentSettings | None = None) -> np.ndarray:
    """Configuration minimizing the squared static joint torque (temperature blind)."""
    return _min_effort(model, q0, contact, settings).q


def _min_effort(model, q0, contact, settings=None) -> DescentResult:
    def objective(q):
        tau = solve_statics(model, q, contact, check=False).torque
        return float(tau @ tau), tau

    return minimize_objective(objective, model, q0, contact, settings,
                              aux_names=[j.name for j in model.joints])


# ------------------------------------------------------------------ report


@dataclass
class RecoveryReport:
    mode: str
    node_ids: list[str]
    groups: dict[str, list[str]]
    times: np.ndarray
    temperatures: np.ndarray  # (steps, nodes)
    contacts: list[str]
    phases: list[str]
    potential: np.ndarray
    schedule: list[dict]
    decisions: list[dict]
    recovered: bool
    timed_out: bool
    safe: float

    def group_norms(self) -> dict[str, np.ndarray]:
        idx = {n: i for i, n in enumerate(self.node_ids)}
        return {g: np.linalg.norm(self.temperatures[:, [idx[n] for n in members]], axis=1)
                for g, members in self.groups.items()}

    def time_to_safe(self) -> dict[str, float | None]:
        """First time each node is below the safe threshold, or None if never."""
        out = {}
        for i, n in enumerate(self.node_ids):
            below = np.nonzero(self.temperatures[:, i] < self.safe)[0]
            out[n] = float(self.times[below[0]]) if below.size else None
        return out

    def group_time_to_safe(self) -> dict[str, float | None]:
        idx = {n: i for i, n in enumerate(self.node_ids)}
        out = {}
        for g, members in self.groups.items():
            ok = np.all(self.temperatures[:, [idx[n] for n in members]] < self.safe, axis=1)
            hit = np.nonzero(ok)[0]
            out[g] = float(self.times[hit[0]]) if hit.size else None
        return out

    def contact_schedule(self) -> list[str]:
        """Contact sets of successive holds, ending with ``"nominal"`` on recovery."""
        seq = []
        for seg in self.schedule:
            label = "nominal" if seg["phase"] == "nominal" else seg["contact"]
            if seg["phase"] in ("hold", "nominal") and (not seq or seq[-1] != label):
                seq.append(label)
        return seq

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "recovered": self.recovered,
            "timed_out": self.timed_out,
            "duration_s": float(self.times[-1]) if len(self.times) else 0.0,
            "contact_schedule": self.contact_schedule(),
            "segments": [{k: (round(v, 6) if isinstance(v, float) else v) for k, v in s.items()}
                         for s in self.schedule],
            "time_to_safe": self.time_to_safe(),
            "group_time_to_safe": self.group_time_to_safe(),
            "decisions": self.decisions,
        }

    def write(self, out_dir, prefix: str | None = None) -> tuple[Path, Path]:
        """``<prefix>_trace.csv`` plus ``<prefix>_summary.yaml`` inside ``out_dir``."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        prefix = prefix or self.mode
        trace = out_dir / f"{prefix}_trace.csv"
        norms = self.group_norms()
        with open(trace, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time_s", "contact", "phase", "f", *[f"{n}_temp_c" for n in self.node_ids],
                        *[f"{g}_norm" for g in norms]])
            for k, t in enumerate(self.times):
                w.writerow([repr(float(t)), self.contacts[k], self.phases[k], repr(float(self.potential[k])),
                            *map(repr, self.temperatures[k].tolist()),
                            *[repr(float(v[k])) for v in norms.values()]])
        summary = out_dir / f"{prefix}_summary.yaml"
        summary.write_text(yaml.safe_dump(self.summary(), sort_keys=False))
        return trace, summary


def read_recovery_trace(path) -> dict:
    """Columns of a recovery trace CSV as arrays (strings for contact/phase)."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = list(r)
    cols = {}
    for j, h in enumerate(header):
        vals = [row[j] for row in rows]
        cols[h] = vals if h in ("contact", "phase") else np.array([float(v) for v in vals])
    return cols


# -------------------------------------------------------------------- loop


class _Recorder:
    def __init__(self, plant: Plant):
        self.plant = plant
        self.times, self.temps, self.contacts, self.phases, self.f = [], [], [], [], []
        self.weights = np.ones(len(plant.scene.node_ids))
        self.schedule = []
        self.record("start")

    def record(self, phase):
        st = self.plant.state
        T = st.temperatures
        self.times.append(st.time)
        self.temps.append(T.copy())
        self.contacts.append(st.contact)
        self.phases.append(phase)
        self.f.append(float(T @ (self.weights * T)))

    def segment(self, phase, contact, start):
        self.schedule.append({"phase": phase, "contact": contact, "start": float(start),
                              "end": float(self.plant.state.time)})


def _interpolate(model, qa, qb, contact, steps, targets):
    out = []
    for k in range(1, steps + 1):
        q = qa + (qb - qa) * (k / steps)
        if contact:
            q = model.project_to_contacts(q, contact, targets)
        out.append(q)
    return out


def _transition(rec: _Recorder, model, policy, q_nom, target_q, target_c: ContactConfig):
    """Move through the nominal pose when the contact set changes."""
    plant = rec.plant
    st = plant.state
    cur_c = model.contact_config(st.contact)
    steps = max(1, int(round(policy.transition / policy.dt)))
    legs = []
    if cur_c.name != target_c.name:
        half = max(1, steps // 2)
        legs.append((st.q, q_nom, cur_c, half))
        legs.append((q_nom, target_q, target_c, max(1, steps - half)))
    elif not np.array_equal(st.q, target_q):
        legs.append((st.q, target_q, target_c, steps))
    if not legs:
        return
    start = st.time
    for qa, qb, c, n in legs:
        targets = model.contact_targets(c, qa) if c else None
        for q in _interpolate(model, np.asarray(qa), np.asarray(qb), c, n, targets):
            plant.step(q, c, policy.dt)
            rec.record("transition")
    rec.segment("transition", target_c.name, start)


def _hold(rec: _Recorder, policy, contact: ContactConfig, duration, deadline, stop_when_safe=True):
    plant = rec.plant
    start = plant.state.time
    steps = max(1, int(round(duration / policy.dt)))
    q = plant.state.q
    status = "elapsed"
    for _ in range(steps):
        if stop_when_safe and np.all(plant.state.temperatures < policy.safe):
            status = "safe"
            break
        if plant.state.time >= deadline - 1e-9:
            status = "timeout"
            break
        plant.step(q, contact, policy.dt)
        rec.record("hold" if stop_when_safe else "nominal")
    if stop_when_safe and status == "elapsed" and np.all(plant.state.temperatures < policy.safe):
        status = "safe"
    rec.segment("hold" if stop_when_safe else "nominal", contact.name, start)
    return status


def run_recovery(plant: Plant, policy: RecoveryPolicy, scene: ThermalScene | None = None,
                 model: RobotModel | None = None, mode: str = "switching",
                 settings: DescentSettings | None = None, groups: Mapping[str, Sequence[str]] | None = None,
                 settle: float | None = None) -> RecoveryReport:
    """Drive ``plant`` until every node is below the safe threshold.

    ``mode`` is ``"switching"`` (re-plan over the contact menu every horizon)
    or ``"min-effort"`` (hold the torque-minimizing stance). After recovery the
    plant returns to the nominal pose and sits there for ``settle`` seconds
    (default one transition). Running out of the simulated time budget is
    reported through ``timed_out``; it does not raise.

    The plant is advanced in place; pass ``plant.copy()`` to keep the original.
    """
    if mode not in ("switching", "min-effort"):
        raise InvalidInputError(f"mode must be 'switching' or 'min-effort', got {mode!r}")
    model = model or plant.model
    scene = scene or plant.scene
    if policy.dt > plant.max_dt * (1 + 1e-12):
        raise InvalidInputError(f"policy dt={policy.dt} exceeds the stable Euler step {plant.max_dt:.4g} s")
    if not np.any(plant.state.temperatures > policy.warning):
        raise InvalidInputError(
            f"no node above the warning threshold {policy.warning} degC; nothing to recover")
    groups = {g: list(v) for g, v in (groups or {"all": scene.node_ids}).items()}
    nom_c = model.contact_config(policy.nominal_contact)
    q_nom = model.pose(policy.nominal_pose, nom_c)
    deadline = plant.state.time + policy.time_budget
    rec = _Recorder(plant)
    decisions = []
    cache: dict = {}
    status = "elapsed"
    fixed = None
    if mode == "min-effort":
        fixed = (nom_c, _min_effort(model, _nominal_start(model, policy, nom_c), nom_c, settings).q)

    while True:
        T = plant.state.temperatures
        rec.weights = np.diag(update_cost_matrix(policy, T)).copy()
        horizon = horizon_for(policy, scene, T)
        if fixed is None:
            strat = select_strategy(policy, scene, model, plant, settings, cache)
            target_c, target_q = model.contact_config(strat.contact), strat.q
            decisions.append({"time": float(plant.state.time), "contact": strat.contact,
                              "f": {k: float(v) for k, v in strat.per_contact.items()}})
        else:
            target_c, target_q = fixed
            if not decisions:
                decisions.append({"time": float(plant.state.time), "contact": target_c.name, "f": {}})
        _transition(rec, model, policy, q_nom, target_q, target_c)
        hold_for = horizon if fixed is None else policy.time_budget
        status = _hold(rec, policy, target_c, hold_for, deadline)
        if status != "elapsed":
            break

    recovered = status == "safe"
    if recovered:
        _transition(rec, model, policy, q_nom, q_nom, nom_c)
        _hold(rec, policy, nom_c, policy.transition if settle is None else settle, math.inf,
              stop_when_safe=False)
    return RecoveryReport(
        mode=mode,
        node_ids=list(scene.node_ids),
        groups=groups,
        times=np.array(rec.times),
        temperatures=np.array(rec.temps),
        contacts=rec.contacts,
        phases=rec.phases,
        potential=np.array(rec.f),
        schedule=rec.schedule,
        decisions=decisions,
        recovered=recovered,
        timed_out=status == "timeout",
        safe=policy.safe,
    )


# ---------------------------------------------------------------- scenario


@dataclass
class Scenario:
    """Everything a recovery experiment needs, usually read from YAML."""

    name: str
    model: RobotModel
    scene: ThermalScene
    policy: RecoveryPolicy
    groups: dict[str, list[str]]
    hot_group: str | None = None
    mode: str = "switching"
    settings: DescentSettings = field(default_factory=DescentSettings)
    start_pose: str | None = None
    seed: int = 0
    generate: dict = field(default_factory=dict)
    source: Path | None = None

    def plant(self) -> Plant:
        nom_c = self.model.contact_config(self.policy.nominal_contact)
        q = self.model.pose(self.start_pose or self.policy.nominal_pose, nom_c)
        return Plant(self.model, self.scene, PlantState(q, self.scene.t0, 0.0, nom_c.name))


def _settings_from(d: Mapping | None) -> DescentSettings:
    d = dict(d or {})
    if "delta_max" in d:
        d["delta_max"] = {**DescentSettings().delta_max, **d["delta_max"]}
    try:
        return DescentSettings(**d)
    except TypeError as exc:
        raise InvalidInputError(f"bad descent settings: {exc}") from None


def load_scenario(path, overrides: Mapping | None = None) -> Scenario:
    """Read a scenario file. Relative paths in it resolve against its folder.

    Bare names (no suffix) resolve to the scenarios bundled with the package.
    """
    path = Path(path)
    if not path.exists() and path.suffix == "":
        from importlib import resources

        path = Path(str(resources.files("thermal_recovery") / "scenarios" / f"{path.name}.yaml"))
    if not path.exists():
        raise InvalidInputError(f"scenario file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise InvalidInputError(f"{path}: not valid YAML ({exc})") from None
    if not isinstance(doc, dict):
        raise InvalidInputError(f"{path}: scenario must be a mapping")
    doc = _merge(doc, overrides or {})
    base = path.parent

    model_ref = doc.get("model", "biped")
    mp = base / str(model_ref)
    model = load_model(mp if mp.exists() else model_ref)

    templates = doc.get("node_templates", {}) or {}
    raw_nodes = doc.get("nodes")
    if not raw_nodes:
        raise InvalidInputError(f"{path}: scenario lists no thermal nodes")
    ids, params, initial, bindings = [], {}, {}, {}
    for i, nd in enumerate(raw_nodes):
        where = f"{path}: nodes[{i}]"
        try:
            nid, act = str(nd["id"]), str(nd["actuator"])
        except (KeyError, TypeError):
            raise InvalidInputError(f"{where}: needs 'id' and 'actuator'") from None
        if "params_file" in nd:
            p = load_params(base / nd["params_file"])
        elif "params" in nd:
            p = ThermalParams.from_dict(nd["params"])
        elif nd.get("template") in templates:
            p = ThermalParams.from_dict(templates[nd["template"]])
        else:
            raise InvalidInputError(f"{where}: no params, params_file or known template")
        ids.append(nid)
        params[nid] = p
        initial[nid] = float(nd.get("initial", p.t_offset))
        bindings[nid] = act
    policy = RecoveryPolicy.from_dict(doc.get("policy", {}) or {})
    scene = ThermalScene(ids, params, initial, bindings, horizon=policy.horizon)
    scene.check_bindings(model)
    groups = {g: list(v) for g, v in (doc.get("groups") or {"all": ids}).items()}
    for g, members in groups.items():
        bad = [m for m in members if m not in params]
        if bad:
            raise InvalidInputError(f"{path}: group {g!r} names unknown nodes {bad}")
    hot = doc.get("hot_group")
    if hot is not None and hot not in groups:
        raise InvalidInputError(f"{path}: hot_group {hot!r} is not a group")
    return Scenario(
        name=str(doc.get("name", path.stem)),
        model=model,
        scene=scene,
        policy=policy,
        groups=groups,
        hot_group=hot,
        mode=str(doc.get("mode", "switching")),
        settings=_settings_from(doc.get("descent")),
        start_pose=doc.get("start_pose"),
        seed=int(doc.get("seed", 0)),
        generate=dict(doc.get("generate", {}) or {}),
        source=path,
    )


def _merge(a: Mapping, b: Mapping) -> dict:
    out = dict(a)
    for k, v in b.items():
        out[k] = _merge(out[k], v) if isinstance(v, Mapping) and isinstance(out.get(k), Mapping) else v
    return out
