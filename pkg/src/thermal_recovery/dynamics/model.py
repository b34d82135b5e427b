"""Planar floating-base robot description and forward kinematics.

Coordinates live in the sagittal x-z plane with z up.  Angles are measured
counter-clockwise from +x toward +z.  For a floating base the generalized
coordinates are ``q = (x, z, pitch, joint_1, ..., joint_m)``; for a fixed
base only the joint angles remain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

from ..errors import InfeasibleCommandError, InvalidInputError, SchemaError, TopologyError

GRAVITY = 9.81
CONTACT_ROWS = {"point": 2, "flat": 3}


def _perp(v):
    # d/dphi of R(phi) v, i.e. v rotated by +90 degrees
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def _rot(phi):
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, -s], [s, c]])


def wrap_angle(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


@dataclass(frozen=True)
class Link:
    name: str
    mass: float
    com: np.ndarray
    inertia: float


@dataclass(frozen=True)
class Joint:
    name: str
    parent: str
    child: str
    origin: np.ndarray
    axis: float = 1.0
    limits: tuple[float, float] = (-math.pi, math.pi)


@dataclass(frozen=True)
class ActuatorGroup:
    """Effort sources driving one or two joints.

    ``kind="direct"``: one rotary actuator, effort equals joint torque.
    ``kind="pair"``: two linear pushrods driving a (pitch, roll) joint pair
    through a lever of arm ``lever`` and lateral ``separation``; joint
    torques follow ``tau = [[r c, r c], [d, -d]] @ F`` with ``c = cos(pitch)``.
    """

    kind: str
    names: tuple[str, ...]
    joints: tuple[str, ...]
    lever: float = 0.0
    separation: float = 0.0


@dataclass(frozen=True)
class ContactFrame:
    name: str
    link: str
    offset: np.ndarray
    kind: str = "flat"
    anchor: np.ndarray | None = None

    @property
    def rows(self) -> int:
        return CONTACT_ROWS[self.kind]


@dataclass(frozen=True)
class ContactConfig:
    """A named, ordered set of active contact frames."""

    name: str
    frames: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))

    @classmethod
    def none(cls) -> "ContactConfig":
        return cls("none", ())

    def __bool__(self):
        return bool(self.frames)


@dataclass
class FrameState:
    """Forward kinematics of every link at one configuration."""

    position: np.ndarray  # (links, 2) link frame origins
    angle: np.ndarray  # (links,)
    com: np.ndarray  # (links, 2) centres of mass in world


class RobotModel:
    """Immutable planar multi-body model; build with :func:`load_model`."""

    def __init__(
        self,
        name: str,
        links: Sequence[Link],
        joints: Sequence[Joint],
        actuators: Sequence[ActuatorGroup],
        contacts: Sequence[ContactFrame],
        contact_sets: Mapping[str, Sequence[str]],
        floating: bool = True,
        base_pose: Sequence[float] = (0.0, 0.0, 0.0),
        gravity: float = GRAVITY,
        poses: Mapping[str, Mapping[str, float]] | None = None,
    ):
        self.name = name
        self.links = tuple(links)
        self.joints = tuple(joints)
        self.actuator_groups = tuple(actuators)
        self.contacts = {c.name: c for c in contacts}
        self.contact_sets = {k: ContactConfig(k, tuple(v)) for k, v in contact_sets.items()}
        self.floating = floating
        self.base_pose = np.asarray(base_pose, dtype=float)
        self.gravity = float(gravity)
        self.poses = {k: dict(v) for k, v in (poses or {}).items()}

        self.link_index = {l.name: i for i, l in enumerate(self.links)}
        self.joint_index = {j.name: i for i, j in enumerate(self.joints)}
        self.n_base = 3 if floating else 0
        self.n_joints = len(self.joints)
        self.n = self.n_base + self.n_joints
        self.m = self.n_joints
        self.actuator_names = [a for g in self.actuator_groups for a in g.names]
        self.actuator_index = {a: i for i, a in enumerate(self.actuator_names)}

        child_of = {j.child: j for j in self.joints}
        self.root = next(l.name for l in self.links if l.name not in child_of)
        # topological order of joints; the loader has already rejected loops
        order, frontier = [], [self.root]
        while frontier:
            parent = frontier.pop(0)
            for j in self.joints:
                if j.parent == parent:
                    order.append(j)
                    frontier.append(j.child)
        self._joint_order = order
        self._parent_joint = {j.child: j for j in self.joints}
        chain = {self.root: []}
        for j in order:
            chain[j.child] = chain[j.parent] + [self.joint_index[j.name]]
        self._chain = [np.array(chain[l.name], dtype=int) for l in self.links]
        self._joint_child = np.array([self.link_index[j.child] for j in self.joints], dtype=int)
        # ancestor mask (links x joints) scaled by joint axis
        self._chain_axis = np.zeros((len(self.links), len(self.joints)))
        for li, ch in enumerate(self._chain):
            self._chain_axis[li, ch] = [self.joints[k].axis for k in ch]

        self._masses = np.array([l.mass for l in self.links])
        self._inertias = np.array([l.inertia for l in self.links])
        self._coms = np.array([l.com for l in self.links], dtype=float)
        self._axes = np.array([j.axis for j in self.joints], dtype=float)
        lo = [-np.inf] * self.n_base + [j.limits[0] for j in self.joints]
        hi = [np.inf] * self.n_base + [j.limits[1] for j in self.joints]
        self.lower = np.array(lo)
        self.upper = np.array(hi)
        self.selector = np.hstack([np.zeros((self.m, self.n_base)), np.eye(self.m)])

        # which block each coordinate belongs to, for step-size scaling
        self.blocks = np.array(["base_linear"] * min(2, self.n_base) + ["base_rotary"] * (self.n_base > 0)
                               + ["actuated"] * self.m)

    # ------------------------------------------------------------------ info

    @property
    def total_mass(self) -> float:
        return float(self._masses.sum())

    @property
    def coordinate_names(self) -> list[str]:
        base = ["base_x", "base_z", "base_pitch"] if self.floating else []
        return base + [j.name for j in self.joints]

    def contact_config(self, name: str) -> ContactConfig:
        if name in ("none", "", None):
            return ContactConfig.none()
        try:
            return self.contact_sets[name]
        except KeyError:
            raise InvalidInputError(
                f"unknown contact set {name!r}; available: {sorted(self.contact_sets)}"
            ) from None

    def contact_rows(self, contact: ContactConfig) -> int:
        return sum(self._frame(f).rows for f in contact.frames)

    def _frame(self, name) -> ContactFrame:
        try:
            return self.contacts[name]
        except KeyError:
            raise InvalidInputError(
                f"unknown contact frame {name!r}; available: {sorted(self.contacts)}"
            ) from None

    def configuration(self, joints: Mapping[str, float] | None = None, base=None) -> np.ndarray:
        """Assemble ``q`` from a joint-angle mapping (missing joints are 0)."""
        q = np.zeros(self.n)
        if self.floating and base is not None:
            q[:3] = base
        for name, val in (joints or {}).items():
            if name not in self.joint_index:
                raise InvalidInputError(f"unknown joint {name!r}")
            q[self.n_base + self.joint_index[name]] = float(val)
        return q

    def within_limits(self, q, tol=1e-12) -> bool:
        return bool(np.all(q >= self.lower - tol) and np.all(q <= self.upper + tol))

    def clamp(self, q) -> np.ndarray:
        return np.clip(q, self.lower, self.upper)

    # ------------------------------------------------------------ kinematics

    def _base(self, q):
        if self.floating:
            return q[:2], q[2]
        return self.base_pose[:2], self.base_pose[2]

    def forward_kinematics(self, q) -> FrameState:
        q = np.asarray(q, dtype=float)
        nl = len(self.links)
        pos = np.zeros((nl, 2))
        ang = np.zeros(nl)
        r = self.link_index[self.root]
        pos[r], ang[r] = self._base(q)
        for j in self._joint_order:
            p = self.link_index[j.parent]
            c = self.link_index[j.child]
            pos[c] = pos[p] + _rot(ang[p]) @ j.origin
            ang[c] = ang[p] + j.axis * q[self.n_base + self.joint_index[j.name]]
        cs, sn = np.cos(ang), np.sin(ang)
        com = pos + np.stack([cs * self._coms[:, 0] - sn * self._coms[:, 1],
                              sn * self._coms[:, 0] + cs * self._coms[:, 1]], axis=1)
        return FrameState(pos, ang, com)

    def point_jacobian(self, q, link: str, point, fk: FrameState | None = None):
        """Linear (2 x n) and angular (n,) Jacobian of a world point fixed to ``link``."""
        fk = fk or self.forward_kinematics(q)
        li = self.link_index[link]
        return self._point_jacobian(fk, li, np.asarray(point, dtype=float))

    def _point_jacobian(self, fk, li, point):
        Jv = np.zeros((2, self.n))
        Jw = np.zeros(self.n)
        if self.floating:
            r = self.link_index[self.root]
            Jv[:, :2] = np.eye(2)
            Jv[:, 2] = _perp(point - fk.position[r])
            Jw[2] = 1.0
        chain = self._chain[li]
        if chain.size:
            child_pos = fk.position[self._joint_child[chain]]
            cols = self.n_base + chain
            Jv[:, cols] = (_perp(point - child_pos) * self._axes[chain, None]).T
            Jw[cols] = self._axes[chain]
        return Jv, Jw

    def com_jacobians(self, q, fk: FrameState | None = None):
        """Stacked COM Jacobians: linear ``(links, 2, n)`` and angular ``(links, n)``."""
        fk = fk or self.forward_kinematics(q)
        nl = len(self.links)
        Jv = np.zeros((nl, 2, self.n))
        Jw = np.zeros((nl, self.n))
        if self.floating:
            r = self.link_index[self.root]
            Jv[:, 0, 0] = 1.0
            Jv[:, 1, 1] = 1.0
            Jv[:, :, 2] = _perp(fk.com - fk.position[r])
            Jw[:, 2] = 1.0
        if self.m:
            jpos = fk.position[self._joint_child]
            arm = _perp(fk.com[:, None, :] - jpos[None, :, :]) * self._chain_axis[:, :, None]
            Jv[:, :, self.n_base:] = arm.transpose(0, 2, 1)
            Jw[:, self.n_base:] = self._chain_axis
        return Jv, Jw, fk

    def frame_pose(self, q, frame: str, fk: FrameState | None = None) -> np.ndarray:
        """World pose ``(x, z, angle)`` of a contact frame."""
        cf = self._frame(frame)
        fk = fk or self.forward_kinematics(q)
        li = self.link_index[cf.link]
        p = fk.position[li] + _rot(fk.angle[li]) @ cf.offset
        return np.array([p[0], p[1], fk.angle[li]])

    def frame_jacobian(self, q, frame: str, fk: FrameState | None = None) -> np.ndarray:
        cf = self._frame(frame)
        fk = fk or self.forward_kinematics(q)
        li = self.link_index[cf.link]
        p = fk.position[li] + _rot(fk.angle[li]) @ cf.offset
        Jv, Jw = self._point_jacobian(fk, li, p)
        return Jv if cf.kind == "point" else np.vstack([Jv, Jw])

    def contact_targets(self, contact: ContactConfig, q_ref=None) -> dict[str, np.ndarray]:
        """Anchor poses of ``contact``'s frames (from ``q_ref`` when not anchored)."""
        out = {}
        for f in contact.frames:
            cf = self._frame(f)
            if cf.anchor is not None:
                out[f] = np.asarray(cf.anchor, dtype=float)
            elif q_ref is not None:
                out[f] = self.frame_pose(q_ref, f)
            else:
                raise InvalidInputError(f"contact frame {f!r} has no anchor and no reference pose")
        return out

    def contact_residual(self, q, contact: ContactConfig, targets=None, fk=None) -> np.ndarray:
        """Stacked pose error of active frames (position rows, then angle row for flat)."""
        targets = targets if targets is not None else self.contact_targets(contact)
        fk = fk or self.forward_kinematics(q)
        res = []
        for f in contact.frames:
            cf = self._frame(f)
            pose = self.frame_pose(q, f, fk)
            err = pose - np.asarray(targets[f], dtype=float)
            err[2] = wrap_angle(err[2])
            res.append(err[: cf.rows])
        return np.concatenate(res) if res else np.zeros(0)

    def project_to_contacts(self, q, contact: ContactConfig, targets=None, tol=1e-12,
                            max_iter=50, free=None):
        """Pull ``q`` onto the contact manifold with minimum-norm Gauss-Newton steps.

        ``free`` optionally restricts which coordinates may move (boolean mask).
        """
        from .statics import contact_jacobian

        q = np.array(q, dtype=float)
        if not contact:
            return q
        targets = targets if targets is not None else self.contact_targets(contact, q)
        cols = np.ones(self.n, bool) if free is None else np.asarray(free, bool)
        for _ in range(max_iter):
            r = self.contact_residual(q, contact, targets)
            if np.max(np.abs(r)) <= tol:
                return q
            J = contact_jacobian(self, q, contact)
            q[cols] -= np.linalg.lstsq(J[:, cols], r, rcond=1e-10)[0]
        r = self.contact_residual(q, contact, targets)
        if np.max(np.abs(r)) > 1e-8:
            raise InfeasibleCommandError(
                f"could not satisfy contacts {contact.name!r}: residual {np.max(np.abs(r)):.3g}"
            )
        return q

    def pose(self, name: str, contact: ContactConfig | None = None) -> np.ndarray:
        """A named joint posture from the model file, with the base placed so
        that ``contact`` (default: the first contact set) is satisfied."""
        try:
            joints = self.poses[name]
        except KeyError:
            raise InvalidInputError(f"unknown pose {name!r}; available: {sorted(self.poses)}") from None
        base = joints.get("base")
        q = self.configuration({k: v for k, v in joints.items() if k != "base"}, base)
        if contact is None and self.contact_sets:
            contact = next(iter(self.contact_sets.values()))
        if contact and self.floating:
            base_only = np.arange(self.n) < self.n_base
            try:
                q = self.project_to_contacts(q, contact, free=base_only)
            except InfeasibleCommandError:
                q = self.project_to_contacts(q, contact)
        return q

    def potential_energy(self, q) -> float:
        fk = self.forward_kinematics(q)
        return float(self.gravity * self._masses @ fk.com[:, 1])


# -------------------------------------------------------------------- loading


def _vec(v, n, where):
    try:
        arr = np.asarray(v, dtype=float).reshape(n)
    except (TypeError, ValueError):
        raise SchemaError(f"{where}: expected {n} numbers, got {v!r}") from None
    if not np.all(np.isfinite(arr)):
        raise SchemaError(f"{where}: values must be finite")
    return arr


def _unique(items, section):
    seen = set()
    for i, it in enumerate(items):
        name = it.get("name") if isinstance(it, dict) else None
        if not name:
            raise SchemaError(f"{section}[{i}]: missing name")
        if name in seen:
            raise SchemaError(f"{section}[{i}]: duplicate name {name!r}")
        seen.add(name)


def load_model(document) -> RobotModel:
    """Build a validated :class:`RobotModel`.

    ``document`` is a mapping, a path to a YAML file, or the name of a
    bundled fixture (``"biped"``, ``"pendulum"``, ``"pair_arm"``).
    """
    if isinstance(document, (str, Path)):
        doc = yaml.safe_load(_read_model_text(document))
    else:
        doc = document
    if not isinstance(doc, dict):
        raise SchemaError("model document must be a mapping")
    for section in ("links", "joints"):
        if not isinstance(doc.get(section), list):
            raise SchemaError(f"missing or invalid section {section!r}")

    _unique(doc["links"], "links")
    _unique(doc["joints"], "joints")
    links = []
    for i, l in enumerate(doc["links"]):
        where = f"links[{i}] ({l['name']})"
        mass = float(l.get("mass", 0.0))
        if not mass > 0:
            raise SchemaError(f"{where}.mass: must be positive, got {mass}")
        inertia = float(l.get("inertia", 0.0))
        if inertia < 0:
            raise SchemaError(f"{where}.inertia: must be non-negative")
        links.append(Link(l["name"], mass, _vec(l.get("com", [0, 0]), 2, f"{where}.com"), inertia))
    link_names = {l.name for l in links}

    joints = []
    for i, j in enumerate(doc["joints"]):
        where = f"joints[{i}] ({j['name']})"
        jtype = j.get("type", "revolute")
        if jtype != "revolute":
            raise SchemaError(f"{where}.type: unsupported joint type {jtype!r}")
        for key in ("parent", "child"):
            if j.get(key) not in link_names:
                raise SchemaError(f"{where}.{key}: unknown link {j.get(key)!r}")
        lim = tuple(_vec(j.get("limits", [-math.pi, math.pi]), 2, f"{where}.limits"))
        if lim[0] >= lim[1]:
            raise SchemaError(f"{where}.limits: lower bound must be below upper bound")
        axis = float(j.get("axis", 1.0))
        if axis not in (1.0, -1.0):
            raise SchemaError(f"{where}.axis: must be +1 or -1")
        joints.append(Joint(j["name"], j["parent"], j["child"],
                            _vec(j.get("origin", [0, 0]), 2, f"{where}.origin"), axis, lim))
    _check_tree(links, joints)

    base = doc.get("base", {"type": "floating"})
    if isinstance(base, str):
        base = {"type": base}
    btype = base.get("type", "floating")
    if btype not in ("floating", "fixed"):
        raise SchemaError(f"base.type: expected 'floating' or 'fixed', got {btype!r}")

    joint_names = [j.name for j in joints]
    actuators, bound = [], {}
    raw_acts = doc.get("actuators")
    if raw_acts is None:
        raw_acts = [{"name": n, "joint": n} for n in joint_names]
    act_names = set()
    for i, a in enumerate(raw_acts):
        kind = a.get("kind", "direct")
        where = f"actuators[{i}]"
        if kind == "direct":
            names, js = (a.get("name"),), (a.get("joint"),)
            group = ActuatorGroup("direct", names, js)
        elif kind == "pair":
            names = tuple(a.get("names", ()))
            js = tuple(a.get("joints", ()))
            if len(names) != 2 or len(js) != 2:
                raise SchemaError(f"{where}: a pair needs two names and two joints (pitch, roll)")
            lever, sep = float(a.get("lever", 0)), float(a.get("separation", 0))
            if not (lever > 0 and sep > 0):
                raise SchemaError(f"{where}: lever and separation must be positive")
            group = ActuatorGroup("pair", names, js, lever, sep)
        else:
            raise SchemaError(f"{where}.kind: unknown actuator kind {kind!r}")
        for nm in names:
            if not nm:
                raise SchemaError(f"{where}: missing actuator name")
            if nm in act_names:
                raise SchemaError(f"{where}: duplicate actuator name {nm!r}")
            act_names.add(nm)
        for jn in js:
            if jn not in joint_names:
                raise SchemaError(f"{where}: unknown joint {jn!r}")
            if jn in bound:
                raise SchemaError(f"{where}: joint {jn!r} already driven by {bound[jn]!r}")
            bound[jn] = names[0]
        actuators.append(group)
    unbound = [j for j in joint_names if j not in bound]
    if unbound:
        raise SchemaError(f"joints without an actuator: {unbound}")

    contacts = []
    raw_contacts = doc.get("contacts", []) or []
    _unique(raw_contacts, "contacts")
    for i, c in enumerate(raw_contacts):
        where = f"contacts[{i}] ({c['name']})"
        if c.get("link") not in link_names:
            raise SchemaError(f"{where}.link: unknown link {c.get('link')!r}")
        kind = c.get("kind", "flat")
        if kind not in CONTACT_ROWS:
            raise SchemaError(f"{where}.kind: expected 'point' or 'flat'")
        anchor = c.get("anchor")
        contacts.append(ContactFrame(
            c["name"], c["link"], _vec(c.get("offset", [0, 0]), 2, f"{where}.offset"), kind,
            None if anchor is None else _vec(anchor, 3, f"{where}.anchor"),
        ))
    names = {c.name for c in contacts}
    sets = doc.get("contact_sets", {}) or {}
    for k, frames in sets.items():
        if not frames:
            raise SchemaError(f"contact_sets.{k}: needs at least one frame")
        for f in frames:
            if f not in names:
                raise SchemaError(f"contact_sets.{k}: unknown contact frame {f!r}")

    return RobotModel(
        doc.get("name", "robot"),
        links, joints, actuators, contacts, sets,
        floating=btype == "floating",
        base_pose=_vec(base.get("pose", [0, 0, 0]), 3, "base.pose"),
        gravity=float(doc.get("gravity", GRAVITY)),
        poses=doc.get("poses"),
    )


def _check_tree(links, joints):
    parents = {}
    for j in joints:
        if j.child in parents:
            raise TopologyError(
                f"joint {j.name!r}: link {j.child!r} already has parent joint {parents[j.child]!r}"
            )
        if j.child == j.parent:
            raise TopologyError(f"joint {j.name!r}: link {j.child!r} is its own parent")
        parents[j.child] = j.name
    roots = [l.name for l in links if l.name not in parents]
    if len(roots) != 1:
        raise TopologyError(f"expected exactly one root link, found {roots or 'none (loop)'}")
    by_child = {j.child: j for j in joints}
    for l in links:
        seen, cur = [], l.name
        while cur in by_child:
            if cur in seen:
                raise TopologyError(f"kinematic loop through links {seen}")
            seen.append(cur)
            cur = by_child[cur].parent


def _read_model_text(document) -> str:
    p = Path(document)
    if p.suffix in (".yaml", ".yml", ".json") or p.exists():
        return p.read_text()
    name = str(document)
    res = resources.files("thermal_recovery.dynamics") / "fixtures" / f"{name}.yaml"
    if not res.is_file():
        raise SchemaError(f"no model file or bundled fixture named {name!r}")
    return res.read_text()


def fixture_path(name: str) -> Path:
    return Path(str(resources.files("thermal_recovery.dynamics") / "fixtures" / f"{name}.yaml"))
