"""Domain vocabulary: goals, states, frames, trajectories, labels and episode logs.

All value types are frozen dataclasses holding tuples, so they compare by value
and can be shared between threads. Timestep indices are 0-based everywhere in
this package unless a docstring says otherwise.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Optional, Sequence

from .errors import InvariantViolation, SchemaVersionError

SCHEMA_VERSION = "1.0"

FAMILIES = (
    "pick-only",
    "pick-and-place",
    "open-close-drawer",
    "open-close-door",
    "button",
    "lever-knob",
)
KINDS = ("expert", "deviated", "reversed", "rollout")

Vec = tuple[float, ...]


def _vec(x: Iterable[float]) -> Vec:
    return tuple(float(v) for v in x)


def _finite(v: Sequence[float]) -> bool:
    return all(math.isfinite(x) for x in v)


@dataclass(frozen=True)
class Goal:
    text: str
    family: str

    def __post_init__(self):
        if not self.text.strip():
            raise InvariantViolation("goal text must be non-empty")
        if self.family not in FAMILIES:
            raise InvariantViolation(f"unknown task family {self.family!r}")


@dataclass(frozen=True)
class EnvState:
    gripper_pos: Vec
    gripper_open: bool
    object_pos: Mapping[str, Vec]
    goal_pos: Vec
    contact_points: tuple[tuple[Vec, Vec], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "gripper_pos", _vec(self.gripper_pos))
        object.__setattr__(self, "goal_pos", _vec(self.goal_pos))
        # sorted tuple of pairs keeps the mapping hashable and order-independent
        objs = tuple(sorted((str(k), _vec(v)) for k, v in dict(self.object_pos).items()))
        object.__setattr__(self, "object_pos", _FrozenMap(objs))
        pairs = tuple((_vec(r), _vec(o)) for r, o in self.contact_points)
        object.__setattr__(self, "contact_points", pairs)

    @property
    def dim(self) -> int:
        return len(self.gripper_pos)

    def check(self, n_contacts: Optional[int] = None) -> None:
        d = self.dim
        if d not in (2, 3):
            raise InvariantViolation(f"state dimension must be 2 or 3, got {d}")
        vectors = [self.gripper_pos, self.goal_pos, *self.object_pos.values()]
        for r, o in self.contact_points:
            vectors += [r, o]
        for v in vectors:
            if len(v) != d:
                raise InvariantViolation("state vectors must share one dimension")
            if not _finite(v):
                raise InvariantViolation("state vectors must be finite")
        if n_contacts is not None and len(self.contact_points) != n_contacts:
            raise InvariantViolation("contact count")


class _FrozenMap(Mapping[str, Vec]):
    """Read-only, hashable mapping used for per-object positions."""

    __slots__ = ("_items", "_d")

    def __init__(self, items: tuple[tuple[str, Vec], ...]):
        self._items = items
        self._d = dict(items)

    def __getitem__(self, k):
        return self._d[k]

    def __iter__(self):
        return iter(self._d)

    def __len__(self):
        return len(self._d)

    def __hash__(self):
        return hash(self._items)

    def __eq__(self, other):
        if isinstance(other, Mapping):
            return dict(self._d) == dict(other)
        return NotImplemented

    def __repr__(self):
        return f"{self._d!r}"


@dataclass(frozen=True)
class Frame:
    features: Vec
    source_index: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "features", _vec(self.features))


@dataclass(frozen=True)
class Trajectory:
    """A goal-conditioned sequence of frames with optional simulator channels.

    ``subgoals`` holds 1-based end timesteps of each task segment (one per level
    of the family's non-expert taxonomy); ``meta`` carries free-form provenance
    such as the environment task and dimension.
    """

    goal: Goal
    frames: tuple[Frame, ...]
    kind: str = "expert"
    states: Optional[tuple[EnvState, ...]] = None
    actions: Optional[tuple[Vec, ...]] = None
    length: Optional[int] = None
    subgoals: Optional[tuple[int, ...]] = None
    meta: Mapping[str, Any] = field(default_factory=dict, compare=True, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if self.states is not None:
            object.__setattr__(self, "states", tuple(self.states))
        if self.actions is not None:
            object.__setattr__(self, "actions", tuple(_vec(a) for a in self.actions))
        if self.subgoals is not None:
            object.__setattr__(self, "subgoals", tuple(int(s) for s in self.subgoals))
        if self.length is None:
            object.__setattr__(self, "length", len(self.frames))

    @property
    def T(self) -> int:
        return self.length

    def with_(self, **changes) -> "Trajectory":
        if "frames" in changes and "length" not in changes:
            changes["length"] = len(changes["frames"])
        return replace(self, **changes)


@dataclass(frozen=True)
class ProgressRecord:
    v: float
    p: int
    reasoning: str = ""

    @classmethod
    def from_v(cls, v: float, reasoning: str = "") -> "ProgressRecord":
        return cls(v=float(v), p=int(round(100 * v)), reasoning=reasoning)


@dataclass(frozen=True)
class EpisodeLog:
    trajectory: Trajectory
    predicted_progress: tuple[int, ...]
    served_rewards: tuple[float, ...]
    true_rewards: tuple[float, ...]
    success: bool


def validate_trajectory(t: Trajectory) -> Trajectory:
    """Return ``t`` unchanged, or raise InvariantViolation naming the first broken rule."""
    T = t.length
    if T is None or T < 1:
        raise InvariantViolation("length must be positive")
    if len(t.frames) != T:
        raise InvariantViolation(f"frames length {len(t.frames)} != T={T}")
    if t.kind not in KINDS:
        raise InvariantViolation(f"unknown kind {t.kind!r}")
    n_feat = len(t.frames[0].features)
    for i, fr in enumerate(t.frames):
        if len(fr.features) != n_feat:
            raise InvariantViolation(f"frame {i}: features length differs within trajectory")
        if not _finite(fr.features):
            raise InvariantViolation(f"frame {i}: non-finite features")
        if fr.source_index is not None and fr.source_index < 0:
            raise InvariantViolation(f"frame {i}: negative source_index")
    if t.kind == "expert":
        for i, fr in enumerate(t.frames):
            if fr.source_index is not None and fr.source_index != i:
                raise InvariantViolation(f"expert provenance broken at frame {i}")
    if t.states is not None:
        if len(t.states) != T:
            raise InvariantViolation(f"states length {len(t.states)} != T={T}")
        n_contacts = len(t.states[0].contact_points)
        for s in t.states:
            s.check(n_contacts)
    if t.actions is not None:
        for a in t.actions:
            if not _finite(a):
                raise InvariantViolation("non-finite action")
    if t.subgoals is not None:
        prev = 0
        for b in t.subgoals:
            if not prev < b <= T:
                raise InvariantViolation("subgoal boundaries must increase within [1, T]")
            prev = b
    return t


# --- JSON encoding --------------------------------------------------------------


def state_to_dict(s: EnvState) -> dict:
    return {
        "gripper_pos": list(s.gripper_pos),
        "gripper_open": bool(s.gripper_open),
        "object_pos": {k: list(v) for k, v in s.object_pos.items()},
        "goal_pos": list(s.goal_pos),
        "contact_points": [[list(r), list(o)] for r, o in s.contact_points],
    }


def state_from_dict(d: Mapping) -> EnvState:
    return EnvState(
        gripper_pos=d["gripper_pos"],
        gripper_open=bool(d["gripper_open"]),
        object_pos=d["object_pos"],
        goal_pos=d["goal_pos"],
        contact_points=[(r, o) for r, o in d.get("contact_points", [])],
    )


def frame_to_dict(f: Frame) -> dict:
    return {"features": list(f.features), "source_index": f.source_index}


def frame_from_dict(d: Mapping) -> Frame:
    return Frame(features=d["features"], source_index=d.get("source_index"))


def goal_to_dict(g: Goal) -> dict:
    return {"text": g.text, "family": g.family}


def goal_from_dict(d: Mapping) -> Goal:
    return Goal(text=d["text"], family=d["family"])


def trajectory_to_dict(t: Trajectory) -> dict:
    out: dict[str, Any] = {
        "goal": goal_to_dict(t.goal),
        "kind": t.kind,
        "frames": [frame_to_dict(f) for f in t.frames],
    }
    if t.states is not None:
        out["states"] = [state_to_dict(s) for s in t.states]
    if t.actions is not None:
        out["actions"] = [list(a) for a in t.actions]
    if t.subgoals is not None:
        out["subgoals"] = list(t.subgoals)
    if t.meta:
        out["meta"] = dict(t.meta)
    return out


def trajectory_from_dict(d: Mapping) -> Trajectory:
    states = d.get("states")
    actions = d.get("actions")
    subgoals = d.get("subgoals")
    return Trajectory(
        goal=goal_from_dict(d["goal"]),
        frames=tuple(frame_from_dict(f) for f in d["frames"]),
        kind=d.get("kind", "expert"),
        states=None if states is None else tuple(state_from_dict(s) for s in states),
        actions=None if actions is None else tuple(tuple(a) for a in actions),
        subgoals=None if subgoals is None else tuple(subgoals),
        meta=dict(d.get("meta") or {}),
    )


def record_to_dict(r: ProgressRecord) -> dict:
    return {"v": r.v, "p": r.p, "reasoning": r.reasoning}


def record_from_dict(d: Mapping) -> ProgressRecord:
    return ProgressRecord(v=float(d["v"]), p=int(d["p"]), reasoning=d.get("reasoning", ""))


def encode(t: Trajectory) -> str:
    return json.dumps(trajectory_to_dict(t), separators=(",", ":"))


def decode(line: str) -> Trajectory:
    return trajectory_from_dict(json.loads(line))


# --- JSONL files ----------------------------------------------------------------


def check_schema(row: Mapping) -> None:
    version = str(row.get("schema_version", SCHEMA_VERSION))
    if version.split(".")[0] != SCHEMA_VERSION.split(".")[0]:
        raise SchemaVersionError(f"unsupported schema version {version}")


def write_jsonl(path: str | Path, rows: Iterable[Mapping]) -> int:
    """Write rows as UTF-8 JSONL, stamping each with the schema version."""
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps({"schema_version": SCHEMA_VERSION, **row}, separators=(",", ":")))
            fh.write("\n")
            n += 1
    return n


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InvariantViolation(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(row, dict):
                raise InvariantViolation(f"{path}:{lineno}: expected a JSON object")
            check_schema(row)
            yield row


def read_trajectories(path: str | Path) -> list[Trajectory]:
    return [validate_trajectory(trajectory_from_dict(r)) for r in read_jsonl(path)]


def write_trajectories(path: str | Path, trajs: Iterable[Trajectory]) -> int:
    return write_jsonl(path, (trajectory_to_dict(t) for t in trajs))


def episode_to_dict(e: EpisodeLog) -> dict:
    return {
        "trajectory": trajectory_to_dict(e.trajectory),
        "predicted_progress": list(e.predicted_progress),
        "served_rewards": list(e.served_rewards),
        "true_rewards": list(e.true_rewards),
        "success": bool(e.success),
    }


def episode_from_dict(d: Mapping) -> EpisodeLog:
    return EpisodeLog(
        trajectory=trajectory_from_dict(d["trajectory"]),
        predicted_progress=tuple(int(p) for p in d["predicted_progress"]),
        served_rewards=tuple(float(r) for r in d["served_rewards"]),
        true_rewards=tuple(float(r) for r in d["true_rewards"]),
        success=bool(d["success"]),
    )


def state_features(s: EnvState, target_object: Optional[str] = None) -> Vec:
    """Flatten an EnvState into the frame feature layout used for synthetic data.

    Layout: gripper position, gripper-open flag, target object position, goal
    position, summed contact distance, object-to-goal distance.
    """
    name = target_object or next(iter(s.object_pos))
    obj = s.object_pos[name]
    reach = sum(math.dist(r, o) for r, o in s.contact_points)
    transport = math.dist(obj, s.goal_pos)
    return (*s.gripper_pos, 1.0 if s.gripper_open else 0.0, *obj, *s.goal_pos, reach, transport)
