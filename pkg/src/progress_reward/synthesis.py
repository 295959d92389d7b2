"""Non-expert trajectory synthesis.

Two routes turn an expert demonstration into a non-expert one:

* simulated: replace a window of expert actions with uniformly sampled actions
  (``inject_deviation``), optionally blending back toward a later expert state;
* observation-only: overwrite a window of frames with the reversed preceding
  window (``reverse_perturb``).

Deviation start ``q``, reversal points and level indices are 1-based, matching
how they are annotated on trajectories; they are converted to 0-based offsets
where sequences are indexed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core_types import EnvState, Frame, Trajectory, state_features
from .errors import (
    EmptyInput,
    IndexOutOfRange,
    InvariantViolation,
    MissingStates,
    MissingSubgoalAnnotations,
    ShapeMismatch,
    UnknownFamily,
)

Dynamics = Callable[[EnvState, np.ndarray], EnvState]


@dataclass(frozen=True)
class DeviationSpec:
    """Where and how to deviate. ``w == 0`` means no deviation (expert prefix only)."""

    q: int
    w: int
    recover: bool = False
    h: int = 0
    n_interp: int = 1

    def check(self, T: int) -> None:
        if not 1 <= self.q <= T:
            raise IndexOutOfRange(f"deviation start q={self.q} outside [1, {T}]")
        if self.w < 0:
            raise InvariantViolation("w must be >= 0")
        if self.recover:
            if self.h < 0 or self.q + self.h > T:
                raise IndexOutOfRange(f"recovery target q+h={self.q + self.h} beyond T={T}")
            if self.n_interp < 1:
                raise InvariantViolation("n_interp must be >= 1")


@dataclass(frozen=True)
class ReversalSpec:
    points: tuple[int, ...]
    w: int

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(sorted(set(int(q) for q in self.points))))
        if self.w < 1:
            raise InvariantViolation("reversal window w must be >= 1")


@dataclass(frozen=True)
class LevelSpec:
    family: str
    level: int
    description: str


LEVELS: dict[str, tuple[str, ...]] = {
    "pick-only": (
        "Fail to approach {obj}",
        "Approach {obj}",
        "Contact {obj}",
        "Pick up {obj}",
    ),
    "pick-and-place": (
        "Fail to approach {obj}",
        "Approach {obj}",
        "Contact {obj}",
        "Pick up {obj}",
        "Keep grasp of {obj}",
        "Approach placing {obj} in {target_location}",
        "Place {obj} in {target_location}",
    ),
    "open-close-drawer": (
        "Fail to approach the drawer",
        "Approach drawer",
        "Contact drawer",
        "Start opening/closing drawer",
        "Finish opening/closing drawer",
    ),
    "open-close-door": (
        "Fail to approach the door",
        "Approach door",
        "Contact door",
        "Start opening/closing door",
        "Finish opening/closing door",
    ),
    "button": (
        "Fail to approach the on/off button",
        "Approach the on/off button",
        "Successfully adjust the on/off button",
    ),
    "lever-knob": (
        "Fail to approach the on/off lever",
        "Approach the on/off lever",
        "Successfully adjust the on/off lever",
    ),
}


def level_weights(family: str) -> np.ndarray:
    """Per-level sampling mass: uniform within each family."""
    if family not in LEVELS:
        raise UnknownFamily(family)
    n = len(LEVELS[family])
    return np.full(n, 1.0 / n)


def sample_level(family: str, rng: np.random.Generator) -> LevelSpec:
    weights = level_weights(family)
    level = int(rng.choice(len(weights), p=weights)) + 1
    return LevelSpec(family=family, level=level, description=LEVELS[family][level - 1])


# -- simulated deviations ---------------------------------------------------------


def _interp_state(a: EnvState, b: EnvState, alpha: float) -> EnvState:
    lerp = lambda x, y: tuple((1.0 - alpha) * np.asarray(x) + alpha * np.asarray(y))  # noqa: E731
    if alpha == 1.0:
        return b
    return EnvState(
        gripper_pos=lerp(a.gripper_pos, b.gripper_pos),
        gripper_open=b.gripper_open if alpha > 0.5 else a.gripper_open,
        object_pos={k: lerp(a.object_pos[k], b.object_pos[k]) for k in a.object_pos},
        goal_pos=lerp(a.goal_pos, b.goal_pos),
        contact_points=tuple(
            (lerp(ra, rb), lerp(oa, ob))
            for (ra, oa), (rb, ob) in zip(a.contact_points, b.contact_points)
        ),
    )


def recover_interpolate(s_dev: EnvState, s_target: EnvState, n_interp: int) -> list[EnvState]:
    """Blend from the last deviated state to an expert target in ``n_interp`` steps.

    State z (1-based) uses weight z/n_interp on the target; boolean fields flip
    once that weight exceeds one half. The final state is the target itself.
    """
    if n_interp < 1:
        raise InvariantViolation("n_interp must be >= 1")
    if (
        s_dev.dim != s_target.dim
        or set(s_dev.object_pos) != set(s_target.object_pos)
        or len(s_dev.contact_points) != len(s_target.contact_points)
    ):
        raise ShapeMismatch("deviated and target states differ in shape")
    return [_interp_state(s_dev, s_target, z / n_interp) for z in range(1, n_interp + 1)]


def inject_deviation(
    expert: Trajectory,
    spec: DeviationSpec,
    dynamics: Dynamics,
    rng: np.random.Generator,
    action_low: Sequence[float],
    action_high: Sequence[float],
    featurize: Callable[[EnvState], Sequence[float]] = state_features,
) -> Trajectory:
    """Follow the expert through state q, then take ``w`` uniform random actions.

    Deviated frames point back at expert timestep q (0-based ``q - 1``); recovery
    frames point at their target ``q + h``.
    """
    if expert.states is None or expert.actions is None:
        raise MissingStates("deviation needs expert states and actions")
    T = expert.T
    spec.check(T)
    low = np.asarray(action_low, dtype=float)
    high = np.asarray(action_high, dtype=float)

    states = list(expert.states[: spec.q])
    actions = [tuple(a) for a in expert.actions[: spec.q - 1]]
    sources = list(range(spec.q))
    s = states[-1]
    for _ in range(spec.w):
        a = rng.uniform(low, high)
        s = dynamics(s, a)
        states.append(s)
        actions.append(tuple(a))
        sources.append(spec.q - 1)
    if spec.recover:
        target_idx = spec.q + spec.h - 1
        tail = recover_interpolate(s, expert.states[target_idx], spec.n_interp)
        states += tail
        sources += [target_idx] * len(tail)
        # interpolated states are not produced by actions
        actions_out = None
    else:
        actions_out = tuple(actions)

    frames = tuple(Frame(featurize(st), source_index=i) for st, i in zip(states, sources))
    meta = {**dict(expert.meta or {}), "deviation": {"q": spec.q, "w": spec.w, "recover": spec.recover,
                                                    "h": spec.h, "n_interp": spec.n_interp},
            "source_length": T}
    return Trajectory(
        goal=expert.goal,
        frames=frames,
        kind="deviated",
        states=tuple(states),
        actions=actions_out,
        meta=meta,
    )


def level_to_deviation(
    level: LevelSpec,
    expert: Trajectory,
    rng: Optional[np.random.Generator] = None,
    w_range: tuple[int, int] = (3, 8),
) -> DeviationSpec:
    """Place a deviation inside the expert segment that the level fails at.

    Level l starts deviating somewhere in ``(boundary[l-1], boundary[l]]``, so
    every earlier segment was completed by the expert. The top level is the
    full expert: q = T and no random actions.
    """
    bounds = expert.subgoals
    n = len(LEVELS.get(level.family, ()))
    if bounds is None or len(bounds) != n:
        raise MissingSubgoalAnnotations(
            f"expert needs {n} subgoal boundaries for family {level.family!r}"
        )
    if not 1 <= level.level <= n:
        raise IndexOutOfRange(f"level {level.level} outside [1, {n}]")
    if level.level == n:
        return DeviationSpec(q=expert.T, w=0)
    lo = 1 if level.level == 1 else bounds[level.level - 2] + 1
    hi = bounds[level.level - 1]
    if rng is None:
        return DeviationSpec(q=(lo + hi) // 2, w=w_range[0])
    q = int(rng.integers(lo, hi + 1))
    w = int(rng.integers(w_range[0], w_range[1] + 1))
    return DeviationSpec(q=q, w=w)


# -- observation-only reversal ----------------------------------------------------


def _reverse_once(frames: list[Frame], q: int, w: int) -> list[Frame]:
    T = len(frames)
    if not 1 <= q <= T:
        raise IndexOutOfRange(f"reversal point q={q} outside [1, {T}]")
    start = max(1, q - w + 1)  # source window truncates at the first frame
    src = frames[start - 1 : q][::-1]
    n = min(len(src), T - q + 1)  # replaced window may not run past the end
    out = list(frames)
    out[q - 1 : q - 1 + n] = src[:n]
    return out


def reverse_perturb(frames: Sequence[Frame], spec: ReversalSpec) -> list[Frame]:
    """Overwrite ``frames[q:q+w-1]`` (1-based) with the reversed window ending at q.

    Points apply in ascending order, each on the output of the previous one, so
    later windows may re-reverse already perturbed frames. Frames without a
    ``source_index`` are treated as expert frames at their own position.
    """
    if not frames:
        raise EmptyInput("no frames to perturb")
    cur = [
        f if f.source_index is not None else Frame(f.features, source_index=i)
        for i, f in enumerate(frames)
    ]
    for q in spec.points:
        cur = _reverse_once(cur, q, spec.w)
    return cur


def reversed_trajectory(expert: Trajectory, spec: ReversalSpec) -> Trajectory:
    frames = reverse_perturb(expert.frames, spec)
    return Trajectory(
        goal=expert.goal,
        frames=tuple(frames),
        kind="reversed",
        meta={**dict(expert.meta or {}), "reversal": {"points": list(spec.points), "w": spec.w},
              "source_length": expert.T},
    )


def sample_reversal(T: int, rng: np.random.Generator, max_points: int = 2,
                    w_range: tuple[int, int] = (2, 5)) -> ReversalSpec:
    n_points = int(rng.integers(1, max_points + 1))
    lo = min(3, T)
    points = rng.choice(np.arange(lo, T + 1), size=min(n_points, T - lo + 1), replace=False)
    w = int(rng.integers(w_range[0], w_range[1] + 1))
    return ReversalSpec(points=tuple(int(p) for p in points), w=w)


# -- batch driver -----------------------------------------------------------------


@dataclass
class SynthConfig:
    per_expert: int = 4
    seed: int = 0
    recover_prob: float = 0.25
    w_range: tuple[int, int] = (3, 8)
    h_range: tuple[int, int] = (1, 4)
    n_interp_range: tuple[int, int] = (2, 5)
    family: Optional[str] = None
    extra: dict = field(default_factory=dict)


def synthesize(
    experts: Sequence[Trajectory],
    cfg: SynthConfig,
    env_factory: Callable[[Trajectory], object],
) -> list[Trajectory]:
    """Sample ``per_expert`` level-driven deviations for every expert.

    ``env_factory`` maps an expert to an object exposing ``transition``,
    ``action_low`` and ``action_high``. Each expert gets its own child seed so
    the output does not depend on how experts are batched.
    """
    out: list[Trajectory] = []
    root = np.random.SeedSequence(cfg.seed)
    for expert, child in zip(experts, root.spawn(len(experts))):
        rng = np.random.default_rng(child)
        env = env_factory(expert)
        family = cfg.family or expert.goal.family
        for _ in range(cfg.per_expert):
            level = sample_level(family, rng)
            spec = level_to_deviation(level, expert, rng, cfg.w_range)
            if spec.w > 0 and rng.random() < cfg.recover_prob:
                h = int(rng.integers(cfg.h_range[0], cfg.h_range[1] + 1))
                if spec.q + h <= expert.T:
                    n_interp = int(rng.integers(cfg.n_interp_range[0], cfg.n_interp_range[1] + 1))
                    spec = DeviationSpec(spec.q, spec.w, True, h, n_interp)
            traj = inject_deviation(expert, spec, env.transition, rng, env.action_low, env.action_high)
            meta = {**traj.meta, "level": level.level, "level_description": level.description}
            out.append(traj.with_(meta=meta))
    return out
