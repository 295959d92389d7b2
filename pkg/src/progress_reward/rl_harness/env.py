"""Point-mass manipulation environment with reach, push and pick tasks.

The gripper is a point that moves by a bounded delta per step. One object
(``"obj"``) sits in a box workspace; pushing carries it rigidly while the
gripper is within the contact radius, picking additionally requires a closed
gripper. True reward and success are exposed for evaluation only.
"""
from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from ..core_types import EnvState, Frame, Goal, Trajectory, state_features

TASKS = ("reach", "push", "pick")
OBJ = "obj"

# Task -> (family of the non-expert level taxonomy, goal text)
TASK_FAMILY = {
    "reach": ("button", "Touch the button with the gripper"),
    "push": ("open-close-drawer", "Push the drawer handle to the closed position"),
    "pick": ("pick-only", "Pick up the object"),
}
FAMILY_TASK = {fam: task for task, (fam, _) in TASK_FAMILY.items()}
# reach has nothing to transport; push and pick weigh approach and transport equally
TASK_BETA = {"reach": 0.0, "push": 0.5, "pick": 0.5}

GRIP_DEADBAND = 0.1


@dataclass(frozen=True)
class PointMassEnv:
    task: str = "reach"
    dim: int = 2
    horizon: int = 20
    max_step: float = 0.2
    contact_radius: float = 0.1
    success_radius: float = 0.1
    workspace: float = 1.0
    min_separation: float = 0.5
    lift: float = 0.4

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    # -- spaces -----------------------------------------------------------------

    @property
    def action_dim(self) -> int:
        return self.dim + 1

    @property
    def action_low(self) -> np.ndarray:
        return -np.ones(self.action_dim)

    @property
    def action_high(self) -> np.ndarray:
        return np.ones(self.action_dim)

    @property
    def goal(self) -> Goal:
        family, text = TASK_FAMILY[self.task]
        return Goal(text=text, family=family)

    # -- dynamics ---------------------------------------------------------------

    def make_state(self, gripper, gripper_open: bool, obj, goal) -> EnvState:
        gripper, obj = tuple(map(float, gripper)), tuple(map(float, obj))
        return EnvState(
            gripper_pos=gripper,
            gripper_open=gripper_open,
            object_pos={OBJ: obj},
            goal_pos=tuple(map(float, goal)),
            contact_points=((gripper, obj),),
        )

    def reset(self, rng: np.random.Generator) -> EnvState:
        ws, d = self.workspace, self.dim
        # rejection sampling keeps gripper, object and goal well separated
        while True:
            grip = rng.uniform(-ws, ws, d)
            obj = rng.uniform(-0.8 * ws, 0.8 * ws, d)
            if np.linalg.norm(grip - obj) >= self.min_separation:
                break
        if self.task == "reach":
            goal = obj.copy()
        elif self.task == "pick":
            goal = obj.copy()
            goal[-1] = min(obj[-1] + self.lift, ws)
        else:
            while True:
                goal = rng.uniform(-0.8 * ws, 0.8 * ws, d)
                if np.linalg.norm(goal - obj) >= self.min_separation:
                    break
        return self.make_state(grip, True, obj, goal)

    def transition(self, state: EnvState, action) -> EnvState:
        a = np.clip(np.asarray(action, dtype=float), self.action_low, self.action_high)
        grip = np.asarray(state.gripper_pos)
        obj = np.asarray(state.object_pos[OBJ])
        cmd = a[self.dim]
        if cmd > GRIP_DEADBAND:
            open_ = True
        elif cmd < -GRIP_DEADBAND:
            open_ = False
        else:
            open_ = state.gripper_open
        new_grip = np.clip(grip + self.max_step * a[: self.dim], -self.workspace, self.workspace)
        touching = np.linalg.norm(grip - obj) <= self.contact_radius
        carries = (self.task == "push" and touching) or (self.task == "pick" and touching and not open_)
        new_obj = obj + (new_grip - grip) if carries else obj
        return self.make_state(new_grip, open_, new_obj, state.goal_pos)

    def success(self, state: EnvState) -> bool:
        grip = np.asarray(state.gripper_pos)
        obj = np.asarray(state.object_pos[OBJ])
        goal = np.asarray(state.goal_pos)
        if self.task == "reach":
            return bool(np.linalg.norm(grip - obj) <= self.success_radius)
        at_goal = np.linalg.norm(obj - goal) <= self.success_radius
        if self.task == "push":
            return bool(at_goal)
        held = (not state.gripper_open) and np.linalg.norm(grip - obj) <= self.contact_radius
        return bool(at_goal and held)

    def true_reward(self, state: EnvState) -> float:
        return 1.0 if self.success(state) else 0.0

    def step(self, state: EnvState, action) -> tuple[EnvState, float, bool]:
        nxt = self.transition(state, action)
        ok = self.success(nxt)
        return nxt, (1.0 if ok else 0.0), ok


def step(env: PointMassEnv, state: EnvState, action) -> tuple[EnvState, float, bool]:
    return env.step(state, action)


def observation(state: EnvState) -> np.ndarray:
    """Policy input vector: object offset from the gripper, goal offset from the object, open flag.

    Relative offsets let a linear policy express "move toward the object" with
    a single gain, which keeps derivative-free search cheap.
    """
    grip = np.asarray(state.gripper_pos)
    obj = np.asarray(state.object_pos[OBJ])
    goal = np.asarray(state.goal_pos)
    return np.concatenate([obj - grip, goal - obj, [1.0 if state.gripper_open else 0.0]])


# -- scripted expert ---------------------------------------------------------------


def expert_action(env: PointMassEnv, state: EnvState) -> np.ndarray:
    grip = np.asarray(state.gripper_pos)
    obj = np.asarray(state.object_pos[OBJ])
    goal = np.asarray(state.goal_pos)
    a = np.zeros(env.action_dim)
    # pushing carries the object on contact, so the push expert cannot get closer
    reach_tol = env.contact_radius if env.task == "push" else 0.5 * env.contact_radius
    near = np.linalg.norm(grip - obj) <= reach_tol
    if env.task == "reach" or not near:
        a[: env.dim] = np.clip((obj - grip) / env.max_step, -1, 1)
        a[env.dim] = 1.0
        return a
    if env.task == "pick" and state.gripper_open:
        a[env.dim] = -1.0
        return a
    a[: env.dim] = np.clip((goal - obj) / env.max_step, -1, 1)
    a[env.dim] = -1.0 if env.task == "pick" else 1.0
    return a


def _first(flags: list[bool], default: int) -> int:
    return next((i for i, f in enumerate(flags) if f), default)


def subgoal_boundaries(env: PointMassEnv, states: list[EnvState]) -> tuple[int, ...]:
    """1-based end timesteps of each level segment for an expert rollout."""
    T = len(states)
    grip = np.array([s.gripper_pos for s in states])
    obj = np.array([s.object_pos[OBJ] for s in states])
    goal = np.array([s.goal_pos for s in states])
    reach = np.linalg.norm(grip - obj, axis=1)
    transport = np.linalg.norm(obj - goal, axis=1)
    half = _first(list(reach <= 0.5 * reach[0]), T - 1) + 1
    contact = _first(list(reach <= env.contact_radius), T - 1) + 1
    if env.task == "reach":
        marks = [half, T - 1, T]
    elif env.task == "pick":
        grasp = _first([not s.gripper_open for s in states], T - 1) + 1
        marks = [half, contact, grasp, T]
    else:
        moving = _first(list(transport < transport[0] - 1e-9), T - 1) + 1
        halfway = _first(list(transport <= 0.5 * transport[0]), T - 1) + 1
        marks = [half, contact, moving, halfway, T]
    # force strictly increasing boundaries ending exactly at T
    out: list[int] = []
    n = len(marks)
    for i, m in enumerate(marks):
        lo = out[-1] + 1 if out else 1
        hi = T - (n - 1 - i)
        out.append(int(min(max(m, lo), hi)))
    return tuple(out)


def rollout_expert(env: PointMassEnv, rng: np.random.Generator, max_steps: int = 60) -> Trajectory:
    """Roll the scripted expert from a random reset until success."""
    while True:
        state = env.reset(rng)
        states, actions = [state], []
        for _ in range(max_steps):
            a = expert_action(env, state)
            state = env.transition(state, a)
            states.append(state)
            actions.append(a)
            if env.success(state):
                break
        n_levels = {"reach": 3, "push": 5, "pick": 4}[env.task]
        if env.success(state) and len(states) >= n_levels + 1:
            break
    frames = tuple(Frame(state_features(s), source_index=i) for i, s in enumerate(states))
    return Trajectory(
        goal=env.goal,
        frames=frames,
        kind="expert",
        states=tuple(states),
        actions=tuple(tuple(a) for a in actions),
        subgoals=subgoal_boundaries(env, states),
        meta={"task": env.task, "dim": env.dim},
    )


def generate_experts(env: PointMassEnv, n: int, seed: int) -> list[Trajectory]:
    rng = np.random.default_rng(seed)
    return [rollout_expert(env, rng) for _ in range(n)]


def env_for(traj: Trajectory, **overrides) -> PointMassEnv:
    """Rebuild the environment that produced a trajectory from its metadata."""
    meta = dict(traj.meta or {})
    task = meta.get("task") or FAMILY_TASK.get(traj.goal.family, "reach")
    dim = int(meta.get("dim", traj.states[0].dim if traj.states else 2))
    return PointMassEnv(task=task, dim=dim, **overrides)
