"""Small builders shared by the test modules."""
from progress_reward.core_types import EnvState, Frame, Goal, Trajectory, state_features


def make_state(grip, obj, goal, open_=True):
    grip, obj, goal = (tuple(float(x) for x in v) for v in (grip, obj, goal))
    return EnvState(grip, open_, {"obj": obj}, goal, ((grip, obj),))


def line_trajectory(distances, goal_offset=(0.0, 0.0), kind="expert"):
    """Gripper on the x axis approaching an object at the origin."""
    states = [make_state((d, 0.0), (0.0, 0.0), goal_offset) for d in distances]
    frames = tuple(Frame(state_features(s), source_index=i) for i, s in enumerate(states))
    return Trajectory(Goal("Touch the button with the gripper", "button"), frames, kind=kind, states=tuple(states))


def feature_frames(n, dim=3):
    return [Frame(tuple(float(i * 10 + k) for k in range(dim)), source_index=i) for i in range(n)]
