import numpy as np
import pytest
from hypothesis import given, strategies as st

from progress_reward.core_types import Frame, Goal, Trajectory
from progress_reward.errors import (
    EmptyInput,
    IndexOutOfRange,
    MissingStates,
    MissingSubgoalAnnotations,
    ShapeMismatch,
    UnknownFamily,
)
from progress_reward.rl_harness.env import PointMassEnv, env_for
from progress_reward.synthesis import (
    LEVELS,
    DeviationSpec,
    LevelSpec,
    ReversalSpec,
    SynthConfig,
    inject_deviation,
    level_to_deviation,
    recover_interpolate,
    reverse_perturb,
    sample_level,
    synthesize,
)

from helpers import feature_frames, make_state


def _expert(env, rng, T=6):
    from progress_reward.core_types import state_features

    s = env.reset(rng)
    states, actions = [s], []
    for _ in range(T - 1):
        a = np.array([0.5, 0.0, 1.0])
        s = env.transition(s, a)
        states.append(s)
        actions.append(tuple(a))
    frames = [Frame(state_features(x), source_index=i) for i, x in enumerate(states)]
    return Trajectory(env.goal, frames, states=states, actions=actions, meta={"task": env.task, "dim": 2})


@pytest.fixture
def expert6():
    env = PointMassEnv("reach")
    return env, _expert(env, np.random.default_rng(1))


def _deviate(env, expert, spec, seed=0):
    return inject_deviation(expert, spec, env.transition, np.random.default_rng(seed), env.action_low, env.action_high)


# -- recovery interpolation ---------------------------------------------------------


def test_interpolate_single_step_is_target():
    a, b = make_state((0, 0), (1, 1), (2, 2)), make_state((1, 1), (1, 1), (2, 2), open_=False)
    assert recover_interpolate(a, b, 1) == [b]


def test_interpolate_half_steps():
    a, b = make_state((0, 0), (3, 3), (0, 0)), make_state((1, 1), (3, 3), (0, 0))
    out = recover_interpolate(a, b, 2)
    assert [s.gripper_pos for s in out] == [(0.5, 0.5), (1.0, 1.0)]


def test_interpolate_quarter_steps():
    a, b = make_state((0, 0), (5, 5), (0, 0)), make_state((2, 0), (5, 5), (0, 0))
    xs = [s.gripper_pos[0] for s in recover_interpolate(a, b, 4)]
    assert xs == [0.5, 1.0, 1.5, 2.0]


def test_interpolate_boolean_switch_after_half():
    a, b = make_state((0, 0), (1, 1), (0, 0), open_=True), make_state((1, 1), (1, 1), (0, 0), open_=False)
    flags = [s.gripper_open for s in recover_interpolate(a, b, 4)]
    # alpha = 0.25, 0.5, 0.75, 1.0 -> switch strictly after one half
    assert flags == [True, True, False, False]


def test_interpolate_shape_mismatch():
    a = make_state((0, 0), (1, 1), (0, 0))
    b = make_state((0, 0, 0), (1, 1, 1), (0, 0, 0))
    with pytest.raises(ShapeMismatch):
        recover_interpolate(a, b, 2)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.integers(1, 12))
def test_interpolation_ends_on_target(x0, y0, x1, y1, n):
    a, b = make_state((x0, y0), (0, 0), (1, 1)), make_state((x1, y1), (0.5, 0), (1, 1))
    last = recover_interpolate(a, b, n)[-1]
    assert np.allclose(last.gripper_pos, b.gripper_pos, atol=1e-12, rtol=0)


# -- deviation injection ---------------------------------------------------------------


def test_deviation_without_recovery(expert6):
    env, ex = expert6
    t = _deviate(env, ex, DeviationSpec(q=3, w=2))
    assert t.T == 5 and t.kind == "deviated"
    assert t.states[:3] == ex.states[:3]
    assert [f.source_index for f in t.frames] == [0, 1, 2, 2, 2]


def test_deviation_with_recovery_ends_on_expert(expert6):
    env, ex = expert6
    t = _deviate(env, ex, DeviationSpec(q=3, w=2, recover=True, h=2, n_interp=1))
    assert t.T == 3 + 2 + 1
    assert t.states[-1] == ex.states[3 + 2 - 1]
    assert t.frames[-1].source_index == 4


def test_deviation_is_seed_deterministic(expert6):
    env, ex = expert6
    spec = DeviationSpec(q=2, w=3, recover=True, h=3, n_interp=3)
    assert _deviate(env, ex, spec, 7) == _deviate(env, ex, spec, 7)


def test_deviation_needs_states(expert6):
    env, ex = expert6
    with pytest.raises(MissingStates):
        _deviate(env, ex.with_(states=None), DeviationSpec(q=2, w=1))


def test_deviation_bounds(expert6):
    env, ex = expert6
    with pytest.raises(IndexOutOfRange):
        _deviate(env, ex, DeviationSpec(q=7, w=1))
    with pytest.raises(IndexOutOfRange):
        _deviate(env, ex, DeviationSpec(q=5, w=1, recover=True, h=2, n_interp=1))


@given(st.integers(1, 6), st.integers(1, 5), st.booleans(), st.integers(0, 5), st.integers(1, 4), st.integers(0, 99))
def test_deviation_length_and_provenance(q, w, recover, h, n_interp, seed):
    env = PointMassEnv("reach")
    ex = _expert(env, np.random.default_rng(1))
    recover = recover and q + h <= ex.T
    t = _deviate(env, ex, DeviationSpec(q, w, recover, h, n_interp), seed)
    assert t.T == q + w + (n_interp if recover else 0)
    assert all(0 <= f.source_index < ex.T for f in t.frames)


# -- reversal --------------------------------------------------------------------------


def test_reverse_hand_case():
    frames = feature_frames(5)
    out = reverse_perturb(frames, ReversalSpec(points=(3,), w=2))
    # 1-based sources [1,2,3,2,5]
    assert [f.source_index for f in out] == [0, 1, 2, 1, 4]
    assert [f.features for f in out] == [frames[i].features for i in (0, 1, 2, 1, 4)]


@given(st.integers(1, 8), st.integers(1, 8))
def test_window_one_is_identity(n, q):
    frames = feature_frames(n)
    q = min(q, n)
    assert reverse_perturb(frames, ReversalSpec((q,), 1)) == frames


def test_reverse_truncates_at_start():
    frames = feature_frames(4)
    assert reverse_perturb(frames, ReversalSpec((1,), 3)) == frames


def test_reverse_truncates_at_end():
    frames = feature_frames(5)
    out = reverse_perturb(frames, ReversalSpec((5,), 3))
    assert [f.source_index for f in out] == [0, 1, 2, 3, 4]
    out = reverse_perturb(frames, ReversalSpec((4,), 3))
    assert [f.source_index for f in out] == [0, 1, 2, 3, 2]


def test_nested_reversals_apply_in_order():
    frames = feature_frames(8)
    out = reverse_perturb(frames, ReversalSpec((5, 3), 3))
    step1 = reverse_perturb(frames, ReversalSpec((3,), 3))
    step2 = reverse_perturb(step1, ReversalSpec((5,), 3))
    assert out == step2


def test_reverse_empty():
    with pytest.raises(EmptyInput):
        reverse_perturb([], ReversalSpec((1,), 2))


def test_reverse_point_out_of_range():
    with pytest.raises(IndexOutOfRange):
        reverse_perturb(feature_frames(3), ReversalSpec((4,), 2))


@given(st.integers(2, 10), st.data())
def test_reverse_twice_restores_window(n, data):
    # a window that mirrors around its own centre is an involution
    frames = feature_frames(n)
    q = data.draw(st.integers(1, n))
    w = data.draw(st.integers(1, n))
    out = reverse_perturb(frames, ReversalSpec((q,), w))
    assert len(out) == n
    assert all(0 <= f.source_index < n for f in out)
    lo = max(0, q - w)
    seg = [f.source_index for f in out[lo:q]]
    assert seg == list(range(lo, q))  # frames up to q are untouched


# -- levels ----------------------------------------------------------------------------


def test_level_counts():
    assert {k: len(v) for k, v in LEVELS.items()} == {
        "pick-only": 4, "pick-and-place": 7, "open-close-drawer": 5,
        "open-close-door": 5, "button": 3, "lever-knob": 3,
    }


def test_sample_level_deterministic():
    a = sample_level("pick-only", np.random.default_rng(3))
    b = sample_level("pick-only", np.random.default_rng(3))
    assert a == b


def test_unknown_family():
    with pytest.raises(UnknownFamily):
        sample_level("juggling", np.random.default_rng(0))


def _annotated(T, bounds, family="pick-only"):
    return Trajectory(Goal("Pick up the can", family), feature_frames(T), subgoals=bounds)


def test_level_three_segment_lookup():
    ex = _annotated(16, (4, 8, 12, 16))
    level = LevelSpec("pick-only", 3, LEVELS["pick-only"][2])
    qs = {level_to_deviation(level, ex, np.random.default_rng(s)).q for s in range(200)}
    assert qs == set(range(9, 13))


def test_level_one_and_top():
    ex = _annotated(16, (4, 8, 12, 16))
    first = level_to_deviation(LevelSpec("pick-only", 1, ""), ex, np.random.default_rng(0))
    assert 1 <= first.q <= 4 and not first.recover
    top = level_to_deviation(LevelSpec("pick-only", 4, ""), ex)
    assert top.q == 16 and top.w == 0


def test_level_needs_annotations():
    with pytest.raises(MissingSubgoalAnnotations):
        level_to_deviation(LevelSpec("pick-only", 1, ""), _annotated(8, None))


def test_synthesize_on_real_experts(pick_experts):
    cfg = SynthConfig(per_expert=3, seed=4)
    out = synthesize(pick_experts, cfg, env_for)
    assert len(out) == 3 * len(pick_experts)
    assert out == synthesize(pick_experts, cfg, env_for)
    for t in out:
        src_T = t.meta["source_length"]
        assert all(0 <= f.source_index < src_T for f in t.frames)
        assert 1 <= t.meta["level"] <= 4
