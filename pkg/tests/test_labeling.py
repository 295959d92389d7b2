import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from progress_reward.core_types import Frame, Goal, ProgressRecord, Trajectory
from progress_reward.errors import (
    DegenerateLength,
    DegenerateRange,
    IndexOutOfRange,
    InvariantViolation,
    MissingProvenance,
    MissingStates,
    NoMatchingRule,
)
from progress_reward.labeling import (
    CotRule,
    CotTemplateSet,
    GeometricConfig,
    combined_distance,
    geometric_progress,
    inherit_labels,
    label_trajectory,
    load_templates,
    online_progress,
    template_cot,
    temporal_proxy,
)

from helpers import feature_frames, line_trajectory, make_state


def brute_force_progress(states, beta):
    """Independent oracle: plain loops over coordinates, no numpy."""
    ys = []
    for s in states:
        reach = 0.0
        for r, o in s.contact_points:
            reach += math.sqrt(sum((a - b) ** 2 for a, b in zip(r, o)))
        obj = s.object_pos["obj"]
        transport = math.sqrt(sum((a - b) ** 2 for a, b in zip(obj, s.goal_pos)))
        ys.append((1 - beta) * reach + beta * transport)
    hi, lo = max(ys), min(ys)
    return [(hi - y) / (hi - lo) for y in ys]


coords = st.floats(-5, 5, allow_nan=False)
points = st.tuples(coords, coords)


@given(st.lists(st.tuples(points, points, points), min_size=2, max_size=12), st.floats(0, 1))
def test_geometric_progress_matches_brute_force(raw, beta):
    states = [make_state(g, o, goal) for g, o, goal in raw]
    cfg = GeometricConfig(beta=beta)
    ys = [combined_distance(s, cfg) for s in states]
    if max(ys) - min(ys) < 1e-9:
        return
    oracle = brute_force_progress(states, beta)
    frames = tuple(Frame((0.0,), source_index=i) for i in range(len(states)))
    traj = Trajectory(Goal("Reach the object", "button"), frames, states=tuple(states))
    got = geometric_progress(traj, cfg)
    assert np.allclose([r.v for r in got], oracle, atol=1e-12, rtol=0)
    assert all(0 <= r.p <= 100 for r in got)
    assert max(r.v for r in got) == 1.0 and min(r.v for r in got) == 0.0


def test_three_step_hand_case():
    got = geometric_progress(line_trajectory([2.0, 1.0, 0.0]), GeometricConfig())
    assert [r.v for r in got] == [0.0, 0.5, 1.0]
    assert [r.p for r in got] == [0, 50, 100]


def test_constant_distance_is_degenerate():
    with pytest.raises(DegenerateRange):
        geometric_progress(line_trajectory([1.0, 1.0, 1.0]), GeometricConfig())


def test_geometric_needs_states():
    t = line_trajectory([2.0, 1.0]).with_(states=None)
    with pytest.raises(MissingStates):
        geometric_progress(t, GeometricConfig())


def test_beta_range():
    with pytest.raises(InvariantViolation):
        GeometricConfig(beta=1.5)


def test_beta_one_ignores_gripper():
    # object sits still, gripper moves: transport-only distance is constant
    with pytest.raises(DegenerateRange):
        geometric_progress(line_trajectory([3.0, 2.0, 1.0], goal_offset=(1.0, 0.0)), GeometricConfig(beta=1.0))


@pytest.mark.parametrize("T,expected", [(5, [0, 0.25, 0.5, 0.75, 1.0]), (2, [0.0, 1.0])])
def test_temporal_small(T, expected):
    assert temporal_proxy(T) == expected


def test_temporal_eleven():
    assert [ProgressRecord.from_v(v).p for v in temporal_proxy(11)] == list(range(0, 101, 10))


def test_temporal_single_frame():
    with pytest.raises(DegenerateLength):
        temporal_proxy(1)
    assert temporal_proxy(1, allow_single=True) == [1.0]
    with pytest.raises(DegenerateLength):
        temporal_proxy(0)


@given(st.integers(2, 200))
def test_temporal_monotone_endpoints(T):
    v = temporal_proxy(T)
    assert v[0] == 0.0 and v[-1] == 1.0
    assert all(a < b for a, b in zip(v, v[1:]))


def test_inherit_example():
    expert = [ProgressRecord.from_v(v) for v in temporal_proxy(5)]
    frames = feature_frames(5)
    perturbed = Trajectory(Goal("Press the button", "button"),
                           tuple(frames[i] for i in (0, 1, 2, 1, 4)), kind="reversed")
    assert [r.p for r in inherit_labels(perturbed, expert)] == [0, 25, 50, 25, 100]


def test_inherit_errors():
    expert = [ProgressRecord.from_v(v) for v in temporal_proxy(3)]
    g = Goal("Press the button", "button")
    with pytest.raises(MissingProvenance):
        inherit_labels(Trajectory(g, (Frame((0.0,)),), kind="reversed"), expert)
    with pytest.raises(IndexOutOfRange):
        inherit_labels(Trajectory(g, (Frame((0.0,), source_index=3),), kind="reversed"), expert)


def test_temporal_labels_for_perturbed_use_source_length():
    frames = feature_frames(5)
    t = Trajectory(Goal("Press the button", "button"), tuple(frames[i] for i in (0, 1, 1)), kind="deviated",
                   meta={"source_length": 5})
    assert [r.p for r in label_trajectory(t, "temporal", with_cot=False)] == [0, 25, 25]


# -- reasoning text ------------------------------------------------------------------


@pytest.fixture(scope="module")
def templates():
    return load_templates()


def test_cot_approach_with_static_object(templates):
    prev = make_state((2, 0), (0, 0), (3, 3))
    curr = make_state((1, 0), (0, 0), (3, 3))
    text = template_cot(prev, curr, GeometricConfig(beta=0.5), templates, obj_name="can")
    assert "moved closer" in text and "remains in the same position" in text and "can" in text


def test_cot_flags_regression(templates):
    prev = make_state((1, 0), (0, 0), (3, 3))
    curr = make_state((2, 0), (0, 0), (3, 3))
    text = template_cot(prev, curr, GeometricConfig(), templates)
    assert "farther" in text and "regression" in text


def test_cot_no_change_band(templates):
    s = make_state((1, 0), (0, 0), (3, 3))
    jitter = make_state((1.0 + 1e-6, 0), (0, 0), (3, 3))
    assert template_cot(s, jitter, GeometricConfig(), templates).startswith("No change")


def test_templates_must_cover_all_cases():
    with pytest.raises(NoMatchingRule):
        CotTemplateSet(rules=(CotRule("closer", "closer", "x"),))


def test_enrichment_hook_is_applied():
    tpl = load_templates(enrichment_hook=lambda text, info: text + " [hooked]")
    prev, curr = make_state((2, 0), (0, 0), (3, 3)), make_state((1, 0), (0, 0), (3, 3))
    assert template_cot(prev, curr, GeometricConfig(), tpl).endswith("[hooked]")


def test_label_trajectory_geometric_with_text():
    recs = label_trajectory(line_trajectory([3.0, 2.0, 1.0, 0.0]))
    assert [r.p for r in recs] == [0, 33, 67, 100]
    assert all(r.reasoning for r in recs)
    assert "moved closer" in recs[1].reasoning


def test_label_trajectory_unknown_mode():
    with pytest.raises(ValueError):
        label_trajectory(line_trajectory([1.0, 0.0]), mode="oracle")


# -- online progress -----------------------------------------------------------------


def test_online_progress_anchors():
    cfg = GeometricConfig()
    s0 = make_state((4, 0), (0, 0), (0, 0))
    assert online_progress(s0, s0, cfg) == 0.0
    assert online_progress(s0, make_state((0, 0), (0, 0), (0, 0)), cfg) == 1.0
    assert online_progress(s0, make_state((2, 0), (0, 0), (0, 0)), cfg) == 0.5
    assert online_progress(s0, make_state((20, 0), (0, 0), (0, 0)), cfg) == -1.0


@given(points, points)
def test_online_progress_bounded(g0, g1):
    cfg = GeometricConfig(beta=0.3)
    v = online_progress(make_state(g0, (0, 0), (1, 1)), make_state(g1, (0, 0), (1, 1)), cfg)
    assert -1.0 <= v <= 1.0
