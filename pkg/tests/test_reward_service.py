import json
import socket
import threading
import time

import numpy as np
import pytest
from hypothesis import given, strategies as st

from progress_reward.core_types import Goal
from progress_reward.errors import EmptyKnots, InvariantViolation, ProtocolError, ServiceUnreachable
from progress_reward.labeling import GeometricConfig, online_progress
from progress_reward.reward_service import (
    OracleBackend,
    RewardClient,
    RewardMap,
    RewardQuery,
    ScriptSpec,
    ServiceConfig,
    make_backend,
    serve,
)
from progress_reward.reward_service.protocol import HEADER, encode_message, recv_message
from progress_reward.reward_service.rewards import interpolate_rewards, potential_shaped
from progress_reward.response_format import build_context

from helpers import feature_frames, make_state

GOAL = Goal("Touch the button with the gripper", "button")


def _query(episode="ep", step=0, grip=(2.0, 0.0), start=(4.0, 0.0)):
    ctx = build_context(feature_frames(step + 1), step, 1, None, goal=GOAL)
    s0 = make_state(start, (0, 0), (1, 1))
    return RewardQuery(episode, step, ctx, initial_state=s0, prev_state=s0, state=make_state(grip, (0, 0), (1, 1)))


class StepBackend:
    """Progress equals the step number; selected steps stall."""

    def __init__(self, slow=(), delay=0.3):
        self.slow, self.delay = set(slow), delay

    def label(self, q):
        if q.step in self.slow:
            time.sleep(self.delay)
        return q.step, f"step {q.step}"


@pytest.fixture
def oracle_service():
    with serve(ServiceConfig(OracleBackend(), RewardMap(psi=0.01))) as h:
        yield h


# -- reward transforms ---------------------------------------------------------------


@given(st.integers(-100, 100), st.floats(1e-3, 1), st.floats(1, 100))
def test_absolute_reward_is_clipped_scale(p, psi, c):
    r = RewardMap(psi=psi, c=c).reward(p)
    assert r == pytest.approx(psi * max(-c, min(c, p)), abs=1e-12)


def test_potential_shaping_telescopes():
    rmap = RewardMap(psi=0.01, shaping="potential")
    p = [0, 10, 5, 40, 100]
    r = potential_shaped(p, rmap)
    assert len(r) == len(p) - 1
    assert r.sum() == pytest.approx(rmap.potential(p[-1]) - rmap.potential(p[0]), abs=1e-12)
    assert list(np.round(r, 12)) == [0.1, -0.05, 0.35, 0.6]


def test_potential_first_reply_is_zero():
    rmap = RewardMap(shaping="potential")
    assert rmap.reward(50, None) == 0.0 and rmap.reward(50, 30) == pytest.approx(0.2)


def test_reward_map_validation():
    with pytest.raises(InvariantViolation):
        RewardMap(c=0)
    with pytest.raises(InvariantViolation):
        RewardMap(shaping="sparse")
    with pytest.raises(InvariantViolation):
        RewardMap(shaping="potential", gamma=1.5)


def test_interpolation():
    r = interpolate_rewards([(0, 0.0), (4, 1.0), (6, 0.0)], 8)
    assert list(r) == [0.0, 0.25, 0.5, 0.75, 1.0, 0.5, 0.0, 0.0]
    assert list(interpolate_rewards([(2, 0.3)], 4)) == [0.3] * 4
    with pytest.raises(EmptyKnots):
        interpolate_rewards([], 3)
    with pytest.raises(ValueError):
        interpolate_rewards([(3, 0.0), (1, 1.0)], 4)


# -- protocol ------------------------------------------------------------------------


def test_query_dict_round_trip():
    q = _query(step=3)
    assert RewardQuery.from_dict(json.loads(json.dumps(q.to_dict()))) == q


def test_query_without_states_omits_debug():
    q = RewardQuery("e", 0, build_context(feature_frames(1), 0, 1, None, goal=GOAL))
    assert "debug" not in q.to_dict()


def test_oracle_reply_matches_online_progress(oracle_service):
    q = _query(grip=(1.0, 0.0))
    with RewardClient(oracle_service.endpoint) as c:
        reply = c.query(q)
    expected = round(100 * online_progress(q.initial_state, q.state, GeometricConfig()))
    assert reply.progress == expected == 75
    assert reply.reward == pytest.approx(0.75)
    assert not reply.degraded and reply.step == 0 and reply.episode_id == "ep"


def test_malformed_query_gets_error_and_connection_survives(oracle_service):
    with RewardClient(oracle_service.endpoint) as c:
        err = c.send_raw({"v": 1, "type": "reward_query", "episode_id": "x"})
        assert err["type"] == "error" and err["code"] == "malformed_query"
        err = c.send_raw({"v": 99, "type": "reward_query"})
        assert err["type"] == "error"
        assert c.query(_query()).progress == 50


def test_bad_json_body(oracle_service):
    host, port = oracle_service.address
    with socket.create_connection((host, port)) as s:
        body = b"{not json"
        s.sendall(HEADER.pack(len(body)) + body)
        assert recv_message(s)["code"] == "malformed_query"


def test_client_raises_protocol_error_on_error_reply(oracle_service):
    bad = RewardQuery("e", 0, build_context(feature_frames(1), 0, 1, None, goal=GOAL))
    with RewardClient(oracle_service.endpoint) as c:
        reply = c.query(bad)  # oracle without states degrades rather than erroring
        assert reply.degraded and reply.progress == 0
        c._send({"v": 1, "type": "ping"})
        with pytest.raises(ProtocolError):
            c._recv()


def test_pipelined_replies_in_order(oracle_service):
    qs = [_query("p", t, grip=(4.0 - 0.1 * t, 0.0)) for t in range(40)]
    with RewardClient(oracle_service.endpoint) as c:
        replies = c.query_many(qs)
    assert [r.step for r in replies] == list(range(40))
    assert [r.progress for r in replies] == sorted(r.progress for r in replies)


def test_concurrent_clients():
    n_clients, n_queries = 8, 30
    results, errors = {}, []
    with serve(ServiceConfig(StepBackend(), RewardMap(psi=0.01), max_workers=4)) as h:
        def worker(k):
            try:
                with RewardClient(h.endpoint) as c:
                    results[k] = [c.query(_query(f"c{k}", t)) for t in range(n_queries)]
            except Exception as exc:  # pragma: no cover - surfaced below
                errors.append(exc)

        threads = [threading.Thread(target=worker, args=(k,)) for k in range(n_clients)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    assert not errors
    for k, replies in results.items():
        assert [(r.episode_id, r.step, r.progress) for r in replies] == [(f"c{k}", t, t) for t in range(n_queries)]
        assert all(r.reward == pytest.approx(0.01 * r.step) for r in replies)


def test_timeout_holds_last_good_progress():
    cfg = ServiceConfig(StepBackend(slow={3, 4}, delay=0.3), RewardMap(psi=0.01), timeout_ms=80)
    with serve(cfg) as h, RewardClient(h.endpoint) as c:
        replies = [c.query(_query("slow", t)) for t in range(6)]
    assert [r.degraded for r in replies] == [False, False, False, True, True, False]
    assert [r.progress for r in replies] == [0, 1, 2, 2, 2, 5]
    assert "timed out" in replies[3].reasoning


def test_timeout_before_any_reply_holds_zero():
    cfg = ServiceConfig(StepBackend(slow={0}, delay=0.3), RewardMap(psi=0.01), timeout_ms=50)
    with serve(cfg) as h, RewardClient(h.endpoint) as c:
        r = c.query(_query("z", 0))
    assert r.degraded and r.progress == 0 and r.reward == 0.0


def test_potential_mode_over_the_wire():
    cfg = ServiceConfig(StepBackend(), RewardMap(psi=0.01, shaping="potential"))
    with serve(cfg) as h, RewardClient(h.endpoint) as c:
        rewards = [c.query(_query("pot", t)).reward for t in range(5)]
    assert rewards[0] == 0.0
    assert rewards[1:] == pytest.approx([0.01] * 4)


def test_unreachable_service():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    with pytest.raises(ServiceUnreachable):
        RewardClient(("127.0.0.1", port), timeout=1.0)


def test_service_stopping_mid_episode_raises_unreachable():
    h = serve(ServiceConfig(StepBackend()))
    c = RewardClient(h.endpoint)
    c.query(_query("x", 0))
    h.stop()
    c.sock.shutdown(socket.SHUT_RDWR)
    with pytest.raises(ServiceUnreachable):
        c.query(_query("x", 1))
    c.close()


# -- scripted backends ---------------------------------------------------------------


def test_scripted_modes():
    q = _query(grip=(1.0, 0.0))
    assert make_backend("scripted", script=ScriptSpec(mode="zero")).label(q)[0] == 0
    assert make_backend("scripted", script=ScriptSpec(mode="constant", value=140)).label(q)[0] == 100
    assert make_backend("scripted", script=ScriptSpec(mode="proximity-only")).label(q)[0] == 75
    noisy = make_backend("scripted", script=ScriptSpec(mode="oracle", noise_std=5.0, seed=1))
    assert noisy.label(q) == noisy.label(q)


def test_replay_backend(tmp_path):
    path = tmp_path / "script.jsonl"
    path.write_text(json.dumps({"episode_id": "ep", "step": 0, "response": "<think>r</think><answer>33%</answer>"})
                    + "\n" + json.dumps({"episode_id": "ep", "step": 1, "progress": 40}) + "\n")
    b = make_backend("scripted", script=ScriptSpec(mode="replay", path=str(path)))
    assert b.label(_query(step=0)) == (33, "r")
    assert b.label(_query(step=1))[0] == 40
    with serve(ServiceConfig(b)) as h, RewardClient(h.endpoint) as c:
        missing = c.query(_query(step=7))
    assert missing.degraded


def test_encode_message_is_length_prefixed():
    raw = encode_message({"v": 1, "type": "x"})
    (n,) = HEADER.unpack(raw[:4])
    assert n == len(raw) - 4
