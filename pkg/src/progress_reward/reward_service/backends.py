"""Progress backends: simulator oracle, scripted replay/adversaries, remote model API."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..core_types import EnvState, read_jsonl
from ..errors import ProgressRewardError
from ..labeling import (
    GeometricConfig,
    load_templates,
    online_progress,
    reach_distance,
    template_cot,
)
from ..response_format import parse_response, render_prompt
from .protocol import RewardQuery

log = logging.getLogger(__name__)

TOKEN_ENV = "REWARD_REMOTE_TOKEN"


class BackendError(ProgressRewardError):
    """The backend could not produce a progress value for this query."""


def _clip_progress(p: float) -> int:
    return int(np.clip(round(p), -100, 100))


def _require_states(q: RewardQuery) -> tuple[EnvState, EnvState]:
    if q.initial_state is None or q.state is None:
        raise BackendError("query carries no simulator state")
    return q.initial_state, q.state


class OracleBackend:
    """Progress from true simulator geometry, anchored at the episode's first state."""

    name = "oracle"

    def __init__(self, cfg: GeometricConfig = GeometricConfig(), with_cot: bool = True):
        self.cfg = cfg
        self.templates = load_templates() if with_cot else None

    def label(self, q: RewardQuery) -> tuple[int, str]:
        s0, s = _require_states(q)
        p = _clip_progress(100 * online_progress(s0, s, self.cfg))
        if self.templates is not None and q.prev_state is not None:
            text = template_cot(q.prev_state, s, self.cfg, self.templates)
        else:
            text = f"Oracle progress from simulator geometry: {p}%."
        return p, text


@dataclass
class ScriptSpec:
    """What a scripted backend does.

    mode: ``replay`` (responses keyed by episode/step from ``path``), ``oracle``
    (oracle progress plus ``bias`` and Gaussian ``noise_std``), ``proximity-only``
    (rewards gripper-object proximity alone), ``zero``, or ``constant``.
    ``delay_s`` sleeps before answering to exercise timeouts.
    """

    mode: str = "oracle"
    bias: float = 0.0
    noise_std: float = 0.0
    seed: int = 0
    value: int = 0
    path: Optional[str] = None
    delay_s: float = 0.0
    beta: float = 0.0
    extra: dict = field(default_factory=dict)


class ScriptedBackend:
    name = "scripted"

    def __init__(self, spec: ScriptSpec):
        self.spec = spec
        self.oracle = OracleBackend(GeometricConfig(spec.beta), with_cot=False)
        self.table: dict[tuple[str, int], dict] = {}
        if spec.mode == "replay":
            if not spec.path:
                raise ValueError("replay script needs a path")
            for row in read_jsonl(spec.path):
                self.table[(str(row["episode_id"]), int(row["step"]))] = row

    def _noise(self, q: RewardQuery) -> float:
        if self.spec.noise_std <= 0:
            return 0.0
        # per-query seed keeps replies independent of arrival order
        digest = hashlib.sha256(f"{self.spec.seed}:{q.episode_id}:{q.step}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
        return float(rng.normal(0.0, self.spec.noise_std))

    def label(self, q: RewardQuery) -> tuple[int, str]:
        if self.spec.delay_s > 0:
            time.sleep(self.spec.delay_s)
        mode = self.spec.mode
        if mode == "replay":
            row = self.table.get((q.episode_id, q.step))
            if row is None:
                raise BackendError(f"no scripted response for {q.episode_id}/{q.step}")
            if "response" in row:
                parsed = parse_response(row["response"])
                return parsed.progress, parsed.reasoning
            return _clip_progress(row["progress"]), str(row.get("reasoning", "scripted"))
        if mode == "zero":
            return 0, "No visible progress toward the goal."
        if mode == "constant":
            return _clip_progress(self.spec.value), "Constant scripted progress."
        if mode == "proximity-only":
            s0, s = _require_states(q)
            d0 = reach_distance(s0)
            v = 1.0 if d0 <= 0 else 1.0 - reach_distance(s) / d0
            return _clip_progress(100 * v), "The gripper is close to the object, so the task looks nearly done."
        if mode == "oracle":
            p, _ = self.oracle.label(q)
            p = _clip_progress(p + self.spec.bias + self._noise(q))
            return p, f"Scripted progress {p}%."
        raise BackendError(f"unknown script mode {mode!r}")


class RemoteBackend:
    """Render the prompt, POST it to a model endpoint, parse the structured reply.

    The endpoint receives ``{"prompt", "style", "frames", "episode_id", "step"}``
    and must answer with JSON ``{"text": ...}`` (or a plain-text body).
    """

    name = "remote"

    def __init__(self, endpoint: str, timeout_s: float = 30.0, retries: int = 2,
                 style: str = "native", token: Optional[str] = None):
        import httpx

        self.endpoint = endpoint
        self.style = style
        self.retries = retries
        token = token if token is not None else os.environ.get(TOKEN_ENV)
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        self.client = httpx.Client(timeout=timeout_s, headers=headers)

    def label(self, q: RewardQuery) -> tuple[int, str]:
        import httpx

        payload = {
            "prompt": render_prompt(q.context, self.style),
            "style": self.style,
            "frames": [list(q.context.first_frame.features)] + [list(f.features) for f in q.context.window],
            "episode_id": q.episode_id,
            "step": q.step,
        }
        last_exc: Optional[Exception] = None
        for attempt in range(self.retries + 1):
            try:
                resp = self.client.post(self.endpoint, json=payload)
                resp.raise_for_status()
                break
            except httpx.HTTPError as exc:
                last_exc = exc
                log.warning("remote backend attempt %d failed: %s", attempt + 1, exc)
        else:
            raise BackendError(f"remote endpoint unavailable: {last_exc}")
        try:
            text = resp.json().get("text", "")
        except (json.JSONDecodeError, ValueError, AttributeError):
            text = resp.text
        parsed = parse_response(text)
        return parsed.progress, parsed.reasoning

    def close(self) -> None:
        self.client.close()


class PolicyBackend:
    """Serve a trained toy progress policy; it sees only the rendered context, never states."""

    name = "policy"

    def __init__(self, policy):
        self.policy = policy

    def label(self, q: RewardQuery) -> tuple[int, str]:
        parsed = parse_response(self.policy.respond(self.policy.predict(q.context)))
        return parsed.progress, parsed.reasoning


def make_backend(kind: str, **kw):
    if kind == "oracle":
        return OracleBackend(GeometricConfig(kw.get("beta", 0.0)))
    if kind == "scripted":
        return ScriptedBackend(kw.get("script") or ScriptSpec())
    if kind == "policy":
        from ..grpo_trainer import ToyPolicy

        return PolicyBackend(kw["policy"] if "policy" in kw else ToyPolicy.load(kw["checkpoint"]))
    if kind == "remote":
        return RemoteBackend(kw["endpoint"], kw.get("timeout_s", 30.0), kw.get("retries", 2),
                             kw.get("style", "native"))
    raise ValueError(f"unknown backend {kind!r}")
