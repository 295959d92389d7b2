"""Online RL against a reward service, plus deterministic evaluation.

The training loop keeps two channels apart. Served rewards from the service
drive the CEM refit; the environment's own reward and success flag are only
written to the episode log for later analysis and never reach the agent.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..core_types import EpisodeLog, Frame, Trajectory, state_features
from ..errors import ServiceUnreachable
from ..reward_service.client import RewardClient
from ..reward_service.protocol import RewardQuery
from ..reward_service.rewards import interpolate_rewards
from ..response_format import build_context
from .agent import CemAgent, CemConfig
from .env import PointMassEnv, observation

log = logging.getLogger(__name__)

Policy = Callable[[np.ndarray], np.ndarray]


@dataclass
class HarnessConfig:
    cem: CemConfig = field(default_factory=CemConfig)
    eval_every: int = 5  # CEM iterations between evaluations
    eval_episodes: int = 20
    eval_seed: int = 12345
    query_every: int = 1  # query cadence in steps; >1 interpolates between replies
    context_k: int = 1
    common_resets: bool = True  # score one iteration's candidates from the same start state


@dataclass
class EvalRecord:
    iteration: int
    episodes_used: int
    success_rate: float
    perceived: float
    logs: list[EpisodeLog]


@dataclass
class TrainingLog:
    episodes: list[EpisodeLog] = field(default_factory=list)
    evaluations: list[EvalRecord] = field(default_factory=list)

    @property
    def final_success(self) -> float:
        return self.evaluations[-1].success_rate if self.evaluations else 0.0


@dataclass
class Rollout:
    """What the environment produced. ``true_rewards``/``successes`` stay out of the agent."""

    states: list
    actions: list
    true_rewards: list[float]
    successes: list[bool]


def rollout(env: PointMassEnv, policy: Policy, rng: np.random.Generator) -> Rollout:
    state = env.reset(rng)
    states, actions, rewards, flags = [state], [], [env.true_reward(state)], [env.success(state)]
    for _ in range(env.horizon):
        a = np.clip(policy(observation(state)), env.action_low, env.action_high)
        state, r, ok = env.step(state, a)
        states.append(state)
        actions.append(tuple(float(x) for x in a))
        rewards.append(r)
        flags.append(ok)
    return Rollout(states, actions, rewards, flags)


def _query_steps(T: int, every: int) -> list[int]:
    steps = list(range(0, T, max(1, every)))
    if steps[-1] != T - 1:
        steps.append(T - 1)
    return steps


def label_rollout(client: Optional[RewardClient], env: PointMassEnv, ro: Rollout, episode_id: str,
                  cfg: HarnessConfig) -> tuple[list[int], list[float], list[str]]:
    """Ask the service for progress at each queried step, feeding back the previous answer."""
    T = len(ro.states)
    if client is None:
        return [0] * T, [0.0] * T, [""] * T
    frames = [Frame(state_features(s), source_index=i) for i, s in enumerate(ro.states)]
    steps = _query_steps(T, cfg.query_every)
    prev: Optional[int] = None
    got_p, got_r, texts = [], [], []
    for t in steps:
        ctx = build_context(frames, t, cfg.context_k, prev, goal=env.goal)
        q = RewardQuery(episode_id, t, ctx, initial_state=ro.states[0],
                        prev_state=ro.states[t - 1] if t > 0 else None, state=ro.states[t])
        reply = client.query(q)
        prev = reply.progress
        got_p.append(reply.progress)
        got_r.append(reply.reward)
        texts.append(reply.reasoning)
    if len(steps) == T:
        return got_p, got_r, texts
    dense_r = interpolate_rewards(list(zip(steps, got_r)), T)
    dense_p = np.rint(np.interp(np.arange(T), steps, got_p)).astype(int)
    by_step = dict(zip(steps, texts))
    return [int(p) for p in dense_p], [float(r) for r in dense_r], [by_step.get(t, "") for t in range(T)]


def _episode_log(env: PointMassEnv, episode_id: str, ro: Rollout, predicted, served, reasoning) -> EpisodeLog:
    traj = Trajectory(
        goal=env.goal,
        frames=tuple(Frame(state_features(s), source_index=i) for i, s in enumerate(ro.states)),
        kind="rollout",
        states=tuple(ro.states),
        actions=tuple(ro.actions),
        meta={"episode_id": episode_id, "task": env.task, "dim": env.dim, "reasoning": list(reasoning)},
    )
    return EpisodeLog(
        trajectory=traj,
        predicted_progress=tuple(int(p) for p in predicted),
        served_rewards=tuple(float(r) for r in served),
        true_rewards=tuple(ro.true_rewards),
        success=any(ro.successes),
    )


def evaluate(env: PointMassEnv, policy: Policy, N: int = 20, client: Optional[RewardClient] = None,
             seed: int = 12345, cfg: Optional[HarnessConfig] = None, tag: str = "eval") -> tuple[float, list[EpisodeLog]]:
    """N noise-free rollouts from fixed resets; an episode succeeds if any step does."""
    if N < 1:
        raise ValueError("N must be >= 1")
    cfg = cfg or HarnessConfig()
    rng = np.random.default_rng(seed)
    logs = []
    for i in range(N):
        ro = rollout(env, policy, rng)
        eid = f"{tag}-{i}"
        logs.append(_episode_log(env, eid, ro, *label_rollout(client, env, ro, eid, cfg)))
    rate = float(np.mean([lg.success for lg in logs]))
    return rate, logs


def perceived_success(logs: list[EpisodeLog]) -> float:
    """Mean over episodes of the highest predicted progress within each episode."""
    return float(np.mean([max(lg.predicted_progress) for lg in logs])) if logs else 0.0


def run_online_rl(env: PointMassEnv, reward_endpoint, cfg: HarnessConfig | CemConfig | None = None,
                  budget: int = 200, on_eval: Optional[Callable[[EvalRecord], None]] = None) -> TrainingLog:
    """CEM over linear policies scored only by summed served rewards.

    ``budget`` counts training episodes. On losing the service the partial log
    is attached to the raised ``ServiceUnreachable`` as ``.partial_log``.
    """
    if isinstance(cfg, CemConfig) or cfg is None:
        cfg = HarnessConfig(cem=cfg or CemConfig())
    obs_dim = observation(env.reset(np.random.default_rng(0))).size
    agent = CemAgent(obs_dim, env.action_dim, cfg.cem)
    rng = np.random.default_rng(cfg.cem.seed + 1)
    out = TrainingLog()
    iterations = max(1, budget // cfg.cem.population)
    client = None
    try:
        client = RewardClient(reward_endpoint)
        for it in range(iterations):
            params = agent.ask()
            returns = np.empty(len(params))
            reset_seed = int(rng.integers(2**63))
            for k, theta in enumerate(params):
                ep_rng = np.random.default_rng(reset_seed) if cfg.common_resets else rng
                ro = rollout(env, agent.policy(theta), ep_rng)
                eid = f"s{cfg.cem.seed}-i{it}-k{k}"
                predicted, served, texts = label_rollout(client, env, ro, eid, cfg)
                out.episodes.append(_episode_log(env, eid, ro, predicted, served, texts))
                returns[k] = float(np.sum(served))
            agent.tell(params, returns)
            if (it + 1) % cfg.eval_every == 0 or it == iterations - 1:
                rate, logs = evaluate(env, agent.mean_policy(), cfg.eval_episodes, client, cfg.eval_seed, cfg,
                                      tag=f"s{cfg.cem.seed}-eval{it}")
                rec = EvalRecord(it, (it + 1) * cfg.cem.population, rate, perceived_success(logs), logs)
                out.evaluations.append(rec)
                log.info("iter %d: success %.2f perceived %.1f", it, rate, rec.perceived)
                if on_eval:
                    on_eval(rec)
    except ServiceUnreachable as exc:
        exc.partial_log = out
        raise
    finally:
        if client is not None:
            client.close()
    return out
