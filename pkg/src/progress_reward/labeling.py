"""Ground-truth progress labels and templated reasoning for trajectories."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Optional, Sequence

import numpy as np

from .core_types import EnvState, ProgressRecord, Trajectory
from .errors import (
    DegenerateLength,
    DegenerateRange,
    IndexOutOfRange,
    InvariantViolation,
    MissingProvenance,
    MissingStates,
    NoMatchingRule,
)

CHANGES = ("closer", "same", "farther")

EnrichmentHook = Callable[[str, dict], str]


@dataclass(frozen=True)
class GeometricConfig:
    beta: float = 0.0
    target_object: str = "obj"

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise InvariantViolation("beta must lie in [0, 1]")


@dataclass(frozen=True)
class CotRule:
    reach: str
    transport: str
    text: str


@dataclass(frozen=True)
class CotTemplateSet:
    rules: tuple[CotRule, ...]
    version: str = "1.0"
    enrichment_hook: Optional[EnrichmentHook] = field(default=None, compare=False)

    def __post_init__(self):
        covered = {(r.reach, r.transport) for r in self.rules}
        missing = [(a, b) for a in CHANGES for b in CHANGES if (a, b) not in covered]
        if missing:
            raise NoMatchingRule(f"template rules do not cover {missing}")

    def match(self, reach: str, transport: str) -> CotRule:
        for rule in self.rules:
            if rule.reach == reach and rule.transport == transport:
                return rule
        raise NoMatchingRule((reach, transport))


def load_templates(path: Optional[str] = None, enrichment_hook: Optional[EnrichmentHook] = None) -> CotTemplateSet:
    """Load the rule table; defaults to the table shipped with the package."""
    if path is None:
        raw = resources.files("progress_reward.data").joinpath("cot_templates.json").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            raw = fh.read()
    doc = json.loads(raw)
    rules = tuple(CotRule(r["reach"], r["transport"], r["text"]) for r in doc["rules"])
    return CotTemplateSet(rules=rules, version=str(doc.get("version", "1.0")), enrichment_hook=enrichment_hook)


# -- distances --------------------------------------------------------------------


def reach_distance(s: EnvState) -> float:
    """Summed distance between paired robot and object contact points."""
    return float(sum(math.dist(r, o) for r, o in s.contact_points))


def transport_distance(s: EnvState, cfg: GeometricConfig) -> float:
    if cfg.target_object not in s.object_pos:
        raise InvariantViolation(f"target object {cfg.target_object!r} missing from state")
    return math.dist(s.object_pos[cfg.target_object], s.goal_pos)


def combined_distance(s: EnvState, cfg: GeometricConfig) -> float:
    return (1.0 - cfg.beta) * reach_distance(s) + cfg.beta * transport_distance(s, cfg)


def normalize_distances(y: Sequence[float]) -> np.ndarray:
    """Invert and rescale: smallest distance maps to 1, largest to 0."""
    y = np.asarray(y, dtype=float)
    hi, lo = y.max(), y.min()
    if hi == lo:
        raise DegenerateRange("distance is constant over the trajectory")
    return np.clip((hi - y) / (hi - lo), 0.0, 1.0)


def geometric_progress(traj: Trajectory, cfg: GeometricConfig) -> list[ProgressRecord]:
    if traj.states is None:
        raise MissingStates("geometric progress needs simulator states")
    y = [combined_distance(s, cfg) for s in traj.states]
    return [ProgressRecord.from_v(v) for v in normalize_distances(y)]


def online_progress(initial: EnvState, current: EnvState, cfg: GeometricConfig) -> float:
    """Progress of ``current`` against the episode's first state, for live labeling.

    Uses the same combined distance as ``geometric_progress`` but anchors the
    scale at the initial distance (v=0) and task completion (distance 0, v=1).
    Moving farther away than at the start yields negative values, clipped at -1.
    """
    y0 = combined_distance(initial, cfg)
    if y0 <= 0.0:
        return 1.0
    return float(np.clip((y0 - combined_distance(current, cfg)) / y0, -1.0, 1.0))


def temporal_proxy(T: int, allow_single: bool = False) -> list[float]:
    """Normalized timestep index (t-1)/(T-1) for t = 1..T."""
    if T < 1:
        raise DegenerateLength("T must be positive")
    if T == 1:
        if allow_single:
            return [1.0]
        raise DegenerateLength("temporal proxy needs at least two frames")
    return [t / (T - 1) for t in range(T)]


def inherit_labels(perturbed: Trajectory, expert_labels: Sequence[ProgressRecord]) -> list[ProgressRecord]:
    out = []
    for i, fr in enumerate(perturbed.frames):
        if fr.source_index is None:
            raise MissingProvenance(f"frame {i} has no source_index")
        if not 0 <= fr.source_index < len(expert_labels):
            raise IndexOutOfRange(f"frame {i} points at expert step {fr.source_index}")
        out.append(expert_labels[fr.source_index])
    return out


# -- reasoning text ---------------------------------------------------------------


def _change(delta: float, eps: float) -> str:
    if delta < -eps:
        return "closer"
    if delta > eps:
        return "farther"
    return "same"


def template_cot(
    prev: EnvState,
    curr: EnvState,
    cfg: GeometricConfig,
    templates: CotTemplateSet,
    eps: Optional[float] = None,
    obj_name: str = "object",
) -> str:
    """Describe the change from ``prev`` to ``curr`` with the first matching rule.

    ``eps`` is the no-change band on both distance deltas; by default 1% of the
    combined distance at ``prev``.
    """
    if eps is None:
        eps = max(0.01 * combined_distance(prev, cfg), 1e-9)
    d_reach = reach_distance(curr) - reach_distance(prev)
    d_transport = transport_distance(curr, cfg) - transport_distance(prev, cfg)
    rule = templates.match(_change(d_reach, eps), _change(d_transport, eps))
    text = rule.text.format(obj=obj_name)
    if templates.enrichment_hook is not None:
        text = templates.enrichment_hook(
            text, {"prev": prev, "curr": curr, "d_reach": d_reach, "d_transport": d_transport}
        )
    return text


def describe_progress_change(goal_text: str, prev_p: Optional[int], p: int) -> str:
    """Deterministic stand-in for VLM-written reasoning on frame-only videos."""
    if prev_p is None:
        return (f"This is the first frame of the attempt to {goal_text.lower()}; "
                f"nothing has been done yet, so progress is {p}%. Next, begin the first subgoal.")
    if p > prev_p:
        verdict = "The visible change advances the goal"
    elif p < prev_p:
        verdict = "The visible change undoes earlier work and regresses the goal"
    else:
        verdict = "Nothing relevant changed since the previous frame"
    return (f"Goal: {goal_text}. {verdict}; progress goes from {prev_p}% to {p}%. "
            f"Next, continue toward completing the task.")


def label_trajectory(
    traj: Trajectory,
    mode: str = "geometric",
    cfg: Optional[GeometricConfig] = None,
    templates: Optional[CotTemplateSet] = None,
    with_cot: bool = True,
    allow_single: bool = False,
    obj_name: str = "object",
) -> list[ProgressRecord]:
    """Label every timestep with progress and (optionally) reasoning text.

    geometric: distance-based progress on simulator states.
    temporal: normalized time for experts; perturbed videos inherit the label of
    the expert timestep each frame came from.
    """
    cfg = cfg or GeometricConfig()
    if mode == "geometric":
        records = geometric_progress(traj, cfg)
        if not with_cot:
            return records
        templates = templates or load_templates()
        y0 = combined_distance(traj.states[0], cfg)
        eps = max(0.01 * y0, 1e-9)
        texts = [describe_progress_change(traj.goal.text, None, records[0].p)]
        for prev, curr in zip(traj.states, traj.states[1:]):
            texts.append(template_cot(prev, curr, cfg, templates, eps=eps, obj_name=obj_name))
        return [ProgressRecord(r.v, r.p, t) for r, t in zip(records, texts)]

    if mode != "temporal":
        raise ValueError(f"unknown labeling mode {mode!r}")
    if traj.kind == "expert":
        records = [ProgressRecord.from_v(v) for v in temporal_proxy(traj.T, allow_single)]
    else:
        source_T = int((traj.meta or {}).get("source_length", traj.T))
        expert = [ProgressRecord.from_v(v) for v in temporal_proxy(source_T, allow_single)]
        records = inherit_labels(traj, expert)
    if not with_cot:
        return records
    hook = templates.enrichment_hook if templates is not None else None
    out, prev_p = [], None
    for t, r in enumerate(records):
        text = describe_progress_change(traj.goal.text, prev_p, r.p)
        if hook is not None:
            text = hook(text, {"goal": traj.goal.text, "t": t, "progress": r.p, "prev_progress": prev_p})
        out.append(ProgressRecord(r.v, r.p, text))
        prev_p = r.p
    return out
