"""Structured ``<think>/<answer>`` responses and progress-query prompts."""
from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from .core_types import Frame, Goal, frame_from_dict, frame_to_dict, goal_from_dict, goal_to_dict
from .errors import (
    EmptyThink,
    IndexOutOfRange,
    InvariantViolation,
    MalformedProgress,
    MissingAnswer,
    MissingThink,
    OutOfRange,
    TagOrderViolation,
)

PROGRESS_MIN, PROGRESS_MAX = -100, 100
PREV_DROPOUT = 0.3

_THINK = re.compile(r"<think>(.*?)</think>", re.DOTALL)
_ANSWER = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)
_BODY = re.compile(r"\s*([+-]?)(\d{1,3})%?\s*")


@dataclass(frozen=True)
class StructuredResponse:
    reasoning: str
    progress: int
    raw: str = ""

    def __post_init__(self):
        if not PROGRESS_MIN <= self.progress <= PROGRESS_MAX:
            raise InvariantViolation(f"progress {self.progress} outside [-100, 100]")


def parse_progress(body: str) -> int:
    m = _BODY.fullmatch(body)
    if m is None:
        raise MalformedProgress(f"answer body {body!r} is not an integer percentage")
    value = int(m.group(2)) * (-1 if m.group(1) == "-" else 1)
    if not PROGRESS_MIN <= value <= PROGRESS_MAX:
        raise OutOfRange(f"progress {value} outside [-100, 100]")
    return value


def parse_response(text: str, no_think: bool = False) -> StructuredResponse:
    """Parse the first think block and the first answer block; trailing text is ignored."""
    think = _THINK.search(text)
    answer = _ANSWER.search(text)
    if think and answer and answer.start() < think.start():
        raise TagOrderViolation("<answer> precedes <think>")
    if think is None:
        if not no_think:
            raise MissingThink("no <think>...</think> block")
        reasoning = ""
    else:
        reasoning = think.group(1).strip()
        if not reasoning and not no_think:
            raise EmptyThink("empty <think> block")
    if answer is None:
        raise MissingAnswer("no <answer>...</answer> block")
    return StructuredResponse(reasoning=reasoning, progress=parse_progress(answer.group(1)), raw=text)


def render_response(reasoning: str, progress: int) -> str:
    """Canonical form; the percent sign is always emitted."""
    return f"<think>{reasoning}</think><answer>{int(progress)}%</answer>"


# -- query context ----------------------------------------------------------------


@dataclass(frozen=True)
class QueryContext:
    goal: Goal
    first_frame: Frame
    window: tuple[Frame, ...]
    prev_progress: Optional[int] = None
    K: int = 1

    def __post_init__(self):
        object.__setattr__(self, "window", tuple(self.window))
        if self.K < 0:
            raise InvariantViolation("K must be >= 0")
        if len(self.window) > self.K:
            raise InvariantViolation("window longer than K")


def build_context(
    frames: Sequence[Frame],
    t: int,
    K: int,
    prev_progress: Optional[int],
    dropout_rng: Optional[np.random.Generator] = None,
    goal: Optional[Goal] = None,
    delta: float = PREV_DROPOUT,
) -> QueryContext:
    """Context at 0-based step ``t``: first frame, the last ``K`` frames, previous progress.

    With ``dropout_rng`` the previous progress is omitted with probability
    ``delta``; otherwise it is passed through as given.
    """
    if not 0 <= t < len(frames):
        raise IndexOutOfRange(f"t={t} outside [0, {len(frames)})")
    window = tuple(frames[max(0, t - K + 1) : t + 1]) if K > 0 else ()
    if dropout_rng is not None and prev_progress is not None and dropout_rng.random() < delta:
        prev_progress = None
    return QueryContext(
        goal=goal or Goal("Complete the task", "pick-only"),
        first_frame=frames[0],
        window=window,
        prev_progress=None if prev_progress is None else int(prev_progress),
        K=K,
    )


def context_to_dict(ctx: QueryContext) -> dict:
    return {
        "goal": goal_to_dict(ctx.goal),
        "first_frame": frame_to_dict(ctx.first_frame),
        "window": [frame_to_dict(f) for f in ctx.window],
        "prev_progress": ctx.prev_progress,
        "K": ctx.K,
    }


def context_from_dict(d: dict) -> QueryContext:
    prev = d.get("prev_progress")
    return QueryContext(
        goal=goal_from_dict(d["goal"]),
        first_frame=frame_from_dict(d["first_frame"]),
        window=tuple(frame_from_dict(f) for f in d.get("window", [])),
        prev_progress=None if prev is None else int(prev),
        K=int(d.get("K", len(d.get("window", [])))),
    )


# -- prompts ----------------------------------------------------------------------

STYLES = {"native": "native", "external-baseline": "external"}


@lru_cache(maxsize=None)
def _asset(name: str) -> str:
    return resources.files("progress_reward.data").joinpath("prompts", name).read_text("utf-8").rstrip("\n")


def prompt_version() -> str:
    return _asset("VERSION").strip()


def render_prompt(ctx: QueryContext, style: str = "native") -> str:
    """System prompt (if any) and user prompt with placeholders filled in."""
    if style not in STYLES:
        raise ValueError(f"unknown prompt style {style!r}")
    prefix = STYLES[style]
    prev_sentence = ""
    if ctx.prev_progress is not None:
        prev_sentence = _asset(f"{prefix}_prev.txt").format(prev_progress=ctx.prev_progress)
    user = _asset(f"{prefix}_user.txt").format(
        task_description=ctx.goal.text.rstrip("."), prev_sentence=prev_sentence
    )
    system = _asset(f"{prefix}_system.txt")
    return f"{system}\n\n{user}" if system else user
