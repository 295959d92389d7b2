"""Rule-based reward for progress responses: format credit plus accuracy credit."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ParseError
from .response_format import _ANSWER, _THINK, parse_progress, parse_response

FORMAT_MAX = 0.5
ACC_MAX = 1.5


@dataclass(frozen=True)
class RewardSpec:
    tau: float = 20.0
    alpha: float = ACC_MAX
    format_max: float = FORMAT_MAX
    acc_max: float = ACC_MAX

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not 0 <= self.alpha <= self.acc_max:
            raise ValueError("alpha must lie in [0, acc_max]")


def _think_ok(text: str) -> bool:
    m = _THINK.search(text)
    return bool(m and m.group(1).strip())


def _answer_ok(text: str) -> bool:
    m = _ANSWER.search(text)
    if m is None:
        return False
    try:
        parse_progress(m.group(1))
    except ParseError:
        return False
    return True


def score_format(text: str, spec: RewardSpec = RewardSpec()) -> float:
    """Full credit for a parseable response, a quarter point per well-formed tag pair otherwise."""
    try:
        parse_response(text)
        return spec.format_max
    except ParseError:
        pass
    n_ok = int(_think_ok(text)) + int(_answer_ok(text))
    return spec.format_max / 2 if n_ok else 0.0


def score_accuracy(p_hat: int, p_true: int, spec: RewardSpec = RewardSpec()) -> float:
    return spec.alpha * math.exp(-abs(int(p_hat) - int(p_true)) / spec.tau)


def score(text: str, p_true: int, spec: RewardSpec = RewardSpec()) -> float:
    """Total reward in [0, 2]; accuracy counts only when the response parses."""
    try:
        parsed = parse_response(text)
    except ParseError:
        return score_format(text, spec)
    return spec.format_max + score_accuracy(parsed.progress, p_true, spec)
