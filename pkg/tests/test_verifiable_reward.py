import math

import pytest
from hypothesis import given, strategies as st

from progress_reward.response_format import render_response
from progress_reward.verifiable_reward import RewardSpec, score, score_accuracy, score_format

progress = st.integers(-100, 100)


@given(progress, progress)
def test_score_range(p_hat, p_true):
    r = score(render_response("ok", p_hat), p_true)
    assert 0.5 <= r <= 2.0


@given(progress, progress)
def test_exact_iff_two(p_hat, p_true):
    r = score(render_response("ok", p_hat), p_true)
    assert (r == 2.0) == (p_hat == p_true)


def test_accuracy_decay_value():
    # ten points off at tau 20
    assert score_accuracy(50, 40) == pytest.approx(1.5 * math.exp(-0.5), abs=1e-12)
    assert score_accuracy(0, 100) == pytest.approx(1.5 * math.exp(-5), abs=1e-12)
    assert score_accuracy(0, 100, RewardSpec(tau=100)) == pytest.approx(1.5 * math.exp(-1), abs=1e-12)


@given(progress, progress, progress)
def test_accuracy_monotone_in_error(p_true, a, b):
    if abs(a - p_true) < abs(b - p_true):
        assert score_accuracy(a, p_true) > score_accuracy(b, p_true)


@pytest.mark.parametrize("text,expected", [
    ("<think>r</think><answer>5%</answer>", 0.5),
    ("<answer>5%</answer>", 0.25),
    ("<think>r</think>", 0.25),
    ("<think>r</think><answer>five</answer>", 0.25),
    ("<answer>5%</answer><think>r</think>", 0.25),
    ("<think></think><answer>nope</answer>", 0.0),
    ("plain text", 0.0),
])
def test_format_credit(text, expected):
    assert score_format(text) == expected


def test_malformed_gets_no_accuracy():
    assert score("<answer>40%</answer>", 40) == 0.25
    assert score("40", 40) == 0.0


def test_spec_validation():
    with pytest.raises(ValueError):
        RewardSpec(tau=0)
    with pytest.raises(ValueError):
        RewardSpec(alpha=2.0)
