import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from progress_reward.errors import NonFiniteLoss
from progress_reward.grpo_trainer import (
    BINS,
    N_BINS,
    GroupSample,
    GrpoConfig,
    SftConfig,
    ToyPolicy,
    group_advantages,
    grpo_step,
    kl_categorical,
    sample_group,
    sampling_probs,
    sft_batch,
    sft_nll,
    train_grpo,
    train_sft,
)
from progress_reward.verifiable_reward import score

N_FEAT = 5


def _policy(seed, scale=0.3):
    rng = np.random.default_rng(seed)
    return ToyPolicy(scale * rng.standard_normal((N_BINS, N_FEAT)))


def _numeric_grad(f, W, h=1e-6, n=40, seed=0):
    """Central differences on a random subset of weight entries."""
    rng = np.random.default_rng(seed)
    rows = rng.integers(W.shape[0], size=n)
    cols = rng.integers(W.shape[1], size=n)
    out = []
    for r, c in zip(rows, cols):
        Wp, Wm = W.copy(), W.copy()
        Wp[r, c] += h
        Wm[r, c] -= h
        out.append((f(Wp) - f(Wm)) / (2 * h))
    return rows, cols, np.array(out)


def _group(policy, phi, target, bins, rewards=None):
    bins = np.asarray(bins)
    texts = [policy.respond(int(b)) for b in bins]
    rewards = np.array([score(t, target) for t in texts]) if rewards is None else np.asarray(rewards, float)
    old = policy.log_probs(phi)[bins + 100]
    return GroupSample(None, phi, target, bins, texts, old, rewards, group_advantages(rewards))


def test_sft_gradient_matches_finite_differences():
    pol = _policy(0)
    phi = np.random.default_rng(1).standard_normal(N_FEAT)
    _, grad = sft_nll(pol, phi, 37)
    rows, cols, num = _numeric_grad(lambda W: sft_nll(ToyPolicy(W), phi, 37)[0], pol.weights)
    assert np.allclose(grad[rows, cols], num, atol=1e-6)


def test_sft_batch_matches_mean_of_singles():
    pol = _policy(2)
    X = np.random.default_rng(3).standard_normal((6, N_FEAT))
    y = np.array([-40, 0, 10, 55, 100, 3])
    loss, grad = sft_batch(pol, X, y)
    singles = [sft_nll(pol, x, t) for x, t in zip(X, y)]
    assert loss == pytest.approx(np.mean([s[0] for s in singles]), abs=1e-12)
    assert np.allclose(grad, np.mean([s[1] for s in singles], axis=0), atol=1e-12)


@pytest.mark.parametrize("epsilon,kl_beta", [(0.2, 0.0), (0.2, 0.5), (50.0, 0.1)])
def test_grpo_gradient_matches_finite_differences(epsilon, kl_beta):
    cfg = GrpoConfig(epsilon=epsilon, kl_beta=kl_beta)
    pol, old, ref = _policy(4), _policy(5), _policy(6)
    phi = np.random.default_rng(7).standard_normal(N_FEAT)
    grp = _group(old, phi, 20, [10, 20, 25, -5, 60, 20, 19, 80])
    _, grad = grpo_step(pol, old, ref, grp, cfg)
    rows, cols, num = _numeric_grad(lambda W: grpo_step(ToyPolicy(W), old, ref, grp, cfg)[0], pol.weights)
    assert np.allclose(grad[rows, cols], num, atol=1e-5)


def test_advantages_standardized():
    a = group_advantages([1.0, 2.0, 3.0, 4.0])
    assert a.mean() == pytest.approx(0, abs=1e-12) and a.std() == pytest.approx(1, abs=1e-12)
    assert np.all(group_advantages([0.7] * 5) == 0)
    with pytest.raises(ValueError):
        group_advantages([1.0])


@given(st.lists(st.floats(0, 2), min_size=2, max_size=16))
def test_advantages_properties(rewards):
    a = group_advantages(rewards)
    assert abs(a.mean()) < 1e-9
    assert np.isclose(a.std(), 1.0) or np.all(a == 0)
    order = np.argsort(rewards, kind="stable")
    assert np.all(np.diff(a[order]) >= -1e-12)


def test_on_policy_gradient_is_policy_gradient():
    # at pi == pi_old == pi_ref the ratios are 1, KL is 0, and the gradient is
    # the plain advantage-weighted score function
    cfg = GrpoConfig(kl_beta=0.3)
    pol = _policy(8)
    phi = np.random.default_rng(9).standard_normal(N_FEAT)
    grp = _group(pol, phi, 50, [50, 40, 70, 50, -10, 90])
    obj, grad = grpo_step(pol, pol, pol, grp, cfg)
    assert obj == pytest.approx(0.0, abs=1e-12)
    p = np.exp(pol.log_probs(phi))
    expected = np.zeros(N_BINS)
    for b, A in zip(grp.bins, grp.advantages):
        e = -p.copy()
        e[b + 100] += 1
        expected += A * e / len(grp.bins)
    assert np.allclose(grad, np.outer(expected, phi), atol=1e-12)


def test_large_kl_pulls_toward_reference():
    cfg = GrpoConfig(kl_beta=1e4, learning_rate=0.05, steps=30, lr_decay=False, batch_queries=4,
                     corruption_rate=0.0)
    ref, pol = _policy(10, 0.1), _policy(11, 0.6)
    X = np.random.default_rng(12).standard_normal((4, N_FEAT))
    y = np.array([0, 20, 40, 60])

    def kl(p):
        return np.mean([kl_categorical(p.log_probs(x), ref.log_probs(x)) for x in X])

    before = kl(pol)
    train_grpo(pol, ref, X, y, cfg, np.random.default_rng(0))
    assert kl(pol) < 0.5 * before


def test_sampling_probs_greedy_and_nucleus():
    logits = np.array([0.0, 3.0, 1.0, -2.0])
    g = sampling_probs(logits, 0.0, 0.9)
    assert list(g) == [0, 1, 0, 0]
    full = sampling_probs(logits, 1.0, 1.0)
    assert full.sum() == pytest.approx(1.0)
    top = sampling_probs(logits, 1.0, 0.5)
    assert np.count_nonzero(top) == 1 and top[1] == 1.0
    mid = sampling_probs(logits, 1.0, 0.95)
    assert mid[3] == 0 and mid.sum() == pytest.approx(1.0)


def test_sample_group_is_deterministic_and_scored():
    pol = _policy(13)
    phi = np.ones(N_FEAT)
    cfg = GrpoConfig(G=6, corruption_rate=0.5)
    a = sample_group(pol, phi, 30, cfg, np.random.default_rng(1))
    b = sample_group(pol, phi, 30, cfg, np.random.default_rng(1))
    assert list(a.bins) == list(b.bins) and a.texts == b.texts
    assert all(r == score(t, 30) for t, r in zip(a.texts, a.rewards))
    assert set(a.bins) <= set(BINS)


def test_group_length_validation():
    with pytest.raises(ValueError):
        GroupSample(None, np.zeros(2), 0, np.array([1]), ["x"], np.zeros(1), np.zeros(1), np.zeros(1))
    with pytest.raises(ValueError):
        GrpoConfig(G=1)


def test_sft_learns_a_constant_label():
    X = np.ones((32, 1))
    y = np.full(32, 42)
    pol = train_sft(ToyPolicy.zeros(1), X, y, SftConfig(steps=200, learning_rate=0.1, batch_size=16),
                    np.random.default_rng(0))
    assert BINS[np.argmax(pol.logits(X[0]))] == 42


def test_non_finite_loss_keeps_last_good_checkpoint():
    X = np.full((4, 1), np.nan)
    with pytest.raises(NonFiniteLoss) as info:
        train_sft(ToyPolicy.zeros(1), X, np.zeros(4, int), SftConfig(steps=3), np.random.default_rng(0))
    assert np.all(np.isfinite(info.value.checkpoint.weights))


def test_checkpoint_round_trip(tmp_path):
    pol = _policy(14)
    path = tmp_path / "p.json"
    pol.save(path)
    assert np.array_equal(ToyPolicy.load(path).weights, pol.weights)


@settings(max_examples=20)
@given(st.integers(0, 10_000))
def test_clipping_caps_positive_advantage(seed):
    # with a far-off current policy the clipped objective never exceeds (1+eps)*A
    cfg = GrpoConfig(epsilon=0.2, kl_beta=0.0)
    old, pol = _policy(seed), _policy(seed + 1, 2.0)
    phi = np.random.default_rng(seed).standard_normal(N_FEAT)
    grp = _group(old, phi, 0, [0, 5, 10, 50], rewards=[2.0, 1.0, 0.5, 0.1])
    obj, _ = grpo_step(pol, old, pol, grp, cfg)
    assert obj <= 1.2 * np.abs(grp.advantages).max() + 1e-12
