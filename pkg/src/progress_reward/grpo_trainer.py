"""Two-stage training of a small progress predictor: SFT, then GRPO on the verifiable reward.

The policy is a linear softmax over the 201 integer progress bins -100..100.
Every response is one bin wrapped in a fixed reasoning template, so response
log-probabilities, the KL to the reference and all gradients are exact.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .core_types import FAMILIES, ProgressRecord
from .errors import NonFiniteLoss
from .response_format import QueryContext, render_response
from .verifiable_reward import RewardSpec, score, score_accuracy

log = logging.getLogger(__name__)

BINS = np.arange(-100, 101)
N_BINS = len(BINS)
CHECKPOINT_VERSION = "1.0"


def bin_index(p: int) -> int:
    return int(p) + 100


# -- features ---------------------------------------------------------------------


def _summary(ctx: QueryContext) -> np.ndarray:
    first = np.asarray(ctx.first_frame.features)
    frames = ctx.window or (ctx.first_frame,)
    last = np.asarray(frames[-1].features)
    if len(frames) > 1:
        vel = (last - np.asarray(frames[0].features)) / (len(frames) - 1)
    else:
        vel = np.zeros_like(last)
    prev = 0.0 if ctx.prev_progress is None else ctx.prev_progress / 100.0
    return np.concatenate([last, last - first, vel, [prev]])


@dataclass
class Featurizer:
    """Context -> feature vector: bias, prev-progress flag, family one-hot,
    standardized window statistics and Gaussian bumps on each statistic."""

    mean: np.ndarray
    std: np.ndarray
    centers: np.ndarray = field(default_factory=lambda: np.linspace(-2.0, 2.0, 9))
    width: float = 0.5

    @classmethod
    def fit(cls, contexts: Sequence[QueryContext], **kw) -> "Featurizer":
        S = np.stack([_summary(c) for c in contexts])
        std = S.std(axis=0)
        std[std < 1e-9] = 1.0
        return cls(mean=S.mean(axis=0), std=std, **kw)

    @property
    def dim(self) -> int:
        n = len(self.mean)
        return 2 + len(FAMILIES) + n * (1 + len(self.centers))

    def __call__(self, ctx: QueryContext) -> np.ndarray:
        z = (_summary(ctx) - self.mean) / self.std
        fam = np.zeros(len(FAMILIES))
        fam[FAMILIES.index(ctx.goal.family)] = 1.0
        bumps = np.exp(-0.5 * ((z[:, None] - self.centers[None, :]) / self.width) ** 2)
        has_prev = 0.0 if ctx.prev_progress is None else 1.0
        return np.concatenate([[1.0, has_prev], fam, z, bumps.ravel()])

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(),
                "centers": self.centers.tolist(), "width": self.width}

    @classmethod
    def from_dict(cls, d: dict) -> "Featurizer":
        return cls(np.asarray(d["mean"]), np.asarray(d["std"]), np.asarray(d["centers"]), float(d["width"]))


# -- policy -----------------------------------------------------------------------


def log_softmax(z: np.ndarray) -> np.ndarray:
    return z - logsumexp(z, axis=-1, keepdims=True)


@dataclass
class ToyPolicy:
    weights: np.ndarray  # (N_BINS, n_features)
    featurizer: Optional[Featurizer] = None
    think_template: str = ("Comparing the current frame with the first and previous frames, "
                           "the task appears to be {p}% complete.")

    @classmethod
    def zeros(cls, n_features: int, featurizer: Optional[Featurizer] = None) -> "ToyPolicy":
        return cls(np.zeros((N_BINS, n_features)), featurizer)

    def features(self, ctx: QueryContext) -> np.ndarray:
        if self.featurizer is None:
            raise ValueError("policy has no featurizer; pass feature vectors directly")
        return self.featurizer(ctx)

    def logits(self, phi: np.ndarray) -> np.ndarray:
        return phi @ self.weights.T

    def log_probs(self, phi: np.ndarray) -> np.ndarray:
        return log_softmax(self.logits(phi))

    def respond(self, p: int) -> str:
        return render_response(self.think_template.format(p=int(p)), int(p))

    def predict(self, ctx: QueryContext) -> int:
        """Greedy (mode) progress for one query."""
        return int(BINS[int(np.argmax(self.logits(self.features(ctx))))])

    def copy(self) -> "ToyPolicy":
        return ToyPolicy(self.weights.copy(), self.featurizer, self.think_template)

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "weights": self.weights.tolist(),
            "featurizer": None if self.featurizer is None else self.featurizer.to_dict(),
            "think_template": self.think_template,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToyPolicy":
        if str(d.get("version", "1")).split(".")[0] != CHECKPOINT_VERSION.split(".")[0]:
            raise ValueError(f"unsupported checkpoint version {d.get('version')}")
        feat = d.get("featurizer")
        return cls(np.asarray(d["weights"], dtype=float),
                   None if feat is None else Featurizer.from_dict(feat),
                   d.get("think_template", cls.think_template))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ToyPolicy":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# -- SFT --------------------------------------------------------------------------


def sft_nll(policy: ToyPolicy, phi: np.ndarray, p_true: int) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of the labeled bin and its gradient w.r.t. the weights."""
    lp = policy.log_probs(phi)
    k = bin_index(p_true)
    g_logits = np.exp(lp)
    g_logits[k] -= 1.0
    return float(-lp[k]), np.outer(g_logits, phi)


def sft_batch(policy: ToyPolicy, X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean NLL over a batch of feature rows ``X`` with bin labels ``y``."""
    lp = policy.log_probs(X)
    idx = np.asarray(y) + 100
    rows = np.arange(len(X))
    G = np.exp(lp)
    G[rows, idx] -= 1.0
    return float(-lp[rows, idx].mean()), G.T @ X / len(X)


# -- GRPO -------------------------------------------------------------------------


@dataclass
class GrpoConfig:
    G: int = 8
    epsilon: float = 0.2
    kl_beta: float = 0.01
    temperature: float = 0.7
    nucleus_p: float = 0.9
    learning_rate: float = 1e-3
    seed: int = 0
    steps: int = 150
    batch_queries: int = 64
    inner_steps: int = 2
    corruption_rate: float = 0.05
    freeze_old: bool = False
    lr_decay: bool = True  # linear decay to zero over ``steps``

    def __post_init__(self):
        if self.G < 2:
            raise ValueError("G must be >= 2")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.kl_beta < 0:
            raise ValueError("kl_beta must be >= 0")
        if not 0 < self.nucleus_p <= 1:
            raise ValueError("nucleus_p must lie in (0, 1]")


@dataclass
class GroupSample:
    query: Optional[QueryContext]
    phi: np.ndarray
    target: int
    bins: np.ndarray  # sampled progress values, one per candidate
    texts: list[str]
    old_logp: np.ndarray
    rewards: np.ndarray
    advantages: np.ndarray

    def __post_init__(self):
        G = len(self.bins)
        if G < 2 or not (len(self.texts) == len(self.old_logp) == len(self.rewards) == len(self.advantages) == G):
            raise ValueError("group vectors must share a length G >= 2")


def group_advantages(rewards: Sequence[float]) -> np.ndarray:
    """Standardize within the group (population std); a flat group gets zeros."""
    r = np.asarray(rewards, dtype=float)
    if len(r) < 2:
        raise ValueError("need at least two rewards")
    sd = r.std()
    # relative floor: rounding noise on a flat group must not become signal
    if sd <= 1e-12 * max(1.0, np.abs(r).max()):
        return np.zeros_like(r)
    return (r - r.mean()) / sd


def sampling_probs(logits: np.ndarray, temperature: float, nucleus_p: float) -> np.ndarray:
    """Distribution actually sampled from: temperature scaling, then top-p truncation."""
    if temperature <= 1e-8:
        out = np.zeros_like(logits)
        out[int(np.argmax(logits))] = 1.0
        return out
    p = np.exp(log_softmax(logits / temperature))
    if nucleus_p >= 1.0:
        return p
    order = np.argsort(-p, kind="stable")
    csum = np.cumsum(p[order])
    keep = int(np.searchsorted(csum, nucleus_p)) + 1
    out = np.zeros_like(p)
    kept = order[:keep]
    out[kept] = p[kept] / p[kept].sum()
    return out


CORRUPTIONS = (
    lambda p: f"<answer>{p}%</answer>",
    lambda p: f"<think>progress estimate</think> about {p} percent",
    lambda p: f"<answer>{p}%</answer><think>progress estimate</think>",
    lambda p: f"<think>progress estimate</think><answer>{p}.5%</answer>",
    lambda p: f"<think></think>{p}",
)


def sample_group(
    policy: ToyPolicy,
    phi: np.ndarray,
    target: int,
    cfg: GrpoConfig,
    rng: np.random.Generator,
    spec: RewardSpec = RewardSpec(),
    query: Optional[QueryContext] = None,
) -> GroupSample:
    logits = policy.logits(phi)
    probs = sampling_probs(logits, cfg.temperature, cfg.nucleus_p)
    idx = rng.choice(N_BINS, size=cfg.G, p=probs)
    bins = BINS[idx]
    corrupt = rng.random(cfg.G) < cfg.corruption_rate
    which = rng.integers(len(CORRUPTIONS), size=cfg.G)
    texts = [CORRUPTIONS[w](int(b)) if c else policy.respond(int(b)) for b, c, w in zip(bins, corrupt, which)]
    rewards = np.array([score(t, target, spec) for t in texts])
    old_logp = log_softmax(logits)[idx]
    return GroupSample(query, phi, int(target), bins, texts, old_logp, rewards, group_advantages(rewards))


def kl_categorical(lp: np.ndarray, lq: np.ndarray) -> float:
    return float(np.sum(np.exp(lp) * (lp - lq)))


def grpo_step(
    policy: ToyPolicy,
    old_policy: ToyPolicy,
    ref_policy: ToyPolicy,
    group: GroupSample,
    cfg: GrpoConfig,
) -> tuple[float, np.ndarray]:
    """Clipped surrogate minus exact KL to the reference, and its gradient (ascent direction)."""
    phi = group.phi
    lp = policy.log_probs(phi)
    lp_ref = ref_policy.log_probs(phi)
    idx = bin_index(0) + np.asarray(group.bins)
    old_logp = old_policy.log_probs(phi)[idx] if old_policy is not None else group.old_logp
    p = np.exp(lp)
    rho = np.exp(lp[idx] - old_logp)
    A = group.advantages
    lo, hi = 1.0 - cfg.epsilon, 1.0 + cfg.epsilon
    unclipped = rho * A
    clipped = np.clip(rho, lo, hi) * A
    surrogate = np.minimum(unclipped, clipped)
    # the unclipped branch carries gradient wherever it is the (weak) minimum
    active = unclipped <= clipped
    g_logits = np.zeros(N_BINS)
    coef = np.where(active, A * rho, 0.0) / len(A)
    for k, c in zip(idx, coef):
        g_logits[k] += c
    g_logits -= coef.sum() * p

    kl = float(np.sum(p * (lp - lp_ref)))
    g_logits -= cfg.kl_beta * p * (lp - lp_ref - kl)
    objective = float(surrogate.mean() - cfg.kl_beta * kl)
    return objective, np.outer(g_logits, phi)


def grpo_batch(policy, old_policy, ref_policy, groups: Sequence[GroupSample], cfg: GrpoConfig):
    total, grad = 0.0, np.zeros_like(policy.weights)
    for g in groups:
        obj, gr = grpo_step(policy, old_policy, ref_policy, g, cfg)
        total += obj
        grad += gr
    return total / len(groups), grad / len(groups)


# -- optimization -----------------------------------------------------------------


class Adam:
    def __init__(self, shape, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def update(self, grad: np.ndarray) -> np.ndarray:
        """Step to *subtract* from the parameters for the given descent gradient."""
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad**2
        mh = self.m / (1 - self.b1**self.t)
        vh = self.v / (1 - self.b2**self.t)
        return self.lr * mh / (np.sqrt(vh) + self.eps)


@dataclass
class SftConfig:
    steps: int = 300
    learning_rate: float = 0.05
    batch_size: int = 256
    eval_every: int = 50


@dataclass
class TrainConfig:
    sft: SftConfig = field(default_factory=SftConfig)
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    tau: float = 20.0
    eval_every: int = 25
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        sft = SftConfig(**d.pop("sft", {}))
        grpo = GrpoConfig(**d.pop("grpo", {}))
        return cls(sft=sft, grpo=grpo, **d)

    def to_dict(self) -> dict:
        return asdict(self)


Example = tuple[QueryContext, ProgressRecord]


def encode_dataset(policy: ToyPolicy, dataset: Sequence[Example]) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([policy.features(ctx) for ctx, _ in dataset])
    y = np.array([rec.p for _, rec in dataset], dtype=int)
    return X, y


def expected_reward(
    policy: ToyPolicy,
    X: np.ndarray,
    y: np.ndarray,
    cfg: GrpoConfig,
    spec: RewardSpec = RewardSpec(),
) -> float:
    """Exact mean verifiable reward of well-formed responses under the sampling distribution."""
    acc = spec.alpha * np.exp(-np.abs(BINS[None, :] - y[:, None]) / spec.tau)
    logits = policy.logits(X)
    total = 0.0
    for row, a in zip(logits, acc):
        total += float(sampling_probs(row, cfg.temperature, cfg.nucleus_p) @ a)
    return spec.format_max + total / len(X)


def greedy_accuracy(policy: ToyPolicy, X: np.ndarray, y: np.ndarray, spec: RewardSpec = RewardSpec()) -> float:
    pred = BINS[np.argmax(policy.logits(X), axis=1)]
    return float(np.mean([score_accuracy(a, b, spec) for a, b in zip(pred, y)]))


def _finite_or_raise(value: float, stage: str, step: int) -> None:
    if not math.isfinite(value):
        raise NonFiniteLoss(f"{stage} produced a non-finite value at step {step}")


def train_sft(policy: ToyPolicy, X: np.ndarray, y: np.ndarray, cfg: SftConfig, rng: np.random.Generator,
              history: Optional[list] = None, eval_fn=None) -> ToyPolicy:
    opt = Adam(policy.weights.shape, cfg.learning_rate)
    good = policy.copy()
    for step in range(1, cfg.steps + 1):
        idx = rng.choice(len(X), size=min(cfg.batch_size, len(X)), replace=False)
        loss, grad = sft_batch(policy, X[idx], y[idx])
        try:
            _finite_or_raise(loss, "sft", step)
        except NonFiniteLoss as exc:
            exc.checkpoint = good
            raise
        good = policy.copy()
        policy.weights -= opt.update(grad)
        if history is not None and eval_fn is not None and (step % cfg.eval_every == 0 or step == cfg.steps):
            history.append({"stage": "sft", "step": step, "loss": loss, **eval_fn(policy)})
    return policy


def train_grpo(policy: ToyPolicy, ref: ToyPolicy, X: np.ndarray, y: np.ndarray, cfg: GrpoConfig,
               rng: np.random.Generator, spec: RewardSpec = RewardSpec(),
               history: Optional[list] = None, eval_fn=None, eval_every: int = 25) -> ToyPolicy:
    opt = Adam(policy.weights.shape, cfg.learning_rate)
    for step in range(1, cfg.steps + 1):
        if cfg.lr_decay:
            opt.lr = cfg.learning_rate * (1.0 - (step - 1) / cfg.steps)
        old = ref if cfg.freeze_old else policy.copy()
        idx = rng.choice(len(X), size=min(cfg.batch_queries, len(X)), replace=False)
        groups = [sample_group(old, X[i], int(y[i]), cfg, rng, spec) for i in idx]
        for _ in range(cfg.inner_steps):
            objective, grad = grpo_batch(policy, old, ref, groups, cfg)
            if not math.isfinite(objective):
                exc = NonFiniteLoss(f"grpo produced a non-finite objective at step {step}")
                exc.checkpoint = old
                raise exc
            policy.weights -= opt.update(-grad)
        if history is not None and eval_fn is not None and (step % eval_every == 0 or step == cfg.steps):
            history.append({"stage": "grpo", "step": step, "objective": objective,
                            "group_reward": float(np.mean([g.rewards.mean() for g in groups])),
                            **eval_fn(policy)})
    return policy


def train_hybrid(
    dataset: Sequence[Example],
    cfg: TrainConfig,
    eval_set: Optional[Sequence[Example]] = None,
) -> tuple[ToyPolicy, ToyPolicy, list[dict]]:
    """SFT from zero weights, then GRPO initialized from and regularized toward the SFT policy."""
    rng = np.random.default_rng(cfg.seed)
    spec = RewardSpec(tau=cfg.tau)
    featurizer = Featurizer.fit([ctx for ctx, _ in dataset])
    policy = ToyPolicy.zeros(featurizer.dim, featurizer)
    X, y = encode_dataset(policy, dataset)
    Xe, ye = encode_dataset(policy, eval_set) if eval_set else (X, y)

    def eval_fn(pol):
        return {"mean_reward": expected_reward(pol, Xe, ye, cfg.grpo, spec),
                "greedy_accuracy": greedy_accuracy(pol, Xe, ye, spec)}

    history: list[dict] = []
    sft = train_sft(policy, X, y, cfg.sft, rng, history, eval_fn)
    log.info("sft done: %s", history[-1] if history else {})
    ref = sft.copy()
    grpo = train_grpo(sft.copy(), ref, X, y, cfg.grpo, rng, spec, history, eval_fn, cfg.eval_every)
    log.info("grpo done: %s", history[-1] if history else {})
    return ref, grpo, history


def predict_trajectory(policy: ToyPolicy, traj, K: int = 2) -> list[int]:
    """Greedy per-frame predictions, feeding each answer back as the next query's previous progress."""
    from .response_format import build_context

    out: list[int] = []
    for t in range(traj.T):
        ctx = build_context(traj.frames, t, K, out[-1] if out else None, goal=traj.goal)
        out.append(policy.predict(ctx))
    return out


def examples_from_labeled(trajectories, labels, K: int = 2, delta: float = 0.3,
                          rng: Optional[np.random.Generator] = None) -> list[Example]:
    """One query per timestep; the previous label is offered with probability 1 - delta."""
    from .response_format import build_context

    rng = rng if rng is not None else np.random.default_rng(0)
    out: list[Example] = []
    for traj, recs in zip(trajectories, labels):
        for t, rec in enumerate(recs):
            prev = recs[t - 1].p if t > 0 else None
            ctx = build_context(traj.frames, t, K, prev, rng, goal=traj.goal, delta=delta)
            out.append((ctx, rec))
    return out
