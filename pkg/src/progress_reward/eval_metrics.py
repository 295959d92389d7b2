"""Offline metrics: value-order correlation, predicted-vs-true correlation, perceived/true quadrants."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .core_types import EpisodeLog
from .errors import DegenerateSequence, EmptyInput, ShapeMismatch

METHODS = ("spearman", "kendall")
QUADRANTS = ("success", "reward-hacking", "signal-limited", "under-confident")


def voc(predicted: Sequence[float], method: str = "spearman") -> float:
    """Rank correlation between predictions and chronological order (ties get average ranks)."""
    x = np.asarray(predicted, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise EmptyInput("voc needs at least two predictions")
    if np.all(x == x[0]):
        raise DegenerateSequence("all predictions are equal")
    order = np.arange(x.size)
    if method == "spearman":
        ranks = stats.rankdata(x)
        if np.unique(ranks).size == x.size:
            # tie-free closed form is exact for hand-checkable cases
            n = x.size
            d2 = float(np.sum((ranks - (order + 1)) ** 2))
            r = 1.0 - 6.0 * d2 / (n * (n * n - 1))
        else:
            r = np.corrcoef(ranks, order)[0, 1]
    elif method == "kendall":
        r = stats.kendalltau(x, order).statistic
    else:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    return float(np.clip(r, -1.0, 1.0))


@dataclass(frozen=True)
class VocResult:
    value: float
    degenerate: bool


def voc_or_zero(predicted: Sequence[float], method: str = "spearman") -> VocResult:
    try:
        return VocResult(voc(predicted, method), False)
    except DegenerateSequence:
        return VocResult(0.0, True)


def voc_report(videos: Iterable[Sequence[float]], method: str = "spearman") -> dict:
    """Per-video VOC with mean aggregation; flat videos count as 0 and are flagged."""
    results = [voc_or_zero(v, method) for v in videos]
    if not results:
        raise EmptyInput("no videos to score")
    values = [r.value for r in results]
    return {
        "method": method,
        "mean": float(np.mean(values)),
        "n_videos": len(results),
        "n_degenerate": sum(r.degenerate for r in results),
        "per_video": values,
        "degenerate": [r.degenerate for r in results],
    }


def predicted_true_correlation(predicted: Sequence[float], truth: Sequence[float]) -> float:
    p = np.asarray(predicted, dtype=float)
    t = np.asarray(truth, dtype=float)
    if p.shape != t.shape or p.ndim != 1:
        raise ShapeMismatch("predicted and truth must be 1-D and equally long")
    if p.size < 2:
        raise EmptyInput("need at least two points")
    if np.all(t == t[0]) or np.all(p == p[0]):
        raise DegenerateSequence("correlation undefined for a constant sequence")
    return float(np.clip(np.corrcoef(p, t)[0, 1], -1.0, 1.0))


@dataclass(frozen=True)
class QuadrantReport:
    perceived: float
    true_success: float
    quadrant: str
    thresholds: tuple[float, float] = (50.0, 0.5)

    def __post_init__(self):
        if self.quadrant != quadrant_of(self.perceived, self.true_success, self.thresholds):
            raise ValueError("quadrant inconsistent with thresholds")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["thresholds"] = list(self.thresholds)
        return d


def quadrant_of(perceived: float, true_success: float, thresholds: tuple[float, float] = (50.0, 0.5)) -> str:
    """High perceived means strictly above its threshold; high true means at or above its threshold."""
    p_thr, t_thr = thresholds
    high_p, high_t = perceived > p_thr, true_success >= t_thr
    if high_t:
        return "success" if high_p else "under-confident"
    return "reward-hacking" if high_p else "signal-limited"


def classify_quadrant(episodes: Sequence[EpisodeLog], thresholds: tuple[float, float] = (50.0, 0.5)) -> QuadrantReport:
    if not episodes:
        raise EmptyInput("no episodes to classify")
    perceived = float(np.mean([max(e.predicted_progress) for e in episodes]))
    # binary true rewards make the mean of per-episode maxima the success rate
    true_success = float(np.mean([max(e.true_rewards) if e.true_rewards else float(e.success) for e in episodes]))
    return QuadrantReport(perceived, true_success, quadrant_of(perceived, true_success, thresholds), tuple(thresholds))


def write_report(path: str | Path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    # fixed salt and no timestamp keep SVG output byte-stable across runs
    matplotlib.rcParams["svg.hashsalt"] = "progress-reward"
    import matplotlib.pyplot as plt

    return plt


def plot_quadrants(reports: dict[str, QuadrantReport], path: str | Path) -> None:
    """Scatter of perceived vs true success with the threshold lines, saved as SVG."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4.5, 4))
    for name, r in reports.items():
        ax.scatter(r.perceived, r.true_success)
        ax.annotate(name, (r.perceived, r.true_success), textcoords="offset points", xytext=(4, 4), fontsize=8)
    if reports:
        p_thr, t_thr = next(iter(reports.values())).thresholds
        ax.axvline(p_thr, color="grey", lw=0.8, ls="--")
        ax.axhline(t_thr, color="grey", lw=0.8, ls="--")
    ax.set_xlim(-5, 105)
    ax.set_ylim(-0.05, 1.05)
    ax.set_xlabel("perceived success (mean max predicted progress)")
    ax.set_ylabel("true success")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_progress(curves: dict[str, Sequence[float]], path: str | Path, ylabel: str = "progress") -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3))
    for name, ys in curves.items():
        ax.plot(np.arange(len(ys)), ys, label=name)
    ax.set_xlabel("timestep")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)

