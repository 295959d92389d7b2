"""File-based pipeline stages: experts -> synth -> label -> train -> serve -> harness -> eval.

Every stage reads JSONL, writes JSONL/JSON, and drops a ``<output>.manifest.json``
next to its main output recording input and output hashes, the seed, the
parameters and library versions. Nothing time-dependent is written, so reruns
with the same seed produce byte-identical files.
"""
from __future__ import annotations

import hashlib
import json
import logging
import platform
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import __version__
from .core_types import (
    SCHEMA_VERSION,
    EpisodeLog,
    ProgressRecord,
    episode_from_dict,
    episode_to_dict,
    read_jsonl,
    read_trajectories,
    record_from_dict,
    record_to_dict,
    trajectory_from_dict,
    trajectory_to_dict,
    validate_trajectory,
    write_jsonl,
    write_trajectories,
)
from .errors import ConfigError, ParseError, ProgressRewardError, StageError
from .eval_metrics import QuadrantReport, classify_quadrant, plot_progress, plot_quadrants, voc_report, write_report
from .grpo_trainer import (
    Featurizer,
    ToyPolicy,
    TrainConfig,
    encode_dataset,
    examples_from_labeled,
    expected_reward,
    predict_trajectory,
    train_grpo,
    train_hybrid,
    train_sft,
)
from .labeling import GeometricConfig, label_trajectory
from .response_format import parse_response, prompt_version
from .reward_service import OracleBackend, PolicyBackend, RewardMap, ServiceConfig, serve
from .rl_harness import TASK_BETA, CemConfig, HarnessConfig, PointMassEnv, generate_experts, run_online_rl
from .rl_harness.env import env_for
from .synthesis import SynthConfig, reversed_trajectory, sample_reversal, synthesize
from .verifiable_reward import RewardSpec, score, score_format

log = logging.getLogger(__name__)

# -- manifests --------------------------------------------------------------------


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def versions() -> dict:
    import scipy

    return {
        "package": __version__,
        "schema": SCHEMA_VERSION,
        "prompts": prompt_version(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def manifest_path(output: str | Path) -> Path:
    output = Path(output)
    return output / "manifest.json" if output.is_dir() else output.with_name(output.name + ".manifest.json")


def write_manifest(output: str | Path, stage: str, seed: Optional[int], inputs: Sequence[str | Path],
                   params: dict, outputs: Sequence[str | Path] = ()) -> Path:
    outs = list(outputs) or [output]
    doc = {
        "schema_version": SCHEMA_VERSION,
        "stage": stage,
        "seed": seed,
        "inputs": {Path(p).name: sha256_file(p) for p in inputs},
        "outputs": {Path(p).name: sha256_file(p) for p in outs if Path(p).is_file()},
        "params": params,
        "versions": versions(),
    }
    path = manifest_path(output)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


def verify_upstream(path: str | Path) -> None:
    """If ``path`` has a manifest, check the file still matches the hash recorded there."""
    man = manifest_path(path)
    if not man.is_file():
        return
    doc = json.loads(man.read_text(encoding="utf-8"))
    want = doc.get("outputs", {}).get(Path(path).name)
    if want is not None and want != sha256_file(path):
        raise ConfigError(f"{path} does not match the hash in {man}; rerun the upstream stage")


def require_inputs(*paths: str | Path | None) -> None:
    for p in paths:
        if p is None or not Path(p).is_file():
            raise ConfigError(f"input file not found: {p}")
        verify_upstream(p)


# -- labeled files ----------------------------------------------------------------


def labeled_row(traj, records: Sequence[ProgressRecord]) -> dict:
    return {**trajectory_to_dict(traj), "progress": [record_to_dict(r) for r in records]}


def read_labeled(path: str | Path):
    trajs, labels = [], []
    for row in read_jsonl(path):
        if "progress" not in row:
            raise ConfigError(f"{path}: rows carry no progress labels; run the label stage first")
        trajs.append(validate_trajectory(trajectory_from_dict(row)))
        labels.append([record_from_dict(r) for r in row["progress"]])
    return trajs, labels


# -- stages -----------------------------------------------------------------------


def stage_experts(task: str, n: int, seed: int, output: str | Path, dim: int = 2) -> list:
    experts = generate_experts(PointMassEnv(task, dim=dim), n, seed)
    write_trajectories(output, experts)
    write_manifest(output, "experts", seed, [], {"task": task, "n": n, "dim": dim})
    return experts


def stage_synth(input: str | Path, output: str | Path, per_expert: int, seed: int,
                family: Optional[str] = None, recover_prob: float = 0.25) -> list:
    require_inputs(input)
    experts = read_trajectories(input)
    cfg = SynthConfig(per_expert=per_expert, seed=seed, family=family, recover_prob=recover_prob)
    out = synthesize(experts, cfg, env_for)
    write_trajectories(output, out)
    write_manifest(output, "synth", seed, [input], asdict(cfg))
    return out


def stage_label(inputs: Sequence[str | Path], output: str | Path, mode: str = "geometric",
                beta: Optional[float] = None, with_cot: bool = True) -> tuple[list, list]:
    require_inputs(*inputs)
    trajs = [t for p in inputs for t in read_trajectories(p)]
    labels = []
    for t in trajs:
        b = beta if beta is not None else TASK_BETA.get((t.meta or {}).get("task", "reach"), 0.0)
        labels.append(label_trajectory(t, mode, GeometricConfig(b), with_cot=with_cot))
    write_jsonl(output, (labeled_row(t, r) for t, r in zip(trajs, labels)))
    write_manifest(output, "label", None, list(inputs), {"mode": mode, "beta": beta, "with_cot": with_cot})
    return trajs, labels


def stage_score(responses: str | Path, labels: str | Path, tau: float, report: str | Path) -> dict:
    """Grade model responses against labels.

    Response rows: ``{"traj": i, "t": t, "response": text}`` indexing the labeled file.
    """
    require_inputs(responses, labels)
    _, labs = read_labeled(labels)
    spec = RewardSpec(tau=tau)
    totals, formats, errors = [], [], {}
    for row in read_jsonl(responses):
        p_true = labs[int(row["traj"])][int(row["t"])].p
        text = str(row["response"])
        totals.append(score(text, p_true, spec))
        formats.append(score_format(text, spec))
        try:
            parse_response(text)
        except ParseError as exc:
            errors[exc.code] = errors.get(exc.code, 0) + 1
    if not totals:
        raise StageError("score", "no responses to grade")
    doc = {
        "n": len(totals),
        "tau": tau,
        "mean_reward": float(np.mean(totals)),
        "mean_format": float(np.mean(formats)),
        "mean_accuracy": float(np.mean(totals) - np.mean(formats)),
        "parse_errors": dict(sorted(errors.items())),
    }
    write_report(report, doc)
    write_manifest(report, "score", None, [responses, labels], {"tau": tau})
    return doc


def split_by_trajectory(n: int, holdout_frac: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    k = max(1, int(round(holdout_frac * n))) if holdout_frac > 0 else 0
    return np.sort(perm[k:]), np.sort(perm[:k])


def build_examples(trajs, labels, idx, K: int, seed: int):
    return examples_from_labeled([trajs[i] for i in idx], [labels[i] for i in idx], K=K,
                                 rng=np.random.default_rng(seed))


def stage_train(data: str | Path, stage: str, cfg: TrainConfig, outdir: str | Path,
                init: Optional[str | Path] = None, holdout_frac: float = 0.2, K: int = 2) -> dict:
    """Train on a labeled file; writes checkpoints and ``history.json`` under ``outdir``."""
    if stage not in ("sft", "grpo", "hybrid"):
        raise ConfigError(f"unknown training stage {stage!r}")
    require_inputs(data)
    if stage == "grpo":
        require_inputs(init)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    trajs, labels = read_labeled(data)
    train_idx, held_idx = split_by_trajectory(len(trajs), holdout_frac, cfg.seed)
    train_set = build_examples(trajs, labels, train_idx, K, cfg.seed)
    held_set = build_examples(trajs, labels, held_idx, K, cfg.seed + 1) if len(held_idx) else train_set
    spec = RewardSpec(tau=cfg.tau)
    written = []
    history: list[dict] = []
    if stage == "hybrid":
        sft, grpo, history = train_hybrid(train_set, cfg, held_set)
        policies = {"sft": sft, "grpo": grpo}
    else:
        rng = np.random.default_rng(cfg.seed)
        if stage == "sft":
            feat = Featurizer.fit([c for c, _ in train_set])
            policy = ToyPolicy.zeros(feat.dim, feat)
        else:
            policy = ToyPolicy.load(init)
        X, y = encode_dataset(policy, train_set)
        Xe, ye = encode_dataset(policy, held_set)

        def eval_fn(pol):
            return {"mean_reward": expected_reward(pol, Xe, ye, cfg.grpo, spec)}

        if stage == "sft":
            policies = {"sft": train_sft(policy, X, y, cfg.sft, rng, history, eval_fn)}
        else:
            ref = policy.copy()
            policies = {"grpo": train_grpo(policy, ref, X, y, cfg.grpo, rng, spec, history, eval_fn, cfg.eval_every)}
    summary: dict[str, Any] = {"stage": stage, "n_train": len(train_set), "n_heldout": len(held_set)}
    for name, pol in policies.items():
        Xe, ye = encode_dataset(pol, held_set)
        summary[f"{name}_heldout_reward"] = expected_reward(pol, Xe, ye, cfg.grpo, spec)
        path = outdir / f"{name}.json"
        pol.save(path)
        written.append(path)
    (outdir / "history.json").write_text(json.dumps({"summary": summary, "history": history}, indent=2) + "\n",
                                         encoding="utf-8")
    written.append(outdir / "history.json")
    write_manifest(outdir, "train", cfg.seed, [data] + ([init] if init else []),
                   {"stage": stage, "holdout_frac": holdout_frac, "K": K, **cfg.to_dict()}, written)
    return summary


def make_reward_map(psi: float = 0.01, clip: float = 100.0, shaping: str = "absolute", gamma: float = 1.0) -> RewardMap:
    return RewardMap(psi=psi, c=clip, shaping=shaping, gamma=gamma)


def write_episodes(path: str | Path, episodes: Sequence[EpisodeLog]) -> None:
    write_jsonl(path, (episode_to_dict(e) for e in episodes))


def read_episodes(path: str | Path) -> list[EpisodeLog]:
    return [episode_from_dict(r) for r in read_jsonl(path)]


def stage_harness(task: str, endpoint: str, episodes: int, seed: int, log_path: str | Path,
                  population: int = 10, query_every: int = 1) -> dict:
    cfg = HarnessConfig(cem=CemConfig(population=population, seed=seed), query_every=query_every)
    try:
        out = run_online_rl(PointMassEnv(task), endpoint, cfg, budget=episodes)
    except ProgressRewardError as exc:
        partial = getattr(exc, "partial_log", None)
        if partial is not None:
            write_episodes(log_path, partial.episodes)
        raise StageError("harness", str(exc), (str(log_path),) if partial is not None else ()) from exc
    final = out.evaluations[-1]
    # training episodes first, then the final deterministic evaluation, tagged by episode_id
    write_episodes(log_path, out.episodes + final.logs)
    eval_path = Path(log_path).with_name(Path(log_path).stem + ".eval.jsonl")
    write_episodes(eval_path, final.logs)
    doc = {
        "task": task,
        "seed": seed,
        "episodes": episodes,
        "curve": [{"episodes": e.episodes_used, "success_rate": e.success_rate, "perceived": e.perceived}
                  for e in out.evaluations],
        "final_success_rate": final.success_rate,
        "final_perceived": final.perceived,
    }
    write_manifest(log_path, "harness", seed, [], {"task": task, "population": population,
                                                   "query_every": query_every}, [log_path, eval_path])
    return doc


def stage_eval_voc(input: str | Path, method: str, report: str | Path, plot: Optional[str | Path] = None) -> dict:
    """VOC of each row's predictions: ``predicted`` (numbers) or ``progress`` (label records)."""
    require_inputs(input)
    videos = []
    for row in read_jsonl(input):
        if "predicted" in row:
            videos.append([float(x) for x in row["predicted"]])
        elif "progress" in row:
            videos.append([float(r["p"]) for r in row["progress"]])
        else:
            raise ConfigError(f"{input}: rows need 'predicted' or 'progress'")
    doc = voc_report(videos, method)
    write_report(report, doc)
    if plot:
        plot_progress({f"video {i}": v for i, v in enumerate(videos[:8])}, plot)
    write_manifest(report, "eval-voc", None, [input], {"method": method})
    return doc


def stage_eval_quadrant(episodes: str | Path, thresholds: tuple[float, float], report: str | Path,
                        plot: Optional[str | Path] = None) -> dict:
    require_inputs(episodes)
    rep = classify_quadrant(read_episodes(episodes), thresholds)
    doc = rep.to_dict()
    write_report(report, doc)
    if plot:
        plot_quadrants({Path(episodes).stem: rep}, plot)
    write_manifest(report, "eval-quadrant", None, [episodes], {"thresholds": list(thresholds)})
    return doc


# -- demo -------------------------------------------------------------------------


@dataclass
class PipelineConfig:
    seed: int = 0
    workdir: str = "demo_out"
    task: str = "reach"
    n_experts: int = 50
    per_expert: int = 4
    label_mode: str = "geometric"
    beta: Optional[float] = None
    context_k: int = 2
    holdout_frac: float = 0.2
    train: TrainConfig = field(default_factory=TrainConfig)
    psi: float = 0.01
    clip: float = 100.0
    shaping: str = "absolute"
    host: str = "127.0.0.1"
    port: int = 0
    timeout_ms: Optional[float] = None
    budget: int = 200
    population: int = 10
    harness_seeds: tuple[int, ...] = (0, 1, 2)
    plots: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown pipeline keys: {sorted(unknown)}")
        if "train" in d:
            d["train"] = TrainConfig.from_dict(d["train"])
        if "harness_seeds" in d:
            d["harness_seeds"] = tuple(int(s) for s in d["harness_seeds"])
        return cls(**d)


def _run_harness_with(backend, task: str, cfg: PipelineConfig, name: str, wd: Path) -> dict:
    rmap = make_reward_map(cfg.psi, cfg.clip, cfg.shaping)
    runs = {}
    with serve(ServiceConfig(backend, rmap, cfg.host, cfg.port, cfg.timeout_ms)) as handle:
        for seed in cfg.harness_seeds:
            path = wd / f"harness_{name}_s{seed}.jsonl"
            doc = stage_harness(task, handle.endpoint, cfg.budget, seed, path, cfg.population)
            quad = classify_quadrant(read_episodes(path.with_name(path.stem + ".eval.jsonl")))
            runs[str(seed)] = {**doc, "quadrant": quad.to_dict()}
    return runs


def run_demo(cfg: PipelineConfig) -> dict:
    """End-to-end desk-scale run; every artifact lands in ``cfg.workdir``."""
    wd = Path(cfg.workdir)
    wd.mkdir(parents=True, exist_ok=True)
    stage = "experts"
    try:
        experts = stage_experts(cfg.task, cfg.n_experts, cfg.seed, wd / "experts.jsonl")
        stage = "synth"
        stage_synth(wd / "experts.jsonl", wd / "nonexpert.jsonl", cfg.per_expert, cfg.seed)
        stage = "label"
        stage_label([wd / "experts.jsonl", wd / "nonexpert.jsonl"], wd / "labeled.jsonl", cfg.label_mode, cfg.beta)
        stage = "train"
        train_cfg = TrainConfig(cfg.train.sft, cfg.train.grpo, cfg.train.tau, cfg.train.eval_every, cfg.seed)
        train_summary = stage_train(wd / "labeled.jsonl", "hybrid", train_cfg, wd / "ckpt",
                                    holdout_frac=cfg.holdout_frac, K=cfg.context_k)
        grpo = ToyPolicy.load(wd / "ckpt" / "grpo.json")

        stage = "eval"
        rng = np.random.default_rng(cfg.seed + 7)
        reversed_ = [reversed_trajectory(e, sample_reversal(e.T, rng)) for e in experts]
        beta = cfg.beta if cfg.beta is not None else TASK_BETA[cfg.task]
        rows = [{"name": "oracle-expert", "predicted": [r.p for r in label_trajectory(e, "geometric", GeometricConfig(beta), with_cot=False)]}
                for e in experts]
        rows += [{"name": "model-expert", "predicted": predict_trajectory(grpo, e, cfg.context_k)} for e in experts]
        rows += [{"name": "model-reversed", "predicted": predict_trajectory(grpo, t, cfg.context_k)} for t in reversed_]
        write_jsonl(wd / "predictions.jsonl", rows)
        voc = {name: voc_report([r["predicted"] for r in rows if r["name"] == name]) for name in
               ("oracle-expert", "model-expert", "model-reversed")}
        voc = {k: {"mean": v["mean"], "n_videos": v["n_videos"], "n_degenerate": v["n_degenerate"]} for k, v in voc.items()}

        stage = "harness"
        harness = {
            "oracle": _run_harness_with(OracleBackend(GeometricConfig(beta)), cfg.task, cfg, "oracle", wd),
            "model": _run_harness_with(PolicyBackend(grpo), cfg.task, cfg, "model", wd),
        }
    except ConfigError:
        raise
    except (ProgressRewardError, OSError, ValueError) as exc:
        raise StageError(stage, str(exc), tuple(str(p) for p in sorted(wd.iterdir()))) from exc

    summary = {"train": train_summary, "voc": voc, "harness": harness}
    write_report(wd / "report.json", summary)
    if cfg.plots:
        reports = {}
        for name, runs in harness.items():
            for seed, run in runs.items():
                q = run["quadrant"]
                reports[f"{name}/s{seed}"] = QuadrantReport(q["perceived"], q["true_success"], q["quadrant"],
                                                            tuple(q["thresholds"]))
        plot_quadrants(reports, wd / "quadrants.svg")
    outputs = sorted(p for p in wd.glob("*.jsonl")) + [wd / "report.json"]
    # the working directory is a location, not a parameter; leave it out so reruns elsewhere match
    params = {k: v for k, v in asdict(cfg).items() if k != "workdir"}
    write_manifest(wd / "report.json", "demo", cfg.seed, [], {"config": params}, outputs)
    return summary


def load_toml(path: str | Path) -> dict:
    if sys.version_info >= (3, 11):
        import tomllib
    else:
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc


__all__ = [
    "PipelineConfig",
    "load_toml",
    "run_demo",
    "stage_eval_quadrant",
    "stage_eval_voc",
    "stage_experts",
    "stage_harness",
    "stage_label",
    "stage_score",
    "stage_synth",
    "stage_train",
    "verify_upstream",
    "write_manifest",
]
