"""Command-line entry point.

Precedence: command-line flags, then the ``--config`` TOML file, then defaults.
Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""
from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .errors import ConfigError, ProgressRewardError
from .reward_service.client import parse_endpoint

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3

log = logging.getLogger("progress_reward")


def _add_global(p: argparse.ArgumentParser) -> None:
    # on every subparser too, so flags work before or after the subcommand
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed")
    p.add_argument("--config", default=argparse.SUPPRESS, help="TOML configuration file")
    p.add_argument("--verbose", "-v", action="count", default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="progress-reward", description=__doc__.splitlines()[0])
    _add_global(parser)
    sub = parser.add_subparsers(dest="command", required=True)

    def cmd(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        _add_global(p)
        return p

    p = cmd("experts", "roll out scripted expert trajectories")
    p.add_argument("--task", choices=("reach", "push", "pick"), default="reach")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--dim", type=int, choices=(2, 3), default=2)
    p.add_argument("--output", required=True)

    p = cmd("synth", "derive non-expert trajectories from experts")
    p.add_argument("--input", required=True)
    p.add_argument("--family", default=None)
    p.add_argument("--per-expert", type=int, default=4)
    p.add_argument("--recover-prob", type=float, default=0.25)
    p.add_argument("--output", required=True)

    p = cmd("label", "attach progress labels and reasoning")
    p.add_argument("--input", required=True, nargs="+")
    p.add_argument("--mode", choices=("geometric", "temporal"), default="geometric")
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--no-cot", action="store_true")
    p.add_argument("--output", required=True)

    p = cmd("score", "grade responses with the verifiable reward")
    p.add_argument("--responses", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--tau", type=float, default=20.0)
    p.add_argument("--report", required=True)

    p = cmd("train", "fit the toy progress policy")
    p.add_argument("--data", required=True)
    p.add_argument("--stage", choices=("sft", "grpo", "hybrid"), default="hybrid")
    p.add_argument("--init", default=None, help="starting checkpoint for --stage grpo")
    p.add_argument("--holdout", type=float, default=0.2)
    p.add_argument("--out", required=True)

    p = cmd("serve", "run the reward service until interrupted")
    p.add_argument("--backend", choices=("oracle", "scripted", "remote", "policy"), default="oracle")
    p.add_argument("--bind", default="127.0.0.1:7777")
    p.add_argument("--psi", type=float, default=0.01)
    p.add_argument("--clip", type=float, default=100.0)
    p.add_argument("--shaping", choices=("absolute", "potential"), default="absolute")
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--script", default=None, help="JSON script spec file, or a replay JSONL")
    p.add_argument("--checkpoint", default=None, help="policy checkpoint for --backend policy")
    p.add_argument("--endpoint", default=None)
    p.add_argument("--timeout-ms", type=float, default=None)

    p = cmd("harness", "online RL against a running reward service")
    p.add_argument("--task", choices=("reach", "push", "pick"), default="reach")
    p.add_argument("--rewarder", required=True, help="HOST:PORT")
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--population", type=int, default=10)
    p.add_argument("--query-every", type=int, default=1)
    p.add_argument("--log", required=True)

    p = cmd("eval", "offline metrics")
    ev = p.add_subparsers(dest="metric", required=True)
    v = ev.add_parser("voc")
    _add_global(v)
    v.add_argument("--input", required=True)
    v.add_argument("--method", choices=("spearman", "kendall"), default="spearman")
    v.add_argument("--report", required=True)
    v.add_argument("--plot", default=None, help="write an SVG line chart here")
    q = ev.add_parser("quadrant")
    _add_global(q)
    q.add_argument("--episodes", required=True)
    q.add_argument("--perceived-thr", type=float, default=50.0)
    q.add_argument("--true-thr", type=float, default=0.5)
    q.add_argument("--report", default=None)
    q.add_argument("--plot", default=None, help="write an SVG scatter here")

    p = cmd("demo", "end-to-end desk-scale pipeline")
    p.add_argument("--workdir", default=None)
    p.add_argument("--budget", type=int, default=None)
    return parser


def _config(args) -> dict:
    path = getattr(args, "config", None)
    if path is None:
        return {}
    from .pipeline import load_toml

    return load_toml(path)


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return sec


def _seed(args, cfg: dict, default: int = 0) -> int:
    return int(getattr(args, "seed", cfg.get("seed", default)))


def _script_spec(path: Optional[str]):
    from .reward_service import ScriptSpec

    if path is None:
        return ScriptSpec()
    if not Path(path).is_file():
        raise ConfigError(f"script file not found: {path}")
    if path.endswith(".jsonl"):
        return ScriptSpec(mode="replay", path=path)
    try:
        return ScriptSpec(**json.loads(Path(path).read_text(encoding="utf-8")))
    except (json.JSONDecodeError, TypeError) as exc:
        raise ConfigError(f"bad script spec {path}: {exc}") from exc


def _print(doc) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


def run(args, cfg: dict) -> int:
    from . import pipeline as pl

    seed = _seed(args, cfg)
    c = args.command
    if c == "experts":
        trajs = pl.stage_experts(args.task, args.n, seed, args.output, args.dim)
        print(f"wrote {len(trajs)} expert trajectories to {args.output}")
    elif c == "synth":
        out = pl.stage_synth(args.input, args.output, args.per_expert, seed, args.family, args.recover_prob)
        print(f"wrote {len(out)} non-expert trajectories to {args.output}")
    elif c == "label":
        trajs, _ = pl.stage_label(args.input, args.output, args.mode, args.beta, not args.no_cot)
        print(f"labeled {len(trajs)} trajectories into {args.output}")
    elif c == "score":
        _print(pl.stage_score(args.responses, args.labels, args.tau, args.report))
    elif c == "train":
        from .grpo_trainer import TrainConfig

        train = dict(_section(cfg, "train"))
        K = int(train.pop("context_k", 2))
        try:
            tc = TrainConfig.from_dict({**train, "seed": seed})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad [train] section: {exc}") from exc
        _print(pl.stage_train(args.data, args.stage, tc, args.out, args.init, args.holdout, K))
    elif c == "serve":
        return _serve(args, cfg)
    elif c == "harness":
        try:
            parse_endpoint(args.rewarder)
        except ValueError as exc:
            raise ConfigError(f"--rewarder must be HOST:PORT, got {args.rewarder!r}") from exc
        _print(pl.stage_harness(args.task, args.rewarder, args.episodes, seed, args.log, args.population,
                                args.query_every))
    elif c == "eval":
        if args.metric == "voc":
            _print(pl.stage_eval_voc(args.input, args.method, args.report, args.plot))
        else:
            report = args.report or str(Path(args.episodes).with_suffix(".quadrant.json"))
            _print(pl.stage_eval_quadrant(args.episodes, (args.perceived_thr, args.true_thr), report, args.plot))
    elif c == "demo":
        demo = dict(_section(cfg, "demo"))
        demo["seed"] = seed
        if args.workdir:
            demo["workdir"] = args.workdir
        if args.budget:
            demo["budget"] = args.budget
        if "train" in cfg and "train" not in demo:
            demo["train"] = cfg["train"]
        try:
            pcfg = pl.PipelineConfig.from_dict(demo)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        summary = pl.run_demo(pcfg)
        _print({"workdir": pcfg.workdir, "train": summary["train"], "voc": summary["voc"],
                "harness": {k: {s: {"success": r["final_success_rate"], "quadrant": r["quadrant"]["quadrant"]}
                                for s, r in runs.items()} for k, runs in summary["harness"].items()}})
    return EXIT_OK


def _serve(args, cfg: dict) -> int:
    from .pipeline import make_reward_map
    from .reward_service import ServiceConfig, make_backend
    from .reward_service.server import serve_forever

    sec = _section(cfg, "serve")
    try:
        host, port = parse_endpoint(args.bind)
    except ValueError as exc:
        raise ConfigError(f"--bind must be HOST:PORT, got {args.bind!r}") from exc
    kind = args.backend
    if kind == "remote" and not args.endpoint:
        raise ConfigError("--backend remote needs --endpoint URL")
    if kind == "policy" and not (args.checkpoint and Path(args.checkpoint).is_file()):
        raise ConfigError("--backend policy needs an existing --checkpoint")
    backend = make_backend(kind, beta=args.beta, script=_script_spec(args.script), endpoint=args.endpoint,
                           checkpoint=args.checkpoint, timeout_s=sec.get("remote_timeout_s", 30.0))
    rmap = make_reward_map(args.psi, args.clip, args.shaping, float(sec.get("gamma", 1.0)))
    config = ServiceConfig(backend, rmap, host, port, args.timeout_ms, int(sec.get("max_workers", 8)))
    try:
        asyncio.run(serve_forever(config))
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(getattr(args, "verbose", 0), logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return run(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProgressRewardError as exc:
        partial = getattr(exc, "partial", ())
        print(f"stage failed: {exc}", file=sys.stderr)
        if partial:
            print("partial outputs: " + ", ".join(partial), file=sys.stderr)
        return EXIT_STAGE
    except OSError as exc:
        print(f"stage failed: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
