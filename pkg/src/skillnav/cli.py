"""Command-line front end: train, eval, robust, plot.

Config files are ``key = value`` lines mirroring the learner/agent config
fields ('#' comments allowed); command-line flags override file values.
Exits 0 on success, 1 with a one-line reason otherwise.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .agents import AGENT_KINDS, SqnConfig
from .evalharness import EvalScenario, evaluate, load_policy, robustness_sweep
from .render import learning_curve_plot, render_outputs
from .sim import NoiseConfig
from .training import LearnerConfig, RunConfig, train
from .world import resolve_map


def _parse_config_file(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for ln in Path(path).read_text().splitlines():
        ln = ln.split("#", 1)[0].strip()
        if not ln:
            continue
        if "=" not in ln:
            raise ValueError(f"config line without '=': {ln!r}")
        key, _, value = ln.partition("=")
        out[key.strip()] = value.strip()
    return out


def _coerce(value: str, typ):
    if typ is bool:
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    return typ(value)


def _configs_from_file(path: str | None) -> tuple[dict, dict, dict]:
    """Split config-file keys among LearnerConfig, SqnConfig, NoiseConfig."""
    learner: dict = {}
    agent: dict = {}
    noise: dict = {}
    if path is None:
        return learner, agent, noise
    fields = {
        **{f.name: (learner, f.type) for f in dataclasses.fields(LearnerConfig)},
        **{f.name: (agent, f.type) for f in dataclasses.fields(SqnConfig)},
        **{f.name: (noise, f.type) for f in dataclasses.fields(NoiseConfig)},
    }
    types = {"int": int, "float": float, "str": str, "bool": bool}
    for key, value in _parse_config_file(path).items():
        if key not in fields:
            raise ValueError(f"unknown config key {key!r}")
        dest, type_name = fields[key]
        dest[key] = _coerce(value, types.get(type_name, str))
    return learner, agent, noise


def _cmd_train(args) -> int:
    learner_kw, agent_kw, noise_kw = _configs_from_file(args.config)
    if args.agent is not None:
        agent_kw["agent_kind"] = args.agent
    if args.episodes is not None:
        learner_kw["max_episodes"] = args.episodes
    run = RunConfig(map_name=args.map,
                    agent=SqnConfig(**agent_kw),
                    learner=LearnerConfig(**learner_kw),
                    seed=args.seed,
                    out_dir=Path(args.out),
                    train_noise=NoiseConfig(**noise_kw))
    summary = train(run)
    print(f"trained {summary.episodes} episodes ({summary.updates} updates); "
          f"metrics: {summary.metrics_path}; final: {summary.final_checkpoint}; "
          f"best eval reward {summary.best_eval_reward:.3f}")
    return 0


def _scenario_from_args(args, map_name: str) -> EvalScenario:
    return EvalScenario(map_name=map_name,
                        n_episodes=args.episodes,
                        seeds=tuple(range(args.seeds)),
                        greedy=args.greedy)


def _resolve_eval_map(args) -> str:
    if args.map is not None:
        return args.map
    if args.ckpt == "oracle":
        raise ValueError("--map is required when evaluating the oracle agent")
    from .diffcore import load_checkpoint
    _, meta = load_checkpoint(args.ckpt)
    if "map" not in meta:
        raise ValueError("checkpoint has no map in its header; pass --map")
    return meta["map"]


def _cmd_eval(args) -> int:
    map_name = _resolve_eval_map(args)
    scenario = _scenario_from_args(args, map_name)
    if args.sigma or args.obs_noise:
        scenario.noise = NoiseConfig(disturbance_sigma=args.sigma,
                                     obs_noise_level=args.obs_noise)
    result, _ = evaluate(args.ckpt, scenario, out_dir=args.out)
    print(f"map={map_name} episodes={scenario.n_episodes} x "
          f"{len(scenario.seeds)} seeds: "
          f"success={result.success_mean:.3f}+-{result.success_std:.3f} "
          f"time_steps={result.time_steps_mean:.1f}+-{result.time_steps_std:.1f} "
          f"avg_reward={result.avg_reward:.3f}")
    return 0


def _cmd_robust(args) -> int:
    map_name = _resolve_eval_map(args)
    rows = robustness_sweep(args.ckpt, map_name, args.axis,
                            n_episodes=args.episodes,
                            seeds=tuple(range(args.seeds)),
                            out_dir=args.out)
    for level, r in rows:
        print(f"{args.axis}={level}: success={r.success_mean:.3f}"
              f"+-{r.success_std:.3f} time_steps={r.time_steps_mean:.1f}")
    return 0


def _cmd_plot(args) -> int:
    run_dir = Path(args.run)
    metrics = run_dir / "metrics.csv"
    written = []
    if metrics.exists():
        written.append(learning_curve_plot(metrics, run_dir / "learning_curve.png"))
    ckpt = next((p for p in (run_dir / "best.ckpt", run_dir / "final.ckpt")
                 if p.exists()), None)
    if ckpt is not None:
        from .diffcore import load_checkpoint
        _, meta = load_checkpoint(ckpt)
        map_name = meta.get("map")
        if map_name:
            scenario = EvalScenario(map_name=map_name, n_episodes=2, seeds=(0,))
            _, logs = evaluate(ckpt, scenario)
            grid, world_meta = resolve_map(map_name)
            written += render_outputs(logs, grid, world_meta, run_dir,
                                      metrics_csv=None)
    if not written:
        raise ValueError(f"nothing to plot in {run_dir} "
                         "(no metrics.csv or checkpoint found)")
    for p in written:
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skillnav",
        description="Mapless-navigation laboratory: train and evaluate "
                    "skill-ensemble Q-learning agents in 2D worlds.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an agent on a map")
    p.add_argument("--map", required=True, help="builtin map name or file path")
    p.add_argument("--agent", choices=AGENT_KINDS, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--episodes", type=int, default=None,
                   help="override max_episodes")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint (or the oracle)")
    p.add_argument("--ckpt", required=True,
                   help="checkpoint path, or 'oracle' for the scripted agent")
    p.add_argument("--map", default=None, help="defaults to the checkpoint's map")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seeds", type=int, default=5, help="number of seeds (0..n-1)")
    p.add_argument("--greedy", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--sigma", type=float, default=0.0,
                   help="motion disturbance sigma")
    p.add_argument("--obs-noise", type=float, default=0.0,
                   help="relative range-noise level")
    p.add_argument("--out", default=None, help="directory for CSV outputs")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("robust", help="robustness sweep over one noise axis")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--axis", choices=("disturbance", "observation"), required=True)
    p.add_argument("--map", default=None)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_robust)

    p = sub.add_parser("plot", help="render plots for a training run directory")
    p.add_argument("--run", required=True)
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
