"""Scenario evaluation, robustness sweeps, and metric aggregation.

Any agent runs through one interface: an object with ``begin_episode(env)``
and ``act(obs) -> action``. Policies load from checkpoints; the scripted
distance-field oracle plugs into the same slot. Evaluation never updates
parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agents import SqnConfig, act_epsilon_greedy, policy_forward
from .core import Pose2
from .diffcore import ParamSet, load_checkpoint
from .oracle import OracleAgent
from .reward import RewardBreakdown
from .sim import NavEnv, NoiseConfig
from .world import resolve_map

DISTURBANCE_LEVELS = (0.0, 0.1, 0.2, 0.3)
OBS_NOISE_LEVELS = (0.0, 0.2, 0.4, 0.6)

#: epsilon used when a scenario asks for non-greedy evaluation
EVAL_EPSILON = 0.1


@dataclass
class EvalScenario:
    map_name: str
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    n_episodes: int = 100
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    greedy: bool = True

    def __post_init__(self) -> None:
        if self.n_episodes < 1:
            raise ValueError("n_episodes must be >= 1")


@dataclass
class SeedStats:
    seed: int
    success_rate: float
    mean_steps_success: float  # nan when the seed had no successes
    mean_reward: float


@dataclass
class EvalResult:
    success_mean: float
    success_std: float
    time_steps_mean: float
    time_steps_std: float
    avg_reward: float
    per_seed: list[SeedStats]


@dataclass
class TrajectoryLog:
    seed: int
    episode: int
    poses: list[Pose2]          # length steps + 1 (starting pose first)
    actions: list[int]
    etas: list[np.ndarray] | None
    breakdowns: list[RewardBreakdown]
    outcome: str
    goal: tuple[float, float]

    def __len__(self) -> int:
        return len(self.actions)


class PolicyAgent:
    """Checkpointed policy behind the common agent interface."""

    def __init__(self, params: ParamSet, cfg: SqnConfig, epsilon: float,
                 rng: np.random.Generator) -> None:
        self.params = params
        self.cfg = cfg
        self.epsilon = epsilon
        self.rng = rng
        self._h = None
        self.last_eta: np.ndarray | None = None

    def begin_episode(self, env: NavEnv) -> None:
        self._h = None
        self.last_eta = None

    def act(self, obs) -> int:
        out = policy_forward(self.params, self.cfg, obs.as_vector(), self._h)
        self._h = out.h_next
        self.last_eta = None if out.eta is None else out.eta.copy()
        return act_epsilon_greedy(out.q, self.epsilon, self.rng)


def load_policy(checkpoint: str | Path) -> tuple[ParamSet, SqnConfig]:
    params, meta = load_checkpoint(checkpoint)
    try:
        cfg = SqnConfig(n_skills=int(meta.get("n_skills", 2)),
                        feature_width=int(meta.get("feature_width", 128)),
                        n_actions=int(meta.get("n_actions", 5)),
                        agent_kind=meta["agent_kind"])
    except KeyError as exc:
        raise ValueError(f"checkpoint missing header field {exc}") from exc
    missing = [n for n in params.names() if params.value(n).size == 0]
    if missing:
        raise ValueError(f"checkpoint has empty tensors: {missing}")
    return params, cfg


def run_episode(env: NavEnv, agent, mode: str = "eval") -> TrajectoryLog:
    st, obs = env.reset(mode)
    agent.begin_episode(env)
    poses = [st.pose]
    actions: list[int] = []
    etas: list[np.ndarray] | None = None
    breakdowns: list[RewardBreakdown] = []
    while not st.done:
        a = agent.act(obs)
        eta = getattr(agent, "last_eta", None)
        if eta is not None:
            if etas is None:
                etas = []
            etas.append(eta)
        obs, rb, st = env.step(a)
        poses.append(st.pose)
        actions.append(a)
        breakdowns.append(rb)
    return TrajectoryLog(seed=-1, episode=-1, poses=poses, actions=actions,
                         etas=etas, breakdowns=breakdowns, outcome=st.outcome,
                         goal=(st.goal.x, st.goal.y))


def _make_agent(checkpoint, scenario: EvalScenario,
                rng: np.random.Generator):
    if isinstance(checkpoint, str) and checkpoint == "oracle":
        return OracleAgent()
    if isinstance(checkpoint, tuple):
        params, cfg = checkpoint
    else:
        params, cfg = load_policy(checkpoint)
    eps = 0.0 if scenario.greedy else EVAL_EPSILON
    return PolicyAgent(params, cfg, eps, rng)


def evaluate(checkpoint, scenario: EvalScenario,
             out_dir: str | Path | None = None,
             ) -> tuple[EvalResult, list[TrajectoryLog]]:
    """Run the scenario per seed and aggregate across seeds.

    checkpoint: a checkpoint path, a (ParamSet, SqnConfig) pair, or the
    string "oracle" for the scripted distance-field agent. Parameters are
    never modified.
    """
    grid, meta = resolve_map(scenario.map_name)
    logs: list[TrajectoryLog] = []
    per_seed: list[SeedStats] = []
    rows: list[tuple] = []
    for seed in scenario.seeds:
        root = np.random.SeedSequence(seed)
        env_rng, act_rng = (np.random.default_rng(s) for s in root.spawn(2))
        env = NavEnv(grid, meta, scenario.noise, env_rng)
        agent = _make_agent(checkpoint, scenario, act_rng)
        succ = 0
        steps_success: list[int] = []
        rewards: list[float] = []
        for i in range(scenario.n_episodes):
            log = run_episode(env, agent, mode="eval")
            log.seed, log.episode = seed, i
            logs.append(log)
            reward = sum(rb.r_total for rb in log.breakdowns)
            ok = log.outcome == "success"
            succ += ok
            if ok:
                steps_success.append(len(log))
            rewards.append(reward)
            rows.append((seed, i, int(ok), len(log), reward))
        per_seed.append(SeedStats(
            seed=seed,
            success_rate=succ / scenario.n_episodes,
            mean_steps_success=(float(np.mean(steps_success))
                                if steps_success else float("nan")),
            mean_reward=float(np.mean(rewards))))

    sr = np.array([s.success_rate for s in per_seed])
    ts = np.array([s.mean_steps_success for s in per_seed])
    ts = ts[np.isfinite(ts)]
    result = EvalResult(
        success_mean=float(sr.mean()),
        success_std=float(sr.std()),
        time_steps_mean=float(ts.mean()) if ts.size else float("nan"),
        time_steps_std=float(ts.std()) if ts.size else float("nan"),
        avg_reward=float(np.mean([s.mean_reward for s in per_seed])),
        per_seed=per_seed)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "eval_episodes.csv", "w") as fh:
            fh.write("seed,episode,success,steps,reward\n")
            for seed, i, ok, n, reward in rows:
                fh.write(f"{seed},{i},{ok},{n},{repr(reward)}\n")
        _write_summary(out_dir / "eval_summary.csv", scenario, result)
    return result, logs


def _write_summary(path: Path, scenario: EvalScenario, r: EvalResult) -> None:
    with open(path, "w") as fh:
        fh.write("map,n_episodes,seeds,success_mean,success_std,"
                 "time_steps_mean,time_steps_std,avg_reward\n")
        fh.write(f"{scenario.map_name},{scenario.n_episodes},"
                 f"{'/'.join(str(s) for s in scenario.seeds)},"
                 f"{repr(r.success_mean)},{repr(r.success_std)},"
                 f"{repr(r.time_steps_mean)},{repr(r.time_steps_std)},"
                 f"{repr(r.avg_reward)}\n")


def robustness_sweep(checkpoint, map_name: str, axis: str,
                     n_episodes: int = 100,
                     seeds: tuple[int, ...] = (0, 1, 2, 3, 4),
                     out_dir: str | Path | None = None,
                     ) -> list[tuple[float, EvalResult]]:
    """Evaluate at each robustness level of one axis, all else fixed."""
    if axis == "disturbance":
        levels = DISTURBANCE_LEVELS
    elif axis == "observation":
        levels = OBS_NOISE_LEVELS
    else:
        raise ValueError("axis must be 'disturbance' or 'observation'")
    out = []
    for level in levels:
        noise = (NoiseConfig(disturbance_sigma=level) if axis == "disturbance"
                 else NoiseConfig(obs_noise_level=level))
        scenario = EvalScenario(map_name=map_name, noise=noise,
                                n_episodes=n_episodes, seeds=seeds)
        result, _ = evaluate(checkpoint, scenario)
        out.append((level, result))
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / f"robust_{axis}.csv", "w") as fh:
            fh.write("axis,level,success_mean,success_std,time_steps_mean,"
                     "time_steps_std,avg_reward\n")
            for level, r in out:
                fh.write(f"{axis},{repr(level)},{repr(r.success_mean)},"
                         f"{repr(r.success_std)},{repr(r.time_steps_mean)},"
                         f"{repr(r.time_steps_std)},{repr(r.avg_reward)}\n")
    return out
