"""Sequence replay, the burn-in double-Q learner, and the training loop.

Episodes are replayed whole and always re-unrolled from a zero hidden state;
the first ``burn_in`` steps only warm the recurrent state and contribute
neither loss nor gradient. TD targets are double-Q: the online network picks
the argmax action at t+1, the target network evaluates it.

Two numerically distinct learner modes exist:

* ``episodic`` -- the reference semantics: per-episode losses computed one
  episode at a time (batch dimension 1, the same code path acting uses, so
  recomputed Q-values match acting bitwise) and summed;
* ``batched`` -- the default: the sampled episodes are stacked into one
  padded batch. Identical math, but BLAS reduction order differs across
  batch widths, so gradients agree with the episodic mode only to float32
  rounding. Both modes are deterministic run-to-run.
"""

from __future__ import annotations

import math
import threading
import time
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .agents import (SqnConfig, act_epsilon_greedy, backward_sequence,
                     build_params, forward_sequence, policy_forward)
from .core import Pose2
from .diffcore import ParamSet, optimizer_step, polyak_update, save_checkpoint
from .reward import RewardBreakdown
from .sim import NavEnv, NoiseConfig, Observation, OBS_DIM
from .world import resolve_map

METRICS_COLUMNS = ("episode", "phase", "seed", "epsilon", "reward", "success",
                   "steps", "loss_mean", "wall_ms")


@dataclass
class StepRecord:
    obs: Observation
    action: int
    reward: float
    done: bool
    eta_log: np.ndarray | None = None


@dataclass
class EpisodeSequence:
    """One whole episode, stored as stacked arrays (the replay unit)."""

    obs: np.ndarray        # (T, OBS_DIM) float32, observation before each action
    actions: np.ndarray    # (T,) int64
    rewards: np.ndarray    # (T,) float32
    dones: np.ndarray      # (T,) bool, True only at the final step
    eta: np.ndarray | None  # (T, N) float32 skill decisions, analysis only
    outcome: str

    def __len__(self) -> int:
        return len(self.actions)

    def steps(self) -> list[StepRecord]:
        out = []
        for t in range(len(self)):
            obs = Observation(ranges=self.obs[t, :-2],
                              goal_dist=float(self.obs[t, -2]),
                              goal_bearing=float(self.obs[t, -1]))
            out.append(StepRecord(obs=obs, action=int(self.actions[t]),
                                  reward=float(self.rewards[t]),
                                  done=bool(self.dones[t]),
                                  eta_log=None if self.eta is None else self.eta[t]))
        return out

    @classmethod
    def from_records(cls, records: list[StepRecord], outcome: str) -> "EpisodeSequence":
        if not records:
            raise ValueError("empty episode")
        obs = np.stack([r.obs.as_vector() for r in records])
        eta = None
        if records[0].eta_log is not None:
            eta = np.stack([r.eta_log for r in records]).astype(np.float32)
        return cls(obs=obs,
                   actions=np.array([r.action for r in records], dtype=np.int64),
                   rewards=np.array([r.reward for r in records], dtype=np.float32),
                   dones=np.array([r.done for r in records], dtype=bool),
                   eta=eta, outcome=outcome)


class ReplayBuffer:
    """FIFO episode store; append and sample are atomic at episode level."""

    def __init__(self, capacity: int) -> None:
        self._dq: deque[EpisodeSequence] = deque(maxlen=capacity)
        self._lock = threading.Lock()

    def __len__(self) -> int:
        with self._lock:
            return len(self._dq)

    def append(self, episode: EpisodeSequence) -> None:
        if len(episode) == 0:
            raise ValueError("empty episode")
        with self._lock:
            self._dq.append(episode)

    def sample(self, batch_size: int,
               rng: np.random.Generator) -> list[EpisodeSequence]:
        """Uniform sampling with replacement (batch may exceed buffer size)."""
        with self._lock:
            n = len(self._dq)
            if n == 0:
                raise ValueError("cannot sample from an empty buffer")
            idx = rng.integers(n, size=batch_size)
            return [self._dq[int(i)] for i in idx]

    def snapshot(self) -> list[EpisodeSequence]:
        with self._lock:
            return list(self._dq)


@dataclass
class LearnerConfig:
    batch_size: int = 64
    gamma: float = 0.99
    tau: float = 0.002
    burn_in: int = 10
    eps_start: float = 0.4
    eps_end: float = 0.1
    eps_decay_episodes: int = 5000
    max_episodes: int = 10_000
    buffer_capacity: int = 2000
    update_every: int = 1
    learner_updates_per_episode: int = 4
    lr: float = 1e-4
    grad_clip_norm: float = 10.0
    huber_delta: float = 1.0
    eval_every: int = 50
    eval_episodes: int = 5
    checkpoint_every: int = 500
    learner_mode: str = "batched"  # batched | episodic
    # shaping added to the *stored* terminal reward of successful training
    # episodes (never to logged or evaluated rewards); 0 = pure Eq.9 returns
    success_bonus: float = 0.0

    def __post_init__(self) -> None:
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if not 0 <= self.eps_end <= self.eps_start <= 1:
            raise ValueError("need 0 <= eps_end <= eps_start <= 1")
        if self.learner_mode not in ("batched", "episodic"):
            raise ValueError("learner_mode must be 'batched' or 'episodic'")


def epsilon_at(episode_idx: int, cfg: LearnerConfig) -> float:
    if episode_idx < 0:
        raise ValueError("episode index must be >= 0")
    frac = min(episode_idx / cfg.eps_decay_episodes, 1.0)
    return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac


# ------------------------------------------------------------- rollout

@dataclass
class RolloutResult:
    episode: EpisodeSequence
    total_reward: float
    steps: int
    outcome: str
    poses: list[Pose2] | None = None
    breakdowns: list[RewardBreakdown] | None = None
    goal: tuple[float, float] | None = None


def rollout_episode(env: NavEnv, params: ParamSet, acfg: SqnConfig,
                    epsilon: float, action_rng: np.random.Generator,
                    mode: str = "train",
                    collect_trajectory: bool = False,
                    success_bonus: float = 0.0) -> RolloutResult:
    """Run one episode with epsilon-greedy actions from the given parameters.

    success_bonus shapes only the stored record of a successful final step;
    the returned total_reward is always the unshaped sum.
    """
    st, obs = env.reset(mode)
    records: list[StepRecord] = []
    poses = [st.pose] if collect_trajectory else None
    breakdowns: list[RewardBreakdown] | None = [] if collect_trajectory else None
    h = None
    total = 0.0
    while not st.done:
        out = policy_forward(params, acfg, obs.as_vector(), h)
        action = act_epsilon_greedy(out.q, epsilon, action_rng)
        rec = StepRecord(obs=obs, action=action, reward=0.0, done=False,
                         eta_log=None if out.eta is None else out.eta.copy())
        next_obs, rb, st = env.step(action)
        rec.reward = rb.r_total
        rec.done = st.done
        records.append(rec)
        total += rb.r_total
        if st.done and st.outcome == "success" and success_bonus:
            rec.reward += success_bonus
        h = out.h_next
        obs = next_obs
        if collect_trajectory:
            poses.append(st.pose)
            breakdowns.append(rb)
    return RolloutResult(
        episode=EpisodeSequence.from_records(records, st.outcome),
        total_reward=total, steps=st.step_count, outcome=st.outcome,
        poses=poses, breakdowns=breakdowns,
        goal=(st.goal.x, st.goal.y))


# ------------------------------------------------------------- loss

def huber(err: np.ndarray, delta: float) -> np.ndarray:
    a = np.abs(err)
    return np.where(a <= delta, 0.5 * err * err, delta * (a - 0.5 * delta))


def huber_grad(err: np.ndarray, delta: float) -> np.ndarray:
    return np.clip(err, -delta, delta)


def td_targets(q_online_next: np.ndarray, q_target_next: np.ndarray,
               rewards: np.ndarray, dones: np.ndarray,
               gamma: float) -> np.ndarray:
    """Double-Q targets: online argmax at t+1, target evaluation.

    All inputs aligned so index t holds step t's reward/done and the t+1
    Q-rows; the final step of an episode has done=True and bootstraps
    nothing.
    """
    a_star = np.argmax(q_online_next, axis=-1)
    boot = np.take_along_axis(q_target_next, a_star[..., None], axis=-1)[..., 0]
    return rewards + gamma * (1.0 - dones.astype(np.float32)) * boot


@dataclass
class LossResult:
    loss: float
    n_episodes: int
    n_skipped: int


def _stack_episodes(episodes: list[EpisodeSequence], burn_in: int):
    usable = [e for e in episodes if len(e) > burn_in + 1]
    skipped = len(episodes) - len(usable)
    if not usable:
        return None, skipped
    b = len(usable)
    t_max = max(len(e) for e in usable)
    obs = np.zeros((b, t_max, OBS_DIM), dtype=np.float32)
    actions = np.zeros((b, t_max), dtype=np.int64)
    rewards = np.zeros((b, t_max), dtype=np.float32)
    dones = np.ones((b, t_max), dtype=bool)
    trained = np.zeros((b, t_max), dtype=bool)
    for i, e in enumerate(usable):
        t = len(e)
        obs[i, :t] = e.obs
        actions[i, :t] = e.actions
        rewards[i, :t] = e.rewards
        dones[i, :t] = e.dones
        trained[i, burn_in:t] = True
    return (obs, actions, rewards, dones, trained), skipped


def _loss_on_stack(online: ParamSet, target: ParamSet, stack,
                   lcfg: LearnerConfig, acfg: SqnConfig) -> float:
    obs, actions, rewards, dones, trained = stack
    b, t_max = actions.shape
    fwd_on = forward_sequence(online, acfg, obs, cache=True)
    fwd_tg = forward_sequence(target, acfg, obs, cache=False)

    y = np.zeros((b, t_max), dtype=np.float32)
    if t_max > 1:
        y[:, :-1] = td_targets(fwd_on.q[:, 1:], fwd_tg.q[:, 1:],
                               rewards[:, :-1], dones[:, :-1], lcfg.gamma)
    # final column: done there if real, masked out if padding
    y[:, -1] = rewards[:, -1]

    rows = np.arange(b)[:, None]
    cols = np.arange(t_max)[None, :]
    pred = fwd_on.q[rows, cols, actions]
    err = np.where(trained, pred - y, 0.0).astype(np.float32)
    n_per = trained.sum(axis=1)
    per_episode = huber(err, lcfg.huber_delta).sum(axis=1) / n_per
    loss = float(per_episode.sum())

    dq = np.zeros_like(fwd_on.q)
    g = huber_grad(err, lcfg.huber_delta) / n_per[:, None].astype(np.float32)
    g = np.where(trained, g, 0.0).astype(np.float32)
    np.add.at(dq, (rows, cols, actions), g)
    backward_sequence(online, acfg, fwd_on.caches, dq, start_t=lcfg.burn_in)
    return loss


def compute_sequence_loss(online: ParamSet, target: ParamSet,
                          episode: EpisodeSequence, lcfg: LearnerConfig,
                          acfg: SqnConfig) -> float:
    """Burn-in double-Q Huber loss of one episode; gradients accumulate into
    the online parameter set's buffers.

    This is the reference (batch-width-1) path: the Q-values it recomputes
    for the stored observations are bitwise identical to the acting-time
    forward pass.
    """
    if len(episode) <= lcfg.burn_in + 1:
        raise ValueError(
            f"episode of length {len(episode)} too short for burn-in {lcfg.burn_in}")
    stack, _ = _stack_episodes([episode], lcfg.burn_in)
    return _loss_on_stack(online, target, stack, lcfg, acfg)


def learner_update(online: ParamSet, target: ParamSet,
                   episodes: list[EpisodeSequence], lcfg: LearnerConfig,
                   acfg: SqnConfig) -> LossResult:
    """One gradient accumulation over a sampled batch (no optimizer step)."""
    if lcfg.learner_mode == "episodic":
        loss = 0.0
        used = skipped = 0
        for e in episodes:
            if len(e) <= lcfg.burn_in + 1:
                skipped += 1
                continue
            loss += compute_sequence_loss(online, target, e, lcfg, acfg)
            used += 1
        return LossResult(loss=loss, n_episodes=used, n_skipped=skipped)
    stack, skipped = _stack_episodes(episodes, lcfg.burn_in)
    if stack is None:
        return LossResult(loss=0.0, n_episodes=0, n_skipped=skipped)
    loss = _loss_on_stack(online, target, stack, lcfg, acfg)
    return LossResult(loss=loss, n_episodes=len(episodes) - skipped,
                      n_skipped=skipped)


# ------------------------------------------------------------- training loop

class TrainingDiverged(RuntimeError):
    pass


@dataclass
class RunConfig:
    map_name: str
    agent: SqnConfig = field(default_factory=SqnConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    seed: int = 0
    out_dir: Path = Path("runs/latest")
    train_noise: NoiseConfig = field(default_factory=NoiseConfig)


@dataclass
class TrainSummary:
    metrics_path: Path
    final_checkpoint: Path
    best_checkpoint: Path
    best_eval_reward: float
    episodes: int
    updates: int


def _fmt(v: float) -> str:
    return repr(float(v))


class MetricsWriter:
    def __init__(self, path: Path) -> None:
        self.path = path
        self._fh = open(path, "w")
        self._fh.write(",".join(METRICS_COLUMNS) + "\n")

    def row(self, episode: int, phase: str, seed: int, epsilon: float,
            reward: float, success: bool, steps: int,
            loss_mean: float | None, wall_ms: int) -> None:
        loss_txt = "" if loss_mean is None else _fmt(loss_mean)
        self._fh.write(f"{episode},{phase},{seed},{_fmt(epsilon)},{_fmt(reward)},"
                       f"{int(success)},{steps},{loss_txt},{wall_ms}\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def checkpoint_meta(run: RunConfig) -> dict[str, str]:
    return {"agent_kind": run.agent.agent_kind,
            "n_skills": str(run.agent.n_skills),
            "feature_width": str(run.agent.feature_width),
            "n_actions": str(run.agent.n_actions),
            "map": run.map_name,
            "seed": str(run.seed)}


def train(run: RunConfig) -> TrainSummary:
    """Episode-driven training: roll, store, update, evaluate, checkpoint."""
    lcfg, acfg = run.learner, run.agent
    grid, meta = resolve_map(run.map_name)
    out_dir = Path(run.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    root = np.random.SeedSequence(run.seed)
    init_rng, env_rng, act_rng, buf_rng, eval_env_rng, eval_act_rng = (
        np.random.default_rng(s) for s in root.spawn(6))
    online = build_params(acfg, init_rng)
    target = online.copy()
    buffer = ReplayBuffer(lcfg.buffer_capacity)
    env = NavEnv(grid, meta, run.train_noise, env_rng)
    eval_env = NavEnv(grid, meta, NoiseConfig(), eval_env_rng)

    metrics = MetricsWriter(out_dir / "metrics.csv")
    ckpt_meta = checkpoint_meta(run)
    best_eval = -math.inf
    best_path = out_dir / "best.ckpt"
    updates = 0
    try:
        for ep in range(lcfg.max_episodes):
            t0 = time.perf_counter()
            eps = epsilon_at(ep, lcfg)
            roll = rollout_episode(env, online, acfg, eps, act_rng, mode="train",
                                   success_bonus=lcfg.success_bonus)
            buffer.append(roll.episode)

            losses = []
            if (ep + 1) % lcfg.update_every == 0:
                for _ in range(lcfg.learner_updates_per_episode):
                    batch = buffer.sample(lcfg.batch_size, buf_rng)
                    online.zero_grads()
                    result = learner_update(online, target, batch, lcfg, acfg)
                    if result.n_episodes == 0:
                        continue
                    if not math.isfinite(result.loss):
                        _dump_divergence(out_dir, ep, updates, result, online)
                        raise TrainingDiverged(
                            f"non-finite loss at episode {ep}, update {updates}")
                    online.clip_grad_global_norm(lcfg.grad_clip_norm)
                    updates += 1
                    optimizer_step(online, lr=lcfg.lr, t=updates)
                    polyak_update(target, online, lcfg.tau)
                    losses.append(result.loss / result.n_episodes)
            wall_ms = int((time.perf_counter() - t0) * 1000)
            metrics.row(ep, "train", run.seed, eps, roll.total_reward,
                        roll.outcome == "success", roll.steps,
                        sum(losses) / len(losses) if losses else None, wall_ms)

            if (ep + 1) % lcfg.eval_every == 0:
                rewards = []
                for _ in range(lcfg.eval_episodes):
                    t1 = time.perf_counter()
                    ev = rollout_episode(eval_env, online, acfg, 0.0,
                                         eval_act_rng, mode="eval")
                    metrics.row(ep, "eval", run.seed, 0.0, ev.total_reward,
                                ev.outcome == "success", ev.steps, None,
                                int((time.perf_counter() - t1) * 1000))
                    rewards.append(ev.total_reward)
                mean_r = sum(rewards) / len(rewards)
                if mean_r > best_eval:
                    best_eval = mean_r
                    save_checkpoint(best_path, online, ckpt_meta)

            if (ep + 1) % lcfg.checkpoint_every == 0:
                save_checkpoint(out_dir / f"ckpt_ep{ep + 1:06d}.ckpt", online,
                                ckpt_meta)
    finally:
        metrics.close()

    final_path = out_dir / "final.ckpt"
    save_checkpoint(final_path, online, ckpt_meta)
    if not best_path.exists():
        save_checkpoint(best_path, online, ckpt_meta)
    return TrainSummary(metrics_path=out_dir / "metrics.csv",
                        final_checkpoint=final_path, best_checkpoint=best_path,
                        best_eval_reward=best_eval,
                        episodes=lcfg.max_episodes, updates=updates)


def _dump_divergence(out_dir: Path, episode: int, updates: int,
                     result, params: ParamSet) -> None:
    lines = [f"episode={episode}", f"updates={updates}", f"loss={result.loss}"]
    for name, p in params.items():
        lines.append(f"{name} |v|max={np.abs(p.value).max():.6g} "
                     f"|g|max={np.abs(p.grad).max():.6g}")
    (out_dir / "divergence.txt").write_text("\n".join(lines) + "\n")
