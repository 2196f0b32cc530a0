"""Policy networks: the skill-ensemble recurrent Q-network and baselines.

Architecture (skill-ensemble agent, feature width F, N skills, m actions):

* two perception encoders, 71 -> F -> F for ranges and 2 -> F -> F for the
  goal vector, concatenated and passed with the previous hidden state
  through a GRU cell whose output is the perceptual feature z_p;
* a decision module: MLP(z_p + decision embedding) -> N logits -> softmax,
  producing the skill-attention vector eta (>= 0, sums to 1);
* N skill heads: MLP(z_p + skill embedding_i) -> m Q-values each;
* the final Q-vector is the eta-weighted convex combination of head rows.

The DQN baseline keeps the same perception encoders but no recurrence and a
single wider head (hidden width 3F); the R2D2 baseline keeps the recurrent
perception and a single F-width head.

All forwards are pure in (params, obs, h). Internals are batched (B, ...)
arrays; single-step acting uses B = 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import (
    GruCache, MlpCache, ParamSet, ParamSpec, gru_cell_backward,
    gru_cell_forward, gru_spec, init_params, mlp_backward, mlp_forward,
    mlp_spec, softmax, softmax_backward,
)
from .raycast import BEAM_COUNT
from .sim import N_ACTIONS, OBS_DIM

AGENT_KINDS = ("sqn", "dqn", "r2d2")


@dataclass
class SqnConfig:
    n_skills: int = 2
    feature_width: int = 128
    n_actions: int = N_ACTIONS
    agent_kind: str = "sqn"

    def __post_init__(self) -> None:
        if self.n_skills < 1:
            raise ValueError("n_skills must be >= 1")
        if self.agent_kind not in AGENT_KINDS:
            raise ValueError(f"agent_kind must be one of {AGENT_KINDS}")

    @property
    def recurrent(self) -> bool:
        return self.agent_kind in ("sqn", "r2d2")


@dataclass
class PolicyOutput:
    q: np.ndarray
    skill_q: np.ndarray | None
    eta: np.ndarray | None
    h_next: np.ndarray | None


def param_spec(cfg: SqnConfig) -> list[ParamSpec]:
    f = cfg.feature_width
    m = cfg.n_actions
    spec = mlp_spec("enc_range", BEAM_COUNT, f, f) + mlp_spec("enc_goal", 2, f, f)
    if cfg.agent_kind == "dqn":
        # post-perception trunk widths tripled to offset the missing
        # decision/skill modules
        spec += mlp_spec("trunk", 2 * f, 3 * f, m)
        return spec
    spec += gru_spec("gru", 2 * f, f)
    if cfg.agent_kind == "r2d2":
        spec += mlp_spec("head", f, f, m)
    else:
        spec += [ParamSpec("dec.embed", (f,), "embedding")]
        spec += mlp_spec("dec", f, f, cfg.n_skills)
        for i in range(cfg.n_skills):
            spec += [ParamSpec(f"skill{i}.embed", (f,), "embedding")]
            spec += mlp_spec(f"skill{i}", f, f, m)
    return spec


def build_params(cfg: SqnConfig, rng: np.random.Generator,
                 dtype=np.float32) -> ParamSet:
    return init_params(param_spec(cfg), rng, dtype=dtype)


def zero_hidden(cfg: SqnConfig, batch: int, dtype=np.float32) -> np.ndarray:
    return np.zeros((batch, cfg.feature_width), dtype=dtype)


# ------------------------------------------------------------- step forward

@dataclass
class StepCache:
    enc_range: MlpCache
    enc_goal: MlpCache
    x_concat: np.ndarray
    gru: GruCache | None = None
    z_p: np.ndarray | None = None
    dec: MlpCache | None = None
    eta: np.ndarray | None = None
    skills: list[MlpCache] | None = None
    skill_q: np.ndarray | None = None
    trunk: MlpCache | None = None
    head: MlpCache | None = None


def perception_forward(params: ParamSet, cfg: SqnConfig, obs: np.ndarray,
                       h_prev: np.ndarray, cache: bool = False):
    """Encode an observation batch and advance the recurrent state.

    Returns (z_p, h_next); z_p is the post-GRU perceptual feature.
    """
    out = _encode(params, obs, cache=cache)
    if cache:
        (zr, zg, cr, cg) = out
    else:
        zr, zg = out
    x = np.concatenate([zr, zg], axis=-1)
    if cache:
        h_next, gc = gru_cell_forward(params, "gru", x, h_prev, cache=True)
        return h_next, h_next, StepCache(enc_range=cr, enc_goal=cg, x_concat=x,
                                         gru=gc, z_p=h_next)
    h_next = gru_cell_forward(params, "gru", x, h_prev)
    return h_next, h_next


def _encode(params: ParamSet, obs: np.ndarray, cache: bool = False):
    obs = np.asarray(obs, dtype=params.dtype)
    o_range = obs[..., :BEAM_COUNT]
    o_goal = obs[..., BEAM_COUNT:]
    if cache:
        zr, cr = mlp_forward(params, "enc_range", o_range, cache=True)
        zg, cg = mlp_forward(params, "enc_goal", o_goal, cache=True)
        return zr, zg, cr, cg
    return (mlp_forward(params, "enc_range", o_range),
            mlp_forward(params, "enc_goal", o_goal))


def decision_forward(params: ParamSet, cfg: SqnConfig, z_p: np.ndarray,
                     cache: bool = False):
    """Skill-attention vector: softmax over MLP(z_p + decision embedding)."""
    dec_in = z_p + params.value("dec.embed")
    if cache:
        logits, c = mlp_forward(params, "dec", dec_in, cache=True)
        eta = softmax(logits)
        return eta, c
    return softmax(mlp_forward(params, "dec", dec_in))


def skill_heads_forward(params: ParamSet, cfg: SqnConfig, z_p: np.ndarray,
                        cache: bool = False):
    """Per-skill Q rows: head i sees z_p + its own embedding. (B, N, m)."""
    rows = []
    caches = []
    for i in range(cfg.n_skills):
        head_in = z_p + params.value(f"skill{i}.embed")
        if cache:
            q, c = mlp_forward(params, f"skill{i}", head_in, cache=True)
            caches.append(c)
        else:
            q = mlp_forward(params, f"skill{i}", head_in)
        rows.append(q)
    skill_q = np.stack(rows, axis=-2)
    if cache:
        return skill_q, caches
    return skill_q


def aggregate_q(eta: np.ndarray, skill_q: np.ndarray) -> np.ndarray:
    """Convex combination of skill Q rows: q[..., a] = sum_i eta[..., i] * skill_q[..., i, a]."""
    if eta.shape[-1] != skill_q.shape[-2]:
        raise ValueError("eta length does not match number of skill rows")
    return np.einsum("...n,...nm->...m", eta, skill_q)


def forward_step(params: ParamSet, cfg: SqnConfig, obs: np.ndarray,
                 h_prev: np.ndarray | None, cache: bool = False):
    """One batched forward step. Returns (q, eta, h_next[, StepCache])."""
    if cfg.agent_kind == "dqn":
        out = _encode(params, obs, cache=cache)
        if cache:
            zr, zg, cr, cg = out
        else:
            zr, zg = out
        x = np.concatenate([zr, zg], axis=-1)
        if cache:
            q, ct = mlp_forward(params, "trunk", x, cache=True)
            return q, None, None, StepCache(enc_range=cr, enc_goal=cg,
                                            x_concat=x, trunk=ct)
        return mlp_forward(params, "trunk", x), None, None

    if cache:
        z_p, h_next, sc = perception_forward(params, cfg, obs, h_prev, cache=True)
    else:
        z_p, h_next = perception_forward(params, cfg, obs, h_prev)

    if cfg.agent_kind == "r2d2":
        if cache:
            q, ch = mlp_forward(params, "head", z_p, cache=True)
            sc.head = ch
            return q, None, h_next, sc
        return mlp_forward(params, "head", z_p), None, h_next

    if cache:
        eta, cd = decision_forward(params, cfg, z_p, cache=True)
        skill_q, cs = skill_heads_forward(params, cfg, z_p, cache=True)
        q = aggregate_q(eta, skill_q)
        sc.dec = cd
        sc.eta = eta
        sc.skills = cs
        sc.skill_q = skill_q
        return q, eta, h_next, sc
    eta = decision_forward(params, cfg, z_p)
    skill_q = skill_heads_forward(params, cfg, z_p)
    return aggregate_q(eta, skill_q), eta, h_next


def backward_step(params: ParamSet, cfg: SqnConfig, sc: StepCache,
                  dq: np.ndarray,
                  dh_next: np.ndarray | None = None) -> np.ndarray | None:
    """Backward through one step; returns dh_prev (None for the DQN)."""
    if cfg.agent_kind == "dqn":
        dx = mlp_backward(params, "trunk", sc.trunk, dq)
        _encoders_backward(params, sc, dx)
        return None

    f = cfg.feature_width
    dz_p = np.zeros_like(sc.z_p)
    if dh_next is not None:
        dz_p += dh_next
    if cfg.agent_kind == "r2d2":
        dz_p += mlp_backward(params, "head", sc.head, dq)
    else:
        # aggregation: q = sum_i eta_i * skill_q_i
        deta = np.einsum("bm,bnm->bn", dq, sc.skill_q)
        dskill = sc.eta[:, :, None] * dq[:, None, :]
        dlogits = softmax_backward(sc.eta, deta)
        ddec_in = mlp_backward(params, "dec", sc.dec, dlogits)
        params.grad("dec.embed")[:] += ddec_in.sum(axis=0)
        dz_p += ddec_in
        for i in range(cfg.n_skills):
            dhead_in = mlp_backward(params, f"skill{i}", sc.skills[i],
                                    np.ascontiguousarray(dskill[:, i, :]))
            params.grad(f"skill{i}.embed")[:] += dhead_in.sum(axis=0)
            dz_p += dhead_in
    dx, dh_prev = gru_cell_backward(params, "gru", sc.gru, dz_p)
    _encoders_backward(params, sc, dx)
    return dh_prev


def _encoders_backward(params: ParamSet, sc: StepCache, dx: np.ndarray) -> None:
    f = sc.enc_range.h1.shape[-1]
    mlp_backward(params, "enc_range", sc.enc_range, dx[..., :f])
    mlp_backward(params, "enc_goal", sc.enc_goal, dx[..., f:])


# ---------------------------------------------------------- sequence unroll

@dataclass
class SequenceForward:
    q: np.ndarray                 # (B, T, m)
    eta: np.ndarray | None        # (B, T, N) for the skill agent
    caches: list[StepCache] | None


def forward_sequence(params: ParamSet, cfg: SqnConfig, obs_seq: np.ndarray,
                     cache: bool = False) -> SequenceForward:
    """Unroll from a zero hidden state over (B, T, obs) observations."""
    b, t_len, _ = obs_seq.shape
    h = zero_hidden(cfg, b, dtype=params.dtype) if cfg.recurrent else None
    qs = np.empty((b, t_len, cfg.n_actions), dtype=params.dtype)
    etas = (np.empty((b, t_len, cfg.n_skills), dtype=params.dtype)
            if cfg.agent_kind == "sqn" else None)
    caches: list[StepCache] | None = [] if cache else None
    for t in range(t_len):
        out = forward_step(params, cfg, obs_seq[:, t, :], h, cache=cache)
        if cache:
            q, eta, h, sc = out
            caches.append(sc)
        else:
            q, eta, h = out
        qs[:, t, :] = q
        if etas is not None:
            etas[:, t, :] = eta
    return SequenceForward(q=qs, eta=etas, caches=caches)


def backward_sequence(params: ParamSet, cfg: SqnConfig,
                      caches: list[StepCache], dq_seq: np.ndarray,
                      start_t: int = 0) -> None:
    """Backpropagate through time from the last step down to start_t.

    The hidden-state gradient is not propagated into steps before start_t
    (the warm-up prefix contributes no gradient).
    """
    t_len = len(caches)
    dh = None
    for t in range(t_len - 1, start_t - 1, -1):
        dq = np.ascontiguousarray(dq_seq[:, t, :])
        dh = backward_step(params, cfg, caches[t], dq, dh)


# ------------------------------------------------------------------ acting

def policy_forward(params: ParamSet, cfg: SqnConfig, obs_vec: np.ndarray,
                   h_prev: np.ndarray | None) -> PolicyOutput:
    """Single-observation forward used while acting; all outputs 1-D."""
    obs = obs_vec[None, :]
    if cfg.recurrent and h_prev is None:
        h_prev = zero_hidden(cfg, 1, dtype=params.dtype)
    elif h_prev is not None and h_prev.ndim == 1:
        h_prev = h_prev[None, :]
    if cfg.agent_kind == "dqn":
        q, _, _ = forward_step(params, cfg, obs, None)
        return PolicyOutput(q=q[0], skill_q=None, eta=None, h_next=None)
    if cfg.agent_kind == "r2d2":
        q, _, h = forward_step(params, cfg, obs, h_prev)
        return PolicyOutput(q=q[0], skill_q=None, eta=None, h_next=h[0])
    z_p, h_next = perception_forward(params, cfg, obs, h_prev)
    eta = decision_forward(params, cfg, z_p)
    skill_q = skill_heads_forward(params, cfg, z_p)
    q = aggregate_q(eta, skill_q)
    return PolicyOutput(q=q[0], skill_q=skill_q[0], eta=eta[0], h_next=h_next[0])


def act_epsilon_greedy(q: np.ndarray, epsilon: float,
                       rng: np.random.Generator) -> int:
    """Uniform action with probability epsilon, else argmax (ties: lowest index)."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if rng.random() < epsilon:
        return int(rng.integers(len(q)))
    return int(np.argmax(q))
