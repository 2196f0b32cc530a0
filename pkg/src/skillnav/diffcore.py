"""Minimal differentiable compute: dense layers, a gated recurrent cell,
adaptive-moment optimization, and a finite-difference gradient checker.

No tape or graph autodiff: every layer has an explicit backward that
accumulates into the parameter set's gradient buffers. All arrays flow as
2-D (batch, features); training runs in float32, gradient checks should be
run on a float64 parameter set.

Checkpoint file format: optional meta lines ``# key value`` (sorted by key),
one ``name dim0 dim1 ...`` line per tensor in parameter order, a ``---``
line, then every tensor's payload concatenated as little-endian float32 in
header order. The writer is canonical, so save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray
    m: np.ndarray | None = None
    v: np.ndarray | None = None


class ParamSet:
    """Ordered named tensors with matching gradient accumulators."""

    def __init__(self, dtype=np.float32) -> None:
        self.dtype = np.dtype(dtype)
        self._entries: dict[str, Param] = {}

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self._entries:
            raise ValueError(f"duplicate parameter {name!r}")
        v = np.asarray(value, dtype=self.dtype)
        self._entries[name] = Param(value=v, grad=np.zeros_like(v))

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def entry(self, name: str) -> Param:
        return self._entries[name]

    def value(self, name: str) -> np.ndarray:
        return self._entries[name].value

    def grad(self, name: str) -> np.ndarray:
        return self._entries[name].grad

    def items(self):
        return self._entries.items()

    def zero_grads(self) -> None:
        for p in self._entries.values():
            p.grad[:] = 0

    def copy(self) -> "ParamSet":
        out = ParamSet(self.dtype)
        for name, p in self._entries.items():
            out.add(name, p.value.copy())
        return out

    def astype(self, dtype) -> "ParamSet":
        out = ParamSet(dtype)
        for name, p in self._entries.items():
            out.add(name, p.value)
        return out

    def grad_global_norm(self) -> float:
        total = 0.0
        for p in self._entries.values():
            g = p.grad.astype(np.float64, copy=False)
            total += float((g * g).sum())
        return math.sqrt(total)

    def clip_grad_global_norm(self, max_norm: float) -> float:
        norm = self.grad_global_norm()
        if norm > max_norm and norm > 0:
            scale = self.dtype.type(max_norm / norm)
            for p in self._entries.values():
                p.grad *= scale
        return norm


# ----------------------------------------------------------- initialization

@dataclass(frozen=True)
class ParamSpec:
    """One tensor to allocate: kind selects the initialization rule."""

    name: str
    shape: tuple[int, ...]
    kind: str  # weight | bias | embedding


def init_params(spec: list[ParamSpec], rng: np.random.Generator,
                dtype=np.float32) -> ParamSet:
    """weights ~ U(+-1/sqrt(fan_in)), biases 0, embeddings ~ N(0, 0.02)."""
    params = ParamSet(dtype)
    for s in spec:
        if s.kind == "weight":
            bound = 1.0 / math.sqrt(s.shape[-1])
            value = rng.uniform(-bound, bound, s.shape)
        elif s.kind == "bias":
            value = np.zeros(s.shape)
        elif s.kind == "embedding":
            value = rng.normal(0.0, 0.02, s.shape)
        else:
            raise ValueError(f"unknown param kind {s.kind!r}")
        params.add(s.name, value)
    return params


# ------------------------------------------------------------------- layers

def linear_spec(name: str, n_in: int, n_out: int) -> list[ParamSpec]:
    return [ParamSpec(f"{name}.w", (n_out, n_in), "weight"),
            ParamSpec(f"{name}.b", (n_out,), "bias")]


def linear_forward(params: ParamSet, name: str, x: np.ndarray) -> np.ndarray:
    w = params.value(f"{name}.w")
    b = params.value(f"{name}.b")
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"{name}: input width {x.shape[-1]} != {w.shape[1]}")
    return x @ w.T + b


def linear_backward(params: ParamSet, name: str, x: np.ndarray,
                    dy: np.ndarray) -> np.ndarray:
    w = params.entry(f"{name}.w")
    b = params.entry(f"{name}.b")
    w.grad += dy.T @ x
    b.grad += dy.sum(axis=0)
    return dy @ w.value


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return np.where(x > 0, dy, 0)


def softmax(x: np.ndarray) -> np.ndarray:
    """Row-wise max-shifted softmax (overflow-safe)."""
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(p: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return p * (dy - (dy * p).sum(axis=-1, keepdims=True))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ----------------------------------------------------------------- GRU cell

@dataclass
class GruCache:
    x: np.ndarray
    h_prev: np.ndarray
    r: np.ndarray
    z: np.ndarray
    n: np.ndarray
    inner: np.ndarray  # U_n h + b_hn, needed for the reset-gate gradient


def gru_spec(name: str, n_in: int, n_h: int) -> list[ParamSpec]:
    # gate rows fused in r, z, n order; biases follow the single-bias-per-gate
    # formulation (the candidate gate has one input-side and one hidden-side bias)
    return [ParamSpec(f"{name}.wx", (3 * n_h, n_in), "weight"),
            ParamSpec(f"{name}.wh", (3 * n_h, n_h), "weight"),
            ParamSpec(f"{name}.br", (n_h,), "bias"),
            ParamSpec(f"{name}.bz", (n_h,), "bias"),
            ParamSpec(f"{name}.bin", (n_h,), "bias"),
            ParamSpec(f"{name}.bhn", (n_h,), "bias")]


def gru_cell_forward(params: ParamSet, name: str, x: np.ndarray,
                     h_prev: np.ndarray,
                     cache: bool = False):
    """r = sig(Wr x + Ur h + br); z = sig(Wz x + Uz h + bz);
    n = tanh(Wn x + bin + r * (Un h + bhn)); h' = (1 - z) * n + z * h."""
    wx = params.value(f"{name}.wx")
    wh = params.value(f"{name}.wh")
    nh = wh.shape[1]
    if x.shape[-1] != wx.shape[1] or h_prev.shape[-1] != nh:
        raise ValueError(f"{name}: input widths {x.shape[-1]}/{h_prev.shape[-1]} "
                         f"do not match ({wx.shape[1]}/{nh})")
    gx = x @ wx.T
    gh = h_prev @ wh.T
    r = _sigmoid(gx[..., :nh] + gh[..., :nh] + params.value(f"{name}.br"))
    z = _sigmoid(gx[..., nh:2 * nh] + gh[..., nh:2 * nh] + params.value(f"{name}.bz"))
    inner = gh[..., 2 * nh:] + params.value(f"{name}.bhn")
    n = np.tanh(gx[..., 2 * nh:] + params.value(f"{name}.bin") + r * inner)
    h_new = (1.0 - z) * n + z * h_prev
    if cache:
        return h_new, GruCache(x=x, h_prev=h_prev, r=r, z=z, n=n, inner=inner)
    return h_new


def gru_cell_backward(params: ParamSet, name: str, cache: GruCache,
                      dh_new: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Accumulate parameter gradients; return (dx, dh_prev)."""
    r, z, n, inner = cache.r, cache.z, cache.n, cache.inner
    dz = dh_new * (cache.h_prev - n)
    dn = dh_new * (1.0 - z)
    dh_prev = dh_new * z
    dn_pre = dn * (1.0 - n * n)
    dr = dn_pre * inner
    dinner = dn_pre * r
    dz_pre = dz * z * (1.0 - z)
    dr_pre = dr * r * (1.0 - r)

    dgx = np.concatenate([dr_pre, dz_pre, dn_pre], axis=-1)
    dgh = np.concatenate([dr_pre, dz_pre, dinner], axis=-1)
    wx = params.entry(f"{name}.wx")
    wh = params.entry(f"{name}.wh")
    wx.grad += dgx.T @ cache.x
    wh.grad += dgh.T @ cache.h_prev
    params.grad(f"{name}.br")[:] += dr_pre.sum(axis=0)
    params.grad(f"{name}.bz")[:] += dz_pre.sum(axis=0)
    params.grad(f"{name}.bin")[:] += dn_pre.sum(axis=0)
    params.grad(f"{name}.bhn")[:] += dinner.sum(axis=0)
    dx = dgx @ wx.value
    dh_prev = dh_prev + dgh @ wh.value
    return dx, dh_prev


# -------------------------------------------------------- two-layer MLP block

@dataclass
class MlpCache:
    x: np.ndarray
    a1: np.ndarray
    h1: np.ndarray


def mlp_spec(name: str, n_in: int, n_hidden: int, n_out: int) -> list[ParamSpec]:
    return linear_spec(f"{name}.l1", n_in, n_hidden) + linear_spec(f"{name}.l2", n_hidden, n_out)


def mlp_forward(params: ParamSet, name: str, x: np.ndarray,
                cache: bool = False):
    a1 = linear_forward(params, f"{name}.l1", x)
    h1 = relu(a1)
    y = linear_forward(params, f"{name}.l2", h1)
    if cache:
        return y, MlpCache(x=x, a1=a1, h1=h1)
    return y


def mlp_backward(params: ParamSet, name: str, cache: MlpCache,
                 dy: np.ndarray) -> np.ndarray:
    dh1 = linear_backward(params, f"{name}.l2", cache.h1, dy)
    da1 = relu_backward(cache.a1, dh1)
    return linear_backward(params, f"{name}.l1", cache.x, da1)


# ---------------------------------------------------------------- optimizer

def optimizer_step(params: ParamSet, lr: float = 1e-4, beta1: float = 0.9,
                   beta2: float = 0.999, eps_hat: float = 1e-8,
                   t: int = 1) -> None:
    """Adaptive-moment update with bias-corrected step size; zeroes gradients.

    t is the 1-based update count used for bias correction.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    alpha = lr * math.sqrt(1.0 - beta2 ** t) / (1.0 - beta1 ** t)
    for p in params._entries.values():
        if p.m is None:
            p.m = np.zeros_like(p.value)
            p.v = np.zeros_like(p.value)
        g = p.grad
        p.m += (1.0 - beta1) * (g - p.m)
        p.v += (1.0 - beta2) * (g * g - p.v)
        p.value -= (alpha * p.m / (np.sqrt(p.v) + eps_hat)).astype(p.value.dtype)
        p.grad[:] = 0


# ------------------------------------------------------------ gradient check

@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    per_tensor: dict[str, float] = field(default_factory=dict)

    def ok(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance


def grad_check(loss_fn, params: ParamSet, fd_step: float = 1e-4,
               samples_per_tensor: int | None = None,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare the closure's accumulated gradients against central finite
    differences.

    loss_fn(params) must run forward + backward, accumulating gradients, and
    return the scalar loss. With samples_per_tensor set, only that many
    randomly chosen coordinates per tensor are probed (every tensor is still
    covered); otherwise every coordinate is checked.
    """
    params.zero_grads()
    loss0 = float(loss_fn(params))
    if not math.isfinite(loss0):
        raise ValueError(f"non-finite loss {loss0}")
    analytic = {name: p.grad.copy() for name, p in params.items()}
    if rng is None:
        rng = np.random.default_rng(0)

    report = GradCheckReport(max_rel_error=0.0, n_checked=0)
    for name, p in params.items():
        flat = p.value.reshape(-1)
        n = flat.size
        if samples_per_tensor is None or samples_per_tensor >= n:
            idx = np.arange(n)
        else:
            idx = rng.choice(n, size=samples_per_tensor, replace=False)
        a_flat = analytic[name].reshape(-1)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + fd_step
            lp = float(loss_fn(params))
            flat[i] = orig - fd_step
            lm = float(loss_fn(params))
            flat[i] = orig
            if not (math.isfinite(lp) and math.isfinite(lm)):
                raise ValueError("non-finite loss during finite differencing")
            fd = (lp - lm) / (2.0 * fd_step)
            an = float(a_flat[i])
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-7)
            worst = max(worst, rel)
        report.per_tensor[name] = worst
        report.max_rel_error = max(report.max_rel_error, worst)
        report.n_checked += len(idx)
    params.zero_grads()
    return report


# ----------------------------------------------------------------- polyak

def polyak_update(target: ParamSet, online: ParamSet, tau: float) -> None:
    """target <- (1 - tau) * target + tau * online, entrywise."""
    if target.names() != online.names():
        raise ValueError("parameter layouts differ")
    for name, tp in target.items():
        ov = online.value(name)
        if ov.shape != tp.value.shape:
            raise ValueError(f"shape mismatch for {name}")
        # two-term form is exact at tau = 0 and tau = 1
        tp.value *= (1.0 - tau)
        tp.value += tau * ov


# -------------------------------------------------------------- checkpoints

def save_checkpoint(path: str | Path, params: ParamSet,
                    meta: dict[str, str] | None = None) -> None:
    lines = []
    for key in sorted(meta or {}):
        lines.append(f"# {key} {meta[key]}")
    for name, p in params.items():
        dims = " ".join(str(d) for d in p.value.shape)
        lines.append(f"{name} {dims}".rstrip())
    header = "\n".join(lines) + "\n---\n"
    payload = b"".join(
        np.ascontiguousarray(p.value, dtype="<f4").tobytes()
        for _, p in params.items())
    Path(path).write_bytes(header.encode("utf-8") + payload)


def load_checkpoint(path: str | Path) -> tuple[ParamSet, dict[str, str]]:
    blob = Path(path).read_bytes()
    sep = b"\n---\n"
    pos = blob.find(sep)
    if pos < 0:
        raise ValueError("malformed checkpoint: missing '---' separator")
    header = blob[:pos].decode("utf-8").split("\n")
    payload = blob[pos + len(sep):]
    meta: dict[str, str] = {}
    entries: list[tuple[str, tuple[int, ...]]] = []
    for ln in header:
        if ln.startswith("# "):
            _, key, value = ln.split(" ", 2)
            meta[key] = value
        else:
            parts = ln.split()
            entries.append((parts[0], tuple(int(d) for d in parts[1:])))
    params = ParamSet(np.float32)
    offset = 0
    for name, shape in entries:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        offset += count * 4
        params.add(name, arr.reshape(shape).copy())
    if offset != len(payload):
        raise ValueError("checkpoint payload length does not match header")
    return params, meta
