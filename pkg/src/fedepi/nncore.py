"""Layers, parameter containers, Adam, initialization and gradient checking.

All layers are pure functions of autodiff Tensors so the same code path
serves training (with graph) and inference (constant tensors).  ParamSet
is the unit the federated loop averages and serializes.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (Tensor, concat, expand_segments, segment_max_const,
                       segment_sum, softmax_cross_entropy, take)
from .netgraph import Graph

__all__ = [
    "ParamSet", "AdamState", "GatGraph", "xavier_init", "embedding_forward",
    "linear", "lstm_cell_forward", "gat_layer", "dropout", "batch_norm",
    "softmax_cross_entropy", "adam_step", "gradient_check",
    "save_params", "load_params", "params_sub_norm",
]


class ParamSet:
    """Ordered name -> Tensor mapping with stable iteration order."""

    def __init__(self, items=None):
        self._items: dict[str, Tensor] = {}
        if items:
            for name, t in (items.items() if hasattr(items, "items") else items):
                self.add(name, t)

    def add(self, name: str, tensor: Tensor) -> None:
        if name in self._items:
            raise ValueError(f"duplicate parameter name {name!r}")
        if not isinstance(tensor, Tensor):
            tensor = Tensor(tensor)
        self._items[name] = tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._items[name]

    def __contains__(self, name: str) -> bool:
        return name in self._items

    def __len__(self) -> int:
        return len(self._items)

    def names(self) -> list[str]:
        return list(self._items)

    def items(self):
        return self._items.items()

    def zero_grads(self) -> None:
        for t in self._items.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        """Collected gradients for every parameter that received one."""
        return {n: t.grad for n, t in self._items.items() if t.grad is not None}

    def clone(self) -> "ParamSet":
        out = ParamSet()
        for n, t in self._items.items():
            c = Tensor(t.data.copy())
            c.requires_grad = t.requires_grad
            out.add(n, c)
        return out

    def load_values(self, other: "ParamSet") -> None:
        """Copy data arrays in from a congruent ParamSet."""
        if other.names() != self.names():
            raise ValueError("parameter sets are not congruent")
        for n, t in self._items.items():
            if other[n].data.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {n!r}")
            t.data = other[n].data.copy()


def params_sub_norm(a: ParamSet, b: ParamSet) -> float:
    """Euclidean norm of the stacked difference a - b."""
    if a.names() != b.names():
        raise ValueError("parameter sets are not congruent")
    total = 0.0
    for n, t in a.items():
        d = t.data - b[n].data
        total += float((d * d).sum())
    return float(np.sqrt(total))


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def xavier_init(shape, seed=None, rng=None) -> Tensor:
    """Uniform Glorot init in +-sqrt(6 / (fan_in + fan_out)), seeded."""
    shape = tuple(int(s) for s in shape)
    if rng is None:
        rng = np.random.default_rng(seed)
    if len(shape) >= 2:
        fan_in, fan_out = shape[-2], shape[-1]
    else:
        fan_in = fan_out = shape[0] if shape else 1
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    t = Tensor(rng.uniform(-bound, bound, size=shape))
    t.requires_grad = True
    return t


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def embedding_forward(table: Tensor, codes) -> Tensor:
    """Row-gather ``table[C, d]`` at integer ``codes`` of any shape."""
    codes = np.asarray(codes, dtype=np.int64)
    C = table.shape[0]
    if codes.size and (codes.min() < 0 or codes.max() >= C):
        raise IndexError(f"state code out of range for table with {C} rows")
    flat = take(table, codes.ravel(), axis=0)
    return flat.reshape(codes.shape + (table.shape[1],))


def linear(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    return x @ W + b


def lstm_cell_forward(e_t: Tensor, h_prev: Tensor, c_prev: Tensor,
                      W_f, W_i, W_c, W_o, b_f, b_i, b_c, b_o):
    """One LSTM step on the concatenated [h_prev, e_t] input.

    f = sigma(W_f z + b_f), i = sigma(W_i z + b_i), c~ = tanh(W_c z + b_c),
    c_t = f*c_prev + i*c~, o = sigma(W_o z + b_o), h_t = o*tanh(c_t).
    """
    z = concat([h_prev, e_t], axis=-1)
    f = (z @ W_f + b_f).sigmoid()
    i = (z @ W_i + b_i).sigmoid()
    c_hat = (z @ W_c + b_c).tanh()
    c_t = f * c_prev + i * c_hat
    o = (z @ W_o + b_o).sigmoid()
    h_t = o * c_t.tanh()
    return h_t, c_t


@dataclass(frozen=True)
class GatGraph:
    """Directed edge arrays (with self-loops) sorted by destination.

    ``seg_ptr`` delimits each node's incoming-edge block; self-loops
    guarantee every block is non-empty, so isolated nodes after
    partitioning stay well-defined.
    """

    n_nodes: int
    src: np.ndarray
    dst: np.ndarray
    seg_ptr: np.ndarray

    @classmethod
    def from_graph(cls, g: Graph) -> "GatGraph":
        n = g.n_nodes
        if g.n_edges:
            u, v = g.edges[:, 0], g.edges[:, 1]
            src = np.concatenate([u, v, np.arange(n)])
            dst = np.concatenate([v, u, np.arange(n)])
        else:
            src = np.arange(n)
            dst = np.arange(n)
        order = np.lexsort((src, dst))
        src, dst = src[order], dst[order]
        counts = np.bincount(dst, minlength=n)
        seg_ptr = np.zeros(n + 1, np.int64)
        np.cumsum(counts, out=seg_ptr[1:])
        assert np.all(np.diff(seg_ptr) > 0)
        return cls(n_nodes=n, src=src, dst=dst, seg_ptr=seg_ptr)


def gat_layer(x: Tensor, gg: GatGraph, W: Tensor, a_src: Tensor,
              a_dst: Tensor, leaky_slope: float = 0.2) -> Tensor:
    """Multi-head graph attention on ``x`` of shape [B, N, F_in].

    ``W`` is [F_in, K*F_head]; ``a_src``/``a_dst`` are [K, F_head], the two
    halves of each head's attention vector over [z_dst || z_src].  Scores
    e_ij = LeakyReLU(a_dst . z_i + a_src . z_j) are softmax-normalized over
    each node's incoming edges (self-loop included), messages aggregated
    and passed through ELU; heads come back concatenated as [B, N, K*F_head].
    """
    B, N, F_in = x.shape
    K, Fh = a_src.shape
    z = (x.reshape(B * N, F_in) @ W).reshape(B, N, K, Fh)
    s_src = (z * a_src).sum(axis=-1)             # [B, N, K]
    s_dst = (z * a_dst).sum(axis=-1)
    e = take(s_dst, gg.dst, axis=1) + take(s_src, gg.src, axis=1)
    e = e.leaky_relu(leaky_slope)                # [B, E, K]
    shift = segment_max_const(e, gg.seg_ptr, axis=1)
    w = (e - expand_segments(shift, gg.seg_ptr, axis=1)).exp()
    denom = segment_sum(w, gg.seg_ptr, axis=1)   # [B, N, K]
    alpha = w / expand_segments(denom, gg.seg_ptr, axis=1)
    z_src = take(z, gg.src, axis=1)              # [B, E, K, Fh]
    msg = alpha.reshape(B, len(gg.src), K, 1) * z_src
    out = segment_sum(msg, gg.seg_ptr, axis=1)   # [B, N, K, Fh]
    return out.elu().reshape(B, N, K * Fh)


def dropout(x: Tensor, p: float, rng, train: bool) -> Tensor:
    """Inverted-scaling dropout; identity when ``train`` is False or p == 0."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability {p} not in [0, 1)")
    if not train or p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * Tensor(mask)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               running_mean: np.ndarray, running_var: np.ndarray,
               train: bool, momentum: float = 0.9, eps: float = 1e-5):
    """Normalize over the batch axis of ``x`` [n, F].

    Returns (out, batch_mean, batch_var); the caller owns the running-stat
    update ``r_new = momentum * r + (1-momentum) * batch_stat`` (variance
    tracked with the unbiased estimate).  Eval mode uses the running stats
    as constants.
    """
    if train:
        mu = x.mean(axis=0, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=0, keepdims=True)
        out = xc / (var + eps).sqrt() * gamma + beta
        n = x.shape[0]
        bessel = n / max(n - 1, 1)
        return out, mu.data.ravel(), var.data.ravel() * bessel
    out = (x - running_mean) / np.sqrt(running_var + eps) * gamma + beta
    return out, None, None


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Adam moments and hyperparameters for one ParamSet."""

    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParamSet, lr: float = 2e-4,
                   weight_decay: float = 0.0) -> "AdamState":
        st = cls(lr=lr, weight_decay=weight_decay)
        for name, tns in params.items():
            st.m[name] = np.zeros_like(tns.data)
            st.v[name] = np.zeros_like(tns.data)
        return st


def adam_step(params: ParamSet, grads: dict, state: AdamState) -> ParamSet:
    """Bias-corrected Adam update in place; weight decay as an L2 gradient term.

    Only parameters named in ``grads`` move (running-stat buffers carried
    inside a ParamSet therefore stay put).
    """
    unknown = set(grads) - set(params.names())
    if unknown:
        raise KeyError(f"gradients for unknown parameters: {sorted(unknown)}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape mismatch for {name!r}")
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# ---------------------------------------------------------------------------
# verification harness
# ---------------------------------------------------------------------------

def gradient_check(f, params: ParamSet, step: float = 1e-5,
                   max_coords: int = 200, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps the ParamSet to a scalar Tensor and must be deterministic.
    At most ``max_coords`` coordinates are probed, sampled uniformly
    (seeded) across all parameters; relative error is
    |g_a - g_n| / (|g_a| + |g_n| + 1e-12).
    """
    params.zero_grads()
    loss = f(params)
    loss.backward()
    analytic = {n: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for n, t in params.items()}

    coords = []
    for name, t in params.items():
        for flat in range(t.size):
            coords.append((name, flat))
    rng = np.random.default_rng(seed)
    if len(coords) > max_coords:
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in pick]

    worst = 0.0
    for name, flat in coords:
        t = params[name]
        orig = t.data.flat[flat]
        t.data.flat[flat] = orig + step
        f_plus = float(f(params).data)
        t.data.flat[flat] = orig - step
        f_minus = float(f(params).data)
        t.data.flat[flat] = orig
        g_n = (f_plus - f_minus) / (2.0 * step)
        g_a = analytic[name].flat[flat]
        rel = abs(g_a - g_n) / (abs(g_a) + abs(g_n) + 1e-12)
        worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# serialization: ordered records (name, shape, raw little-endian float64)
# ---------------------------------------------------------------------------

_MAGIC = b"FEPS\x01"


def save_params(params: ParamSet, dest) -> None:
    """Binary ParamSet dump; round-trips bit-exactly."""
    own = not hasattr(dest, "write")
    fh = open(dest, "wb") if own else dest
    try:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(params)))
        for name, t in params.items():
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}q", *t.shape))
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    finally:
        if own:
            fh.close()


def load_params(source) -> ParamSet:
    own = not hasattr(source, "read")
    fh = open(source, "rb") if own else source
    try:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError("not a parameter file (bad magic)")
        (count,) = struct.unpack("<I", fh.read(4))
        out = ParamSet()
        for _ in range(count):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}q", fh.read(8 * ndim))
            n_vals = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(fh.read(8 * n_vals), dtype="<f8")
            t = Tensor(data.reshape(shape).astype(np.float64))
            t.requires_grad = True
            out.add(name, t)
    finally:
        if own:
            fh.close()
    return out
