"""The two node-state predictors and their shared local training loop.

Both models map a t_H-step window of per-node state class ids to logits
for the next t_F steps, [B, N, t_F, C]:

* lstm: embed each node's own history, run one LSTM across time, single
  linear head from the final hidden state (no spatial term);
* stgat: embed states, apply one shared multi-head GAT per time step to
  mix 1-hop neighborhoods, then two stacked LSTMs (32, 64) per node,
  batch norm, dropout and the linear head.

Weights are shared across nodes so clients with different node counts
remain parameter-congruent for federation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, softmax_cross_entropy
from .dataset import WindowDataset, epoch_permutation
from .nncore import (AdamState, GatGraph, ParamSet, adam_step, batch_norm,
                     dropout, embedding_forward, gat_layer, linear,
                     lstm_cell_forward, xavier_init)

__all__ = [
    "ModelConfig", "TrainConfig", "init_params", "lstm_forward",
    "stgat_forward", "model_forward", "predict", "train_local", "evaluate",
]

_ARCHITECTURES = ("lstm", "stgat")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; C must match the epidemic variant."""

    architecture: str
    n_classes: int
    d_embed: int = 16
    lstm_hidden: tuple = ()
    gat_heads: int = 8
    gat_head_dim: int = 8
    t_H: int = 10
    t_F: int = 10
    dropout_p: float = 0.5
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.architecture not in _ARCHITECTURES:
            raise ValueError(f"architecture must be one of {_ARCHITECTURES}")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if not self.lstm_hidden:
            default = (64,) if self.architecture == "lstm" else (32, 64)
            object.__setattr__(self, "lstm_hidden", default)
        object.__setattr__(self, "lstm_hidden",
                           tuple(int(h) for h in self.lstm_hidden))
        if self.architecture == "lstm" and len(self.lstm_hidden) != 1:
            raise ValueError("lstm architecture takes one hidden size")
        if self.architecture == "stgat" and len(self.lstm_hidden) != 2:
            raise ValueError("stgat architecture takes two hidden sizes")
        if self.t_H < 1 or self.t_F < 1:
            raise ValueError("t_H and t_F must be >= 1")


def _add_lstm_params(ps: ParamSet, prefix: str, d_in: int, hidden: int,
                     rng) -> None:
    for gate in ("f", "i", "c", "o"):
        ps.add(f"{prefix}.W_{gate}",
               xavier_init((hidden + d_in, hidden), rng=rng))
        b = Tensor(np.zeros(hidden))
        b.requires_grad = True
        ps.add(f"{prefix}.b_{gate}", b)


def init_params(cfg: ModelConfig, seed: int) -> ParamSet:
    """Seeded Xavier weights, zero biases; stable name order."""
    rng = np.random.default_rng(seed)
    ps = ParamSet()
    ps.add("embed", xavier_init((cfg.n_classes, cfg.d_embed), rng=rng))
    if cfg.architecture == "stgat":
        K, Fh = cfg.gat_heads, cfg.gat_head_dim
        ps.add("gat.W", xavier_init((cfg.d_embed, K * Fh), rng=rng))
        ps.add("gat.a_src", xavier_init((K, Fh), rng=rng))
        ps.add("gat.a_dst", xavier_init((K, Fh), rng=rng))
        d_in = K * Fh
    else:
        d_in = cfg.d_embed
    for li, hidden in enumerate(cfg.lstm_hidden, start=1):
        _add_lstm_params(ps, f"lstm{li}", d_in, hidden, rng)
        d_in = hidden
    h_last = cfg.lstm_hidden[-1]
    if cfg.architecture == "stgat":
        gamma = Tensor(np.ones(h_last))
        gamma.requires_grad = True
        beta = Tensor(np.zeros(h_last))
        beta.requires_grad = True
        ps.add("bn.gamma", gamma)
        ps.add("bn.beta", beta)
        ps.add("bn.running_mean", Tensor(np.zeros(h_last)))
        ps.add("bn.running_var", Tensor(np.ones(h_last)))
    ps.add("head.W", xavier_init((h_last, cfg.t_F * cfg.n_classes), rng=rng))
    head_b = Tensor(np.zeros(cfg.t_F * cfg.n_classes))
    head_b.requires_grad = True
    ps.add("head.b", head_b)
    return ps


def _run_lstm(ps: ParamSet, prefix: str, xs: list, n_rows: int,
              hidden: int) -> list:
    """Run one LSTM layer over a list of [R, d] step tensors; returns hs."""
    h = Tensor(np.zeros((n_rows, hidden)))
    c = Tensor(np.zeros((n_rows, hidden)))
    hs = []
    for x in xs:
        h, c = lstm_cell_forward(
            x, h, c,
            ps[f"{prefix}.W_f"], ps[f"{prefix}.W_i"],
            ps[f"{prefix}.W_c"], ps[f"{prefix}.W_o"],
            ps[f"{prefix}.b_f"], ps[f"{prefix}.b_i"],
            ps[f"{prefix}.b_c"], ps[f"{prefix}.b_o"])
        hs.append(h)
    return hs


def _check_inputs(inputs: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=np.int64)
    if inputs.ndim != 3 or inputs.shape[2] != cfg.t_H:
        raise ValueError(f"inputs must be [B, N, t_H={cfg.t_H}], "
                         f"got {inputs.shape}")
    if inputs.size and (inputs.min() < 0 or inputs.max() >= cfg.n_classes):
        raise ValueError("state class id out of range")
    return inputs


def lstm_forward(params: ParamSet, inputs, cfg: ModelConfig,
                 train: bool = False, rng=None) -> Tensor:
    """Per-node temporal LSTM; logits [B, N, t_F, C]."""
    inputs = _check_inputs(inputs, cfg)
    B, N, _ = inputs.shape
    R = B * N
    xs = [embedding_forward(params["embed"], inputs[:, :, t].ravel())
          for t in range(cfg.t_H)]
    hs = _run_lstm(params, "lstm1", xs, R, cfg.lstm_hidden[0])
    logits = linear(hs[-1], params["head.W"], params["head.b"])
    return logits.reshape(B, N, cfg.t_F, cfg.n_classes)


def stgat_forward(params: ParamSet, inputs, gg: GatGraph, cfg: ModelConfig,
                  train: bool = False, rng=None,
                  bn_update: bool = True) -> Tensor:
    """Spatio-temporal GAT model; logits [B, N, t_F, C].

    ``train`` switches batch norm to batch statistics and enables dropout
    (which then needs ``rng``); ``bn_update`` controls whether the running
    stats inside ``params`` absorb this batch.
    """
    inputs = _check_inputs(inputs, cfg)
    B, N, _ = inputs.shape
    if gg.n_nodes != N:
        raise ValueError(f"subgraph has {gg.n_nodes} nodes, inputs have {N}")
    R = B * N
    xs = []
    for t in range(cfg.t_H):
        e = embedding_forward(params["embed"], inputs[:, :, t])  # [B,N,d]
        spatial = gat_layer(e, gg, params["gat.W"], params["gat.a_src"],
                            params["gat.a_dst"], cfg.leaky_slope)
        xs.append(spatial.reshape(R, cfg.gat_heads * cfg.gat_head_dim))
    h1s = _run_lstm(params, "lstm1", xs, R, cfg.lstm_hidden[0])
    h2s = _run_lstm(params, "lstm2", h1s, R, cfg.lstm_hidden[1])
    h = h2s[-1]
    out, bm, bv = batch_norm(h, params["bn.gamma"], params["bn.beta"],
                             params["bn.running_mean"].data,
                             params["bn.running_var"].data, train=train)
    if train and bn_update:
        mom = 0.9
        rm = params["bn.running_mean"]
        rv = params["bn.running_var"]
        rm.data = mom * rm.data + (1.0 - mom) * bm
        rv.data = mom * rv.data + (1.0 - mom) * bv
    if train:
        if rng is None:
            raise ValueError("training-mode forward needs an rng for dropout")
        out = dropout(out, cfg.dropout_p, rng, train=True)
    logits = linear(out, params["head.W"], params["head.b"])
    return logits.reshape(B, N, cfg.t_F, cfg.n_classes)


def model_forward(params: ParamSet, inputs, cfg: ModelConfig, gg=None,
                  train: bool = False, rng=None,
                  bn_update: bool = True) -> Tensor:
    if cfg.architecture == "lstm":
        return lstm_forward(params, inputs, cfg, train=train, rng=rng)
    if gg is None:
        raise ValueError("stgat forward needs the client subgraph")
    return stgat_forward(params, inputs, gg, cfg, train=train, rng=rng,
                         bn_update=bn_update)


def predict(logits) -> np.ndarray:
    """argmax class ids; ties resolve to the smallest class id."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return data.argmax(axis=-1)


# ---------------------------------------------------------------------------
# local training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    """Knobs for one local optimization run."""

    epochs: int
    batch_size: int = 32
    lr: float = 2e-4
    weight_decay: float = 5e-5
    seed: int = 0
    epoch_offset: int = 0   # continues the epoch-indexed shuffle stream


def _batch_loss(params: ParamSet, ds: WindowDataset, idx: np.ndarray,
                cfg: ModelConfig, gg, train: bool, rng):
    """Mean CE over every (node, horizon-step) cell of the batch."""
    inputs = ds.inputs[idx]
    targets = ds.targets[idx]
    logits = model_forward(params, inputs, cfg, gg=gg, train=train, rng=rng)
    flat = logits.reshape(inputs.shape[0] * inputs.shape[1] * cfg.t_F,
                          cfg.n_classes)
    loss, probs = softmax_cross_entropy(flat, targets.ravel())
    return loss, probs


def train_local(params: ParamSet, train_ds: WindowDataset,
                val_ds: WindowDataset, tcfg: TrainConfig, cfg: ModelConfig,
                gg: GatGraph | None = None, proximal=None):
    """Adam on mean-CE; returns (params, per-epoch train CE curve, val CE).

    ``proximal`` is an optional (theta_global ParamSet, mu) pair adding
    mu*(theta - theta_global) to each gradient step.  mu=0 follows the
    exact non-proximal code path so the two are bit-identical.
    """
    if train_ds.n_windows == 0:
        raise ValueError("empty training split")
    theta_g, mu = (None, 0.0)
    if proximal is not None:
        theta_g, mu = proximal
        if mu < 0:
            raise ValueError("proximal mu must be >= 0")
        if theta_g.names() != params.names():
            raise ValueError("global parameters not congruent with local")
    state = AdamState.for_params(params, lr=tcfg.lr,
                                 weight_decay=tcfg.weight_decay)
    W = train_ds.n_windows
    curve = []
    for epoch in range(tcfg.epochs):
        global_epoch = tcfg.epoch_offset + epoch
        perm = epoch_permutation(W, tcfg.seed, global_epoch)
        total, cells = 0.0, 0
        for start in range(0, W, tcfg.batch_size):
            idx = perm[start:start + tcfg.batch_size]
            rng = np.random.default_rng(
                np.random.SeedSequence((tcfg.seed, global_epoch, start)))
            params.zero_grads()
            loss, _ = _batch_loss(params, train_ds, idx, cfg, gg,
                                  train=True, rng=rng)
            loss.backward()
            grads = params.grads()
            if mu > 0.0:
                for name in grads:
                    grads[name] = grads[name] + mu * (params[name].data
                                                      - theta_g[name].data)
            if tcfg.lr != 0.0:
                adam_step(params, grads, state)
            n_cells = len(idx)
            total += loss.item() * n_cells
            cells += n_cells
        curve.append(total / cells)
    val_ce = evaluate(params, val_ds, cfg, gg=gg,
                      batch_size=tcfg.batch_size)["ce"]
    return params, curve, val_ce


def evaluate(params: ParamSet, ds: WindowDataset, cfg: ModelConfig,
             gg: GatGraph | None = None, batch_size: int = 32) -> dict:
    """Eval-mode CE/accuracy plus flat predictions and labels.

    Gradient tracking is switched off for the duration so no backward
    graph (and its memory) is built.
    """
    if ds.n_windows == 0:
        raise ValueError("empty evaluation split")
    total, cells = 0.0, 0
    preds = []
    flags = [(t, t.requires_grad) for _, t in params.items()]
    for t, _ in flags:
        t.requires_grad = False
    try:
        for start in range(0, ds.n_windows, batch_size):
            idx = np.arange(start, min(start + batch_size, ds.n_windows))
            loss, probs = _batch_loss(params, ds, idx, cfg, gg,
                                      train=False, rng=None)
            n_cells = probs.shape[0]
            total += loss.item() * n_cells
            cells += n_cells
            preds.append(probs.argmax(axis=1))
    finally:
        for t, was in flags:
            t.requires_grad = was
    preds = np.concatenate(preds)
    labels = ds.targets.reshape(-1)
    return {
        "ce": total / cells,
        "acc": float((preds == labels).mean()),
        "preds": preds,
        "labels": labels,
    }
