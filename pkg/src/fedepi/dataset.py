"""Window extraction, chronological splits, shuffling and missing reports.

State codes are re-encoded to dense class ids 0..C-1 (sorted legal codes
of the variant) as windows are cut, so models never see gaps like the
vaccinated code 4.  In every variant id 0 is susceptible and id 1 is
infected, which the corruption step below relies on.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .epidemics import Trajectory, legal_compartments
from .netgraph import Graph, induced_subgraph
from .partition import PartitionAssignment

__all__ = [
    "WindowDataset", "ClientData", "encode_states", "decode_classes",
    "make_windows", "chrono_split", "shuffle_train", "epoch_permutation",
    "inject_missing", "build_client_datasets",
]

SPLIT_FRACTIONS = (0.20, 0.10, 0.70)


@dataclass(frozen=True)
class WindowDataset:
    """Aligned input/target windows for one client and split."""

    client_id: int
    inputs: np.ndarray    # [W, N, t_H] int64 class ids
    targets: np.ndarray   # [W, N, t_F]
    split: str

    def __post_init__(self):
        for name in ("inputs", "targets"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.int64)
            object.__setattr__(self, name, arr)
        if self.inputs.ndim != 3 or self.targets.ndim != 3:
            raise ValueError("windows must be [W, N, t] arrays")
        if self.inputs.shape[:2] != self.targets.shape[:2]:
            raise ValueError("inputs/targets disagree on window count or nodes")

    @property
    def n_windows(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.inputs.shape[1]


@dataclass(frozen=True)
class ClientData:
    """One client's subgraph plus its three data splits."""

    client_id: int
    subgraph: Graph
    nodes: np.ndarray          # global node indices (local i -> nodes[i])
    train: WindowDataset
    val: WindowDataset
    test: WindowDataset


def encode_states(states: np.ndarray, variant: str) -> np.ndarray:
    """Map raw compartment codes to dense class ids (sorted legal codes)."""
    legal = legal_compartments(variant)
    lut = np.full(max(legal) + 1, -1, np.int64)
    for cid, code in enumerate(legal):
        lut[code] = cid
    states = np.asarray(states, np.int64)
    if states.size and (states.min() < 0 or states.max() > max(legal)):
        raise ValueError(f"state code outside the {variant} compartments")
    out = lut[states]
    if np.any(out < 0):
        raise ValueError(f"state code outside the {variant} compartments")
    return out


def decode_classes(class_ids: np.ndarray, variant: str) -> np.ndarray:
    """Inverse of :func:`encode_states`."""
    legal = np.asarray(legal_compartments(variant), np.int64)
    class_ids = np.asarray(class_ids, np.int64)
    if class_ids.size and (class_ids.min() < 0 or class_ids.max() >= len(legal)):
        raise ValueError("class id out of range")
    return legal[class_ids]


def n_classes(variant: str) -> int:
    return len(legal_compartments(variant))


def make_windows(tr: Trajectory, t_H: int, t_F: int, stride: int = 1,
                 nodes=None) -> tuple[np.ndarray, np.ndarray]:
    """Sliding (input, target) windows over a trajectory.

    Window k covers samples [k, k+t_H) and targets [k+t_H, k+t_H+t_F);
    with stride 1 the count is T - t_H - t_F + 1.  ``nodes`` restricts to
    a client's global node indices.  Returns ([W, N, t_H], [W, N, t_F])
    arrays of dense class ids.
    """
    if t_H < 1 or t_F < 1 or stride < 1:
        raise ValueError("t_H, t_F and stride must be >= 1")
    states = tr.states
    if nodes is not None:
        states = states[:, np.asarray(nodes, np.int64)]
    T = states.shape[0]
    span = t_H + t_F
    if T < span:
        raise ValueError(f"trajectory length {T} shorter than t_H+t_F={span}")
    enc = encode_states(states, tr.model.variant)
    # [W_full, N, span] views of consecutive sample runs
    win = np.lib.stride_tricks.sliding_window_view(enc, span, axis=0)
    win = win[::stride]
    inputs = np.ascontiguousarray(win[:, :, :t_H])
    targets = np.ascontiguousarray(win[:, :, t_H:])
    return inputs, targets


def chrono_split(inputs: np.ndarray, targets: np.ndarray,
                 fractions=SPLIT_FRACTIONS, client_id: int = 0):
    """(train, val, test) WindowDatasets: floor(f*W) each, remainder to test."""
    if len(fractions) != 3:
        raise ValueError("fractions must be (train, val, test)")
    W = inputs.shape[0]
    n_train = int(np.floor(fractions[0] * W))
    n_val = int(np.floor(fractions[1] * W))
    n_test = W - n_train - n_val
    if n_train == 0 or n_val == 0 or n_test <= 0:
        raise ValueError(
            f"W={W} windows cannot fill all three splits with {fractions}")
    mk = lambda sl, tag: WindowDataset(client_id=client_id,
                                       inputs=inputs[sl], targets=targets[sl],
                                       split=tag)
    return (mk(slice(0, n_train), "train"),
            mk(slice(n_train, n_train + n_val), "val"),
            mk(slice(n_train + n_val, W), "test"))


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    """Seeded permutation of range(n), re-drawn per epoch from one stream."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, epoch)))
    return rng.permutation(n)


def shuffle_train(ds: WindowDataset, seed: int, epoch: int = 0) -> WindowDataset:
    """Window-order shuffle of a training split (epoch-indexed stream)."""
    perm = epoch_permutation(ds.n_windows, seed, epoch)
    return replace(ds, inputs=ds.inputs[perm], targets=ds.targets[perm])


def inject_missing(clients: list, client_ratio: float,
                   node_missing_ratio: float, seed: int,
                   corrupt_targets: bool = True) -> list:
    """Missing-report corruption: I cells become S in train+val splits.

    ceil(client_ratio * M) clients are drawn uniformly (seeded); within
    each, the requested proportion of infected cells — pooled across all
    train and val inputs (and targets unless ``corrupt_targets=False``) —
    flips to susceptible.  Test splits are never touched.
    """
    if not (0.0 <= client_ratio <= 1.0 and 0.0 <= node_missing_ratio <= 1.0):
        raise ValueError("ratios must lie in [0, 1]")
    M = len(clients)
    n_sel = int(np.ceil(client_ratio * M))
    rng = np.random.default_rng(seed)
    selected = set(rng.choice(M, size=n_sel, replace=False).tolist()) if n_sel else set()
    out = []
    for ci, cd in enumerate(clients):
        if ci not in selected or node_missing_ratio == 0.0:
            out.append(cd)
            continue
        arrays = [cd.train.inputs.copy(), cd.val.inputs.copy()]
        if corrupt_targets:
            arrays += [cd.train.targets.copy(), cd.val.targets.copy()]
        else:
            arrays += [cd.train.targets, cd.val.targets]
        n_corruptible = 2 + (2 if corrupt_targets else 0)
        cells = [np.nonzero(a.ravel() == 1)[0] for a in arrays[:n_corruptible]]
        counts = [c.size for c in cells]
        total = int(sum(counts))
        n_flip = int(round(node_missing_ratio * total))
        if n_flip:
            flat = rng.choice(total, size=n_flip, replace=False)
            offsets = np.cumsum([0] + counts)
            for ai in range(n_corruptible):
                sel = flat[(flat >= offsets[ai]) & (flat < offsets[ai + 1])]
                local = cells[ai][sel - offsets[ai]]
                arrays[ai].flat[local] = 0
        train = replace(cd.train, inputs=arrays[0], targets=arrays[2])
        val = replace(cd.val, inputs=arrays[1], targets=arrays[3])
        out.append(replace(cd, train=train, val=val))
    return out


def build_client_datasets(tr: Trajectory, g: Graph, p: PartitionAssignment,
                          t_H: int, t_F: int,
                          fractions=SPLIT_FRACTIONS) -> list:
    """Cut one whole-network trajectory into per-client ClientData."""
    if p.assignment.shape[0] != g.n_nodes:
        raise ValueError("assignment length does not match the graph")
    if tr.n_nodes != g.n_nodes:
        raise ValueError("trajectory width does not match the graph")
    clients = []
    for m in range(p.M):
        nodes = p.client_nodes(m)
        sub = induced_subgraph(g, nodes)
        inputs, targets = make_windows(tr, t_H, t_F, nodes=nodes)
        train, val, test = chrono_split(inputs, targets, fractions,
                                        client_id=m)
        clients.append(ClientData(client_id=m, subgraph=sub, nodes=nodes,
                                  train=train, val=val, test=test))
    return clients
