"""Federated training loop: FedAvg / FedProx rounds over in-process clients,
plus the solo and centralized baselines run on the same round cadence.

A "round" broadcasts the global ParamSet, trains every client locally for
``local_epochs``, and re-aggregates with weights n_i = train windows x
client node count.  Solo and centralized runs reuse the identical loop
without aggregation, so a single-client federation and a centralized run
produce the same model bit for bit.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .metrics import classification_metrics
from .models import ModelConfig, TrainConfig, evaluate, init_params, train_local
from .nncore import GatGraph, ParamSet

logger = logging.getLogger(__name__)

__all__ = [
    "FederationConfig", "RoundLog", "aggregate", "run_federated", "run_solo",
    "run_centralized", "save_round_logs", "load_round_logs",
]

_METHODS = ("fedavg", "fedprox")


@dataclass(frozen=True)
class FederationConfig:
    """Orchestration knobs; local-optimizer fields mirror TrainConfig."""

    method: str = "fedavg"
    rounds: int = 200
    local_epochs: int = 5
    mu: float = 0.01              # proximal strength; ignored for fedavg
    patience: int = 20
    min_improvement: float = 1e-5
    batch_size: int = 32
    lr: float = 2e-4
    weight_decay: float = 5e-5
    n_workers: int = 1

    def __post_init__(self):
        if self.method not in _METHODS:
            raise ValueError(f"method must be one of {_METHODS}")
        if self.mu < 0:
            raise ValueError("mu must be >= 0")
        if self.rounds < 1 or self.local_epochs < 1:
            raise ValueError("rounds and local_epochs must be >= 1")
        if self.patience < 1 or self.n_workers < 1:
            raise ValueError("patience and n_workers must be >= 1")


@dataclass(frozen=True)
class RoundLog:
    """Per-(round, client) record.  ``wall_clock`` stays out of the CSV so
    reruns of the same config are byte-identical."""

    round: int
    client: int
    ce: float
    acc: float
    f1: float
    val_ce_global: float
    wall_clock: float = 0.0


def _client_seed(master_seed: int, client_id: int) -> int:
    """Stable per-client stream: adding clients never shifts existing ones."""
    ss = np.random.SeedSequence((master_seed, client_id))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def aggregate(param_sets: list, weights) -> ParamSet:
    """Weighted mean of congruent ParamSets, fixed client-index order.

    Batch-norm running buffers ride along: they live in the ParamSet and
    average with the same weights as trained tensors.
    """
    if not param_sets:
        raise ValueError("nothing to aggregate")
    weights = np.asarray(weights, np.float64)
    if weights.shape != (len(param_sets),):
        raise ValueError("one weight per client required")
    if np.any(weights <= 0):
        raise ValueError("weights must be positive")
    names = param_sets[0].names()
    for ps in param_sets[1:]:
        if ps.names() != names:
            raise ValueError("parameter sets are not congruent")
        for name in names:
            if ps[name].data.shape != param_sets[0][name].data.shape:
                raise ValueError(f"shape mismatch for {name!r}")
    w = weights / weights.sum()
    out = param_sets[0].clone()
    for name in names:
        total = w[0] * param_sets[0][name].data
        for i in range(1, len(param_sets)):
            total = total + w[i] * param_sets[i][name].data
        out[name].data = total
    return out


def _val_stats(params: ParamSet, cd, cfg: ModelConfig, gg,
               batch_size: int) -> dict:
    ev = evaluate(params, cd.val, cfg, gg=gg, batch_size=batch_size)
    cls = classification_metrics(ev["preds"], ev["labels"])
    return {"ce": ev["ce"], "acc": cls["acc"], "f1": cls["f1"]}


def _subgraphs(clients, cfg: ModelConfig):
    if cfg.architecture != "stgat":
        return [None] * len(clients)
    return [GatGraph.from_graph(cd.subgraph) for cd in clients]


def run_federated(clients: list, cfg: ModelConfig, fcfg: FederationConfig,
                  seed: int, history: list | None = None):
    """Algorithm: broadcast, local train, weighted aggregate, early stop.

    Returns (best global ParamSet by weighted val CE, RoundLog list).
    Passing a list as ``history`` collects the post-aggregation global
    ParamSet of every round (cloned).
    """
    active = []
    for cd in clients:
        if cd.train.n_windows == 0:
            logger.warning("client %d has no training windows; excluded",
                           cd.client_id)
            continue
        active.append(cd)
    if not active:
        raise ValueError("every client was excluded for lack of data")
    weights = np.array([cd.train.n_windows * cd.train.n_nodes
                        for cd in active], np.float64)
    ggs = _subgraphs(active, cfg)
    seeds = [_client_seed(seed, cd.client_id) for cd in active]

    global_p = init_params(cfg, seed)
    best_ce = np.inf
    best_p = global_p.clone()
    bad_rounds = 0
    logs = []

    def fit_one(i: int, rnd: int, broadcast: ParamSet):
        cd = active[i]
        tcfg = TrainConfig(epochs=fcfg.local_epochs,
                           batch_size=fcfg.batch_size, lr=fcfg.lr,
                           weight_decay=fcfg.weight_decay, seed=seeds[i],
                           epoch_offset=rnd * fcfg.local_epochs)
        proximal = (broadcast, fcfg.mu) if fcfg.method == "fedprox" else None
        local = broadcast.clone()
        local, _, _ = train_local(local, cd.train, cd.val, tcfg, cfg,
                                  gg=ggs[i], proximal=proximal)
        return local, _val_stats(local, cd, cfg, ggs[i], fcfg.batch_size)

    t0 = time.perf_counter()
    for rnd in range(fcfg.rounds):
        if fcfg.n_workers > 1:
            with ThreadPoolExecutor(max_workers=fcfg.n_workers) as pool:
                results = list(pool.map(
                    lambda i: fit_one(i, rnd, global_p), range(len(active))))
        else:
            results = [fit_one(i, rnd, global_p) for i in range(len(active))]
        global_p = aggregate([r[0] for r in results], weights)
        if history is not None:
            history.append(global_p.clone())

        global_ces = np.array([
            evaluate(global_p, cd.val, cfg, gg=ggs[i],
                     batch_size=fcfg.batch_size)["ce"]
            for i, cd in enumerate(active)])
        val_ce_global = float(np.average(global_ces, weights=weights))
        elapsed = time.perf_counter() - t0
        for i, cd in enumerate(active):
            st = results[i][1]
            logs.append(RoundLog(round=rnd, client=cd.client_id, ce=st["ce"],
                                 acc=st["acc"], f1=st["f1"],
                                 val_ce_global=val_ce_global,
                                 wall_clock=elapsed))

        if best_ce - val_ce_global > fcfg.min_improvement:
            best_ce = val_ce_global
            best_p = global_p.clone()
            bad_rounds = 0
        else:
            bad_rounds += 1
            if bad_rounds >= fcfg.patience:
                logger.info("early stop at round %d (best CE %.6f)",
                            rnd, best_ce)
                break
    return best_p, logs


def _fit_standalone(cd, cfg: ModelConfig, fcfg: FederationConfig, seed: int):
    """Rounds-cadence training of one dataset without aggregation."""
    if cd.train.n_windows == 0:
        raise ValueError(f"client {cd.client_id} has no training windows")
    gg = _subgraphs([cd], cfg)[0]
    tseed = _client_seed(seed, cd.client_id)
    params = init_params(cfg, seed)
    best_ce = np.inf
    best_p = params.clone()
    bad_rounds = 0
    logs = []
    t0 = time.perf_counter()
    for rnd in range(fcfg.rounds):
        tcfg = TrainConfig(epochs=fcfg.local_epochs,
                           batch_size=fcfg.batch_size, lr=fcfg.lr,
                           weight_decay=fcfg.weight_decay, seed=tseed,
                           epoch_offset=rnd * fcfg.local_epochs)
        params, _, _ = train_local(params, cd.train, cd.val, tcfg, cfg, gg=gg)
        st = _val_stats(params, cd, cfg, gg, fcfg.batch_size)
        logs.append(RoundLog(round=rnd, client=cd.client_id, ce=st["ce"],
                             acc=st["acc"], f1=st["f1"],
                             val_ce_global=st["ce"],
                             wall_clock=time.perf_counter() - t0))
        if best_ce - st["ce"] > fcfg.min_improvement:
            best_ce = st["ce"]
            best_p = params.clone()
            bad_rounds = 0
        else:
            bad_rounds += 1
            if bad_rounds >= fcfg.patience:
                break
    return best_p, logs


def run_solo(clients: list, cfg: ModelConfig, fcfg: FederationConfig,
             seed: int) -> dict:
    """Independent per-client training; {client_id: (ParamSet, logs)}."""
    out = {}
    for cd in clients:
        if cd.train.n_windows == 0:
            logger.warning("client %d has no training windows; skipped",
                           cd.client_id)
            continue
        out[cd.client_id] = _fit_standalone(cd, cfg, fcfg, seed)
    if not out:
        raise ValueError("every client was skipped for lack of data")
    return out


def run_centralized(full_data, cfg: ModelConfig, fcfg: FederationConfig,
                    seed: int):
    """Whole-network training on the federated round cadence."""
    return _fit_standalone(full_data, cfg, fcfg, seed)


# ---------------------------------------------------------------------------
# round-log persistence
# ---------------------------------------------------------------------------

_CSV_HEADER = "round,client,ce,acc,f1,val_ce_global"


def save_round_logs(logs: list, path_or_file) -> None:
    lines = [_CSV_HEADER]
    for lg in logs:
        lines.append(f"{lg.round},{lg.client},{lg.ce!r},{lg.acc!r},"
                     f"{lg.f1!r},{lg.val_ce_global!r}")
    text = "\n".join(lines) + "\n"
    if hasattr(path_or_file, "write"):
        path_or_file.write(text)
    else:
        with open(path_or_file, "w") as fh:
            fh.write(text)


def load_round_logs(path_or_file) -> list:
    if hasattr(path_or_file, "read"):
        text = path_or_file.read()
    else:
        with open(path_or_file) as fh:
            text = fh.read()
    lines = [ln for ln in text.splitlines()
             if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0] != _CSV_HEADER:
        raise ValueError("missing round-log header")
    logs = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 6:
            raise ValueError(f"malformed round-log row: {ln!r}")
        logs.append(RoundLog(round=int(parts[0]), client=int(parts[1]),
                             ce=float(parts[2]), acc=float(parts[3]),
                             f1=float(parts[4]),
                             val_ce_global=float(parts[5])))
    return logs
