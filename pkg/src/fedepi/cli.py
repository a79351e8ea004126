"""Experiment driver.

Subcommands: simulate | partition | train | sweep | plotdata | graph-info.
Every run resolves a config (YAML file, overridden by flags), embeds it as
``# key=value`` comment lines in each output, and avoids timestamps so a
rerun with the same inputs is byte-identical.

Exit codes: 0 success, 2 config/validation failure, 1 runtime failure.
"""
from __future__ import annotations

import argparse
import hashlib
import os
import sys

import numpy as np
import yaml

from . import dataset as dsm
from . import epidemics as ep
from . import fedlearn as fl
from . import metrics as mx
from . import models as md
from . import netgraph as ng
from . import partition as pt
from .nncore import save_params

__all__ = ["main", "ConfigError"]


class ConfigError(Exception):
    """Bad or missing configuration; exits with status 2."""


_REQUIRED = object()

_PARTITION_FNS = {
    "even": lambda g, M, seed: pt.even_by_index(g, M),
    "spectral": lambda g, M, seed: pt.spectral_clustering(g, M, seed=seed),
    "kl": lambda g, M, seed: pt.kernighan_lin(g, M, seed=seed),
}

_METRIC_KEYS = ("ce", "acc", "f1", "rmse", "mae", "inv_ce")

_SUMMARY_HEADER = "scenario,model,aggregation,partition,epidemic,M,metric,value"


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

def _resolve_config(args, schema: dict) -> dict:
    """File config (if any) + flag overrides over ``schema`` defaults."""
    cfg = {k: v for k, v in schema.items()}
    path = getattr(args, "config", None)
    if path:
        try:
            with open(path) as fh:
                loaded = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config file: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a mapping")
        unknown = sorted(set(loaded) - set(schema))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        cfg.update(loaded)
    for key in schema:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    missing = sorted(k for k, v in cfg.items() if v is _REQUIRED)
    if missing:
        raise ConfigError(f"missing required config keys: {missing}")
    return cfg


def _provenance(cfg: dict) -> list[str]:
    lines = []
    for key in sorted(cfg):
        val = cfg[key]
        if isinstance(val, float):
            val = repr(val)
        lines.append(f"# {key}={val}")
    return lines


def _graph_from_spec(spec) -> ng.Graph:
    """Edge-list path, or synthetic "kind:n=..;m=..;p=..;seed=.." spec."""
    if isinstance(spec, dict):
        if "path" in spec:
            return ng.load_edge_list(spec["path"])
        spec = dict(spec)
        try:
            kind = spec.pop("kind")
            n = int(spec.pop("n"))
        except KeyError as exc:
            raise ConfigError(f"graph spec needs {exc} key") from exc
        kw = {}
        for key in ("p", "m", "seed"):
            if key in spec:
                kw[key] = spec.pop(key)
        if spec:
            raise ConfigError(f"unknown graph spec keys: {sorted(spec)}")
        return ng.generate_synthetic(kind, n, **kw)
    spec = str(spec)
    if ":" not in spec:
        return ng.load_edge_list(spec)
    kind, _, rest = spec.partition(":")
    parsed: dict = {"kind": kind}
    for part in rest.split(";"):
        part = part.strip()
        if not part:
            continue
        key, _, raw = part.partition("=")
        parsed[key.strip()] = float(raw) if key.strip() == "p" else int(raw)
    return _graph_from_spec(parsed)


def _epidemic_from_spec(spec) -> ep.ModelSpec:
    """"SIS:beta=0.5;delta=0.25" or {variant: SIS, beta: .., delta: ..}."""
    if isinstance(spec, dict):
        spec = dict(spec)
        try:
            variant = spec.pop("variant")
        except KeyError as exc:
            raise ConfigError("epidemic spec needs a variant key") from exc
        text = ";".join(f"{k}={v}" for k, v in spec.items())
        return ep.ModelSpec.from_description(variant, text)
    variant, _, text = str(spec).partition(":")
    return ep.ModelSpec.from_description(variant.strip(), text)


def _cached_trajectory(cfg: dict, g: ng.Graph, model: ep.ModelSpec) -> ep.Trajectory:
    """Simulate once per (graph, model, seed, dt, t_max, init); reuse after."""
    cache_dir = cfg.get("cache_dir")
    key = "|".join([g.graph_hash(), model.variant, model.describe(),
                    str(cfg["sim_seed"]), repr(float(cfg["dt"])),
                    repr(float(cfg["t_max"])), repr(cfg["init"])])
    if not cache_dir:
        return ep.simulate(g, model, dt=cfg["dt"], t_max=cfg["t_max"],
                           seed=cfg["sim_seed"], init=cfg["init"])
    os.makedirs(cache_dir, exist_ok=True)
    name = hashlib.sha1(key.encode()).hexdigest()[:16]
    path = os.path.join(cache_dir, f"traj_{name}.txt")
    if os.path.exists(path):
        return ep.load_trajectory(path)
    tr = ep.simulate(g, model, dt=cfg["dt"], t_max=cfg["t_max"],
                     seed=cfg["sim_seed"], init=cfg["init"])
    ep.save_trajectory(tr, path)
    return tr


def _write_lines(path: str, lines: list[str]) -> None:
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_table(path: str) -> list[dict]:
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines()
                 if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0] != _SUMMARY_HEADER:
        raise ValueError("results table missing the summary header")
    cols = _SUMMARY_HEADER.split(",")
    return [dict(zip(cols, ln.split(","))) for ln in lines[1:]]


# ---------------------------------------------------------------------------
# evaluation helpers shared by train and sweep
# ---------------------------------------------------------------------------

def _test_metrics(params, cd, cfg_model, batch_size: int) -> dict:
    gg = None
    if cfg_model.architecture == "stgat":
        from .nncore import GatGraph
        gg = GatGraph.from_graph(cd.subgraph)
    ev = md.evaluate(params, cd.test, cfg_model, gg=gg, batch_size=batch_size)
    cls = mx.classification_metrics(ev["preds"], ev["labels"])
    shape = (cd.test.n_windows, cd.test.n_nodes, cfg_model.t_F)
    prev = mx.prevalence_errors(ev["preds"].reshape(shape),
                                ev["labels"].reshape(shape))
    return {"ce": ev["ce"], "acc": cls["acc"], "f1": cls["f1"],
            "rmse": prev["rmse"], "mae": prev["mae"],
            "inv_ce": 1.0 / ev["ce"]}


def _summary_row(scenario, model, aggregation, partition, epidemic, M,
                 metric, value) -> str:
    return (f"{scenario},{model},{aggregation},{partition},{epidemic},"
            f"{M},{metric},{value!r}")


def _build_model_config(cfg: dict, variant: str) -> md.ModelConfig:
    return md.ModelConfig(cfg["model"], n_classes=dsm.n_classes(variant),
                          t_H=cfg["t_h"], t_F=cfg["t_f"])


def _federation_config(cfg: dict, method: str) -> fl.FederationConfig:
    return fl.FederationConfig(
        method=method, rounds=cfg["rounds"], local_epochs=cfg["local_epochs"],
        mu=cfg["mu"], patience=cfg["patience"], batch_size=cfg["batch_size"],
        lr=cfg["lr"], weight_decay=cfg["weight_decay"],
        n_workers=cfg["n_workers"])


def _whole_network_client(tr, g, cfg) -> dsm.ClientData:
    X, Y = dsm.make_windows(tr, cfg["t_h"], cfg["t_f"])
    train, val, test = dsm.chrono_split(X, Y)
    return dsm.ClientData(client_id=0, subgraph=g, nodes=np.arange(g.n_nodes),
                          train=train, val=val, test=test)


def _partition_clients(tr, g, cfg, M: int) -> list:
    method = cfg["partition_method"]
    if method not in _PARTITION_FNS:
        raise ConfigError(f"partition_method must be one of "
                          f"{sorted(_PARTITION_FNS)}")
    p = _PARTITION_FNS[method](g, M, cfg["seed"])
    return dsm.build_client_datasets(tr, g, p, cfg["t_h"], cfg["t_f"])


def _run_training(cfg: dict, clients, whole, cfg_model):
    """Dispatch one regime; returns (summary metric rows data, logs, params map)."""
    agg = cfg["aggregation"]
    seed = cfg["seed"]
    if agg == "centralized":
        fcfg = _federation_config(cfg, "fedavg")
        params, logs = fl.run_centralized(whole, cfg_model, fcfg, seed)
        per_client = {0: _test_metrics(params, whole,
                                       cfg_model, fcfg.batch_size)}
        return per_client, logs, {"global": params}
    if agg == "solo":
        fcfg = _federation_config(cfg, "fedavg")
        out = fl.run_solo(clients, cfg_model, fcfg, seed)
        logs = [lg for cid in sorted(out) for lg in out[cid][1]]
        per_client = {cid: _test_metrics(out[cid][0], cd, cfg_model,
                                         fcfg.batch_size)
                      for cid, cd in ((c.client_id, c) for c in clients)
                      if cid in out}
        return per_client, logs, {f"client{cid}": out[cid][0]
                                  for cid in sorted(out)}
    if agg in ("fedavg", "fedprox"):
        fcfg = _federation_config(cfg, agg)
        params, logs = fl.run_federated(clients, cfg_model, fcfg, seed)
        per_client = {cd.client_id: _test_metrics(params, cd, cfg_model,
                                                  fcfg.batch_size)
                      for cd in clients}
        return per_client, logs, {"global": params}
    raise ConfigError(f"unknown aggregation {agg!r}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_graph_info(args) -> int:
    cfg = _resolve_config(args, {"graph": _REQUIRED})
    g = _graph_from_spec(cfg["graph"])
    degs = np.zeros(g.n_nodes, np.int64)
    if g.edges.size:
        np.add.at(degs, g.edges.ravel(), 1)
    lam = ng.spectral_radius(g)
    print(f"nodes: {g.n_nodes}")
    print(f"edges: {g.edges.shape[0]}")
    print(f"components: {ng.component_count(g)}")
    print(f"degree min/mean/max: {degs.min()}/{degs.mean():.4f}/{degs.max()}")
    print(f"spectral radius: {lam:.6f}")
    print(f"epidemic threshold: {1.0 / lam:.6f}")
    return 0


def cmd_simulate(args) -> int:
    schema = {"graph": _REQUIRED, "epidemic": _REQUIRED, "dt": _REQUIRED,
              "t_max": _REQUIRED, "seed": 0, "init": 0.05,
              "out": _REQUIRED, "truncate": False}
    cfg = _resolve_config(args, schema)
    try:
        g = _graph_from_spec(cfg["graph"])
        model = _epidemic_from_spec(cfg["epidemic"])
        tr = ep.simulate(g, model, dt=float(cfg["dt"]),
                         t_max=float(cfg["t_max"]), seed=int(cfg["seed"]),
                         init=cfg["init"])
    except (ValueError, ng.EdgeListParseError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg["truncate"]:
        tr = ep.truncate_dynamic(tr)
    ep.save_trajectory(tr, cfg["out"])
    prev = ep.prevalence(tr)
    print(f"trajectory: {tr.n_steps} samples x {tr.n_nodes} nodes "
          f"-> {cfg['out']}")
    print(f"prevalence: initial {prev[0]:.4f}, mean {prev.mean():.4f}, "
          f"final {prev[-1]:.4f}")
    return 0


def cmd_partition(args) -> int:
    schema = {"graph": _REQUIRED, "method": "even", "clients": _REQUIRED,
              "seed": 0, "out": _REQUIRED}
    cfg = _resolve_config(args, schema)
    if cfg["method"] not in _PARTITION_FNS:
        raise ConfigError(f"method must be one of {sorted(_PARTITION_FNS)}")
    try:
        g = _graph_from_spec(cfg["graph"])
        p = _PARTITION_FNS[cfg["method"]](g, int(cfg["clients"]),
                                          int(cfg["seed"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    pt.save_partition(p, cfg["out"])
    sizes = ",".join(str(s) for s in p.sizes())
    print(f"partition: {cfg['method']} M={p.M} sizes=[{sizes}] "
          f"edge cut={pt.edge_cut(g, p)} -> {cfg['out']}")
    return 0


_TRAIN_SCHEMA = {
    "scenario": None, "graph": _REQUIRED, "epidemic": _REQUIRED,
    "trajectory": None, "dt": 0.5, "t_max": 50.0, "sim_seed": 0,
    "init": 0.05, "truncate": False, "cache_dir": None,
    "model": "lstm", "aggregation": "centralized",
    "partition_method": "even", "clients": 2, "t_h": 10, "t_f": 10,
    "rounds": 200, "local_epochs": 5, "mu": 0.01, "patience": 20,
    "batch_size": 32, "lr": 2e-4, "weight_decay": 5e-5, "n_workers": 1,
    "seed": 0, "client_ratio": 0.0, "node_missing_ratio": 0.0,
    "missing_seed": 0, "out": _REQUIRED,
}


def _load_training_inputs(cfg):
    try:
        g = _graph_from_spec(cfg["graph"])
        model = _epidemic_from_spec(cfg["epidemic"])
    except (ValueError, ng.EdgeListParseError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg["trajectory"]:
        tr = ep.load_trajectory(cfg["trajectory"])
        if tr.n_nodes != g.n_nodes:
            raise ConfigError("trajectory width does not match the graph")
    else:
        tr = _cached_trajectory(cfg, g, model)
        if cfg["truncate"]:
            tr = ep.truncate_dynamic(tr)
    return g, model, tr


def _corrupt(clients, cfg):
    if cfg["client_ratio"] > 0 and cfg["node_missing_ratio"] > 0:
        return dsm.inject_missing(clients, cfg["client_ratio"],
                                  cfg["node_missing_ratio"],
                                  seed=cfg["missing_seed"])
    return clients


def cmd_train(args) -> int:
    cfg = _resolve_config(args, _TRAIN_SCHEMA)
    g, model, tr = _load_training_inputs(cfg)
    cfg_model = _build_model_config(cfg, model.variant)
    whole = _whole_network_client(tr, g, cfg)
    agg = cfg["aggregation"]
    M = int(cfg["clients"])
    if agg == "centralized" or M == 1:
        clients, used_partition = [whole], "none"
    else:
        clients = _partition_clients(tr, g, cfg, M)
        used_partition = cfg["partition_method"]
    clients = _corrupt(clients, cfg)
    per_client, logs, params_map = _run_training(cfg, clients, whole,
                                                 cfg_model)

    scenario = cfg["scenario"] or agg
    eff_m = 1 if agg == "centralized" else len(clients)
    rows = []
    for metric in _METRIC_KEYS:
        mean = mx.mean_client_metric([per_client[c][metric]
                                      for c in sorted(per_client)])
        rows.append(_summary_row(scenario, cfg["model"], agg, used_partition,
                                 model.variant, eff_m, metric, mean))
    for cid in sorted(per_client):
        for metric in _METRIC_KEYS:
            rows.append(_summary_row(f"{scenario}/client{cid}", cfg["model"],
                                     agg, used_partition, model.variant,
                                     eff_m, metric, per_client[cid][metric]))

    os.makedirs(cfg["out"], exist_ok=True)
    prov = _provenance(cfg)
    _write_lines(os.path.join(cfg["out"], "summary.csv"),
                 prov + [_SUMMARY_HEADER] + rows)
    log_lines = [f"{lg.round},{lg.client},{lg.ce!r},{lg.acc!r},{lg.f1!r},"
                 f"{lg.val_ce_global!r}" for lg in logs]
    _write_lines(os.path.join(cfg["out"], "rounds.csv"),
                 prov + ["round,client,ce,acc,f1,val_ce_global"] + log_lines)
    for name, params in params_map.items():
        save_params(params, os.path.join(cfg["out"], f"params_{name}.bin"))
    with open(os.path.join(cfg["out"], "config.yaml"), "w") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True)
    acc_row = [r for r in rows if r.split(",")[6] == "acc"][0]
    print(f"{scenario}: mean test acc {float(acc_row.split(',')[7]):.4f} "
          f"-> {cfg['out']}")
    return 0


_SWEEP_SCHEMA = dict(_TRAIN_SCHEMA)
_SWEEP_SCHEMA.update({
    "sweep_type": _REQUIRED,            # clients | tau | missing
    "m_values": None, "tau_values": None,
    "client_ratios": None, "node_missing_ratios": None,
    "metric": "acc", "aggregation": "fedavg", "out": _REQUIRED,
})


def _sweep_clients(cfg, g, model, tr, cfg_model, header_extra):
    if cfg["aggregation"] == "centralized":
        raise ConfigError("client-count sweeps need a multi-client "
                          "aggregation (fedavg/fedprox/solo)")
    m_values = cfg["m_values"] or [2, 3, 4]
    metric = cfg["metric"]
    rows = []
    alpha_bars = []
    for M in m_values:
        clients = _corrupt(_partition_clients(tr, g, cfg, int(M)), cfg)
        per_client, _, _ = _run_training(cfg, clients, None, cfg_model)
        vals = [per_client[c][metric] for c in sorted(per_client)]
        for cid in sorted(per_client):
            rows.append(_summary_row(
                f"M{M}/client{cid}", cfg["model"], cfg["aggregation"],
                cfg["partition_method"], model.variant, M, metric,
                per_client[cid][metric]))
        alpha = mx.mean_client_metric(vals)
        alpha_bars.append(alpha)
        rows.append(_summary_row(f"M{M}", cfg["model"], cfg["aggregation"],
                                 cfg["partition_method"], model.variant, M,
                                 "alpha_bar", alpha))
    if len(alpha_bars) >= 2:
        eta = mx.efficacy_energy(alpha_bars)
        rows.append(_summary_row("sweep", cfg["model"], cfg["aggregation"],
                                 cfg["partition_method"], model.variant,
                                 max(int(m) for m in m_values), "eta", eta))
    return rows


def _sweep_tau(cfg, g, model, tr, cfg_model, header_extra):
    if model.variant not in ("SIS", "SIStv", "SIRS"):
        raise ConfigError("tau sweeps need a rescalable epidemic variant")
    tau_values = cfg["tau_values"]
    if not tau_values:
        raise ConfigError("tau sweep needs tau_values")
    header_extra.append(f"# tau_c={1.0 / ng.spectral_radius(g)!r}")
    metric = cfg["metric"]
    rows = []
    for tau in tau_values:
        scaled = model.scaled(float(tau))
        tr_tau = _cached_trajectory(cfg, g, scaled)
        whole = _whole_network_client(tr_tau, g, cfg)
        if cfg["aggregation"] == "centralized":
            clients = [whole]
        else:
            clients = _corrupt(_partition_clients(tr_tau, g, cfg,
                                                  int(cfg["clients"])), cfg)
        per_client, _, _ = _run_training(cfg, clients, whole, cfg_model)
        mean = mx.mean_client_metric([per_client[c][metric]
                                      for c in sorted(per_client)])
        rows.append(_summary_row(f"tau{tau}", cfg["model"],
                                 cfg["aggregation"], cfg["partition_method"],
                                 scaled.variant, len(per_client), metric,
                                 mean))
    return rows


def _sweep_missing(cfg, g, model, tr, cfg_model, header_extra):
    if cfg["aggregation"] == "centralized":
        raise ConfigError("missing-report sweeps need a multi-client "
                          "aggregation (fedavg/fedprox/solo)")
    crs = cfg["client_ratios"]
    nrs = cfg["node_missing_ratios"]
    if not crs or not nrs:
        raise ConfigError("missing sweep needs client_ratios and "
                          "node_missing_ratios")
    metric = cfg["metric"]
    rows = []
    base_clients = _partition_clients(tr, g, cfg, int(cfg["clients"]))
    for cr in crs:
        for nr in nrs:
            corrupted = dsm.inject_missing(base_clients, float(cr), float(nr),
                                           seed=cfg["missing_seed"])
            per_client, _, _ = _run_training(cfg, corrupted, None, cfg_model)
            mean = mx.mean_client_metric([per_client[c][metric]
                                          for c in sorted(per_client)])
            rows.append(_summary_row(
                f"cr{cr}_nr{nr}", cfg["model"], cfg["aggregation"],
                cfg["partition_method"], model.variant, len(per_client),
                metric, mean))
    return rows


def cmd_sweep(args) -> int:
    cfg = _resolve_config(args, _SWEEP_SCHEMA)
    g, model, tr = _load_training_inputs(cfg)
    cfg_model = _build_model_config(cfg, model.variant)
    sweeps = {"clients": _sweep_clients, "tau": _sweep_tau,
              "missing": _sweep_missing}
    if cfg["sweep_type"] not in sweeps:
        raise ConfigError(f"sweep_type must be one of {sorted(sweeps)}")
    header_extra: list[str] = []
    rows = sweeps[cfg["sweep_type"]](cfg, g, model, tr, cfg_model,
                                     header_extra)
    out = cfg["out"]
    parent = os.path.dirname(out)
    if parent:
        os.makedirs(parent, exist_ok=True)
    _write_lines(out, _provenance(cfg) + header_extra
                 + [_SUMMARY_HEADER] + rows)
    print(f"sweep ({cfg['sweep_type']}): {len(rows)} rows -> {out}")
    return 0


def cmd_plotdata(args) -> int:
    schema = {"results": _REQUIRED, "family": _REQUIRED, "metric": None,
              "out": _REQUIRED}
    cfg = _resolve_config(args, schema)
    try:
        table = _read_table(cfg["results"])
    except OSError as exc:
        raise ConfigError(f"cannot read results: {exc}") from exc
    client_rows = [r for r in table if "/client" in r["scenario"]
                   and (cfg["metric"] is None or r["metric"] == cfg["metric"])]
    if cfg["family"] == "violin":
        if not client_rows:
            raise ValueError("no per-client rows to plot")
        lines = ["M,client,value"]
        keyed = sorted(client_rows, key=lambda r: (
            int(r["M"]), int(r["scenario"].rsplit("client", 1)[1])))
        for r in keyed:
            cid = int(r["scenario"].rsplit("client", 1)[1])
            lines.append(f"{r['M']},{cid},{r['value']}")
    elif cfg["family"] == "line":
        if not client_rows:
            raise ValueError("no per-client rows to plot")
        by_m: dict = {}
        for r in client_rows:
            by_m.setdefault(int(r["M"]), []).append(float(r["value"]))
        lines = ["x,mean,min,max"]
        for m in sorted(by_m):
            vals = np.array(by_m[m])
            lines.append(f"{m},{mx.mean_client_metric(vals)!r},"
                         f"{float(vals.min())!r},{float(vals.max())!r}")
    else:
        raise ConfigError("family must be violin or line")
    _write_lines(cfg["out"], ["# source=" + cfg["results"]] + lines)
    print(f"plotdata ({cfg['family']}): -> {cfg['out']}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_common(sp):
    sp.add_argument("--config", help="YAML config file")


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="fedepi",
        description="Epidemic simulation and federated prediction workbench")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("graph-info", help="print graph statistics")
    _add_common(p)
    p.add_argument("--graph")

    p = sub.add_parser("simulate", help="run one epidemic simulation")
    _add_common(p)
    p.add_argument("--graph")
    p.add_argument("--epidemic")
    p.add_argument("--dt", type=float)
    p.add_argument("--t-max", dest="t_max", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--init", type=float)
    p.add_argument("--truncate", action="store_const", const=True)
    p.add_argument("--out")

    p = sub.add_parser("partition", help="split a graph into client zones")
    _add_common(p)
    p.add_argument("--graph")
    p.add_argument("--method", choices=sorted(_PARTITION_FNS))
    p.add_argument("--clients", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = sub.add_parser("train", help="train one scenario")
    _add_common(p)
    for flag, typ in (("--graph", str), ("--epidemic", str),
                      ("--trajectory", str), ("--dt", float),
                      ("--t-max", float), ("--sim-seed", int),
                      ("--init", float), ("--cache-dir", str),
                      ("--model", str), ("--aggregation", str),
                      ("--partition-method", str), ("--clients", int),
                      ("--t-h", int), ("--t-f", int), ("--rounds", int),
                      ("--local-epochs", int), ("--mu", float),
                      ("--patience", int), ("--batch-size", int),
                      ("--lr", float), ("--weight-decay", float),
                      ("--n-workers", int), ("--seed", int),
                      ("--client-ratio", float),
                      ("--node-missing-ratio", float),
                      ("--missing-seed", int), ("--scenario", str),
                      ("--out", str)):
        p.add_argument(flag, dest=flag[2:].replace("-", "_"), type=typ)

    p = sub.add_parser("sweep", help="run a declared experiment grid")
    _add_common(p)
    p.add_argument("--sweep-type", dest="sweep_type",
                   choices=("clients", "tau", "missing"))
    p.add_argument("--metric")
    p.add_argument("--out")

    p = sub.add_parser("plotdata", help="derive per-figure CSVs")
    _add_common(p)
    p.add_argument("--results")
    p.add_argument("--family", choices=("violin", "line"))
    p.add_argument("--metric")
    p.add_argument("--out")
    return ap


_HANDLERS = {
    "graph-info": cmd_graph_info,
    "simulate": cmd_simulate,
    "partition": cmd_partition,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "plotdata": cmd_plotdata,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:          # runtime failure -> exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
