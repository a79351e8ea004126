"""Continuous-time epidemic processes on networks and trajectory handling.

Seven compartmental variants are supported: SIS, SIR, SEIR, SIRS, SIRVS,
a non-Markovian SIS with Weibull transmission times (nmSIS), and an SIS
with sinusoidally modulated infection rate (SIStv).  The Markovian
variants and SIStv run through a jitted direct-Gillespie loop; nmSIS uses
a next-reaction event queue in Python.

States are sampled on a regular grid t_k = k*dt: the recorded state at
t_k is the state after the last event at or before t_k, and once the
process absorbs the final state is replicated to the horizon.

Compartment codes are global across variants::

    S=0  I=1  R=2  E=3  V=4
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass

import numpy as np

from . import _sim_core
from .netgraph import Graph

__all__ = [
    "SUSCEPTIBLE", "INFECTED", "RECOVERED", "EXPOSED", "VACCINATED",
    "COMPARTMENT_NAMES", "VARIANTS", "ModelSpec", "Trajectory",
    "simulate", "estimate_infection_probabilities", "prevalence",
    "truncate_dynamic", "save_trajectory", "load_trajectory",
    "exact_markov_sis", "legal_compartments",
]

SUSCEPTIBLE = 0
INFECTED = 1
RECOVERED = 2
EXPOSED = 3
VACCINATED = 4

COMPARTMENT_NAMES = {0: "S", 1: "I", 2: "R", 3: "E", 4: "V"}

# canonical parameter order per variant
_PARAM_NAMES = {
    "SIS": ("beta", "delta"),
    "SIR": ("beta", "delta"),
    "SEIR": ("beta1", "beta2", "delta"),
    "nmSIS": ("beta_scale", "beta_shape", "delta"),
    "SIRS": ("beta", "delta", "omega"),
    "SIRVS": ("beta", "delta", "omega", "v1", "v2"),
    "SIStv": ("a", "b", "c", "delta"),
}
VARIANTS = tuple(_PARAM_NAMES)

_LEGAL = {
    "SIS": (0, 1),
    "SIR": (0, 1, 2),
    "SEIR": (0, 1, 2, 3),
    "nmSIS": (0, 1),
    "SIRS": (0, 1, 2),
    "SIRVS": (0, 1, 2, 4),
    "SIStv": (0, 1),
}

VARIANT_CODES = {
    "SIS": _sim_core.SIS,
    "SIR": _sim_core.SIR,
    "SEIR": _sim_core.SEIR,
    "SIRS": _sim_core.SIRS,
    "SIRVS": _sim_core.SIRVS,
    "SIStv": _sim_core.SISTV,
}


def legal_compartments(variant: str) -> tuple[int, ...]:
    """Sorted compartment codes a variant can produce."""
    try:
        return _LEGAL[variant]
    except KeyError:
        raise ValueError(f"unknown model variant {variant!r}") from None


@dataclass(frozen=True)
class ModelSpec:
    """An epidemic variant plus its rate parameters in canonical order."""

    variant: str
    params: tuple[float, ...]

    def __post_init__(self):
        if self.variant not in _PARAM_NAMES:
            raise ValueError(f"unknown model variant {self.variant!r}")
        names = _PARAM_NAMES[self.variant]
        vals = tuple(float(v) for v in self.params)
        if len(vals) != len(names):
            raise ValueError(
                f"{self.variant} takes {len(names)} parameters "
                f"{names}, got {len(vals)}")
        for nm, v in zip(names, vals):
            if not np.isfinite(v):
                raise ValueError(f"{self.variant} parameter {nm} is not finite")
            if nm != "b" and v < 0.0:
                raise ValueError(f"{self.variant} parameter {nm}={v} must be >= 0")
        if self.variant == "SIStv":
            a, b, c, _ = vals
            if a - abs(b) < 0.0:
                raise ValueError("SIStv needs a >= |b| so the rate stays nonnegative")
            if c <= 0.0:
                raise ValueError("SIStv period scale c must be > 0")
        if self.variant == "nmSIS" and (vals[0] <= 0.0 or vals[1] <= 0.0):
            raise ValueError("nmSIS Weibull scale and shape must be > 0")
        object.__setattr__(self, "params", vals)

    # -- constructors ----------------------------------------------------
    @classmethod
    def sis(cls, beta, delta):
        return cls("SIS", (beta, delta))

    @classmethod
    def sir(cls, beta, delta):
        return cls("SIR", (beta, delta))

    @classmethod
    def seir(cls, beta1, beta2, delta):
        return cls("SEIR", (beta1, beta2, delta))

    @classmethod
    def nmsis(cls, beta_scale, beta_shape, delta):
        return cls("nmSIS", (beta_scale, beta_shape, delta))

    @classmethod
    def sirs(cls, beta, delta, omega):
        return cls("SIRS", (beta, delta, omega))

    @classmethod
    def sirvs(cls, beta, delta, omega, v1, v2):
        return cls("SIRVS", (beta, delta, omega, v1, v2))

    @classmethod
    def sistv(cls, a, b, c, delta):
        return cls("SIStv", (a, b, c, delta))

    # -- helpers ---------------------------------------------------------
    @property
    def param_names(self) -> tuple[str, ...]:
        return _PARAM_NAMES[self.variant]

    def param(self, name: str) -> float:
        try:
            return self.params[self.param_names.index(name)]
        except ValueError:
            raise KeyError(name) from None

    def param_dict(self) -> dict[str, float]:
        return dict(zip(self.param_names, self.params))

    def effective_infection_rate(self) -> float:
        """tau = beta / delta (SIS family) or beta / (delta + omega) (SIRS)."""
        if self.variant in ("SIS", "nmSIS", "SIStv"):
            if self.variant == "SIS":
                num = self.param("beta")
            elif self.variant == "SIStv":
                num = self.param("a")
            else:
                # mean Weibull transmission rate ~ 1 / mean inter-event time
                import math
                scale, shape, _ = self.params
                num = 1.0 / (scale * math.gamma(1.0 + 1.0 / shape))
            return num / self.param("delta")
        if self.variant == "SIRS":
            return self.param("beta") / (self.param("delta") + self.param("omega"))
        raise ValueError(
            f"effective infection rate is not defined for {self.variant}")

    def scaled(self, tau: float) -> "ModelSpec":
        """Copy with the primary infection rate set so that the effective
        infection rate equals ``tau`` (recovery/loss rates unchanged)."""
        d = self.param_dict()
        if self.variant == "SIS":
            d["beta"] = tau * d["delta"]
        elif self.variant == "SIStv":
            ratio = d["b"] / d["a"] if d["a"] > 0 else 0.0
            d["a"] = tau * d["delta"]
            d["b"] = ratio * d["a"]
        elif self.variant == "SIRS":
            d["beta"] = tau * (d["delta"] + d["omega"])
        else:
            raise ValueError(f"cannot rescale {self.variant} to a target tau")
        return ModelSpec(self.variant, tuple(d[n] for n in self.param_names))

    def describe(self) -> str:
        return ";".join(f"{n}={v!r}" for n, v in zip(self.param_names, self.params))

    @classmethod
    def from_description(cls, variant: str, text: str) -> "ModelSpec":
        vals = {}
        for part in text.split(";"):
            part = part.strip()
            if not part:
                continue
            name, _, raw = part.partition("=")
            vals[name.strip()] = float(raw)
        names = _PARAM_NAMES.get(variant)
        if names is None:
            raise ValueError(f"unknown model variant {variant!r}")
        missing = [n for n in names if n not in vals]
        if missing:
            raise ValueError(f"missing parameters for {variant}: {missing}")
        return cls(variant, tuple(vals[n] for n in names))


@dataclass(frozen=True)
class Trajectory:
    """Sampled node states on a regular time grid.

    ``states`` has shape (T, N) with int8 compartment codes; row k is the
    network state at time k*dt.
    """

    model: ModelSpec
    states: np.ndarray
    dt: float
    seed: int
    graph_hash: str = ""

    def __post_init__(self):
        st = np.ascontiguousarray(self.states, dtype=np.int8)
        if st.ndim != 2:
            raise ValueError("states must be a (T, N) array")
        object.__setattr__(self, "states", st)

    @property
    def n_steps(self) -> int:
        return self.states.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.states.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps) * self.dt


def _resolve_init(g: Graph, init, seed: int) -> np.ndarray:
    states = np.zeros(g.n_nodes, np.int8)
    if np.isscalar(init) and not isinstance(init, (list, tuple, np.ndarray)):
        rho = float(init)
        if not 0.0 < rho <= 1.0:
            raise ValueError(f"initial infected fraction {rho} not in (0, 1]")
        count = max(1, int(round(rho * g.n_nodes)))
        rng = np.random.default_rng(seed)
        chosen = rng.choice(g.n_nodes, size=count, replace=False)
    else:
        chosen = np.asarray(list(init), dtype=np.int64)
        if chosen.size == 0:
            raise ValueError("initial infected set is empty")
        if chosen.min() < 0 or chosen.max() >= g.n_nodes:
            raise ValueError("initial infected node out of range")
    states[chosen] = INFECTED
    return states


def simulate(g: Graph, model: ModelSpec, *, dt: float, t_max: float,
             seed: int, init=0.05) -> Trajectory:
    """Run one stochastic realization sampled at t_k = k*dt, k=0..floor(t_max/dt).

    ``init`` is either a fraction of initially infected nodes (chosen
    uniformly at random from ``seed``) or an explicit iterable of node
    indices.  Identical arguments give identical trajectories.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if t_max <= dt:
        raise ValueError("t_max must exceed dt")
    n_steps = int(np.floor(t_max / dt + 1e-9)) + 1
    sample_times = np.arange(n_steps) * dt
    init_states = _resolve_init(g, init, seed)
    indptr, indices = g.csr_arrays()
    if model.variant == "nmSIS":
        states = _next_reaction_sis(indptr, indices, init_states,
                                    model.params, sample_times, seed)
    else:
        states = _sim_core.markov_sim(
            indptr, indices, init_states, VARIANT_CODES[model.variant],
            np.asarray(model.params, np.float64), sample_times,
            np.int64(seed & 0xFFFFFFFF))
    return Trajectory(model=model, states=states, dt=float(dt),
                      seed=int(seed), graph_hash=g.graph_hash())


def estimate_infection_probabilities(
        g: Graph, model: ModelSpec, init, sample_times, n_runs: int,
        seed: int) -> np.ndarray:
    """Monte-Carlo P(node infected at t) over ``n_runs`` seeded realizations.

    Returns an array of shape (len(sample_times), N).  Run r uses seed
    ``seed + r`` through the same event loop as :func:`simulate`.
    """
    sample_times = np.asarray(sample_times, np.float64)
    indptr, indices = g.csr_arrays()
    init_states = _resolve_init(g, init, seed)
    acc = np.zeros((sample_times.size, g.n_nodes), np.float64)
    if model.variant == "nmSIS":
        for r in range(n_runs):
            st = _next_reaction_sis(indptr, indices, init_states,
                                    model.params, sample_times, seed + r)
            acc += (st == INFECTED)
    else:
        code = VARIANT_CODES[model.variant]
        p = np.asarray(model.params, np.float64)
        for r in range(n_runs):
            st = _sim_core.markov_sim(indptr, indices, init_states, code, p,
                                      sample_times,
                                      np.int64((seed + r) & 0xFFFFFFFF))
            acc += (st == INFECTED)
    return acc / n_runs


def prevalence(tr: Trajectory, compartment: int = INFECTED) -> np.ndarray:
    """Fraction of nodes in ``compartment`` at each sampled time."""
    if compartment not in legal_compartments(tr.model.variant):
        raise ValueError(
            f"compartment {compartment} is not reachable under {tr.model.variant}")
    return (tr.states == compartment).mean(axis=1)


def truncate_dynamic(tr: Trajectory, *, window: int = 20,
                     min_change_fraction: float = 0.001,
                     min_length: int = 40) -> Trajectory:
    """Drop the settled tail of a trajectory.

    A step is quiet when the fraction of nodes changing state across it is
    below ``min_change_fraction``; once ``window`` consecutive quiet steps
    occur the trajectory is cut right after the first of them, but never
    below ``min_length`` samples.
    """
    if window < 2:
        raise ValueError("window must be at least 2")
    T = tr.n_steps
    if T <= min_length:
        return tr
    changed = (tr.states[1:] != tr.states[:-1]).mean(axis=1)
    quiet = changed < min_change_fraction
    if quiet.size < window:
        return tr
    runs = np.convolve(quiet.astype(np.int64), np.ones(window, np.int64),
                       mode="valid")
    hits = np.nonzero(runs == window)[0]
    if hits.size == 0:
        return tr
    cut = int(hits[0]) + 1          # keep the state entering the quiet run
    new_len = min(T, max(cut, min_length))
    if new_len >= T:
        return tr
    return Trajectory(model=tr.model, states=tr.states[:new_len],
                      dt=tr.dt, seed=tr.seed, graph_hash=tr.graph_hash)


# ---------------------------------------------------------------------------
# non-Markovian SIS: next-reaction scheme with lazy invalidation
# ---------------------------------------------------------------------------

_EV_REC = 0
_EV_INF = 1


def _next_reaction_sis(indptr, indices, init_states, params, sample_times,
                       seed) -> np.ndarray:
    """SIS with Weibull(scale, shape) transmission and exponential recovery.

    Each infection draws a recovery time and one tentative transmission
    time per currently susceptible neighbor; stale events are skipped via
    a per-node infection epoch counter.
    """
    beta_scale, beta_shape, delta = params
    rng = np.random.default_rng(seed)
    n = init_states.shape[0]
    states = init_states.copy()
    epoch = np.zeros(n, np.int64)
    heap: list[tuple] = []
    seq = itertools.count()

    def infect(j: int, t: float) -> None:
        states[j] = INFECTED
        epoch[j] += 1
        ep = epoch[j]
        heapq.heappush(heap, (t + rng.exponential(1.0 / delta), next(seq),
                              _EV_REC, j, -1, ep))
        for k in range(indptr[j], indptr[j + 1]):
            nb = indices[k]
            if states[nb] == SUSCEPTIBLE:
                dtau = beta_scale * rng.weibull(beta_shape)
                heapq.heappush(heap, (t + dtau, next(seq), _EV_INF, j, nb, ep))

    init_infected = np.nonzero(init_states == INFECTED)[0]
    states[init_infected] = SUSCEPTIBLE       # so infect() sees them as targets
    for j in init_infected:
        infect(int(j), 0.0)

    n_samples = sample_times.shape[0]
    out = np.empty((n_samples, n), np.int8)
    s_idx = 0
    while heap and s_idx < n_samples:
        t_ev, _, kind, src, dst, ep = heapq.heappop(heap)
        while s_idx < n_samples and sample_times[s_idx] < t_ev:
            out[s_idx] = states
            s_idx += 1
        if s_idx >= n_samples:
            break
        if states[src] != INFECTED or epoch[src] != ep:
            continue
        if kind == _EV_REC:
            states[src] = SUSCEPTIBLE
        elif states[dst] == SUSCEPTIBLE:
            infect(int(dst), t_ev)
    while s_idx < n_samples:
        out[s_idx] = states
        s_idx += 1
    return out


# ---------------------------------------------------------------------------
# exact SIS marginals on tiny graphs (master equation)
# ---------------------------------------------------------------------------

def exact_markov_sis(g: Graph, beta: float, delta: float, init,
                     times) -> np.ndarray:
    """Exact P(node infected at t) for Markovian SIS via the 2^N master equation.

    Feasible only for small graphs (N <= 10).  ``init`` is an iterable of
    initially infected node indices; returns shape (len(times), N).
    """
    from scipy.linalg import expm

    n = g.n_nodes
    if n > 10:
        raise ValueError("exact solver is limited to 10 nodes")
    times = np.asarray(times, np.float64)
    nbrs = g.adjacency
    dim = 1 << n
    Q = np.zeros((dim, dim))
    for s in range(dim):
        for i in range(n):
            bit = 1 << i
            if s & bit:
                Q[s, s ^ bit] += delta
            else:
                k = 0
                for nb in nbrs[i]:
                    if s & (1 << int(nb)):
                        k += 1
                if k:
                    Q[s, s | bit] += beta * k
        Q[s, s] -= Q[s].sum()

    s0 = 0
    for j in init:
        j = int(j)
        if not 0 <= j < n:
            raise ValueError("initial infected node out of range")
        s0 |= 1 << j
    p0 = np.zeros(dim)
    p0[s0] = 1.0

    out = np.empty((times.size, n))
    for ti, t in enumerate(times):
        p = p0 @ expm(Q * t)
        for i in range(n):
            bit = 1 << i
            mask = (np.arange(dim) & bit) > 0
            out[ti, i] = p[mask].sum()
    return out


# ---------------------------------------------------------------------------
# trajectory file format
# ---------------------------------------------------------------------------
#   #meta model=SIS params=beta=0.5;delta=1.0 n=100 dt=0.1 seed=42 graph=<hash>
#   t,s_1,...,s_N            (one row per sample, t printed with 6 decimals)

def save_trajectory(tr: Trajectory, dest) -> None:
    """Write a trajectory to ``dest`` (path or text file object)."""
    own = isinstance(dest, (str, bytes)) or hasattr(dest, "__fspath__")
    fh = open(dest, "w") if own else dest
    try:
        fh.write(f"#meta model={tr.model.variant} params={tr.model.describe()} "
                 f"n={tr.n_nodes} dt={tr.dt!r} seed={tr.seed} "
                 f"graph={tr.graph_hash}\n")
        for k in range(tr.n_steps):
            row = ",".join(str(int(v)) for v in tr.states[k])
            fh.write(f"{k * tr.dt:.6f},{row}\n")
    finally:
        if own:
            fh.close()


def load_trajectory(source) -> Trajectory:
    """Read a trajectory written by :func:`save_trajectory`."""
    own = isinstance(source, (str, bytes)) or hasattr(source, "__fspath__")
    fh = open(source, "r") if own else source
    try:
        header = fh.readline()
        if not header.startswith("#meta "):
            raise ValueError("trajectory file is missing the #meta header")
        # tokens are space-separated key=value pairs; the params value embeds
        # further '='s but no spaces, so partition at the first '=' only
        meta = {}
        for tok in header[len("#meta "):].strip().split(" "):
            key, _, val = tok.partition("=")
            meta[key] = val
        model = ModelSpec.from_description(meta["model"], meta["params"])
        n = int(meta["n"])
        dt = float(meta["dt"])
        seed = int(meta["seed"])
        graph_hash = meta.get("graph", "")
        rows = []
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != n + 1:
                raise ValueError(
                    f"trajectory row has {len(parts) - 1} states, expected {n}")
            rows.append([int(v) for v in parts[1:]])
        if not rows:
            raise ValueError("trajectory file has no state rows")
        states = np.asarray(rows, np.int8)
    finally:
        if own:
            fh.close()
    return Trajectory(model=model, states=states, dt=dt, seed=seed,
                      graph_hash=graph_hash)
