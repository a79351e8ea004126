"""Contact-network representation: ingestion, synthesis and spectral quantities.

The graph is undirected, simple (no self-loops, no parallel edges) and
stored with dense node indices 0..n-1.  External node identifiers from an
edge-list file are kept in ``labels``.
"""
from __future__ import annotations

import hashlib
import io
import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

_SYNTHETIC_KINDS = ("erdos-renyi", "barabasi-albert", "complete", "star", "ring")


class EdgeListParseError(ValueError):
    """Raised when an edge-list line cannot be parsed (carries the line number)."""


class PowerIterationError(RuntimeError):
    """Power iteration failed to converge within the iteration cap."""


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph with dense node indices.

    Attributes
    ----------
    n_nodes : int
        Number of nodes, indexed 0..n_nodes-1.
    edges : np.ndarray
        Array of shape (L, 2), each row (u, v) with u < v, rows sorted
        lexicographically.
    adjacency : tuple of np.ndarray
        Per-node sorted neighbor index arrays.
    labels : tuple of str, optional
        External node identifiers, labels[i] names node i.
    """

    n_nodes: int
    edges: np.ndarray
    adjacency: tuple = field(repr=False)
    labels: Optional[tuple] = None

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def degrees(self) -> np.ndarray:
        return np.array([len(a) for a in self.adjacency], dtype=np.int64)

    def neighbors(self, i: int) -> np.ndarray:
        return self.adjacency[i]

    def csr_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat (indptr, indices) neighbor arrays for tight simulation loops."""
        degs = self.degrees()
        indptr = np.zeros(self.n_nodes + 1, dtype=np.int64)
        np.cumsum(degs, out=indptr[1:])
        if self.n_nodes and degs.sum() > 0:
            indices = np.concatenate([a for a in self.adjacency]).astype(np.int64)
        else:
            indices = np.zeros(0, dtype=np.int64)
        return indptr, indices

    def graph_hash(self) -> str:
        """Stable hex digest of the edge structure (node count + edge list)."""
        h = hashlib.sha1()
        h.update(str(self.n_nodes).encode())
        h.update(self.edges.astype(np.int64).tobytes())
        return h.hexdigest()[:16]


def from_edges(n_nodes: int, edges: Iterable[tuple], labels: Optional[Sequence[str]] = None) -> Graph:
    """Build a Graph from an edge iterable, canonicalizing duplicates.

    Self-loops are rejected here; ``load_edge_list`` drops them (with a
    warning count) before calling in.
    """
    if n_nodes < 0:
        raise ValueError("n_nodes must be non-negative")
    seen = set()
    for u, v in edges:
        u, v = int(u), int(v)
        if u == v:
            raise ValueError(f"self-loop on node {u}")
        if not (0 <= u < n_nodes and 0 <= v < n_nodes):
            raise ValueError(f"edge ({u},{v}) out of range for n_nodes={n_nodes}")
        seen.add((min(u, v), max(u, v)))
    edge_arr = np.array(sorted(seen), dtype=np.int64).reshape(-1, 2)
    adj = [[] for _ in range(n_nodes)]
    for u, v in edge_arr:
        adj[u].append(v)
        adj[v].append(u)
    adjacency = tuple(np.array(sorted(a), dtype=np.int64) for a in adj)
    if labels is not None:
        labels = tuple(str(x) for x in labels)
        if len(labels) != n_nodes:
            raise ValueError("labels length must equal n_nodes")
    return Graph(n_nodes=n_nodes, edges=edge_arr, adjacency=adjacency, labels=labels)


def load_edge_list(source) -> Graph:
    """Parse an edge-list from a path, string, bytes or file-like object.

    Each non-comment line is ``src,dst``.  Lines starting with ``#`` and
    blank lines are ignored.  Duplicate lines (including reversed
    duplicates) collapse to one undirected edge; self-loops are dropped and
    counted in a warning.  External IDs are mapped to dense indices; the
    mapping lands in ``labels`` unless the IDs already are 0..n-1.
    """
    lines = _read_lines(source)
    raw_edges = []  # (src_id, dst_id) as strings
    n_lines = 0
    for lineno, line in lines:
        n_lines += 1
        parts = line.split(",")
        if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
            raise EdgeListParseError(f"line {lineno}: expected 'src,dst', got {line!r}")
        raw_edges.append((parts[0].strip(), parts[1].strip()))
    if n_lines == 0:
        raise EdgeListParseError("empty edge list input")

    ids = set()
    for a, b in raw_edges:
        ids.add(a)
        ids.add(b)
    all_int = all(_is_int(x) for x in ids)
    if all_int:
        ordered = sorted(ids, key=int)
    else:
        ordered = sorted(ids)
    index = {x: i for i, x in enumerate(ordered)}

    n_selfloops = 0
    edge_set = set()
    for a, b in raw_edges:
        u, v = index[a], index[b]
        if u == v:
            n_selfloops += 1
            continue
        edge_set.add((min(u, v), max(u, v)))
    if n_selfloops:
        logger.warning("dropped %d self-loop line(s) at load", n_selfloops)

    dense_ints = all_int and all(int(x) == i for i, x in enumerate(ordered))
    labels = None if dense_ints else ordered
    return from_edges(len(ordered), edge_set, labels=labels)


def save_edge_list(g: Graph, dest) -> None:
    """Write the graph in the same CSV format, emitting labels when present."""
    name = lambda i: g.labels[i] if g.labels is not None else str(i)
    lines = [f"{name(u)},{name(v)}" for u, v in g.edges]
    text = "\n".join(lines) + ("\n" if lines else "")
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        with open(dest, "w", encoding="utf-8") as f:
            f.write(text)


def top_k_by_degree(g: Graph, k: int) -> Graph:
    """Induced subgraph on the k highest-degree nodes.

    Degree ties break toward the smaller original index; surviving nodes
    are reindexed densely in original-index order.
    """
    if not (1 <= k <= g.n_nodes):
        raise ValueError(f"k={k} out of range 1..{g.n_nodes}")
    degs = g.degrees()
    order = np.lexsort((np.arange(g.n_nodes), -degs))  # by -degree, then index
    keep = np.sort(order[:k])
    return induced_subgraph(g, keep)


def induced_subgraph(g: Graph, nodes: np.ndarray) -> Graph:
    """Induced subgraph on ``nodes`` (sorted original indices), reindexed densely."""
    nodes = np.asarray(nodes, dtype=np.int64)
    remap = {int(v): i for i, v in enumerate(nodes)}
    kept = [
        (remap[int(u)], remap[int(v)])
        for u, v in g.edges
        if int(u) in remap and int(v) in remap
    ]
    labels = None
    if g.labels is not None:
        labels = tuple(g.labels[int(v)] for v in nodes)
    return from_edges(len(nodes), kept, labels=labels)


def adjacency_matvec(g: Graph, x: np.ndarray) -> np.ndarray:
    """y = A x without materializing the adjacency matrix."""
    y = np.zeros(g.n_nodes)
    if g.n_edges:
        np.add.at(y, g.edges[:, 0], x[g.edges[:, 1]])
        np.add.at(y, g.edges[:, 1], x[g.edges[:, 0]])
    return y


def spectral_radius(g: Graph, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Largest adjacency eigenvalue via power iteration.

    Starts from the all-ones vector and stops when successive Rayleigh
    quotients differ by less than ``tol`` (relative).  The iteration runs
    on A + I so that bipartite graphs (where -lambda_1 is also an
    eigenvalue) cannot stall the quotient at a spurious value; the
    reported quotient is of A itself.
    """
    if g.n_nodes == 0 or g.n_edges == 0:
        raise ValueError("spectral radius undefined for an edgeless graph")
    x = np.ones(g.n_nodes)
    lam_old = np.inf
    for _ in range(max_iter):
        ax = adjacency_matvec(g, x)
        lam = float(x @ ax) / float(x @ x)
        if abs(lam - lam_old) < tol * max(1.0, abs(lam)):
            return lam
        lam_old = lam
        x = ax + x  # shifted update (A + I) x
        x /= np.linalg.norm(x)
    raise PowerIterationError(f"no convergence after {max_iter} iterations (tol={tol})")


def epidemic_threshold(g: Graph) -> float:
    """Mean-field epidemic threshold 1 / lambda_1(A)."""
    return 1.0 / spectral_radius(g)


def component_count(g: Graph) -> int:
    """Number of connected components (isolated nodes count as components)."""
    return len(connected_components(g))


def connected_components(g: Graph) -> list[np.ndarray]:
    """Connected components as sorted index arrays, largest-first order by first node."""
    seen = np.zeros(g.n_nodes, dtype=bool)
    comps = []
    for start in range(g.n_nodes):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        comp = []
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in g.adjacency[u]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(int(v))
        comps.append(np.array(sorted(comp), dtype=np.int64))
    return comps


def generate_synthetic(kind: str, n: int, *, p: float | None = None,
                       m: int | None = None, seed: int | None = None) -> Graph:
    """Deterministic synthetic graphs for fixtures and sweeps.

    Parameters
    ----------
    kind : one of 'erdos-renyi', 'barabasi-albert', 'complete', 'star', 'ring'
    n : node count
    p : edge probability (erdos-renyi)
    m : attachment count (barabasi-albert)
    seed : RNG seed for the random kinds
    """
    if kind not in _SYNTHETIC_KINDS:
        raise ValueError(f"unknown kind {kind!r}, expected one of {_SYNTHETIC_KINDS}")
    if n < 1:
        raise ValueError("n must be >= 1")
    if kind == "complete":
        return from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])
    if kind == "star":
        if n < 2:
            raise ValueError("star needs n >= 2")
        return from_edges(n, [(0, i) for i in range(1, n)])
    if kind == "ring":
        if n < 3:
            raise ValueError("ring needs n >= 3")
        return from_edges(n, [(i, (i + 1) % n) for i in range(n)])
    if kind == "erdos-renyi":
        if p is None or not (0.0 <= p <= 1.0):
            raise ValueError("erdos-renyi needs edge probability p in [0,1]")
        rng = np.random.default_rng(seed)
        iu, ju = np.triu_indices(n, k=1)
        mask = rng.random(len(iu)) < p
        return from_edges(n, zip(iu[mask], ju[mask]))
    # barabasi-albert: preferential attachment, seeded from an (m+1)-clique
    if m is None or m < 1:
        raise ValueError("barabasi-albert needs attachment m >= 1")
    if n < m + 1:
        raise ValueError("barabasi-albert needs n >= m + 1")
    rng = np.random.default_rng(seed)
    edges = [(i, j) for i in range(m + 1) for j in range(i + 1, m + 1)]
    # repeated-node list: each edge endpoint appears once per incident edge
    targets = [x for e in edges for x in e]
    for new in range(m + 1, n):
        chosen = set()
        while len(chosen) < m:
            chosen.add(targets[rng.integers(len(targets))])
        for t in chosen:
            edges.append((t, new))
            targets.append(t)
            targets.append(new)
    return from_edges(n, edges)


def _read_lines(source):
    """Yield (lineno, stripped_line) for non-comment, non-blank lines."""
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, io.IOBase) or hasattr(source, "read"):
        data = source.read()
        text = data.decode("utf-8") if isinstance(data, bytes) else data
    else:
        with open(source, "r", encoding="utf-8") as f:
            text = f.read()
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        out.append((lineno, s))
    return out


def _is_int(s: str) -> bool:
    try:
        int(s)
        return True
    except ValueError:
        return False
