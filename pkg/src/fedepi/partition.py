"""Client partitioning of the contact network.

Three strategies: contiguous index blocks, spectral clustering on the
unnormalized Laplacian, and recursive Kernighan-Lin bisection.  Clients
receive induced subgraphs; cross-client edges are dropped.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .netgraph import Graph, induced_subgraph

__all__ = [
    "PartitionAssignment", "even_by_index", "spectral_clustering",
    "kernighan_lin", "induced_subnetworks", "edge_cut",
    "save_partition", "load_partition",
]

METHODS = ("even-index", "spectral", "kernighan-lin")


@dataclass(frozen=True)
class PartitionAssignment:
    """Per-node client index in 0..M-1, every client non-empty."""

    assignment: np.ndarray
    method: str
    M: int

    def __post_init__(self):
        a = np.ascontiguousarray(self.assignment, dtype=np.int64)
        object.__setattr__(self, "assignment", a)
        if a.ndim != 1:
            raise ValueError("assignment must be one-dimensional")
        if self.M < 1:
            raise ValueError("M must be >= 1")
        counts = np.bincount(a, minlength=self.M)
        if a.size and (a.min() < 0 or a.max() >= self.M):
            raise ValueError("client index out of range")
        if np.any(counts == 0):
            raise ValueError("every client must be non-empty")

    def client_nodes(self, m: int) -> np.ndarray:
        return np.nonzero(self.assignment == m)[0]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.M)


def _check_m(g: Graph, M: int) -> None:
    if not (2 <= M <= g.n_nodes):
        raise ValueError(f"M={M} out of range 2..{g.n_nodes}")


def _block_sizes(n: int, M: int) -> np.ndarray:
    """First n % M clients get ceil(n/M) nodes, the rest floor(n/M)."""
    base, extra = divmod(n, M)
    return np.array([base + (1 if i < extra else 0) for i in range(M)],
                    dtype=np.int64)


def even_by_index(g: Graph, M: int) -> PartitionAssignment:
    """Contiguous index blocks of near-equal size."""
    _check_m(g, M)
    sizes = _block_sizes(g.n_nodes, M)
    assignment = np.repeat(np.arange(M, dtype=np.int64), sizes)
    return PartitionAssignment(assignment=assignment, method="even-index", M=M)


# ---------------------------------------------------------------------------
# spectral clustering
# ---------------------------------------------------------------------------

def _laplacian_embedding(g: Graph, M: int) -> np.ndarray:
    """Rows = nodes embedded by the M smallest eigenvectors of L = D - A."""
    n = g.n_nodes
    if n <= 2000:
        from scipy.linalg import eigh
        L = np.zeros((n, n))
        for u, v in g.edges:
            L[u, v] -= 1.0
            L[v, u] -= 1.0
            L[u, u] += 1.0
            L[v, v] += 1.0
        _, vecs = eigh(L, subset_by_index=[0, M - 1])
        return vecs
    from scipy.sparse import coo_matrix
    from scipy.sparse.linalg import eigsh
    u, v = g.edges[:, 0], g.edges[:, 1]
    deg = g.degrees().astype(np.float64)
    rows = np.concatenate([u, v, np.arange(n)])
    cols = np.concatenate([v, u, np.arange(n)])
    vals = np.concatenate([-np.ones(2 * len(u)), deg])
    L = coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    _, vecs = eigsh(L, k=M, sigma=-1e-3, which="LM")
    return vecs


def _kmeans_pp_init(x: np.ndarray, k: int, rng) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j] = x[rng.integers(n)]
        else:
            centers[j] = x[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(axis=1))
    return centers


def _lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int = 300):
    k = centers.shape[0]
    labels = np.zeros(x.shape[0], np.int64)
    for it in range(max_iter):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        # repair empty clusters: steal the farthest point of the largest one
        counts = np.bincount(new_labels, minlength=k)
        while np.any(counts == 0):
            empty = int(np.argmin(counts))
            big = int(np.argmax(counts))
            members = np.nonzero(new_labels == big)[0]
            far = members[d2[members, big].argmax()]
            new_labels[far] = empty
            counts = np.bincount(new_labels, minlength=k)
        if it > 0 and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            centers[j] = x[labels == j].mean(axis=0)
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    inertia = float(d2[np.arange(x.shape[0]), labels].sum())
    return labels, inertia


def spectral_clustering(g: Graph, M: int, seed: int,
                        restarts: int = 100) -> PartitionAssignment:
    """Laplacian eigenmap embedding followed by seeded k-means.

    Nodes are embedded with the M smallest-eigenvalue eigenvectors of
    L = D - A (dense solve below 2000 nodes, shift-invert Lanczos above),
    then clustered with k-means++ initialized Lloyd iterations; the best
    of up to ``restarts`` runs by inertia wins.  Empty clusters are
    repaired by reassigning the farthest point of the largest cluster.
    """
    _check_m(g, M)
    x = _laplacian_embedding(g, M)
    rng = np.random.default_rng(seed)
    best = None
    best_inertia = np.inf
    for _ in range(restarts):
        centers = _kmeans_pp_init(x, M, rng)
        labels, inertia = _lloyd(x, centers.copy())
        if inertia < best_inertia - 1e-12:
            best, best_inertia = labels, inertia
        if best_inertia <= 1e-24:       # exact clustering found, stop early
            break
    return PartitionAssignment(assignment=best, method="spectral", M=M)


# ---------------------------------------------------------------------------
# Kernighan-Lin recursive bisection
# ---------------------------------------------------------------------------

def _kl_pass(A: np.ndarray, side: np.ndarray):
    """One KL swap pass; mutates ``side`` if a positive-gain prefix exists.

    ``A`` is the dense 0/1 adjacency of the local subproblem.  Returns the
    total applied gain (0 when the pass found no improvement).
    """
    n = side.shape[0]
    # D = external - internal degree
    same = (side[:, None] == side[None, :])
    D = (A * ~same).sum(axis=1) - (A * same).sum(axis=1)
    locked = np.zeros(n, bool)
    pairs = []
    gains = []
    n_pairs = min(int((~side).sum()), int(side.sum()))
    for _ in range(n_pairs):
        ia = np.nonzero(~side & ~locked)[0]
        ib = np.nonzero(side & ~locked)[0]
        G = D[ia][:, None] + D[ib][None, :] - 2.0 * A[np.ix_(ia, ib)]
        k = int(G.argmax())
        a, b = int(ia[k // len(ib)]), int(ib[k % len(ib)])
        pairs.append((a, b))
        gains.append(float(G.flat[k]))
        locked[a] = locked[b] = True
        # update D as if (a, b) swapped
        free = ~locked
        Dadj = 2.0 * A[:, a] - 2.0 * A[:, b]
        D[free & ~side] += Dadj[free & ~side]
        D[free & side] -= Dadj[free & side]
    if not gains:
        return 0.0
    prefix = np.cumsum(gains)
    k_best = int(prefix.argmax())
    if prefix[k_best] <= 1e-12:
        return 0.0
    for a, b in pairs[:k_best + 1]:
        side[a], side[b] = True, False
    return float(prefix[k_best])


def _cut_value(A: np.ndarray, side: np.ndarray) -> float:
    return float(A[np.ix_(~side, side)].sum())


def _kl_bisect(A: np.ndarray, n_left: int, rng):
    """Bisect into sizes (n_left, n - n_left): seeded random start + KL passes.

    Returns (side bool array with True = right part, initial cut, final cut).
    """
    n = A.shape[0]
    side = np.ones(n, bool)
    left = rng.permutation(n)[:n_left]
    side[left] = False
    cut0 = _cut_value(A, side)
    while _kl_pass(A, side) > 0:
        pass
    return side, cut0, _cut_value(A, side)


def kernighan_lin(g: Graph, M: int, seed: int) -> PartitionAssignment:
    """Recursive KL bisection into M near-equal clients.

    Each level splits the client range in half with node-count targets
    proportional to how many final clients land on each side, starts from
    a seeded random balanced split, and applies gain-ordered swap passes
    until no pass improves the cut.
    """
    _check_m(g, M)
    sizes = _block_sizes(g.n_nodes, M)
    rng = np.random.default_rng(seed)
    n = g.n_nodes
    Adense = np.zeros((n, n), np.float64)
    for u, v in g.edges:
        Adense[u, v] = Adense[v, u] = 1.0
    assignment = np.empty(n, np.int64)

    def recurse(nodes: np.ndarray, lo: int, hi: int) -> None:
        if hi - lo == 1:
            assignment[nodes] = lo
            return
        mid = (lo + hi + 1) // 2
        n_left = int(sizes[lo:mid].sum())
        side, _, _ = _kl_bisect(Adense[np.ix_(nodes, nodes)], n_left, rng)
        recurse(nodes[~side], lo, mid)
        recurse(nodes[side], mid, hi)

    recurse(np.arange(n), 0, M)
    return PartitionAssignment(assignment=assignment, method="kernighan-lin", M=M)


# ---------------------------------------------------------------------------
# derived artifacts
# ---------------------------------------------------------------------------

def induced_subnetworks(g: Graph, p: PartitionAssignment):
    """Per-client (induced subgraph, global node index array).

    Local node i of client m corresponds to global node ``node_map[i]``;
    edges crossing clients are dropped.
    """
    if p.assignment.shape[0] != g.n_nodes:
        raise ValueError("assignment length does not match the graph")
    out = []
    for m in range(p.M):
        nodes = p.client_nodes(m)
        out.append((induced_subgraph(g, nodes), nodes))
    return out


def edge_cut(g: Graph, p: PartitionAssignment) -> int:
    """Number of edges whose endpoints land in different clients."""
    if p.assignment.shape[0] != g.n_nodes:
        raise ValueError("assignment length does not match the graph")
    a = p.assignment
    if g.n_edges == 0:
        return 0
    return int((a[g.edges[:, 0]] != a[g.edges[:, 1]]).sum())


def save_partition(p: PartitionAssignment, dest) -> None:
    """Write ``node,client`` CSV rows (with header)."""
    own = not hasattr(dest, "write")
    fh = open(dest, "w", newline="") if own else dest
    try:
        w = csv.writer(fh)
        w.writerow(["node", "client"])
        for i, c in enumerate(p.assignment):
            w.writerow([i, int(c)])
    finally:
        if own:
            fh.close()


def load_partition(source, method: str = "file") -> PartitionAssignment:
    """Read a ``node,client`` CSV written by :func:`save_partition`."""
    own = not hasattr(source, "read")
    fh = open(source, "r", newline="") if own else source
    try:
        rows = list(csv.reader(fh))
    finally:
        if own:
            fh.close()
    if rows and rows[0][:2] == ["node", "client"]:
        rows = rows[1:]
    if not rows:
        raise ValueError("partition file has no assignments")
    pairs = [(int(r[0]), int(r[1])) for r in rows if r]
    n = max(i for i, _ in pairs) + 1
    assignment = np.full(n, -1, np.int64)
    for i, c in pairs:
        assignment[i] = c
    if np.any(assignment < 0):
        raise ValueError("partition file leaves nodes unassigned")
    return PartitionAssignment(assignment=assignment, method=method,
                               M=int(assignment.max()) + 1)
