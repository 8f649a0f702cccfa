"""Graph containers, normalization and degree grouping."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

__all__ = [
    "RawGraph",
    "NormalizedAdjacency",
    "DegreeGrouping",
    "build_normalized_adjacency",
    "infinity_norm",
    "group_by_degree",
    "grouping_from_labels",
    "generate_two_group_graph",
    "read_edge_list",
    "write_edge_list",
    "write_grouping_csv",
    "read_grouping_csv",
    "values_by_label",
]


@dataclass(frozen=True, eq=False)
class RawGraph:
    """Undirected, unweighted graph on nodes ``0..n_nodes-1``.

    Edges are stored canonically as an ``(M, 2)`` int array with ``i < j``,
    sorted and deduplicated. Explicit self-loops are dropped because
    normalization adds exactly one per node. ``planted`` optionally carries
    the generator's group label per node.
    """

    n_nodes: int
    edges: np.ndarray
    planted: np.ndarray | None = None

    def __post_init__(self):
        if self.n_nodes < 0:
            raise ValueError("n_nodes must be non-negative")
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= self.n_nodes):
            raise ValueError("edge endpoint out of range [0, n_nodes)")
        e = np.sort(e, axis=1)
        e = e[e[:, 0] != e[:, 1]]
        e = np.unique(e, axis=0) if e.size else e.reshape(0, 2)
        object.__setattr__(self, "edges", e)
        if self.planted is not None:
            pl = np.asarray(self.planted, dtype=np.int64)
            if pl.shape != (self.n_nodes,):
                raise ValueError("planted labels must have one entry per node")
            object.__setattr__(self, "planted", pl)

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    def degrees(self) -> np.ndarray:
        """Neighbor counts, self excluded."""
        deg = np.zeros(self.n_nodes, dtype=np.int64)
        np.add.at(deg, self.edges[:, 0], 1)
        np.add.at(deg, self.edges[:, 1], 1)
        return deg


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    """``A = D^{-1/2} (Adj + I) D^{-1/2}`` in CSR form with cached row sums."""

    matrix: sp.csr_matrix
    degrees: np.ndarray
    row_sums: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def inf_norm(self) -> float:
        return float(self.row_sums.max()) if self.n else 0.0

    @property
    def max_degree(self) -> int:
        return int(self.degrees.max()) if self.n else 0

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


@dataclass(frozen=True, eq=False)
class DegreeGrouping:
    """Partition of nodes into ``L`` groups ordered by ascending degree scale."""

    membership: np.ndarray
    d: np.ndarray
    sizes: np.ndarray

    def __post_init__(self):
        mem = np.asarray(self.membership, dtype=np.int64)
        object.__setattr__(self, "membership", mem)
        object.__setattr__(self, "d", np.asarray(self.d, dtype=np.float64))
        object.__setattr__(self, "sizes", np.asarray(self.sizes, dtype=np.int64))
        if mem.size and (mem.min() < 0 or mem.max() >= self.L):
            raise ValueError("group index out of range")
        if not np.array_equal(np.bincount(mem, minlength=self.L), self.sizes):
            raise ValueError("sizes disagree with membership")
        if np.any(np.diff(self.d) <= 0):
            raise ValueError("group degree scales must be strictly increasing")

    @property
    def L(self) -> int:
        return int(self.d.shape[0])

    @property
    def n(self) -> int:
        return int(self.membership.shape[0])

    @cached_property
    def _members(self) -> tuple:
        order = np.argsort(self.membership, kind="stable")
        return tuple(np.split(order, np.cumsum(self.sizes)[:-1]))

    def members(self, l: int) -> np.ndarray:
        """Node ids of group ``l`` in ascending order."""
        return self._members[l]

    def expand(self, per_group) -> np.ndarray:
        """Broadcast a length-``L`` vector to a per-node vector."""
        v = np.asarray(per_group, dtype=np.float64)
        if v.shape != (self.L,):
            raise ValueError(f"expected {self.L} per-group values, got shape {v.shape}")
        return v[self.membership]


def build_normalized_adjacency(g: RawGraph) -> NormalizedAdjacency:
    n = g.n_nodes
    if n == 0:
        raise ValueError("empty graph")
    e = g.edges
    rows = np.concatenate([e[:, 0], e[:, 1], np.arange(n)])
    cols = np.concatenate([e[:, 1], e[:, 0], np.arange(n)])
    adj = sp.csr_matrix((np.ones(rows.shape[0]), (rows, cols)), shape=(n, n))
    adj.sort_indices()
    deg_tilde = np.asarray(adj.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg_tilde)
    a = sp.diags(inv_sqrt) @ adj @ sp.diags(inv_sqrt)
    a = sp.csr_matrix(a)
    a.sort_indices()
    return NormalizedAdjacency(
        matrix=a,
        degrees=(deg_tilde - 1).astype(np.int64),
        row_sums=np.asarray(abs(a).sum(axis=1)).ravel(),
    )


def infinity_norm(m) -> float:
    """Maximum absolute row sum of a dense or sparse matrix."""
    if isinstance(m, (NormalizedAdjacency,)):
        m = m.matrix
    elif hasattr(m, "matrix") and sp.issparse(getattr(m, "matrix")):
        m = m.matrix
    if sp.issparse(m):
        if m.shape[0] == 0:
            return 0.0
        return float(np.asarray(abs(m).sum(axis=1)).max())
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if m.shape[0] == 0:
        return 0.0
    return float(np.abs(m).sum(axis=1).max())


def _grouping_from_assignment(labels: np.ndarray, deg: np.ndarray, L: int) -> DegreeGrouping:
    d = np.array([np.median(deg[labels == l]) for l in range(L)], dtype=np.float64)
    return DegreeGrouping(membership=labels, d=d, sizes=np.bincount(labels, minlength=L))


def group_by_degree(g: RawGraph, L: int, max_iter: int = 100) -> DegreeGrouping:
    """Cluster nodes into ``L`` groups with 1-D k-means on their degrees.

    Centers start at evenly spaced quantiles of the distinct degrees, so the
    result is deterministic. Each group's ``d_l`` is its median degree.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    deg = g.degrees()
    distinct = np.unique(deg)
    if L > distinct.size:
        raise ValueError(f"L={L} exceeds the number of distinct degrees ({distinct.size})")
    ux = distinct.astype(np.float64)
    # 1-D k-means always yields contiguous intervals, so work on distinct values.
    counts = np.array([np.count_nonzero(deg == v) for v in distinct], dtype=np.float64)
    centers = ux[np.round(np.linspace(0, ux.size - 1, L)).astype(int)]
    assign = None
    for _ in range(max_iter):
        new = np.argmin(np.abs(ux[:, None] - centers[None, :]), axis=1)
        for l in range(L):
            if not np.any(new == l):
                # keep groups non-empty: steal the value nearest the dead center
                free = np.flatnonzero(np.bincount(new, minlength=L)[new] > 1)
                j = free[np.argmin(np.abs(ux[free] - centers[l]))]
                new[j] = l
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for l in range(L):
            sel = assign == l
            centers[l] = np.average(ux[sel], weights=counts[sel])
    order = np.argsort(centers, kind="stable")
    rank = np.empty(L, dtype=np.int64)
    rank[order] = np.arange(L)
    value_group = rank[assign]
    labels = value_group[np.searchsorted(distinct, deg)]
    return _grouping_from_assignment(labels, deg, L)


def grouping_from_labels(g: RawGraph, labels=None) -> DegreeGrouping:
    """Grouping from explicit labels (defaults to the generator's planted ones).

    Groups are re-indexed by ascending median degree.
    """
    if labels is None:
        labels = g.planted
    if labels is None:
        raise ValueError("graph carries no planted labels")
    labels = np.asarray(labels, dtype=np.int64)
    deg = g.degrees()
    uniq = np.unique(labels)
    med = np.array([np.median(deg[labels == u]) for u in uniq])
    order = np.argsort(med, kind="stable")
    remap = np.empty(uniq.max() + 1, dtype=np.int64)
    remap[uniq[order]] = np.arange(uniq.size)
    return _grouping_from_assignment(remap[labels], deg, uniq.size)


def generate_two_group_graph(N1: int, N2: int, d1: float, d2: float, seed: int) -> RawGraph:
    """Random graph with two planted degree groups.

    Every pair ``(i, j)`` is an edge independently with probability
    ``min(1, w_i w_j / sum(w))`` where ``w`` is the target degree of the
    node's group, so expected degrees are close to ``d1`` / ``d2``.
    Group 1 holds nodes ``0..N1-1``; ``planted`` records 0/1 labels.
    """
    if N1 < 1 or N2 < 1:
        raise ValueError("group sizes must be >= 1")
    n = N1 + N2
    for dl in (d1, d2):
        if dl < 0 or dl >= n:
            raise ValueError(f"infeasible degree target {dl} for {n} nodes")
    w = np.concatenate([np.full(N1, float(d1)), np.full(N2, float(d2))])
    planted = np.concatenate([np.zeros(N1, np.int64), np.ones(N2, np.int64)])
    total = w.sum()
    if total == 0:
        return RawGraph(n, np.empty((0, 2), np.int64), planted)
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    prob = np.minimum(1.0, w[iu] * w[ju] / total)
    keep = rng.random(iu.shape[0]) < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    return RawGraph(n, edges, planted)


def read_edge_list(path) -> RawGraph:
    """Read ``N M`` header followed by ``M`` lines of ``i j``."""
    lines = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty edge list")
    n, m = int(lines[0][0]), int(lines[0][1])
    body = lines[1:]
    if len(body) != m:
        raise ValueError(f"{path}: header says {m} edges, found {len(body)}")
    edges = np.array([[int(a), int(b)] for a, b, *_ in body], dtype=np.int64).reshape(-1, 2)
    return RawGraph(n, edges)


def write_edge_list(g: RawGraph, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{g.n_nodes} {g.n_edges}\n")
        for i, j in g.edges:
            fh.write(f"{i} {j}\n")


def write_grouping_csv(labels, degrees, path) -> None:
    """Write ``node,group,degree``; ``labels`` is a grouping or a label array."""
    if isinstance(labels, DegreeGrouping):
        labels = labels.membership
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "group", "degree"])
        for node, (grp, deg) in enumerate(zip(labels, degrees)):
            w.writerow([node, int(grp), int(deg)])


def read_grouping_csv(path) -> np.ndarray:
    """Group label per node from a ``node,group[,degree]`` CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "node" not in rows[0] or "group" not in rows[0]:
        raise ValueError(f"{path}: expected columns node,group")
    labels = np.full(len(rows), -1, dtype=np.int64)
    for r in rows:
        node = int(r["node"])
        if not 0 <= node < len(rows):
            raise ValueError(f"{path}: node id {node} out of range")
        labels[node] = int(r["group"])
    if np.any(labels < 0):
        raise ValueError(f"{path}: node ids must cover 0..N-1")
    return labels


def values_by_label(grouping: DegreeGrouping, labels, values) -> np.ndarray:
    """Reorder per-label values into the grouping's ascending-degree order.

    ``values[k]`` belongs to the nodes carrying label ``k`` (for generated
    graphs, the planted blocks: ``N1`` block first).
    """
    labels = np.asarray(labels, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size != grouping.L:
        raise ValueError(f"expected {grouping.L} per-group values, got {values.size}")
    out = np.full(grouping.L, np.nan)
    for k, v in enumerate(values):
        nodes = np.flatnonzero(labels == k)
        if nodes.size == 0:
            raise ValueError(f"no node carries label {k}")
        out[grouping.membership[nodes[0]]] = v
    if np.any(np.isnan(out)):
        raise ValueError("labels do not map one-to-one onto groups")
    return out
