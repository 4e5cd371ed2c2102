"""Connectivity and chemical geometry of a realized configuration.

A ``ClusterMap`` is a set of labeled vertices plus the open lattice edges that
connect them.  Both simulation routes produce one; every query here only sees
the labels and the edge list.  Distances count lattice edges.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

from .lattice import OUTSIDE, BoxSpec, LatticeError, Vertex, VertexRegion, linf

UNLABELED = -1
DISTANCE_UNIT = "lattice-edge"


class MarginError(ValueError):
    """An observable reaches too close to the edge of the simulated region."""


class RegionError(ValueError):
    """A query vertex lies outside the configuration's region."""


@njit(cache=True)
def _find(parent, a):
    root = a
    while parent[root] != root:
        root = parent[root]
    while parent[a] != root:
        nxt = parent[a]
        parent[a] = root
        a = nxt
    return root


@njit(cache=True)
def union_find_labels(n, active, edges):
    """Component labels over ``active`` vertices joined by ``edges``.

    Edges touching an inactive vertex are ignored.  The label of a component is
    its smallest vertex index; inactive vertices get -1.
    """
    parent = np.arange(n)
    for e in range(edges.shape[0]):
        a = edges[e, 0]
        b = edges[e, 1]
        if a < 0 or b < 0 or not active[a] or not active[b]:
            continue
        ra = _find(parent, a)
        rb = _find(parent, b)
        if ra != rb:
            if ra < rb:
                parent[rb] = ra
            else:
                parent[ra] = rb
    labels = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        if active[i]:
            labels[i] = _find(parent, i)
    return labels


@njit(cache=True)
def _csr(n, edges, keep):
    deg = np.zeros(n + 1, dtype=np.int64)
    for e in range(edges.shape[0]):
        if keep[e]:
            deg[edges[e, 0] + 1] += 1
            deg[edges[e, 1] + 1] += 1
    for i in range(n):
        deg[i + 1] += deg[i]
    fill = deg[:-1].copy()
    nbr = np.empty(deg[n], dtype=np.int64)
    for e in range(edges.shape[0]):
        if keep[e]:
            a = edges[e, 0]
            b = edges[e, 1]
            nbr[fill[a]] = b
            fill[a] += 1
            nbr[fill[b]] = a
            fill[b] += 1
    return deg, nbr


@njit(cache=True)
def bfs_depths(indptr, nbr, source, cap):
    """Edge-count distances from ``source``; -1 where unreached or beyond ``cap`` (cap < 0: none)."""
    n = indptr.shape[0] - 1
    dist = np.full(n, -1, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    dist[source] = 0
    queue[0] = source
    head, tail = 0, 1
    while head < tail:
        u = queue[head]
        head += 1
        if cap >= 0 and dist[u] >= cap:
            continue
        for p in range(indptr[u], indptr[u + 1]):
            v = nbr[p]
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue[tail] = v
                tail += 1
    return dist


@dataclass
class ClusterMap:
    """Cluster labels over a region plus the open edges that induced them.

    ``labels[i]`` is the smallest index in vertex ``i``'s cluster, or -1 if ``i``
    belongs to no cluster.  ``edges`` holds open edges as index pairs;
    ``edge_kind`` optionally tags each edge (0 traversed by a loop, 1 glued).
    """

    region: BoxSpec | VertexRegion
    labels: np.ndarray
    edges: np.ndarray
    edge_kind: np.ndarray | None = None
    loop_members: dict[int, list[int]] | None = None
    meta: dict = field(default_factory=dict)
    _adj: tuple | None = field(default=None, repr=False)

    @classmethod
    def from_edges(cls, region, active: np.ndarray, edges: np.ndarray, **kw) -> "ClusterMap":
        active = np.asarray(active, dtype=np.bool_)
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        keep = active[edges[:, 0]] & active[edges[:, 1]] if len(edges) else np.zeros(0, dtype=bool)
        edges = edges[keep]
        kind = kw.pop("edge_kind", None)
        if kind is not None:
            kind = np.asarray(kind)[keep]
        labels = union_find_labels(region.size, active, edges)
        return cls(region, labels, edges, edge_kind=kind, **kw)

    @property
    def size(self) -> int:
        return self.region.size

    def adjacency(self) -> tuple[np.ndarray, np.ndarray]:
        if self._adj is None:
            self._adj = _csr(self.size, self.edges, np.ones(len(self.edges), dtype=np.bool_))
        return self._adj

    def idx(self, v: Sequence[int]) -> int:
        i = self.region.index(v)
        if i == OUTSIDE:
            raise RegionError(f"vertex {tuple(v)} is outside the configuration region")
        return i

    def cluster_of(self, v: Sequence[int]) -> np.ndarray:
        lab = self.labels[self.idx(v)]
        if lab < 0:
            return np.zeros(0, dtype=np.int64)
        return np.flatnonzero(self.labels == lab)

    def n_clusters(self) -> int:
        lab = self.labels[self.labels >= 0]
        return int(len(np.unique(lab)))

    def labels_by_bfs(self) -> np.ndarray:
        """Labels recomputed by breadth-first search, for cross-checking union-find."""
        indptr, nbr = self.adjacency()
        out = np.full(self.size, UNLABELED, dtype=np.int64)
        for i in range(self.size):
            if self.labels[i] >= 0 and out[i] < 0:
                dist = bfs_depths(indptr, nbr, i, -1)
                out[dist >= 0] = i
        return out


def _coords(region) -> np.ndarray:
    return region.coords


def _frame(region) -> BoxSpec | None:
    return region if isinstance(region, BoxSpec) else getattr(region, "frame", None)


def check_margin(region, radius: int, center: Vertex | None = None) -> None:
    """Require ``B(center, radius)`` to lie within the inner half of the region's frame."""
    frame = _frame(region)
    if frame is None:
        return
    center = center or frame.center
    if 2 * (linf(center, frame.center) + radius) > frame.radius:
        raise MarginError(
            f"B({center}, {radius}) leaves the inner half of the radius-{frame.radius} box; "
            "use a larger box"
        )


def connected(cmap: ClusterMap, x: Sequence[int], y: Sequence[int]) -> bool:
    a, b = cmap.labels[cmap.idx(x)], cmap.labels[cmap.idx(y)]
    return bool(a >= 0 and a == b)


def restricted_labels(cmap: ClusterMap, box: BoxSpec) -> np.ndarray:
    """Labels using only open edges with both endpoints in ``box``."""
    rel = np.max(np.abs(_coords(cmap.region) - np.asarray(box.center)), axis=1)
    inside = rel <= box.radius
    active = (cmap.labels >= 0) & inside
    return union_find_labels(cmap.size, active, cmap.edges)


def connected_within(cmap: ClusterMap, box: BoxSpec, x: Sequence[int], y: Sequence[int]) -> bool:
    frame = _frame(cmap.region)
    if frame is not None and not box.inside(frame):
        raise RegionError(f"sub-box B({box.center}, {box.radius}) is not inside the region")
    if not (box.contains(x) and box.contains(y)):
        return False
    lab = restricted_labels(cmap, box)
    a, b = lab[cmap.idx(x)], lab[cmap.idx(y)]
    return bool(a >= 0 and a == b)


def one_arm(cmap: ClusterMap, r: int, center: Vertex | None = None, margin: bool = True) -> bool:
    """Whether ``center`` (default the origin) is connected to the boundary of ``B(center, r)``."""
    center = center or (0,) * cmap.region.d
    if margin:
        check_margin(cmap.region, r, center)
    members = cmap.cluster_of(center)
    if len(members) == 0:
        return False
    reach = np.max(np.abs(_coords(cmap.region)[members] - np.asarray(center)), axis=1).max()
    return bool(reach >= r)


def chemical_distance(cmap: ClusterMap, x: Sequence[int], y: Sequence[int], cap: int | None = None) -> int | None:
    """Shortest open-path length in lattice edges, or None if unreachable within ``cap``."""
    i, j = cmap.idx(x), cmap.idx(y)
    if cmap.labels[i] < 0 or cmap.labels[i] != cmap.labels[j]:
        return None
    indptr, nbr = cmap.adjacency()
    dist = bfs_depths(indptr, nbr, i, -1 if cap is None else int(cap))
    return None if dist[j] < 0 else int(dist[j])


@dataclass(frozen=True)
class IntrinsicBall:
    center: Vertex
    radius: int
    members: frozenset
    sphere: frozenset

    def __contains__(self, v) -> bool:
        return tuple(v) in self.members


def intrinsic_ball(cmap: ClusterMap, center: Sequence[int], r: int) -> IntrinsicBall:
    """Vertices within chemical distance ``r`` of ``center`` and those at exactly ``r``."""
    i = cmap.idx(center)
    center = tuple(int(c) for c in center)
    if cmap.labels[i] < 0:
        return IntrinsicBall(center, r, frozenset(), frozenset())
    indptr, nbr = cmap.adjacency()
    dist = bfs_depths(indptr, nbr, i, int(r))
    verts = [cmap.region.vertex(int(k)) for k in np.flatnonzero(dist >= 0)]
    sphere = [cmap.region.vertex(int(k)) for k in np.flatnonzero(dist == r)]
    return IntrinsicBall(center, r, frozenset(verts), frozenset(sphere))


def export_labels_csv(cmap: ClusterMap, path: str | Path, max_vertices: int = 20_000, force: bool = False) -> Path:
    """Per-vertex label CSV; refuses regions above ``max_vertices`` unless ``force``."""
    if cmap.size > max_vertices and not force:
        raise LatticeError(f"{cmap.size} vertices exceeds the export limit {max_vertices}; pass force=True")
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        d = cmap.region.d
        w.writerow([f"x{i}" for i in range(d)] + ["label"])
        for i in range(cmap.size):
            w.writerow(list(cmap.region.vertex(i)) + [int(cmap.labels[i])])
    return path
