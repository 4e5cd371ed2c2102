"""Glued-loop sequences along lattice paths.

A glued object is one of

* ``loop``: all fundamental loops with the same visited vertex set, covering
  every edge one of them traverses;
* ``edge``: an untraversed edge opened by the cable gluing, a two-vertex object;
* ``point``: the point loops at a vertex, covering that vertex only.

A sequence ``g_1 .. g_k`` covers a path ``x_0 .. x_n`` if the path splits into
consecutive segments ``[t_{i-1}, t_i]`` (``t_0 = 0``, ``t_k = n``, possibly of
zero length) with segment ``i`` inside ``g_i``, and the first and last members
are not edge objects.  Ties are always broken by smallest object id.
"""
from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .lattice import BoxSpec, Vertex, l1
from .loop_route import LoopSample, cable_gluing, lift_local_times, sample_loop_soup

KINDS = ("loop", "edge", "point")
MAX_EXACT_OBJECTS = 12
MAX_EXACT_VERTICES = 60


class ChainError(ValueError):
    pass


class LimitExceeded(ChainError):
    pass


def _edge(u: Vertex, v: Vertex) -> tuple[Vertex, Vertex]:
    return (u, v) if u <= v else (v, u)


@dataclass(frozen=True)
class LatticePath:
    vertices: tuple[Vertex, ...]

    def __post_init__(self):
        if not self.vertices:
            raise ChainError("empty path")
        for u, v in zip(self.vertices, self.vertices[1:]):
            if l1(u, v) != 1:
                raise ChainError(f"path steps from {u} to {v}, which are not adjacent")

    def __len__(self) -> int:
        return len(self.vertices) - 1

    @property
    def self_avoiding(self) -> bool:
        return len(set(self.vertices)) == len(self.vertices)

    def edge(self, i: int) -> tuple[Vertex, Vertex]:
        return _edge(self.vertices[i], self.vertices[i + 1])


@dataclass(frozen=True)
class GluedObject:
    id: int
    kind: str
    vertices: frozenset
    edges: frozenset
    loop_ids: tuple[int, ...] = ()

    def covers(self, path: LatticePath, a: int, b: int) -> bool:
        """Whether the segment ``x_a .. x_b`` lies inside this object."""
        if b == a:
            return path.vertices[a] in self.vertices
        return all(path.edge(i) in self.edges for i in range(a, b))


@dataclass(frozen=True)
class GluedChain:
    sequence: tuple[int, ...]
    breaks: tuple[int, ...] = ()

    @property
    def simple(self) -> bool:
        return len(set(self.sequence)) == len(self.sequence)

    @property
    def members(self) -> frozenset:
        return frozenset(self.sequence)

    def __len__(self) -> int:
        return len(self.sequence)


@dataclass
class GluedObjects:
    """The glued objects of one sample, indexed by id."""

    objects: dict[int, GluedObject]
    by_vertex: dict[Vertex, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.by_vertex:
            for g in self.objects.values():
                for v in g.vertices:
                    self.by_vertex.setdefault(v, []).append(g.id)
            for v in self.by_vertex:
                self.by_vertex[v].sort()

    def __getitem__(self, i: int) -> GluedObject:
        return self.objects[i]

    def __len__(self) -> int:
        return len(self.objects)

    def ids(self) -> list[int]:
        return sorted(self.objects)

    def subset(self, ids: Iterable[int]) -> "GluedObjects":
        return GluedObjects({i: self.objects[i] for i in ids})

    def point_object(self, v: Vertex) -> int | None:
        for i in self.by_vertex.get(v, []):
            if self.objects[i].kind == "point":
                return i
        return None

    def cluster_edges(self) -> set:
        out = set()
        for g in self.objects.values():
            out |= g.edges
        return out


def glued_objects(sample: LoopSample, cmap=None) -> GluedObjects:
    """Glued objects of a sample whose local times have been lifted.

    Ids: each loop object takes the smallest id among its loops; edge objects
    follow in edge order; point objects follow in vertex order, one for every
    vertex of the support with positive local time.
    """
    if sample.local_times is None:
        lift_local_times(sample)
    if cmap is None:
        cmap = cable_gluing(sample, signed=False)
    groups: dict[frozenset, list] = {}
    for lp in sample.loops():
        verts = lp.vertices()
        ring = verts + [verts[0]]
        edges = {_edge(u, v) for u, v in zip(ring, ring[1:])}
        key = frozenset(verts)
        g = groups.setdefault(key, [[], set()])
        g[0].append(lp.id)
        g[1] |= edges
    objs: dict[int, GluedObject] = {}
    for verts, (ids, edges) in groups.items():
        gid = min(ids)
        objs[gid] = GluedObject(gid, "loop", verts, frozenset(edges), tuple(sorted(ids)))
    base = (int(sample.ids.max()) + 1) if len(sample) else 0
    sup = sample.support
    kinds = cmap.edge_kind
    for j, (a, b) in enumerate(cmap.edges):
        if kinds[j] == 1:
            u, v = sup.vertex(int(a)), sup.vertex(int(b))
            objs[base + j] = GluedObject(base + j, "edge", frozenset((u, v)), frozenset([_edge(u, v)]))
    base += len(cmap.edges)
    L = sample.total_local_times
    for i in np.flatnonzero(L > 0):
        v = sup.vertex(int(i))
        objs[base + int(i)] = GluedObject(base + int(i), "point", frozenset([v]), frozenset())
    return GluedObjects(objs)


# ---------------------------------------------------------------------------
# predicates


def is_cover(path: LatticePath, chain: GluedChain, objs: GluedObjects) -> bool:
    """Whether ``chain`` is a legal sequence for ``path``."""
    seq = chain.sequence
    if not seq or any(i not in objs.objects for i in seq):
        return False
    if objs[seq[0]].kind == "edge" or objs[seq[-1]].kind == "edge":
        return False
    n = len(path)
    reach = {0}
    for gid in seq:
        g = objs[gid]
        nxt = set()
        for a in reach:
            for b in range(a, n + 1):
                if g.covers(path, a, b):
                    nxt.add(b)
                elif b > a:
                    break
        reach = nxt
        if not reach:
            return False
    return n in reach


def _shortest_cover(path: LatticePath, objs: GluedObjects, allowed: Sequence[int]) -> GluedChain | None:
    """A legal sequence from ``allowed`` with the fewest members, or ``None``.

    Breadth-first over (position, last member is an edge object); candidates are
    tried in id order so the result is deterministic.
    """
    n = len(path)
    allowed = sorted(allowed)
    start = (0, True)  # nothing placed yet behaves like "last was edge": must start with non-edge
    prev = {start: None}
    queue = deque([start])
    while queue:
        state = queue.popleft()
        pos, last_edge = state
        if pos == n and not last_edge and prev[state] is not None:
            seq, brk = [], []
            s = state
            while prev[s] is not None:
                s0, gid = prev[s]
                seq.append(gid)
                brk.append(s[0])
                s = s0
            return GluedChain(tuple(reversed(seq)), tuple(reversed(brk)))
        for gid in allowed:
            g = objs[gid]
            if pos == 0 and state == start and g.kind == "edge":
                continue
            for b in range(pos, n + 1):
                if not g.covers(path, pos, b):
                    if b > pos:
                        break
                    continue
                nxt = (b, g.kind == "edge")
                if nxt == state or nxt in prev:
                    continue
                prev[nxt] = (state, gid)
                queue.append(nxt)
    return None


def realizable(path: LatticePath, objs: GluedObjects, allowed: Iterable[int]) -> bool:
    """Whether ``path`` has a legal sequence using only ``allowed`` objects."""
    return _shortest_cover(path, objs, list(allowed)) is not None


# ---------------------------------------------------------------------------
# operations


def loop_sequence_of_path(path: LatticePath, objs: GluedObjects) -> GluedChain:
    """Greedy sequence: at each position take the object covering the longest next stretch.

    If the first or last member would be an edge object, the point object of
    the path's endpoint is placed before or after it.
    """
    n = len(path)
    seq: list[int] = []
    breaks: list[int] = []
    pos = 0
    if n == 0:
        ids = [i for i in objs.by_vertex.get(path.vertices[0], []) if objs[i].kind != "edge"]
        if not ids:
            raise ChainError(f"no object contains {path.vertices[0]}")
        return GluedChain((ids[0],), (0,))
    while pos < n:
        best, best_end = None, pos
        for gid in objs.by_vertex.get(path.vertices[pos], []):
            g = objs[gid]
            end = pos
            while end < n and path.edge(end) in g.edges:
                end += 1
            if end > best_end:
                best, best_end = gid, end
        if best is None:
            raise ChainError(f"edge {path.edge(pos)} at position {pos} is not covered by any glued object")
        seq.append(best)
        breaks.append(best_end)
        pos = best_end
    for end, v in ((0, path.vertices[0]), (-1, path.vertices[-1])):
        if objs[seq[end]].kind == "edge":
            p = objs.point_object(v)
            if p is None:
                raise ChainError(f"endpoint {v} lies in no loop or point object")
            if end == 0:
                seq.insert(0, p)
                breaks.insert(0, 0)
            else:
                seq.append(p)
                breaks.append(n)
    chain = GluedChain(tuple(seq), tuple(breaks))
    assert is_cover(path, chain, objs)
    return chain


def minimal_sequence(path: LatticePath, chain: GluedChain, objs: GluedObjects) -> GluedChain:
    """Drop members one at a time, in sequence order, while the path stays coverable.

    Coverability is monotone in the object set, so one pass leaves a set from
    which no single member can be removed.  The result has at most
    ``3 |path|`` members when the path has an edge.
    """
    if not is_cover(path, chain, objs):
        raise ChainError("input chain is not a legal sequence for the path")
    keep = list(dict.fromkeys(chain.sequence))
    for gid in list(keep):
        trial = [i for i in keep if i != gid]
        if trial and realizable(path, objs, trial):
            keep = trial
    out = _shortest_cover(path, objs, keep)
    assert out is not None and out.members == frozenset(keep)
    if len(path) >= 1:
        assert len(out.members) <= 3 * len(path), "minimal set exceeds three times the path length"
    return out


def is_minimal(path: LatticePath, chain: GluedChain, objs: GluedObjects) -> bool:
    members = sorted(chain.members)
    return all(not realizable(path, objs, [i for i in members if i != g]) for g in members)


def intersection_graph(objs: GluedObjects, ids: Iterable[int]) -> dict[int, list[int]]:
    ids = sorted(ids)
    adj: dict[int, list[int]] = {i: [] for i in ids}
    for a, b in itertools.combinations(ids, 2):
        if objs[a].vertices & objs[b].vertices:
            adj[a].append(b)
            adj[b].append(a)
    return adj


def _touching(objs: GluedObjects, ids: Iterable[int], S: frozenset) -> list[int]:
    return [i for i in sorted(ids) if objs[i].kind != "edge" and objs[i].vertices & S]


def simplify_chain(chain: GluedChain, A, B, objs: GluedObjects) -> GluedChain:
    """Shortest chain through the intersection graph of ``Set(chain)`` from ``A`` to ``B``.

    ``A`` and ``B`` are vertices or vertex sets.  Sources and sinks are loop or
    point objects touching them; a shortest graph path repeats no object.
    """
    A, B = _as_set(A), _as_set(B)
    ids = sorted(chain.members)
    adj = intersection_graph(objs, ids)
    sources = _touching(objs, ids, A)
    sinks = set(_touching(objs, ids, B))
    prev: dict[int, int | None] = {s: None for s in sources}
    queue = deque(sources)
    while queue:
        u = queue.popleft()
        if u in sinks:
            seq = []
            while u is not None:
                seq.append(u)
                u = prev[u]
            out = GluedChain(tuple(reversed(seq)))
            assert out.simple and out.members <= chain.members
            return out
        for v in adj[u]:
            if v not in prev:
                prev[v] = u
                queue.append(v)
    raise ChainError("endpoints are not connected through the chain's objects")


def _as_set(A) -> frozenset:
    if isinstance(A, (set, frozenset)):
        return frozenset(A)
    if len(A) and isinstance(A[0], (tuple, list)):
        return frozenset(tuple(v) for v in A)
    return frozenset([tuple(A)])


def _bfs(adj: dict, src) -> dict:
    dist = {src: 0}
    queue = deque([src])
    while queue:
        u = queue.popleft()
        for v in adj.get(u, ()):
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def _adjacency(edges: Iterable) -> dict:
    adj: dict = {}
    for u, v in edges:
        adj.setdefault(u, []).append(v)
        adj.setdefault(v, []).append(u)
    return adj


@dataclass(frozen=True)
class GeodesicResult:
    simple_distance: int
    distance: int
    chain: GluedChain


def simple_geodesic_exact(objs: GluedObjects, x: Vertex, y: Vertex) -> GeodesicResult:
    """Exact shortest length among paths from ``x`` to ``y`` with a simple sequence.

    Enumerates simple paths of the intersection graph and, for each, runs a
    dynamic program over the shared vertices of consecutive objects with
    distances measured inside each object's own edges.  Also returns the
    plain graph distance over all objects.  Limited to 12 objects and 60
    vertices; larger fragments should use the sampling estimators.
    """
    x, y = tuple(x), tuple(y)
    verts = set().union(*(g.vertices for g in objs.objects.values())) if len(objs) else set()
    if len(objs) > MAX_EXACT_OBJECTS or len(verts) > MAX_EXACT_VERTICES:
        raise LimitExceeded(
            f"fragment has {len(objs)} objects and {len(verts)} vertices; exact search is limited to "
            f"{MAX_EXACT_OBJECTS} and {MAX_EXACT_VERTICES}, use the sampling estimators instead"
        )
    plain = _bfs(_adjacency(objs.cluster_edges()), x).get(y)
    ids = objs.ids()
    adj = intersection_graph(objs, ids)
    inner = {i: _adjacency(objs[i].edges) for i in ids}
    sources = _touching(objs, ids, frozenset([x]))
    sinks = set(_touching(objs, ids, frozenset([y])))
    best: tuple[int, tuple] | None = None

    def within(gid, frm: dict) -> dict:
        out: dict = {}
        for p, dp in frm.items():
            for q, dq in _bfs(inner[gid], p).items():
                if dp + dq < out.get(q, 1 << 30):
                    out[q] = dp + dq
        return out

    def dfs(path: list[int], reach: dict):
        nonlocal best
        u = path[-1]
        if u in sinks and y in reach:
            cand = (reach[y], tuple(path))
            if best is None or cand < best:
                best = cand
        for v in adj[u]:
            if v in path:
                continue
            portal = {p: d for p, d in reach.items() if p in objs[v].vertices}
            if portal:
                dfs(path + [v], within(v, portal))

    for s in sources:
        dfs([s], within(s, {x: 0}))
    if best is None or plain is None:
        raise ChainError(f"{x} and {y} are not connected in the fragment")
    return GeodesicResult(best[0], plain, GluedChain(best[1]))


def brute_force_simple_distance(objs: GluedObjects, x: Vertex, y: Vertex, max_len: int = 14) -> int | None:
    """Shortest path of length at most ``max_len`` admitting a simple sequence, by enumeration."""
    adj = _adjacency(objs.cluster_edges())
    x, y = tuple(x), tuple(y)
    dist_y = _bfs(adj, y)
    ids = objs.ids()
    for length in range(0, max_len + 1):
        stack = [(x,)]
        while stack:
            walk = stack.pop()
            if len(walk) - 1 == length:
                if walk[-1] == y and _has_simple_cover(LatticePath(walk), objs, ids):
                    return length
                continue
            for v in adj.get(walk[-1], ()):
                if dist_y.get(v, 1 << 30) <= length - len(walk):
                    stack.append(walk + (v,))
    return None


def _has_simple_cover(path: LatticePath, objs: GluedObjects, ids: list[int]) -> bool:
    n = len(path)

    def go(pos: int, used: frozenset, last_edge: bool) -> bool:
        if pos == n and used and not last_edge:
            return True
        for gid in ids:
            if gid in used:
                continue
            g = objs[gid]
            if not used and g.kind == "edge":
                continue
            for b in range(pos, n + 1):
                if not g.covers(path, pos, b):
                    if b > pos:
                        break
                    continue
                if go(b, used | {gid}, g.kind == "edge"):
                    return True
        return False

    return go(0, frozenset(), True)


# ---------------------------------------------------------------------------
# trace format


def chain_trace(path: LatticePath, chain: GluedChain, objs: GluedObjects) -> str:
    """One line per member: ``start-end -> id (kind)`` over path positions."""
    if not chain.breaks or len(chain.breaks) != len(chain.sequence):
        raise ChainError("chain has no recorded breakpoints")
    lines = [f"# path length {len(path)} from {path.vertices[0]} to {path.vertices[-1]}"]
    start = 0
    for gid, end in zip(chain.sequence, chain.breaks):
        lines.append(f"{start}-{end} -> {gid} ({objs[gid].kind})")
        start = end
    return "\n".join(lines) + "\n"


def parse_chain_trace(text: str) -> GluedChain:
    seq, brk = [], []
    for line in text.splitlines():
        if not line or line.startswith("#"):
            continue
        rng_part, rest = line.split("->")
        seq.append(int(rest.split()[0]))
        brk.append(int(rng_part.split("-")[1]))
    return GluedChain(tuple(seq), tuple(brk))


# ---------------------------------------------------------------------------
# random instances


@dataclass
class ChainInstance:
    objects: GluedObjects
    path: LatticePath


def random_instance(seed: int, index: int, d: int = 3, radius: int = 2, K_max: int = 16) -> ChainInstance | None:
    """A loop-soup sample on a small box and a covered path inside one cluster.

    The path is a shortest path between two cluster vertices or, for odd
    ``index``, a short random walk along open edges.  Returns ``None`` when the
    sample has no cluster with an edge.
    """
    box = BoxSpec.centered(d, radius)
    sample = lift_local_times(sample_loop_soup(box, K_max, "box", seed, index))
    cmap = cable_gluing(sample, signed=False)
    objs = glued_objects(sample, cmap)
    adj = _adjacency(objs.cluster_edges())
    if not adj:
        return None
    gen = np.random.default_rng([seed, index])
    verts = sorted(adj)
    x = verts[gen.integers(len(verts))]
    if index % 2 == 0:
        dist = _bfs(adj, x)
        far = sorted(v for v in dist if v != x)
        y = far[gen.integers(len(far))]
        walk = [y]
        while walk[-1] != x:
            walk.append(min(v for v in adj[walk[-1]] if dist.get(v, 1 << 30) == dist[walk[-1]] - 1))
        walk.reverse()
    else:
        walk = [x]
        for _ in range(int(gen.integers(1, 9))):
            nb = sorted(adj[walk[-1]])
            walk.append(nb[gen.integers(len(nb))])
    return ChainInstance(objs, LatticePath(tuple(walk)))


def fragment_around(objs: GluedObjects, x: Vertex, y: Vertex, max_objects: int = MAX_EXACT_OBJECTS,
                    max_vertices: int = MAX_EXACT_VERTICES) -> GluedObjects:
    """Loop and edge objects reached from ``x`` in the intersection graph, plus the point objects of ``x`` and ``y``.

    Growth is breadth-first in id order and stops before either limit is passed.
    """
    keep = [i for i in (objs.point_object(x), objs.point_object(y)) if i is not None]
    keep = list(dict.fromkeys(keep))
    verts = set().union(*(objs[i].vertices for i in keep)) if keep else set()
    big = [i for i in objs.ids() if objs[i].kind != "point"]
    adj = intersection_graph(objs, big)
    start = [i for i in big if x in objs[i].vertices]
    seen = set(start)
    queue = deque(start)
    while queue:
        u = queue.popleft()
        nv = verts | objs[u].vertices
        if len(keep) + 1 > max_objects or len(nv) > max_vertices:
            continue
        keep.append(u)
        verts = nv
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return objs.subset(keep)


@dataclass
class PropertyReport:
    instances: int = 0
    skipped: int = 0
    exact_solved: int = 0
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        lines = [
            f"chain invariants: {status}",
            f"instances: {self.instances} (empty samples skipped: {self.skipped})",
            f"exactly solved geodesic fragments: {self.exact_solved}",
        ]
        lines += [f"failure: {f}" for f in self.failures[:20]]
        return "\n".join(lines) + "\n"


def check_instance(inst: ChainInstance, report: PropertyReport, label: str = "") -> None:
    """Run the four invariants on one instance, recording failures in ``report``."""
    objs, path = inst.objects, inst.path
    x, y = path.vertices[0], path.vertices[-1]
    chain = loop_sequence_of_path(path, objs)
    if not is_cover(path, chain, objs):
        report.failures.append(f"{label}: greedy sequence is not a legal cover")
        return
    simple = simplify_chain(chain, x, y, objs)
    if not (simple.simple and simple.members <= chain.members):
        report.failures.append(f"{label}: simplified chain not simple or not a subset")
    if not (objs[simple.sequence[0]].vertices & {x} and objs[simple.sequence[-1]].vertices & {y}):
        report.failures.append(f"{label}: simplified chain does not join the endpoints")
    for a, b in zip(simple.sequence, simple.sequence[1:]):
        if not objs[a].vertices & objs[b].vertices:
            report.failures.append(f"{label}: consecutive simplified members do not intersect")
    minimal = minimal_sequence(path, chain, objs)
    if not is_minimal(path, minimal, objs):
        report.failures.append(f"{label}: minimal sequence has a removable member")
    if len(path) >= 1 and len(minimal.members) > 3 * len(path):
        report.failures.append(f"{label}: minimal set larger than three times the path length")
    frag = fragment_around(objs, x, y)
    try:
        res = simple_geodesic_exact(frag, x, y)
    except ChainError:
        return
    report.exact_solved += 1
    if res.distance > res.simple_distance:
        report.failures.append(f"{label}: plain distance exceeds simple distance")


def chain_property_suite(instances: int = 1000, seed: int = 0) -> PropertyReport:
    report = PropertyReport()
    index = 0
    while report.instances < instances:
        inst = random_instance(seed, index)
        index += 1
        if inst is None:
            report.skipped += 1
            continue
        report.instances += 1
        check_instance(inst, report, f"instance {index - 1}")
    return report
