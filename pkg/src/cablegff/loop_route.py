"""Random walk loop soup at intensity one half, its local times, and cable gluing.

Loops of length ``k`` rooted in a region form a Poisson process with mean
``Lambda_k = (1/2) sum_x p_k(x, x) / k``.  A rooted loop is drawn exactly
through the product structure of the box: split ``k`` into per-axis step
counts, draw each root coordinate, draw each coordinate's closed 1D path, then
interleave the axes uniformly.

Local times add an Exp(1) holding time per visit, and each vertex carries an
independent Gamma(1/2, 1) point-loop time.  Cable gluing merges the two ends of
an edge no loop traverses with probability ``1 - exp(-sqrt(L_x L_y) / d)``.
Every random draw is keyed by loop id, visit, vertex or edge, so filtering
loops by length reuses all draws of the survivors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numba import njit

from . import rng
from .cluster_geometry import ClusterMap, union_find_labels
from .lattice import BoxSpec, Vertex, neighbor_offsets
from .walk_oracle import ALPHA, OracleError, _binomial_weights, _mix_pair, free_kernel_1d, interval_kernel_1d

MODES = ("box", "free", "torus")
LOOP_DUMP_VERSION = 1


class LoopSampleError(ValueError):
    pass


# ---------------------------------------------------------------------------
# sampler tables


@dataclass(frozen=True)
class SamplerTables:
    """Per-axis tables for exact loop sampling on a cubic region.

    ``q[k, a, b]`` is the 1D kernel on the region's side (unused in free mode),
    ``T[k]`` the 1D trace over the side, ``A[m, k]`` the trace mixed over ``m``
    axes, and ``mass[k] = Lambda_k`` the Poisson mean of length-``k`` loops.
    """

    d: int
    mode: str
    K_max: int
    side: int
    q: np.ndarray
    T: np.ndarray
    A: np.ndarray
    mass: np.ndarray


@lru_cache(maxsize=32)
def sampler_tables(d: int, mode: str, K_max: int, side: int) -> SamplerTables:
    if mode not in MODES:
        raise LoopSampleError(f"unknown mode {mode!r}")
    if mode == "free":
        q = np.zeros((1, 1, 1))
        T = side * free_kernel_1d(K_max, 0)
    else:
        q = interval_kernel_1d(K_max, side, periodic=mode == "torus")
        T = np.einsum("kaa->k", q)
    A = np.zeros((d + 1, K_max + 1))
    A[1] = T
    for m in range(2, d + 1):
        A[m] = _mix_pair(A[m - 1], T, 1.0 / m)
    mass = np.zeros(K_max + 1)
    k = np.arange(2, K_max + 1)
    mass[2:] = ALPHA * A[d, 2:] / k
    return SamplerTables(d, mode, K_max, side, q, T, A, mass)


# ---------------------------------------------------------------------------
# numba sampling kernels


@njit(cache=True)
def _pick(weights, n, u):
    tot = 0.0
    for j in range(n):
        tot += weights[j]
    target = u * tot
    acc = 0.0
    for j in range(n):
        acc += weights[j]
        if target < acc and weights[j] > 0:
            return j
    for j in range(n - 1, -1, -1):
        if weights[j] > 0:
            return j
    return n - 1


@njit(cache=True)
def _sample_one_loop(key, k, d, A, T, q, free, periodic, side, root_out, steps_out, w, moves, ks):
    """Draw one rooted loop of length ``k``; writes axis root positions and step codes."""
    c = 0
    rem = k
    for m in range(d, 1, -1):
        _binomial_weights(rem, 1.0 / m, w)
        for j in range(rem + 1):
            w[j] = w[j] * T[j] * A[m - 1, rem - j]
        j = _pick(w, rem + 1, rng.uniform(key, c))
        c += 1
        ks[m - 1] = j
        rem -= j
    ks[0] = rem
    for i in range(d):
        ki = ks[i]
        if free:
            pos = rng.randint(key, c, side)
            c += 1
        else:
            for a in range(side):
                w[a] = q[ki, a, a]
            pos = _pick(w, side, rng.uniform(key, c))
            c += 1
        root_out[i] = pos
        u = pos
        ups = ki // 2
        for j in range(ki, 0, -1):
            if free:
                p_up = ups / j
            else:
                up = u + 1
                if periodic:
                    up = up % side
                if up >= side:
                    p_up = 0.0
                else:
                    p_up = 0.5 * q[j - 1, up, pos] / q[j, u, pos]
            if rng.uniform(key, c) < p_up:
                moves[i, ki - j] = 1
                ups -= 1
                u += 1
            else:
                moves[i, ki - j] = -1
                u -= 1
            c += 1
            if periodic:
                u = u % side
    # uniform interleaving of the axis sequences
    left = k
    used = np.zeros(d, dtype=np.int64)
    for t in range(k):
        target = rng.randint(key, c, left)
        c += 1
        i = 0
        acc = ks[0] - used[0]
        while target >= acc:
            i += 1
            acc += ks[i] - used[i]
        mv = moves[i, used[i]]
        used[i] += 1
        left -= 1
        steps_out[t] = 2 * i if mv > 0 else 2 * i + 1


@njit(cache=True)
def _sample_loops(seed, replica, d, K_max, mass, A, T, q, free, periodic, side):
    counts = np.zeros(K_max + 1, dtype=np.int64)
    total_loops = 0
    total_steps = 0
    for k in range(2, K_max + 1):
        if mass[k] <= 0:
            continue
        key = rng.stream_key(seed, replica, rng.TAG_LOOP_COUNT, k, 0)
        n = rng.poisson(key, 0, mass[k])
        counts[k] = n
        total_loops += n
        total_steps += n * k
    lengths = np.empty(total_loops, dtype=np.int64)
    roots = np.empty((total_loops, d), dtype=np.int64)
    offsets = np.zeros(total_loops + 1, dtype=np.int64)
    steps = np.empty(total_steps, dtype=np.int8)
    w = np.empty(max(K_max, side) + 1)
    moves = np.empty((d, K_max + 1), dtype=np.int64)
    ks = np.empty(d, dtype=np.int64)
    buf = np.empty(K_max, dtype=np.int8)
    root = np.empty(d, dtype=np.int64)
    li = 0
    for k in range(2, K_max + 1):
        for idx in range(counts[k]):
            key = rng.stream_key(seed, replica, rng.TAG_LOOP_PATH, k, idx)
            _sample_one_loop(key, k, d, A, T, q, free, periodic, side, root, buf, w, moves, ks)
            lengths[li] = k
            roots[li, :] = root
            offsets[li + 1] = offsets[li] + k
            steps[offsets[li] : offsets[li + 1]] = buf[:k]
            li += 1
    return lengths, roots, offsets, steps


# ---------------------------------------------------------------------------
# data types


def multiplicity(steps: Sequence[int]) -> int:
    """Largest ``J`` such that ``steps`` is ``J`` copies of one block."""
    k = len(steps)
    s = list(steps)
    for J in range(k, 0, -1):
        if k % J == 0:
            p = k // J
            if s == s[p:] + s[:p]:
                return J
    return 1


@dataclass(frozen=True)
class RootedLoop:
    id: int
    root: Vertex
    steps: tuple[int, ...]

    @property
    def length(self) -> int:
        return len(self.steps)

    @property
    def multiplicity(self) -> int:
        return multiplicity(self.steps)

    def vertices(self) -> list[Vertex]:
        """Visited vertices in order, ``x_0 .. x_{k-1}`` (the return to the root is implicit)."""
        off = neighbor_offsets(len(self.root))
        cur = np.array(self.root, dtype=np.int64)
        out = []
        for s in self.steps:
            out.append(tuple(int(c) for c in cur))
            cur = cur + off[s]
        if tuple(cur) != self.root:
            raise LoopSampleError(f"loop {self.id} does not close")
        return out

    def is_closed(self) -> bool:
        off = neighbor_offsets(len(self.root))
        return bool(np.all(off[list(self.steps)].sum(axis=0) == 0)) if self.steps else True


@dataclass(frozen=True)
class GluedLoop:
    loop_id: int
    vertices: frozenset


@dataclass
class LoopSample:
    """A realized loop soup.

    ``box`` is the user's box; ``sample_region`` the box roots are drawn from;
    ``support`` the box containing every visited vertex, which indexes local
    times and clusters.  Loop ``i`` has length ``lengths[i]``, root
    ``roots[i]`` and step codes ``steps[offsets[i]:offsets[i+1]]``.
    """

    box: BoxSpec
    mode: str
    K_max: int
    seed: int
    replica: int
    sample_region: BoxSpec
    support: BoxSpec
    ids: np.ndarray
    lengths: np.ndarray
    roots: np.ndarray
    offsets: np.ndarray
    steps: np.ndarray
    local_times: np.ndarray | None = None
    point_loop_times: np.ndarray | None = None
    visits: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.box.d

    def __len__(self) -> int:
        return len(self.ids)

    def loop(self, i: int) -> RootedLoop:
        s = self.steps[self.offsets[i] : self.offsets[i + 1]]
        return RootedLoop(int(self.ids[i]), tuple(int(c) for c in self.roots[i]), tuple(int(c) for c in s))

    def loops(self):
        for i in range(len(self)):
            yield self.loop(i)

    def counts_by_length(self) -> np.ndarray:
        return np.bincount(self.lengths, minlength=self.K_max + 1)

    def glued_loops(self) -> list[GluedLoop]:
        return [GluedLoop(lp.id, frozenset(lp.vertices())) for lp in self.loops()]

    @property
    def total_local_times(self) -> np.ndarray:
        if self.local_times is None or self.point_loop_times is None:
            raise LoopSampleError("local times have not been lifted")
        return self.local_times + self.point_loop_times


def _support_box(box: BoxSpec, mode: str, K_max: int, pad: int) -> tuple[BoxSpec, BoxSpec]:
    if mode == "free":
        region = BoxSpec(box.center, box.radius + pad)
        return region, BoxSpec(box.center, box.radius + pad + K_max // 2)
    return box, box


def sample_loop_soup(
    box: BoxSpec, K_max: int, mode: str = "box", seed: int = 0, replica: int = 0, pad: int | None = None
) -> LoopSample:
    """Poisson loop soup of loops of length ``2..K_max``.

    ``mode="box"`` keeps loops inside ``box`` (zero boundary values);
    ``"torus"`` wraps ``box``; ``"free"`` roots loops in ``box`` padded by
    ``pad`` (default ``K_max // 2``).
    """
    if K_max < 2:
        raise LoopSampleError(f"K_max must be at least 2, got {K_max}")
    if mode not in MODES:
        raise LoopSampleError(f"unknown mode {mode!r}")
    pad = K_max // 2 if pad is None else int(pad)
    region, support = _support_box(box, mode, K_max, pad)
    tab = sampler_tables(box.d, mode, K_max, region.side)
    lengths, pos, offsets, steps = _sample_loops(
        int(seed), int(replica), box.d, K_max, tab.mass, tab.A, tab.T, tab.q, mode == "free", mode == "torus", region.side
    )
    roots = pos - region.radius + np.asarray(region.center, dtype=np.int64)
    return LoopSample(
        box, mode, K_max, int(seed), int(replica), region, support,
        np.arange(len(lengths), dtype=np.int64), lengths, roots, offsets, steps,
    )


def expected_loop_counts(box: BoxSpec, K_max: int, mode: str = "box", pad: int | None = None) -> np.ndarray:
    """``Lambda_k`` for ``k = 0..K_max`` matching ``sample_loop_soup``'s region."""
    pad = K_max // 2 if pad is None else int(pad)
    region, _ = _support_box(box, mode, K_max, pad)
    return sampler_tables(box.d, mode, K_max, region.side).mass.copy()


# ---------------------------------------------------------------------------
# local times and gluing


@njit(cache=True)
def _walk_indices(roots, offsets, steps, off, center, radius, side, strides, periodic):
    """Support-box index of every visit, in step order."""
    n = roots.shape[0]
    d = roots.shape[1]
    out = np.empty(offsets[n], dtype=np.int64)
    cur = np.empty(d, dtype=np.int64)
    for i in range(n):
        for a in range(d):
            cur[a] = roots[i, a]
        for t in range(offsets[i], offsets[i + 1]):
            idx = 0
            for a in range(d):
                r = cur[a] - center[a] + radius
                if periodic:
                    r = r % side
                idx += r * strides[a]
            out[t] = idx
            s = steps[t]
            for a in range(d):
                cur[a] += off[s, a]
    return out


@njit(cache=True)
def _fundamental_times(seed, replica, ids, offsets, visit_idx, n_vertices):
    L = np.zeros(n_vertices)
    nvis = np.zeros(n_vertices, dtype=np.int64)
    for i in range(ids.shape[0]):
        key = rng.stream_key(seed, replica, rng.TAG_HOLD, ids[i], 0)
        for t in range(offsets[i], offsets[i + 1]):
            v = visit_idx[t]
            L[v] += rng.exponential(key, t - offsets[i])
            nvis[v] += 1
    return L, nvis


@njit(cache=True)
def _point_times(seed, replica, n_vertices):
    key = rng.stream_key(seed, replica, rng.TAG_POINT, 0, 0)
    out = np.empty(n_vertices)
    for v in range(n_vertices):
        out[v] = rng.gamma_half(key, v)
    return out


def visit_indices(sample: LoopSample) -> np.ndarray:
    sup = sample.support
    if sample.visits is None:
        sample.visits = _walk_indices(
            sample.roots, sample.offsets, sample.steps, neighbor_offsets(sample.d),
            np.asarray(sup.center, dtype=np.int64), sup.radius, sup.side, sup.strides, sample.mode == "torus",
        )
    return sample.visits


def lift_local_times(sample: LoopSample, seed: int | None = None) -> LoopSample:
    """Attach fundamental-loop and point-loop local times on the support box.

    Fundamental time at a vertex is the sum of one Exp(1) holding time per visit;
    point-loop time is Gamma(1/2, 1), independent across vertices.
    """
    seed = sample.seed if seed is None else int(seed)
    vis = visit_indices(sample)
    L, nvis = _fundamental_times(seed, sample.replica, sample.ids, sample.offsets, vis, sample.support.size)
    sample.local_times = L
    sample.point_loop_times = _point_times(seed, sample.replica, sample.support.size)
    sample.meta["visit_counts"] = nvis
    return sample


@lru_cache(maxsize=16)
def _edge_lookup(box: BoxSpec) -> np.ndarray:
    """``table[i, axis]`` = row of ``box.edges`` from vertex ``i`` in direction ``+axis``, or -1."""
    table = np.full((box.size, box.d), -1, dtype=np.int64)
    table[box.edges[:, 0], box.edge_axes] = np.arange(len(box.edges))
    return table


@njit(cache=True)
def _traversed_edges(offsets, steps, visit_idx, lookup, nb, n_edges):
    hit = np.zeros(n_edges, dtype=np.bool_)
    for i in range(offsets.shape[0] - 1):
        for t in range(offsets[i], offsets[i + 1]):
            s = steps[t]
            a = visit_idx[t]
            axis = s // 2
            lower = a if s % 2 == 0 else nb[a, s]
            if lower >= 0:
                e = lookup[lower, axis]
                if e >= 0:
                    hit[e] = True
    return hit


@njit(cache=True)
def _glue(seed, replica, edges, traversed, L, d):
    key = rng.stream_key(seed, replica, rng.TAG_GLUE, 0, 0)
    out = traversed.copy()
    for e in range(edges.shape[0]):
        if out[e]:
            continue
        lx = L[edges[e, 0]]
        ly = L[edges[e, 1]]
        if lx > 0 and ly > 0:
            if rng.uniform(key, e) < -math.expm1(-math.sqrt(lx * ly) / d):
                out[e] = True
    return out


@njit(cache=True)
def positive_labels(seed, replica, labels):
    """Fair sign per cluster, keyed by its canonical label; True where the vertex's cluster is positive."""
    key = rng.stream_key(seed, replica, rng.TAG_SIGN, 0, 0)
    out = np.zeros(labels.shape[0], dtype=np.bool_)
    for i in range(labels.shape[0]):
        if labels[i] >= 0:
            out[i] = rng.uniform(key, labels[i]) < 0.5
    return out


def glue_probability(Lx, Ly, d: int):
    """Merge probability across an untraversed edge given both endpoint local times."""
    return -np.expm1(-np.sqrt(np.asarray(Lx, float) * np.asarray(Ly, float)) / d)


def cable_gluing(sample: LoopSample, seed: int | None = None, signed: bool = True) -> ClusterMap:
    """Clusters of the cable loop soup on the support box.

    Vertices joined by an edge some loop traverses are merged; every other edge
    merges with probability ``1 - exp(-sqrt(L_x L_y) / d)``.  With ``signed``,
    each cluster gets an independent fair sign and only positive clusters are
    labeled, which matches the positive clusters of the field.
    """
    if sample.local_times is None:
        raise LoopSampleError("cable_gluing needs local times; call lift_local_times first")
    if sample.mode == "torus":
        raise LoopSampleError("torus samples are for calibration only; clusters need box or free mode")
    seed = sample.seed if seed is None else int(seed)
    sup = sample.support
    vis = visit_indices(sample)
    traversed = _traversed_edges(sample.offsets, sample.steps, vis, _edge_lookup(sup), sup.neighbor_table, len(sup.edges))
    L = sample.total_local_times
    is_open = _glue(seed, sample.replica, sup.edges, traversed, L, sample.d)
    active = L > 0
    labels = union_find_labels(sup.size, active, sup.edges[is_open])
    if signed:
        active = active & positive_labels(seed, sample.replica, labels)
    kind = np.where(traversed[is_open], 0, 1)
    cmap = ClusterMap.from_edges(sup, active, sup.edges[is_open], edge_kind=kind, meta={"route": "loops", "signed": signed})
    members: dict[int, list[int]] = {}
    if len(sample):
        first = vis[sample.offsets[:-1]]
        for lid, v in zip(sample.ids, first):
            lab = int(cmap.labels[v])
            if lab >= 0:
                members.setdefault(lab, []).append(int(lid))
    cmap.loop_members = members
    return cmap


def delete_large_loops(sample: LoopSample, cutoff: float) -> LoopSample:
    """Sub-sample of loops with length at most ``cutoff``; ids and all draws are shared."""
    if cutoff < 0:
        raise LoopSampleError("cutoff must be nonnegative")
    keep = sample.lengths <= cutoff
    idx = np.flatnonzero(keep)
    lengths = sample.lengths[idx]
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    if len(idx):
        pieces = [sample.steps[sample.offsets[i] : sample.offsets[i + 1]] for i in idx]
        steps = np.concatenate(pieces).astype(np.int8)
    else:
        steps = np.zeros(0, dtype=np.int8)
    out = LoopSample(
        sample.box, sample.mode, sample.K_max, sample.seed, sample.replica, sample.sample_region, sample.support,
        sample.ids[idx], lengths, sample.roots[idx], offsets, steps, meta={"cutoff": cutoff},
    )
    if sample.local_times is not None:
        lift_local_times(out)
    return out


# ---------------------------------------------------------------------------
# truncation sweep


def loop_cluster_map(box: BoxSpec, K_max: int, seed: int, replica: int, mode: str = "box", signed: bool = True) -> ClusterMap:
    s = lift_local_times(sample_loop_soup(box, K_max, mode, seed, replica))
    return cable_gluing(s, signed=signed)


def _connect_e1(box: BoxSpec, K_max: int, seed: int, replica: int, mode: str) -> float:
    cm = loop_cluster_map(box, K_max, seed, replica, mode)
    o = cm.region.index(box.center)
    e = cm.region.index(tuple(c + (i == 0) for i, c in enumerate(box.center)))
    return float(cm.labels[o] >= 0 and cm.labels[o] == cm.labels[e])


def truncation_sweep(
    box: BoxSpec,
    K_grid: Sequence[int],
    observable: str | Callable[[BoxSpec, int, int, int, str], float] = "connect_e1",
    replicas: int = 1000,
    seed: int = 0,
    mode: str = "box",
) -> dict:
    """Observable means at each ``K_max`` on common seeds, with successive differences.

    Loops of a given length are keyed identically across ``K_max``, so the
    estimates are coupled.  ``accepted`` is true when the last difference is below
    half the standard error of the last estimate.  For ``"loop_count"`` each row
    also carries the exact mean ``sum_{k <= K} Lambda_k``.
    """
    K_grid = [int(k) for k in K_grid]
    if any(b <= a for a, b in zip(K_grid, K_grid[1:])):
        raise LoopSampleError("K_grid must be increasing")
    if observable == "loop_count":
        fn = lambda b, K, s, r, m: float(len(sample_loop_soup(b, K, m, s, r)))  # noqa: E731
    elif observable == "connect_e1":
        fn = _connect_e1
    else:
        fn = observable
    rows = []
    prev = None
    for K in K_grid:
        vals = np.array([fn(box, K, seed, r, mode) for r in range(replicas)])
        mean = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else float("nan")
        row = {"K_max": K, "mean": mean, "stderr": se, "diff": None if prev is None else mean - prev}
        if observable == "loop_count":
            row["exact_mean"] = float(expected_loop_counts(box, K, mode).sum())
        rows.append(row)
        prev = mean
    last = rows[-1]
    accepted = len(rows) > 1 and abs(last["diff"]) <= 0.5 * last["stderr"]
    return {"box_radius": box.radius, "mode": mode, "rows": rows, "accepted": bool(accepted), "replicas": replicas}


# ---------------------------------------------------------------------------
# loop dump


def write_loop_dump(sample: LoopSample, path: str | Path) -> Path:
    """Text dump, one loop per line: ``id k J root... : steps...``."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write(
            f"# cablegff-loops v{LOOP_DUMP_VERSION} d={sample.d} mode={sample.mode} K_max={sample.K_max} "
            f"seed={sample.seed} replica={sample.replica} box_center={','.join(map(str, sample.box.center))} "
            f"box_radius={sample.box.radius}\n"
        )
        for lp in sample.loops():
            fh.write(f"{lp.id} {lp.length} {lp.multiplicity} {' '.join(map(str, lp.root))} : {' '.join(map(str, lp.steps))}\n")
    return path


def read_loop_dump(path: str | Path) -> tuple[dict, list[RootedLoop]]:
    lines = Path(path).read_text().splitlines()
    head = lines[0]
    if not head.startswith(f"# cablegff-loops v{LOOP_DUMP_VERSION}"):
        raise LoopSampleError("not a loop dump (bad header or version)")
    meta = dict(tok.split("=", 1) for tok in head.split()[3:])
    loops = []
    for line in lines[1:]:
        left, right = line.split(":")
        vals = [int(v) for v in left.split()]
        steps = tuple(int(v) for v in right.split())
        lp = RootedLoop(vals[0], tuple(vals[3:]), steps)
        if lp.length != vals[1] or lp.multiplicity != vals[2]:
            raise LoopSampleError(f"loop {vals[0]}: stored length or multiplicity does not match its steps")
        loops.append(lp)
    return meta, loops
