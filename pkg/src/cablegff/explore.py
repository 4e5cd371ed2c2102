"""Lazy exploration of the origin's loop-soup cluster.

A box at d = 7 is far too large to fill with loops, but only the loops meeting
the origin's cluster matter.  Vertices are revealed one at a time.  Revealing
``v`` draws the loops through ``v`` that avoid every vertex revealed before it.
By the Poisson restriction property these are independent of everything
revealed so far, so the cluster has exactly the law of the full soup.

Loops through ``v`` are drawn as closed walks rooted at ``v`` with intensity
``(1/2) (2d)^{-k}`` each, kept with probability ``1 / (visits to v)``.  That
turns rooted walks into unrooted loops with the right weight.  With a
``dirichlet_radius``, walks leaving the box are dropped, which leaves the
killed-walk loop soup.

The cluster is grown breadth-first.  Completing a vertex reveals it and all its
neighbours and decides every edge at it.  The result is a ``Patch``: every
revealed vertex with its local-time contributions, and every decided edge with
the shortest loop crossing it and its gluing uniform.  Any length filter or
sub-box can be evaluated on the same patch afterwards, so all of them are
coupled pathwise to the full configuration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, types
from numba.typed import Dict, List

from . import rng
from .cluster_geometry import ClusterMap, bfs_depths, _csr
from .lattice import BoxSpec, VertexRegion
from .loop_route import _sample_one_loop, sampler_tables

NO_LOOP = np.iinfo(np.int64).max
_EDGE_KEY = types.UniTuple(types.int64, 2)
FREE = -1


class ExploreError(RuntimeError):
    pass


def packing_bits(d: int) -> int:
    return 63 // d


@njit(cache=True)
def _encode(x, bits, off):
    code = 0
    for i in range(x.shape[0]):
        code |= (x[i] + off) << (bits * i)
    return code


@njit(cache=True)
def _decode(code, d, bits, off, out):
    mask = (1 << bits) - 1
    for i in range(d):
        out[i] = ((code >> (bits * i)) & mask) - off


@njit(cache=True)
def _explore_kernel(seed, replica, d, R, explore_radius, max_depth, max_vertices, total_mass, cum_mass, A, T, cap_len):
    """Breadth-first growth of the origin's cluster; see the module docstring.

    ``R`` is the Dirichlet radius, or -1 for the free lattice.  Vertices beyond
    ``explore_radius`` (if >= 0) are reached but never completed.  Returns flat arrays
    that ``explore_cluster`` wraps into a ``Patch``.
    """
    bits = 63 // d
    off = 1 << (bits - 1)
    lim = off - 1
    index = Dict.empty(key_type=types.int64, value_type=types.int64)
    codes = List.empty_list(types.int64)
    explored = List.empty_list(types.boolean)
    completed = List.empty_list(types.boolean)
    dist = List.empty_list(types.int64)
    lpoint = List.empty_list(types.float64)
    lfund = List.empty_list(types.float64)
    c_vertex = List.empty_list(types.int64)
    c_len = List.empty_list(types.int64)
    c_time = List.empty_list(types.float64)
    eindex = Dict.empty(key_type=_EDGE_KEY, value_type=types.int64)
    e_a = List.empty_list(types.int64)
    e_b = List.empty_list(types.int64)
    e_min = List.empty_list(types.int64)
    e_u = List.empty_list(types.float64)
    loop_len = List.empty_list(types.int64)
    loop_root = List.empty_list(types.int64)
    loop_verts = List.empty_list(types.int64)
    loop_start = List.empty_list(types.int64)
    loop_start.append(0)

    point_key = rng.stream_key(seed, replica, rng.TAG_POINT, 0, 0)
    x = np.zeros(d, dtype=np.int64)
    y = np.zeros(d, dtype=np.int64)
    w = np.empty(cap_len + 2)
    moves = np.empty((d, cap_len + 1), dtype=np.int64)
    ks = np.empty(d, dtype=np.int64)
    root = np.empty(d, dtype=np.int64)
    steps = np.empty(cap_len, dtype=np.int8)
    path = np.empty((cap_len, d), dtype=np.int64)
    pcodes = np.empty(cap_len, dtype=np.int64)
    truncated = False
    overflow = False

    qdummy = np.zeros((1, 1, 1))
    origin_code = _encode(np.zeros(d, dtype=np.int64), bits, off)
    index[origin_code] = 0
    codes.append(origin_code)
    explored.append(False)
    completed.append(False)
    dist.append(0)
    lpoint.append(0.0)
    lfund.append(0.0)

    queue = List.empty_list(types.int64)
    queue.append(0)
    head = 0
    while head < len(queue):
        u = queue[head]
        head += 1
        if max_depth >= 0 and dist[u] >= max_depth:
            continue
        if len(codes) > max_vertices:
            truncated = True
            break
        _decode(codes[u], d, bits, off, x)
        if explore_radius >= 0:
            far = False
            for i in range(d):
                if abs(x[i]) > explore_radius:
                    far = True
            if far:
                continue
        # reveal u and its in-box neighbours (u first)
        for nb in range(-1, 2 * d):
            for i in range(d):
                y[i] = x[i]
            if nb >= 0:
                y[nb // 2] += 1 if nb % 2 == 0 else -1
                inside = True
                for i in range(d):
                    if R >= 0 and abs(y[i]) > R:
                        inside = False
                    if abs(y[i]) > lim:
                        inside = False
                        overflow = True
                if not inside:
                    continue
            vc = _encode(y, bits, off)
            if vc in index:
                v = index[vc]
            else:
                v = len(codes)
                index[vc] = v
                codes.append(vc)
                explored.append(False)
                completed.append(False)
                dist.append(-1)
                lpoint.append(0.0)
                lfund.append(0.0)
            if explored[v]:
                continue
            explored[v] = True
            lpoint[v] = rng.gamma_half(point_key, vc)
            key = rng.stream_key(seed, replica, rng.TAG_EXPLORE, vc, 0)
            n_cand = rng.poisson(key, 0, total_mass)
            for ci in range(n_cand):
                sk = rng.sub_key(key, ci + 1)
                uu = rng.uniform(sk, 0) * cum_mass[cap_len]
                k = 2
                while cum_mass[k] <= uu and k < cap_len:
                    k += 1
                _sample_one_loop(rng.sub_key(sk, 1), k, d, A, T, qdummy, True, False, 1, root, steps, w, moves, ks)
                # walk the candidate from y
                n_root = 0
                ok = True
                for i in range(d):
                    path[0, i] = y[i]
                for t in range(k):
                    if t > 0:
                        s = steps[t - 1]
                        for i in range(d):
                            path[t, i] = path[t - 1, i]
                        path[t, s // 2] += 1 if s % 2 == 0 else -1
                    same = True
                    for i in range(d):
                        if path[t, i] != y[i]:
                            same = False
                        if R >= 0 and abs(path[t, i]) > R:
                            ok = False
                        if abs(path[t, i]) > lim:
                            ok = False
                            overflow = True
                    if same:
                        n_root += 1
                    elif ok:
                        pc = _encode(path[t], bits, off)
                        pcodes[t] = pc
                        if pc in index and explored[index[pc]]:
                            ok = False
                    if not ok:
                        break
                if not ok:
                    continue
                if rng.uniform(sk, 1) * n_root >= 1.0:
                    continue
                # accepted: register vertices, holding times, traversed edges
                lid = len(loop_len)
                loop_len.append(k)
                loop_root.append(v)
                hold_key = rng.stream_key(seed, replica, rng.TAG_HOLD, vc, ci)
                for t in range(k):
                    same = True
                    for i in range(d):
                        if path[t, i] != y[i]:
                            same = False
                    if same:
                        p = v
                    else:
                        pc = pcodes[t]
                        if pc in index:
                            p = index[pc]
                        else:
                            p = len(codes)
                            index[pc] = p
                            codes.append(pc)
                            explored.append(False)
                            completed.append(False)
                            dist.append(-1)
                            lpoint.append(0.0)
                            lfund.append(0.0)
                    hold = rng.exponential(hold_key, t)
                    loop_verts.append(p)
                    c_vertex.append(p)
                    c_len.append(k)
                    c_time.append(hold)
                    lfund[p] += hold
                loop_start.append(len(loop_verts))
                for t in range(k):
                    a = loop_verts[loop_start[lid] + t]
                    b = loop_verts[loop_start[lid] + (t + 1) % k]
                    s = steps[t]
                    axis = s // 2
                    lower = a if s % 2 == 0 else b
                    ekey = (codes[lower], axis)
                    if ekey in eindex:
                        e = eindex[ekey]
                        if k < e_min[e]:
                            e_min[e] = k
                    else:
                        e = len(e_a)
                        eindex[ekey] = e
                        upper = b if s % 2 == 0 else a
                        e_a.append(lower)
                        e_b.append(upper)
                        e_min.append(k)
                        gk = rng.stream_key(seed, replica, rng.TAG_GLUE, codes[lower], axis)
                        e_u.append(rng.uniform(gk, 0))
        # every loop at u and its neighbours is known: decide u's edges
        for nb in range(2 * d):
            for i in range(d):
                y[i] = x[i]
            y[nb // 2] += 1 if nb % 2 == 0 else -1
            vc = _encode(y, bits, off)
            if vc not in index:
                continue
            v = index[vc]
            axis = nb // 2
            lower = u if nb % 2 == 0 else v
            upper = v if nb % 2 == 0 else u
            ekey = (codes[lower], axis)
            if ekey in eindex:
                e = eindex[ekey]
            else:
                e = len(e_a)
                eindex[ekey] = e
                e_a.append(lower)
                e_b.append(upper)
                e_min.append(NO_LOOP)
                gk = rng.stream_key(seed, replica, rng.TAG_GLUE, codes[lower], axis)
                e_u.append(rng.uniform(gk, 0))
        completed[u] = True
        # open edges from u under the full configuration
        for nb in range(2 * d):
            for i in range(d):
                y[i] = x[i]
            y[nb // 2] += 1 if nb % 2 == 0 else -1
            vc = _encode(y, bits, off)
            if vc not in index:
                continue
            v = index[vc]
            if dist[v] >= 0:
                continue
            axis = nb // 2
            lower = u if nb % 2 == 0 else v
            e = eindex[(codes[lower], axis)]
            is_open = e_min[e] != NO_LOOP
            if not is_open:
                lu = lpoint[u] + lfund[u]
                lv = lpoint[v] + lfund[v]
                is_open = e_u[e] < -math.expm1(-math.sqrt(lu * lv) / d)
            if is_open:
                dist[v] = dist[u] + 1
                queue.append(v)
    n = len(codes)
    out_codes = np.empty(n, dtype=np.int64)
    out_expl = np.empty(n, dtype=np.bool_)
    out_comp = np.empty(n, dtype=np.bool_)
    out_dist = np.empty(n, dtype=np.int64)
    out_lp = np.empty(n)
    for i in range(n):
        out_codes[i] = codes[i]
        out_expl[i] = explored[i]
        out_comp[i] = completed[i]
        out_dist[i] = dist[i]
        out_lp[i] = lpoint[i]
    m = len(e_a)
    edges = np.empty((m, 2), dtype=np.int64)
    emin = np.empty(m, dtype=np.int64)
    eu = np.empty(m)
    for e in range(m):
        edges[e, 0] = e_a[e]
        edges[e, 1] = e_b[e]
        emin[e] = e_min[e]
        eu[e] = e_u[e]
    nc = len(c_vertex)
    cv = np.empty(nc, dtype=np.int64)
    cl = np.empty(nc, dtype=np.int64)
    ct = np.empty(nc)
    for j in range(nc):
        cv[j] = c_vertex[j]
        cl[j] = c_len[j]
        ct[j] = c_time[j]
    nl = len(loop_len)
    ll = np.empty(nl, dtype=np.int64)
    lr = np.empty(nl, dtype=np.int64)
    ls = np.empty(nl + 1, dtype=np.int64)
    lv = np.empty(len(loop_verts), dtype=np.int64)
    for j in range(nl):
        ll[j] = loop_len[j]
        lr[j] = loop_root[j]
    for j in range(nl + 1):
        ls[j] = loop_start[j]
    for j in range(len(loop_verts)):
        lv[j] = loop_verts[j]
    return out_codes, out_expl, out_comp, out_dist, out_lp, edges, emin, eu, cv, cl, ct, ll, lr, ls, lv, truncated, overflow




@njit(cache=True)
def _open_edges(edges, emin, eu, L, explored, coords, cutoff, sub_radius, d):
    """Edge mask under a loop-length cutoff and an l-infinity sub-box (-1: none)."""
    m = edges.shape[0]
    out = np.zeros(m, dtype=np.bool_)
    for e in range(m):
        a = edges[e, 0]
        b = edges[e, 1]
        if not (explored[a] and explored[b]):
            continue
        if sub_radius >= 0:
            inside = True
            for i in range(d):
                if abs(coords[a, i]) > sub_radius or abs(coords[b, i]) > sub_radius:
                    inside = False
            if not inside:
                continue
        if emin[e] <= cutoff:
            out[e] = True
        elif eu[e] < -math.expm1(-math.sqrt(L[a] * L[b]) / d):
            out[e] = True
    return out


@dataclass
class Patch:
    """Everything revealed while growing the origin's cluster in one replica.

    Only the origin's cluster (and, with a depth cap, its ball) is complete;
    other clusters in the patch may be missing edges.
    """

    d: int
    dirichlet_radius: int
    K_max: int
    seed: int
    replica: int
    coords: np.ndarray
    explored: np.ndarray
    completed: np.ndarray
    dist: np.ndarray
    point_times: np.ndarray
    edges: np.ndarray
    edge_min_len: np.ndarray
    edge_uniform: np.ndarray
    contrib_vertex: np.ndarray
    contrib_len: np.ndarray
    contrib_time: np.ndarray
    loop_len: np.ndarray
    loop_root: np.ndarray
    loop_start: np.ndarray
    loop_vertices: np.ndarray
    truncated: bool
    max_depth: int = -1
    explore_radius: int = -1
    _region: VertexRegion | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return len(self.coords)

    @property
    def region(self) -> VertexRegion:
        if self._region is None:
            frame = BoxSpec.centered(self.d, self.dirichlet_radius) if self.dirichlet_radius >= 0 else None
            self._region = VertexRegion(self.coords, frame)
        return self._region

    def local_times(self, cutoff: float = math.inf) -> np.ndarray:
        keep = self.contrib_len <= cutoff
        fund = np.bincount(self.contrib_vertex[keep], weights=self.contrib_time[keep], minlength=self.size)
        return self.point_times + fund

    def open_mask(self, cutoff: float = math.inf, sub_radius: int | None = None) -> np.ndarray:
        if self.explore_radius >= 0 and (sub_radius is None or sub_radius > self.explore_radius):
            raise ExploreError(f"patch was only completed within radius {self.explore_radius}")
        c = NO_LOOP - 1 if math.isinf(cutoff) else int(math.floor(cutoff))
        return _open_edges(
            self.edges, self.edge_min_len, self.edge_uniform, self.local_times(cutoff), self.explored,
            self.coords, c, -1 if sub_radius is None else int(sub_radius), self.d,
        )

    def origin_distances(self, cutoff: float = math.inf, sub_radius: int | None = None) -> np.ndarray:
        """Chemical distances from the origin under the given filter; -1 outside its cluster."""
        mask = self.open_mask(cutoff, sub_radius)
        indptr, nbr = _csr(self.size, self.edges, mask)
        return bfs_depths(indptr, nbr, 0, -1)

    def cluster_map(self, cutoff: float = math.inf, sub_radius: int | None = None, signed: bool = False) -> ClusterMap:
        """``ClusterMap`` over the revealed vertices; with ``signed`` the origin's cluster is kept with probability 1/2."""
        mask = self.open_mask(cutoff, sub_radius)
        active = self.explored.copy()
        if sub_radius is not None:
            active &= np.max(np.abs(self.coords), axis=1) <= sub_radius
        cm = ClusterMap.from_edges(self.region, active, self.edges[mask], meta={"route": "loops-explore", "cutoff": cutoff})
        if signed and not origin_positive(self.seed, self.replica):
            cm.labels[cm.labels == cm.labels[0]] = -1
        return cm


def origin_positive(seed: int, replica: int) -> bool:
    """Fair sign of the origin's cluster, one coin per replica."""
    return bool(rng.uniform_array(seed, replica, rng.TAG_SIGN, 1, 1)[0] < 0.5)


def explorer_tables(d: int, K_max: int) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    tab = sampler_tables(d, "free", K_max, 1)
    # closed walks rooted at the revealed vertex: intensity (1/2) r_k, no 1/k
    rate = np.zeros(K_max + 1)
    rate[2:] = 0.5 * tab.A[d, 2:]
    cum = np.cumsum(rate)
    return float(cum[-1]), cum, tab.A, tab.T


def explore_cluster(
    d: int,
    seed: int,
    replica: int,
    dirichlet_radius: int | None,
    K_max: int = 512,
    max_depth: int | None = None,
    max_vertices: int = 5_000_000,
    explore_radius: int | None = None,
) -> Patch:
    """Grow the origin's cluster of the loop soup (lengths up to ``K_max``).

    ``dirichlet_radius=None`` uses the free lattice.  ``max_depth`` stops the
    breadth-first growth at that chemical distance; the patch then determines
    the intrinsic ball of that radius and nothing more.  ``explore_radius``
    completes only vertices in that box, enough for connectivity restricted
    to it.
    """
    if d < 1:
        raise ExploreError("d must be positive")
    R = -1 if dirichlet_radius is None else int(dirichlet_radius)
    lim = (1 << (packing_bits(d) - 1)) - 1
    if R > lim:
        raise ExploreError(f"radius {R} does not fit the {packing_bits(d)}-bit coordinate packing")
    total, cum, A, T = explorer_tables(d, K_max)
    out = _explore_kernel(
        int(seed), int(replica), d, R, -1 if explore_radius is None else int(explore_radius),
        -1 if max_depth is None else int(max_depth), int(max_vertices),
        total, cum, A, T, K_max,
    )
    codes, expl, comp, dist, lp, edges, emin, eu, cv, cl, ct, ll, lr, ls, lv, truncated, overflow = out
    if overflow:
        raise ExploreError("a loop left the coordinate packing range; use a Dirichlet radius or smaller K_max")
    bits = packing_bits(d)
    off = 1 << (bits - 1)
    coords = np.stack([((codes >> (bits * i)) & ((1 << bits) - 1)) - off for i in range(d)], axis=1)
    return Patch(
        d, R, K_max, int(seed), int(replica), coords, expl, comp, dist, lp, edges, emin, eu, cv, cl, ct,
        ll, lr, ls, lv, bool(truncated), -1 if max_depth is None else int(max_depth),
        -1 if explore_radius is None else int(explore_radius),
    )
