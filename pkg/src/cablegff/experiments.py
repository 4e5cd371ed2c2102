"""Monte Carlo estimators for arm, two-point, chemical-distance and loop-deletion observables.

Each replica is a pure function of ``(seed, replica index)``, so results do not
depend on how replicas are spread over threads; reductions always run in
replica order.  Monotone comparisons (nested radii, nested boxes, length
filters) are evaluated on one configuration per replica and asserted there.
"""
from __future__ import annotations

import csv
import io
import json
import math
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__, rng
from .cluster_geometry import DISTANCE_UNIT, _csr, bfs_depths
from .explore import Patch, explore_cluster, origin_positive
from .gff_route import open_edges, sample_dgff
from .lattice import BoxSpec, hyperoctahedral_orbit, linf

ROUTES = ("gff", "loops", "both")
CSV_COLUMNS = ["name", "d", "route", "param_json", "estimate", "stderr", "n", "seed", "truncation_note"]
MIN_EVENTS = 30


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class MonotonicityViolation(AssertionError):
    pass


@dataclass
class ExperimentConfig:
    d: int = 7
    route: str = "loops"
    box_radius: int = 8
    replicas: int = 1000
    seed: int = 0
    threads: int = 1
    K_max: int = 512
    r_grid: tuple[int, ...] = (2, 3, 4)
    x_list: tuple[tuple[int, ...], ...] = ()
    beta: float = 8.0
    b_grid: tuple[float, ...] = (1.0, 4.0 / 3.0, 2.0)
    kappa: float = 0.5
    M_grid: tuple[float, ...] = (1.0, 2.0, 4.0)
    pool_orbit: bool = True

    def validate(self) -> "ExperimentConfig":
        if self.d < 3:
            raise ConfigError("d", f"the model needs a transient lattice, d >= 3 (got {self.d})")
        if self.route not in ROUTES:
            raise ConfigError("route", f"must be one of {ROUTES}")
        if self.replicas < 1:
            raise ConfigError("replicas", "must be at least 1")
        if self.threads < 1:
            raise ConfigError("threads", "must be at least 1")
        if self.box_radius < 1:
            raise ConfigError("box_radius", "must be at least 1")
        if not 0 <= self.seed < 2**63:
            raise ConfigError("seed", "must lie in [0, 2^63)")
        if self.K_max < 2:
            raise ConfigError("K_max", "must be at least 2")
        if not self.beta > 1:
            raise ConfigError("beta", "must exceed 1")
        if any(not b > 0 for b in self.b_grid):
            raise ConfigError("b_grid", "exponents must be positive")
        if not 0 < self.kappa <= 1:
            raise ConfigError("kappa", "must lie in (0, 1]")
        for x in self.x_list:
            if len(x) != self.d:
                raise ConfigError("x_list", f"point {x} does not have {self.d} coordinates")
        return self

    @property
    def box(self) -> BoxSpec:
        return BoxSpec.centered(self.d, self.box_radius)


@dataclass
class EstimateRecord:
    name: str
    d: int
    route: str
    params: dict
    estimate: float
    stderr: float
    n: int
    seed: int
    truncation_note: str = ""
    extra: dict = field(default_factory=dict)

    def row(self) -> list[str]:
        return [
            self.name, str(self.d), self.route, json.dumps(self.params, sort_keys=True),
            repr(float(self.estimate)), repr(float(self.stderr)), str(self.n), str(self.seed), self.truncation_note,
        ]


# ---------------------------------------------------------------------------
# replica views


class OriginView:
    """The origin's cluster in one replica, from either route.

    ``distances(sub_radius, cutoff)`` gives chemical distances from the origin
    (-1 outside its cluster) using only edges inside ``B(0, sub_radius)`` and
    loops no longer than ``cutoff``.  ``positive`` is whether the origin's
    cluster lies in the nonnegative level set.  ``truncated`` marks a loop-route
    patch that hit the explorer's vertex cap; its distances use decided edges
    only, so connectivity is a lower bound.
    """

    coords: np.ndarray
    positive: bool
    truncated: bool = False

    def distances(self, sub_radius: int | None = None, cutoff: float = math.inf) -> np.ndarray:
        raise NotImplementedError


class PatchView(OriginView):
    def __init__(self, patch: Patch):
        self.patch = patch
        self.coords = patch.coords
        self.positive = origin_positive(patch.seed, patch.replica)
        self.truncated = patch.truncated

    def distances(self, sub_radius=None, cutoff=math.inf):
        if sub_radius is None and math.isinf(cutoff) and self.patch.explore_radius < 0:
            return self.patch.dist
        return self.patch.origin_distances(cutoff, sub_radius)


class FieldView(OriginView):
    def __init__(self, box: BoxSpec, seed: int, replica: int):
        fld = sample_dgff(box, seed, replica)
        cfg = open_edges(fld)
        self.box = box
        self.coords = box.coords
        self.edges = box.edges
        self.open = cfg.open_edges & (fld.phi[box.edges[:, 0]] > 0) & (fld.phi[box.edges[:, 1]] > 0)
        self.origin = box.index((0,) * box.d)
        self.positive = bool(fld.phi[self.origin] > 0)
        self._full = None

    def distances(self, sub_radius=None, cutoff=math.inf):
        if not math.isinf(cutoff):
            raise ConfigError("route", "loop-length filters need the loop route")
        if sub_radius is None and self._full is not None:
            return self._full
        mask = self.open.copy()
        if sub_radius is not None:
            inside = np.max(np.abs(self.coords), axis=1) <= sub_radius
            mask &= inside[self.edges[:, 0]] & inside[self.edges[:, 1]]
        if not self.positive:
            out = np.full(len(self.coords), -1, dtype=np.int64)
        else:
            indptr, nbr = _csr(len(self.coords), self.edges, mask)
            out = bfs_depths(indptr, nbr, self.origin, -1)
        if sub_radius is None:
            self._full = out
        return out


def make_view(cfg: ExperimentConfig, route: str, replica: int, **explore_kw) -> OriginView:
    if route == "gff":
        return FieldView(cfg.box, cfg.seed, replica)
    patch = explore_cluster(cfg.d, cfg.seed, replica, cfg.box_radius, K_max=cfg.K_max, **explore_kw)
    return PatchView(patch)


def routes_of(cfg: ExperimentConfig) -> list[str]:
    return ["gff", "loops"] if cfg.route == "both" else [cfg.route]


def run_replicas(fn: Callable[[int], np.ndarray], replicas: int, threads: int = 1) -> np.ndarray:
    """``fn`` over replica indices, stacked in replica order whatever the thread count."""
    if threads <= 1:
        return np.array([fn(r) for r in range(replicas)])
    chunks = np.array_split(np.arange(replicas), threads * 4)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda idx: [fn(int(r)) for r in idx], chunks))
    return np.array([row for part in parts for row in part])


def _run_views(cfg: ExperimentConfig, one: Callable[[int], tuple]) -> tuple[np.ndarray, int]:
    """``run_replicas`` over ``one(rep) -> (values, view)``; also counts truncated views."""

    def wrapped(rep):
        vals, view = one(rep)
        return np.append(np.asarray(vals, dtype=float), float(view.truncated))

    data = run_replicas(wrapped, cfg.replicas, cfg.threads)
    return data[:, :-1], int(data[:, -1].sum())


def _mean_se(vals: np.ndarray) -> tuple[float, float]:
    vals = np.asarray(vals, dtype=float)
    n = len(vals)
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return mean, se


def _ratio_se(num: np.ndarray, den: np.ndarray) -> tuple[float, float]:
    """Ratio of sums with a delta-method standard error over replicas."""
    tn, td = float(num.sum()), float(den.sum())
    if td == 0:
        return float("nan"), float("nan")
    ratio = tn / td
    n = len(num)
    resid = num - ratio * den
    se = math.sqrt(float(np.sum(resid**2)) * n / (n - 1)) / td if n > 1 else float("nan")
    return ratio, se


def _check_margin(cfg: ExperimentConfig, reach: float, what: str) -> None:
    if 2 * reach > cfg.box_radius:
        raise ConfigError("box_radius", f"{what} reaches radius {reach}, beyond half the box radius {cfg.box_radius}")


def _truncation_note(cfg: ExperimentConfig, route: str, truncated: int = 0) -> str:
    if route == "gff":
        return f"dirichlet box radius {cfg.box_radius}; exact field"
    note = f"dirichlet box radius {cfg.box_radius}; loops up to length {cfg.K_max}"
    if truncated:
        note += f"; {truncated} replicas hit the explorer vertex cap (connectivity from decided edges, a lower bound)"
    return note


def _assert_nonincreasing(rows: np.ndarray, what: str) -> None:
    bad = np.flatnonzero(np.any(np.diff(rows, axis=1) > 0, axis=1))
    if len(bad):
        raise MonotonicityViolation(f"{what} increases along the grid in replica {int(bad[0])}")


# ---------------------------------------------------------------------------
# estimators


def _reach(view: OriginView, dist: np.ndarray) -> int:
    m = dist >= 0
    return int(np.max(np.abs(view.coords[m]))) if m.any() else -1


def estimate_pi1(cfg: ExperimentConfig, r_grid: Sequence[int] | None = None) -> list[EstimateRecord]:
    """One-arm probabilities ``P(0 <-> boundary of B(0, r))`` in the nonnegative level set."""
    cfg.validate()
    r_grid = sorted(int(r) for r in (r_grid or cfg.r_grid))
    _check_margin(cfg, max(r_grid), "one-arm radius")
    out = []
    for route in routes_of(cfg):
        def one(rep):
            v = make_view(cfg, route, rep)
            reach = _reach(v, v.distances()) if v.positive else -1
            return np.array([reach >= r for r in r_grid], dtype=float), v

        ind, n_trunc = _run_views(cfg, one)
        _assert_nonincreasing(ind, "one-arm indicator")
        for j, r in enumerate(r_grid):
            m, se = _mean_se(ind[:, j])
            out.append(EstimateRecord("pi1", cfg.d, route, {"r": r, "box_radius": cfg.box_radius}, m, se,
                                      cfg.replicas, cfg.seed, _truncation_note(cfg, route, n_trunc),
                                      {"scaled_r2": m * r * r, "values": ind[:, j]}))
    return out


def estimate_two_point(cfg: ExperimentConfig, x_list: Sequence[Sequence[int]] | None = None) -> list[EstimateRecord]:
    """``P(0 <-> x)`` in the nonnegative level set."""
    cfg.validate()
    xs = [tuple(int(c) for c in x) for x in (x_list or cfg.x_list)]
    if not xs:
        raise ConfigError("x_list", "no target points")
    _check_margin(cfg, max(linf(x) for x in xs), "two-point target")
    out = []
    for route in routes_of(cfg):
        def one(rep):
            v = make_view(cfg, route, rep)
            dist = v.distances()
            res = []
            for x in xs:
                i = _index_of(v, x)
                res.append(float(v.positive and i >= 0 and dist[i] >= 0))
            return np.array(res), v

        ind, n_trunc = _run_views(cfg, one)
        for j, x in enumerate(xs):
            m, se = _mean_se(ind[:, j])
            out.append(EstimateRecord("two_point", cfg.d, route, {"x": list(x), "box_radius": cfg.box_radius}, m, se,
                                      cfg.replicas, cfg.seed, _truncation_note(cfg, route, n_trunc), {"values": ind[:, j]}))
    return out


def _index_of(view: OriginView, x: Sequence[int]) -> int:
    if isinstance(view, PatchView):
        return view.patch.region.index(x)
    return view.box.index(x)


def estimate_local_connectivity(
    cfg: ExperimentConfig, r_grid: Sequence[int] | None = None, beta: float | None = None, extra_betas: Sequence[float] = ()
) -> list[EstimateRecord]:
    """``S(r) = sum_{y in B(0,2r)} P(0 <-> y using edges in B(0, beta r))``.

    All betas share each replica's configuration; counts are asserted
    nondecreasing in beta on every replica.
    """
    cfg.validate()
    r_grid = sorted(int(r) for r in (r_grid or cfg.r_grid))
    betas = sorted({float(beta or cfg.beta), *map(float, extra_betas)})
    if any(b <= 1 for b in betas):
        raise ConfigError("beta", "must exceed 1")
    outer = max(int(math.floor(b * r)) for b in betas for r in r_grid)
    _check_margin(cfg, outer, "restricted box")
    out = []
    for route in routes_of(cfg):
        def one(rep):
            kw = {"explore_radius": outer} if route == "loops" else {}
            v = make_view(cfg, route, rep, **kw)
            inner = np.max(np.abs(v.coords), axis=1)
            vals = []
            for r in r_grid:
                for b in betas:
                    dist = v.distances(sub_radius=int(math.floor(b * r)))
                    vals.append(float(v.positive) * float(np.sum((dist >= 0) & (inner <= 2 * r))))
            return np.array(vals), v

        S, n_trunc = _run_views(cfg, one)
        S = S.reshape(cfg.replicas, len(r_grid), len(betas))
        if np.any(np.diff(S, axis=2) < 0):
            raise MonotonicityViolation("restricted connectivity count decreased as the box grew")
        for i, r in enumerate(r_grid):
            cap = (4 * r + 1) ** cfg.d
            if np.any(S[:, i, :] > cap):
                raise MonotonicityViolation("connectivity count exceeds the number of vertices in B(0, 2r)")
            for j, b in enumerate(betas):
                m, se = _mean_se(S[:, i, j])
                out.append(EstimateRecord("local_connectivity", cfg.d, route,
                                          {"r": r, "beta": b, "box_radius": cfg.box_radius}, m, se,
                                          cfg.replicas, cfg.seed, _truncation_note(cfg, route, n_trunc),
                                          {"scaled_r2": m / r**2, "values": S[:, i, j], "truncated": n_trunc}))
    return out


def estimate_chemical(
    cfg: ExperimentConfig,
    targets: Sequence | None = None,
    mode: str = "point",
    kappa: float | None = None,
    M_grid: Sequence[float] | None = None,
) -> list[EstimateRecord]:
    """Conditional chemical distances.

    ``mode="point"``: ``E[d(0,x) | 0 <-> x]`` for each ``x`` in ``targets``;
    with ``cfg.pool_orbit`` every lattice symmetry image of ``x`` is pooled.
    ``mode="boundary"``: for each ``r`` in ``targets``,
    ``E[d(0, boundary of B(0, kappa r)) | 0 <-> boundary of B(0, r)]`` and the
    tails ``P(d(0, boundary of B(0, r)) >= M r^2 | ...)``.

    The conditional laws do not depend on the cluster's sign, so every cluster
    counts.  Records with fewer than 30 conditioning events are flagged.
    """
    cfg.validate()
    kappa = cfg.kappa if kappa is None else float(kappa)
    M_grid = tuple(cfg.M_grid if M_grid is None else M_grid)
    out = []
    if mode == "point":
        xs = [tuple(int(c) for c in x) for x in (targets or cfg.x_list)]
        if not xs:
            raise ConfigError("x_list", "no target points")
        _check_margin(cfg, max(linf(x) for x in xs), "chemical-distance target")
        groups = [hyperoctahedral_orbit(x) if cfg.pool_orbit else [x] for x in xs]
        for route in routes_of(cfg):
            def one(rep):
                v = make_view(cfg, route, rep)
                dist = v.distances()
                res = []
                for x, grp in zip(xs, groups):
                    tot, cnt = 0.0, 0.0
                    for z in grp:
                        i = _index_of(v, z)
                        if i >= 0 and dist[i] >= 0:
                            if dist[i] < linf(z):
                                raise MonotonicityViolation("chemical distance below the l-infinity distance")
                            tot += dist[i]
                            cnt += 1
                    res += [tot, cnt]
                return np.array(res), v

            data, n_trunc = _run_views(cfg, one)
            for j, x in enumerate(xs):
                num, den = data[:, 2 * j], data[:, 2 * j + 1]
                out.append(_conditional_record("chemical_point", cfg, route,
                                               {"x": list(x), "pooled_points": len(groups[j]), "box_radius": cfg.box_radius},
                                               num, den, scale=linf(x) ** 2, truncated=n_trunc))
        return out
    if mode == "boundary":
        rs = sorted(int(r) for r in (targets or cfg.r_grid))
        _check_margin(cfg, max(rs), "chemical-distance radius")
        for route in routes_of(cfg):
            def one(rep):
                v = make_view(cfg, route, rep)
                dist = v.distances()
                m = dist >= 0
                norm = np.max(np.abs(v.coords), axis=1)
                res = []
                for r in rs:
                    hit = bool(m.any() and norm[m].max() >= r)
                    s = max(1, int(math.floor(kappa * r)))
                    d_in = float(dist[m & (norm == s)].min()) if hit else 0.0
                    d_out = float(dist[m & (norm == r)].min()) if hit else 0.0
                    res += [d_in, float(hit)] + [float(hit and d_out >= M * r * r) for M in M_grid]
                return np.array(res), v

            data, n_trunc = _run_views(cfg, one)
            w = 2 + len(M_grid)
            for j, r in enumerate(rs):
                den = data[:, w * j + 1]
                out.append(_conditional_record("chemical_boundary", cfg, route,
                                               {"r": r, "kappa": kappa, "box_radius": cfg.box_radius},
                                               data[:, w * j], den, scale=r**2, truncated=n_trunc))
                for k, M in enumerate(M_grid):
                    out.append(_conditional_record("chemical_boundary_tail", cfg, route,
                                                   {"r": r, "M": M, "box_radius": cfg.box_radius},
                                                   data[:, w * j + 2 + k], den, scale=1.0, truncated=n_trunc))
        return out
    raise ConfigError("mode", "must be 'point' or 'boundary'")


def _conditional_record(name, cfg, route, params, num, den, scale, truncated=0) -> EstimateRecord:
    events = int(den.sum())
    note = _truncation_note(cfg, route, truncated) + f"; distances in {DISTANCE_UNIT} units"
    if events == 0:
        est, se = float("nan"), float("nan")
        note += "; insufficient-data: no conditioning events"
    else:
        est, se = _ratio_se(num, den)
        if events < MIN_EVENTS:
            note += f"; insufficient-data: only {events} conditioning events"
    params = dict(params, events=events)
    return EstimateRecord(name, cfg.d, route, params, est, se, cfg.replicas, cfg.seed, note,
                          {"events": events, "scaled": est / scale if scale else float("nan")})


def estimate_intrinsic_one_arm(cfg: ExperimentConfig, r_grid: Sequence[int] | None = None) -> list[EstimateRecord]:
    """``P(some vertex at chemical distance exactly r)`` in the nonnegative level set.

    The search stops at depth ``max(r_grid)``; a replica whose intrinsic ball
    leaves the inner half of the box sets a truncation warning.
    """
    cfg.validate()
    r_grid = sorted(int(r) for r in (r_grid or cfg.r_grid))
    depth = max(r_grid)
    out = []
    for route in routes_of(cfg):
        def one(rep):
            kw = {"max_depth": depth} if route == "loops" else {}
            v = make_view(cfg, route, rep, **kw)
            dist = v.distances()
            m = (dist >= 0) & (dist <= depth)
            far = float(np.max(np.abs(v.coords[m]))) if m.any() else 0.0
            hits = [float(v.positive and np.any(dist == r)) for r in r_grid]
            return np.array(hits + [far]), v

        data, n_trunc = _run_views(cfg, one)
        ind, far = data[:, :-1], data[:, -1]
        _assert_nonincreasing(ind, "intrinsic arm indicator")
        flagged = int(np.sum(2 * far > cfg.box_radius))
        note = _truncation_note(cfg, route, n_trunc)
        if flagged:
            note += f"; bias warning: {flagged} replicas' balls left the inner half-box"
        for j, r in enumerate(r_grid):
            m, se = _mean_se(ind[:, j])
            out.append(EstimateRecord("intrinsic_one_arm", cfg.d, route, {"r": r, "box_radius": cfg.box_radius}, m, se,
                                      cfg.replicas, cfg.seed, note,
                                      {"scaled_r": m * r, "flagged": flagged, "values": ind[:, j]}))
    return out


def eta_conventions(b: float, d: int) -> dict:
    """Both readings of the deletion exponent: ``2 - b(d/2 - 2)`` and its negative plus... see ``werner_gap``."""
    s = b * (d / 2 - 2)
    return {"eta_stated": 2 - s, "eta_from_gap_bound": s - 2}


def werner_gap(
    cfg: ExperimentConfig, r: int, beta: float | None = None, b_grid: Sequence[float] | None = None
) -> list[EstimateRecord]:
    """Loss of local connectivity when loops longer than ``r^b`` are deleted.

    Per replica, ``N(l) = #{x in B(0,r): 0 <-> x using edges in B(0, beta r) and
    loops of length <= l}`` is computed on one configuration for the full soup
    and each cutoff ``l = r^b``; the gap ``N(inf) - N(r^b)`` is asserted
    nonnegative and nonincreasing in ``b``.  Connectivity here is the plain loop
    cluster; there is no sign.

    The gap is reported against ``r^(2 - eta)`` under both exponent readings,
    ``eta = 2 - b(d/2 - 2)`` and ``eta = b(d/2 - 2) - 2``; the second is the one
    the deletion bound ``r^4 l^(2 - d/2)`` gives.
    """
    cfg.validate()
    if cfg.route != "loops":
        raise ConfigError("route", "the deletion experiment needs loop identities (route = loops)")
    beta = float(beta or cfg.beta)
    b_grid = sorted(float(b) for b in (b_grid or cfg.b_grid))
    outer = int(math.floor(beta * r))
    _check_margin(cfg, outer, "restricted box")
    cutoffs = [r**b for b in b_grid]

    def one(rep):
        v = make_view(cfg, "loops", rep, explore_radius=outer)
        inner = np.max(np.abs(v.coords), axis=1) <= r
        full = float(np.sum((v.distances(outer) >= 0) & inner))
        filt = [float(np.sum((v.distances(outer, c) >= 0) & inner)) for c in cutoffs]
        return np.array([full] + filt), v

    data, n_trunc = _run_views(cfg, one)
    full, filt = data[:, 0], data[:, 1:]
    gaps = full[:, None] - filt
    if np.any(gaps < 0):
        raise MonotonicityViolation("a length filter created a connection")
    _assert_nonincreasing(gaps, "deletion gap")
    out = []
    note = _truncation_note(cfg, "loops", n_trunc)
    for j, (b, c) in enumerate(zip(b_grid, cutoffs)):
        gm, gse = _mean_se(gaps[:, j])
        fm, fse = _mean_se(filt[:, j])
        eta = eta_conventions(b, cfg.d)
        params = {"r": r, "b": b, "cutoff": c, "beta": beta, "box_radius": cfg.box_radius}
        exact_zero = c >= cfg.K_max
        extra = {
            "filtered": fm, "filtered_stderr": fse, "filtered_r2": fm / r**2, "gap_r2": gm / r**2,
            "gap_over_r_pow_stated": gm / r ** (2 - eta["eta_stated"]),
            "gap_over_r_pow_from_bound": gm / r ** (2 - eta["eta_from_gap_bound"]),
            "gap_values": gaps[:, j], "identity_filter": exact_zero, "truncated": n_trunc, **eta,
        }
        out.append(EstimateRecord("werner_gap", cfg.d, "loops", params, gm, gse, cfg.replicas, cfg.seed, note, extra))
        out.append(EstimateRecord("werner_filtered", cfg.d, "loops", params, fm, fse, cfg.replicas, cfg.seed, note, {}))
    fm, fse = _mean_se(full)
    out.append(EstimateRecord("werner_full", cfg.d, "loops", {"r": r, "beta": beta, "box_radius": cfg.box_radius},
                              fm, fse, cfg.replicas, cfg.seed, note, {}))
    return out


# ---------------------------------------------------------------------------
# exponent fits


@dataclass
class FitResult:
    gamma: float
    amplitude: float
    ci: tuple[float, float]
    window: tuple[float, float]
    n_boot: int


def _loglog(r: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    if np.any(y <= 0):
        raise ValueError("nonpositive estimate in the fit window; the log is undefined, increase replicas")
    slope, icpt = np.polyfit(np.log(r), np.log(y), 1)
    return float(slope), float(math.exp(icpt))


def fit_exponent(
    r: Sequence[float],
    values: Sequence[float] | None = None,
    stderr: Sequence[float] | None = None,
    replica_values: np.ndarray | None = None,
    n_boot: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> FitResult:
    """Fit ``value = A r^gamma`` by least squares on log-log axes.

    With ``replica_values`` (replicas x grid) the confidence interval comes from
    resampling replicas; otherwise from normal perturbations of size
    ``stderr``.
    """
    r = np.asarray(r, dtype=float)
    if replica_values is not None:
        replica_values = np.asarray(replica_values, dtype=float)
        values = replica_values.mean(axis=0)
    if values is None:
        raise ValueError("need values or replica_values")
    values = np.asarray(values, dtype=float)
    if len(r) < 3:
        raise ValueError("need at least 3 grid points")
    if stderr is not None and not np.all(np.isfinite(stderr)):
        raise ValueError("standard errors must be finite")
    gamma, amp = _loglog(r, values)
    gen = rng.numpy_generator(seed, 0, rng.TAG_BOOTSTRAP)
    boots = []
    for _ in range(n_boot):
        if replica_values is not None:
            idx = gen.integers(0, len(replica_values), len(replica_values))
            y = replica_values[idx].mean(axis=0)
        elif stderr is not None:
            y = values + gen.standard_normal(len(values)) * np.asarray(stderr, dtype=float)
        else:
            y = values
        if np.all(y > 0):
            boots.append(_loglog(r, y)[0])
    if not boots:
        raise ValueError("every bootstrap resample had a nonpositive point; increase replicas")
    lo, hi = np.quantile(boots, [(1 - level) / 2, (1 + level) / 2])
    return FitResult(gamma, amp, (float(lo), float(hi)), (float(r.min()), float(r.max())), len(boots))


def fit_records(records: Sequence[EstimateRecord], key: str, **kw) -> FitResult:
    """Fit over a list of records whose parameter ``key`` is the scale variable."""
    r = [rec.params[key] for rec in records]
    vals = [rec.estimate for rec in records]
    if all("values" in rec.extra for rec in records):
        return fit_exponent(r, replica_values=np.stack([rec.extra["values"] for rec in records], axis=1), **kw)
    return fit_exponent(r, vals, stderr=[rec.stderr for rec in records], **kw)


# ---------------------------------------------------------------------------
# output files


def records_csv(records: Iterable[EstimateRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rec in records:
        w.writerow(rec.row())
    return buf.getvalue()


def write_records_csv(records: Iterable[EstimateRecord], path: str | Path) -> Path:
    path = Path(path)
    path.write_text(records_csv(records))
    return path


def config_dict(cfg: ExperimentConfig) -> dict:
    out = asdict(cfg)
    out["x_list"] = [list(x) for x in cfg.x_list]
    for k in ("r_grid", "b_grid", "M_grid"):
        out[k] = list(out[k])
    return out


def write_manifest(path: str | Path, cfg: ExperimentConfig | None, experiments: list[str], extra: dict | None = None) -> Path:
    """Run manifest; written before any estimate file.

    ``threads`` is omitted from the reproducibility key since it does not affect
    results, but recorded for the record.
    """
    path = Path(path)
    data = {
        "code_version": __version__,
        "rng_contract": rng.RNG_CONTRACT_VERSION,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": config_dict(cfg) if cfg is not None else None,
        "experiments": experiments,
        "distance_unit": DISTANCE_UNIT,
        "started_unix": time.time(),
    }
    data.update(extra or {})
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default))
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(type(o))
