"""Discrete GFF on a box with zero boundary values, and its cable-graph sign clusters.

The field has precision ``I - P_B``.  Along a cable of length ``d`` the cable
field is a Brownian bridge with variance rate 2 between the two endpoint
values, and it stays positive with probability ``1 - exp(-phi_x phi_y / d)``
when both ends are positive.  Opening each edge with that probability and
taking clusters of positive vertices gives the lattice trace of the clusters of
``{field >= 0}``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
from numba import njit

from . import rng
from .cluster_geometry import ClusterMap
from .lattice import BoxSpec
from .walk_oracle import precision_matrix

EXACT_MAX_VERTICES = 20_000
DEFAULT_BURN_IN = 64
PILOT_REPLICA = 2**40  # stream reserved for the sweep-count pilot chain
DEFAULT_MEMORY_BUDGET = 2**31  # bytes


class MemoryBudgetError(MemoryError):
    def __init__(self, required: int, budget: int):
        super().__init__(f"sampling needs about {required} bytes, over the budget of {budget}")
        self.required = required
        self.budget = budget


@dataclass
class Field:
    box: BoxSpec
    phi: np.ndarray
    seed: int
    replica: int = 0
    method: str = "cholesky"
    meta: dict = field(default_factory=dict)


@dataclass
class CableConfig:
    field: Field
    open_edges: np.ndarray  # bool per box.edges row
    sign: np.ndarray  # int8 per vertex: +1, -1 or 0

    @property
    def box(self) -> BoxSpec:
        return self.field.box


# ---------------------------------------------------------------------------
# exact sampler


class BandedCholesky:
    """Banded Cholesky factor ``U`` of the precision, ``Q = U^T U``.

    Row-major indexing makes the precision banded with half-width
    ``side^(d-1)``; ``phi = U^{-1} z`` then has covariance ``Q^{-1}``.
    """

    def __init__(self, box: BoxSpec):
        self.box = box
        self.bandwidth = box.side ** (box.d - 1) if box.d > 1 else 1
        Q = precision_matrix(box).todia()
        u = self.bandwidth
        ab = np.zeros((u + 1, box.size))
        # upper form: ab[u + i - j, j] = Q[i, j] for i <= j
        Qc = precision_matrix(box).tocoo()
        m = Qc.row <= Qc.col
        ab[u + Qc.row[m] - Qc.col[m], Qc.col[m]] = Qc.data[m]
        del Q
        self.factor = scipy.linalg.cholesky_banded(ab, lower=False)

    @staticmethod
    def bytes_needed(box: BoxSpec) -> int:
        bw = box.side ** (box.d - 1) if box.d > 1 else 1
        return 8 * (bw + 1) * box.size * 2

    def sample(self, z: np.ndarray) -> np.ndarray:
        """``U^{-1} z`` for ``z`` of shape ``(size,)`` or ``(size, n)``."""
        return scipy.linalg.solve_banded((0, self.bandwidth), self.factor, z)


_factor_cache: dict[BoxSpec, BandedCholesky] = {}


def _factor(box: BoxSpec) -> BandedCholesky:
    if box not in _factor_cache:
        _factor_cache[box] = BandedCholesky(box)
    return _factor_cache[box]


def noise(box: BoxSpec, seed: int, replica: int) -> np.ndarray:
    return rng.normal_array(seed, replica, rng.TAG_GFF_NOISE, 0, box.size)


def sample_dgff_batch(box: BoxSpec, seed: int, replicas: range | np.ndarray) -> np.ndarray:
    """Exact fields for several replicas, shape ``(len(replicas), size)``."""
    if box.size > EXACT_MAX_VERTICES:
        raise ValueError("batched sampling is exact-only; box too large")
    Z = np.stack([noise(box, seed, int(r)) for r in replicas], axis=1)
    return _factor(box).sample(Z).T.copy()


# ---------------------------------------------------------------------------
# heat-bath sampler


@njit(cache=True)
def _heat_bath(nb, color, phi, seed, replica, sweep0, sweeps):
    key = rng.stream_key(seed, replica, rng.TAG_HEATBATH, 0, 0)
    n, deg = nb.shape
    inv = 1.0 / deg
    for s in range(sweeps):
        for c in range(2):
            # same-color sites are conditionally independent, so order within a color is free
            for i in range(n):
                if color[i] != c:
                    continue
                tot = 0.0
                for j in range(deg):
                    k = nb[i, j]
                    if k >= 0:
                        tot += phi[k]
                phi[i] = inv * tot + rng.normal(key, (sweep0 + s) * n + i)
    return phi


def integrated_autocorrelation(x: np.ndarray) -> float:
    """Integrated autocorrelation time with the initial-positive-sequence window."""
    x = np.asarray(x, float) - np.mean(x)
    n = len(x)
    var = np.dot(x, x) / n
    if var == 0:
        return 1.0
    tau = 1.0
    for lag in range(1, n // 2):
        rho = np.dot(x[:-lag], x[lag:]) / (n * var)
        if rho <= 0:
            break
        tau += 2 * rho
    return float(tau)


def heat_bath_sweeps(box: BoxSpec, seed: int, pilot: int = 256, burn_in: int = DEFAULT_BURN_IN) -> tuple[int, float]:
    """Sweep count from a pilot chain: ``max(burn_in, 10 * tau)`` of the field sum."""
    nb = box.neighbor_table
    color = (box.coords.sum(axis=1) % 2).astype(np.int64)
    phi = np.zeros(box.size)
    trace = np.empty(pilot)
    for s in range(pilot):
        _heat_bath(nb, color, phi, seed, PILOT_REPLICA, s, 1)
        trace[s] = phi.sum()
    tau = integrated_autocorrelation(trace[pilot // 4 :])
    return max(burn_in, int(math.ceil(10 * tau))), tau


def sample_heat_bath(box: BoxSpec, seed: int, replica: int, sweeps: int) -> np.ndarray:
    nb = box.neighbor_table
    color = (box.coords.sum(axis=1) % 2).astype(np.int64)
    phi = np.zeros(box.size)
    return _heat_bath(nb, color, phi, seed, replica, 0, sweeps)


def sample_dgff(
    box: BoxSpec,
    seed: int,
    replica: int = 0,
    method: str = "auto",
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
    sweeps: int | None = None,
) -> Field:
    """Zero-boundary DGFF on ``box``.

    ``method="auto"`` picks the exact banded Cholesky sampler up to 20000
    vertices and red-black heat-bath sweeps above that.
    """
    if method == "auto":
        method = "cholesky" if box.size <= EXACT_MAX_VERTICES else "heat-bath"
    if method == "cholesky":
        need = BandedCholesky.bytes_needed(box)
        if need > memory_budget:
            raise MemoryBudgetError(need, memory_budget)
        phi = _factor(box).sample(noise(box, seed, replica))
        return Field(box, phi, seed, replica, "cholesky")
    if method == "heat-bath":
        need = 8 * box.size * (2 * box.d + 3)
        if need > memory_budget:
            raise MemoryBudgetError(need, memory_budget)
        tau = None
        if sweeps is None:
            sweeps, tau = heat_bath_sweeps(box, seed)
        phi = sample_heat_bath(box, seed, replica, sweeps)
        return Field(box, phi, seed, replica, "heat-bath", {"sweeps": sweeps, "tau": tau})
    raise ValueError(f"unknown sampling method {method!r}")


# ---------------------------------------------------------------------------
# edge openings and clusters


def edge_open_probability(phi_x, phi_y, d: int):
    """``P(bridge of length d, variance rate 2, avoids 0)``; 0 unless both ends have the same strict sign."""
    prod = np.asarray(phi_x, dtype=float) * np.asarray(phi_y, dtype=float)
    return -np.expm1(-np.maximum(prod, 0.0) / d)


def edge_uniforms(box: BoxSpec, seed: int, replica: int) -> np.ndarray:
    return rng.uniform_array(seed, replica, rng.TAG_EDGE, 0, len(box.edges))


def open_edges(fld: Field, seed: int | None = None, uniforms: np.ndarray | None = None) -> CableConfig:
    """Open each edge independently with the bridge-survival probability."""
    box = fld.box
    if uniforms is None:
        uniforms = edge_uniforms(box, fld.seed if seed is None else seed, fld.replica)
    e = box.edges
    p = edge_open_probability(fld.phi[e[:, 0]], fld.phi[e[:, 1]], box.d)
    is_open = uniforms < p
    return CableConfig(fld, is_open, np.sign(fld.phi).astype(np.int8))


def positive_clusters(config: CableConfig) -> ClusterMap:
    """Clusters of positive vertices joined by open edges."""
    box = config.box
    return ClusterMap.from_edges(
        box, config.field.phi > 0, box.edges[config.open_edges], meta={"route": "gff", "method": config.field.method}
    )


def gff_cluster_map(box: BoxSpec, seed: int, replica: int, method: str = "auto") -> ClusterMap:
    fld = sample_dgff(box, seed, replica, method=method)
    return positive_clusters(open_edges(fld))


# ---------------------------------------------------------------------------
# bridge oracle


@njit(cache=True)
def _bridge_survival(a, b, duration, rate, fine_n, replicas, seed):
    # sequential bridge: X_{i+1} = X_i + (b - X_i)/m + sqrt(rate dt (m-1)/m) Z, m steps left
    np.random.seed(seed)
    dt = duration / fine_n
    n_fine = 0
    n_coarse = 0
    n_ext2 = 0.0
    for _ in range(replicas):
        x = a
        fine_ok = x > 0
        coarse_ok = fine_ok
        i = 0
        while i < fine_n and coarse_ok:
            m = fine_n - i
            if m == 1:
                x = b
            else:
                x = x + (b - x) / m + math.sqrt(rate * dt * (m - 1) / m) * np.random.standard_normal()
            i += 1
            if x <= 0:
                fine_ok = False
                if i % 4 == 0:
                    coarse_ok = False
        n_fine += fine_ok
        n_coarse += coarse_ok
        e = 2.0 * fine_ok - coarse_ok
        n_ext2 += e * e
    return n_fine, n_coarse, n_ext2


def bridge_min_oracle(
    a: float,
    b: float,
    duration: float,
    variance_rate: float,
    steps: int,
    replicas: int,
    seed: int,
) -> tuple[float, float, dict]:
    """Monte Carlo ``P(min of the Gaussian bridge from a to b > 0)`` by path simulation.

    Paths are simulated at ``steps`` points; the same paths monitored at every
    fourth point give the coarse estimate.  Discrete monitoring misses
    crossings with error of order ``steps^{-1/2}``, so the returned estimate is
    the extrapolation ``2 P_fine - P_coarse``.  Returns ``(estimate, stderr, raw)``
    where ``raw`` holds both resolutions.
    """
    if steps < 1000:
        raise ValueError("steps must be at least 1000")
    key = int(rng.stream_key(seed, 0, rng.TAG_BRIDGE, 0, 0) >> np.uint64(33))
    nf, nc, e2 = _bridge_survival(float(a), float(b), float(duration), float(variance_rate), steps, replicas, key)
    mean = (2.0 * nf - nc) / replicas
    var = e2 / replicas - mean**2
    stderr = math.sqrt(max(var, 0.0) / replicas)
    raw = {"fine": nf / replicas, "coarse": nc / replicas, "steps": steps}
    return float(mean), stderr, raw


# ---------------------------------------------------------------------------
# files

_FIELD_MAGIC = b"CGFF"
_FIELD_VERSION = 1
_METHOD_CODE = {"cholesky": 0, "heat-bath": 1}


def save_field(fld: Field, path: str | Path) -> Path:
    path = Path(path)
    head = struct.pack(
        "<4sIIIQQB", _FIELD_MAGIC, _FIELD_VERSION, fld.box.d, fld.box.radius, fld.seed, fld.replica, _METHOD_CODE[fld.method]
    )
    center = struct.pack(f"<{fld.box.d}q", *fld.box.center)
    path.write_bytes(head + center + np.ascontiguousarray(fld.phi, dtype="<f8").tobytes())
    return path


def load_field(path: str | Path) -> Field:
    blob = Path(path).read_bytes()
    hs = struct.calcsize("<4sIIIQQB")
    magic, version, d, radius, seed, replica, method = struct.unpack("<4sIIIQQB", blob[:hs])
    if magic != _FIELD_MAGIC or version != _FIELD_VERSION:
        raise ValueError("not a field snapshot (bad magic or version)")
    center = struct.unpack(f"<{d}q", blob[hs : hs + 8 * d])
    phi = np.frombuffer(blob[hs + 8 * d :], dtype="<f8").copy()
    box = BoxSpec(center, radius)
    name = {v: k for k, v in _METHOD_CODE.items()}[method]
    return Field(box, phi, seed, replica, name)


def write_edge_list(config: CableConfig, path: str | Path) -> Path:
    """Open edges as text, one ``x0 .. x(d-1) y0 .. y(d-1)`` per line."""
    path = Path(path)
    box = config.box
    with path.open("w") as fh:
        fh.write(f"# cable-config d={box.d} radius={box.radius} seed={config.field.seed} replica={config.field.replica}\n")
        for a, b in box.edges[config.open_edges]:
            fh.write(" ".join(map(str, box.vertex(int(a)) + box.vertex(int(b)))) + "\n")
    return path


def read_edge_list(path: str | Path) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    out = []
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        vals = [int(v) for v in line.split()]
        h = len(vals) // 2
        out.append((tuple(vals[:h]), tuple(vals[h:])))
    return out
