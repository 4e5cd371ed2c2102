"""Exact numerics for the simple random walk on Z^d.

The discrete-time walk picks one of the ``2d`` neighbours uniformly.  Its
coordinates are one-dimensional walks run at a multinomially distributed number
of steps each, and a box is a product of intervals, so every kernel used here,
free, box-killed or toroidal, is a binomial mixture of one-dimensional kernels::

    p_k(x, y) = sum_{k_1+...+k_d = k} multinom(k; k_1..k_d) d^{-k} prod_i q_{k_i}(x_i, y_i)

``KernelTable`` stores the one-dimensional tables and mixes on demand.  The
return probabilities have two further, independent routes: an exact integer
convolution over the symmetry-reduced box, and Gauss-Legendre quadrature of the
characteristic function.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.integrate
import scipy.sparse
import scipy.sparse.linalg
import scipy.special
from numba import njit
from scipy.stats import binom

from .lattice import BoxSpec, LatticeError, Vertex, linf

ALPHA = 0.5
MODES = ("free", "box", "torus")


class OracleError(ValueError):
    pass


class OracleMismatch(AssertionError):
    """Two independent routes to the same quantity disagree."""


def _check_mode(mode: str) -> str:
    if mode not in MODES:
        raise OracleError(f"unknown kernel mode {mode!r}; expected one of {MODES}")
    return mode


# ---------------------------------------------------------------------------
# one-dimensional kernels and mixing


def free_kernel_1d(K: int, a: int) -> np.ndarray:
    """``q[k]`` = P(1D walk moves by ``a`` in ``k`` steps), ``k = 0..K``."""
    k = np.arange(K + 1)
    ok = ((k + a) % 2 == 0) & (abs(a) <= k)
    j = np.where(ok, (k + a) // 2, 0)
    return np.where(ok, binom.pmf(j, k, 0.5), 0.0)


def interval_kernel_1d(K: int, n: int, periodic: bool = False) -> np.ndarray:
    """``q[k, a, b]`` for the 1D walk on ``n`` sites, killed at the ends or periodic."""
    Q = np.zeros((n, n))
    for a in range(n):
        for b in (a - 1, a + 1):
            if periodic:
                Q[a, b % n] += 0.5
            elif 0 <= b < n:
                Q[a, b] += 0.5
    out = np.empty((K + 1, n, n))
    out[0] = np.eye(n)
    for k in range(1, K + 1):
        out[k] = out[k - 1] @ Q
    return out


@njit(cache=True)
def _binomial_weights(k, p, out):
    """Fill ``out[:k+1]`` with Binomial(k, p) probabilities, recursing out from the mode."""
    mode = min(k, int((k + 1) * p))
    logw = (
        math.lgamma(k + 1.0)
        - math.lgamma(mode + 1.0)
        - math.lgamma(k - mode + 1.0)
        + mode * math.log(p)
        + (k - mode) * math.log1p(-p)
    )
    ratio = p / (1.0 - p)
    out[mode] = math.exp(logw)
    for j in range(mode, k):
        out[j + 1] = out[j] * (k - j) / (j + 1) * ratio
    for j in range(mode, 0, -1):
        out[j - 1] = out[j] * j / (k - j + 1) / ratio


@njit(cache=True)
def _mix_pair(acc, s, p):
    K = acc.shape[0] - 1
    out = np.empty(K + 1)
    w = np.empty(K + 1)
    for k in range(K + 1):
        _binomial_weights(k, p, w)
        tot = 0.0
        for j in range(k + 1):
            tot += w[j] * s[j] * acc[k - j]
        out[k] = tot
    return out


def mix_axes(series: Sequence[np.ndarray]) -> np.ndarray:
    """Combine per-axis step-count series into the d-dimensional one.

    ``series[i][k]`` is the axis-``i`` quantity after ``k`` axis steps; the result
    at ``k`` averages the product over the multinomial split of ``k`` steps.
    """
    acc = np.ascontiguousarray(series[0], dtype=float)
    for m, s in enumerate(series[1:], start=2):
        # j steps on the new axis, k - j on the m - 1 already mixed
        acc = _mix_pair(acc, np.ascontiguousarray(s, dtype=float), 1.0 / m)
    return acc


# ---------------------------------------------------------------------------
# return probabilities


@lru_cache(maxsize=None)
def _orbit_walk_counts(d: int, k: int) -> dict:
    """Exact walk counts from 0 after ``k`` steps, per hyperoctahedral orbit.

    States are sorted tuples of absolute coordinates; only states that can still
    return to 0 within the remaining steps are kept, so the support is the
    box of radius ``ceil(k/2)``.
    """
    layer = {(0,) * d: 1}
    for j in range(k):
        remaining = k - j - 1
        nxt: dict = {}
        for state, count in layer.items():
            for i in range(d):
                for delta in (1, -1):
                    c = abs(state[i] + delta)
                    new = tuple(sorted(state[:i] + (c,) + state[i + 1 :]))
                    if sum(new) > remaining:
                        continue
                    nxt[new] = nxt.get(new, 0) + count
        layer = nxt
    return layer


def orbit_size(state: Sequence[int]) -> int:
    """Number of lattice points with the given multiset of absolute coordinates."""
    state = list(state)
    n = math.factorial(len(state))
    for v in set(state):
        n //= math.factorial(state.count(v))
    return n * 2 ** sum(1 for c in state if c)


def return_prob_dp(d: int, k: int) -> Fraction:
    """Exact P(return after ``k`` steps) by integer convolution."""
    if k < 0:
        raise OracleError("k must be nonnegative")
    if k % 2:
        return Fraction(0)
    counts = _orbit_walk_counts(d, k)
    return Fraction(counts.get((0,) * d, 0), (2 * d) ** k)


def free_kernel_exact(d: int, k: int) -> dict[tuple, Fraction]:
    """Exact ``p_k(0, x)`` per orbit representative (sorted absolute coordinates).

    Unlike ``return_prob_dp`` this keeps every reachable state.
    """
    layer = {(0,) * d: 1}
    for _ in range(k):
        nxt: dict = {}
        for state, count in layer.items():
            for i in range(d):
                for delta in (1, -1):
                    c = abs(state[i] + delta)
                    new = tuple(sorted(state[:i] + (c,) + state[i + 1 :]))
                    nxt[new] = nxt.get(new, 0) + count
        layer = nxt
    denom = (2 * d) ** k
    return {s: Fraction(c, denom) for s, c in layer.items()}


def _cos_moments(J: int, nodes: int) -> np.ndarray:
    x, w = np.polynomial.legendre.leggauss(nodes)
    theta = math.pi * x
    c = np.cos(theta)
    # (1/2pi) * int_{-pi}^{pi} = (1/2) * sum_i w_i f(pi x_i)
    return np.array([0.5 * np.dot(w, c**j) for j in range(J + 1)])


def cos_moments(J: int, tol: float = 1e-10) -> tuple[np.ndarray, int]:
    """Moments ``E[cos(theta)^j]``, ``j <= J``, by adaptive Gauss-Legendre."""
    nodes = 8
    prev = _cos_moments(J, nodes)
    while True:
        nodes *= 2
        cur = _cos_moments(J, nodes)
        if np.max(np.abs(cur - prev)) < tol:
            return cur, nodes
        if nodes > 4096:
            raise OracleError("Gauss-Legendre refinement did not converge")
        prev = cur


def return_prob_quadrature(d: int, k: int, tol: float = 1e-10) -> float:
    """``int ((1/d) sum cos theta_i)^k dtheta / (2 pi)^d`` by tensor Gauss-Legendre.

    The integrand expands into a sum of products of one-axis factors, and a
    tensor-product rule integrates each product axis by axis, so the d-fold rule
    is evaluated exactly as a binomial convolution of one-axis quadratures.
    """
    if k < 0:
        raise OracleError("k must be nonnegative")
    m, _ = cos_moments(k, tol)
    acc = m.copy()
    for _ in range(d - 1):
        nxt = np.zeros(k + 1)
        for n in range(k + 1):
            nxt[n] = sum(math.comb(n, j) * m[j] * acc[n - j] for j in range(n + 1))
        acc = nxt
    return float(acc[k] / d**k)


def return_prob(d: int, k: int, method: str = "dp") -> float:
    """P(simple random walk on Z^d is back at its start after exactly ``k`` steps).

    ``method`` is ``"dp"`` (exact), ``"quadrature"``, or ``"both"``, which computes
    both and raises ``OracleMismatch`` if they differ by more than 1e-9.
    """
    if d < 1:
        raise LatticeError("d must be >= 1")
    if method == "dp":
        return float(return_prob_dp(d, k))
    if method == "quadrature":
        return return_prob_quadrature(d, k)
    if method == "both":
        a = float(return_prob_dp(d, k))
        b = return_prob_quadrature(d, k)
        if abs(a - b) > 1e-9:
            raise OracleMismatch(f"return_prob mismatch at d={d}, k={k}: dp={a!r} quadrature={b!r}")
        return a
    raise OracleError(f"unknown method {method!r}")


def return_series(d: int, K: int) -> np.ndarray:
    """``r_k`` for ``k = 0..K`` in floating point, by mixing 1D kernels."""
    return mix_axes([free_kernel_1d(K, 0)] * d)


# ---------------------------------------------------------------------------
# kernel tables

_CACHE_MAGIC = b"CGKT"
_CACHE_VERSION = 1
_MODE_CODE = {"free": 0, "box": 1, "torus": 2}


@dataclass
class KernelTable:
    """Kernel ``p_k(x, y)``, ``k <= K_max``, stored as one-dimensional tables.

    ``mode="free"`` is the walk on Z^d; ``"box"`` is killed on leaving ``box``;
    ``"torus"`` wraps ``box`` periodically.
    """

    d: int
    mode: str
    K_max: int
    box: BoxSpec | None = None
    q: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        _check_mode(self.mode)
        if self.mode != "free":
            if self.box is None:
                raise OracleError(f"mode {self.mode!r} needs a box")
            if self.box.d != self.d:
                raise OracleError("box dimension does not match d")
        if self.q is None:
            self.q = self._build()

    def _build(self) -> np.ndarray:
        if self.mode == "free":
            # free axis series are closed-form binomials, evaluated on demand
            return np.zeros((0,))
        return interval_kernel_1d(self.K_max, self.box.side, periodic=self.mode == "torus")

    @property
    def radius(self) -> int:
        return -1 if self.box is None else self.box.radius

    def _axis_pos(self, x: Sequence[int]) -> list[int]:
        if self.mode == "free":
            return [int(c) for c in x]
        rel = [int(c) - int(o) + self.box.radius for c, o in zip(x, self.box.center)]
        if self.mode == "box":
            if any(a < 0 or a >= self.box.side for a in rel):
                raise OracleError(f"vertex {tuple(x)} is outside the killing box")
        else:
            rel = [a % self.box.side for a in rel]
        return rel

    def axis_series(self, a: int, b: int) -> np.ndarray:
        if self.mode == "free":
            return free_kernel_1d(self.K_max, b - a)
        return self.q[:, a, b]

    def series(self, x: Sequence[int], y: Sequence[int]) -> np.ndarray:
        """``p_k(x, y)`` for ``k = 0..K_max``."""
        ax, ay = self._axis_pos(x), self._axis_pos(y)
        return mix_axes([self.axis_series(a, b) for a, b in zip(ax, ay)])

    def p(self, k: int, x: Sequence[int], y: Sequence[int]) -> float:
        if not 0 <= k <= self.K_max:
            raise OracleError(f"k={k} outside table range 0..{self.K_max}")
        return float(self.series(x, y)[k])

    def trace_series(self, region: BoxSpec | Iterable[Sequence[int]] | None = None) -> np.ndarray:
        """``sum_{x in region} p_k(x, x)`` for ``k = 0..K_max``.

        ``region`` defaults to the table's box.  Boxes are summed axis by axis.
        """
        if region is None:
            if self.box is None:
                raise OracleError("free mode needs an explicit region")
            region = self.box
        if isinstance(region, BoxSpec):
            if self.mode == "free":
                return region.size * self.series((0,) * self.d, (0,) * self.d)
            lo = self._axis_pos(tuple(c - region.radius for c in region.center))
            hi = self._axis_pos(tuple(c + region.radius for c in region.center))
            if self.mode == "torus" and region.side > self.box.side:
                raise OracleError("region larger than the torus")
            per_axis = []
            for a0, a1 in zip(lo, hi):
                idx = np.arange(a0, a0 + region.side) % self.box.side
                per_axis.append(self.q[:, idx, idx].sum(axis=1))
            return mix_axes(per_axis)
        total = np.zeros(self.K_max + 1)
        for x in region:
            total += self.series(x, x)
        return total

    # cache files ------------------------------------------------------------

    def to_bytes(self) -> bytes:
        header = struct.pack(
            "<4sIIBIi", _CACHE_MAGIC, _CACHE_VERSION, self.d, _MODE_CODE[self.mode], self.K_max, self.radius
        )
        shape = struct.pack("<I", self.q.ndim) + struct.pack(f"<{self.q.ndim}Q", *self.q.shape)
        return header + shape + np.ascontiguousarray(self.q, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes, box: BoxSpec | None = None) -> "KernelTable":
        hsize = struct.calcsize("<4sIIBIi")
        magic, version, d, mode, K, radius = struct.unpack("<4sIIBIi", blob[:hsize])
        if magic != _CACHE_MAGIC or version != _CACHE_VERSION:
            raise OracleError("not a kernel table cache file (bad magic or version)")
        (ndim,) = struct.unpack("<I", blob[hsize : hsize + 4])
        shape = struct.unpack(f"<{ndim}Q", blob[hsize + 4 : hsize + 4 + 8 * ndim])
        q = np.frombuffer(blob[hsize + 4 + 8 * ndim :], dtype="<f8").reshape(shape).copy()
        mode_name = {v: k for k, v in _MODE_CODE.items()}[mode]
        if mode_name != "free":
            box = box or BoxSpec.centered(d, radius)
            if box.radius != radius:
                raise OracleError("cached table radius does not match the requested box")
        return cls(d, mode_name, K, box if mode_name != "free" else None, q=q)

    @staticmethod
    def cache_name(d: int, mode: str, K_max: int, radius: int) -> str:
        return f"kernel_d{d}_{mode}_K{K_max}_r{radius}.bin"


def kernel_table(
    d: int, mode: str, K_max: int, box: BoxSpec | None = None, cache_dir: str | Path | None = None
) -> KernelTable:
    """Build a ``KernelTable``, reading/writing the on-disk cache if ``cache_dir`` is given."""
    _check_mode(mode)
    radius = -1 if box is None or mode == "free" else box.radius
    if cache_dir is None:
        return KernelTable(d, mode, K_max, box if mode != "free" else None)
    path = Path(cache_dir) / KernelTable.cache_name(d, mode, K_max, radius)
    if path.exists():
        return KernelTable.from_bytes(path.read_bytes(), box if mode != "free" else None)
    table = KernelTable(d, mode, K_max, box if mode != "free" else None)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(table.to_bytes())
    return table


# ---------------------------------------------------------------------------
# Green's functions


def transition_matrix(box: BoxSpec) -> scipy.sparse.csr_matrix:
    """Sparse ``P_B``: the walk's transition matrix killed outside ``box``."""
    nb = box.neighbor_table
    rows = np.repeat(np.arange(box.size), nb.shape[1])
    cols = nb.ravel()
    keep = cols >= 0
    vals = np.full(keep.sum(), 1.0 / (2 * box.d))
    return scipy.sparse.csr_matrix((vals, (rows[keep], cols[keep])), shape=(box.size, box.size))


def precision_matrix(box: BoxSpec) -> scipy.sparse.csc_matrix:
    """``I - P_B``, the precision matrix of the Dirichlet field on ``box``."""
    return (scipy.sparse.identity(box.size, format="csr") - transition_matrix(box)).tocsc()


@dataclass
class GreensTable:
    """Expected-occupation table ``G(x, y)``.

    Box mode holds the dense inverse of ``I - P_B``; free mode evaluates on
    demand and memoises by offset.
    """

    d: int
    mode: str
    box: BoxSpec | None = None
    dense: np.ndarray | None = field(default=None, repr=False)
    _memo: dict = field(default_factory=dict, repr=False)

    def __call__(self, x: Sequence[int], y: Sequence[int]) -> float:
        if self.mode == "box":
            i, j = self.box.index(x), self.box.index(y)
            if i < 0 or j < 0:
                raise OracleError("box-killed Green's function needs both points in the box")
            return float(self.dense[i, j])
        off = tuple(sorted(abs(int(a) - int(b)) for a, b in zip(x, y)))
        if off not in self._memo:
            self._memo[off] = free_greens(self.d, off)
        return self._memo[off]


def greens_table(mode: str, d: int, box: BoxSpec | None = None, max_vertices: int = 6000) -> GreensTable:
    _check_mode(mode)
    if mode == "torus":
        raise OracleError("the walk on a finite torus is recurrent; its Green's function diverges")
    if mode == "free":
        if d < 3:
            raise OracleError(f"free Green's function diverges for recurrent d={d}")
        return GreensTable(d, "free")
    if box is None:
        raise OracleError("box mode needs a box")
    if box.size > max_vertices:
        raise OracleError(f"dense Green's table for {box.size} vertices exceeds max_vertices={max_vertices}")
    Q = precision_matrix(box).toarray()
    return GreensTable(d, "box", box, dense=np.linalg.inv(Q))


def box_greens_column(box: BoxSpec, y: Sequence[int]) -> np.ndarray:
    """``G_B(., y)`` by one sparse solve."""
    j = box.index(y)
    if j < 0:
        raise OracleError("y must lie in the box")
    e = np.zeros(box.size)
    e[j] = 1.0
    return scipy.sparse.linalg.spsolve(precision_matrix(box), e)


def _ive_asymptotic_coeffs(n: int, order: int) -> list[float]:
    # e^{-z} I_n(z) ~ (2 pi z)^{-1/2} sum_j (-1)^j a_j / z^j
    mu = 4.0 * n * n
    coeffs, a = [], 1.0
    for j in range(order + 1):
        coeffs.append((-1) ** j * a)
        a *= (mu - (2 * j + 1) ** 2) / ((j + 1) * 8.0)
    return coeffs


def free_greens(d: int, x: Sequence[int], T: float = 4000.0) -> float:
    """``G(0, x)`` on Z^d, ``d >= 3``.

    Uses ``G(0,x) = int_0^inf prod_i e^{-t/d} I_{x_i}(t/d) dt`` (the Fourier
    integral with ``1/(1 - phi) = int e^{-t(1-phi)} dt`` done first), integrated
    numerically on ``[0, T]`` plus a four-term asymptotic tail.
    """
    if d < 3:
        raise OracleError(f"free Green's function diverges for recurrent d={d}")
    x = [abs(int(c)) for c in x]
    if len(x) != d:
        raise OracleError("x must have d coordinates")

    def f(t):
        return float(np.prod(scipy.special.ive(x, t / d)))

    breaks = [0.0, 1.0, 10.0, 100.0, 1000.0, T]
    head = sum(
        scipy.integrate.quad(f, a, b, limit=400, epsabs=1e-14, epsrel=1e-13)[0] for a, b in zip(breaks, breaks[1:])
    )
    # tail: product of asymptotic series in z = t/d
    order = 4
    poly = np.zeros(order + 1)
    poly[0] = 1.0
    for n in x:
        c = np.array(_ive_asymptotic_coeffs(n, order))
        poly = np.convolve(poly, c)[: order + 1]
    tail = 0.0
    for j, cj in enumerate(poly):
        # int_T^inf (2 pi t/d)^{-d/2} (t/d)^{-j} dt
        p = d / 2 + j
        tail += cj * (2 * math.pi) ** (-d / 2) * d ** p * T ** (1 - p) / (p - 1)
    return head + tail


def greens_function(mode: str, x: Sequence[int], y: Sequence[int], box: BoxSpec | None = None) -> float:
    """``G(x, y)``; ``mode`` is ``"free"`` (needs d >= 3) or ``"box"``."""
    _check_mode(mode)
    d = len(x)
    if mode == "torus":
        raise OracleError("the walk on a finite torus is recurrent; its Green's function diverges")
    if mode == "free":
        return free_greens(d, [a - b for a, b in zip(x, y)])
    if box is None:
        raise OracleError("box mode needs a box")
    i = box.index(x)
    if i < 0 or box.index(y) < 0:
        raise OracleError("box-killed Green's function needs both points in the box")
    return float(box_greens_column(box, y)[i])


def greens_series_check(d: int, K: int = 20000) -> tuple[float, float, float]:
    """``G(0,0)`` as a truncated return-probability series plus a tail estimate.

    Returns ``(partial_sum, tail_estimate, tail_error_bound)``.  The tail uses
    ``r_k ~ r_K (K/k)^{d/2}`` over even ``k > K``; its relative error is
    ``O(1/K)``, which gives the bound.
    """
    if K % 2:
        K += 1
    r = return_series(d, K)
    partial = float(r.sum())
    s = d / 2
    # sum over even k = K + 2j, j >= 1, of (K/k)^s = (K/2)^s * zeta(s, K/2 + 1)
    tail = float(r[K] * (K / 2) ** s * scipy.special.zeta(s, K / 2 + 1))
    return partial, tail, tail * 4.0 / K


# ---------------------------------------------------------------------------
# loop masses


def loop_mass_series(
    region: BoxSpec | Iterable[Sequence[int]],
    K: int,
    mode: str,
    d: int | None = None,
    box: BoxSpec | None = None,
    table: KernelTable | None = None,
    alpha: float = ALPHA,
) -> np.ndarray:
    """``Lambda_k(region) = (alpha/k) sum_{x in region} p_k(x, x)`` for ``k = 0..K``.

    Entries ``k < 2`` are zero: there are no nontrivial loops that short.
    """
    _check_mode(mode)
    if isinstance(region, BoxSpec):
        d = region.d
        if mode != "free" and box is None:
            box = region
    else:
        region = [tuple(v) for v in region]
        d = d or len(region[0])
    if table is None:
        table = KernelTable(d, mode, K, box if mode != "free" else None)
    tr = table.trace_series(region)[: K + 1]
    out = np.zeros(K + 1)
    k = np.arange(2, K + 1)
    out[2:] = alpha * tr[2:] / k
    return out


def loop_mass_by_length(
    region: BoxSpec | Iterable[Sequence[int]],
    k: int,
    mode: str,
    d: int | None = None,
    box: BoxSpec | None = None,
    alpha: float = ALPHA,
) -> float:
    """Poisson mean of loops of length ``k`` rooted in ``region``."""
    if k < 2:
        raise OracleError(f"no nontrivial discrete loops of length {k} < 2")
    return float(loop_mass_series(region, k, mode, d=d, box=box, alpha=alpha)[k])


# ---------------------------------------------------------------------------
# loop-count scaling checks


def _return_tail_sums(d: int, L_values: Iterable[int], i: int, K: int) -> dict[int, float]:
    """``sum_{k >= L} k^i r_k / 2`` with the ``k > K`` tail from ``r_k ~ r_K (K/k)^{d/2}``."""
    if K % 2:
        K += 1
    r = return_series(d, K)
    ks = np.arange(K + 1)
    s = d / 2 - i
    tail = r[K] * K ** (d / 2) * 2.0**-s * scipy.special.zeta(s, K / 2 + 1)
    out = {}
    for L in L_values:
        out[L] = ALPHA * (float(np.sum((ks[L:] ** float(i)) * r[L:])) + tail)
    return out


def loop_count_scaling_check(
    d: int,
    L_grid: Sequence[int],
    i: int = 0,
    K: int = 4096,
) -> list[dict]:
    """One-point loop tail sums against ``L^{i+1-d/2}``.

    The mass of loops of length ``k`` through 0 is bounded by ``(1/2) r_k``,
    the visit-weighted mass of loops rooted at 0; each row reports
    ``S(L) = sum_{k >= L} k^i r_k / 2`` and ``S(L) / L^{i+1-d/2}``.
    """
    if not i + 1 < d / 2:
        raise OracleError(f"need i + 1 < d/2 for a summable tail (d={d}, i={i})")
    if max(L_grid) > K // 2:
        raise OracleError("K too small for the requested L grid")
    sums = _return_tail_sums(d, L_grid, i, K)
    return [
        {"L": L, "i": i, "sum": sums[L], "ratio": sums[L] / L ** (i + 1 - d / 2)} for L in L_grid
    ]


def _free_series_to(d: int, x: Sequence[int], K: int) -> np.ndarray:
    return mix_axes([free_kernel_1d(K, int(c)) for c in x])


def two_point_loop_sum(d: int, offset: Sequence[int], L: int, K: int = 1024) -> float:
    """``(1/2) sum_{k >= L} sum_j p_j(0, w) p_{k-j}(w, 0)``, truncated at ``k <= K``.

    Rooted loops at 0 with a marked visit to ``w``; bounds the mass of loops of
    length at least ``L`` through both points.
    """
    if not any(offset):
        raise OracleError("offset must be nonzero")
    if d <= 4:
        raise OracleError(f"two-point loop tails are not summable at d={d}")
    p = _free_series_to(d, offset, K)
    conv = np.convolve(p, p)[: K + 1]
    return float(ALPHA * conv[L:].sum())


def two_point_scaling_check(d: int, offset: Sequence[int], L_grid: Sequence[int], K: int = 1024) -> list[dict]:
    dist = linf(offset)
    rows = []
    for L in L_grid:
        s = two_point_loop_sum(d, offset, L, K)
        rows.append({"L": L, "offset": tuple(offset), "sum": s, "ratio": s / (L ** (1 - d / 2) * dist ** (2 - d))})
    return rows


def short_loop_two_point_sum(d: int, offset: Sequence[int], kappa: float, K: int = 1024) -> dict:
    """Mass of loops through 0 and ``w`` no longer than ``|w|^{2(1-kappa)}``, against ``exp(-|w|^{2 kappa}/4)``."""
    dist = linf(offset)
    Lmax = int(math.floor(dist ** (2 * (1 - kappa))))
    p = _free_series_to(d, offset, max(K, Lmax))
    conv = np.convolve(p, p)[: Lmax + 1]
    s = float(ALPHA * conv.sum())
    bound = math.exp(-(dist ** (2 * kappa)) / 4)
    return {"offset": tuple(offset), "kappa": kappa, "L_max": Lmax, "sum": s, "ratio": s / bound}


def three_point_loop_mass(d: int, u: Sequence[int], v: Sequence[int], w: Sequence[int]) -> dict:
    """Marked three-point loop mass ``(1/2) G(u,v) G(v,w) G(w,u)`` against the product bound."""
    g = GreensTable(d, "free")
    m = ALPHA * g(u, v) * g(v, w) * g(w, u)
    bound = (linf(u, v) * linf(v, w) * linf(w, u)) ** (2 - d)
    return {"mass": m, "ratio": m / bound}


# ---------------------------------------------------------------------------
# convolution inequality


def _shell_counts(dim: int, R: int) -> np.ndarray:
    m = np.arange(R + 1)
    out = (2 * m + 1.0) ** dim - np.where(m > 0, (2 * m - 1.0) ** dim, 0.0)
    return out


def axis_convolution_sum(a1: float, a2: float, d: int, n: int, R: int) -> float:
    """``sum_{|z| <= R} max(|z|,1)^{a1} max(|z - n e_1|,1)^{a2}`` (l-infinity norms).

    The summand depends on ``z`` only through ``z_1`` and the l-infinity norm of
    the other coordinates, so the sum runs over shells.
    """
    z1 = np.arange(-R, R + 1)[:, None]
    m = np.arange(R + 1)[None, :]
    w = _shell_counts(d - 1, R)[None, :] if d > 1 else np.where(m == 0, 1.0, 0.0)
    r1 = np.maximum(np.maximum(np.abs(z1), m), 1).astype(float)
    r2 = np.maximum(np.maximum(np.abs(z1 - n), m), 1).astype(float)
    return float(np.sum(w * r1**a1 * r2**a2))


def convolution_inequality_check(
    a1: float, a2: float, d: int, R: int = 128, dists: Sequence[int] = (2, 4, 8)
) -> list[dict]:
    """Truncated lattice sums against ``|x - y|^{a1 + a2 + d}``; reports the empirical constant."""
    if not min(a1, a2) > -d:
        raise OracleError("need min(a1, a2) > -d")
    rows = []
    for n in dists:
        s = axis_convolution_sum(a1, a2, d, n, R)
        s2 = axis_convolution_sum(a1, a2, d, n, 2 * R)
        rows.append(
            {
                "dist": n,
                "sum": s,
                "constant": s / n ** (a1 + a2 + d) if n else float("nan"),
                "doubling_change": (s2 - s) / s,
            }
        )
    return rows
