"""Geometry of Z^d: boxes, boundaries, norms and dense box indexing.

Adjacency is always l1-distance one.  Box membership and the ``|x|`` used by
the estimators are l-infinity.  Both norms are exposed by name; nothing in the
package measures a "distance" without saying which one.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

Vertex = tuple[int, ...]

OUTSIDE = -1  # sentinel index for vertices outside a box


class LatticeError(ValueError):
    pass


@dataclass(frozen=True)
class LatticeParams:
    d: int

    def __post_init__(self):
        if int(self.d) < 1:
            raise LatticeError(f"dimension must be >= 1, got {self.d}")

    def require_transient(self) -> None:
        if self.d < 3:
            raise LatticeError(f"d={self.d} is recurrent; the model needs d >= 3")


def linf(x: Sequence[int], y: Sequence[int] | None = None) -> int:
    a = np.asarray(x, dtype=np.int64)
    if y is not None:
        a = a - np.asarray(y, dtype=np.int64)
    return int(np.max(np.abs(a))) if a.size else 0


def l1(x: Sequence[int], y: Sequence[int] | None = None) -> int:
    a = np.asarray(x, dtype=np.int64)
    if y is not None:
        a = a - np.asarray(y, dtype=np.int64)
    return int(np.sum(np.abs(a)))


def origin(d: int) -> Vertex:
    return (0,) * d


def unit(d: int, axis: int, length: int = 1) -> Vertex:
    v = [0] * d
    v[axis] = length
    return tuple(v)


def neighbor_offsets(d: int) -> np.ndarray:
    """The 2d unit steps, ordered +e_0, -e_0, +e_1, -e_1, ..."""
    off = np.zeros((2 * d, d), dtype=np.int64)
    for i in range(d):
        off[2 * i, i] = 1
        off[2 * i + 1, i] = -1
    return off


@dataclass(frozen=True)
class BoxSpec:
    """The l-infinity box ``B(center, radius)`` with row-major dense indexing."""

    center: Vertex
    radius: int
    d: int = field(init=False)

    def __post_init__(self):
        c = tuple(int(v) for v in self.center)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "d", len(c))
        if self.d < 1:
            raise LatticeError("box center must have at least one coordinate")
        if int(self.radius) < 0:
            raise LatticeError(f"radius must be nonnegative, got {self.radius}")
        object.__setattr__(self, "radius", int(self.radius))

    @classmethod
    def centered(cls, d: int, radius: int) -> "BoxSpec":
        return cls(origin(d), radius)

    @property
    def side(self) -> int:
        return 2 * self.radius + 1

    @property
    def size(self) -> int:
        return self.side**self.d

    def __len__(self) -> int:
        return self.size

    @cached_property
    def strides(self) -> np.ndarray:
        return np.array([self.side ** (self.d - 1 - i) for i in range(self.d)], dtype=np.int64)

    def contains(self, v: Sequence[int]) -> bool:
        return linf(v, self.center) <= self.radius

    def __contains__(self, v) -> bool:
        return len(v) == self.d and self.contains(v)

    def index(self, v: Sequence[int]) -> int:
        """Dense index of ``v``, or ``OUTSIDE`` if ``v`` is not in the box."""
        rel = np.asarray(v, dtype=np.int64) - np.asarray(self.center, dtype=np.int64)
        if rel.shape != (self.d,) or np.any(np.abs(rel) > self.radius):
            return OUTSIDE
        return int(np.dot(rel + self.radius, self.strides))

    def indices(self, coords: np.ndarray) -> np.ndarray:
        """Vectorised ``index`` over an ``(n, d)`` array."""
        rel = np.asarray(coords, dtype=np.int64) - np.asarray(self.center, dtype=np.int64)
        inside = np.all(np.abs(rel) <= self.radius, axis=-1)
        idx = (rel + self.radius) @ self.strides
        return np.where(inside, idx, OUTSIDE)

    def vertex(self, i: int) -> Vertex:
        if not 0 <= i < self.size:
            raise IndexError(i)
        out = []
        for s in self.strides:
            q, i = divmod(int(i), int(s))
            out.append(q - self.radius)
        return tuple(c + o for c, o in zip(self.center, out))

    @cached_property
    def coords(self) -> np.ndarray:
        """All vertices as an ``(size, d)`` array in index order."""
        axes = [np.arange(-self.radius, self.radius + 1) + c for c in self.center]
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grid], axis=1).astype(np.int64)

    def vertices(self) -> Iterable[Vertex]:
        for row in self.coords:
            yield tuple(int(c) for c in row)

    @cached_property
    def linf_from_center(self) -> np.ndarray:
        return np.max(np.abs(self.coords - np.asarray(self.center)), axis=1)

    @cached_property
    def edges(self) -> np.ndarray:
        """Edges with both endpoints in the box as an ``(E, 2)`` index array.

        Ordered by axis, then by the lower endpoint's index.
        """
        out = []
        rel = self.coords - np.asarray(self.center)
        base = np.arange(self.size, dtype=np.int64)
        for axis in range(self.d):
            lower = base[rel[:, axis] < self.radius]
            out.append(np.stack([lower, lower + self.strides[axis]], axis=1))
        if not out:
            return np.zeros((0, 2), dtype=np.int64)
        return np.concatenate(out).astype(np.int64)

    @cached_property
    def edge_axes(self) -> np.ndarray:
        rel = self.coords - np.asarray(self.center)
        return np.concatenate(
            [np.full(int(np.sum(rel[:, a] < self.radius)), a, dtype=np.int64) for a in range(self.d)]
        )

    @cached_property
    def neighbor_table(self) -> np.ndarray:
        """``(size, 2d)`` neighbor indices in ``neighbor_offsets`` order, ``OUTSIDE`` off-box."""
        nb = np.empty((self.size, 2 * self.d), dtype=np.int64)
        for j, off in enumerate(neighbor_offsets(self.d)):
            nb[:, j] = self.indices(self.coords + off)
        return nb

    def sub_box(self, radius: int) -> "BoxSpec":
        return BoxSpec(self.center, radius)

    def inside(self, other: "BoxSpec") -> bool:
        """True if this box is contained in ``other``."""
        return linf(self.center, other.center) + self.radius <= other.radius


def box_boundary(box: BoxSpec) -> set[Vertex]:
    """Vertices of ``box`` with an l1-neighbor outside the box."""
    return {tuple(int(c) for c in box.coords[i]) for i in np.flatnonzero(boundary_mask(box))}


def boundary_mask(box: BoxSpec) -> np.ndarray:
    return box.linf_from_center == box.radius


def ext_distance(a: Iterable[Sequence[int]], b: Iterable[Sequence[int]]) -> int:
    """Minimum l-infinity distance between two nonempty vertex sets."""
    A = np.asarray([tuple(v) for v in a], dtype=np.int64)
    B = np.asarray([tuple(v) for v in b], dtype=np.int64)
    if A.size == 0 or B.size == 0:
        raise LatticeError("ext_distance needs two nonempty vertex sets")
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise LatticeError("vertex sets must share one dimension")
    best = None
    # chunk to bound the pairwise array
    step = max(1, 2_000_000 // max(1, len(B)))
    for s in range(0, len(A), step):
        dist = np.max(np.abs(A[s : s + step, None, :] - B[None, :, :]), axis=2).min()
        best = dist if best is None else min(best, dist)
    return int(best)


def is_near(v: Sequence[int], a: Iterable[Sequence[int]]) -> bool:
    """The ``v ~ A`` predicate: l-infinity distance at most one."""
    return ext_distance([v], a) <= 1


def hyperoctahedral_orbit(v: Sequence[int]) -> list[Vertex]:
    """All images of ``v`` under coordinate permutations and sign flips."""
    mags = tuple(abs(int(c)) for c in v)
    seen = set()
    for perm in set(itertools.permutations(mags)):
        nz = [i for i, c in enumerate(perm) if c]
        for signs in itertools.product((1, -1), repeat=len(nz)):
            w = list(perm)
            for i, s in zip(nz, signs):
                w[i] *= s
            seen.add(tuple(w))
    return sorted(seen)


class VertexRegion:
    """An arbitrary finite vertex set with dense indexing, duck-typed like ``BoxSpec``.

    ``frame`` is the box the set is understood to live in (used for margin
    checks); vertices keep the order given.
    """

    def __init__(self, coords: np.ndarray, frame: BoxSpec | None = None):
        self.coords = np.ascontiguousarray(np.asarray(coords, dtype=np.int64).reshape(len(coords), -1))
        self.d = self.coords.shape[1]
        self.frame = frame
        self._lookup = {tuple(int(c) for c in row): i for i, row in enumerate(self.coords)}
        if len(self._lookup) != len(self.coords):
            raise LatticeError("VertexRegion coordinates must be distinct")

    @property
    def size(self) -> int:
        return len(self.coords)

    def __len__(self) -> int:
        return self.size

    def index(self, v: Sequence[int]) -> int:
        return self._lookup.get(tuple(int(c) for c in v), OUTSIDE)

    def indices(self, coords: np.ndarray) -> np.ndarray:
        return np.array([self.index(row) for row in np.asarray(coords)], dtype=np.int64)

    def vertex(self, i: int) -> Vertex:
        return tuple(int(c) for c in self.coords[i])

    def contains(self, v: Sequence[int]) -> bool:
        return self.index(v) != OUTSIDE

    def __contains__(self, v) -> bool:
        return len(v) == self.d and self.contains(v)

    def vertices(self) -> Iterable[Vertex]:
        for i in range(self.size):
            yield self.vertex(i)
