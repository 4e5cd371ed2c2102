import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cablegff.lattice import (
    OUTSIDE,
    BoxSpec,
    LatticeError,
    LatticeParams,
    box_boundary,
    ext_distance,
    hyperoctahedral_orbit,
    is_near,
    l1,
    linf,
)


def brute_boundary(box):
    verts = set(box.vertices())
    out = set()
    for v in verts:
        for i in range(box.d):
            for s in (1, -1):
                w = list(v)
                w[i] += s
                if tuple(w) not in verts:
                    out.add(v)
    return out


def test_boundary_small_cases():
    assert len(box_boundary(BoxSpec.centered(2, 1))) == 8
    assert box_boundary(BoxSpec.centered(1, 0)) == {(0,)}
    assert len(box_boundary(BoxSpec.centered(3, 2))) == 5**3 - 3**3


@pytest.mark.parametrize("d,r", [(d, r) for d in range(1, 5) for r in range(1, 6) if (2 * r + 1) ** d <= 20000])
def test_boundary_is_outer_shell(d, r):
    box = BoxSpec.centered(d, r)
    b = box_boundary(box)
    assert b == brute_boundary(box)
    shell = {v for v in box.vertices() if linf(v) == r}
    assert b == shell


def test_box_size_and_membership():
    box = BoxSpec((1, -2), 2)
    assert box.size == 25
    assert box.contains((3, 0)) and not box.contains((4, 0))
    assert box.index((9, 9)) == OUTSIDE


@given(st.integers(1, 4), st.integers(0, 3), st.data())
@settings(max_examples=40, deadline=None)
def test_index_roundtrip(d, r, data):
    center = tuple(data.draw(st.integers(-3, 3)) for _ in range(d))
    box = BoxSpec(center, r)
    for i in range(box.size):
        assert box.index(box.vertex(i)) == i
    assert np.array_equal(box.indices(box.coords), np.arange(box.size))


def test_edges_are_l1_adjacent_and_complete():
    box = BoxSpec.centered(3, 1)
    e = box.edges
    diffs = np.abs(box.coords[e[:, 0]] - box.coords[e[:, 1]]).sum(axis=1)
    assert np.all(diffs == 1)
    assert len(e) == 3 * 3 * 3 * 2


def test_ext_distance():
    assert ext_distance([(0, 0)], [(3, 0)]) == 3
    a = [(1, 2), (0, 0)]
    assert ext_distance(a, a) == 0
    assert ext_distance([(0, 0)], box_boundary(BoxSpec.centered(2, 5))) == 5
    with pytest.raises(LatticeError):
        ext_distance([], [(0, 0)])
    assert is_near((1, 1), [(0, 0)]) and not is_near((2, 0), [(0, 0)])


def test_norms_and_params():
    assert linf((3, -4)) == 4 and l1((3, -4)) == 7
    with pytest.raises(LatticeError):
        LatticeParams(0)
    with pytest.raises(LatticeError):
        LatticeParams(2).require_transient()


def test_orbit_sizes():
    assert len(hyperoctahedral_orbit((2, 0, 0, 0, 0, 0, 0))) == 14
    assert len(hyperoctahedral_orbit((1, 1))) == 4
    for v in hyperoctahedral_orbit((1, 2, 0)):
        assert sorted(map(abs, v)) == [0, 1, 2]
