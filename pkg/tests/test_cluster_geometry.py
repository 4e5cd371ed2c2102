import numpy as np
import pytest
from scipy.sparse.csgraph import floyd_warshall
from scipy.sparse import csr_matrix

from cablegff.cluster_geometry import (
    DISTANCE_UNIT,
    ClusterMap,
    MarginError,
    RegionError,
    chemical_distance,
    connected,
    connected_within,
    export_labels_csv,
    intrinsic_ball,
    one_arm,
)
from cablegff.gff_route import gff_cluster_map
from cablegff.lattice import BoxSpec, LatticeError, linf


def path_map(box, points, active=None):
    idx = [box.index(p) for p in points]
    edges = np.array(list(zip(idx, idx[1:])), dtype=np.int64)
    act = np.zeros(box.size, dtype=bool)
    act[idx] = True
    if active is not None:
        act[:] = active
    return ClusterMap.from_edges(box, act, edges)


def line(n, d=2):
    return [(i,) + (0,) * (d - 1) for i in range(n)]


def test_connected_basics():
    box = BoxSpec.centered(2, 6)
    cm = path_map(box, line(4))
    assert connected(cm, (0, 0), (0, 0))
    assert connected(cm, (0, 0), (3, 0))
    assert not connected(cm, (0, 0), (4, 0))
    with pytest.raises(RegionError):
        connected(cm, (0, 0), (7, 0))


def test_connected_within_middle_edge_outside():
    box = BoxSpec.centered(2, 4)
    pts = [(-1, 0), (-1, 1), (-1, 2), (0, 2), (1, 2), (1, 1), (1, 0)]
    cm = path_map(box, pts)
    sub = BoxSpec.centered(2, 1)
    assert connected(cm, (-1, 0), (1, 0))
    assert not connected_within(cm, sub, (-1, 0), (1, 0))
    assert connected_within(cm, BoxSpec.centered(2, 2), (-1, 0), (1, 0))
    with pytest.raises(RegionError):
        connected_within(cm, BoxSpec.centered(2, 5), (0, 0), (0, 0))


def test_one_arm():
    box = BoxSpec.centered(2, 8)
    cm = path_map(box, line(4))
    assert one_arm(cm, 3) and not one_arm(cm, 4)
    assert one_arm(cm, 0)
    empty = ClusterMap.from_edges(box, np.zeros(box.size, bool), np.zeros((0, 2)))
    assert not one_arm(empty, 0)
    with pytest.raises(MarginError):
        one_arm(cm, 5)


def test_chemical_distance_and_balls():
    box = BoxSpec.centered(2, 6)
    cm = path_map(box, line(6))
    assert chemical_distance(cm, (0, 0), (0, 0)) == 0
    assert chemical_distance(cm, (0, 0), (3, 0)) == 3
    assert chemical_distance(cm, (0, 0), (5, 0), cap=4) is None
    assert chemical_distance(cm, (0, 0), (0, 1)) is None
    ball = intrinsic_ball(cm, (0, 0), 5)
    assert ball.sphere == frozenset([(5, 0)])
    iso = path_map(box, [(0, 0)])
    b1 = intrinsic_ball(iso, (0, 0), 1)
    assert b1.members == frozenset([(0, 0)]) and not b1.sphere
    assert DISTANCE_UNIT == "lattice-edge"


def test_random_samples_bfs_vs_floyd_warshall_and_nesting():
    box = BoxSpec.centered(2, 3)
    for rep in range(30):
        cm = gff_cluster_map(box, 11, rep)
        assert np.array_equal(cm.labels, cm.labels_by_bfs())
        n = box.size
        e = cm.edges
        A = csr_matrix((np.ones(2 * len(e)), (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n))
        fw = floyd_warshall(A, unweighted=True)
        for i in range(0, n, 7):
            for j in range(0, n, 5):
                x, y = box.vertex(i), box.vertex(j)
                c = chemical_distance(cm, x, y)
                if cm.labels[i] >= 0 and cm.labels[i] == cm.labels[j]:
                    assert c == fw[i, j]
                    assert c >= linf(x, y)
                else:
                    assert c is None
        if cm.labels[box.index((0, 0))] >= 0:
            prev = frozenset()
            for r in range(6):
                b = intrinsic_ball(cm, (0, 0), r)
                assert prev <= b.members
                assert b.sphere == b.members - prev
                prev = b.members


def test_intrinsic_exit_implies_arm():
    box = BoxSpec.centered(2, 6)
    for rep in range(40):
        cm = gff_cluster_map(box, 5, rep)
        for r in (1, 2, 4):
            ball = intrinsic_ball(cm, (0, 0), r)
            for s in (1, 2, 3):
                if any(linf(v) > s for v in ball.members):
                    assert one_arm(cm, s)


def test_export_guard(tmp_path):
    box = BoxSpec.centered(2, 2)
    cm = path_map(box, line(2))
    p = export_labels_csv(cm, tmp_path / "l.csv")
    assert len(p.read_text().splitlines()) == box.size + 1
    with pytest.raises(LatticeError):
        export_labels_csv(cm, tmp_path / "m.csv", max_vertices=10)
