import numpy as np
import pytest
from scipy import stats

from cablegff import walk_oracle as wo
from cablegff.cluster_geometry import connected
from cablegff.lattice import BoxSpec, neighbor_offsets
from cablegff.loop_route import (
    LoopSampleError,
    RootedLoop,
    cable_gluing,
    delete_large_loops,
    expected_loop_counts,
    glue_probability,
    lift_local_times,
    multiplicity,
    read_loop_dump,
    sample_loop_soup,
    truncation_sweep,
    write_loop_dump,
)


def test_length_two_single_vertex():
    box = BoxSpec.centered(7, 0)
    assert abs(expected_loop_counts(box, 2, "free", pad=0)[2] - 1 / 56) < 1e-15
    n, dirs = 0, []
    for rep in range(20000):
        s = sample_loop_soup(box, 2, "free", 1, rep, pad=0)
        n += len(s)
        for lp in s.loops():
            assert lp.root == (0,) * 7 and lp.length == 2
            dirs.append(lp.steps[0])
    assert abs(n / 20000 - 1 / 56) < 3 * np.sqrt(1 / 56 / 20000)
    assert len(set(dirs)) > 8


def test_mass_matches_oracle():
    box = BoxSpec.centered(3, 2)
    mass = expected_loop_counts(box, 10, "box")
    assert np.allclose(mass, wo.loop_mass_series(box, 10, "box"), atol=1e-15)
    assert np.all(mass[1::2] == 0)


def test_loops_valid_and_inside():
    box = BoxSpec.centered(3, 2)
    for rep in range(50):
        s = sample_loop_soup(box, 16, "box", 2, rep)
        assert np.all(s.lengths % 2 == 0) and np.all(s.lengths <= 16)
        for lp in s.loops():
            assert lp.is_closed()
            assert all(box.contains(v) for v in lp.vertices())
            J = lp.multiplicity
            assert lp.length % J == 0
            p = lp.length // J
            assert lp.steps == lp.steps[:p] * J


def test_multiplicity():
    assert multiplicity((0, 1, 0, 1)) == 2
    assert multiplicity((0, 1, 1, 0)) == 1
    assert multiplicity((2, 3) * 3) == 3


def test_mean_count_of_length_four():
    box = BoxSpec.centered(3, 2)
    lam = expected_loop_counts(box, 4, "box")[4]
    c = np.array([sample_loop_soup(box, 4, "box", 3, r).counts_by_length()[4] for r in range(10000)])
    assert abs(c.mean() - lam) < 3 * np.sqrt(lam / len(c))


def test_diameter_grows_with_length():
    box = BoxSpec.centered(3, 40)
    diam = {16: [], 64: []}
    for rep in range(300):
        s = sample_loop_soup(box, 64, "torus", 4, rep)
        for lp in s.loops():
            if lp.length in diam:
                v = np.array(lp.vertices())
                diam[lp.length].append(np.max(v.max(0) - v.min(0)))
    assert len(diam[64]) > 5
    assert np.median(diam[64]) > np.median(diam[16])


def test_local_times():
    box = BoxSpec.centered(3, 2)
    counts, times = [], []
    for rep in range(400):
        s = lift_local_times(sample_loop_soup(box, 12, "box", 5, rep))
        nv = s.meta["visit_counts"]
        assert np.all(s.local_times[nv == 0] == 0)
        assert np.all(s.point_loop_times > 0)
        counts.append(nv)
        times.append(s.local_times)
    counts, times = np.concatenate(counts), np.concatenate(times)
    for n in (1, 2):
        t = times[counts == n]
        assert abs(t.mean() - n) < 4 * np.sqrt(n / len(t))


def test_point_times_stationary_on_torus():
    box = BoxSpec.centered(3, 3)
    a, b = [], []
    for rep in range(2000):
        s = lift_local_times(sample_loop_soup(box, 4, "torus", 6, rep))
        a.append(s.point_loop_times[box.index((0, 0, 0))])
        b.append(s.point_loop_times[box.index((3, 3, 3))])
    assert stats.ks_2samp(a, b).pvalue > 1e-3
    assert stats.kstest(a, stats.gamma(0.5).cdf).pvalue > 1e-3


def test_gluing_rules():
    box = BoxSpec.centered(3, 3)
    with pytest.raises(LoopSampleError):
        cable_gluing(sample_loop_soup(box, 8, "box", 0, 0))
    with pytest.raises(LoopSampleError):
        cable_gluing(lift_local_times(sample_loop_soup(box, 8, "torus", 0, 0)))
    assert glue_probability(0.0, 5.0, 3) == 0
    for rep in range(30):
        s = lift_local_times(sample_loop_soup(box, 16, "box", 7, rep))
        cm = cable_gluing(s, signed=False)
        for lp in s.loops():
            vs = lp.vertices()
            assert all(connected(cm, vs[0], v) for v in vs)
        for lab, ids in (cm.loop_members or {}).items():
            for i in ids:
                assert cm.labels[box.index(s.loop(i).root)] == lab


def test_deletion_is_a_pure_filter():
    box = BoxSpec.centered(3, 3)
    for rep in range(30):
        s = lift_local_times(sample_loop_soup(box, 32, "box", 8, rep))
        same = delete_large_loops(s, 32)
        assert np.array_equal(same.ids, s.ids) and np.allclose(same.local_times, s.local_times)
        assert len(delete_large_loops(s, 0)) == 0
        filt = delete_large_loops(s, 6)
        assert np.all(filt.lengths <= 6)
        assert np.array_equal(filt.point_loop_times, s.point_loop_times)
        full_cm = cable_gluing(s, signed=False)
        filt_cm = cable_gluing(filt, signed=False)
        lf, lu = filt_cm.labels, full_cm.labels
        for lab in np.unique(lf[lf >= 0]):
            members = np.flatnonzero(lf == lab)
            assert len(np.unique(lu[members])) == 1


def test_truncation_sweep_loop_count():
    box = BoxSpec.centered(3, 2)
    rep = truncation_sweep(box, [8, 16, 32], "loop_count", replicas=200, seed=0)
    rows = rep["rows"]
    mass = expected_loop_counts(box, 32, "box")
    assert rows[1]["exact_mean"] - rows[0]["exact_mean"] == pytest.approx(mass[9:17].sum())
    d1 = rows[1]["exact_mean"] - rows[0]["exact_mean"]
    d2 = rows[2]["exact_mean"] - rows[1]["exact_mean"]
    assert d2 < d1
    with pytest.raises(LoopSampleError):
        truncation_sweep(box, [16, 8], "loop_count", replicas=2)


def test_loop_dump_roundtrip(tmp_path):
    s = sample_loop_soup(BoxSpec.centered(2, 3), 12, "box", 9, 1)
    meta, loops = read_loop_dump(write_loop_dump(s, tmp_path / "l.txt"))
    assert meta["K_max"] == "12"
    assert loops == list(s.loops())
    (tmp_path / "bad.txt").write_text("# something else\n")
    with pytest.raises(LoopSampleError):
        read_loop_dump(tmp_path / "bad.txt")


def test_sampler_errors():
    with pytest.raises(LoopSampleError):
        sample_loop_soup(BoxSpec.centered(2, 1), 1)
    with pytest.raises(LoopSampleError):
        RootedLoop(0, (0, 0), (0, 0)).vertices()
