import numpy as np
import pytest
from scipy import stats

from cablegff.explore import ExploreError, explore_cluster, origin_positive
from cablegff.lattice import BoxSpec
from cablegff.loop_route import cable_gluing, delete_large_loops, lift_local_times, sample_loop_soup

ORIGIN = (0, 0, 0)


def _explorer_stats(n, cutoff):
    size, lt = [], []
    for r in range(n):
        p = explore_cluster(3, 1, r, 3, K_max=16)
        size.append(len(p.cluster_map(cutoff).cluster_of(ORIGIN)))
        lt.append(p.local_times(cutoff)[0])
    return np.array(size), np.array(lt)


def _soup_stats(n, cutoff):
    box = BoxSpec.centered(3, 3)
    size, lt = [], []
    for r in range(n):
        s = delete_large_loops(lift_local_times(sample_loop_soup(box, 16, "box", 2, r)), cutoff)
        size.append(len(cable_gluing(s, signed=False).cluster_of(ORIGIN)))
        lt.append(s.total_local_times[box.index(ORIGIN)])
    return np.array(size), np.array(lt)


@pytest.mark.parametrize("cutoff", [16, 4])
def test_explorer_matches_full_soup(cutoff):
    n = 8000
    a_size, a_lt = _explorer_stats(n, cutoff)
    b_size, b_lt = _soup_stats(n, cutoff)
    assert stats.ks_2samp(a_size, b_size).pvalue > 1e-3
    assert stats.ks_2samp(a_lt, b_lt).pvalue > 1e-3
    se = np.hypot(a_size.std(), b_size.std()) / np.sqrt(n)
    assert abs(a_size.mean() - b_size.mean()) < 4 * se


def test_filters_are_monotone_on_one_patch():
    for r in range(200):
        p = explore_cluster(3, 5, r, 4, K_max=32)
        prev = None
        for c in (0, 2, 4, 8, 32):
            m = p.open_mask(c)
            if prev is not None:
                assert np.all(m[prev])
            prev = m
        full = p.open_mask()
        sub = p.open_mask(sub_radius=2)
        assert np.all(full[sub])
        d_full, d_sub = p.origin_distances(), p.origin_distances(sub_radius=2)
        reach = d_sub >= 0
        assert np.all(d_full[reach] >= 0) and np.all(d_full[reach] <= d_sub[reach])


def test_depth_cap_and_truncation():
    p = explore_cluster(3, 0, 3, 6, K_max=32, max_depth=2)
    dist = p.origin_distances()
    assert dist.max() <= 3
    big = [explore_cluster(3, 0, r, 6, K_max=64, max_vertices=5) for r in range(50)]
    assert any(q.truncated for q in big)
    assert not explore_cluster(3, 0, 0, 6, K_max=64).truncated


def test_explore_radius_limits_queries():
    p = explore_cluster(3, 0, 0, 6, K_max=16, explore_radius=2)
    p.open_mask(sub_radius=2)
    with pytest.raises(ExploreError):
        p.open_mask()
    with pytest.raises(ExploreError):
        explore_cluster(7, 0, 0, 10**6)


def test_signed_origin_cluster():
    signs = [origin_positive(0, r) for r in range(4000)]
    assert abs(np.mean(signs) - 0.5) < 4 * 0.5 / np.sqrt(4000)
    for r in range(20):
        cm = explore_cluster(3, 0, r, 3, K_max=16).cluster_map(signed=True)
        assert (cm.labels[0] >= 0) == origin_positive(0, r)


def test_reproducible():
    a = explore_cluster(7, 11, 4, 8, K_max=64)
    b = explore_cluster(7, 11, 4, 8, K_max=64)
    assert np.array_equal(a.coords, b.coords) and np.array_equal(a.edge_uniform, b.edge_uniform)
