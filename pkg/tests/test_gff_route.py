import numpy as np
import pytest

from cablegff import walk_oracle as wo
from cablegff.gff_route import (
    CableConfig,
    Field,
    MemoryBudgetError,
    bridge_min_oracle,
    edge_open_probability,
    integrated_autocorrelation,
    load_field,
    open_edges,
    positive_clusters,
    read_edge_list,
    sample_dgff,
    sample_dgff_batch,
    save_field,
    write_edge_list,
)
from cablegff.lattice import BoxSpec


def test_single_vertex_variance():
    box = BoxSpec.centered(1, 0)
    phi = sample_dgff_batch(box, 3, np.arange(100_000))[:, 0]
    se = np.sqrt(2.0 / len(phi))
    assert abs(phi.var() - 1.0) < 3 * se
    assert abs(phi.mean()) < 3 / np.sqrt(len(phi))


def test_small_box_covariance():
    box = BoxSpec.centered(1, 1)
    phi = sample_dgff_batch(box, 4, np.arange(100_000))
    C = np.cov(phi.T)
    G = wo.greens_table("box", 1, box).dense
    assert np.allclose(G[1, 1], 2) and np.allclose(G[1, 2], 1)
    assert np.max(np.abs(C - G)) < 0.05


def test_batch_matches_single_draws():
    box = BoxSpec.centered(2, 2)
    batch = sample_dgff_batch(box, 9, np.arange(3))
    for r in range(3):
        assert np.allclose(batch[r], sample_dgff(box, 9, r).phi)


def test_heat_bath_covariance():
    box = BoxSpec.centered(2, 2)
    phis = np.array([sample_dgff(box, 2, r, method="heat-bath", sweeps=40).phi for r in range(3000)])
    G = wo.greens_table("box", 2, box).dense
    C = np.cov(phis.T)
    se = np.sqrt((G.diagonal()[:, None] * G.diagonal()[None, :] + G**2) / len(phis))
    assert np.all(np.abs(C - G) < 5 * se)


def test_autocorrelation_of_white_noise():
    x = np.random.default_rng(0).standard_normal(5000)
    assert integrated_autocorrelation(x) < 1.5


def test_memory_budget():
    with pytest.raises(MemoryBudgetError) as exc:
        sample_dgff(BoxSpec.centered(3, 6), 0, memory_budget=1000)
    assert exc.value.required > 1000


def test_edge_law_examples():
    assert edge_open_probability(0.0, 3.0, 7) == 0
    assert edge_open_probability(1.0, -2.0, 7) == 0
    assert np.isclose(edge_open_probability(2.0, 2.0, 7), 1 - np.exp(-4 / 7))
    assert np.isclose(edge_open_probability(-2.0, -2.0, 7), 1 - np.exp(-4 / 7))


def test_open_edges_invariants_and_monotonicity():
    box = BoxSpec.centered(2, 3)
    for rep in range(20):
        fld = sample_dgff(box, 1, rep)
        cfg = open_edges(fld)
        e = box.edges
        prod = fld.phi[e[:, 0]] * fld.phi[e[:, 1]]
        assert np.all(prod[cfg.open_edges] > 0)
        bigger = Field(box, np.where(fld.phi > 0, fld.phi * 1.5, fld.phi), fld.seed, fld.replica)
        cfg2 = open_edges(bigger)
        pos = (fld.phi[e[:, 0]] > 0) & (fld.phi[e[:, 1]] > 0)
        assert np.all(cfg2.open_edges[cfg.open_edges & pos])


def test_positive_clusters_hand_built():
    box = BoxSpec.centered(1, 3)
    phi = np.array([1.0, 2.0, -1.0, 0.5, 0.7, 0.9, -0.3])
    fld = Field(box, phi, 0)
    edges = box.edges
    want_open = {(0, 1), (3, 4)}
    is_open = np.array([tuple(sorted(map(int, r))) in want_open for r in edges])
    cm = positive_clusters(CableConfig(fld, is_open, np.sign(phi).astype(np.int8)))
    assert cm.labels.tolist() == [0, 0, -1, 3, 3, 5, -1]
    neg = Field(box, -np.abs(phi) - 0.1, 0)
    assert positive_clusters(open_edges(neg)).n_clusters() == 0


def test_positive_clusters_two_adjacent():
    box = BoxSpec.centered(1, 1)
    fld = Field(box, np.array([-1.0, 1.0, 1.0]), 0)
    is_open = np.array([False, True])
    cm = positive_clusters(CableConfig(fld, is_open, np.sign(fld.phi).astype(np.int8)))
    assert cm.n_clusters() == 1 and len(cm.cluster_of((0,))) == 2


def test_labels_independent_of_edge_order():
    box = BoxSpec.centered(2, 3)
    fld = sample_dgff(box, 8, 0)
    cfg = open_edges(fld)
    cm = positive_clusters(cfg)
    from cablegff.cluster_geometry import ClusterMap

    perm = np.random.default_rng(1).permutation(int(cfg.open_edges.sum()))
    cm2 = ClusterMap.from_edges(box, fld.phi > 0, box.edges[cfg.open_edges][perm])
    assert np.array_equal(cm.labels, cm2.labels)


def test_bridge_oracle_edge_cases():
    est, se, _ = bridge_min_oracle(0.0, 0.0, 7, 2, 1000, 2000, 0)
    assert est < 0.02
    big = 5 * np.sqrt(14)
    est, se, _ = bridge_min_oracle(big, big, 7, 2, 1000, 2000, 0)
    assert est > 0.999
    with pytest.raises(ValueError):
        bridge_min_oracle(1, 1, 7, 2, 100, 10, 0)


def test_bridge_oracle_two_resolutions():
    target = 1 - np.exp(-1 / 7)
    for steps in (1000, 4000):
        est, se, raw = bridge_min_oracle(1.0, 1.0, 7, 2, steps, 40_000, steps)
        assert abs(est - target) < 3 * se
        assert raw["coarse"] >= raw["fine"]


def test_file_roundtrips(tmp_path):
    box = BoxSpec((1, 0), 2)
    fld = sample_dgff(box, 5, 2)
    back = load_field(save_field(fld, tmp_path / "f.cgff"))
    assert back.box == box and back.seed == 5 and back.replica == 2 and np.array_equal(back.phi, fld.phi)
    cfg = open_edges(fld)
    pairs = read_edge_list(write_edge_list(cfg, tmp_path / "e.txt"))
    assert len(pairs) == int(cfg.open_edges.sum())
    (tmp_path / "bad").write_bytes(b"XXXX" + bytes(64))
    with pytest.raises(ValueError):
        load_field(tmp_path / "bad")


def test_heat_bath_sweep_count_from_pilot():
    from cablegff.gff_route import heat_bath_sweeps

    sweeps, tau = heat_bath_sweeps(BoxSpec.centered(2, 4), 0)
    assert sweeps >= 64 and tau >= 1
    fld = sample_dgff(BoxSpec.centered(2, 4), 0, method="heat-bath")
    assert fld.method == "heat-bath" and fld.meta["sweeps"] == sweeps
