import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from afbench.errors import ArgumentError, TopologyError
from afbench.graph import (
    RadiusGraph,
    brute_force_neighbors,
    build_radius_graph,
    disjoint_union,
    is_connected,
    pooling_hierarchy,
    subsample,
)

UNET_RATIOS = (0.75, 0.75, 2 / 3, 2 / 3)
UNET_RADII = (0.1, 0.2, 0.5, 1.0, 10.0)


def edge_set(edges):
    return set(map(tuple, np.asarray(edges).tolist()))


# --- subsampling ---------------------------------------------------------------

def test_subsample_all_nodes_sorted():
    assert np.array_equal(subsample(50, 50, seed=3), np.arange(50))


def test_subsample_protocol_size():
    idx = subsample(13012, 1600, seed=0)
    assert len(idx) == 1600 == len(np.unique(idx))
    assert idx.min() >= 0 and idx.max() < 13012


def test_subsample_determinism():
    assert np.array_equal(subsample(1000, 100, 7), subsample(1000, 100, 7))
    assert not np.array_equal(subsample(1000, 100, 7), subsample(1000, 100, 8))


@pytest.mark.parametrize("n", [0, 11])
def test_subsample_out_of_range(n):
    with pytest.raises(ArgumentError):
        subsample(10, n, 0)


# --- radius graphs ---------------------------------------------------------------

def test_two_points_inside_and_outside():
    g = build_radius_graph([(0, 0), (0.05, 0)], 0.1, 64, 0)
    assert edge_set(g.edges) == {(0, 1), (1, 0)}
    g = build_radius_graph([(0, 0), (0.15, 0)], 0.1, 64, 0)
    assert len(g.edges) == 0


def test_boundary_distance_is_included():
    pts = [(0.0, 0.0), (0.05, 0.0), (0.1, 0.0)]
    want = {(0, 1), (1, 0), (1, 2), (2, 1), (0, 2), (2, 0)}
    assert edge_set(brute_force_neighbors(pts, 0.1)) == want
    assert edge_set(build_radius_graph(pts, 0.1, 64, 0).edges) == want


def test_single_point_and_duplicates():
    assert len(brute_force_neighbors([(0.3, 0.3)], 0.1)) == 0
    dup = [(0.2, 0.2), (0.2, 0.2), (0.2, 0.2)]
    want = {(i, j) for i in range(3) for j in range(3) if i != j}
    assert edge_set(brute_force_neighbors(dup, 0.1)) == want
    assert edge_set(build_radius_graph(dup, 0.1, 64, 0).edges) == want


def test_uncapped_matches_oracle_500_points():
    pts = np.random.default_rng(1).uniform(0, 1, (500, 2))
    g = build_radius_graph(pts, 0.1, 1000, 0)
    assert np.array_equal(g.edges, brute_force_neighbors(pts, 0.1))


def test_non_finite_coordinates():
    with pytest.raises(ArgumentError):
        build_radius_graph([(0, 0), (np.nan, 0)], 0.1, 4, 0)


@pytest.mark.parametrize("radius,cap", [(0.0, 4), (0.1, 0)])
def test_bad_radius_or_cap(radius, cap):
    with pytest.raises(ArgumentError):
        build_radius_graph([(0, 0)], radius, cap, 0)


points_strategy = arrays(np.float64, st.tuples(st.integers(1, 120), st.just(2)),
                         elements=st.floats(0, 1, allow_nan=False))


@settings(max_examples=60, deadline=None)
@given(points_strategy, st.floats(0.01, 0.5))
def test_oracle_equivalence_property(points, radius):
    g = build_radius_graph(points, radius, len(points) + 1, 0)
    assert np.array_equal(g.edges, brute_force_neighbors(points, radius))
    assert edge_set(g.edges) == {(j, i) for i, j in edge_set(g.edges)}


@settings(max_examples=60, deadline=None)
@given(points_strategy, st.floats(0.05, 0.5), st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_capped_invariants(points, radius, cap, seed):
    g = build_radius_graph(points, radius, cap, seed)
    src, dst = g.src, g.dst
    assert np.all(src != dst)
    d = points[src] - points[dst]
    assert np.all(d[:, 0] ** 2 + d[:, 1] ** 2 <= radius * radius)
    assert g.in_degree().max(initial=0) <= cap
    order = np.lexsort((dst, src))
    assert np.array_equal(order, np.arange(len(src)))
    assert edge_set(g.edges) <= edge_set(brute_force_neighbors(points, radius))
    again = build_radius_graph(points, radius, cap, seed)
    assert np.array_equal(g.edges, again.edges)


def test_cap_keeps_all_when_it_does_not_bind():
    pts = np.random.default_rng(2).uniform(0, 1, (200, 2))
    full = brute_force_neighbors(pts, 0.08)
    deg = np.bincount(full[:, 1], minlength=200).max()
    g = build_radius_graph(pts, 0.08, int(deg), 5)
    assert np.array_equal(g.edges, full)


def test_cap_retention_is_roughly_uniform():
    # one destination with 20 candidates, cap 5: each candidate kept ~25% of seeds
    ring = np.column_stack([np.cos(np.arange(20)), np.sin(np.arange(20))]) * 0.05
    pts = np.concatenate([[[0.0, 0.0]], ring])
    kept = np.zeros(21)
    for seed in range(400):
        g = build_radius_graph(pts, 0.051, 5, seed)
        kept[g.src[g.dst == 0]] += 1
    frac = kept[1:] / 400
    assert np.all(np.abs(frac - 0.25) < 0.1)


def test_json_round_trip():
    g = build_radius_graph(np.random.default_rng(0).uniform(0, 1, (40, 2)), 0.3, 5, 1)
    back = RadiusGraph.from_json(g.to_json())
    assert np.array_equal(back.edges, g.edges) and np.array_equal(back.nodes, g.nodes)
    assert (back.radius, back.max_neighbors) == (g.radius, g.max_neighbors)


# --- hierarchies -------------------------------------------------------------------

def test_unet_scale_sizes():
    pts = np.random.default_rng(0).uniform(0, 1, (1600, 2))
    h = pooling_hierarchy(pts, UNET_RATIOS, UNET_RADII, 64, seed=0)
    assert h.sizes() == [1600, 1200, 900, 600, 400]
    assert [g.radius for g in h.graphs] == list(UNET_RADII)


def test_hierarchy_nesting_and_parents():
    pts = np.random.default_rng(3).uniform(0, 1, (300, 2))
    h = pooling_hierarchy(pts, UNET_RATIOS, UNET_RADII, 64, seed=4)
    for k in range(h.n_scales - 1):
        fine, coarse = h.scales[k], h.scales[k + 1]
        assert set(coarse.tolist()) <= set(fine.tolist())
        assert np.array_equal(fine[h.retained[k]], coarse)
        # retained nodes are their own parents
        assert np.array_equal(h.parents[k][h.retained[k]], np.arange(len(coarse)))
        # every parent is a nearest retained node
        d = np.linalg.norm(pts[fine][:, None] - pts[coarse][None], axis=2)
        chosen = d[np.arange(len(fine)), h.parents[k]]
        assert np.allclose(chosen, d.min(axis=1), rtol=0, atol=0)


def test_parent_ties_go_to_lowest_index():
    # node 1 is equidistant from 0 and 2; with both retained it must pick 0
    pts = np.array([[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]])
    for seed in range(50):
        h = pooling_hierarchy(pts, [2 / 3], [1.0, 1.0], 8, seed)
        if h.scales[1].tolist() == [0, 2]:
            assert h.parents[0].tolist() == [0, 0, 1]
            return
    pytest.fail("no seed retained nodes 0 and 2")


def test_ratios_of_one_keep_every_scale():
    pts = np.random.default_rng(0).uniform(0, 1, (50, 2))
    h = pooling_hierarchy(pts, [1.0, 1.0], [0.2, 0.3, 0.4], 64, 0)
    assert all(np.array_equal(s, np.arange(50)) for s in h.scales)


def test_hierarchy_argument_errors():
    pts = np.zeros((4, 2))
    with pytest.raises(ArgumentError):
        pooling_hierarchy(pts, [0.5], [0.1], 8, 0)
    with pytest.raises(ArgumentError):
        pooling_hierarchy(pts, [1.5], [0.1, 0.2], 8, 0)
    with pytest.raises(ArgumentError):
        pooling_hierarchy(pts[:1], [0.1], [0.1, 0.2], 8, 0)


def test_disconnected_coarse_scale_is_an_error():
    pts = np.array([[0.0, 0.0], [0.01, 0.0], [50.0, 0.0], [50.01, 0.0]])
    with pytest.raises(TopologyError):
        pooling_hierarchy(pts, [1.0], [0.1, 10.0], 8, 0, connect_last=True)


def test_hierarchy_determinism():
    pts = np.random.default_rng(9).uniform(0, 1, (200, 2))
    a = pooling_hierarchy(pts, UNET_RATIOS, UNET_RADII, 16, 3)
    b = pooling_hierarchy(pts, UNET_RATIOS, UNET_RADII, 16, 3)
    for x, y in zip(a.graphs, b.graphs):
        assert np.array_equal(x.edges, y.edges)
    for x, y in zip(a.parents, b.parents):
        assert np.array_equal(x, y)


def test_connectivity_helper():
    assert is_connected(build_radius_graph([(0, 0), (0.05, 0)], 0.1, 4, 0))
    assert not is_connected(build_radius_graph([(0, 0), (0.5, 0)], 0.1, 4, 0))


# --- disjoint unions ---------------------------------------------------------------

def test_union_of_graphs_offsets_edges():
    rng = np.random.default_rng(0)
    a = build_radius_graph(rng.uniform(0, 1, (30, 2)), 0.3, 8, 0)
    b = build_radius_graph(rng.uniform(0, 1, (20, 2)), 0.3, 8, 1)
    u = disjoint_union([a, b])
    assert u.n_nodes == 50
    assert np.array_equal(u.edges, np.concatenate([a.edges, b.edges + 30]))


def test_union_of_hierarchies_matches_parts():
    rng = np.random.default_rng(1)
    parts = [pooling_hierarchy(rng.uniform(0, 1, (n, 2)), UNET_RATIOS, UNET_RADII, 16, n) for n in (40, 25)]
    u = disjoint_union(parts)
    assert u.sizes() == [a + b for a, b in zip(parts[0].sizes(), parts[1].sizes())]
    for k in range(u.n_scales - 1):
        n0, c0 = len(parts[0].scales[k]), len(parts[0].scales[k + 1])
        assert np.array_equal(u.parents[k], np.concatenate([parts[0].parents[k], parts[1].parents[k] + c0]))
        assert np.array_equal(u.retained[k], np.concatenate([parts[0].retained[k], parts[1].retained[k] + n0]))
    # no edge crosses between parts at any scale
    for k, g in enumerate(u.graphs):
        n0 = len(parts[0].scales[k])
        assert np.all((g.src < n0) == (g.dst < n0))
