"""Node subsampling, capped radius graphs and random-pooling hierarchies.

Edges are directed ``(src, dst)`` pairs with ``src`` a neighbor feeding
``dst``. A pair is connected when its Euclidean distance is ``<= radius``
(closed ball). When a destination has more candidates than
``max_neighbors``, a seeded uniform subset of them is kept.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ArgumentError, TopologyError
from .mesh import MeshSample


@dataclass
class RadiusGraph:
    nodes: np.ndarray
    edges: np.ndarray
    radius: float
    max_neighbors: int

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=np.int64).reshape(-1)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def src(self) -> np.ndarray:
        return self.edges[:, 0]

    @property
    def dst(self) -> np.ndarray:
        return self.edges[:, 1]

    def in_degree(self) -> np.ndarray:
        return np.bincount(self.dst, minlength=self.n_nodes)

    def to_json(self) -> dict:
        return {
            "nodes": self.nodes.tolist(),
            "edges": self.edges.tolist(),
            "radius": self.radius,
            "max_neighbors": self.max_neighbors,
        }

    @classmethod
    def from_json(cls, data: dict) -> "RadiusGraph":
        return cls(data["nodes"], data["edges"], data["radius"], data["max_neighbors"])


@dataclass
class ScaleHierarchy:
    """Nested node sets, one radius graph per scale, and pooling maps.

    ``scales[k]`` holds indices into the scale-0 point list. ``parents[k]``
    maps each scale-k node (local index) to its nearest retained node in
    scale k+1 (local index there); ``retained[k]`` lists the scale-k local
    indices that survive into scale k+1, in the same order.
    """

    scales: list[np.ndarray]
    graphs: list[RadiusGraph]
    parents: list[np.ndarray] = field(default_factory=list)
    retained: list[np.ndarray] = field(default_factory=list)

    @property
    def n_scales(self) -> int:
        return len(self.scales)

    def sizes(self) -> list[int]:
        return [len(s) for s in self.scales]


def subsample(sample: MeshSample | int, n: int, seed: int) -> np.ndarray:
    """``n`` distinct node indices drawn uniformly without replacement, sorted."""
    total = sample if isinstance(sample, (int, np.integer)) else sample.n_nodes
    if not 1 <= n <= total:
        raise ArgumentError(f"subsample size {n} outside [1, {total}]")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(total, size=n, replace=False))


def _within(diff: np.ndarray, radius: float) -> np.ndarray:
    return diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] <= radius * radius


def _sort_edges(src, dst) -> np.ndarray:
    order = np.lexsort((dst, src))
    return np.column_stack([src[order], dst[order]]).astype(np.int64)


def _grid_candidates(points: np.ndarray, radius: float):
    """All ordered pairs within ``radius`` using a uniform grid of cell size radius."""
    n = len(points)
    cell_size = radius * (1.0 + 1e-9)
    cells = np.floor((points - points.min(axis=0)) / cell_size).astype(np.int64)
    width = int(cells[:, 1].max()) + 3
    key = (cells[:, 0] + 1) * width + (cells[:, 1] + 1)
    order = np.argsort(key, kind="stable")
    sorted_key = key[order]

    srcs, dsts = [], []
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            target = key + dx * width + dy
            lo = np.searchsorted(sorted_key, target, side="left")
            hi = np.searchsorted(sorted_key, target, side="right")
            counts = hi - lo
            total = int(counts.sum())
            if total == 0:
                continue
            dst = np.repeat(np.arange(n), counts)
            starts = np.repeat(lo - np.cumsum(counts) + counts, counts)
            src = order[starts + np.arange(total)]
            keep = (src != dst) & _within(points[src] - points[dst], radius)
            srcs.append(src[keep])
            dsts.append(dst[keep])
    if not srcs:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(srcs), np.concatenate(dsts)


def build_radius_graph(points, radius: float, max_neighbors: int, seed: int,
                       nodes=None) -> RadiusGraph:
    """Radius graph over ``points``; edge indices are local to ``points``.

    ``nodes`` optionally records which parent-sample nodes the points are.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if not radius > 0:
        raise ArgumentError(f"radius must be > 0, got {radius!r}")
    if max_neighbors < 1:
        raise ArgumentError(f"max_neighbors must be >= 1, got {max_neighbors!r}")
    if not np.isfinite(points).all():
        raise ArgumentError("non-finite coordinates")
    n = len(points)
    nodes = np.arange(n) if nodes is None else np.asarray(nodes)
    if n == 0:
        return RadiusGraph(nodes, np.zeros((0, 2), np.int64), radius, max_neighbors)

    src, dst = _grid_candidates(points, radius)
    degree = np.bincount(dst, minlength=n)
    if degree.max(initial=0) > max_neighbors:
        # candidate order is deterministic, so the keys are too
        src, dst = _sort_edges(src, dst).T
        keys = np.random.default_rng(seed).random(len(src))
        order = np.lexsort((keys, dst))
        dst_sorted = dst[order]
        group_start = np.searchsorted(dst_sorted, dst_sorted, side="left")
        rank = np.arange(len(order)) - group_start
        keep = order[rank < max_neighbors]
        src, dst = src[keep], dst[keep]
    return RadiusGraph(nodes, _sort_edges(src, dst), radius, max_neighbors)


def brute_force_neighbors(points, radius: float) -> np.ndarray:
    """Reference O(n^2) scan with the same closed-ball, no-self-loop semantics."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    src, dst = [], []
    for i in range(len(points)):
        hits = np.flatnonzero(_within(points - points[i], radius))
        hits = hits[hits != i]
        src.append(hits)
        dst.append(np.full(len(hits), i))
    if not src:
        return np.zeros((0, 2), np.int64)
    return _sort_edges(np.concatenate(src), np.concatenate(dst))


def is_connected(graph: RadiusGraph) -> bool:
    n = graph.n_nodes
    if n <= 1:
        return True
    adj = coo_matrix((np.ones(len(graph.edges)), (graph.src, graph.dst)), shape=(n, n))
    count, _ = connected_components(adj, directed=True, connection="strong")
    return count == 1


def _nearest(fine: np.ndarray, coarse: np.ndarray) -> np.ndarray:
    # argmin returns the first minimum, i.e. the lowest coarse index on ties
    out = np.empty(len(fine), dtype=np.int64)
    step = max(1, 2_000_000 // max(len(coarse), 1))
    for lo in range(0, len(fine), step):
        d = fine[lo:lo + step, None, :] - coarse[None, :, :]
        out[lo:lo + step] = np.argmin(np.einsum("ijk,ijk->ij", d, d), axis=1)
    return out


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def pooling_hierarchy(points, ratios, radii, caps, seed: int,
                      connect_last: bool = False) -> ScaleHierarchy:
    """Random-downsampling hierarchy with one radius graph per scale.

    ``caps`` is one neighbor cap per scale or a single int. With
    ``connect_last`` the coarsest graph must be strongly connected.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    ratios = [float(r) for r in ratios]
    radii = [float(r) for r in radii]
    if len(radii) != len(ratios) + 1:
        raise ArgumentError(f"need {len(ratios) + 1} radii for {len(ratios)} ratios, got {len(radii)}")
    if any(not 0 < r <= 1 for r in ratios):
        raise ArgumentError(f"ratios must lie in (0, 1], got {ratios}")
    if isinstance(caps, (int, np.integer)):
        caps = [int(caps)] * len(radii)
    if len(caps) != len(radii):
        raise ArgumentError("need one neighbor cap per scale")
    if len(points) == 0:
        raise ArgumentError("scale 0 has no nodes")

    rng = np.random.default_rng(seed)
    scales = [np.arange(len(points))]
    parents, retained = [], []
    for ratio in ratios:
        prev = scales[-1]
        m = _round_half_up(ratio * len(prev))
        if m < 1:
            raise ArgumentError(f"scale {len(scales)} would have 0 nodes")
        keep = np.sort(rng.choice(len(prev), size=m, replace=False))
        parent = _nearest(points[prev], points[prev[keep]])
        parent[keep] = np.arange(m)
        scales.append(prev[keep])
        retained.append(keep)
        parents.append(parent)

    graph_seeds = rng.integers(0, 2**31 - 1, size=len(scales))
    graphs = [
        build_radius_graph(points[idx], radius, cap, int(s), nodes=idx)
        for idx, radius, cap, s in zip(scales, radii, caps, graph_seeds)
    ]
    if connect_last and not is_connected(graphs[-1]):
        raise TopologyError(
            f"coarsest graph (radius {radii[-1]}) is not connected over {len(scales[-1])} nodes"
        )
    return ScaleHierarchy(scales, graphs, parents, retained)


def _union_graphs(graphs, point_offsets, node_offsets) -> RadiusGraph:
    return RadiusGraph(
        np.concatenate([g.nodes + o for g, o in zip(graphs, point_offsets)]),
        np.concatenate([g.edges + o for g, o in zip(graphs, node_offsets)]),
        graphs[0].radius,
        graphs[0].max_neighbors,
    )


def _offsets(sizes) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)


def disjoint_union(parts):
    """Merge per-sample graphs (or hierarchies) into one graph with no cross edges.

    Node ``i`` of part ``k`` becomes node ``i + offset_k``, where the offsets
    are the running node counts, so row-stacked features line up.
    """
    parts = list(parts)
    if not parts:
        raise ArgumentError("nothing to merge")
    if len(parts) == 1:
        return parts[0]
    if all(isinstance(p, RadiusGraph) for p in parts):
        off = _offsets([p.n_nodes for p in parts])
        return _union_graphs(parts, off, off)
    if not all(isinstance(p, ScaleHierarchy) for p in parts):
        raise ArgumentError("cannot merge graphs with hierarchies")
    depth = parts[0].n_scales
    if any(p.n_scales != depth for p in parts):
        raise ArgumentError("hierarchies have different depths")
    base = _offsets([len(p.scales[0]) for p in parts])
    per_scale = [_offsets([len(p.scales[k]) for p in parts]) for k in range(depth)]
    return ScaleHierarchy(
        scales=[np.concatenate([p.scales[k] + o for p, o in zip(parts, base)]) for k in range(depth)],
        graphs=[_union_graphs([p.graphs[k] for p in parts], base, per_scale[k]) for k in range(depth)],
        parents=[np.concatenate([p.parents[k] + o for p, o in zip(parts, per_scale[k + 1])])
                 for k in range(depth - 1)],
        retained=[np.concatenate([p.retained[k] + o for p, o in zip(parts, per_scale[k])])
                  for k in range(depth - 1)],
    )
