"""Mesh/flow data model, the AFM1 binary format and surface geometry.

Channel layout used throughout the package (0-based):

* inputs  ``x = (pos_x, pos_y, inlet_speed, sdf)``
* targets ``y = (u_x, u_y, p, nu_t)``

The airfoil surface is an ordered chain of node-index pairs. Around a
closed body the chain runs counter-clockwise, so rotating each edge
direction by -90 degrees gives normals pointing away from the solid and
into the fluid. A single open chain (a flat wall, as in the Couette case)
is also accepted; its end nodes take the normal of their only edge.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import (
    DegenerateGeometryError,
    FormatError,
    IoError,
    TopologyError,
    ValidationError,
)

MAGIC = b"AFM1"
_HEADER = struct.Struct("<4sIII")
_TAIL = struct.Struct("<dd")

SDF_SURFACE_TOL = 1e-9


@dataclass
class PhysicsConfig:
    """Fluid constants in reduced (per-density) units."""

    nu: float = 1e-5
    rho: float = 1.0
    char_length: float = 1.0

    def __post_init__(self):
        for name in ("nu", "rho", "char_length"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValidationError(f"PhysicsConfig.{name} must be > 0, got {value!r}")


@dataclass
class MeshSample:
    node_pos: np.ndarray
    inlet_speed: float
    angle_of_attack: float
    sdf: np.ndarray
    surface_mask: np.ndarray
    targets: np.ndarray
    triangles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), np.int64))
    surface_edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), np.int64))

    def __post_init__(self):
        self.node_pos = np.asarray(self.node_pos, dtype=np.float64).reshape(-1, 2)
        self.sdf = np.asarray(self.sdf, dtype=np.float64).reshape(-1)
        self.surface_mask = np.asarray(self.surface_mask, dtype=bool).reshape(-1)
        self.targets = np.asarray(self.targets, dtype=np.float64).reshape(-1, 4)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.surface_edges = np.asarray(self.surface_edges, dtype=np.int64).reshape(-1, 2)
        self.inlet_speed = float(self.inlet_speed)
        self.angle_of_attack = float(self.angle_of_attack)

    @property
    def n_nodes(self) -> int:
        return self.node_pos.shape[0]

    def inputs(self) -> np.ndarray:
        """Raw per-node model inputs ``(x, y, inlet_speed, sdf)``."""
        speed = np.full(self.n_nodes, self.inlet_speed)
        return np.column_stack([self.node_pos, speed, self.sdf])

    def with_targets(self, targets) -> "MeshSample":
        return MeshSample(
            self.node_pos, self.inlet_speed, self.angle_of_attack, self.sdf,
            self.surface_mask, targets, self.triangles, self.surface_edges,
        )

    def equals(self, other: "MeshSample") -> bool:
        """Field-wise bit equality."""
        return (
            self.inlet_speed == other.inlet_speed
            and self.angle_of_attack == other.angle_of_attack
            and all(
                a.shape == b.shape and a.tobytes() == b.tobytes()
                for a, b in zip(self._arrays(), other._arrays())
            )
        )

    def _arrays(self):
        return (self.node_pos, self.sdf, self.surface_mask, self.targets,
                self.triangles, self.surface_edges)


# ---------------------------------------------------------------------------
# surface topology


def surface_chain(sample: MeshSample) -> tuple[np.ndarray, bool]:
    """Order the surface edges into one chain.

    Returns the node sequence along the chain and whether it closes on
    itself. For a closed loop the first node is not repeated at the end.
    """
    edges = sample.surface_edges
    if len(edges) == 0:
        raise TopologyError("sample has no surface edges")
    succ: dict[int, int] = {}
    pred: dict[int, int] = {}
    for k, (a, b) in enumerate(edges.tolist()):
        if a == b:
            raise TopologyError(f"surface edge {k} is a self-loop on node {a}")
        if a in succ or b in pred:
            raise TopologyError(f"surface edge {k} ({a}->{b}) branches the chain")
        succ[a] = b
        pred[b] = a
    starts = [a for a in succ if a not in pred]
    if len(starts) > 1:
        raise TopologyError(f"surface edges form {len(starts)} separate pieces")
    closed = not starts
    start = starts[0] if starts else int(edges[0, 0])
    nodes = [start]
    while nodes[-1] in succ:
        nxt = succ[nodes[-1]]
        if nxt == start:
            break
        nodes.append(nxt)
    if len(nodes) - (0 if closed else 1) != len(edges):
        raise TopologyError("surface edges do not form a single connected chain")
    return np.asarray(nodes, dtype=np.int64), closed


class SurfaceNormals(NamedTuple):
    nodes: np.ndarray
    normals: np.ndarray


def surface_normals(sample: MeshSample) -> SurfaceNormals:
    """Unit normals at surface nodes, pointing from the solid into the fluid.

    Each node gets the normalized mean of the unit normals of its adjacent
    edges. Output rows follow the chain order of :func:`surface_chain`.
    """
    nodes, closed = surface_chain(sample)
    pos = sample.node_pos
    if closed:
        seg = pos[np.roll(nodes, -1)] - pos[nodes]
    else:
        seg = pos[nodes[1:]] - pos[nodes[:-1]]
    length = np.hypot(seg[:, 0], seg[:, 1])
    bad = np.flatnonzero(length <= 0.0)
    if bad.size:
        raise DegenerateGeometryError(f"zero-length surface edge starting at node {nodes[bad[0]]}")
    edge_n = np.column_stack([seg[:, 1], -seg[:, 0]]) / length[:, None]

    if closed:
        acc = edge_n + np.roll(edge_n, 1, axis=0)
    else:
        acc = np.zeros((len(nodes), 2))
        acc[:-1] += edge_n
        acc[1:] += edge_n
    norm = np.hypot(acc[:, 0], acc[:, 1])
    bad = np.flatnonzero(norm <= 1e-14)
    if bad.size:
        raise DegenerateGeometryError(f"surface folds back on itself at node {nodes[bad[0]]}")
    return SurfaceNormals(nodes, acc / norm[:, None])


def surface_segments(sample: MeshSample) -> tuple[np.ndarray, np.ndarray]:
    """Segment endpoints ``(a, b)`` as positions into the chain order."""
    nodes, closed = surface_chain(sample)
    n = len(nodes)
    a = np.arange(n if closed else n - 1)
    return a, (a + 1) % n


def _point_segment_distance(points, a, b):
    # points (P,2), a/b (S,2) -> (P,S)
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    ap = points[:, None, :] - a[None, :, :]
    t = np.einsum("psk,sk->ps", ap, ab) / np.where(denom > 0, denom, 1.0)
    t = np.clip(t, 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    d = points[:, None, :] - closest
    return np.sqrt(np.einsum("psk,psk->ps", d, d))


def sdf_to_surface(point, sample: MeshSample) -> float | np.ndarray:
    """Euclidean distance from ``point`` (or an array of points) to the surface polyline."""
    if len(sample.surface_edges) == 0:
        raise TopologyError("sample has no surface edges")
    pts = np.asarray(point, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 2)
    pos = sample.node_pos
    a = pos[sample.surface_edges[:, 0]]
    b = pos[sample.surface_edges[:, 1]]
    out = np.empty(len(pts))
    for lo in range(0, len(pts), 512):
        out[lo:lo + 512] = _point_segment_distance(pts[lo:lo + 512], a, b).min(axis=1)
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# validation


def validate(sample: MeshSample) -> None:
    """Raise ValidationError naming the first violated invariant."""
    n = sample.n_nodes
    for name, arr, expected in (
        ("sdf", sample.sdf, (n,)),
        ("surface_mask", sample.surface_mask, (n,)),
        ("targets", sample.targets, (n, 4)),
    ):
        if arr.shape != expected:
            raise ValidationError(f"{name} has shape {arr.shape}, expected {expected}")
    if n == 0:
        raise ValidationError("sample has no nodes")
    bad = np.flatnonzero(~np.isfinite(sample.node_pos).all(axis=1))
    if bad.size:
        raise ValidationError(f"node {bad[0]}: non-finite position")
    if not (np.isfinite(sample.inlet_speed) and np.isfinite(sample.angle_of_attack)):
        raise ValidationError("non-finite inlet metadata")
    bad = np.flatnonzero(~np.isfinite(sample.sdf) | (sample.sdf < 0))
    if bad.size:
        raise ValidationError(f"node {bad[0]}: sdf must be finite and >= 0, got {sample.sdf[bad[0]]!r}")
    bad = np.flatnonzero(sample.surface_mask & (sample.sdf > SDF_SURFACE_TOL))
    if bad.size:
        raise ValidationError(f"node {bad[0]}: surface node with sdf {sample.sdf[bad[0]]!r} != 0")
    bad = np.flatnonzero(~np.isfinite(sample.targets).all(axis=1))
    if bad.size:
        raise ValidationError(f"node {bad[0]}: non-finite targets")
    tri = sample.triangles
    bad = np.flatnonzero(((tri < 0) | (tri >= n)).any(axis=1))
    if bad.size:
        raise ValidationError(f"triangle {bad[0]}: node index out of range {tri[bad[0]].tolist()}")
    se = sample.surface_edges
    bad = np.flatnonzero(((se < 0) | (se >= n)).any(axis=1))
    if bad.size:
        raise ValidationError(f"surface edge {bad[0]}: node index out of range {se[bad[0]].tolist()}")
    if len(se):
        off = ~sample.surface_mask[se]
        bad = np.flatnonzero(off.any(axis=1))
        if bad.size:
            k = bad[0]
            node = se[k][off[k]][0]
            raise ValidationError(f"surface edge {k}: endpoint node {node} is not surface-masked")
        try:
            surface_chain(sample)
        except TopologyError as exc:
            raise ValidationError(f"surface topology: {exc}") from exc
    else:
        raise ValidationError("sample has no surface edges")


# ---------------------------------------------------------------------------
# AFM1 binary format


def _meta_path(path: Path) -> Path:
    return path.with_name(path.stem + ".meta.json")


def write_sample(sample: MeshSample, path, physics: PhysicsConfig | None = None,
                 provenance: str = "") -> None:
    """Write ``sample`` as AFM1 plus a ``<stem>.meta.json`` sidecar."""
    validate(sample)
    path = Path(path)
    physics = physics or PhysicsConfig()
    n = sample.n_nodes
    parts = [
        _HEADER.pack(MAGIC, n, len(sample.triangles), len(sample.surface_edges)),
        sample.node_pos.astype("<f8").tobytes(),
        sample.sdf.astype("<f8").tobytes(),
        sample.surface_mask.astype(np.uint8).tobytes(),
        sample.targets.astype("<f8").tobytes(),
        sample.triangles.astype("<u4").tobytes(),
        sample.surface_edges.astype("<u4").tobytes(),
        _TAIL.pack(sample.inlet_speed, sample.angle_of_attack),
    ]
    meta = {
        "inlet_speed": sample.inlet_speed,
        "angle_of_attack": sample.angle_of_attack,
        "nu": physics.nu,
        "provenance": provenance,
    }
    try:
        path.write_bytes(b"".join(parts))
        _meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _take(buf: memoryview, offset: int, nbytes: int, what: str):
    if offset + nbytes > len(buf):
        raise FormatError(f"truncated file while reading {what}")
    return buf[offset:offset + nbytes], offset + nbytes


def read_sample(path) -> MeshSample:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    buf = memoryview(raw)
    head, off = _take(buf, 0, _HEADER.size, "header")
    magic, n, n_tri, n_edge = _HEADER.unpack(head)
    if magic != MAGIC:
        raise FormatError(f"bad magic {bytes(magic)!r} in {path}")

    def arr(dtype, count, shape, what):
        nonlocal off
        chunk, off = _take(buf, off, np.dtype(dtype).itemsize * count, what)
        return np.frombuffer(chunk, dtype=dtype).reshape(shape)

    pos = arr("<f8", 2 * n, (n, 2), "node_pos")
    sdf = arr("<f8", n, (n,), "sdf")
    mask = arr("u1", n, (n,), "surface_mask")
    targets = arr("<f8", 4 * n, (n, 4), "targets")
    tri = arr("<u4", 3 * n_tri, (n_tri, 3), "triangles")
    edges = arr("<u4", 2 * n_edge, (n_edge, 2), "surface_edges")
    tail, off = _take(buf, off, _TAIL.size, "metadata")
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes in {path}")
    if mask.max(initial=0) > 1:
        raise FormatError("surface_mask bytes must be 0 or 1")
    speed, aoa = _TAIL.unpack(tail)
    sample = MeshSample(
        pos.astype(np.float64), speed, aoa, sdf.astype(np.float64),
        mask.astype(bool), targets.astype(np.float64),
        tri.astype(np.int64), edges.astype(np.int64),
    )
    validate(sample)
    return sample


def read_meta(path) -> dict:
    """Sidecar metadata for an AFM1 file; empty dict when absent."""
    meta = _meta_path(Path(path))
    if not meta.exists():
        return {}
    return json.loads(meta.read_text())


def list_samples(directory) -> list[Path]:
    return sorted(Path(directory).glob("*.afm"))
