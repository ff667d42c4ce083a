"""Velocity gradients, wall shear stress, wall pressure, drag and lift.

All stresses are kinematic (divided by density), so with rho = 1 the wall
shear stress is ``2 (nu + nu_t) S n`` and the wall pressure is ``-p n``.
Normals point from the solid into the fluid.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateGeometryError, IoError, RankError, ShapeError
from .graph import RadiusGraph
from .mesh import MeshSample, PhysicsConfig, surface_chain, surface_normals, surface_segments


@dataclass
class FlowField:
    """Per-node ``(u_x, u_y, p, nu_t)`` in physical units."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1, 4)
        if not np.isfinite(self.values).all():
            raise ShapeError("flow field has non-finite entries")

    @property
    def velocity(self) -> np.ndarray:
        return self.values[:, :2]

    @property
    def pressure(self) -> np.ndarray:
        return self.values[:, 2]

    @property
    def nut(self) -> np.ndarray:
        return self.values[:, 3]


@dataclass
class SurfaceForces:
    nodes: np.ndarray
    tau: np.ndarray
    wp: np.ndarray
    integral_tau: np.ndarray
    integral_wp: np.ndarray
    drag: float
    lift: float


def _as_field(sample: MeshSample, field) -> FlowField:
    field = field if isinstance(field, FlowField) else FlowField(field)
    if len(field.values) != sample.n_nodes:
        raise ShapeError(f"field has {len(field.values)} nodes, sample has {sample.n_nodes}")
    return field


def _p1_gradients(pos, tri, values):
    """Per-triangle constant gradients of ``values`` (N, k) -> (T, k, 2), plus areas."""
    p0, p1, p2 = pos[tri[:, 0]], pos[tri[:, 1]], pos[tri[:, 2]]
    det = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1])
    scale = np.abs(p1 - p0).max(axis=1) + np.abs(p2 - p0).max(axis=1)
    bad = np.flatnonzero(np.abs(det) <= 1e-14 * scale * scale)
    if bad.size:
        raise DegenerateGeometryError(f"triangle {bad[0]} has zero area")
    # gradients of the barycentric shape functions
    dphi = np.stack([
        np.column_stack([p1[:, 1] - p2[:, 1], p2[:, 0] - p1[:, 0]]),
        np.column_stack([p2[:, 1] - p0[:, 1], p0[:, 0] - p2[:, 0]]),
        np.column_stack([p0[:, 1] - p1[:, 1], p1[:, 0] - p0[:, 0]]),
    ], axis=1) / det[:, None, None]
    grads = np.einsum("tak,tad->tkd", values[tri], dphi)
    return grads, 0.5 * np.abs(det)


def _lsq_gradient(pos, values, node, neighbors):
    if len(neighbors) < 2:
        raise RankError(f"node {node} has {len(neighbors)} neighbors; need at least 2")
    d = pos[neighbors] - pos[node]
    w = 1.0 / np.einsum("ij,ij->i", d, d)
    a = d * np.sqrt(w)[:, None]
    b = (values[neighbors] - values[node]) * np.sqrt(w)[:, None]
    sol, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    if rank < 2:
        raise RankError(f"node {node}: neighbor offsets are collinear")
    return sol.T


def velocity_jacobian(sample: MeshSample, field, graph: RadiusGraph | None = None) -> np.ndarray:
    """Per-node ``J[i] = d(u_x, u_y)/d(x, y)`` as an ``(N, 2, 2)`` array.

    Linear-element gradients are area-averaged onto nodes; nodes outside
    the triangulation fall back to weighted least squares over ``graph``.
    Both routes reproduce affine fields exactly.
    """
    field = _as_field(sample, field)
    pos, vel = sample.node_pos, field.velocity
    n = sample.n_nodes
    jac = np.zeros((n, 2, 2))
    weight = np.zeros(n)
    tri = sample.triangles
    if len(tri):
        grads, area = _p1_gradients(pos, tri, vel)
        for corner in range(3):
            np.add.at(jac, tri[:, corner], grads * area[:, None, None])
            np.add.at(weight, tri[:, corner], area)
    covered = weight > 0
    jac[covered] /= weight[covered, None, None]

    missing = np.flatnonzero(~covered)
    if missing.size:
        if graph is None:
            raise RankError(f"node {missing[0]} has no incident triangle and no graph was given")
        local = {int(g): k for k, g in enumerate(graph.nodes)}
        for node in missing:
            if node not in local:
                raise RankError(f"node {node} is not in the fallback graph")
            k = local[node]
            nbr = graph.nodes[np.concatenate([graph.src[graph.dst == k], graph.dst[graph.src == k]])]
            jac[node] = _lsq_gradient(pos, vel, node, np.unique(nbr))
    return jac


def strain_rate(jac) -> np.ndarray:
    jac = np.asarray(jac, dtype=np.float64)
    return 0.5 * (jac + np.swapaxes(jac, -1, -2))


def divergence(sample: MeshSample, field, graph: RadiusGraph | None = None) -> np.ndarray:
    jac = velocity_jacobian(sample, field, graph)
    return jac[:, 0, 0] + jac[:, 1, 1]


def wall_shear_stress(sample: MeshSample, field, physics: PhysicsConfig | None = None,
                      jacobian=None) -> tuple[np.ndarray, np.ndarray]:
    """``(surface nodes, tau)``; rows follow the surface chain order."""
    physics = physics or PhysicsConfig()
    field = _as_field(sample, field)
    nodes, normals = surface_normals(sample)
    jac = velocity_jacobian(sample, field) if jacobian is None else jacobian
    s = strain_rate(jac[nodes])
    visc = physics.nu + field.nut[nodes]
    tau = 2.0 * visc[:, None] * np.einsum("nij,nj->ni", s, normals)
    return nodes, tau


def wall_pressure(sample: MeshSample, field) -> tuple[np.ndarray, np.ndarray]:
    field = _as_field(sample, field)
    nodes, normals = surface_normals(sample)
    return nodes, -field.pressure[nodes, None] * normals


def integrate_surface(sample: MeshSample, values) -> np.ndarray:
    """Trapezoidal line integral of per-surface-node values (chain order)."""
    nodes, _ = surface_chain(sample)
    values = np.asarray(values, dtype=np.float64)
    if len(values) != len(nodes):
        raise ShapeError(f"expected {len(nodes)} surface values, got {len(values)}")
    a, b = surface_segments(sample)
    seg = sample.node_pos[nodes[b]] - sample.node_pos[nodes[a]]
    length = np.hypot(seg[:, 0], seg[:, 1])
    mid = 0.5 * (values[a] + values[b])
    return np.einsum("s,s...->...", length, mid)


def drag_lift(sample: MeshSample, field, physics: PhysicsConfig | None = None,
              jacobian=None) -> SurfaceForces:
    field = _as_field(sample, field)
    nodes, tau = wall_shear_stress(sample, field, physics, jacobian)
    _, wp = wall_pressure(sample, field)
    int_tau = integrate_surface(sample, tau)
    int_wp = integrate_surface(sample, wp)
    total = int_wp + int_tau
    return SurfaceForces(nodes, tau, wp, int_tau, int_wp, float(total[0]), float(total[1]))


FORCES_CSV_HEADER = ("node", "x", "y", "tau_x", "tau_y", "wp_x", "wp_y")


def write_forces_csv(sample: MeshSample, forces: SurfaceForces, path) -> None:
    pos = sample.node_pos[forces.nodes]
    try:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(FORCES_CSV_HEADER)
            for k, node in enumerate(forces.nodes):
                writer.writerow([int(node), *map(repr, (
                    float(pos[k, 0]), float(pos[k, 1]),
                    float(forces.tau[k, 0]), float(forces.tau[k, 1]),
                    float(forces.wp[k, 0]), float(forces.wp[k, 1]),
                ))])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
