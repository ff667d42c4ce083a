"""Analytic incompressible flows on triangulated meshes.

Two cases with closed-form wall forces:

* ``couette``: linear shear in the channel [0, 1] x [0, h]; the bottom
  wall (an open chain) is the surface.
* ``cylinder_potential``: potential flow past a cylinder of radius a with
  circulation. Circulation is positive clockwise, so the lift is
  ``rho * U * Gamma`` for a free stream along +x.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import Delaunay

from .errors import ArgumentError, DegenerateGeometryError, ValidationError
from .mesh import MeshSample, PhysicsConfig, sdf_to_surface, validate

KINDS = ("couette", "cylinder_potential")


@dataclass(frozen=True)
class CaseSpec:
    kind: str
    u_inf: float = 1.0
    circulation: float = 0.0
    scale: float = 0.5
    n_surface: int = 128
    n_volume: int = 2000
    seed: int = 0
    angle_of_attack: float = 0.0
    outer_factor: float = 4.0
    layout: str = "random"
    nut_bump: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ArgumentError(f"unknown case kind {self.kind!r}; expected one of {KINDS}")
        if self.n_surface < 8 or self.n_volume < 8:
            raise ValidationError("surface and volume counts must be >= 8")
        if not self.scale > 0:
            raise ValidationError(f"geometry scale must be > 0, got {self.scale!r}")
        if self.layout not in ("random", "polar"):
            raise ArgumentError(f"unknown layout {self.layout!r}")
        if not self.outer_factor > 1:
            raise ValidationError("outer_factor must exceed 1")


@dataclass
class AnalyticForces:
    integral_tau: np.ndarray
    integral_wp: np.ndarray
    drag: float
    lift: float


def _nut_bump(sdf, scale, nu):
    # vanishes on the wall, peaks at 10 nu one bump-width away
    width = 0.1 * scale
    s = sdf / width
    return 10.0 * nu * s * np.exp(1.0 - s)


# ---------------------------------------------------------------------------
# Couette


def gen_couette(spec: CaseSpec, physics: PhysicsConfig | None = None) -> MeshSample:
    physics = physics or PhysicsConfig()
    h = spec.scale
    nx = spec.n_surface
    ny = max(2, spec.n_volume // (nx + 1))
    xs = np.linspace(0.0, 1.0, nx + 1)
    ys = np.linspace(0.0, h, ny + 1)
    gx, gy = np.meshgrid(xs, ys)
    pos = np.column_stack([gx.ravel(), gy.ravel()])
    idx = np.arange(pos.shape[0]).reshape(ny + 1, nx + 1)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, 1:].ravel(), idx[1:, :-1].ravel()
    tri = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])

    bottom = idx[0]
    # right to left, so the -90 degree rotation points up into the fluid
    edges = np.column_stack([bottom[1:], bottom[:-1]])[::-1]
    mask = np.zeros(len(pos), bool)
    mask[bottom] = True
    sdf = pos[:, 1].copy()

    y = pos[:, 1]
    targets = np.zeros((len(pos), 4))
    targets[:, 0] = spec.u_inf * y / h
    if spec.nut_bump:
        targets[:, 3] = _nut_bump(sdf, h, physics.nu)
    sample = MeshSample(pos, spec.u_inf, 0.0, sdf, mask, targets, tri, edges)
    validate(sample)
    return sample


# ---------------------------------------------------------------------------
# cylinder


def cylinder_complex_velocity(spec: CaseSpec, z):
    """``dW/dz = u_x - i u_y`` and its derivative at complex points ``z``."""
    a, u = spec.scale, spec.u_inf
    rot = np.exp(1j * np.deg2rad(spec.angle_of_attack))
    gamma = spec.circulation
    w = u * (np.conj(rot) - a * a * rot / z**2) + 1j * gamma / (2.0 * np.pi * z)
    dw = 2.0 * u * a * a * rot / z**3 - 1j * gamma / (2.0 * np.pi * z**2)
    return w, dw


def cylinder_flow(spec: CaseSpec, points) -> np.ndarray:
    """Analytic ``(u_x, u_y, p)`` with far-field pressure 0 and rho = 1."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    w, _ = cylinder_complex_velocity(spec, points[:, 0] + 1j * points[:, 1])
    ux, uy = w.real, -w.imag
    p = 0.5 * spec.u_inf**2 - 0.5 * (ux * ux + uy * uy)
    return np.column_stack([ux, uy, p])


def cylinder_jacobian(spec: CaseSpec, points) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    _, dw = cylinder_complex_velocity(spec, points[:, 0] + 1j * points[:, 1])
    jac = np.empty((len(points), 2, 2))
    jac[:, 0, 0] = dw.real
    jac[:, 0, 1] = -dw.imag
    jac[:, 1, 0] = -dw.imag
    jac[:, 1, 1] = -dw.real
    return jac


def _volume_points(spec: CaseSpec, rng) -> np.ndarray:
    a, n = spec.scale, spec.n_surface
    r_out = spec.outer_factor * a
    # keeps every surface edge's diametral disk empty, so the edge is Delaunay
    r_in = a * (1.0 + 2.0 * np.pi / n)
    if spec.layout == "polar":
        q = 1.0 + 2.0 * np.pi / n
        radii = [r_in]
        while radii[-1] * q < r_out:
            radii.append(radii[-1] * q)
        radii.append(r_out)
        theta = 2.0 * np.pi * np.arange(n) / n
        rings = [
            np.column_stack([r * np.cos(theta + (j % 2 + 1) * np.pi / n),
                             r * np.sin(theta + (j % 2 + 1) * np.pi / n)])
            for j, r in enumerate(radii)
        ]
        return np.concatenate(rings)

    area = np.pi * (r_out**2 - r_in**2)
    spacing = np.sqrt(area / spec.n_volume)
    n_outer = max(8, int(round(2.0 * np.pi * r_out / spacing)))
    n_inner = max(0, spec.n_volume - n_outer)
    r = np.sqrt(rng.uniform(r_in**2, r_out**2, n_inner))
    t = rng.uniform(0.0, 2.0 * np.pi, n_inner)
    t_out = 2.0 * np.pi * np.arange(n_outer) / n_outer
    return np.concatenate([
        np.column_stack([r * np.cos(t), r * np.sin(t)]),
        np.column_stack([r_out * np.cos(t_out), r_out * np.sin(t_out)]),
    ])


def gen_cylinder_potential(spec: CaseSpec, physics: PhysicsConfig | None = None) -> MeshSample:
    physics = physics or PhysicsConfig()
    rng = np.random.default_rng(spec.seed)
    a, n = spec.scale, spec.n_surface
    theta = 2.0 * np.pi * np.arange(n) / n
    surface = a * np.column_stack([np.cos(theta), np.sin(theta)])
    pos = np.concatenate([surface, _volume_points(spec, rng)])
    edges = np.column_stack([np.arange(n), (np.arange(n) + 1) % n])

    tri = Delaunay(pos).simplices.astype(np.int64)
    # a triangle on three surface nodes lies inside the convex polygon
    tri = tri[~(tri < n).all(axis=1)]
    p0, p1, p2 = pos[tri[:, 0]], pos[tri[:, 1]], pos[tri[:, 2]]
    det = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1])
    tri = tri[np.abs(det) > 1e-12 * a * a]
    present = {tuple(sorted(e)) for t in tri.tolist() for e in ((t[0], t[1]), (t[1], t[2]), (t[0], t[2]))}
    missing = [e for e in edges.tolist() if tuple(sorted(e)) not in present]
    if missing:
        raise DegenerateGeometryError(f"surface edge {missing[0]} is not in the triangulation")

    mask = np.zeros(len(pos), bool)
    mask[:n] = True
    probe = MeshSample(pos, spec.u_inf, spec.angle_of_attack, np.zeros(len(pos)), mask,
                       np.zeros((len(pos), 4)), tri, edges)
    sdf = sdf_to_surface(pos, probe)
    sdf[:n] = 0.0

    targets = np.zeros((len(pos), 4))
    targets[:, :3] = cylinder_flow(spec, pos)
    if spec.nut_bump:
        targets[:, 3] = _nut_bump(sdf, a, physics.nu)
    sample = MeshSample(pos, spec.u_inf, spec.angle_of_attack, sdf, mask, targets, tri, edges)
    validate(sample)
    return sample


def generate(spec: CaseSpec, physics: PhysicsConfig | None = None) -> MeshSample:
    if spec.kind == "couette":
        return gen_couette(spec, physics)
    return gen_cylinder_potential(spec, physics)


def analytic_forces(spec: CaseSpec, physics: PhysicsConfig | None = None) -> AnalyticForces:
    physics = physics or PhysicsConfig()
    if spec.kind == "couette":
        tau = np.array([physics.nu * spec.u_inf / spec.scale * 1.0, 0.0])
        wp = np.zeros(2)
    elif spec.kind == "cylinder_potential":
        alpha = np.deg2rad(spec.angle_of_attack)
        tau = np.zeros(2)
        # Kutta-Joukowski: perpendicular to the free stream, d'Alembert: no drag
        wp = physics.rho * spec.u_inf * spec.circulation * np.array([-np.sin(alpha), np.cos(alpha)])
    else:
        raise ArgumentError(f"unsupported case kind {spec.kind!r}")
    total = tau + wp
    return AnalyticForces(tau, wp, float(total[0]), float(total[1]))


def corpus_specs(kind: str, n_samples: int, seed: int, **overrides) -> list[CaseSpec]:
    """Per-sample case parameters drawn over the benchmark's physical ranges.

    Inlet speed is uniform in [10, 50] m/s. Cylinders also draw an angle of
    attack in [-0.3, 0.3] degrees and a circulation of up to pi * U * a in
    magnitude, which keeps both stagnation points on the body.
    """
    if n_samples < 0:
        raise ArgumentError("n_samples must be >= 0")
    rng = np.random.default_rng(seed)
    specs = []
    for k in range(n_samples):
        speed = float(rng.uniform(10.0, 50.0))
        aoa = float(rng.uniform(-0.3, 0.3))
        c = float(rng.uniform(-np.pi, np.pi))
        sample_seed = int(rng.integers(0, 2**31 - 1))
        base = CaseSpec(kind=kind, u_inf=speed, seed=sample_seed)
        if kind == "cylinder_potential":
            base = replace(base, angle_of_attack=aoa, circulation=c * speed * base.scale)
        else:
            base = replace(base, scale=1.0, n_surface=32, n_volume=600)
        specs.append(replace(base, **overrides))
    return specs


def gen_corpus(kind: str, n_samples: int, seed: int, physics: PhysicsConfig | None = None,
               **overrides) -> list[MeshSample]:
    return [generate(s, physics) for s in corpus_specs(kind, n_samples, seed, **overrides)]
