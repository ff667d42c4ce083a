import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afbench.errors import DegenerateGeometryError, FormatError, IoError, TopologyError, ValidationError
from afbench.mesh import (
    MeshSample,
    PhysicsConfig,
    read_meta,
    read_sample,
    sdf_to_surface,
    surface_chain,
    surface_normals,
    validate,
    write_sample,
)
from afbench.synthetic import CaseSpec, generate

from conftest import circle_points, polygon_sample


def test_physics_defaults_and_validation():
    p = PhysicsConfig()
    assert (p.nu, p.rho, p.char_length) == (1e-5, 1.0, 1.0)
    for bad in ({"nu": 0.0}, {"rho": -1.0}, {"char_length": float("nan")}):
        with pytest.raises(ValidationError):
            PhysicsConfig(**bad)


# --- file format -------------------------------------------------------------

def test_round_trip_is_bit_exact(tmp_path, cylinder):
    path = tmp_path / "s.afm"
    write_sample(cylinder, path, provenance="unit test")
    back = read_sample(path)
    assert back.equals(cylinder)
    meta = read_meta(path)
    assert meta["provenance"] == "unit test"
    assert meta["nu"] == 1e-5


def test_written_bytes_are_deterministic(tmp_path, couette):
    a, b = tmp_path / "a.afm", tmp_path / "b.afm"
    write_sample(couette, a)
    write_sample(couette, b)
    assert a.read_bytes() == b.read_bytes()


def test_couette_round_trip_revalidates(tmp_path, couette):
    write_sample(couette, tmp_path / "c.afm")
    validate(read_sample(tmp_path / "c.afm"))


def test_bad_magic(tmp_path, couette):
    path = tmp_path / "c.afm"
    write_sample(couette, path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="magic"):
        read_sample(path)


@pytest.mark.parametrize("cut", [3, 20, 200, -1])
def test_truncated_file(tmp_path, couette, cut):
    path = tmp_path / "c.afm"
    write_sample(couette, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:cut])
    with pytest.raises(FormatError):
        read_sample(path)


def test_trailing_bytes(tmp_path, couette):
    path = tmp_path / "c.afm"
    write_sample(couette, path)
    path.write_bytes(path.read_bytes() + b"\0")
    with pytest.raises(FormatError, match="trailing"):
        read_sample(path)


def test_invalid_sample_is_not_written(tmp_path, couette):
    bad = couette.with_targets(couette.targets.copy())
    bad.sdf = bad.sdf.copy()
    bad.sdf[5] = -1.0
    path = tmp_path / "bad.afm"
    with pytest.raises(ValidationError):
        write_sample(bad, path)
    assert not path.exists()


def test_unwritable_path(tmp_path, couette):
    with pytest.raises(IoError):
        write_sample(couette, tmp_path / "missing" / "c.afm")


def test_missing_file():
    with pytest.raises(IoError):
        read_sample("/nonexistent/x.afm")


# --- validation --------------------------------------------------------------

def test_negative_sdf_names_node(couette):
    s = couette.with_targets(couette.targets)
    s.sdf = s.sdf.copy()
    s.sdf[17] = -1.0
    with pytest.raises(ValidationError, match="node 17"):
        validate(s)


def test_triangle_out_of_range(couette):
    s = couette.with_targets(couette.targets)
    s.triangles = s.triangles.copy()
    s.triangles[4, 1] = s.n_nodes + 3
    with pytest.raises(ValidationError, match="triangle 4"):
        validate(s)


def test_surface_node_with_positive_sdf(couette):
    s = couette.with_targets(couette.targets)
    s.sdf = s.sdf.copy()
    node = int(np.flatnonzero(s.surface_mask)[2])
    s.sdf[node] = 0.1
    with pytest.raises(ValidationError, match=f"node {node}"):
        validate(s)


def test_unmasked_surface_endpoint(couette):
    s = couette.with_targets(couette.targets)
    s.surface_mask = s.surface_mask.copy()
    node = int(s.surface_edges[3, 0])
    s.surface_mask[node] = False
    with pytest.raises(ValidationError, match="surface edge"):
        validate(s)


def test_non_finite_targets(couette):
    t = couette.targets.copy()
    t[9, 2] = np.inf
    with pytest.raises(ValidationError, match="node 9"):
        validate(couette.with_targets(t))


# --- surface topology and normals --------------------------------------------

def test_unit_square_normals():
    # counter-clockwise around a square body with fluid outside
    pts = [(0, 0), (0.5, 0), (1, 0), (1, 0.5), (1, 1), (0.5, 1), (0, 1), (0, 0.5)]
    s = polygon_sample(pts)
    nodes, normals = surface_normals(s)
    by_node = dict(zip(nodes.tolist(), normals))
    r = np.sqrt(0.5)
    pos = np.asarray(pts)
    for k, p in enumerate(pos):
        n = by_node[k]
        direction = np.sign(p - 0.5)
        expected = direction / np.linalg.norm(direction)
        assert np.allclose(n, expected, atol=1e-12)
        if np.all(direction != 0):
            assert np.allclose(np.abs(n), [r, r], atol=1e-12)


def test_circle_normals_are_radial():
    pts = circle_points(256)
    s = polygon_sample(pts)
    nodes, normals = surface_normals(s)
    radial = pts[nodes] / np.linalg.norm(pts[nodes], axis=1, keepdims=True)
    assert np.abs(normals - radial).max() < 1e-3
    assert np.allclose(np.linalg.norm(normals, axis=1), 1.0, atol=1e-12)


def test_coincident_points_are_degenerate():
    pts = [(0, 0), (1, 0), (1, 0), (0, 1)]
    with pytest.raises(DegenerateGeometryError):
        surface_normals(polygon_sample(pts))


def test_branching_chain_is_topology_error():
    s = polygon_sample(circle_points(6))
    s.surface_edges = np.concatenate([s.surface_edges, [[0, 3]]])
    with pytest.raises(TopologyError):
        surface_chain(s)


def test_two_loops_are_topology_error():
    a = circle_points(5)
    b = circle_points(5) + 5.0
    s = polygon_sample(np.concatenate([a, b]))
    edges = np.array([[i, (i + 1) % 5] for i in range(5)] + [[5 + i, 5 + (i + 1) % 5] for i in range(5)])
    s.surface_edges = edges
    with pytest.raises(TopologyError):
        surface_chain(s)


def test_open_chain_is_accepted(couette):
    nodes, closed = surface_chain(couette)
    assert not closed
    assert len(nodes) == len(couette.surface_edges) + 1
    _, normals = surface_normals(couette)
    assert np.allclose(normals, [0.0, 1.0])


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 2 * np.pi), st.integers(5, 40))
def test_normals_rotate_with_the_body(theta, n):
    pts = circle_points(n) * np.array([1.0, 0.6])
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    _, base = surface_normals(polygon_sample(pts))
    _, turned = surface_normals(polygon_sample(pts @ rot.T))
    assert np.abs(turned @ rot - base).max() < 1e-12


# --- sdf ---------------------------------------------------------------------

def test_sdf_on_node_and_above_segment():
    s = polygon_sample([(-1, 0), (1, 0), (1, -1), (-1, -1)][::-1])
    assert sdf_to_surface(s.node_pos[2], s) == 0.0
    assert sdf_to_surface((0.0, 0.3), s) == pytest.approx(0.3, abs=1e-15)


def test_sdf_against_dense_resampling():
    rng = np.random.default_rng(0)
    pts = circle_points(12) * np.array([1.0, 0.4])
    s = polygon_sample(pts)
    t = np.linspace(0.0, 1.0, 20001)
    a, b = pts, np.roll(pts, -1, axis=0)
    dense = (a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]).reshape(-1, 2)
    probes = rng.uniform(-2, 2, (100, 2))
    got = sdf_to_surface(probes, s)
    want = np.array([np.min(np.hypot(*(dense - p).T)) for p in probes])
    assert np.abs(got - want).max() < 1e-6


def test_generated_sdf_matches_geometry(cylinder):
    assert np.abs(sdf_to_surface(cylinder.node_pos, cylinder) - cylinder.sdf).max() < 1e-6


def test_inputs_layout(cylinder):
    x = cylinder.inputs()
    assert x.shape == (cylinder.n_nodes, 4)
    assert np.array_equal(x[:, :2], cylinder.node_pos)
    assert np.all(x[:, 2] == cylinder.inlet_speed)
    assert np.array_equal(x[:, 3], cylinder.sdf)


def test_equals_detects_a_single_bit(cylinder):
    other = cylinder.with_targets(cylinder.targets.copy())
    assert other.equals(cylinder)
    other.targets[0, 0] = np.nextafter(other.targets[0, 0], np.inf)
    assert not other.equals(cylinder)


def test_generated_samples_validate():
    for spec in (CaseSpec("couette"), CaseSpec("cylinder_potential", n_surface=32, n_volume=300)):
        validate(generate(spec))
