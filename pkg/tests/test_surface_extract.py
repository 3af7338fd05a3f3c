import numpy as np
import pytest
from hypothesis import given, strategies as st

from harmonic_explore.grid_map import VoxelGrid
from harmonic_explore.surface_extract import (FREE, OCCUPIED, attach_occupancy,
                                              exposed_face_count, extract_boundary,
                                              load_surface, read_obj, read_stl, write_obj,
                                              write_stl)

CS = 0.25


def grid_with(mask, cs=CS):
    g = VoxelGrid(np.zeros(3), cs, mask.shape)
    g.set_probability(mask, 0.2, lock=False)
    return g


def test_single_cell():
    m = np.zeros((3, 3, 3), bool)
    m[1, 1, 1] = True
    s = extract_boundary(m, grid_with(m))
    assert len(s) == 12
    assert s.areas.sum() == pytest.approx(6 * CS ** 2)
    assert s.volume() == pytest.approx(CS ** 3)
    assert s.is_watertight()


def test_two_cell_block():
    m = np.zeros((4, 3, 3), bool)
    m[1:3, 1, 1] = True
    s = extract_boundary(m, grid_with(m))
    assert s.areas.sum() == pytest.approx(10 * CS ** 2)
    assert s.volume() == pytest.approx(2 * CS ** 3)
    assert s.is_watertight()


def test_l_shape_is_genus_zero():
    m = np.zeros((4, 4, 3), bool)
    m[1, 1, 1] = m[2, 1, 1] = m[1, 2, 1] = True
    s = extract_boundary(m, grid_with(m))
    assert s.euler_characteristic() == 2


def test_normals_point_outward():
    m = np.zeros((5, 5, 5), bool)
    m[1:4, 1:4, 1:4] = True
    s = extract_boundary(m, grid_with(m))
    centre = np.full(3, 2.5 * CS)
    assert np.all(np.einsum("ij,ij->i", s.centroids - centre, s.normals) > 0)


@given(st.integers(0, 2 ** 31 - 1))
def test_random_masks_watertight_with_exact_volume(seed):
    r = np.random.default_rng(seed)
    m = np.zeros((6, 6, 6), bool)
    m[1:5, 1:5, 1:5] = r.random((4, 4, 4)) < 0.6
    if not m.any():
        return
    s = extract_boundary(m, grid_with(m))
    assert s.is_watertight()
    assert s.volume() == pytest.approx(m.sum() * CS ** 3)
    assert s.areas.sum() == pytest.approx(exposed_face_count(m) * CS ** 2)


def test_edge_touching_cells_stay_manifold():
    m = np.zeros((4, 4, 3), bool)
    m[1, 1, 1] = m[2, 2, 1] = True
    s = extract_boundary(m, grid_with(m))
    assert s.is_watertight()
    assert s.volume() == pytest.approx(2 * CS ** 3)


def test_attach_occupancy_probes_the_neighbour():
    m = np.zeros((3, 3, 3), bool)
    m[1, 1, 1] = True
    g = grid_with(m)
    occ = np.zeros_like(m)
    occ[2, 1, 1] = True
    g.set_probability(occ, 0.9, lock=False)
    s = extract_boundary(m, g)
    bd = attach_occupancy(s, g, 0.5)
    plus_x = s.normals[:, 0] > 0.5
    assert np.all(bd.label[plus_x] == OCCUPIED)
    assert np.all(bd.label[~plus_x] == FREE)
    np.testing.assert_allclose(bd.probability[~plus_x], 0.5)


def test_probe_outside_grid_reads_unobserved():
    m = np.ones((1, 1, 1), bool)
    g = grid_with(m)
    s = extract_boundary(m, g)
    bd = attach_occupancy(s, g, 0.5)
    assert np.all(bd.probability == 0.5) and np.all(bd.label == FREE)


def test_exact_threshold_counts_as_free():
    m = np.zeros((3, 1, 1), bool)
    m[1] = True
    g = grid_with(m)
    s = extract_boundary(m, g)
    assert np.all(attach_occupancy(s, g, 0.5).label == FREE)


def test_mesh_round_trips(tmp_path):
    m = np.zeros((4, 4, 4), bool)
    m[1:3, 1:3, 1] = True
    s = extract_boundary(m, grid_with(m))
    write_stl(s, tmp_path / "s.stl")
    write_obj(s, tmp_path / "s.obj")
    for t in (read_stl(tmp_path / "s.stl"), read_obj(tmp_path / "s.obj"),
              load_surface(tmp_path / "s.obj")):
        assert len(t) == len(s)
        assert t.is_watertight()
        assert t.volume() == pytest.approx(s.volume(), rel=1e-6)
