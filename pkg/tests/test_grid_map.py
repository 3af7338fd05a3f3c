import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import ndimage

from harmonic_explore.environment import box_environment, generate_maze
from harmonic_explore.grid_map import (HIT, MISS, GridError, SensorConfig, VoxelGrid,
                                       fibonacci_directions, logit)

CFG = SensorConfig()


def line_grid(n=12):
    return VoxelGrid(np.zeros(3), 0.25, (n, 1, 1))


def test_single_ray_log_odds_ledger():
    g = line_grid()
    # sensor just inside cell 1, wall surface inside the 8th cell at x = 1.9
    g.integrate_rays([0.01, 0.125, 0.125], np.array([[1.0, 0, 0]]), [1.89], CFG)
    lo = g.log_odds[:, 0, 0]
    np.testing.assert_allclose(lo[:7], np.log(0.4 / 0.6))
    assert lo[7] == pytest.approx(np.log(0.7 / 0.3))
    assert np.all(lo[8:] == 0.0)


def test_hit_on_shared_face_marks_the_far_cell():
    g = line_grid()
    g.integrate_rays([0.01, 0.125, 0.125], np.array([[1.0, 0, 0]]), [1.99], CFG)
    lo = g.log_odds[:, 0, 0]
    assert lo[7] < 0 and lo[8] > 0


def test_no_return_marks_misses_up_to_range():
    g = line_grid(20)
    cfg = SensorConfig(range=1.0)
    g.integrate_rays([0.01, 0.125, 0.125], np.array([[1.0, 0, 0]]), [np.inf], cfg)
    lo = g.log_odds[:, 0, 0]
    # the ray ends at x = 1.01, inside the fifth cell
    assert np.all(lo[:5] < 0) and np.all(lo[5:] == 0.0)


def test_unobserved_and_saturated_probabilities():
    g = VoxelGrid(np.zeros(3), 0.25, (4, 4, 4))
    assert g.probability_at([0.3, 0.3, 0.3]) == 0.5
    for _ in range(30):
        g.integrate_rays([0.01, 0.125, 0.125], np.array([[1.0, 0, 0]]), [0.6], CFG)
    assert g.log_odds[2, 0, 0] == g.l_max
    assert g.probability_at(g.centers([[2, 0, 0]])[0]) == pytest.approx(
        1.0 / (1.0 + np.exp(-g.l_max)))


def test_face_tie_break_picks_smaller_index():
    g = VoxelGrid(np.zeros(3), 1.0, (2, 1, 1))
    g.set_probability(np.array([[[True]], [[False]]]), 0.2, lock=False)
    g.set_probability(np.array([[[False]], [[True]]]), 0.9, lock=False)
    assert g.probability_at([1.0, 0.5, 0.5]) == pytest.approx(0.2)


def test_probability_outside_grid_raises():
    g = VoxelGrid(np.zeros(3), 1.0, (2, 2, 2))
    with pytest.raises(GridError):
        g.probability_at([3.0, 0.5, 0.5])


def test_free_component_examples():
    g = VoxelGrid(np.zeros(3), 1.0, (3, 3, 3))
    g.set_probability(np.ones(g.dims, bool), 0.2, lock=False)
    assert g.free_component([0.5, 0.5, 0.5]).sum() == 27

    g = VoxelGrid(np.zeros(3), 1.0, (5, 2, 2))
    g.set_probability(np.ones(g.dims, bool), 0.2, lock=False)
    wall = np.zeros(g.dims, bool)
    wall[2] = True
    g.set_probability(wall, 0.9, lock=False)
    comp = g.free_component([0.5, 0.5, 0.5])
    assert comp[:2].all() and not comp[2:].any()

    g = VoxelGrid(np.zeros(3), 1.0, (5, 1, 1))
    g.set_probability(np.ones(g.dims, bool), 0.2, lock=False)
    gap = np.zeros(g.dims, bool)
    gap[3] = True
    g.set_probability(gap, 0.5, lock=False)
    comp = g.free_component([0.5, 0.5, 0.5])
    assert comp[:3].all() and not comp[3:].any()


def test_free_component_rejects_non_free_seed():
    g = VoxelGrid(np.zeros(3), 1.0, (2, 2, 2))
    with pytest.raises(GridError, match="Pr = 0.5"):
        g.free_component([0.5, 0.5, 0.5])


def _bfs(free, seed):
    seen = np.zeros_like(free)
    stack = [seed]
    seen[seed] = True
    while stack:
        c = stack.pop()
        for ax in range(3):
            for s in (-1, 1):
                n = list(c)
                n[ax] += s
                n = tuple(n)
                if all(0 <= n[i] < free.shape[i] for i in range(3)) and free[n] and not seen[n]:
                    seen[n] = True
                    stack.append(n)
    return seen


@given(st.integers(0, 2 ** 31 - 1))
def test_free_component_matches_bfs(seed):
    r = np.random.default_rng(seed)
    g = VoxelGrid(np.zeros(3), 1.0, (5, 4, 3))
    g.log_odds = r.choice([-1.0, 0.0, 1.0], size=g.dims)
    free = g.free_mask()
    if not free.any():
        return
    cell = tuple(np.argwhere(free)[0])
    comp = g.free_component(g.centers([cell])[0])
    assert np.array_equal(comp, _bfs(free, cell))


def test_free_component_is_six_connected():
    g = VoxelGrid(np.zeros(3), 1.0, (2, 2, 1))
    m = np.array([[[True], [False]], [[False], [True]]])
    g.set_probability(m, 0.2, lock=False)
    assert g.free_component([0.5, 0.5, 0.5]).sum() == 1


def test_fibonacci_directions_are_unit_and_balanced():
    d = fibonacci_directions(2000)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0)
    assert np.all(np.abs(d.mean(axis=0)) < 2e-3)


def test_scan_in_box_smaller_than_range():
    env = box_environment([0, 0, 0], [2, 2, 1])
    g = VoxelGrid.covering(*env.bounds, 0.25)
    g.integrate_scan([1.0, 1.0, 0.5], env, CFG)
    truth = env.voxelize(g)
    # every cell centred inside the box is seen free after one scan
    assert np.all(g.probability[truth] < 0.5)


def test_scan_outside_environment_rejected():
    env = box_environment([0, 0, 0], [1, 1, 1])
    g = VoxelGrid.covering(*env.bounds, 0.25)
    with pytest.raises(GridError):
        g.integrate_scan([2.0, 0.5, 0.5], env, CFG)


def test_repeated_scans_move_toward_class_and_clamp():
    maze = generate_maze(3, 3, seed=0)
    env = maze.environment()
    g = VoxelGrid.covering(*env.bounds, 0.25)
    prev = None
    hit_every = None
    for _ in range(12):
        before = g.log_odds.copy()
        status = g.integrate_scan(env.start, env, CFG)
        assert g.log_odds.min() >= g.l_min and g.log_odds.max() <= g.l_max
        hit_every = (status == HIT) if hit_every is None else hit_every & (status == HIT)
        moved = status > 0
        up = g.log_odds[moved & (status == HIT)] >= before[moved & (status == HIT)]
        down = g.log_odds[status == MISS] <= before[status == MISS]
        assert up.all() and down.all()
        prev = status
    assert hit_every.any()


def test_sensor_soundness_against_ground_truth():
    maze = generate_maze(3, 3, seed=4)
    env = maze.environment()
    g = VoxelGrid.covering(*env.bounds, 0.25)
    for p in [env.start, env.start + [0.5, 0, 0], env.start + [0, 0.5, 0]]:
        if env.contains(np.asarray(p)[None])[0]:
            g.integrate_scan(p, env, CFG)
    idx = np.indices(g.dims).reshape(3, -1).T
    deep = (~env.contains(g.centers(idx))) & \
        (env.distance(g.centers(idx)) >= np.sqrt(3) * g.cell_size)
    assert not np.any(g.free_mask().reshape(-1)[deep])


def test_binary_round_trip_and_vtk(tmp_path):
    g = VoxelGrid([0.5, -1.0, 2.0], 0.25, (3, 4, 5))
    g.log_odds = np.random.default_rng(1).uniform(-2, 2, g.dims)
    g.write_binary(tmp_path / "m.bin")
    h = VoxelGrid.read_binary(tmp_path / "m.bin")
    np.testing.assert_allclose(h.log_odds, g.log_odds, rtol=1e-6)
    assert np.array_equal(h.dims, g.dims) and h.cell_size == g.cell_size
    g.write_vtk(tmp_path / "m.vtk")
    text = (tmp_path / "m.vtk").read_text().splitlines()
    assert "DIMENSIONS 3 4 5" in text
    vals = np.array([float(v) for v in text[10:]])
    np.testing.assert_allclose(vals, g.probability.ravel(order="F"), rtol=1e-6)


def test_sensor_config_validation():
    with pytest.raises(ValueError):
        SensorConfig(p_hit=0.4)
    with pytest.raises(ValueError):
        SensorConfig(p_miss=0.6)
    with pytest.raises(ValueError):
        SensorConfig(range=0.0)


def test_locked_cells_block_rays_and_keep_values():
    g = line_grid()
    lock = np.zeros(g.dims, bool)
    lock[3] = True
    g.set_probability(lock, 0.99, lock=True)
    before = g.log_odds[3, 0, 0]
    g.integrate_rays([0.01, 0.125, 0.125], np.array([[1.0, 0, 0]]), [2.5], CFG)
    assert g.log_odds[3, 0, 0] == before
    assert np.all(g.log_odds[4:, 0, 0] == 0.0)
