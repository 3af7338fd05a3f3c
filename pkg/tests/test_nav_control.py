import numpy as np
import pytest

from harmonic_explore.nav_control import RobotState, bump, step, velocity_command


def test_bump_values():
    assert bump(-1.0, 2.0) == 0.0
    assert bump(3.0, 2.0) == 1.0
    assert bump(1.0, 2.0) == pytest.approx(0.5)
    np.testing.assert_allclose(bump(np.array([0.0, 0.5]), 1.0), [0.0, 0.5])


def test_velocity_command_gate():
    g = np.array([0.3, -0.1, 0.2])
    u, s = velocity_command(g, 1.0, 1.0, 0.2)
    np.testing.assert_allclose(u, -g) and s == 1.0
    u, s = velocity_command(g, 0.0, 1.0, 0.2)
    assert s == 0.0 and np.all(u == 0)
    u, s = velocity_command(g, 0.1, 2.0, 0.2)
    assert s == pytest.approx(0.5)
    np.testing.assert_allclose(u, -g)


def test_velocity_cap_keeps_direction():
    g = np.array([3.0, 4.0, 0.0])
    u, _ = velocity_command(g, 1.0, 1.0, 0.2, u_max=1.0)
    np.testing.assert_allclose(u, [-0.6, -0.8, 0.0])


def test_step():
    r = RobotState(np.array([1.0, 2.0, 3.0]))
    out, n = step(r, np.zeros(3), 0.05)
    np.testing.assert_array_equal(out.p, r.p) and n == 1
    u = np.array([0.2, -0.1, 0.05])
    for _ in range(20):
        r, _ = step(r, u, 0.05)
    np.testing.assert_allclose(r.p, [1.0, 2.0, 3.0] + 1.0 * u, atol=1e-12)
    assert r.t == pytest.approx(1.0)
    out, n = step(RobotState(np.zeros(3)), np.array([10.0, 0, 0]), 0.05, max_displacement=0.0625)
    assert n == 8 and out.p[0] == pytest.approx(0.5)
    with pytest.raises(ValueError):
        step(r, u, 0.0)
