import numpy as np
import pytest
from hypothesis import given, strategies as st

from harmonic_explore.bvp_control import (BoundaryValueState, ControlParams, DegenerateBVPError,
                                          b_e_flag, compatibility, gain_c, gain_mu, k_prime,
                                          project_bounded, remap_on_reextraction,
                                          step_boundary_values, target_values,
                                          targets_from_kprime)
from harmonic_explore.nav_control import bump

P = ControlParams()


def test_table_defaults():
    assert (P.k_bar, P.alpha, P.K_u, P.R_1, P.mu_1) == (1.0, 0.5, 1.0, 0.2, 10 / 8)
    assert P.eps_w == P.eps_1 == P.eps_2 == 0.01


def test_param_validation():
    with pytest.raises(ValueError):
        ControlParams(mu_1=1.1)
    with pytest.raises(ValueError):
        ControlParams(eps_2=0.0)


def test_k_prime_shape():
    assert k_prime(0.25, 0.5) == pytest.approx(-0.5)
    assert k_prime(0.75, 0.5) == pytest.approx(0.5)
    assert k_prime(0.5, 0.5) == 0.0
    assert k_prime(1.0, 0.5) == 1.0 and k_prime(0.0, 0.5) == -1.0


def test_two_element_targets():
    np.testing.assert_allclose(targets_from_kprime([1, -1], np.array([1.0, 1.0]), 1.0), [1, -1])
    k = targets_from_kprime([1, -1], np.array([2.0, 1.0]), 1.0)
    np.testing.assert_allclose(k, [0.5, -1.0])
    assert np.array([2.0, 1.0]) @ k == pytest.approx(0.0)


def test_degenerate_targets():
    with pytest.raises(DegenerateBVPError):
        targets_from_kprime([1, 1], np.ones(2), 1.0)
    with pytest.raises(DegenerateBVPError):
        targets_from_kprime([-1, -0.5], np.ones(2), 1.0)


def test_unobserved_faces_sink():
    # Pr = 0.5 exactly sits below the nudged threshold, so it attracts
    k = target_values(np.array([0.9, 0.5, 0.5]), np.ones(3), P)
    assert k[0] > 0 and np.all(k[1:] < 0)


@given(st.integers(0, 2 ** 31 - 1))
def test_targets_bounded_and_compatible(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(2, 60))
    areas = r.uniform(0.01, 2.0, n)
    pr = r.uniform(0.01, 0.99, n)
    pr[0], pr[1] = 0.95, 0.05
    k = target_values(pr, areas, P)
    assert np.max(np.abs(k)) == pytest.approx(P.k_bar)
    assert abs(areas @ k) <= 1e-10 * (areas @ np.abs(k))


def test_gains():
    assert gain_c(0.0, P) == 0.0
    assert gain_c(P.eps_1 + P.eps_w, P) == 1.0
    assert gain_c(P.eps_1 + P.eps_w / 2, P) == pytest.approx(0.5)
    assert gain_mu(1.0, 0.0, 0.3, P) == 0.0
    assert gain_mu(1.0, 10.0, 0.0, P) == 1.0
    x = 3 * P.mu_1 / 4
    assert bump(x, P.mu_1) == pytest.approx(27 / 32)
    assert 27 / 32 < x
    with pytest.raises(ValueError):
        gain_mu(1.0, 1.0, -0.1, P)


def test_bump_below_identity():
    x = np.linspace(1e-6, 10, 20001)
    assert np.all(bump(x, P.mu_1) < x)


def test_b_e_flag():
    assert b_e_flag(np.array([0.1, -0.2]), np.array([True, False])) == 0
    assert b_e_flag(np.array([-0.1, 0.2]), np.array([True, False])) == 1
    assert b_e_flag(np.array([-0.1, -0.2]), np.array([False, False])) == 0


def test_euler_step_examples():
    st0 = BoundaryValueState.initial(["a"], [0.0])
    out = step_boundary_values(st0, np.ones(1), np.array([1.0]), 1.0, 1.0, 0, 0.5)
    assert out.k_hat[0] == pytest.approx(0.5)
    assert out.decay == pytest.approx(0.5)
    same = BoundaryValueState.initial(["a", "b"], [0.5, -0.5])
    out = step_boundary_values(same, np.ones(2), np.array([0.5, -0.5]), 1.0, 1.0, 1, 0.1)
    np.testing.assert_array_equal(out.k_hat, [0.5, -0.5])


def test_large_rate_substeps_and_stays_bounded():
    st0 = BoundaryValueState.initial(["a", "b"], [1.0, -1.0])
    target = np.array([-1.0, 1.0])
    out = step_boundary_values(st0, np.ones(2), target, 1.0, 1.0, 1, 5.0)
    assert np.all(np.abs(out.k_hat) <= 1.0)
    # sub-stepped decay never overshoots the target
    assert np.all(np.sign(out.k_hat - target) == np.sign(st0.k_hat - target))


@given(st.integers(0, 2 ** 31 - 1))
def test_euler_preserves_bounds_and_compatibility(seed):
    r = np.random.default_rng(seed)
    n = 20
    areas = r.uniform(0.1, 1.0, n)
    pr = r.uniform(0, 1, n)
    pr[:2] = (0.9, 0.1)
    kt = target_values(pr, areas, P)
    pr2 = r.uniform(0, 1, n)
    pr2[:2] = (0.1, 0.9)
    k0 = target_values(pr2, areas, P)
    state = BoundaryValueState(list(range(n)), k0.copy(), kt)
    for _ in range(200):
        state = step_boundary_values(state, areas, kt, r.uniform(), r.uniform(),
                                     int(r.integers(0, 2)), 0.05)
        assert np.max(np.abs(state.k_hat)) <= P.k_bar + 1e-12
        assert compatibility(areas, state.k_hat) <= 1e-10


def test_project_bounded_keeps_bounds():
    areas = np.array([1.0, 1.0, 1.0, 10.0])
    k = np.array([1.0, 1.0, 1.0, 0.5])
    out = project_bounded(areas, k, 1.0)
    assert np.all(np.abs(out) <= 1.0 + 1e-12)
    assert abs(areas @ out) < 1e-12


def test_remap_hand_example():
    old = BoundaryValueState(["a", "b", "c"], np.array([0.5, -0.25, -1.0]),
                             np.zeros(3))
    new = remap_on_reextraction(old, ["b", "c", "d"], np.array([1.0, 1.0, 2.0]),
                                np.array([0.1, 0.2, -0.3]), k_bar=1.0)
    # carried [-0.25, -1, -0.3]; area-weighted mean -0.4625 removed
    np.testing.assert_allclose(new.k_hat, [0.2125, -0.5375, 0.1625])
    np.testing.assert_allclose(new.k_target, [0.1, 0.2, -0.3])


def test_remap_without_history_starts_at_target():
    kt = np.array([0.5, -1.0])
    new = remap_on_reextraction(None, ["x", "y"], np.array([2.0, 1.0]), kt, 1.0)
    np.testing.assert_allclose(new.k_hat, kt)
