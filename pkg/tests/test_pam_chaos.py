import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shelab.noise import NoisePath, PathEnsemble, lattice_modes
from shelab.pam_chaos import (chaos_ensemble, chaos_evolve, chaos_moment_profile, chaos_supports,
                              remainder_bound)
from shelab.spectral import SpectralMeasure
from shelab.stats import first_chaos_oracle


def _paths(grid, mu, R, steps, seed=21):
    return PathEnsemble.replicas(grid, mu, 1e-2, seed, R, steps)


def test_order_zero_is_heat_flow_of_theta(grid, unit_mu):
    res = chaos_ensemble(0.8, 1.0, grid, unit_mu, _paths(grid, unit_mu, 2, 10), 10, 0)
    np.testing.assert_allclose(res.orders[0], 0.8, rtol=1e-14)


def test_single_step_single_order(grid, unit_mu):
    path = NoisePath(grid, unit_mu, 1e-2, 3, steps=1)
    J = chaos_evolve(1.3, 0.7, grid, unit_mu, path, 1, 1)
    dw = path.increment(0).values
    np.testing.assert_allclose(J[0].values, 1.3, rtol=1e-14)
    np.testing.assert_allclose(J[1].values, grid.smooth(0.7 * 1.3 * dw, 1e-2), atol=1e-15)


@pytest.mark.parametrize("engine", ["spectral", "real"])
def test_orders_sum_to_solution(grid, unit_mu, engine):
    res = chaos_ensemble(1.0, 1.0, grid, unit_mu, _paths(grid, unit_mu, 3, 12), 12, 12,
                         with_solution=True, engine=engine)
    assert res.identity_gap() < 1e-12
    # higher orders than steps stay exactly zero
    res2 = chaos_ensemble(1.0, 1.0, grid, unit_mu, _paths(grid, unit_mu, 2, 3), 3, 5)
    assert np.all(res2.orders[4:] == 0)


def test_engines_agree(grid, unit_mu):
    p = _paths(grid, unit_mu, 2, 30)
    a = chaos_ensemble(1.0, 0.9, grid, unit_mu, p, 30, 6, engine="spectral").orders
    b = chaos_ensemble(1.0, 0.9, grid, unit_mu, p, 30, 6, engine="real").orders
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-13)


@settings(max_examples=10, deadline=None)
@given(theta=st.floats(-2, 2))
def test_linear_in_theta(theta):
    from shelab.grid import TorusGrid
    grid = TorusGrid(2, 8)
    mu = SpectralMeasure.unit_atoms(2, 1.0)
    p = PathEnsemble.replicas(grid, mu, 1e-2, 1, 2, 15)
    base = chaos_ensemble(1.0, 1.0, grid, mu, p, 15, 4).orders
    scaled = chaos_ensemble(theta, 1.0, grid, mu, p, 15, 4).orders
    np.testing.assert_allclose(scaled, theta * base, rtol=1e-12, atol=1e-13)


def test_orders_are_orthogonal(grid, unit_mu):
    R = 2000
    res = chaos_ensemble(1.0, 1.0, grid, unit_mu, _paths(grid, unit_mu, R, 40), 40, 3)
    J = res.orders[:, :, 0, 0, 0]
    for m in range(4):
        for n in range(m + 1, 4):
            prod = J[m] * J[n]
            se = prod.std(ddof=1) / math.sqrt(R)
            assert abs(prod.mean()) < 4 * se


def test_first_chaos_matches_oracle(grid):
    mu = SpectralMeasure.unit_atoms(3, 0.5)
    R, M = 2000, 100
    res = chaos_ensemble(1.0, 1.0, grid, mu, _paths(grid, mu, R, M), M, 1)
    modes = lattice_modes(grid, mu)
    target = first_chaos_oracle(modes, 1.0, 1.0, M * 1e-2, dt=1e-2)
    # continuum value 0.25 (1 - e^{-2}) minus an O(dt) discretization gap
    assert target == pytest.approx(0.25 * (1 - math.exp(-2)), rel=2e-2)
    x = res.orders[1, :, 0, 0, 0] ** 2
    assert abs(x.mean() - target) < 3 * x.std(ddof=1) / math.sqrt(R)


def test_supports(grid, unit_mu):
    modes = lattice_modes(grid, unit_mu)
    sup = chaos_supports(modes, 2)
    assert len(sup[0]) == 1 and sup[0][0] == 0
    assert len(sup[1]) == 7
    # sums of at most two of the six atoms +-e_i: 0, +-e_i, +-2e_i, +-e_i+-e_j
    assert len(sup[2]) == 1 + 6 + 6 + 12


def test_remainder_bound_arithmetic():
    # C c0^2 / 2 * I = 1 -> 1/(n+1)!
    assert remainder_bound(2, 1.0, 2.0, 1.0) == pytest.approx(1 / 6)
    assert remainder_bound(3, 0.0, 2.0, 1.0) == 0.0
    b = 0.37
    for n in range(6):
        r = remainder_bound(n + 1, 1.0, 2 * b, 1.0) / remainder_bound(n, 1.0, 2 * b, 1.0)
        assert r == pytest.approx(b / (n + 2))
    with pytest.raises(ValueError):
        remainder_bound(-1, 1.0, 1.0, 1.0)


def test_moment_profile():
    orders = np.zeros((3, 4, 2, 2))
    orders[0] = 1.0
    orders[1, :, 0, 0] = 2.0
    prof = chaos_moment_profile(orders)
    np.testing.assert_allclose(prof.mean, [1.0, 1.0, 0.0])
    np.testing.assert_allclose(prof.sup, [1.0, 4.0, 0.0])
    np.testing.assert_allclose(prof.se, 0.0)
    with pytest.raises(ValueError):
        chaos_moment_profile(np.zeros((2, 0, 3)))


def test_thread_determinism(grid, unit_mu):
    p = _paths(grid, unit_mu, 70, 10)
    a = chaos_ensemble(1.0, 1.0, grid, unit_mu, p, 10, 3, threads=1).orders
    b = chaos_ensemble(1.0, 1.0, grid, unit_mu, p, 10, 3, threads=3).orders
    assert a.tobytes() == b.tobytes()
