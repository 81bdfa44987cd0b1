import math

import numpy as np
import pytest

from shelab.grid import FieldEnsemble
from shelab.invariant import (InvariantSampleSpec, annealing_diagnostic, annealing_table,
                              default_horizon, dual_fixed_point, forward_reverse_check,
                              invariance_check, sample_invariant)
from shelab.noise import PathEnsemble, lattice_modes
from shelab.solver import (EXACT_LINEAR, ConstantProfile, SamplerProfile, SigmaSpec, SpdeProblem,
                           evolve_ensemble)
from shelab.spectral import SpectralMeasure
from shelab.stats import dual_tail_oracle, mode_variance, sample_gaussian_field


def test_default_horizon(grid, unit_mu):
    modes = lattice_modes(grid, unit_mu)
    assert default_horizon(modes) == pytest.approx(math.log(1000) / 2)


def test_spec_validation(grid, unit_mu):
    with pytest.raises(ValueError, match="margin"):
        InvariantSampleSpec(1.0, 1.0, grid, unit_mu, SigmaSpec.linear(2.0), 4, 0)
    spec = InvariantSampleSpec(1.0, 1.0, grid, unit_mu, SigmaSpec.linear(2.0), 4, 0,
                               allow_violation=True)
    assert spec.margin == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        InvariantSampleSpec(1.0, 1.0, grid, unit_mu, SigmaSpec.constant(1.0), 0, 0)
    assert InvariantSampleSpec(1.0, 1.0, grid, unit_mu, SigmaSpec.constant(1.0), 2, 0).scheme == EXACT_LINEAR


def test_zero_noise_samples_equal_theta(grid, unit_mu):
    spec = InvariantSampleSpec(0.4, None, grid, unit_mu, SigmaSpec.constant(0.0), 3, 1)
    ens = sample_invariant(spec)
    np.testing.assert_array_equal(ens.values, 0.4)
    assert ens.meta["horizon"] == pytest.approx(3.45, abs=0.01)


def test_pam_from_zero_stays_zero(grid, unit_mu):
    spec = InvariantSampleSpec(0.0, 0.5, grid, unit_mu, SigmaSpec.linear(1.0), 3, 1)
    assert np.all(sample_invariant(spec).values == 0)


def test_sampler_is_reproducible(grid, unit_mu):
    spec = InvariantSampleSpec(1.0, 0.3, grid, unit_mu, SigmaSpec.linear(0.5), 40, 7)
    a = sample_invariant(spec).values
    b = sample_invariant(spec, threads=2).values
    assert a.tobytes() == b.tobytes()


def test_repeated_horizons_give_zero_distance(grid, unit_mu):
    p = SpdeProblem(grid, unit_mu, SigmaSpec.linear(1.0))
    paths = PathEnsemble.replicas(grid, unit_mu, 1e-2, 3, 4, 20)
    tr, ens = dual_fixed_point(1.0, p, paths, [20, 20])
    assert tr.pair_distances == [0.0] and tr.sup_distances == [0.0]
    with pytest.raises(ValueError):
        dual_fixed_point(1.0, p, paths, [10, 5])
    with pytest.raises(ValueError):
        dual_fixed_point(1.0, p, paths, [10, 30])


def test_dual_constant_sigma_tail(grid, unit_mu):
    # with additive noise the horizon-to-horizon gap is an explicit Gaussian tail
    R, c0 = 400, 1.0
    p = SpdeProblem(grid, unit_mu, SigmaSpec.constant(c0))
    paths = PathEnsemble.replicas(grid, unit_mu, 1e-2, 5, R, 160)
    horizons = [40, 80, 120, 160]  # equal gaps, so the tail shrinks
    tr, _ = dual_fixed_point(0.0, p, paths, horizons)
    modes = lattice_modes(grid, unit_mu)
    for i in range(3):
        target = dual_tail_oracle(modes, c0, 1e-2, horizons[i], horizons[i + 1])
        assert abs(tr.pair_distances[i] - target) < 4 * tr.pair_se[i]
    assert tr.decreasing()


def test_cauchy_trace_decreasing_rule():
    from shelab.invariant import CauchyTrace
    tr = CauchyTrace([1, 2, 3], [1.0, 0.5], [0.1, 0.1])
    assert tr.decreasing()
    tr = CauchyTrace([1, 2, 3], [1.0, 0.9], [0.1, 0.1])
    assert not tr.decreasing()


def test_forward_reverse_one_step_identical(grid, unit_mu):
    p = SpdeProblem(grid, unit_mu, SigmaSpec.linear(1.0))
    paths = PathEnsemble.replicas(grid, unit_mu, 1e-2, 5, 8, 1)
    rows = forward_reverse_check(1.0, p, paths, [1])
    assert {r[1] for r in rows} == {"mean", "second_moment", "lag1_product"}
    assert all(r[2] == r[3] and r[4] == 0 for r in rows)


def test_annealing_trivial_cases(grid):
    const = FieldEnsemble(grid, np.full((5,) + grid.shape, 2.0))
    assert annealing_diagnostic(const, [0.1, 1.0]) == [0.0, 0.0]
    # constant-in-space random offsets are untouched by heat smoothing
    off = FieldEnsemble(grid, SamplerProfile("shared_offset", 1).values(grid, range(400)))
    rows = annealing_table(off, [0.5, 5.0])
    z = off.values[:, 0, 0, 0]
    for t, sup, avg, se in rows:
        assert sup == pytest.approx(z.var(ddof=1), rel=1e-9)
        assert abs(sup - 1.0) < 4 * math.sqrt(2 / 400)
    with pytest.raises(ValueError):
        annealing_table(off, [0.0])


def test_invariance_check_on_stationary_law(grid, unit_mu):
    # exact stationary Gaussian draws stay stationary under the exact OU step
    modes = lattice_modes(grid, unit_mu)
    v = mode_variance(modes, 1.0)
    samples = sample_gaussian_field(grid, modes, v, 300, 9, theta=1.0)
    p = SpdeProblem(grid, unit_mu, SigmaSpec.constant(1.0))
    rep = invariance_check(samples, p, 50, fresh_seed=10)
    assert rep.passed, rep.rows
    # a non-stationary start is detected
    cold = FieldEnsemble(grid, np.ones((300,) + grid.shape))
    assert not invariance_check(cold, p, 50, fresh_seed=10).passed


def test_pam_sampler_mean(grid, unit_mu):
    # E u(T) = theta for the linear model
    R = 128
    spec = InvariantSampleSpec(1.0, 1.0, grid, unit_mu, SigmaSpec.linear(0.5), R, 3)
    per = sample_invariant(spec).values.reshape(R, -1).mean(axis=1)
    assert abs(per.mean() - 1.0) < 4 * per.std(ddof=1) / math.sqrt(R)


def test_gaussian_covariance_does_not_depend_on_theta(grid, unit_mu):
    from shelab.stats import lag_covariance
    ens = [sample_invariant(InvariantSampleSpec(th, 2.0, grid, unit_mu, SigmaSpec.constant(1.0), 64, 5))
           for th in (0.0, 1.0)]
    np.testing.assert_allclose(ens[1].values - ens[0].values, 1.0, atol=1e-12)
    for lag in [(0, 0, 0), (1, 0, 0), (2, 3, 0)]:
        assert lag_covariance(ens[0], lag)[0] == pytest.approx(lag_covariance(ens[1], lag)[0], rel=1e-9)
