import json
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shelab.grid import FieldEnsemble, TorusGrid
from shelab.noise import lattice_modes
from shelab.spectral import SpectralMeasure
from shelab.stats import (Verdict, annealing_oracle, compare_covariance, default_lag_set,
                          gaussian_covariance_oracle, gaussianity_test, holder_structure,
                          lag_covariance, lln_oracle, lln_test, mode_variance, moment_bound_test,
                          pam_two_point, rows_csv, sample_gaussian_field, singularity_test,
                          stationarity_test, structure_oracle, verdicts_json, zscore)


@pytest.fixture(scope="module")
def modes():
    return lattice_modes(TorusGrid(), SpectralMeasure.unit_atoms(3, 1.0))


def test_covariance_oracle_examples(modes):
    assert gaussian_covariance_oracle(modes, 1.0, [0, 0, 0]) == pytest.approx(0.5)
    assert gaussian_covariance_oracle(modes, 1.0, [math.pi, 0, 0]) == pytest.approx(1 / 6)
    assert gaussian_covariance_oracle(modes, 2.0, [0, 0, 0]) == pytest.approx(2.0)


def test_covariance_oracle_brute_force():
    grid = TorusGrid()
    ks = [(1, 2, 0), (0, -3, 1), (2, 2, 2)]
    ms = [0.3, 1.1, 0.45]
    m = lattice_modes(grid, SpectralMeasure.atomic(ks, ms))
    h = [0.7, -1.3, 2.2]
    mpmath.mp.dps = 30
    # symmetrized atoms +-k carry m/2 each; the integral is over all of them
    exact = mpmath.mpf(0)
    for k, w in zip(ks, ms):
        k2 = sum(mpmath.mpf(x) ** 2 for x in k)
        dot = sum(mpmath.mpf(a) * mpmath.mpf(b) for a, b in zip(k, h))
        exact += 2 * (w / 2) * mpmath.cos(dot) / k2
    exact *= mpmath.mpf(0.7) ** 2 / 2
    assert gaussian_covariance_oracle(m, 0.7, h) == pytest.approx(float(exact), rel=1e-13)


def test_other_oracles(modes):
    v = mode_variance(modes, 1.0)
    assert annealing_oracle(modes, v, 0.0) == pytest.approx(0.5)
    assert annealing_oracle(modes, v, 1.0) == pytest.approx(0.5 * math.exp(-2))
    assert structure_oracle(modes, v, [math.pi, 0, 0]) == pytest.approx(2 * (0.5 - 1 / 6))
    grid = TorusGrid()
    # the whole torus averages every nonzero mode away
    assert lln_oracle(grid, modes, v, math.pi) == pytest.approx(0.0, abs=1e-30)
    # one step from theta = 1: the kick adds c0^2 dt Lambda(h), whose modes
    # then relax by exp(-2 |k|^2 dt)
    out = pam_two_point(grid, modes, 1.0, 0.01, 1, 1.0)
    assert out[1] == pytest.approx(1 + 0.01 * math.exp(-0.02), rel=1e-13)
    assert pam_two_point(grid, modes, 0.0, 0.01, 5, 4.0)[5] == pytest.approx(4.0)


def test_zscore_edges():
    assert zscore(1.0, 0.5, 0.0) == 2.0
    assert zscore(1.0, 0.0, 1.0 + 1e-16) == 0.0
    assert zscore(1.0, 0.0, 0.5) == math.inf


@pytest.fixture(scope="module")
def gauss(modes):
    v = mode_variance(modes, 1.0)
    return sample_gaussian_field(TorusGrid(), modes, v, 2000, 31, theta=1.0)


def test_covariance_calibration(gauss, modes):
    grid = gauss.grid
    rep = compare_covariance(gauss, lambda h: gaussian_covariance_oracle(modes, 1.0, h),
                             default_lag_set(grid))
    assert len(rep.rows) == 25 and rep.passed
    bad = compare_covariance(gauss, lambda h: gaussian_covariance_oracle(modes, math.sqrt(2), h),
                             default_lag_set(grid))
    assert bad.max_abs_z > 10 and not bad.passed


def test_lag_symmetry(gauss):
    a = lag_covariance(gauss, (2, 1, 0))
    b = lag_covariance(gauss, (-2, -1, 0))
    assert a[0] == pytest.approx(b[0], rel=1e-12)


def test_constant_fields(grid):
    const = FieldEnsemble(grid, np.ones((5,) + grid.shape))
    est, se = lag_covariance(const, (1, 0, 0))
    assert est == 0 and se == 0
    assert stationarity_test(const, [(1, 0, 0)], [(0, 0, 0), (3, 3, 3)]).max_z == 0
    with pytest.raises(ValueError):
        compare_covariance(FieldEnsemble(grid, np.ones((1,) + grid.shape)), lambda h: 0.0, [(0, 0, 0)])


def test_stationarity(gauss):
    ys = [(0, 0, 0), (3, 5, 7), (8, 8, 8), (15, 2, 9)]
    assert stationarity_test(gauss, [(0, 0, 0), (1, 0, 0)], ys).passed
    x = gauss.grid.coords[0]
    shifted = FieldEnsemble(gauss.grid, gauss.values + np.cos(x))
    assert not stationarity_test(shifted, [(0, 0, 0)], ys).passed


def test_gaussianity(gauss):
    probes = [(0, 0, 0), (4, 0, 0), (0, 9, 3)]
    assert gaussianity_test(gauss, probes).passed
    skewed = FieldEnsemble(gauss.grid, np.exp(gauss.values))
    assert not gaussianity_test(skewed, probes).passed
    with pytest.raises(ValueError):
        gaussianity_test(FieldEnsemble(gauss.grid, gauss.values[:5]), probes)


def test_lln(gauss, modes):
    v = mode_variance(modes, 1.0)
    hws = [0.5, 1.0, 2.0, 3.0]
    rep = lln_test(gauss, 1.0, hws, oracle=lambda r: lln_oracle(gauss.grid, modes, v, r))
    assert rep.passed and rep.decreasing and rep.oracle_ok
    # a shared random offset never averages out
    z = np.random.default_rng(2).standard_normal(200)
    off = FieldEnsemble(gauss.grid, 1.0 + z[:, None, None, None] * np.ones(gauss.grid.shape))
    rep = lln_test(off, 1.0, hws)
    assert not rep.passed
    with pytest.raises(ValueError):
        lln_test(gauss, 1.0, [2.0, 1.0])


def test_singularity(modes):
    grid = TorusGrid()
    v = mode_variance(modes, 1.0)
    a = sample_gaussian_field(grid, modes, v, 200, 1, theta=0.0)
    b = sample_gaussian_field(grid, modes, v, 200, 2, theta=2.0)
    rep = singularity_test(a, b, [0.5, math.pi], 0.0, 2.0)
    assert rep.passed and rep.overlap == 0.0
    # identical laws overlap about one half
    c = sample_gaussian_field(grid, modes, v, 200, 3, theta=0.0)
    same = singularity_test(a, c, [0.5], 0.0, 0.0)
    assert not same.passed and abs(same.overlap - 0.5) < 0.1


def test_holder_slope_smooth_field():
    grid = TorusGrid(1, 64)
    m = lattice_modes(grid, SpectralMeasure.unit_atoms(1, 1.0))
    v = mode_variance(m, 1.0)
    s = sample_gaussian_field(grid, m, v, 400, 5)
    rep = holder_structure(s, [1, 2, 4, 8, 16])
    # smooth fields have S_2 ~ |h|^2 at small |h|
    assert rep.slope == pytest.approx(2.0, abs=0.15)
    for hn, est, se in zip(rep.offsets, rep.s_q, rep.se):
        assert abs(est - structure_oracle(m, v, [hn])) < 4 * se
    assert rep.consistent(0.5, 2)
    with pytest.raises(ValueError, match="decade"):
        holder_structure(s, [1, 2, 4])
    with pytest.raises(ValueError):
        holder_structure(s, [1, 32])
    with pytest.raises(ValueError):
        holder_structure(s, [1, 16], q=3)


def test_holder_degenerate(grid):
    rep = holder_structure(FieldEnsemble(grid, np.ones((3,) + grid.shape)), [1, (4, 0, 0)],
                           require_decade=False)
    assert rep.degenerate and not rep.consistent(0.5, 2)


def test_moment_bound(grid):
    rng = np.random.default_rng(0)
    flat = {T: FieldEnsemble(grid, 1 + 0.1 * rng.standard_normal((20,) + grid.shape)) for T in (1, 2, 3)}
    assert moment_bound_test(flat, 2).passed
    growing = {T: FieldEnsemble(grid, np.full((20,) + grid.shape, float(T))) for T in (1, 2, 3)}
    rep = moment_bound_test(growing, 2)
    assert not rep.passed and rep.max_moment == 9.0


def test_verdict_json():
    v = Verdict("cov", "max|z|", 1.5, None, 4.0, True, {"lags": 25})
    d = json.loads(verdicts_json([v]))[0]
    assert set(d) == {"test", "statistic", "value", "se", "threshold", "pass", "detail"}
    assert d["pass"] is True and d["se"] is None
    assert json.loads(verdicts_json([Verdict("x", "y", math.inf, 0.0, 1.0, False)]))[0]["value"] == "inf"


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=5))
def test_csv_floats_roundtrip(xs):
    text = rows_csv(["x"], [[x] for x in xs])
    back = [float(line) for line in text.splitlines()[1:]]
    assert back == [float(x) for x in xs]
