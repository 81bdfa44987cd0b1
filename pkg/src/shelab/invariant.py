"""Approximate sampling of invariant measures and the associated diagnostics.

The sampler starts every replica at the constant ``theta`` and runs to a
large horizon. The dual construction feeds the same path backwards over
growing horizons; along one noise realization the terminal fields form a
Cauchy sequence in the weak-noise regime. Distances are synchronous-coupling
L2 distances, which only bound a transport distance from above.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import FieldEnsemble
from .noise import PathEnsemble, reversed_view
from .solver import (CHUNK, EXACT_LINEAR, EXP_EULER, ConstantProfile, SpdeProblem,
                     evolve_ensemble)
from .spectral import check_conditions
from .stats import lag_products, mean_se, zscore, SINGLE_Z

RELAX_TARGET = 1e-3


def default_horizon(modes):
    """Smallest ``T`` with ``exp(-2 |xi|_min^2 T) < 1e-3`` over the noise pairs."""
    if modes.count == 0:
        return 0.0
    return math.log(1.0 / RELAX_TARGET) / (2.0 * float(modes.k2.min()))


@dataclass
class InvariantSampleSpec:
    """Parameters of the long-run sampler.

    ``horizon=None`` picks :func:`default_horizon`. Construction fails when
    the weak-noise margin is not positive unless ``allow_violation`` is set.
    """

    theta: float
    horizon: float
    grid: object
    mu: object
    sigma: object
    replicas: int
    seed: int
    dt: float = 1e-2
    scheme: str = "auto"
    allow_violation: bool = False
    first_stream: int = 0

    def __post_init__(self):
        rep = check_conditions(self.mu, self.sigma.lip)
        self.margin = rep.margin
        if not rep.weak_noise_ok and not self.allow_violation:
            raise ValueError(f"weak-noise margin {rep.margin:g} <= 0; set allow_violation to run anyway")
        if self.scheme == "auto":
            self.scheme = EXACT_LINEAR if self.sigma.kind == "constant" else EXP_EULER
        if self.replicas < 1:
            raise ValueError("replicas must be positive")

    @property
    def problem(self):
        return SpdeProblem(self.grid, self.mu, self.sigma, ConstantProfile(self.theta))

    def paths(self, steps):
        return PathEnsemble.replicas(self.grid, self.mu, self.dt, self.seed, self.replicas,
                                     steps, self.first_stream)

    def resolved_horizon(self, modes):
        return default_horizon(modes) if self.horizon is None else float(self.horizon)


def sample_invariant(spec, threads=1, chunk=CHUNK):
    """Terminal fields ``u(T)`` from independent streams, as a :class:`FieldEnsemble`."""
    probe = spec.paths(0)
    T = spec.resolved_horizon(probe.modes)
    steps = int(round(T / spec.dt))
    res = evolve_ensemble(spec.problem, spec.paths(steps), steps, spec.scheme,
                          threads=threads, chunk=chunk)
    ens = res.ensemble
    ens.meta.update(theta=spec.theta, horizon=steps * spec.dt, steps=steps, seed=spec.seed,
                    scheme=spec.scheme, engine=res.engine)
    return ens


@dataclass
class CauchyTrace:
    """Distances between dual solutions at consecutive horizons.

    ``pair_distances[i]`` is the grid average of ``E|u_{M_{i+1}} - u_{M_i}|^2``
    with standard error ``pair_se[i]``; ``sup_distances`` is the grid max of the
    same ensemble mean and ``point_var`` the grid-averaged ensemble variance of
    the difference.
    """

    horizons: list
    pair_distances: list = field(default_factory=list)
    pair_se: list = field(default_factory=list)
    sup_distances: list = field(default_factory=list)
    point_var: list = field(default_factory=list)

    def decreasing(self, min_se=2.0):
        """True iff every consecutive decrease is at least ``min_se`` standard errors."""
        d, s = self.pair_distances, self.pair_se
        for i in range(1, len(d)):
            if d[i - 1] - d[i] < min_se * math.hypot(s[i - 1], s[i]):
                return False
        return True

    def rows(self):
        return [(self.horizons[i], self.horizons[i + 1], self.pair_distances[i], self.pair_se[i],
                 self.sup_distances[i], self.point_var[i]) for i in range(len(self.pair_distances))]


def _pair_stats(a, b):
    R = a.shape[0]
    d = (a - b).reshape(R, -1)
    per_rep = (d ** 2).mean(axis=1)
    m, se = mean_se(per_rep)
    sup = float((d ** 2).mean(axis=0).max())
    var = float(d.var(axis=0, ddof=1).mean()) if R > 1 else 0.0
    return float(m), float(se), sup, var


def dual_fixed_point(theta, problem, paths, horizons, scheme=EXP_EULER, threads=1, chunk=CHUNK):
    """Run the reversed-path construction for each horizon.

    Returns ``(CauchyTrace, terminal ensemble at the largest horizon)``.
    """
    horizons = [int(h) for h in horizons]
    if any(b < a for a, b in zip(horizons, horizons[1:])):
        raise ValueError("horizons must be non-decreasing")
    if horizons[-1] > len(paths):
        raise ValueError(f"path too short: {len(paths)} < {horizons[-1]}")
    prob = problem.with_initial(ConstantProfile(theta))
    trace = CauchyTrace(horizons)
    prev = None
    for M in horizons:
        cur = evolve_ensemble(prob, reversed_view(paths, M), M, scheme, threads=threads,
                              chunk=chunk).values
        if prev is not None:
            m, se, sup, var = _pair_stats(cur, prev)
            trace.pair_distances.append(m)
            trace.pair_se.append(se)
            trace.sup_distances.append(sup)
            trace.point_var.append(var)
        prev = cur
    ens = FieldEnsemble(problem.grid, prev, theta=theta, horizon_steps=horizons[-1])
    return trace, ens


def _law_stats(values, grid):
    R = values.shape[0]
    flat = values.reshape(R, -1)
    lag = (1,) + (0,) * (grid.dim - 1)
    return {"mean": flat.mean(axis=1), "second_moment": (flat ** 2).mean(axis=1),
            "lag1_product": lag_products(values, grid, lag, center=False)}


def forward_reverse_check(theta, problem, paths, horizons, scheme=EXP_EULER, threads=1,
                          chunk=CHUNK):
    """Compare per-replica statistics of forward-prefix and reversed-view solutions.

    Rows are ``(M, statistic, forward mean, reversed mean, z)`` where ``z``
    uses independent-sample standard errors (the two runs share increments
    but in different order, so pairing is not meaningful).
    """
    prob = problem.with_initial(ConstantProfile(theta))
    rows = []
    for M in horizons:
        fwd = evolve_ensemble(prob, paths, M, scheme, threads=threads, chunk=chunk).values
        rev = evolve_ensemble(prob, reversed_view(paths, M), M, scheme, threads=threads,
                              chunk=chunk).values
        sf, sr = _law_stats(fwd, problem.grid), _law_stats(rev, problem.grid)
        for k in sf:
            mf, ef = mean_se(sf[k])
            mr, er = mean_se(sr[k])
            rows.append((M, k, float(mf), float(mr), zscore(float(mf), float(math.hypot(ef, er)), float(mr))))
    return rows


def annealing_table(samples, t_list):
    """Rows ``(t, sup_x Var, grid-avg Var, se)`` of the heat-smoothed ensemble."""
    if len(samples) == 0:
        raise ValueError("empty ensemble")
    grid = samples.grid
    R = len(samples)
    rows = []
    coeffs = grid.forward(samples.values)
    for t in t_list:
        if not t > 0:
            raise ValueError("smoothing times must be positive")
        sm = grid.inverse(coeffs * grid.heat_multiplier(t))
        if R < 2:
            rows.append((float(t), 0.0, 0.0, 0.0))
            continue
        d2 = (sm - sm.mean(axis=0, keepdims=True)) ** 2 * (R / (R - 1.0))
        m, se = mean_se(d2.reshape(R, -1).mean(axis=1))
        rows.append((float(t), float(d2.mean(axis=0).max()), float(m), float(se)))
    return rows


def annealing_diagnostic(samples, t_list):
    """``max_x Var[(p_t * u)(x)]`` for each ``t`` (ensemble variance, max over the grid)."""
    return [r[1] for r in annealing_table(samples, t_list)]


@dataclass
class InvarianceReport:
    rows: list          # (statistic, before, after, z)
    max_z: float
    passed: bool


QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


def _invariance_stats(values, grid, lags):
    R = values.shape[0]
    flat = values.reshape(R, -1)
    out = {"mean": flat.mean(axis=1)}
    for lag in lags:
        out[f"cov{tuple(lag)}"] = lag_products(values, grid, lag) * (R / (R - 1.0))
    qs = np.quantile(flat, QUANTILES, axis=1)
    for q, row in zip(QUANTILES, qs):
        out[f"q{q:g}"] = row
    return out


def invariance_check(samples, problem, extra_steps, fresh_seed, dt=1e-2, scheme=None,
                     lags=None, threshold=SINGLE_Z, threads=1, first_stream=0, chunk=CHUNK):
    """Evolve each sample ``extra_steps`` further with fresh noise and compare statistics.

    Statistics: mean, lag covariances and the within-replica quantiles at
    five levels. Passes iff every ``|z|`` is at most ``threshold``.
    """
    grid = samples.grid
    R = len(samples)
    if R < 2:
        raise ValueError("need at least two replicas")
    if scheme is None:
        scheme = EXACT_LINEAR if problem.sigma.kind == "constant" else EXP_EULER
    if lags is None:
        lags = [(0,) * grid.dim, (1,) + (0,) * (grid.dim - 1), (2,) + (0,) * (grid.dim - 1),
                (4,) + (0,) * (grid.dim - 1), (1, 1) + (0,) * (grid.dim - 2)]
    paths = PathEnsemble.replicas(grid, problem.mu, dt, fresh_seed, R, extra_steps, first_stream)
    after = evolve_ensemble(problem, paths, extra_steps, scheme, threads=threads,
                            u0=samples.values, chunk=chunk).values
    sb = _invariance_stats(samples.values, grid, lags)
    sa = _invariance_stats(after, grid, lags)
    rows = []
    for k in sb:
        mb, eb = mean_se(sb[k])
        ma, ea = mean_se(sa[k])
        rows.append((k, float(mb), float(ma), zscore(float(ma), float(math.hypot(ea, eb)), float(mb))))
    mz = max(abs(r[3]) for r in rows)
    return InvarianceReport(rows, mz, mz <= threshold)
