"""Ensemble estimators, lattice oracles and pass/fail verdicts.

Every oracle here is a finite sum over the lattice pairs actually simulated
(:class:`~shelab.noise.LatticeModes`), never a continuum integral.

Estimators reduce each replica to a scalar first (for example a grid average
of a product) and report the replica mean with its standard error; ensemble
reductions therefore do not depend on how replicas were chunked or threaded.
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .grid import FieldEnsemble, block_average_batch
from .noise import draw_normals, synthesize

SINGLE_Z = 4.0


# ---------------------------------------------------------------------------
# verdicts and IO

@dataclass
class Verdict:
    test: str
    statistic: str
    value: float
    se: float
    threshold: float
    passed: bool
    detail: dict = field(default_factory=dict)

    def to_dict(self):
        d = {"test": self.test, "statistic": self.statistic, "value": _num(self.value),
             "se": _num(self.se), "threshold": _num(self.threshold), "pass": bool(self.passed)}
        if self.detail:
            d["detail"] = _jsonable(self.detail)
        return d


def _num(x):
    if x is None:
        return None
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return obj


def verdicts_json(verdicts):
    return json.dumps([v.to_dict() for v in verdicts], indent=2, sort_keys=True) + "\n"


def write_verdicts(path, verdicts):
    with open(path, "w") as fh:
        fh.write(verdicts_json(verdicts))


def rows_csv(header, rows):
    """CSV text with floats in ``repr`` form (round-trips exactly)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(rows_csv(header, rows))


# ---------------------------------------------------------------------------
# small helpers

def _values(samples):
    if isinstance(samples, FieldEnsemble):
        return samples.values, samples.grid
    raise TypeError("samples must be a FieldEnsemble")


def mean_se(per_rep):
    """Mean and standard error of per-replica values along axis 0."""
    per_rep = np.asarray(per_rep, dtype=float)
    R = per_rep.shape[0]
    m = per_rep.mean(axis=0)
    if R < 2:
        return m, np.full_like(np.asarray(m, dtype=float), np.nan)
    return m, per_rep.std(axis=0, ddof=1) / math.sqrt(R)


def zscore(est, se, target, atol=1e-12):
    """``(est - target) / se``.

    Differences at rounding level (``atol`` relative to the magnitudes
    involved) count as exact agreement, so degenerate estimators with a
    vanishing SE give 0 rather than a spurious huge score; a zero SE with a
    real difference gives ``inf``.
    """
    diff = est - target
    if abs(diff) <= atol * (1.0 + abs(target) + abs(est)):
        return 0.0
    if se > 0:
        return diff / se
    return math.copysign(math.inf, diff)


def _lag_tuple(lag, d):
    lag = np.atleast_1d(np.asarray(lag, dtype=np.int64))
    if lag.size == 1 and d > 1:
        lag = np.concatenate([lag, np.zeros(d - 1, dtype=np.int64)])
    if lag.size != d:
        raise ValueError(f"lag {lag.tolist()} does not match dimension {d}")
    return tuple(int(x) for x in lag)


def lag_vector(grid, lag):
    """Physical displacement of an integer lag."""
    return np.asarray(_lag_tuple(lag, grid.dim), dtype=float) * grid.spacing


def default_lag_set(grid, count=25):
    """Lags ``(a, b, 0, ...)`` with ``a, b = 0..4`` (25 lags)."""
    side = int(round(math.sqrt(count)))
    out = []
    for a in range(side):
        for b in range(side):
            out.append((a, b) + (0,) * (grid.dim - 2) if grid.dim >= 2 else (a * side + b,))
    return out


# ---------------------------------------------------------------------------
# lattice oracles

def stationary_mode_variance(modes, c0):
    """Per-pair amplitude variance ``c0^2 mu_p / (2 |xi_p|^2)`` of the Gaussian law."""
    return c0 * c0 * modes.masses / (2.0 * modes.k2)


def mode_variance(modes, c0, T=None, scheme="ExactLinear", dt=None):
    """Pair amplitude variance after time ``T`` started from a deterministic field.

    ``T=None`` gives the stationary value. For ``ExpEuler`` the exact
    discrete sum ``c0^2 mu dt sum_{i=1..M} exp(-2 a i dt)`` is returned.
    """
    a = modes.k2
    if T is None:
        return stationary_mode_variance(modes, c0)
    if scheme == "ExactLinear":
        return stationary_mode_variance(modes, c0) * -np.expm1(-2.0 * a * T)
    if dt is None:
        raise ValueError("ExpEuler variance needs dt")
    M = int(round(T / dt))
    q = np.exp(-2.0 * a * dt)
    return c0 * c0 * modes.masses * dt * q * -np.expm1(-2.0 * a * M * dt) / -np.expm1(-2.0 * a * dt)


def covariance_from_variances(modes, v, h):
    """``sum_p v_p cos(xi_p . h)``."""
    return float(np.sum(v * np.cos(modes.freqs @ np.asarray(h, dtype=float))))


def gaussian_covariance_oracle(modes, c0, lag):
    """Stationary covariance ``(c0^2/2) sum_p mu_p cos(xi_p . h) / |xi_p|^2``.

    ``lag`` is a physical displacement vector. The covariance does not depend
    on the mean level.
    """
    return covariance_from_variances(modes, stationary_mode_variance(modes, c0), lag)


def annealing_oracle(modes, v, t):
    """Variance of the heat-smoothed field: ``sum_p v_p exp(-2 t |xi_p|^2)``."""
    return float(np.sum(v * np.exp(-2.0 * t * modes.k2)))


def block_weight(grid, modes, half_width, center=None):
    """Block mean of ``exp(i xi_p . x)`` for every pair (complex array)."""
    vals = np.exp(1j * np.tensordot(modes.freqs, np.stack(grid.coords), axes=(1, 0)))
    re = block_average_batch(vals.real, grid, half_width, center)
    im = block_average_batch(vals.imag, grid, half_width, center)
    return re + 1j * im


def lln_oracle(grid, modes, v, half_width, center=None):
    """``E|block mean - theta|^2 = sum_p v_p |w_p(R)|^2``."""
    w = block_weight(grid, modes, half_width, center)
    return float(np.sum(v * np.abs(w) ** 2))


def structure_oracle(modes, v, h):
    """``S_2(h) = 2 sum_p v_p (1 - cos(xi_p . h))``."""
    return float(2.0 * np.sum(v * (1.0 - np.cos(modes.freqs @ np.asarray(h, dtype=float)))))


def dual_tail_oracle(modes, c0, dt, m1, m2):
    """Pointwise variance of the difference of reversed-path solutions at horizons ``m1 < m2``.

    With constant sigma the difference is ``sum_{i=m1}^{m2-1} S^{i+1} c0 dW_i``.
    """
    a = modes.k2
    q = np.exp(-2.0 * a * dt)
    tail = c0 * c0 * modes.masses * dt * q ** (m1 + 1) * -np.expm1(-2.0 * a * (m2 - m1) * dt) \
        / -np.expm1(-2.0 * a * dt)
    return float(np.sum(tail))


def first_chaos_oracle(modes, c0, theta, T, dt=None):
    """``E|J1(T, x)|^2``; continuum-time form, or the exact discrete sum if ``dt`` is given."""
    if dt is None:
        v = mode_variance(modes, c0, T, "ExactLinear")
    else:
        v = mode_variance(modes, c0, T, "ExpEuler", dt)
    return float(theta * theta * np.sum(v))


def pam_two_point(grid, modes, c0, dt, steps, f0, record=None):
    """Exact second moments of the linear model under the exponential Euler step.

    Evolves the spatially averaged two-point function
    ``f(h) = mean_x E[u(x) u(x + h)]`` through
    ``f <- S_{2 dt} ((1 + c0^2 dt Lambda_N) f)``, valid because the noise is
    white in time and stationary in space. ``f0`` is the initial two-point
    array (for ``u0 = theta`` it is ``theta^2``; for ``u0 = cos(x_1)`` it is
    ``cos(h_1)/2``). Returns ``f(0)`` at each step in ``record``
    (default: every step ``0..steps``).
    """
    lam = synthesize(modes, modes.masses, np.zeros(modes.count))
    mult = grid.heat_multiplier(2.0 * dt)
    f = np.broadcast_to(np.asarray(f0, dtype=float), grid.shape).copy()
    rec = set(range(steps + 1)) if record is None else set(int(s) for s in record)
    out = {}
    if 0 in rec:
        out[0] = float(f.flat[0])
    kick = 1.0 + c0 * c0 * dt * lam
    for j in range(1, steps + 1):
        f = grid.inverse(grid.forward(f * kick) * mult)
        if j in rec:
            out[j] = float(f.flat[0])
    return out


def sample_gaussian_field(grid, modes, v, replicas, seed, theta=0.0, first_stream=0):
    """Exact draws from the mean-``theta`` Gaussian field with pair variances ``v``."""
    g = draw_normals(seed, np.arange(first_stream, first_stream + replicas, dtype=np.uint64),
                     [0xFFFFFFFF], modes.count)[:, 0]
    s = np.sqrt(v)
    vals = theta + synthesize(modes, g[..., 0] * s, g[..., 1] * s)
    return FieldEnsemble(grid, vals, theta=theta)


# ---------------------------------------------------------------------------
# estimators

def _centered(values):
    return values - values.mean(axis=0, keepdims=True)


def lag_products(values, grid, lag, center=True):
    """Per-replica grid average of ``d(x) d(x+h)``, averaged over ``+h`` and ``-h``."""
    lag = _lag_tuple(lag, grid.dim)
    d = _centered(values) if center else values
    axes = tuple(range(1, grid.dim + 1))
    neg = tuple(-x for x in lag)
    R = values.shape[0]
    plus = (d * np.roll(d, neg, axis=axes)).reshape(R, -1).mean(axis=1)
    minus = (d * np.roll(d, lag, axis=axes)).reshape(R, -1).mean(axis=1)
    return 0.5 * (plus + minus)


def lag_covariance(samples, lag):
    """Ensemble covariance at integer ``lag`` (grid averaged) and its SE."""
    values, grid = _values(samples)
    R = values.shape[0]
    if R < 2:
        raise ValueError("need at least two replicas")
    y = lag_products(values, grid, lag) * (R / (R - 1.0))
    m, se = mean_se(y)
    return float(m), float(se)


def point_variance(samples):
    """Grid-averaged and grid-max ensemble variance, plus the SE of the average."""
    values, grid = _values(samples)
    R = values.shape[0]
    if R < 2:
        raise ValueError("need at least two replicas")
    d2 = _centered(values) ** 2 * (R / (R - 1.0))
    per_rep = d2.reshape(R, -1).mean(axis=1)
    m, se = mean_se(per_rep)
    sup = float(d2.mean(axis=0).max())
    return float(m), float(se), sup


@dataclass
class EnsembleSummary:
    """Monte Carlo summary of an ensemble of fields.

    ``lag_cov`` maps lag tuples to ``(estimate, se)``; ``blocks`` maps half
    widths to per-replica block averages; ``moments`` maps ``k`` to
    ``(max over grid of E|u|^k, se of that point)``; ``marginals`` maps
    probe points to per-replica values.
    """

    n_replicas: int
    point_mean: np.ndarray
    point_se: np.ndarray
    lag_cov: dict = field(default_factory=dict)
    blocks: dict = field(default_factory=dict)
    moments: dict = field(default_factory=dict)
    marginals: dict = field(default_factory=dict)

    def lag_rows(self):
        return [(list(k), v[0], v[1]) for k, v in sorted(self.lag_cov.items())]

    def to_dict(self):
        return _jsonable({
            "n_replicas": self.n_replicas,
            "point_mean_avg": float(self.point_mean.mean()),
            "point_se_max": float(np.max(self.point_se)),
            "lag_cov": {str(k): {"estimate": v[0], "se": v[1]} for k, v in self.lag_cov.items()},
            "blocks": {str(k): {"mean": float(np.mean(v)), "var": float(np.var(v))}
                       for k, v in self.blocks.items()},
            "moments": {str(k): {"max": v[0], "se": v[1]} for k, v in self.moments.items()},
        })


def summarize(samples, lags=(), half_widths=(), moments=(), probes=()):
    values, grid = _values(samples)
    R = values.shape[0]
    pm = values.mean(axis=0)
    pse = values.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.zeros_like(pm)
    s = EnsembleSummary(R, pm, pse)
    for lag in lags:
        s.lag_cov[_lag_tuple(lag, grid.dim)] = lag_covariance(samples, lag)
    for hw in half_widths:
        s.blocks[float(hw)] = block_average_batch(values, grid, hw)
    for k in moments:
        mk = np.abs(values) ** k
        mean = mk.mean(axis=0)
        i = int(np.argmax(mean))
        se = float(mk.reshape(R, -1)[:, i].std(ddof=1) / math.sqrt(R)) if R > 1 else 0.0
        s.moments[k] = (float(mean.flat[i]), se)
    for p in probes:
        p = tuple(int(x) % grid.n for x in p)
        s.marginals[p] = values[(slice(None),) + p].copy()
    return s


# ---------------------------------------------------------------------------
# tests

@dataclass
class CovarianceReport:
    rows: list          # (lag, estimate, se, oracle, z)
    max_abs_z: float
    passed: bool

    def verdict(self, name="covariance"):
        return Verdict(name, "max|z| over lags", self.max_abs_z, None, SINGLE_Z, self.passed,
                       {"lags": len(self.rows)})


def compare_covariance(samples, oracle, lag_set, threshold=SINGLE_Z):
    """Per-lag z-scores of the ensemble covariance against ``oracle(h)``.

    ``oracle`` receives the physical displacement of each integer lag.
    Passes iff ``max |z| <= threshold``.
    """
    values, grid = _values(samples)
    if values.shape[0] < 2:
        raise ValueError("degenerate standard error: need at least two replicas")
    rows = []
    for lag in lag_set:
        est, se = lag_covariance(samples, lag)
        target = float(oracle(lag_vector(grid, lag)))
        rows.append((_lag_tuple(lag, grid.dim), est, se, target, zscore(est, se, target)))
    mz = max(abs(r[4]) for r in rows)
    return CovarianceReport(rows, mz, mz <= threshold)


def _trend_ok(values, ses, tol):
    """True when no entry exceeds its predecessor by more than ``tol`` standard errors."""
    for i in range(1, len(values)):
        s = math.hypot(ses[i], ses[i - 1])
        if values[i] - values[i - 1] > tol * s + 1e-15 * (1 + abs(values[i - 1])):
            return False
    return True


@dataclass
class DecayTable:
    """Rows ``(x, value, se, oracle, z)`` of a decay diagnostic."""

    rows: list
    decreasing: bool
    decay_ratio: float
    oracle_ok: bool
    passed: bool


DECAY_RATIO = 0.5


def _decay_table(xs, vals, ses, oracles, z_tol):
    rows = []
    oracle_ok = True
    for x, v, s, o in zip(xs, vals, ses, oracles):
        z = None if o is None else zscore(v, s, o)
        if z is not None and abs(z) > z_tol:
            oracle_ok = False
        rows.append((x, v, s, o, z))
    dec = _trend_ok(vals, ses, 2.0)
    ratio = vals[-1] / vals[0] if vals[0] > 0 else 0.0
    passed = dec and ratio < DECAY_RATIO and oracle_ok
    return DecayTable(rows, dec, ratio, oracle_ok, passed)


def lln_test(samples, theta, half_widths, oracle=None, center=None, z_tol=3.0):
    """Block-average LLN table: ``E|block mean - theta|^2`` per half width.

    Passes iff the table is non-increasing (2 SE), the last value is below
    half of the first, and (with ``oracle(R)``) every row is within
    ``z_tol`` SE of the oracle.
    """
    values, grid = _values(samples)
    hws = [float(h) for h in half_widths]
    if any(b <= a for a, b in zip(hws, hws[1:])):
        raise ValueError("half_widths must be increasing")
    vals, ses, ors = [], [], []
    for hw in hws:
        b = block_average_batch(values, grid, hw, center)
        m, se = mean_se((b - theta) ** 2)
        vals.append(float(m))
        ses.append(float(se))
        ors.append(None if oracle is None else float(oracle(hw)))
    return _decay_table(hws, vals, ses, ors, z_tol)


@dataclass
class SingularityReport:
    rows: list        # (R, overlap)
    overlap: float
    passed: bool


def singularity_test(samples_1, samples_2, half_widths, theta_1, theta_2, tie_tol=1e-9):
    """Separate two ensembles by block averages around the midpoint.

    ``overlap`` counts block averages on the wrong side of
    ``(theta_1 + theta_2)/2``; values within ``tie_tol`` of it count one half.
    Passes iff the overlap at the largest half width is 0 (for
    ``|theta_1 - theta_2| >= 1``).
    """
    v1, grid = _values(samples_1)
    v2, _ = _values(samples_2)
    mid = 0.5 * (theta_1 + theta_2)
    lo_is_1 = theta_1 <= theta_2
    rows = []
    for hw in np.atleast_1d(half_widths):
        b1 = block_average_batch(v1, grid, float(hw))
        b2 = block_average_batch(v2, grid, float(hw))
        low, high = (b1, b2) if lo_is_1 else (b2, b1)
        tol = tie_tol * (1.0 + abs(mid))
        wrong = np.sum(low > mid + tol) + np.sum(high < mid - tol)
        ties = np.sum(np.abs(low - mid) <= tol) + np.sum(np.abs(high - mid) <= tol)
        rows.append((float(hw), float((wrong + 0.5 * ties) / (b1.size + b2.size))))
    overlap = rows[-1][1]
    passed = overlap == 0.0 and abs(theta_1 - theta_2) >= 1.0
    return SingularityReport(rows, overlap, passed)


@dataclass
class StationarityReport:
    max_z: float
    worst: tuple
    passed: bool


def stationarity_test(samples, lag_set, translate_set, threshold=SINGLE_Z):
    """Compare point means and point covariances ``Cov(u(y), u(y+h))`` across translations ``y``.

    Each pairwise difference is divided by the SE of the paired per-replica
    differences. Passes iff the largest ``|difference|/SE`` is at most
    ``threshold``.
    """
    values, grid = _values(samples)
    R = values.shape[0]
    if R < 2:
        raise ValueError("need at least two replicas")
    d = _centered(values)
    ys = [tuple(int(x) % grid.n for x in y) for y in translate_set]
    worst = (0.0, None)

    def scan(stat, label):
        nonlocal worst
        for i in range(len(ys)):
            for j in range(i + 1, len(ys)):
                diff = stat[i] - stat[j]
                m, se = mean_se(diff)
                z = abs(zscore(float(m), float(se), 0.0))
                if z > worst[0] or worst[1] is None:
                    worst = (z, (label, ys[i], ys[j]))

    scan([values[(slice(None),) + y] for y in ys], "mean")
    for lag in lag_set:
        lag = _lag_tuple(lag, grid.dim)
        prods = []
        for y in ys:
            y2 = tuple((a + b) % grid.n for a, b in zip(y, lag))
            prods.append(d[(slice(None),) + y] * d[(slice(None),) + y2] * (R / (R - 1.0)))
        scan(prods, ("cov",) + lag)
    return StationarityReport(worst[0], worst[1], worst[0] <= threshold)


@dataclass
class GaussianityReport:
    rows: list          # (label, statistic, value, se, z)
    max_abs_z: float
    passed: bool


def _skew_kurt_se(R):
    ses = math.sqrt(6.0 * R * (R - 1) / ((R - 2) * (R + 1) * (R + 3)))
    sek = 2.0 * ses * math.sqrt((R * R - 1.0) / ((R - 3) * (R + 5)))
    return ses, sek


def gaussianity_test(samples, probe_points, threshold=SINGLE_Z):
    """Skewness, excess kurtosis and the fourth-moment identity at probe points.

    For consecutive probe pairs ``(x, y)`` the increment ``D = u(x) - u(y)``
    is checked against ``E[D^4] = 3 E[D^2]^2`` with a delta-method SE.
    """
    values, grid = _values(samples)
    R = values.shape[0]
    if R < 8:
        raise ValueError("need at least 8 replicas")
    ses, sek = _skew_kurt_se(R)
    probes = [tuple(int(x) % grid.n for x in p) for p in probe_points]
    rows = []
    for p in probes:
        x = values[(slice(None),) + p]
        c = x - x.mean()
        m2 = np.mean(c ** 2)
        if m2 == 0:
            rows.append((p, "skew", 0.0, 0.0, 0.0))
            rows.append((p, "excess_kurtosis", 0.0, 0.0, 0.0))
            continue
        sk = np.mean(c ** 3) / m2 ** 1.5
        ku = np.mean(c ** 4) / m2 ** 2 - 3.0
        rows.append((p, "skew", float(sk), ses, float(sk / ses)))
        rows.append((p, "excess_kurtosis", float(ku), sek, float(ku / sek)))
    for p, q in zip(probes, probes[1:]):
        D = values[(slice(None),) + p] - values[(slice(None),) + q]
        m2 = np.mean(D ** 2)
        m4 = np.mean(D ** 4)
        stat = m4 - 3.0 * m2 * m2
        psi = D ** 4 - 6.0 * m2 * D ** 2
        se = float(psi.std(ddof=1) / math.sqrt(R))
        rows.append(((p, q), "fourth_moment_gap", float(stat), se, zscore(float(stat), se, 0.0)))
    mz = max(abs(r[4]) for r in rows)
    return GaussianityReport(rows, mz, mz <= threshold)


@dataclass
class HolderReport:
    offsets: list       # |h| values
    s_q: list
    se: list
    slope: float
    intercept: float
    residual: float
    degenerate: bool

    def consistent(self, beta, q, tol=0.05):
        """One-sided check ``slope / q >= (1 - beta)/2 - tol``."""
        if self.degenerate:
            return False
        return self.slope / q >= (1.0 - beta) / 2.0 - tol


def holder_structure(samples, offsets, q=2, require_decade=True):
    """Structure function ``S_q(h) = E|u(x+h) - u(x)|^q`` and its log-log slope.

    ``offsets`` are integer lattice lags (scalars act along the first axis).
    They must span at least one decade of ``|h|`` and stay at or below
    ``L/4``.
    """
    if q <= 0 or int(q) != q or q % 2:
        raise ValueError("q must be a positive even integer")
    values, grid = _values(samples)
    lags = [_lag_tuple(h, grid.dim) for h in offsets]
    norms = [float(np.linalg.norm(lag_vector(grid, h))) for h in lags]
    if min(norms) <= 0 or max(norms) > grid.length / 4 * (1 + 1e-12):
        raise ValueError("offsets out of range: need 0 < |h| <= L/4")
    if require_decade and max(norms) < 10.0 * min(norms) * (1 - 1e-12):
        raise ValueError("offsets out of range: they must span at least one decade of |h|")
    R = values.shape[0]
    axes = tuple(range(1, grid.dim + 1))
    s, e = [], []
    for h in lags:
        inc = np.roll(values, tuple(-x for x in h), axis=axes) - values
        per_rep = (np.abs(inc) ** q).reshape(R, -1).mean(axis=1)
        m, se = mean_se(per_rep)
        s.append(float(m))
        e.append(float(se))
    if min(s) <= 0:
        return HolderReport(norms, s, e, math.nan, math.nan, math.nan, True)
    x = np.log(norms)
    y = np.log(s)
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return HolderReport(norms, s, e, float(coef[0]), float(coef[1]), resid, False)


@dataclass
class MomentReport:
    rows: list          # (T, grid-avg E|u|^k, se, max over grid)
    max_moment: float
    passed: bool
    margin: float = None


def moment_bound_test(samples_by_horizon, k, margin=None, tol=2.0):
    """k-th moments across a horizon sweep; passes iff no rise above ``tol`` SE.

    ``samples_by_horizon`` maps a horizon to either a :class:`FieldEnsemble`
    or a pair ``(per-replica grid averages of |u|^k, grid max)``. Entries
    produced from the same paths are compared with paired differences.
    """
    hs = sorted(samples_by_horizon)
    per, sups = [], []
    for T in hs:
        s = samples_by_horizon[T]
        if isinstance(s, FieldEnsemble):
            mk = np.abs(s.values) ** k
            per.append(mk.reshape(len(s), -1).mean(axis=1))
            sups.append(float(mk.mean(axis=0).max()))
        else:
            per.append(np.asarray(s[0], dtype=float))
            sups.append(float(s[1]))
    rows = []
    passed = True
    for i, T in enumerate(hs):
        m, se = mean_se(per[i])
        rows.append((T, float(m), float(se), sups[i]))
        if i:
            prev = per[i - 1]
            if prev.shape == per[i].shape:
                dm, dse = mean_se(per[i] - prev)
            else:
                dm = float(m) - rows[i - 1][1]
                dse = math.hypot(float(se), rows[i - 1][2])
            if zscore(float(dm), float(dse), 0.0) > tol:
                passed = False
    return MomentReport(rows, max(sups), passed, margin)


def summary_rows(report):
    """Flatten a report dataclass for CSV/JSON."""
    return _jsonable(asdict(report))
