"""Discrete Wiener-chaos decomposition of the linear model ``sigma(z) = c0 z``.

With the exponential Euler step the solution after ``M`` steps is a
polynomial of degree ``M`` in the increments. Its homogeneous parts obey

    J0 <- S J0,    Jm <- S(Jm + c0 J(m-1) dW)    (m >= 1),

so ``sum_{m <= N} Jm`` reproduces the direct solution exactly once ``N >= M``.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .grid import Field, FieldEnsemble
from .noise import NoisePath, PathEnsemble, synthesize
from .solver import (CHUNK, SigmaSpec, SpdeProblem, ConstantProfile, _SPECTRAL_MAX_ATOMS,
                     _NORMAL_BLOCK, atom_coefficients, gather_index, make_engine,
                     map_chunks)


@dataclass
class ChaosResult:
    """Chaos orders ``(N+1, R) + grid.shape`` and, optionally, the direct solution."""

    grid: object
    orders: np.ndarray
    solution: np.ndarray = None
    steps: int = 0
    dt: float = 0.0

    def partial_sum(self, n):
        return self.orders[: n + 1].sum(axis=0)

    def identity_gap(self):
        """Max over replicas of ``max|sum_m Jm - u| / (1 + max|u|)``."""
        total = self.orders.sum(axis=0)
        R = total.shape[0]
        diff = np.abs(total - self.solution).reshape(R, -1).max(axis=1)
        scale = 1.0 + np.abs(self.solution).reshape(R, -1).max(axis=1)
        return float(np.max(diff / scale))


def chaos_supports(modes, N):
    """Flat Fourier indices that order ``m`` can occupy (``None`` when dense).

    Order ``m`` lives on sums of at most ``m`` atoms; everything else stays
    exactly zero, so the kick only needs to visit those rows.
    """
    grid = modes.grid
    atoms = np.concatenate([modes.ints, -modes.ints]) % grid.n
    occ = np.zeros(grid.shape, dtype=bool)
    occ[(0,) * grid.dim] = True
    out = [np.flatnonzero(occ)]
    for _ in range(N):
        nxt = occ.copy()
        for k in atoms:
            nxt |= np.roll(occ, tuple(int(x) for x in k), axis=tuple(range(grid.dim)))
        occ = nxt
        out.append(np.flatnonzero(occ) if occ.sum() * 2 < grid.size else None)
    return out


def _chaos_spectral(theta, c0, grid, paths, steps, N, modes, dt):
    R = paths.size
    Nf = grid.size
    J = np.zeros((N + 1, R, Nf), dtype=complex)
    J[0, :, 0] = theta * Nf
    gidx = gather_index(modes)
    mult = np.ascontiguousarray(grid.heat_multiplier(dt, half=False).ravel())
    kern = _kernels.active()
    rows = [None if r is None else np.ascontiguousarray(r, dtype=np.intp)
            for r in chaos_supports(modes, N)]
    step = 0
    while step < steps:
        hi = min(steps, step + _NORMAL_BLOCK)
        C = atom_coefficients(modes, dt, paths.normals(step, hi))
        for j in range(hi - step):
            top = min(N, step + 1)
            cj = np.ascontiguousarray(C[:, j])
            for m in range(top, 0, -1):
                if rows[m] is None:
                    kern.spectral_step(J[m], J[m - 1], cj, gidx, mult, c0, J[m])
                else:
                    kern.spectral_step_rows(J[m], J[m - 1], cj, gidx, rows[m], mult, c0, J[m])
            J[0] *= mult
            step += 1
    out = grid.ifft(J.reshape((N + 1, R) + grid.shape)).real
    return out


def _chaos_real(theta, c0, grid, paths, steps, N, modes, dt):
    R = paths.size
    J = np.zeros((N + 1, R) + grid.shape)
    J[0] = theta
    mult = grid.heat_multiplier(dt)
    sq = np.sqrt(modes.masses * dt)
    step = 0
    while step < steps:
        hi = min(steps, step + _NORMAL_BLOCK)
        g = paths.normals(step, hi)
        for j in range(hi - step):
            dw = synthesize(modes, g[:, j, :, 0] * sq, g[:, j, :, 1] * sq)
            top = min(N, step + 1)
            for m in range(top, 0, -1):
                J[m] = grid.inverse(grid.forward(J[m] + c0 * J[m - 1] * dw) * mult)
            J[0] = grid.smooth(J[0], dt)
            step += 1
    return J


def chaos_ensemble(theta, c0, grid, mu, paths, steps, max_order, with_solution=False,
                   threads=1, engine="auto", chunk=CHUNK):
    """Chaos orders ``0..max_order`` at step ``steps`` for every replica.

    With ``with_solution`` the direct exponential Euler solution on the same
    paths is returned too (for identity and remainder checks).
    """
    if isinstance(paths, NoisePath):
        paths = paths.as_ensemble()
    if not isinstance(paths, PathEnsemble):
        raise TypeError("paths must be a NoisePath or PathEnsemble")
    N = int(max_order)
    if N < 0:
        raise ValueError("max_order must be nonnegative")
    steps = int(steps)
    if steps > len(paths):
        raise ValueError(f"path holds {len(paths)} steps, need {steps}")
    modes = paths.modes
    if engine == "auto":
        engine = "spectral" if 2 * modes.count <= _SPECTRAL_MAX_ATOMS else "real"
    kernel = _chaos_spectral if engine == "spectral" else _chaos_real
    problem = SpdeProblem(grid, mu, SigmaSpec.linear(c0) if c0 != 0 else SigmaSpec.constant(0.0),
                          ConstantProfile(theta))

    def run(sl):
        sub = paths.select(sl)
        J = kernel(float(theta), float(c0), grid, sub, steps, N, modes, paths.dt)
        u = None
        if with_solution:
            eng = make_engine(problem, sub, "ExpEuler", engine if c0 != 0 else "auto")
            eng.advance(steps)
            u = eng.values()
        return J, u

    parts = map_chunks(run, paths.size, threads, chunk)
    orders = np.concatenate([p[0] for p in parts], axis=1)
    sol = np.concatenate([p[1] for p in parts]) if with_solution else None
    return ChaosResult(grid, orders, sol, steps, paths.dt)


def chaos_evolve(theta, c0, grid, mu, path, steps, max_order):
    """Chaos orders of one path as a list of :class:`Field` (orders 0..N)."""
    res = chaos_ensemble(theta, c0, grid, mu, path, steps, max_order)
    if isinstance(path, NoisePath):
        return [Field(grid, res.orders[m, 0]) for m in range(res.orders.shape[0])]
    return [FieldEnsemble(grid, res.orders[m]) for m in range(res.orders.shape[0])]


def remainder_bound(n, c0, inv_sq_integral, moment_const):
    """``(1/(n+1)!) (C c0^2 / 2 * int mu/|xi|^2)^(n+1)``.

    ``inv_sq_integral`` is ``int mu(d xi)/|xi|^2`` (twice the energy) and
    ``moment_const`` is the uniform second-moment constant ``C``.
    """
    n = int(n)
    if n < 0:
        raise ValueError("n must be nonnegative")
    base = moment_const * c0 * c0 / 2.0 * inv_sq_integral
    if base < 0:
        raise ValueError("bound base must be nonnegative")
    if base == 0:
        return 0.0
    return math.exp((n + 1) * math.log(base) - math.lgamma(n + 2))


@dataclass
class MomentProfile:
    """Per-order ``E|Jm(x)|^2`` (grid average) with standard errors and grid max."""

    mean: np.ndarray
    se: np.ndarray
    sup: np.ndarray

    def ratios(self):
        return self.mean[1:] / self.mean[:-1]


def chaos_moment_profile(orders):
    """Second moments of each chaos order across an ensemble.

    ``orders`` has shape ``(N+1, R) + grid.shape``.
    """
    orders = np.asarray(orders, dtype=float)
    if orders.ndim < 3 or orders.shape[1] == 0:
        raise ValueError("need a nonempty ensemble of chaos orders")
    K, R = orders.shape[:2]
    sq = (orders ** 2).reshape(K, R, -1)
    per_rep = sq.mean(axis=2)
    mean = per_rep.mean(axis=1)
    se = per_rep.std(axis=1, ddof=1) / math.sqrt(R) if R > 1 else np.zeros(K)
    sup = sq.mean(axis=1).max(axis=1)
    return MomentProfile(mean, se, sup)
