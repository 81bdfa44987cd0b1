"""Time integrators for the mild equation on the torus.

Two schemes are offered:

* ``ExpEuler``: ``u <- S_dt(u + sigma(u) dW)`` (kick, then heat flow).
* ``ExactLinear``: constant ``sigma = c0`` only; each Fourier pair is an
  Ornstein-Uhlenbeck amplitude updated with its exact transition law.

Three engines implement them; the choice only affects speed and rounding.

* ``mode``: constant sigma; the random part lives on the noise pairs only.
* ``spectral``: linear sigma with few atoms; the product ``u dW`` is a short
  convolution on the Fourier lattice, done by the compiled kernel.
* ``real``: everything else; pointwise kick in real space plus an FFT.

Replicas are processed in fixed-size chunks, optionally on a thread pool.
Chunk boundaries do not depend on the thread count, so results are
bit-identical for any ``threads``.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels
from .grid import Field, FieldEnsemble
from .noise import NoisePath, PathEnsemble, synthesize

EXP_EULER = "ExpEuler"
EXACT_LINEAR = "ExactLinear"
SCHEMES = (EXP_EULER, EXACT_LINEAR)
CHUNK = 32
_NORMAL_BLOCK = 128
_SPECTRAL_MAX_ATOMS = 64


class BlowUpError(RuntimeError):
    """A non-finite value appeared; ``step`` is the first failing step index."""

    def __init__(self, step, dt=None):
        self.step = int(step)
        self.time = None if dt is None else self.step * dt
        msg = f"non-finite value at step {self.step}"
        if self.time is not None:
            msg += f" (t = {self.time:g})"
        super().__init__(msg)


class SchemeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# sigma and problems

@dataclass(frozen=True)
class SigmaSpec:
    """Nonlinearity sigma: ``constant`` c0, ``linear`` c0*z, or ``custom``.

    For ``custom`` the Lipschitz constant is declared, and spot-checked on
    10^4 random pairs at construction via :meth:`custom`.
    """

    kind: str
    c0: float = 0.0
    func: object = None
    declared_lip: float = 0.0
    declared_sigma0: float = 0.0
    name: str = ""

    @classmethod
    def constant(cls, c0):
        return cls("constant", float(c0))

    @classmethod
    def linear(cls, c0):
        if c0 == 0:
            raise ValueError("linear sigma needs c0 != 0")
        return cls("linear", float(c0))

    @classmethod
    def custom(cls, func, declared_lip, declared_sigma0=None, name="custom", check=True):
        if declared_lip < 0:
            raise ValueError("declared_lip must be nonnegative")
        s0 = float(func(np.zeros(1))[0]) if declared_sigma0 is None else float(declared_sigma0)
        spec = cls("custom", 0.0, func, float(declared_lip), s0, name)
        if check:
            spec.spot_check()
        return spec

    def spot_check(self, pairs=10_000, seed=0):
        rng = np.random.default_rng(seed)
        a = rng.normal(0.0, 10.0, pairs)
        b = a + rng.normal(0.0, 1.0, pairs) * rng.choice([1e-3, 1.0, 10.0], pairs)
        lhs = np.abs(self(a) - self(b))
        rhs = self.lip * np.abs(a - b) * (1 + 1e-9)
        bad = np.flatnonzero(lhs > rhs)
        if bad.size:
            i = bad[0]
            raise ValueError(f"sigma violates declared Lipschitz constant {self.lip} "
                             f"at ({a[i]:.6g}, {b[i]:.6g})")

    @property
    def lip(self):
        if self.kind == "constant":
            return 0.0
        if self.kind == "linear":
            return abs(self.c0)
        return self.declared_lip

    @property
    def sigma0(self):
        if self.kind == "constant":
            return self.c0
        if self.kind == "linear":
            return 0.0
        return self.declared_sigma0

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "constant":
            return np.full_like(u, self.c0)
        if self.kind == "linear":
            return self.c0 * u
        return np.asarray(self.func(u), dtype=float)

    def to_dict(self):
        if self.kind == "custom":
            return {"kind": "custom", "name": self.name, "lip": self.declared_lip,
                    "sigma0": self.declared_sigma0}
        return {"kind": self.kind, "c0": self.c0}


# named custom nonlinearities usable from configs
CUSTOM_SIGMAS = {
    "sin": lambda c: (lambda u: c * np.sin(u), abs(c)),
    "bounded_linear": lambda c: (lambda u: c * u / np.sqrt(1.0 + u * u), abs(c)),
}


def sigma_from_dict(d):
    kind = d.get("kind")
    if kind == "constant":
        return SigmaSpec.constant(d.get("c0", 1.0))
    if kind == "linear":
        return SigmaSpec.linear(d.get("c0", 1.0))
    if kind == "custom":
        name = d.get("name")
        if name not in CUSTOM_SIGMAS:
            raise ValueError(f"unknown custom sigma {name!r}; known: {sorted(CUSTOM_SIGMAS)}")
        func, lip = CUSTOM_SIGMAS[name](float(d.get("c0", 1.0)))
        return SigmaSpec.custom(func, d.get("lip", lip), name=name)
    raise ValueError(f"unknown sigma kind {kind!r}")


@dataclass(frozen=True)
class ConstantProfile:
    theta: float

    def values(self, grid, streams):
        return np.full((len(streams),) + grid.shape, float(self.theta))

    def to_dict(self):
        return {"kind": "constant", "theta": self.theta}


@dataclass(frozen=True)
class FieldProfile:
    field: Field

    def values(self, grid, streams):
        if self.field.grid != grid:
            raise ValueError("initial field lives on another grid")
        return np.broadcast_to(self.field.values, (len(streams),) + grid.shape).copy()

    def to_dict(self):
        return {"kind": "field", "mean": float(self.field.values.mean())}


_SAMPLERS = ("shared_offset", "white")


@dataclass(frozen=True)
class SamplerProfile:
    """Random initial data drawn per replica from ``(seed, stream id)``.

    ``shared_offset``: ``theta + scale * Z`` with one standard normal per
    replica (constant in space). ``white``: independent ``N(theta, scale^2)``
    per point. Both have second moment ``theta^2 + scale^2``.
    """

    name: str
    seed: int
    theta: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.name not in _SAMPLERS:
            raise ValueError(f"unknown sampler {self.name!r}; known: {_SAMPLERS}")

    @property
    def second_moment_bound(self):
        return self.theta ** 2 + self.scale ** 2

    def values(self, grid, streams):
        out = np.empty((len(streams),) + grid.shape)
        for i, s in enumerate(streams):
            rng = np.random.default_rng([int(self.seed), int(s)])
            if self.name == "shared_offset":
                out[i] = self.theta + self.scale * rng.standard_normal()
            else:
                out[i] = self.theta + self.scale * rng.standard_normal(grid.shape)
        return out

    def to_dict(self):
        return {"kind": "sampler", "name": self.name, "seed": self.seed,
                "theta": self.theta, "scale": self.scale}


@dataclass(frozen=True)
class SpdeProblem:
    grid: object
    mu: object
    sigma: SigmaSpec
    initial: object = ConstantProfile(0.0)

    def __post_init__(self):
        if self.mu.dim != self.grid.dim:
            raise ValueError("measure and grid dimensions differ")
        if isinstance(self.initial, (int, float)):
            object.__setattr__(self, "initial", ConstantProfile(float(self.initial)))
        if isinstance(self.initial, Field):
            object.__setattr__(self, "initial", FieldProfile(self.initial))

    def with_initial(self, initial):
        return SpdeProblem(self.grid, self.mu, self.sigma, initial)


# ---------------------------------------------------------------------------
# engines

@lru_cache(maxsize=16)
def _gather_index(grid, ints_bytes, count):
    """``gidx[j, q] = flat(q - k_j mod n)`` for the ``2P`` atoms ``+k_p, -k_p``."""
    ints = np.frombuffer(ints_bytes, dtype=np.int64).reshape(count, grid.dim)
    atoms = np.concatenate([ints, -ints])
    idx = np.indices(grid.shape).reshape(grid.dim, -1).T
    out = np.empty((atoms.shape[0], grid.size), dtype=np.intp)
    for j, k in enumerate(atoms):
        shifted = (idx - k) % grid.n
        out[j] = np.ravel_multi_index(tuple(shifted.T), grid.shape)
    return out


def gather_index(modes):
    return _gather_index(modes.grid, modes.ints.tobytes(), modes.count)


def atom_coefficients(modes, dt, g):
    """Complex Fourier coefficients of an increment at the ``2P`` atoms.

    ``g`` has shape ``(..., P, 2)``; returns ``(..., 2P)`` with
    ``c_{+k} = s (g - i g') / 2`` and ``c_{-k} = conj(c_{+k})``.
    """
    s = np.sqrt(modes.masses * dt)
    a = g[..., 0] * s
    b = g[..., 1] * s
    cp = 0.5 * (a - 1j * b)
    return np.ascontiguousarray(np.concatenate([cp, np.conj(cp)], axis=-1))


def choose_engine(problem, scheme, modes, engine="auto"):
    if scheme not in SCHEMES:
        raise SchemeError(f"unknown scheme {scheme!r}")
    kind = problem.sigma.kind
    if scheme == EXACT_LINEAR and kind != "constant":
        raise SchemeError("ExactLinear requires a constant sigma")
    if engine != "auto":
        if engine == "mode" and kind != "constant":
            raise SchemeError("mode engine requires a constant sigma")
        if engine == "spectral" and kind != "linear":
            raise SchemeError("spectral engine requires a linear sigma")
        if engine == "real" and scheme == EXACT_LINEAR:
            raise SchemeError("ExactLinear runs on the mode engine")
        return engine
    if kind == "constant":
        return "mode"
    if kind == "linear" and 2 * modes.count <= _SPECTRAL_MAX_ATOMS:
        return "spectral"
    return "real"


class _Engine:
    def __init__(self, problem, paths, scheme):
        self.problem = problem
        self.paths = paths
        self.grid = problem.grid
        self.modes = paths.modes
        self.dt = paths.dt
        self.scheme = scheme
        self.step = 0

    def advance(self, stop):
        while self.step < stop:
            hi = min(stop, self.step + _NORMAL_BLOCK)
            g = self.paths.normals(self.step, hi)
            self._run_block(g)

    def _fail(self, j):
        raise BlowUpError(j, self.dt)


class _ModeEngine(_Engine):
    """Constant sigma: ``u = S_t u0 + sum_p A_p cos + B_p sin``."""

    def __init__(self, problem, paths, scheme, u0):
        super().__init__(problem, paths, scheme)
        self.c0 = problem.sigma.c0
        self.base = u0
        self.flat_base = bool(np.all(u0 == u0.reshape(u0.shape[0], -1)[:, :1].reshape(
            (u0.shape[0],) + (1,) * self.grid.dim)))
        R, P = u0.shape[0], self.modes.count
        self.amp = np.zeros((R, P, 2))
        a = self.modes.k2
        dt = self.dt
        self.decay = np.exp(-a * dt)
        if scheme == EXACT_LINEAR:
            self.gain = self.c0 * np.sqrt(self.modes.masses * -np.expm1(-2 * a * dt) / (2 * a))
        else:
            self.gain = self.c0 * self.decay * np.sqrt(self.modes.masses * dt)

    def _run_block(self, g):
        dec = self.decay[None, :, None]
        gain = self.gain[None, :, None]
        amp = self.amp
        for j in range(g.shape[1]):
            amp *= dec
            amp += gain * g[:, j]
            self.step += 1

    def values(self):
        t = self.step * self.dt
        det = self.base if self.flat_base else self.grid.smooth(self.base, t)
        out = det + synthesize(self.modes, self.amp[..., 0], self.amp[..., 1])
        if not np.all(np.isfinite(out)):
            self._fail(self.step)
        return out


class _SpectralEngine(_Engine):
    """Linear sigma: Fourier state ``U`` (full layout), convolution kick."""

    def __init__(self, problem, paths, scheme, u0):
        super().__init__(problem, paths, scheme)
        R = u0.shape[0]
        self.c0 = float(problem.sigma.c0)
        self.U = np.ascontiguousarray(self.grid.fft(u0).reshape(R, -1))
        self.buf = np.empty_like(self.U)
        self.gidx = gather_index(self.modes)
        self.mult = np.ascontiguousarray(self.grid.heat_multiplier(self.dt, half=False).ravel())
        self.kern = _kernels.active()

    def _run_block(self, g):
        C = atom_coefficients(self.modes, self.dt, g)
        for j in range(g.shape[1]):
            ok = self.kern.spectral_step(self.U, self.U, np.ascontiguousarray(C[:, j]),
                                         self.gidx, self.mult, self.c0, self.buf)
            self.U, self.buf = self.buf, self.U
            if not ok:
                self._fail(self.step)
            self.step += 1

    def values(self):
        R = self.U.shape[0]
        return self.grid.ifft(self.U.reshape((R,) + self.grid.shape)).real


class _RealEngine(_Engine):
    """Any sigma: pointwise kick in real space followed by the heat multiplier."""

    def __init__(self, problem, paths, scheme, u0):
        super().__init__(problem, paths, scheme)
        self.u = np.array(u0, dtype=float)
        self.mult = self.grid.heat_multiplier(self.dt)
        self.sigma = problem.sigma
        self.sq = np.sqrt(self.modes.masses * self.dt)

    def _run_block(self, g):
        u = self.u
        for j in range(g.shape[1]):
            gj = g[:, j]
            dw = synthesize(self.modes, gj[..., 0] * self.sq, gj[..., 1] * self.sq)
            u = self.grid.inverse(self.grid.forward(u + self.sigma(u) * dw) * self.mult)
            if not np.all(np.isfinite(u)):
                self.u = u
                self._fail(self.step)
            self.step += 1
        self.u = u

    def values(self):
        return self.u


_ENGINES = {"mode": _ModeEngine, "spectral": _SpectralEngine, "real": _RealEngine}


def make_engine(problem, paths, scheme=EXP_EULER, engine="auto", u0=None):
    """Engine for a chunk of replicas (``paths`` is a :class:`PathEnsemble`)."""
    if paths.grid != problem.grid:
        raise ValueError("path and problem grids differ")
    name = choose_engine(problem, scheme, paths.modes, engine)
    if u0 is None:
        u0 = problem.initial.values(problem.grid, paths.streams)
    return _ENGINES[name](problem, paths, scheme, np.asarray(u0, dtype=float))


# ---------------------------------------------------------------------------
# ensemble runner

def chunk_slices(total, chunk=CHUNK):
    return [slice(i, min(i + chunk, total)) for i in range(0, total, chunk)]


def map_chunks(fn, total, threads=1, chunk=CHUNK):
    """Apply ``fn(slice)`` to fixed chunks; results come back in chunk order.

    A :class:`BlowUpError` from any chunk is re-raised with the smallest
    failing step, independent of scheduling.
    """
    slices = chunk_slices(total, chunk)

    def guarded(sl):
        try:
            return fn(sl), None
        except BlowUpError as e:
            return None, e

    if threads <= 1 or len(slices) <= 1:
        results = [guarded(sl) for sl in slices]
    else:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            results = list(pool.map(guarded, slices))
    errors = [e for _, e in results if e is not None]
    if errors:
        raise min(errors, key=lambda e: e.step)
    return [r for r, _ in results]


@dataclass
class EvolveResult:
    """Terminal ensemble plus optional snapshot statistics.

    ``snapshots`` maps a step index to the stacked output of ``reducer``
    (one row per replica).
    """

    ensemble: FieldEnsemble
    engine: str
    snapshots: dict = field(default_factory=dict)

    @property
    def values(self):
        return self.ensemble.values


def _as_ensemble(path):
    if isinstance(path, NoisePath):
        return path.as_ensemble()
    if isinstance(path, PathEnsemble):
        return path
    raise TypeError("path must be a NoisePath or PathEnsemble")


def evolve_ensemble(problem, paths, steps, scheme=EXP_EULER, engine="auto", threads=1,
                    snapshot_steps=(), reducer=None, u0=None, chunk=CHUNK):
    """Evolve every replica of ``paths`` for ``steps`` steps.

    Parameters
    ----------
    snapshot_steps : iterable of int
        Steps (``0..steps``) at which ``reducer(values)`` is recorded.
    reducer : callable, optional
        Maps an array ``(r,) + grid.shape`` to per-replica statistics.
        Defaults to a copy of the fields.
    u0 : ndarray, optional
        Explicit initial values ``(R,) + grid.shape`` overriding the profile.
    """
    paths = _as_ensemble(paths)
    steps = int(steps)
    if steps < 0 or steps > len(paths):
        raise ValueError(f"need 0 <= steps <= path length ({len(paths)}), got {steps}")
    snaps = sorted(set(int(s) for s in snapshot_steps))
    if snaps and (snaps[0] < 0 or snaps[-1] > steps):
        raise ValueError("snapshot steps must lie in [0, steps]")
    reducer = reducer or (lambda v: np.array(v, copy=True))
    name = choose_engine(problem, scheme, paths.modes, engine)

    def run(sl):
        sub = paths.select(sl)
        init = None if u0 is None else u0[sl]
        eng = make_engine(problem, sub, scheme, name, init)
        rec = {}
        for s in snaps:
            eng.advance(s)
            rec[s] = reducer(eng.values())
        eng.advance(steps)
        return eng.values(), rec

    parts = map_chunks(run, paths.size, threads, chunk)
    values = np.concatenate([p[0] for p in parts]) if parts else np.zeros((0,) + problem.grid.shape)
    snapshots = {s: np.concatenate([p[1][s] for p in parts]) for s in snaps}
    ens = FieldEnsemble(problem.grid, values, time=steps * paths.dt, steps=steps)
    return EvolveResult(ens, name, snapshots)


def evolve(problem, path, steps, scheme=EXP_EULER, engine="auto", **kw):
    """Evolve to step ``steps``.

    A :class:`~shelab.noise.NoisePath` yields a :class:`Field`; a
    :class:`~shelab.noise.PathEnsemble` yields a :class:`FieldEnsemble`.
    Raises :class:`BlowUpError` on the first non-finite value.
    """
    res = evolve_ensemble(problem, path, steps, scheme, engine, **kw)
    if isinstance(path, NoisePath):
        return Field(problem.grid, res.values[0])
    return res.ensemble


# ---------------------------------------------------------------------------
# coupling and restart checks

@dataclass
class CoupledResult:
    """Terminal ensembles of a synchronous coupling and its distance trace.

    ``trace_sup[i]`` is ``max_x mean_r |u - v|^2`` at ``trace_steps[i]``;
    ``trace_mean`` is the grid average of the same quantity, with standard
    error ``trace_se`` across replicas.
    """

    u: FieldEnsemble
    v: FieldEnsemble
    trace_steps: np.ndarray
    trace_sup: np.ndarray
    trace_mean: np.ndarray
    trace_se: np.ndarray

    @property
    def distance_trace(self):
        return list(self.trace_sup)


def evolve_coupled(problem_a, problem_b, path, steps, scheme=EXP_EULER, engine="auto",
                   threads=1, trace_every=1, chunk=CHUNK):
    """Drive two initial conditions with the same noise and track their distance."""
    if (problem_a.grid != problem_b.grid or problem_a.mu is not problem_b.mu
            or problem_a.sigma != problem_b.sigma):
        raise ValueError("coupled problems must share grid, measure and sigma")
    paths = _as_ensemble(path)
    steps = int(steps)
    trace_steps = np.arange(0, steps + 1, max(1, int(trace_every)))
    if trace_steps[-1] != steps:
        trace_steps = np.append(trace_steps, steps)
    name = choose_engine(problem_a, scheme, paths.modes, engine)
    N = problem_a.grid.size

    def run(sl):
        sub = paths.select(sl)
        ea = make_engine(problem_a, sub, scheme, name)
        eb = make_engine(problem_b, sub, scheme, name)
        sq_sum = np.empty((len(trace_steps), N))
        per_rep = np.empty((len(trace_steps), sub.size))
        for i, s in enumerate(trace_steps):
            ea.advance(s)
            eb.advance(s)
            w2 = ((ea.values() - eb.values()) ** 2).reshape(sub.size, N)
            sq_sum[i] = w2.sum(axis=0)
            per_rep[i] = w2.mean(axis=1)
        return ea.values(), eb.values(), sq_sum, per_rep

    parts = map_chunks(run, paths.size, threads, chunk)
    R = paths.size
    total = parts[0][2].copy()
    for p in parts[1:]:
        total += p[2]
    point_mean = total / R
    per_rep = np.concatenate([p[3] for p in parts], axis=1)
    se = per_rep.std(axis=1, ddof=1) / math.sqrt(R) if R > 1 else np.zeros(len(trace_steps))
    grid = problem_a.grid
    u = FieldEnsemble(grid, np.concatenate([p[0] for p in parts]), time=steps * paths.dt)
    v = FieldEnsemble(grid, np.concatenate([p[1] for p in parts]), time=steps * paths.dt)
    return CoupledResult(u, v, trace_steps, point_mean.max(axis=1), per_rep.mean(axis=1), se)


def _suffix(path, k):
    return path._with_index(path.index[k:])


def mild_residual(problem, path, steps, probe_steps, scheme=EXP_EULER):
    """Restart the run at each probe step and compare terminal fields.

    The ExpEuler restart uses the real-space engine, whose state is the
    field itself, so a restart must reproduce the terminal field exactly.
    ExactLinear restarts re-sample nothing: the suffix replays the same
    counter normals. Returns the max absolute terminal difference per probe.
    """
    engine = "real" if scheme == EXP_EULER else "mode"
    full = evolve_ensemble(problem, path, steps, scheme, engine)
    out = []
    paths = _as_ensemble(path)
    for k in probe_steps:
        k = int(k)
        if not 0 <= k <= steps:
            raise ValueError(f"probe step {k} outside [0, {steps}]")
        mid = evolve_ensemble(problem, paths, k, scheme, engine)
        rest = evolve_ensemble(problem, _suffix(paths, k), steps - k, scheme, engine,
                               u0=mid.values)
        out.append(float(np.max(np.abs(rest.values - full.values))))
    return out
