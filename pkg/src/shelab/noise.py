"""Discrete space-time noise on the torus.

The spectral measure is placed on the Fourier lattice as symmetric pairs
``+-xi_p`` with pair mass ``mu_p`` (sum of both atoms). Over one step of
length ``dt`` the increment is

    dW(x) = sum_p sqrt(mu_p dt) (g_p cos(xi_p . x) + g'_p sin(xi_p . x))

with independent standard normals, so ``Cov[dW(x), dW(y)] = dt Lambda_N(x - y)``.
The normals come from Philox4x32-10 keyed by the seed, with counter
``(pair index, step, stream_lo, stream_hi)``. Any increment of any path can
be regenerated on demand, so paths are stored as an index map from logical
step to counter step: reversal and extension only rewrite that map.
"""

import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _kernels
from .grid import Field

_BASIS_MAX_MODES = 64


class OffLatticeError(ValueError):
    pass


class NyquistError(OffLatticeError):
    pass


@dataclass(frozen=True)
class LatticeModes:
    """Symmetric frequency pairs carrying noise mass on a grid.

    Attributes
    ----------
    ints : ndarray (P, d) of int
        Canonical representative of each pair (first nonzero entry > 0).
    masses : ndarray (P,)
        Pair masses ``mu({xi_p}) + mu({-xi_p})``.
    freqs : ndarray (P, d)
    k2 : ndarray (P,)
        ``|xi_p|^2``.
    dropped_mass : float
        Radial mass that could not be placed (origin cell, Nyquist cells,
        beyond the lattice band). Zero for atomic measures.
    """

    grid: object
    ints: np.ndarray
    masses: np.ndarray
    freqs: np.ndarray
    k2: np.ndarray
    dropped_mass: float = 0.0
    source_mass: float = 0.0

    @property
    def count(self):
        return len(self.masses)

    @property
    def total_mass(self):
        return float(self.masses.sum())

    def report(self):
        return {"pairs": self.count, "binned_mass": self.total_mass,
                "dropped_mass": self.dropped_mass, "source_mass": self.source_mass}

    def lambda_lattice(self, h):
        """``Lambda_N(h) = sum_p mu_p cos(xi_p . h)``."""
        return float(np.sum(self.masses * np.cos(self.freqs @ np.asarray(h, dtype=float))))

    def atoms(self):
        """Integer indices and pair index of the ``2P`` atoms ``+k_p, -k_p``."""
        ints = np.concatenate([self.ints, -self.ints])
        pair = np.concatenate([np.arange(self.count), np.arange(self.count)])
        sign = np.concatenate([np.ones(self.count), -np.ones(self.count)])
        return ints, pair, sign


def _canonical(k):
    k = np.asarray(k, dtype=np.int64)
    nz = np.flatnonzero(k)
    if nz.size and k[nz[0]] < 0:
        return tuple((-k).tolist())
    return tuple(k.tolist())


def _collect(grid, table, dropped=0.0, source=0.0):
    keys = sorted(table)
    d = grid.dim
    ints = np.array(keys, dtype=np.int64).reshape(len(keys), d)
    masses = np.array([table[k] for k in keys], dtype=float)
    keep = masses > 0
    ints, masses = ints[keep], masses[keep]
    freqs = ints * grid.fundamental
    k2 = np.sum(freqs ** 2, axis=1)
    for a in (ints, masses, freqs, k2):
        a.setflags(write=False)
    return LatticeModes(grid, ints, masses, freqs, k2, float(dropped), float(source))


def _atomic_modes(grid, mu):
    half = grid.n // 2
    table = {}
    for xi, a in zip(mu.freqs, mu.masses):
        k = xi / grid.fundamental
        kr = np.rint(k)
        if np.any(np.abs(k - kr) > 1e-9 * np.maximum(1.0, np.abs(k))):
            raise OffLatticeError(f"atom frequency {xi.tolist()} is not on the lattice "
                                  f"(2 pi / {grid.length:g}) Z^{grid.dim}")
        kr = kr.astype(np.int64)
        if np.any(np.abs(kr) == half):
            raise NyquistError(f"atom frequency {xi.tolist()} lies on the Nyquist row (index {half})")
        if np.any(np.abs(kr) > half):
            raise OffLatticeError(f"atom frequency {xi.tolist()} is beyond the grid band "
                                  f"(|index| < {half})")
        key = _canonical(kr)
        table[key] = table.get(key, 0.0) + float(a)
    return _collect(grid, table, 0.0, mu.total_mass())


def _radial_modes(grid, mu, n_sub):
    """Bin a radial density onto the lattice by sub-cell midpoint quadrature.

    Every point of ``R^d`` belongs to the cube of its nearest lattice
    frequency; each cube is split into ``n_sub^d`` sub-cells and the density
    is evaluated at their midpoints. Only the canonical half of the lattice
    is integrated; the other half follows by symmetry.
    """
    half = grid.n // 2
    d = grid.dim
    dk = grid.fundamental
    ks = np.arange(-half, half + 1)
    kmesh = np.stack(np.meshgrid(*([ks] * d), indexing="ij"), axis=-1).reshape(-1, d)
    t = (np.arange(n_sub) + 0.5) / n_sub - 0.5
    offs = np.stack(np.meshgrid(*([t] * d), indexing="ij"), axis=-1).reshape(-1, d)
    cell = (dk / n_sub) ** d
    mass = np.zeros(kmesh.shape[0])
    for o in offs:
        r = np.sqrt(np.sum(((kmesh + o) * dk) ** 2, axis=1))
        mass += mu.density(r)
    mass *= cell
    table = {}
    dropped = 0.0
    for k, m in zip(kmesh, mass):
        if m == 0:
            continue
        if not np.any(k) or np.any(np.abs(k) == half):
            dropped += m
            continue
        key = _canonical(k)
        if key == tuple(k.tolist()):
            table[key] = 2.0 * m
    total = mu.total_mass()
    # mass beyond the lattice box never reaches a cube
    dropped += max(total - float(mass.sum()), 0.0)
    return _collect(grid, table, dropped, total)


@lru_cache(maxsize=64)
def lattice_modes(grid, mu, n_sub=8):
    """Place ``mu`` on the Fourier lattice of ``grid``.

    Atomic measures must sit exactly on the lattice and off the Nyquist
    row. Radial densities are binned (see :func:`_radial_modes`); the binned
    measure is the one simulated and used by every lattice oracle.
    """
    if mu.dim != grid.dim:
        raise ValueError(f"measure dimension {mu.dim} != grid dimension {grid.dim}")
    if mu.kind == "atomic":
        return _atomic_modes(grid, mu)
    return _radial_modes(grid, mu, n_sub)


# ---------------------------------------------------------------------------
# normals

def draw_normals(seed, streams, steps, nblocks):
    """Standard normals ``(len(streams), len(steps), nblocks, 2)`` from the counter RNG."""
    streams = np.ascontiguousarray(streams, dtype=np.uint64)
    steps = np.ascontiguousarray(steps, dtype=np.uint32)
    out = np.empty((streams.shape[0], steps.shape[0], nblocks, 2))
    if out.size:
        _kernels.active().normals(np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF), streams, steps,
                                  int(nblocks), out)
    return out


@dataclass(frozen=True)
class CounterState:
    """Position of one increment in the counter RNG."""
    seed: int
    stream_id: int
    step: int


# ---------------------------------------------------------------------------
# synthesis

@lru_cache(maxsize=16)
def _basis(grid, ints_bytes, count):
    ints = np.frombuffer(ints_bytes, dtype=np.int64).reshape(count, grid.dim)
    idx = np.stack(np.meshgrid(*([np.arange(grid.n)] * grid.dim), indexing="ij"), axis=-1)
    phase = (idx.reshape(-1, grid.dim) @ ints.T) % grid.n
    ang = (2 * np.pi / grid.n) * phase
    c = np.ascontiguousarray(np.cos(ang).T)
    s = np.ascontiguousarray(np.sin(ang).T)
    c.setflags(write=False)
    s.setflags(write=False)
    return c, s


def mode_basis(modes):
    """``cos(xi_p . x)`` and ``sin(xi_p . x)`` tables of shape ``(P, n^d)``."""
    return _basis(modes.grid, modes.ints.tobytes(), modes.count)


def synthesize(modes, a, b):
    """Real field(s) ``sum_p a_p cos(xi_p . x) + b_p sin(xi_p . x)``.

    ``a`` and ``b`` have shape ``(..., P)``; returns ``(...) + grid.shape``.
    """
    grid = modes.grid
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lead = a.shape[:-1]
    if modes.count == 0:
        return np.zeros(lead + grid.shape)
    if modes.count <= _BASIS_MAX_MODES:
        c, s = mode_basis(modes)
        out = a.reshape(-1, modes.count) @ c + b.reshape(-1, modes.count) @ s
        return out.reshape(lead + grid.shape)
    a2 = a.reshape(-1, modes.count)
    b2 = b.reshape(-1, modes.count)
    spec = np.zeros((a2.shape[0],) + grid.shape, dtype=complex)
    idx = tuple((modes.ints % grid.n).T)
    nidx = tuple(((-modes.ints) % grid.n).T)
    scale = grid.size / 2.0
    spec[(slice(None),) + idx] = scale * (a2 - 1j * b2)
    spec[(slice(None),) + nidx] = scale * (a2 + 1j * b2)
    return grid.ifft(spec).real.reshape(lead + grid.shape)


def increment_amplitudes(modes, dt, g):
    """Scale normals ``g[..., P, 2]`` to cos/sin amplitudes of an increment."""
    s = np.sqrt(modes.masses * dt)
    return g[..., 0] * s, g[..., 1] * s


def sample_increment(grid, mu, dt, rng_state):
    """One noise increment for ``rng_state = CounterState(seed, stream_id, step)``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    modes = lattice_modes(grid, mu)
    g = draw_normals(rng_state.seed, [rng_state.stream_id], [rng_state.step], modes.count)
    a, b = increment_amplitudes(modes, dt, g[0, 0])
    return Field(grid, synthesize(modes, a, b))


# ---------------------------------------------------------------------------
# paths

class _PathBase:
    """Shared parameters of a path or a path ensemble plus the step map."""

    def __init__(self, grid, mu, dt, seed, index, modes=None):
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.grid = grid
        self.mu = mu
        self.dt = float(dt)
        self.seed = int(seed)
        self.index = index
        self.modes = modes if modes is not None else lattice_modes(grid, mu)

    def __len__(self):
        return int(self.index.shape[0])

    @property
    def steps(self):
        return len(self)

    def counter_steps(self, start=0, stop=None):
        return self.index[start:stop]

    @property
    def is_forward(self):
        """True when logical step ``j`` uses counter step ``j``."""
        return bool(np.array_equal(self.index, np.arange(len(self))))

    def _check_range(self, start, stop):
        stop = len(self) if stop is None else stop
        if not 0 <= start <= stop <= len(self):
            raise IndexError(f"steps [{start}, {stop}) outside path of length {len(self)}")
        return stop


class NoisePath(_PathBase):
    """Sequence of increments of one stream.

    ``increments`` is a lazy sequence of :class:`~shelab.grid.Field`;
    increment ``j`` covers ``(j dt, (j+1) dt]``.
    """

    def __init__(self, grid, mu, dt, seed, stream_id=0, steps=0, index=None, modes=None):
        if index is None:
            index = np.arange(int(steps), dtype=np.int64)
        super().__init__(grid, mu, dt, seed, index, modes)
        self.stream_id = int(stream_id)

    def _with_index(self, index):
        return NoisePath(self.grid, self.mu, self.dt, self.seed, self.stream_id,
                         index=index, modes=self.modes)

    def normals(self, start=0, stop=None):
        stop = self._check_range(start, stop)
        return draw_normals(self.seed, [self.stream_id], self.index[start:stop],
                            self.modes.count)[0]

    def increment(self, j):
        if not -len(self) <= j < len(self):
            raise IndexError(j)
        j = j % len(self)
        a, b = increment_amplitudes(self.modes, self.dt, self.normals(j, j + 1)[0])
        return Field(self.grid, synthesize(self.modes, a, b))

    @property
    def increments(self):
        return _IncrementSeq(self)

    def as_ensemble(self):
        return PathEnsemble(self.grid, self.mu, self.dt, self.seed, [self.stream_id],
                            index=self.index, modes=self.modes)

    def header(self):
        return {"seed": self.seed, "stream_id": self.stream_id, "dt": self.dt,
                "steps": len(self), "measure_hash": self.mu.digest(),
                "grid": self.grid.to_dict(), "forward": self.is_forward}

    def header_json(self):
        return json.dumps(self.header(), sort_keys=True)

    def dump(self, fname):
        """Write all increments in the grid checkpoint format."""
        from .grid import save_checkpoint
        # one step at a time so the file matches increment(j) bit for bit
        # (batched matrix products may round differently)
        vals = np.stack([self.increment(j).values for j in range(len(self))]) if len(self) \
            else np.zeros((0,) + self.grid.shape)
        save_checkpoint(fname, self.grid, vals,
                        time=len(self) * self.dt, seed=self.seed,
                        extra={"path": self.header()})


class _IncrementSeq:
    def __init__(self, path):
        self._path = path

    def __len__(self):
        return len(self._path)

    def __getitem__(self, j):
        if isinstance(j, slice):
            return [self._path.increment(i) for i in range(*j.indices(len(self)))]
        return self._path.increment(j)

    def __iter__(self):
        for j in range(len(self)):
            yield self._path.increment(j)


class PathEnsemble(_PathBase):
    """Independent paths (one per stream id) sharing a step map.

    This is the batched form used by the integrators.
    """

    def __init__(self, grid, mu, dt, seed, streams, steps=0, index=None, modes=None):
        if index is None:
            index = np.arange(int(steps), dtype=np.int64)
        super().__init__(grid, mu, dt, seed, index, modes)
        self.streams = np.asarray(streams, dtype=np.uint64).reshape(-1)

    @classmethod
    def replicas(cls, grid, mu, dt, seed, count, steps, first_stream=0):
        return cls(grid, mu, dt, seed, np.arange(first_stream, first_stream + count, dtype=np.uint64),
                   steps=steps)

    @property
    def size(self):
        return int(self.streams.shape[0])

    def _with_index(self, index):
        return PathEnsemble(self.grid, self.mu, self.dt, self.seed, self.streams,
                            index=index, modes=self.modes)

    def select(self, rows):
        return PathEnsemble(self.grid, self.mu, self.dt, self.seed, self.streams[rows],
                            index=self.index, modes=self.modes)

    def path(self, r):
        return NoisePath(self.grid, self.mu, self.dt, self.seed, int(self.streams[r]),
                         index=self.index, modes=self.modes)

    def normals(self, start=0, stop=None):
        """Normals of logical steps ``[start, stop)``: shape ``(R, S, P, 2)``."""
        stop = self._check_range(start, stop)
        return draw_normals(self.seed, self.streams, self.index[start:stop], self.modes.count)


def reversed_view(path, horizon_steps):
    """Time-reversed view: step ``j`` returns increment ``M-1-j`` of ``path``.

    The result shares the step map storage of ``path`` (a numpy view).
    """
    M = int(horizon_steps)
    if M < 0 or M > len(path):
        raise ValueError(f"horizon {M} exceeds stored length {len(path)}")
    return path._with_index(path.index[:M][::-1])


def extend(path, extra_steps):
    """Append ``extra_steps`` increments; the existing prefix is unchanged."""
    extra = int(extra_steps)
    if extra < 0:
        raise ValueError("extra_steps must be nonnegative")
    if extra == 0:
        return path
    if not path.is_forward:
        raise ValueError("only forward paths can be extended")
    n = len(path)
    return path._with_index(np.arange(n + extra, dtype=np.int64))
