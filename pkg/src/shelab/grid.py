"""Periodic lattice, real fields on it, and the heat semigroup.

Transform convention: the forward transform carries no prefactor and the
inverse carries ``1/n^d`` (numpy/scipy default). Fourier index ``k`` maps to
the frequency ``(2 pi / L) k``.
"""

import csv
import io
import json
import math
from functools import cached_property

import numpy as np
from scipy import fft as sfft


class TorusGrid:
    """Uniform grid with ``n`` points per axis on ``[0, L)^d``.

    Parameters
    ----------
    dim : int
    n : int
        Points per axis, must be even.
    length : float
        Period ``L`` of every axis.
    """

    def __init__(self, dim=3, n=16, length=2 * math.pi):
        if int(dim) < 1:
            raise ValueError("dim must be positive")
        if int(n) < 2 or int(n) % 2:
            raise ValueError("n must be a positive even integer")
        if not length > 0:
            raise ValueError("length must be positive")
        self.dim = int(dim)
        self.n = int(n)
        self.length = float(length)

    def __eq__(self, other):
        return (isinstance(other, TorusGrid) and self.dim == other.dim
                and self.n == other.n and self.length == other.length)

    def __hash__(self):
        return hash((self.dim, self.n, self.length))

    def __repr__(self):
        return f"TorusGrid(dim={self.dim}, n={self.n}, length={self.length!r})"

    def to_dict(self):
        return {"dim": self.dim, "n": self.n, "length": self.length}

    @classmethod
    def from_dict(cls, d):
        return cls(d.get("dim", 3), d.get("n", 16), d.get("length", 2 * math.pi))

    @property
    def spacing(self):
        return self.length / self.n

    @property
    def shape(self):
        return (self.n,) * self.dim

    @property
    def size(self):
        return self.n ** self.dim

    @property
    def axes(self):
        return tuple(range(-self.dim, 0))

    @property
    def fundamental(self):
        """Frequency of Fourier index 1, ``2 pi / L``."""
        return 2 * math.pi / self.length

    @cached_property
    def coords(self):
        """Point coordinates, one array of ``shape`` per axis (read-only)."""
        x = np.arange(self.n) * self.spacing
        out = np.meshgrid(*([x] * self.dim), indexing="ij")
        for a in out:
            a.setflags(write=False)
        return tuple(out)

    @cached_property
    def int_freqs(self):
        """Integer Fourier indices in fftn order, ``{-n/2, ..., n/2-1}``."""
        return np.fft.fftfreq(self.n, d=1.0 / self.n).astype(np.int64)

    @cached_property
    def k2(self):
        """``|xi_k|^2`` on the full fftn layout."""
        k = self.int_freqs * self.fundamental
        parts = np.meshgrid(*([k * k] * self.dim), indexing="ij")
        out = np.sum(parts, axis=0)
        out.setflags(write=False)
        return out

    @cached_property
    def k2_half(self):
        """``|xi_k|^2`` on the rfftn layout (last axis halved)."""
        k = self.int_freqs * self.fundamental
        kl = np.fft.rfftfreq(self.n, d=1.0 / self.n) * self.fundamental
        parts = np.meshgrid(*([k * k] * (self.dim - 1) + [kl * kl]), indexing="ij")
        out = np.sum(parts, axis=0)
        out.setflags(write=False)
        return out

    def heat_multiplier(self, dt, half=True):
        """Fourier multiplier ``exp(-|xi|^2 dt)``."""
        return np.exp(-(self.k2_half if half else self.k2) * dt)

    # transforms on the trailing ``dim`` axes
    def forward(self, values):
        return sfft.rfftn(values, axes=self.axes)

    def inverse(self, coeffs):
        return sfft.irfftn(coeffs, s=self.shape, axes=self.axes)

    def fft(self, values):
        return sfft.fftn(values, axes=self.axes)

    def ifft(self, coeffs):
        return sfft.ifftn(coeffs, axes=self.axes)

    def spectral_energy(self, coeffs):
        """``(1/n^d) sum_k |F_k|^2`` for a full-layout transform."""
        return float(np.sum(np.abs(coeffs) ** 2)) / self.size

    def smooth(self, values, dt):
        """Apply the heat semigroup for time ``dt`` to the trailing axes of ``values``."""
        if dt == 0:
            return np.array(values, dtype=float, copy=True)
        return self.inverse(self.forward(values) * self.heat_multiplier(dt))

    def flat_index(self, idx):
        return int(np.ravel_multi_index(tuple(int(i) % self.n for i in idx), self.shape))


class Field:
    """Real scalar field on a :class:`TorusGrid`.

    ``values`` is a read-only array of ``grid.shape``; a flat array of length
    ``n^d`` in row-major order is accepted and reshaped. Non-finite values
    are rejected.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid, values):
        v = np.array(values, dtype=float)
        if v.shape != grid.shape:
            if v.size != grid.size:
                raise ValueError(f"field needs {grid.size} values, got shape {v.shape}")
            v = v.reshape(grid.shape)
        if not np.all(np.isfinite(v)):
            raise ValueError("field has non-finite values")
        v.setflags(write=False)
        self.grid = grid
        self.values = v

    @classmethod
    def constant(cls, grid, c):
        return cls(grid, np.full(grid.shape, float(c)))

    @classmethod
    def from_function(cls, grid, f):
        """Evaluate ``f(x_1, ..., x_d)`` on the grid coordinates."""
        return cls(grid, np.broadcast_to(f(*grid.coords), grid.shape))

    def __repr__(self):
        return f"Field({self.grid!r}, mean={self.values.mean():.6g})"

    def __eq__(self, other):
        return (isinstance(other, Field) and self.grid == other.grid
                and np.array_equal(self.values, other.values))

    def __hash__(self):
        return hash((self.grid, self.values.tobytes()))


def semigroup_apply(field, dt):
    """Heat flow for time ``dt >= 0`` via the multiplier ``exp(-|xi|^2 dt)``."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if dt == 0:
        return field
    return Field(field.grid, field.grid.smooth(field.values, dt))


def spatial_mean(field):
    return float(field.values.reshape(1, -1).mean(axis=1)[0])


def _block_indices(grid, half_width, center):
    m = int(math.floor(half_width / grid.spacing + 1e-9))
    offs = np.arange(-m, m + 1)
    return [(int(c) + offs) % grid.n for c in center]


def block_average(field, half_width, center=None):
    """Mean over lattice points within ``half_width`` of ``center`` (sup norm, periodic).

    ``center`` is a lattice index tuple (default origin). A half width of at
    least ``L/2`` covers the torus and returns :func:`spatial_mean`.
    """
    return float(block_average_batch(field.values[None], field.grid, half_width, center)[0])


def block_average_batch(values, grid, half_width, center=None):
    """:func:`block_average` for every leading index of ``values``."""
    if not half_width > 0:
        raise ValueError("half_width must be positive")
    if half_width > grid.length / 2 * (1 + 1e-12):
        raise ValueError("half_width must not exceed L/2")
    values = np.asarray(values, dtype=float)
    lead = values.shape[: values.ndim - grid.dim]
    flat = values.reshape((-1,) + grid.shape)
    if half_width >= grid.length / 2 * (1 - 1e-12):
        return flat.reshape(flat.shape[0], -1).mean(axis=1).reshape(lead)
    center = (0,) * grid.dim if center is None else tuple(center)
    sub = flat
    for ax, idx in enumerate(_block_indices(grid, half_width, center)):
        sub = np.take(sub, idx, axis=ax + 1)
    return sub.reshape(sub.shape[0], -1).mean(axis=1).reshape(lead)


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, grid, values, time=0.0, seed=None, extra=None):
    """Write one field (or a stack of fields) as a JSON header line + float64 LE data.

    ``values`` may have shape ``grid.shape`` or ``(count,) + grid.shape``.
    """
    values = np.asarray(values, dtype="<f8")
    count = None
    if values.shape != grid.shape:
        if values.shape[1:] != grid.shape:
            raise ValueError("values do not match the grid")
        count = values.shape[0]
    header = {"dim": grid.dim, "L": grid.length, "n": grid.n, "time": float(time),
              "seed": seed}
    if count is not None:
        header["count"] = count
    if extra:
        header.update(extra)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(np.ascontiguousarray(values).tobytes())


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(grid, values, header)``."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        data = np.frombuffer(fh.read(), dtype="<f8")
    grid = TorusGrid(header["dim"], header["n"], header["L"])
    shape = grid.shape if header.get("count") is None else (header["count"],) + grid.shape
    return grid, data.reshape(shape).astype(float), header


def field_to_csv(field, path=None):
    """CSV rows ``i_1, ..., i_d, value``; returns the text when ``path`` is None."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"i{a + 1}" for a in range(field.grid.dim)] + ["value"])
    for idx in np.ndindex(*field.grid.shape):
        w.writerow(list(idx) + [repr(float(field.values[idx]))])
    text = buf.getvalue()
    if path is None:
        return text
    with open(path, "w") as fh:
        fh.write(text)


class FieldEnsemble:
    """Replicas of a field: ``values`` has shape ``(R,) + grid.shape``.

    ``meta`` carries free-form provenance (time, theta, seed, ...).
    """

    def __init__(self, grid, values, **meta):
        v = np.asarray(values, dtype=float)
        if v.ndim != grid.dim + 1 or v.shape[1:] != grid.shape:
            raise ValueError(f"ensemble values must have shape (R,) + {grid.shape}, got {v.shape}")
        self.grid = grid
        self.values = v
        self.meta = meta

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, r):
        return Field(self.grid, self.values[r])

    def __iter__(self):
        for r in range(len(self)):
            yield self[r]

    @classmethod
    def from_fields(cls, fields, **meta):
        fields = list(fields)
        if not fields:
            raise ValueError("empty ensemble")
        return cls(fields[0].grid, np.stack([f.values for f in fields]), **meta)

    def __repr__(self):
        return f"FieldEnsemble(R={len(self)}, {self.grid!r})"
