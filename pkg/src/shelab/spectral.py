"""Spectral measures of the spatial noise and the integrals built from them.

A measure is either a finite list of atoms (frequency vector, mass) or a
radially symmetric density ``w(|xi|)`` supported on ``[r_min, r_max]``.
Radial integrals use the midpoint rule in ``r`` with the angular factor
``|S^{d-1}| r^{d-1}``; halving the step is used as a convergence check.
"""

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special


class QuadratureWarning(UserWarning):
    """Doubling the node count moved a radial integral by more than 1e-8."""


class MeasureError(ValueError):
    pass


QUAD_RTOL = 1e-8
DIVERGE_RTOL = 1e-2
_SSS_PROBES = 12


def sphere_area(d):
    """Surface area of the unit sphere in R^d."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def _weight_power(b, d):
    def w(r):
        return np.power(r, b - d)
    return w


def _weight_flat(d):
    def w(r):
        return np.ones_like(r)
    return w


def _weight_gauss(s, d):
    def w(r):
        return np.exp(-0.5 * (r / s) ** 2)
    return w


# name -> (factory(params, d), required parameter names)
WEIGHTS = {
    "r^(b-d)": (lambda p, d: _weight_power(float(p["b"]), d), ("b",)),
    "flat": (lambda p, d: _weight_flat(d), ()),
    "gauss": (lambda p, d: _weight_gauss(float(p["s"]), d), ("s",)),
}


class SpectralMeasure:
    """Symmetric spectral measure of the noise.

    Use :meth:`atomic` or :meth:`radial` to construct. Instances are
    immutable by convention; :meth:`scaled` returns a new measure.

    Attributes
    ----------
    kind : str
        ``"atomic"`` or ``"radial"``.
    dim : int
    freqs, masses : ndarray
        Atomic case only; ``freqs`` has shape ``(m, dim)``.
    weight, r_min, r_max, n_quad : radial case only.
    """

    def __init__(self, kind, dim, **kw):
        self.kind = kind
        self.dim = int(dim)
        if self.dim < 1:
            raise MeasureError("dim must be positive")
        if kind == "atomic":
            self.freqs = kw["freqs"]
            self.masses = kw["masses"]
            self.freqs.setflags(write=False)
            self.masses.setflags(write=False)
        elif kind == "radial":
            self.weight = kw["weight"]
            self.r_min = float(kw["r_min"])
            self.r_max = float(kw["r_max"])
            self.n_quad = int(kw["n_quad"])
            self.weight_name = kw.get("weight_name")
            self.weight_params = dict(kw.get("weight_params") or {})
            self.scale = float(kw.get("scale", 1.0))
            if not (0 < self.r_min < self.r_max) or not math.isfinite(self.r_max):
                raise MeasureError("need 0 < r_min < r_max < inf")
            if self.n_quad < 1:
                raise MeasureError("n_quad must be positive")
        else:
            raise MeasureError(f"unknown measure kind {kind!r}")

    # -- construction -----------------------------------------------------
    @classmethod
    def atomic(cls, freqs, masses, dim=None, allow_zero=False):
        """Atomic measure, symmetrized as ``(mu + mu(-.)) / 2``.

        Atoms listed twice are merged. An already symmetric list comes back
        unchanged (same order, same masses).
        """
        freqs = np.atleast_2d(np.asarray(freqs, dtype=float))
        masses = np.atleast_1d(np.asarray(masses, dtype=float))
        if freqs.size == 0:
            freqs = np.zeros((0, dim or 1))
        if dim is None:
            dim = freqs.shape[1]
        if freqs.shape[1] != dim or freqs.shape[0] != masses.shape[0]:
            raise MeasureError("freqs must be (m, dim) and masses (m,)")
        if not (np.all(np.isfinite(freqs)) and np.all(np.isfinite(masses))):
            raise MeasureError("non-finite atom")
        if np.any(masses < 0):
            raise MeasureError("atom masses must be nonnegative")
        if np.any(np.all(freqs == 0, axis=1)):
            raise MeasureError("atom at the origin is not allowed")

        table = {}
        order = []
        for xi, a in zip(freqs, masses):
            key = tuple(xi.tolist())
            if key in table:
                table[key] += a
            else:
                table[key] = a
                order.append(key)
        for key in list(order):
            neg = tuple((-np.asarray(key)).tolist())
            if neg not in table:
                table[neg] = 0.0
                order.append(neg)
        sym = {k: 0.5 * (table[k] + table[tuple((-np.asarray(k)).tolist())]) for k in order}
        keep = [k for k in order if sym[k] > 0]
        out_f = np.array(keep, dtype=float).reshape(len(keep), dim)
        out_m = np.array([sym[k] for k in keep], dtype=float)
        if out_m.sum() <= 0 and not allow_zero:
            raise MeasureError("total mass must be positive")
        return cls("atomic", dim, freqs=out_f, masses=out_m)

    @classmethod
    def radial(cls, weight, r_min, r_max, n_quad, dim, params=None):
        """Radial density ``w(|xi|)`` on ``r_min <= |xi| <= r_max``.

        ``weight`` is either a registered name (see ``WEIGHTS``) with its
        ``params`` or a callable ``r -> w(r)`` (not serializable).
        """
        name = None
        if isinstance(weight, str):
            if weight not in WEIGHTS:
                raise MeasureError(f"unknown weight {weight!r}; known: {sorted(WEIGHTS)}")
            factory, needed = WEIGHTS[weight]
            params = dict(params or {})
            missing = [p for p in needed if p not in params]
            if missing:
                raise MeasureError(f"weight {weight!r} needs parameters {missing}")
            name, weight = weight, factory(params, dim)
        mu = cls("radial", dim, weight=weight, r_min=r_min, r_max=r_max, n_quad=n_quad,
                 weight_name=name, weight_params=params)
        if not mu.total_mass() > 0:
            raise MeasureError("total mass must be positive")
        return mu

    @classmethod
    def unit_atoms(cls, dim=3, mass=1.0, radius=1.0):
        """Atoms at ``+-radius * e_i`` sharing total mass ``mass`` equally."""
        eye = radius * np.eye(dim)
        freqs = np.concatenate([eye, -eye])
        return cls.atomic(freqs, np.full(2 * dim, mass / (2 * dim)), dim=dim,
                          allow_zero=(mass == 0))

    def scaled(self, factor):
        """Measure multiplied by ``factor >= 0``."""
        if factor < 0:
            raise MeasureError("scale factor must be nonnegative")
        if self.kind == "atomic":
            m = self.masses * factor
            return SpectralMeasure("atomic", self.dim, freqs=self.freqs.copy(), masses=m)
        return SpectralMeasure("radial", self.dim, weight=self.weight, r_min=self.r_min,
                               r_max=self.r_max, n_quad=self.n_quad,
                               weight_name=self.weight_name,
                               weight_params=self.weight_params,
                               scale=self.scale * factor)

    def with_total_mass(self, mass):
        return self.scaled(mass / self.total_mass())

    # -- basic quantities ---------------------------------------------------
    def density(self, r):
        """Radial density including the scale factor (zero off the support)."""
        r = np.asarray(r, dtype=float)
        inside = (r >= self.r_min) & (r <= self.r_max)
        out = np.zeros_like(r)
        if np.any(inside):
            out[inside] = self.scale * self.weight(r[inside])
        return out

    def total_mass(self):
        if self.kind == "atomic":
            return float(self.masses.sum())
        return radial_integral(self, lambda r: np.ones_like(r), check=False)

    def is_symmetric(self):
        if self.kind == "radial":
            return True
        lookup = {tuple(f.tolist()): a for f, a in zip(self.freqs, self.masses)}
        return all(lookup.get(tuple((-f).tolist())) == a for f, a in zip(self.freqs, self.masses))

    # -- serialization ------------------------------------------------------
    def to_dict(self):
        if self.kind == "atomic":
            return {"dim": self.dim, "kind": "atomic",
                    "atoms": [{"xi": f.tolist(), "mass": float(a)}
                              for f, a in zip(self.freqs, self.masses)]}
        if self.weight_name is None:
            raise MeasureError("radial measure with a custom callable weight is not serializable")
        d = {"dim": self.dim, "kind": "radial", "beta_weight": self.weight_name,
             "r_min": self.r_min, "r_max": self.r_max, "n_quad": self.n_quad}
        d.update(self.weight_params)
        if self.scale != 1.0:
            d["scale"] = self.scale
        return d

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        kind = doc.get("kind")
        if kind == "atomic":
            atoms = doc.get("atoms", [])
            dim = doc.get("dim", len(atoms[0]["xi"]) if atoms else None)
            if dim is None:
                raise MeasureError("atomic measure needs 'dim' or at least one atom")
            freqs = [a["xi"] for a in atoms]
            masses = [a["mass"] for a in atoms]
            for a in atoms:
                if len(a["xi"]) != dim:
                    raise MeasureError(f"atom {a['xi']} has wrong dimension (dim={dim})")
            if doc.get("scale") is not None:
                masses = [m * float(doc["scale"]) for m in masses]
            return cls.atomic(np.array(freqs, dtype=float).reshape(-1, dim), masses, dim=dim)
        if kind == "radial":
            name = doc.get("beta_weight")
            if name not in WEIGHTS:
                raise MeasureError(f"unknown weight {name!r}")
            params = {p: doc[p] for p in WEIGHTS[name][1] if p in doc}
            mu = cls.radial(name, doc["r_min"], doc["r_max"], doc.get("n_quad", 4096),
                            doc.get("dim", 3), params=params)
            if doc.get("scale") is not None:
                mu = mu.scaled(float(doc["scale"]))
            return mu
        raise MeasureError(f"unknown measure kind {kind!r}")

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def digest(self):
        """Short hash of the canonical JSON form (used in path headers)."""
        try:
            text = self.to_json()
        except MeasureError:
            text = repr((self.kind, self.dim, id(self.weight)))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def __repr__(self):
        if self.kind == "atomic":
            return f"SpectralMeasure(atomic, dim={self.dim}, atoms={len(self.masses)}, mass={self.total_mass():.6g})"
        return (f"SpectralMeasure(radial, dim={self.dim}, weight={self.weight_name}, "
                f"r=[{self.r_min}, {self.r_max}], n_quad={self.n_quad})")


# ---------------------------------------------------------------------------
# radial quadrature

def _midpoint(mu, f, n, a, b):
    h = (b - a) / n
    r = a + (np.arange(n) + 0.5) * h
    vals = f(r) * mu.scale * mu.weight(r) * r ** (mu.dim - 1)
    return float(np.sum(vals) * h * sphere_area(mu.dim))


def radial_integral(mu, f, check=True, n=None):
    """``int f(|xi|) mu(d xi)`` for a radial measure by the midpoint rule.

    With ``check`` the node count is doubled: a relative change above 1e-2
    is treated as divergence (returns ``inf``), above 1e-8 emits a
    :class:`QuadratureWarning`. The checked value is the Richardson
    combination ``(4 v(2n) - v(n)) / 3``, which removes the ``h^2`` term of
    the midpoint error; without ``check`` the plain ``n``-node value is
    returned.
    """
    n = mu.n_quad if n is None else n
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        v1 = _midpoint(mu, f, n, mu.r_min, mu.r_max)
        if not check:
            return v1
        v2 = _midpoint(mu, f, 2 * n, mu.r_min, mu.r_max)
    if not (math.isfinite(v1) and math.isfinite(v2)):
        return math.inf
    rel = abs(v2 - v1) / max(abs(v2), 1e-300)
    if rel > DIVERGE_RTOL:
        return math.inf
    if rel > QUAD_RTOL:
        warnings.warn(f"radial quadrature moved by {rel:.2e} on doubling n_quad={n}",
                      QuadratureWarning, stacklevel=3)
    return (4.0 * v2 - v1) / 3.0


def _tail_finite(mu, f):
    """Probe ``int_{r_max}^{inf} f w`` by repeated doubling of the outer radius.

    Finite if some doubling adds at most 1% to the running integral.
    """
    total = radial_integral(mu, f, check=False)
    if not math.isfinite(total):
        return False, total
    lo = mu.r_max
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for _ in range(_SSS_PROBES):
            piece = _midpoint(mu, f, mu.n_quad, lo, 2 * lo)
            if not math.isfinite(piece):
                return False, math.inf
            if abs(piece) <= DIVERGE_RTOL * abs(total):
                return True, total
            total += piece
            lo *= 2
    return False, total


# ---------------------------------------------------------------------------
# integrals and conditions

def _sq_norms(mu):
    return np.sum(mu.freqs ** 2, axis=1)


def dalang_integral(mu):
    """``int mu(d xi) / (1 + |xi|^2)``."""
    if mu.kind == "atomic":
        return float(np.sum(mu.masses / (1.0 + _sq_norms(mu))))
    return radial_integral(mu, lambda r: 1.0 / (1.0 + r * r))


def inverse_square_integral(mu):
    """``int mu(d xi) / |xi|^2`` (twice the energy)."""
    if mu.kind == "atomic":
        return float(np.sum(mu.masses / _sq_norms(mu)))
    return radial_integral(mu, lambda r: 1.0 / (r * r))


def energy(mu):
    """Energy constant ``(1/2) int mu(d xi) / |xi|^2``; ``inf`` if divergent."""
    return 0.5 * inverse_square_integral(mu)


def sss_integral(mu, beta):
    """``int mu(d xi) / (1 + |xi|^2)^beta`` and whether it is finite on R^d."""
    f = lambda r: (1.0 + r * r) ** (-beta)  # noqa: E731
    if mu.kind == "atomic":
        return float(np.sum(mu.masses * (1.0 + _sq_norms(mu)) ** (-beta))), True
    finite, value = _tail_finite(mu, f)
    if finite:
        value = radial_integral(mu, f)
        finite = math.isfinite(value)
    return value, finite


@dataclass
class ConditionReport:
    """Noise-condition summary for a measure and a Lipschitz constant.

    ``extra`` maps a condition name to ``(threshold, value, ok)``.
    """

    dalang_integral: float
    energy: float
    weak_noise_ok: bool
    lip_sigma: float
    margin: float
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "dalang_integral": self.dalang_integral,
            "energy": self.energy,
            "weak_noise_ok": self.weak_noise_ok,
            "lip_sigma": self.lip_sigma,
            "margin": self.margin,
            "extra": {k: {"threshold": t, "value": v, "ok": ok}
                      for k, (t, v, ok) in self.extra.items()},
        }


_REL_TOL = 1e-12


def _below(value, threshold):
    """Strict ``value < threshold``; ties within rounding count as violations."""
    return value < threshold * (1.0 - _REL_TOL)


def check_conditions(mu, lip_sigma, beta=None, k=None):
    """Evaluate the weak-noise condition and, optionally, SSS/Hölder/moment/ergodic.

    Parameters
    ----------
    mu : SpectralMeasure
    lip_sigma : float
        Declared Lipschitz constant of the nonlinearity (never estimated).
    beta : float in (0, 1), optional
        Enables ``sss`` and ``holder`` entries.
    k : int >= 1, optional
        Enables ``moment`` and ``ergodic`` entries.
    """
    lip = float(lip_sigma)
    if lip < 0:
        raise ValueError("lip_sigma must be nonnegative")
    d = mu.dim
    dal = dalang_integral(mu)
    inv2 = inverse_square_integral(mu)
    en = 0.5 * inv2
    finite = math.isfinite(inv2)
    lip2 = lip * lip
    if lip == 0:
        v = 0.0 if finite else math.inf
        margin = 1.0 if finite else -math.inf
        wn_ok = finite
    else:
        v = lip2 * inv2
        margin = 1.0 - 0.5 * v
        wn_ok = _below(0.5 * v, 1.0)
    extra = {"weak_noise": (1.0, 0.5 * v, wn_ok)}
    if beta is not None:
        if not 0 < beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        sval, sfin = sss_integral(mu, beta)
        extra[f"sss(beta={beta:g})"] = (math.inf, sval, sfin)
        thr = (1.0 - beta) / (4.0 * d)
        extra[f"holder(beta={beta:g})"] = (thr, v, _below(v, thr))
    if k is not None:
        if int(k) != k or k < 1:
            raise ValueError("k must be a positive integer")
        thr = 1.0 / (4.0 * k)
        extra[f"moment(k={int(k)})"] = (thr, v, _below(v, thr))
        thr = 1.0 / (2.0 ** ((d + 2) / 2.0) * 8.0 * k)
        extra[f"ergodic(k={int(k)})"] = (thr, 0.5 * v, _below(0.5 * v, thr))
    return ConditionReport(dal, en, bool(wn_ok), lip, margin, extra)


# ---------------------------------------------------------------------------
# covariance kernels

def _angular_average(d, s):
    """Average of ``cos(xi . x)`` over the sphere ``|xi| = r`` with ``s = r|x|``."""
    s = np.asarray(s, dtype=float)
    if d == 1:
        return np.cos(s)
    nu = d / 2.0 - 1.0
    out = np.ones_like(s)
    nz = s > 1e-12
    sn = s[nz]
    out[nz] = math.gamma(d / 2.0) * (2.0 / sn) ** nu * special.jv(nu, sn)
    return out


def smoothed_kernel(mu, s, x):
    """``int exp(-2 s |xi|^2) cos(xi . x) mu(d xi)``; ``s = 0`` gives the covariance."""
    if s < 0:
        raise ValueError("s must be nonnegative")
    x = np.asarray(x, dtype=float).reshape(mu.dim)
    if mu.kind == "atomic":
        return float(np.sum(mu.masses * np.exp(-2.0 * s * _sq_norms(mu)) * np.cos(mu.freqs @ x)))
    rx = float(np.linalg.norm(x))
    d = mu.dim
    return radial_integral(mu, lambda r: np.exp(-2.0 * s * r * r) * _angular_average(d, r * rx),
                           check=False)


def lambda_at(mu, x):
    """Noise covariance ``Lambda(x) = int cos(xi . x) mu(d xi)``."""
    return smoothed_kernel(mu, 0.0, x)


def heat_kernel(t, x):
    """Heat kernel ``(4 pi t)^{-d/2} exp(-|x|^2 / (4t))``; ``d = len(x)``."""
    if t <= 0:
        raise ValueError("t must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = x.shape[-1]
    return (4.0 * math.pi * t) ** (-d / 2.0) * np.exp(-np.sum(x * x, axis=-1) / (4.0 * t))
