"""Command line experiment runner.

Every subcommand reads an optional JSON config, applies flag overrides
(flags win), validates the result against a per-kind schema (unknown keys
are rejected), runs the experiment and writes ``manifest.json``, CSV tables
and ``verdict.json`` into the output directory.

Exit codes: 0 all verdicts pass, 1 some verdict fails, 2 config error,
3 blow-up (the pass condition of ``blowup-demo``).
"""

import argparse
import copy
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np
from scipy.stats import norm

from . import __version__, _kernels
from .grid import Field, FieldEnsemble, TorusGrid, save_checkpoint
from .invariant import (InvariantSampleSpec, annealing_table, dual_fixed_point,
                        forward_reverse_check, invariance_check, sample_invariant)
from .noise import PathEnsemble, lattice_modes
from .pam_chaos import chaos_ensemble, chaos_moment_profile, remainder_bound
from .solver import (BlowUpError, ConstantProfile, FieldProfile, SamplerProfile, SpdeProblem,
                     evolve_coupled, evolve_ensemble, sigma_from_dict)
from .spectral import MeasureError, SpectralMeasure, check_conditions, inverse_square_integral
from .stats import (SINGLE_Z, Verdict, compare_covariance, covariance_from_variances,
                    default_lag_set, dual_tail_oracle, gaussianity_test, holder_structure,
                    lln_oracle, lln_test, mean_se, mode_variance, moment_bound_test,
                    singularity_test, stationarity_test, structure_oracle, write_csv,
                    write_verdicts, zscore, annealing_oracle, lag_covariance, lag_vector)

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_BLOWUP = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# schema

_NUM = {"type": "number"}
_INT = {"type": "integer"}
_POS_INT = {"type": "integer", "minimum": 1}
_NUM_LIST = {"type": "array", "items": _NUM}
_INT_LIST = {"type": "array", "items": _INT}
_LAG_LIST = {"type": "array", "items": {"type": "array", "items": _INT}}

_GRID = {"type": "object", "additionalProperties": False,
         "properties": {"dim": _POS_INT, "n": _POS_INT, "length": {"type": "number", "exclusiveMinimum": 0}}}
_SIGMA = {"type": "object", "additionalProperties": False, "required": ["kind"],
          "properties": {"kind": {"enum": ["constant", "linear", "custom"]}, "c0": _NUM,
                         "name": {"type": "string"}, "lip": _NUM, "sigma0": _NUM}}
_MEASURE = {"type": "object"}  # checked by SpectralMeasure.from_dict
_INITIAL = {"type": "object", "additionalProperties": False, "required": ["kind"],
            "properties": {"kind": {"enum": ["constant", "cosine", "sampler"]},
                           "theta": _NUM, "amplitude": _NUM, "axis": _INT, "wave": _INT,
                           "name": {"enum": ["shared_offset", "white"]}, "seed": _INT,
                           "scale": _NUM}}

COMMON = {
    "kind": {"type": "string"},
    "grid": _GRID,
    "measure": _MEASURE,
    "seed": _INT,
    "replicas": _POS_INT,
    "dt": {"type": "number", "exclusiveMinimum": 0},
}

KIND_PROPS = {
    "check-conditions": {"lip": _NUM, "beta": {"type": ["number", "null"]},
                         "k": {"type": ["number", "null"]}},
    "simulate": {"sigma": _SIGMA, "initial": _INITIAL, "coupled_initial": {"oneOf": [_INITIAL, {"type": "null"}]},
                 "horizon": _NUM, "scheme": {"enum": ["ExpEuler", "ExactLinear"]},
                 "monitor_every": _POS_INT, "coupling_ratio": _NUM, "save_fields": {"type": "boolean"}},
    "sample-invariant": {"sigma": _SIGMA, "theta": _NUM, "horizon": {"type": ["number", "null"]},
                         "scheme": {"enum": ["auto", "ExpEuler", "ExactLinear"]},
                         "allow_violation": {"type": "boolean"}, "save_fields": {"type": "boolean"},
                         "extra_horizon": _NUM},
    "dual-cauchy": {"sigma": _SIGMA, "theta": _NUM, "horizons": _INT_LIST,
                    "scheme": {"enum": ["ExpEuler", "ExactLinear"]}},
    "verify-gaussian": {"sigma": _SIGMA, "theta": _NUM, "horizon": _NUM,
                        "lags": {"oneOf": [_LAG_LIST, {"type": "null"}]},
                        "probes": _LAG_LIST, "mass_factor": _NUM},
    "verify-chaos": {"theta": _NUM, "c0": _NUM, "steps": _POS_INT, "orders": {"type": "integer", "minimum": 0},
                     "remainder_horizon": {"type": ["number", "null"]}, "remainder_orders": _POS_INT,
                     "remainder_replicas": _POS_INT},
    "verify-lln": {"sigma": _SIGMA, "theta": _NUM, "horizon": _NUM, "half_widths": _NUM_LIST,
                   "t_list": _NUM_LIST},
    "verify-singularity": {"sigma": _SIGMA, "thetas": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                           "horizon": _NUM, "half_widths": _NUM_LIST, "control_tol": _NUM},
    "verify-stationarity": {"sigma": _SIGMA, "theta": _NUM, "horizon": _NUM, "lags": _LAG_LIST,
                            "translates": _LAG_LIST},
    "holder-scan": {"sigma": _SIGMA, "theta": _NUM, "horizon": _NUM, "offsets": _LAG_LIST,
                    "q": _POS_INT, "beta": {"type": ["number", "null"]}},
    "moment-scan": {"sigma": _SIGMA, "theta": _NUM, "times": _NUM_LIST, "k": _NUM},
    "blowup-demo": {"sigma": _SIGMA, "theta": _NUM, "t_early": _NUM, "t_late": _NUM,
                    "growth_factor": _NUM},
}

KINDS = tuple(KIND_PROPS)


def _unit(mass=1.0):
    return SpectralMeasure.unit_atoms(3, mass).to_dict()


_BASE = {"grid": {"dim": 3, "n": 16, "length": 2 * math.pi}, "seed": 0, "dt": 1e-2}
_CONST = {"kind": "constant", "c0": 1.0}
_PAM = {"kind": "linear", "c0": 1.0}

DEFAULTS = {
    "check-conditions": {"measure": _unit(), "lip": 1.0, "beta": None, "k": None},
    "simulate": {"measure": _unit(), "sigma": _PAM, "initial": {"kind": "constant", "theta": 1.0},
                 "coupled_initial": None, "horizon": 1.0, "scheme": "ExpEuler", "replicas": 32,
                 "monitor_every": 10, "coupling_ratio": 0.05, "save_fields": False},
    "sample-invariant": {"measure": _unit(), "sigma": _CONST, "theta": 0.0, "horizon": 10.0,
                         "scheme": "auto", "replicas": 2000, "allow_violation": False,
                         "save_fields": True, "extra_horizon": 0.0},
    "dual-cauchy": {"measure": _unit(), "sigma": _PAM, "theta": 1.0,
                    "horizons": [2 ** k for k in range(5, 11)], "replicas": 500, "scheme": "ExpEuler"},
    "verify-gaussian": {"measure": _unit(), "sigma": _CONST, "theta": 0.0, "horizon": 10.0,
                        "replicas": 2000, "lags": None, "mass_factor": 1.0,
                        "probes": [[0, 0, 0], [1, 0, 0], [3, 2, 0], [8, 8, 8], [5, 0, 11]]},
    "verify-chaos": {"measure": _unit(), "theta": 1.0, "c0": 1.0, "steps": 64, "orders": 64,
                     "replicas": 50, "remainder_horizon": None, "remainder_orders": 6,
                     "remainder_replicas": 500},
    "verify-lln": {"measure": _unit(), "sigma": _CONST, "theta": 0.0, "horizon": 10.0, "replicas": 2000,
                   "half_widths": [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, math.pi],
                   "t_list": [0.1, 0.25, 0.5, 1.0, 2.0]},
    "verify-singularity": {"measure": _unit(), "sigma": _CONST, "thetas": [0.0, 1.0], "horizon": 10.0,
                           "replicas": 2000, "half_widths": [1.0, math.pi], "control_tol": 0.05},
    "verify-stationarity": {"measure": _unit(), "sigma": _CONST, "theta": 0.0, "horizon": 10.0,
                            "replicas": 2000, "lags": [[0, 0, 0], [1, 0, 0], [2, 1, 0], [4, 0, 0], [0, 3, 1]],
                            "translates": [[0, 0, 0], [3, 5, 7], [8, 8, 8], [15, 1, 2], [2, 2, 2],
                                           [7, 0, 9], [11, 13, 4], [5, 9, 14]]},
    "holder-scan": {"grid": {"dim": 3, "n": 64, "length": 2 * math.pi}, "measure": _unit(),
                    "sigma": _CONST, "theta": 0.0, "horizon": 10.0, "replicas": 200,
                    "offsets": [[1, 0, 0], [2, 0, 0], [4, 0, 0], [8, 0, 0], [16, 0, 0]], "q": 2,
                    "beta": None},
    "moment-scan": {"measure": _unit(), "sigma": _PAM, "theta": 1.0, "replicas": 500,
                    "times": [1.0, 5.0, 10.0, 15.0, 20.0], "k": 2.0},
    "blowup-demo": {"measure": _unit(2.5), "sigma": _PAM, "theta": 1.0, "replicas": 500,
                    "t_early": 1.0, "t_late": 20.0, "growth_factor": 10.0},
}


def schema_for(kind):
    props = dict(COMMON)
    props.update(KIND_PROPS[kind])
    return {"type": "object", "additionalProperties": False, "properties": props}


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "measure":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_path(cfg, dotted, value):
    keys = dotted.split(".")
    cur = cfg
    for k in keys[:-1]:
        if not isinstance(cur.get(k), dict):
            cur[k] = {}
        cur = cur[k]
    cur[keys[-1]] = value


def load_config_file(path):
    """Read a JSON config; a ``manifest.json`` is accepted and unwrapped."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    if "config" in doc and "code_hash" in doc:
        doc = doc["config"]
    return doc


def resolve_config(kind, file_cfg=None, overrides=()):
    """Defaults, then the config file, then ``key=value`` overrides; validated."""
    if kind not in KIND_PROPS:
        raise ConfigError(f"unknown experiment kind {kind!r}")
    cfg = _merge(_merge(_BASE, DEFAULTS[kind]), {"kind": kind})
    if file_cfg:
        if file_cfg.get("kind", kind) != kind:
            raise ConfigError(f"config is for {file_cfg['kind']!r}, not {kind!r}")
        cfg = _merge(cfg, file_cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        key, val = item.split("=", 1)
        _set_path(cfg, key.strip(), _parse_value(val))
    if isinstance(cfg.get("measure"), dict) and "file" in cfg["measure"]:
        try:
            with open(cfg["measure"]["file"]) as fh:
                cfg["measure"] = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"measure file: {e}") from e
    try:
        jsonschema.validate(cfg, schema_for(kind))
    except jsonschema.ValidationError as e:
        loc = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config error at {loc}: {e.message}") from e
    return cfg


# ---------------------------------------------------------------------------
# manifest

def code_hash():
    """sha256 over the package sources (sorted relative paths + contents)."""
    root = Path(__file__).resolve().parent
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.suffix in (".py", ".pyx") and "__pycache__" not in p.parts:
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def write_manifest(out, cfg):
    doc = {"config": cfg, "code_hash": code_hash(), "version": __version__,
           "backend": _kernels.backend_name()}
    with open(out / "manifest.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# building blocks

def _grid(cfg):
    return TorusGrid.from_dict(cfg["grid"])


def _measure(cfg):
    try:
        return SpectralMeasure.from_dict(cfg["measure"])
    except (MeasureError, KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"config error at measure: {e}") from e


def _sigma(cfg, key="sigma"):
    try:
        return sigma_from_dict(cfg[key])
    except (ValueError, TypeError) as e:
        raise ConfigError(f"config error at {key}: {e}") from e


def _initial(grid, d):
    kind = d["kind"]
    if kind == "constant":
        return ConstantProfile(float(d.get("theta", 0.0)))
    if kind == "cosine":
        ax = int(d.get("axis", 0))
        if not 0 <= ax < grid.dim:
            raise ConfigError("config error at initial/axis: out of range")
        w = int(d.get("wave", 1))
        vals = d.get("theta", 0.0) + d.get("amplitude", 1.0) * np.cos(w * grid.fundamental * grid.coords[ax])
        return FieldProfile(Field(grid, vals))
    return SamplerProfile(d.get("name", "shared_offset"), int(d.get("seed", 0)),
                          float(d.get("theta", 0.0)), float(d.get("scale", 1.0)))


def _steps(T, dt):
    return int(round(float(T) / float(dt)))


def _invariant_ensemble(cfg, theta, threads, first_stream=0, allow=False):
    spec = InvariantSampleSpec(theta, cfg.get("horizon"), _grid(cfg), _measure(cfg), _sigma(cfg),
                               cfg["replicas"], cfg["seed"], cfg["dt"],
                               scheme=cfg.get("scheme", "auto"),
                               allow_violation=allow or cfg.get("allow_violation", False),
                               first_stream=first_stream)
    return sample_invariant(spec, threads=threads), spec


def _int_lags(lags):
    return [tuple(int(x) for x in lag) for lag in lags]


# ---------------------------------------------------------------------------
# experiments; each returns a list of Verdicts

def run_check_conditions(cfg, out, threads):
    mu = _measure(cfg)
    rep = check_conditions(mu, cfg["lip"], beta=cfg["beta"], k=cfg["k"])
    rows = [("dalang", math.inf, rep.dalang_integral, math.isfinite(rep.dalang_integral)),
            ("energy", math.inf, rep.energy, math.isfinite(rep.energy))]
    for name, (thr, val, ok) in rep.extra.items():
        rows.append((name, thr, val, ok))
    write_csv(out / "conditions.csv", ["condition", "threshold", "value", "ok"],
              [(n, float(t), float(v), bool(o)) for n, t, v, o in rows])
    verdicts = [Verdict("weak_noise", "margin", rep.margin, 0.0, 0.0, rep.weak_noise_ok,
                        {"energy": rep.energy, "lip": cfg["lip"]})]
    for name, (thr, val, ok) in rep.extra.items():
        if name != "weak_noise":
            verdicts.append(Verdict(name, "value", val, 0.0, thr, ok))
    return verdicts


def run_simulate(cfg, out, threads):
    grid, mu, dt = _grid(cfg), _measure(cfg), cfg["dt"]
    steps = _steps(cfg["horizon"], dt)
    problem = SpdeProblem(grid, mu, _sigma(cfg), _initial(grid, cfg["initial"]))
    paths = PathEnsemble.replicas(grid, mu, dt, cfg["seed"], cfg["replicas"], steps)
    every = cfg["monitor_every"]
    snaps = sorted(set(range(0, steps + 1, every)) | {steps})
    verdicts = []
    if cfg.get("coupled_initial"):
        other = problem.with_initial(_initial(grid, cfg["coupled_initial"]))
        res = evolve_coupled(problem, other, paths, steps, cfg["scheme"], threads=threads,
                             trace_every=every)
        rows = [(int(s), s * dt, "l2_distance_sq", float(m), float(e))
                for s, m, e in zip(res.trace_steps, res.trace_mean, res.trace_se)]
        rows += [(int(s), s * dt, "sup_l2_distance_sq", float(m), "")
                 for s, m in zip(res.trace_steps, res.trace_sup)]
        ratio = float(res.trace_sup[-1] / res.trace_sup[0]) if res.trace_sup[0] > 0 else 0.0
        verdicts.append(Verdict("coupling", "sup_distance_ratio", ratio, 0.0, cfg["coupling_ratio"],
                                ratio < cfg["coupling_ratio"]))
        write_csv(out / "coupling.csv", ["step", "time", "statistic", "value", "stderr"], rows)
        final = res.u
    else:
        def reducer(v):
            flat = v.reshape(len(v), -1)
            return np.stack([flat.mean(axis=1), (flat ** 2).mean(axis=1)], axis=1)

        res = evolve_ensemble(problem, paths, steps, cfg["scheme"], threads=threads,
                              snapshot_steps=snaps, reducer=reducer)
        rows = []
        for s in snaps:
            m, se = mean_se(res.snapshots[s])
            rows.append((s, s * dt, "mean", float(m[0]), float(se[0])))
            rows.append((s, s * dt, "second_moment", float(m[1]), float(se[1])))
        write_csv(out / "trace.csv", ["step", "time", "statistic", "value", "stderr"], rows)
        final = res.ensemble
        verdicts.append(Verdict("simulate", "finite", 1.0, 0.0, 1.0, True))
    if cfg["save_fields"]:
        save_checkpoint(out / "fields.bin", grid, final.values, steps * dt, cfg["seed"])
    return verdicts


def run_sample_invariant(cfg, out, threads):
    ens, spec = _invariant_ensemble(cfg, cfg["theta"], threads)
    grid = ens.grid
    R = len(ens)
    flat = ens.values.reshape(R, -1)
    m, se = mean_se(flat.mean(axis=1))
    pm, pse = mean_se(flat)
    pz = np.array([zscore(float(a), float(b), cfg["theta"]) for a, b in zip(pm, pse)])
    family = float(norm.isf(0.025 / grid.size))
    lags = default_lag_set(grid)
    rows = []
    for lag in lags:
        est, e = lag_covariance(ens, lag)
        rows.append((str(tuple(lag)), float(est), float(e)))
    write_csv(out / "covariance.csv", ["lag", "estimate", "se"], rows)
    if cfg["save_fields"]:
        save_checkpoint(out / "samples.bin", grid, ens.values, ens.meta["horizon"], cfg["seed"],
                        {"theta": cfg["theta"], "steps": ens.meta["steps"]})
    verdicts = [
        Verdict("mean", "grid_mean", float(m), float(se), 3.0,
                abs(zscore(float(m), float(se), cfg["theta"])) <= 3.0),
        Verdict("pointwise_mean", "max_abs_z", float(np.max(np.abs(pz))), 0.0, family,
                float(np.max(np.abs(pz))) <= family),
    ]
    if cfg["extra_horizon"] > 0:
        rep = invariance_check(ens, spec.problem, _steps(cfg["extra_horizon"], cfg["dt"]),
                               cfg["seed"] + 1, cfg["dt"], threads=threads)
        write_csv(out / "invariance.csv", ["statistic", "before", "after", "z"], rep.rows)
        verdicts.append(Verdict("invariance", "max_abs_z", rep.max_z, 0.0, SINGLE_Z, rep.passed))
    return verdicts


def run_dual_cauchy(cfg, out, threads):
    grid, mu, dt = _grid(cfg), _measure(cfg), cfg["dt"]
    sigma = _sigma(cfg)
    hs = [int(h) for h in cfg["horizons"]]
    if any(b <= a for a, b in zip(hs, hs[1:])):
        raise ConfigError("config error at horizons: must be increasing")
    problem = SpdeProblem(grid, mu, sigma, ConstantProfile(cfg["theta"]))
    paths = PathEnsemble.replicas(grid, mu, dt, cfg["seed"], cfg["replicas"], hs[-1])
    trace, _ = dual_fixed_point(cfg["theta"], problem, paths, hs, cfg["scheme"], threads=threads)
    write_csv(out / "cauchy.csv", ["m_from", "m_to", "distance", "se", "sup_distance", "point_var"],
              trace.rows())
    fr = forward_reverse_check(cfg["theta"], problem, paths, hs, cfg["scheme"], threads=threads)
    write_csv(out / "forward_reverse.csv", ["horizon", "statistic", "forward", "reversed", "z"], fr)
    frz = max(abs(r[4]) for r in fr)
    d = trace.pair_distances
    verdicts = [
        Verdict("dual_cauchy", "decreasing_2se", d[-1] if d else 0.0, trace.pair_se[-1] if d else 0.0,
                2.0, trace.decreasing(2.0), {"distances": d, "se": trace.pair_se}),
        Verdict("forward_reverse", "max_abs_z", frz, 0.0, 3.0, frz <= 3.0),
    ]
    if sigma.kind == "constant":
        modes = paths.modes
        zs = []
        for (a, b), m, s in zip(zip(hs, hs[1:]), d, trace.pair_se):
            zs.append(zscore(m, s, float(np.sum(dual_tail_oracle(modes, sigma.c0, dt, a, b)))))
        mz = max(abs(z) for z in zs) if zs else 0.0
        verdicts.append(Verdict("dual_tail_oracle", "max_abs_z", mz, 0.0, 3.0, mz <= 3.0))
    return verdicts


def run_verify_gaussian(cfg, out, threads):
    ens, spec = _invariant_ensemble(cfg, cfg["theta"], threads)
    grid = ens.grid
    modes = lattice_modes(grid, _measure(cfg))
    c0 = _sigma(cfg).c0
    if _sigma(cfg).kind != "constant":
        raise ConfigError("config error at sigma: verify-gaussian needs constant sigma")
    T = ens.meta["horizon"]
    v = mode_variance(modes, c0, T, ens.meta["scheme"], cfg["dt"]) * cfg["mass_factor"]
    lags = cfg["lags"] or default_lag_set(grid)
    cov = compare_covariance(ens, lambda h: covariance_from_variances(modes, v, h), _int_lags(lags))
    write_csv(out / "covariance.csv", ["lag", "estimate", "se", "oracle", "z"],
              [(str(r[0]),) + tuple(r[1:]) for r in cov.rows])
    gs = gaussianity_test(ens, cfg["probes"])
    write_csv(out / "gaussianity.csv", ["probe", "statistic", "value", "se", "z"],
              [(str(r[0]),) + tuple(r[1:]) for r in gs.rows])
    return [Verdict("covariance", "max_abs_z", cov.max_abs_z, 0.0, SINGLE_Z, cov.passed),
            Verdict("gaussianity", "max_abs_z", gs.max_abs_z, 0.0, SINGLE_Z, gs.passed)]


def run_verify_chaos(cfg, out, threads):
    grid, mu, dt = _grid(cfg), _measure(cfg), cfg["dt"]
    theta, c0 = cfg["theta"], cfg["c0"]
    M, N = cfg["steps"], cfg["orders"]
    paths = PathEnsemble.replicas(grid, mu, dt, cfg["seed"], cfg["replicas"], M)
    res = chaos_ensemble(theta, c0, grid, mu, paths, M, N, with_solution=True, threads=threads)
    gap = res.identity_gap()
    prof = chaos_moment_profile(res.orders)
    write_csv(out / "moments.csv", ["order", "mean", "se", "sup"],
              [(m, float(prof.mean[m]), float(prof.se[m]), float(prof.sup[m])) for m in range(N + 1)])
    write_csv(out / "identity.csv", ["statistic", "value"], [("identity_gap", gap)])
    ok = gap <= 1e-9 if N >= M else True
    verdicts = [Verdict("chaos_identity", "max_rel_gap", gap, 0.0, 1e-9, ok, {"orders": N, "steps": M})]
    if cfg["remainder_horizon"]:
        verdicts += _remainder(cfg, out, threads)
    return verdicts


def _remainder(cfg, out, threads):
    grid, mu, dt = _grid(cfg), _measure(cfg), cfg["dt"]
    theta, c0 = cfg["theta"], cfg["c0"]
    M = _steps(cfg["remainder_horizon"], dt)
    n_max = cfg["remainder_orders"]
    paths = PathEnsemble.replicas(grid, mu, dt, cfg["seed"] + 1, cfg["remainder_replicas"], M)
    res = chaos_ensemble(theta, c0, grid, mu, paths, M, n_max, with_solution=True, threads=threads)
    problem = SpdeProblem(grid, mu, _sigma({"sigma": {"kind": "linear", "c0": c0}}), ConstantProfile(theta))
    snaps = sorted(set(range(0, M + 1, max(1, M // 10))) | {M})
    er = evolve_ensemble(problem, paths, M, threads=threads, snapshot_steps=snaps,
                         reducer=lambda v: (v ** 2).reshape(len(v), -1))
    C = max(float(er.snapshots[s].mean(axis=0).max()) for s in snaps)
    I = inverse_square_integral(mu)
    rows, ok = [], True
    for n in range(1, n_max + 1):
        rem = float(((res.solution - res.partial_sum(n)) ** 2).mean(axis=0).max())
        b = remainder_bound(n, c0, I, C)
        rows.append((n, rem, b, rem <= b))
        ok &= rem <= b
    write_csv(out / "remainder.csv", ["n", "measured_sup", "bound", "below"], rows)
    worst = max(r[1] / r[2] if r[2] > 0 else math.inf for r in rows)
    return [Verdict("remainder_bound", "max_measured_over_bound", worst, 0.0, 1.0, ok,
                    {"moment_const": C, "inverse_square_integral": I})]


def run_verify_lln(cfg, out, threads):
    ens, _ = _invariant_ensemble(cfg, cfg["theta"], threads)
    grid = ens.grid
    modes = lattice_modes(grid, _measure(cfg))
    sigma = _sigma(cfg)
    verdicts = []
    hw = cfg["half_widths"]
    oracle = None
    if sigma.kind == "constant":
        v = mode_variance(modes, sigma.c0, ens.meta["horizon"], ens.meta["scheme"], cfg["dt"])
        oracle = lambda R: lln_oracle(grid, modes, v, R)  # noqa: E731
    lt = lln_test(ens, cfg["theta"], hw, oracle)
    write_csv(out / "lln.csv", ["half_width", "value", "se", "oracle", "z"],
              [tuple("" if x is None else x for x in r) for r in lt.rows])
    verdicts.append(Verdict("lln", "decay_ratio", lt.decay_ratio, 0.0, 0.5, lt.passed,
                            {"decreasing": lt.decreasing, "oracle_ok": lt.oracle_ok}))
    at = annealing_table(ens, cfg["t_list"])
    sups = [r[1] for r in at]
    mono = all(b <= a * (1 + 1e-12) for a, b in zip(sups, sups[1:]))
    rows = []
    aok = mono
    for t, sup, avg, se in at:
        o = annealing_oracle(modes, v, t) if oracle else None
        z = zscore(avg, se, o) if oracle else None
        if z is not None and abs(z) > 3.0:
            aok = False
        rows.append((t, sup, avg, se, "" if o is None else o, "" if z is None else z))
    write_csv(out / "annealing.csv", ["t", "sup_var", "avg_var", "se", "oracle", "z"], rows)
    verdicts.append(Verdict("annealing", "monotone_and_oracle", sups[-1], 0.0, 3.0, aok))
    # negative control: spatially constant random offsets are not annealed
    ctrl = SamplerProfile("shared_offset", cfg["seed"], cfg["theta"], 1.0)
    cvals = ctrl.values(grid, np.arange(len(ens)))
    ct = lln_test(FieldEnsemble(grid, cvals), cfg["theta"], hw)
    write_csv(out / "lln_control.csv", ["half_width", "value", "se"], [r[:3] for r in ct.rows])
    verdicts.append(Verdict("lln_negative_control", "control_fails", ct.decay_ratio, 0.0, 0.5,
                            not ct.passed))
    return verdicts


def run_verify_singularity(cfg, out, threads):
    t1, t2 = cfg["thetas"]
    e1, _ = _invariant_ensemble(cfg, t1, threads)
    e2, _ = _invariant_ensemble(cfg, t2, threads, first_stream=cfg["replicas"])
    rep = singularity_test(e1, e2, cfg["half_widths"], t1, t2)
    ctrl = singularity_test(e1, FieldEnsemble(e1.grid, e2.values - t2 + t1), cfg["half_widths"], t1, t1)
    write_csv(out / "singularity.csv", ["half_width", "overlap", "control_overlap"],
              [(a[0], a[1], b[1]) for a, b in zip(rep.rows, ctrl.rows)])
    cok = abs(ctrl.overlap - 0.5) <= cfg["control_tol"]
    return [Verdict("singularity", "overlap", rep.overlap, 0.0, 0.0, rep.passed),
            Verdict("singularity_control", "overlap", ctrl.overlap, 0.0, cfg["control_tol"], cok)]


def run_verify_stationarity(cfg, out, threads):
    ens, _ = _invariant_ensemble(cfg, cfg["theta"], threads)
    rep = stationarity_test(ens, cfg["lags"], cfg["translates"])
    write_csv(out / "stationarity.csv", ["statistic", "value"],
              [("max_z", rep.max_z), ("worst", str(rep.worst))])
    return [Verdict("stationarity", "max_pairwise_z", rep.max_z, 0.0, SINGLE_Z, rep.passed,
                    {"worst": str(rep.worst)})]


def run_holder_scan(cfg, out, threads):
    ens, _ = _invariant_ensemble(cfg, cfg["theta"], threads)
    grid = ens.grid
    try:
        rep = holder_structure(ens, cfg["offsets"], cfg["q"])
    except ValueError as e:
        raise ConfigError(f"config error at offsets: {e}") from e
    sigma = _sigma(cfg)
    oracle = [None] * len(rep.offsets)
    verdicts = []
    if sigma.kind == "constant" and cfg["q"] == 2:
        modes = lattice_modes(grid, _measure(cfg))
        v = mode_variance(modes, sigma.c0, ens.meta["horizon"], ens.meta["scheme"], cfg["dt"])
        oracle = [structure_oracle(modes, v, lag_vector(grid, h)) for h in cfg["offsets"]]
        zs = [zscore(s, e, o) for s, e, o in zip(rep.s_q, rep.se, oracle)]
        mz = max(abs(z) for z in zs)
        verdicts.append(Verdict("structure_oracle", "max_abs_z", mz, 0.0, 3.0, mz <= 3.0))
    write_csv(out / "structure.csv", ["h", "s_q", "se", "oracle"],
              [(h, s, e, "" if o is None else o) for h, s, e, o in zip(rep.offsets, rep.s_q, rep.se, oracle)])
    write_csv(out / "fit.csv", ["statistic", "value"],
              [("slope", rep.slope), ("intercept", rep.intercept), ("residual", rep.residual)])
    if cfg["beta"] is not None:
        verdicts.append(Verdict("holder_consistency", "slope_over_q", rep.slope / cfg["q"], 0.0,
                                (1 - cfg["beta"]) / 2 - 0.05, rep.consistent(cfg["beta"], cfg["q"])))
    if not verdicts:
        verdicts.append(Verdict("holder_fit", "slope", rep.slope, 0.0, 0.0, not rep.degenerate))
    return verdicts


def run_moment_scan(cfg, out, threads):
    grid, mu, dt = _grid(cfg), _measure(cfg), cfg["dt"]
    sigma = _sigma(cfg)
    k = cfg["k"]
    times = sorted(float(t) for t in cfg["times"])
    steps = [_steps(t, dt) for t in times]
    problem = SpdeProblem(grid, mu, sigma, ConstantProfile(cfg["theta"]))
    paths = PathEnsemble.replicas(grid, mu, dt, cfg["seed"], cfg["replicas"], steps[-1])

    def reducer(v):
        a = np.abs(v.reshape(len(v), -1)) ** k
        return a

    res = evolve_ensemble(problem, paths, steps[-1], threads=threads, snapshot_steps=steps,
                          reducer=reducer)
    data = {t: (res.snapshots[s].mean(axis=1), float(res.snapshots[s].mean(axis=0).max()))
            for t, s in zip(times, steps)}
    rep = check_conditions(mu, sigma.lip, k=k)
    mr = moment_bound_test(data, k, rep.margin)
    write_csv(out / "moments.csv", ["time", "moment", "se", "sup"], mr.rows)
    return [Verdict("moment_bound", "no_rise_2se", mr.max_moment, 0.0, 2.0, mr.passed,
                    {"margin": rep.margin})]


def run_blowup_demo(cfg, out, threads):
    grid, mu, dt = _grid(cfg), _measure(cfg), cfg["dt"]
    problem = SpdeProblem(grid, mu, _sigma(cfg), ConstantProfile(cfg["theta"]))
    s1, s2 = _steps(cfg["t_early"], dt), _steps(cfg["t_late"], dt)
    paths = PathEnsemble.replicas(grid, mu, dt, cfg["seed"], cfg["replicas"], s2)
    res = evolve_ensemble(problem, paths, s2, threads=threads, snapshot_steps=[s1, s2],
                          reducer=lambda v: (v ** 2).reshape(len(v), -1).mean(axis=1))
    m1, e1 = mean_se(res.snapshots[s1])
    m2, e2 = mean_se(res.snapshots[s2])
    write_csv(out / "growth.csv", ["step", "time", "statistic", "value", "stderr"],
              [(s1, s1 * dt, "second_moment", float(m1), float(e1)),
               (s2, s2 * dt, "second_moment", float(m2), float(e2))])
    ratio = float(m2 / m1)
    return [Verdict("blowup", "growth_ratio", ratio, 0.0, cfg["growth_factor"],
                    ratio >= cfg["growth_factor"])]


RUNNERS = {
    "check-conditions": run_check_conditions,
    "simulate": run_simulate,
    "sample-invariant": run_sample_invariant,
    "dual-cauchy": run_dual_cauchy,
    "verify-gaussian": run_verify_gaussian,
    "verify-chaos": run_verify_chaos,
    "verify-lln": run_verify_lln,
    "verify-singularity": run_verify_singularity,
    "verify-stationarity": run_verify_stationarity,
    "holder-scan": run_holder_scan,
    "moment-scan": run_moment_scan,
    "blowup-demo": run_blowup_demo,
}


# ---------------------------------------------------------------------------
# entry point

# convenience flags -> config keys
_SHORTCUTS = {
    "theta": ("theta", float), "T": ("horizon", float), "orders": ("orders", int),
    "steps": ("steps", int), "k": ("k", float), "beta": ("beta", float), "lip": ("lip", float),
}


def build_parser():
    ap = argparse.ArgumentParser(prog="shelab", description="Stochastic heat equation experiments.")
    sub = ap.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", help="JSON config (a manifest.json also works)")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out", default=os.path.join("runs", kind))
        p.add_argument("--replicas", type=int)
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="set a config key (dotted paths allowed, values parsed as JSON)")
        for flag, (key, typ) in _SHORTCUTS.items():
            if key in KIND_PROPS[kind]:
                p.add_argument(f"--{flag}", type=typ, dest=f"short_{key}")
    return ap


def run(kind, cfg, out, threads=1):
    """Run a resolved config; returns ``(exit code, verdicts)``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, cfg)
    try:
        verdicts = RUNNERS[kind](cfg, out, threads)
    except BlowUpError as e:
        v = Verdict("blowup", "step", e.step, 0.0, 0.0, kind == "blowup-demo",
                    {"message": str(e)})
        write_verdicts(out / "verdict.json", [v])
        return EXIT_BLOWUP, [v]
    write_verdicts(out / "verdict.json", verdicts)
    return (EXIT_PASS if all(v.passed for v in verdicts) else EXIT_FAIL), verdicts


def main(argv=None):
    args = build_parser().parse_args(argv)
    kind = args.kind
    try:
        file_cfg = load_config_file(args.config) if args.config else None
        overrides = list(args.override)
        for key, _ in _SHORTCUTS.values():
            val = getattr(args, f"short_{key}", None)
            if val is not None:
                overrides.append(f"{key}={json.dumps(val)}")
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        if args.replicas is not None:
            overrides.append(f"replicas={args.replicas}")
        cfg = resolve_config(kind, file_cfg, overrides)
        code, verdicts = run(kind, cfg, args.out, args.threads)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    for v in verdicts:
        status = "PASS" if v.passed else "FAIL"
        print(f"{status} {v.test}: {v.statistic}={v.value!r} (threshold {v.threshold!r})")
    if code == EXIT_BLOWUP:
        print(f"blow-up observed: {verdicts[0].detail['message']}")
    return code


if __name__ == "__main__":
    sys.exit(main())
