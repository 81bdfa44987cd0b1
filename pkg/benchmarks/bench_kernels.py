"""Compare the compiled and numpy kernel backends.

Usage::

    python benchmarks/bench_kernels.py [--repeat 3] [--replicas 32] [--steps 200]

Times the normal generator, one spectral step and a short PAM ensemble run
under every available backend and prints a table with the speedup of the
compiled core. Results of the two backends are also compared.
"""

import argparse
import time

import numpy as np

from shelab import _kernels
from shelab.grid import TorusGrid
from shelab.noise import PathEnsemble, draw_normals, lattice_modes
from shelab.solver import (ConstantProfile, SigmaSpec, SpdeProblem, atom_coefficients,
                           evolve_ensemble, gather_index)
from shelab.spectral import SpectralMeasure


def best_of(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def cases(replicas, steps):
    grid = TorusGrid()
    mu = SpectralMeasure.unit_atoms(3, 1.0)
    modes = lattice_modes(grid, mu)
    streams = np.arange(replicas)
    R, P = replicas, modes.count

    def normals():
        return draw_normals(1, streams, np.arange(steps), P)

    g = draw_normals(1, streams, np.arange(1), P)[:, 0]
    coeff = np.ascontiguousarray(atom_coefficients(modes, 1e-2, g))
    gidx = gather_index(modes)
    mult = np.ascontiguousarray(grid.heat_multiplier(1e-2, half=False).ravel())
    rng = np.random.default_rng(0)
    src = rng.standard_normal((R, grid.size)) + 1j * rng.standard_normal((R, grid.size))

    def step():
        out = np.empty_like(src)
        for _ in range(10):
            _kernels.active().spectral_step(src, src, coeff, gidx, mult, 1.0, out)
        return out

    problem = SpdeProblem(grid, mu, SigmaSpec.linear(1.0), ConstantProfile(1.0))
    paths = PathEnsemble.replicas(grid, mu, 1e-2, 1, replicas, steps)

    def evolve():
        return evolve_ensemble(problem, paths, steps, engine="spectral").values

    return [("normals", normals), ("spectral_step x10", step), ("PAM evolve", evolve)]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--replicas", type=int, default=32)
    ap.add_argument("--steps", type=int, default=200)
    args = ap.parse_args(argv)

    backends = _kernels.available()
    prev = _kernels.backend_name()
    times, outs = {}, {}
    try:
        for name in backends:
            _kernels.set_backend(name)
            for label, fn in cases(args.replicas, args.steps):
                times[name, label], outs[name, label] = best_of(fn, args.repeat)
    finally:
        _kernels.set_backend(prev)

    labels = [label for label, _ in cases(1, 1)]
    print(f"{'kernel':<20}" + "".join(f"{b + ' [s]':>14}" for b in backends) + f"{'speedup':>10}{'max diff':>12}")
    for label in labels:
        row = f"{label:<20}" + "".join(f"{times[b, label]:>14.4f}" for b in backends)
        if len(backends) == 2:
            a, b = backends
            row += f"{times['numpy', label] / times['cython', label]:>10.1f}"
            row += f"{float(np.max(np.abs(outs[a, label] - outs[b, label]))):>12.2e}"
        print(row)


if __name__ == "__main__":
    main()
