"""Pure numpy versions of the compiled kernels (same algorithms, same layout)."""

import numpy as np

BACKEND = "numpy"

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)


def _rounds(c0, c1, c2, c3, k0, k1):
    # c* are uint64 arrays holding 32-bit words
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> _SHIFT32, p0 & _MASK32
        hi1, lo1 = p1 >> _SHIFT32, p1 & _MASK32
        c0, c1, c2, c3 = hi1 ^ c1 ^ np.uint64(k0), lo1, hi0 ^ c3 ^ np.uint64(k1), lo0
        k0 = (k0 + _W0) & 0xFFFFFFFF
        k1 = (k1 + _W1) & 0xFFFFFFFF
    return c0, c1, c2, c3


def philox4x32(ctr, k0, k1):
    ctr = np.asarray(ctr, dtype=np.uint32)
    words = [ctr[:, i].astype(np.uint64) for i in range(4)]
    out = _rounds(*words, int(k0) & 0xFFFFFFFF, int(k1) & 0xFFFFFFFF)
    return np.stack(out, axis=1).astype(np.uint32)


def normals(seed, streams, steps, nblocks, out):
    seed = int(seed)
    streams = np.asarray(streams, dtype=np.uint64)
    steps = np.asarray(steps, dtype=np.uint64)
    R, S = streams.shape[0], steps.shape[0]
    shape = (R, S, nblocks)
    c0 = np.broadcast_to(np.arange(nblocks, dtype=np.uint64)[None, None, :], shape)
    c1 = np.broadcast_to(steps[None, :, None], shape)
    c2 = np.broadcast_to((streams & _MASK32)[:, None, None], shape)
    c3 = np.broadcast_to((streams >> _SHIFT32)[:, None, None], shape)
    x0, x1, x2, x3 = _rounds(c0, c1, c2, c3, seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF)
    inv = 1.0 / 9007199254740992.0
    ua = ((x0 >> np.uint64(5)).astype(np.float64) * 67108864.0
          + (x1 >> np.uint64(6)).astype(np.float64)) * inv
    ub = ((x2 >> np.uint64(5)).astype(np.float64) * 67108864.0
          + (x3 >> np.uint64(6)).astype(np.float64)) * inv
    rad = np.sqrt(-2.0 * np.log(1.0 - ua))
    ang = 6.283185307179586 * ub
    out[..., 0] = rad * np.cos(ang)
    out[..., 1] = rad * np.sin(ang)


def spectral_step(base, src, coeff, gidx, mult, b, out):
    acc = np.zeros_like(base)
    for j in range(coeff.shape[1]):
        acc += coeff[:, j, None] * src[:, gidx[j]]
    np.multiply(base + b * acc, mult, out=out)
    return bool(np.isfinite(out).all())


def spectral_step_rows(base, src, coeff, gidx, rows, mult, b, out):
    acc = np.zeros((base.shape[0], rows.shape[0]), dtype=base.dtype)
    for j in range(coeff.shape[1]):
        acc += coeff[:, j, None] * src[:, gidx[j, rows]]
    res = (base[:, rows] + b * acc) * mult[rows]
    out[:, rows] = res
    return bool(np.isfinite(res).all())
