"""Philox4x32-10 counter-based generator and Box-Muller normals (numba kernels).

Every standard normal is addressed by ``(key, tag, path, mode, step)``: the
Philox counter is ``(step // 4, mode, path, tag)`` and one block of four
32-bit words yields four normals through two Box-Muller pairs.  Nothing is
carried between calls, so any sub-block of the (path, mode, step) lattice can
be regenerated independently and bit-identically.
"""

import numpy as np
from numba import njit

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)
_INV32 = 1.0 / 4294967296.0
_TWO_PI = 2.0 * np.pi


@njit(cache=True, inline="always")
def _philox4x32(c0, c1, c2, c3, k0, k1):
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _SHIFT
        lo0 = p0 & _MASK
        hi1 = p1 >> _SHIFT
        lo1 = p1 & _MASK
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = (k0 + _W0) & _MASK
        k1 = (k1 + _W1) & _MASK
    return c0, c1, c2, c3


@njit(cache=True)
def philox_block(counter, key):
    """Raw Philox4x32-10 output for one 128-bit counter (array of 4 uint64 < 2**32)."""
    out = np.empty(4, dtype=np.uint64)
    r = _philox4x32(counter[0], counter[1], counter[2], counter[3], key[0], key[1])
    out[0], out[1], out[2], out[3] = r[0], r[1], r[2], r[3]
    return out


@njit(cache=True, inline="always")
def _box_muller(a, b):
    # a maps to (0, 1] so the log is finite, b to [0, 1)
    u1 = (np.float64(a) + 1.0) * _INV32
    u2 = np.float64(b) * _INV32
    r = np.sqrt(-2.0 * np.log(u1))
    return r * np.cos(_TWO_PI * u2), r * np.sin(_TWO_PI * u2)


@njit(cache=True)
def fill_normals(out, k0, k1, tag, path0, mode0, step0, scale):
    """Fill ``out[p, s, j]`` with ``scale`` times the normal at
    (path0 + p, step0 + s, mode0 + j) of stream ``tag``."""
    n_paths, n_steps, n_modes = out.shape
    kk0 = np.uint64(k0)
    kk1 = np.uint64(k1)
    ct = np.uint64(tag)
    stop = step0 + n_steps
    first = step0 >> 2
    last = (stop + 3) >> 2
    for p in range(n_paths):
        cp = np.uint64(path0 + p)
        for blk in range(first, last):
            base = blk << 2
            s = base - step0
            if base >= step0 and base + 4 <= stop:
                # whole block in range: four rows, written along the mode axis
                for j in range(n_modes):
                    w0, w1, w2, w3 = _philox4x32(np.uint64(blk), np.uint64(mode0 + j), cp, ct, kk0, kk1)
                    a, b = _box_muller(w0, w1)
                    c, d = _box_muller(w2, w3)
                    out[p, s, j] = scale * a
                    out[p, s + 1, j] = scale * b
                    out[p, s + 2, j] = scale * c
                    out[p, s + 3, j] = scale * d
            else:
                lo = max(base, step0)
                hi = min(base + 4, stop)
                for j in range(n_modes):
                    w0, w1, w2, w3 = _philox4x32(np.uint64(blk), np.uint64(mode0 + j), cp, ct, kk0, kk1)
                    a, b = _box_muller(w0, w1)
                    c, d = _box_muller(w2, w3)
                    for k in range(lo, hi):
                        i = k - base
                        v = a if i == 0 else (b if i == 1 else (c if i == 2 else d))
                        out[p, k - step0, j] = scale * v
    return out
