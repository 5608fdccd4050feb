"""Truncated cylindrical Wiener increments with counter-based addressing.

Increment ``dW[j, k]`` of mode ``j`` over step ``k`` of path ``p`` is a pure
function of ``(experiment_seed, p, j, k)`` and the step size, so paths can be
extended in either direction (more modes, more steps) without disturbing
existing entries, and any path can be regenerated on any worker.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._philox import fill_normals

# Stream tags keep increments, bridge draws and exact-solution draws disjoint.
TAG_INCREMENT = 0
TAG_BRIDGE = 1
TAG_EXACT_OU = 2

_MAX_PATH = 2**32


@dataclass(frozen=True)
class SeedSpec:
    experiment_seed: int
    path_index: int = 0

    def __post_init__(self):
        if not 0 <= self.experiment_seed < 2**64:
            raise ValueError("experiment_seed must fit in an unsigned 64-bit integer")
        if not 0 <= self.path_index < _MAX_PATH:
            raise ValueError("path_index must be in [0, 2**32)")

    @property
    def key(self) -> tuple[int, int]:
        return self.experiment_seed & 0xFFFFFFFF, self.experiment_seed >> 32


@dataclass(frozen=True, eq=False)
class NoisePath:
    """Increments ``dW`` of shape (m, N); row j is the Brownian motion of mode j+1."""

    dW: np.ndarray
    dt: float

    def __post_init__(self):
        if self.dW.ndim != 2:
            raise ValueError("dW must be an (m, N) matrix")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def m(self) -> int:
        return self.dW.shape[0]

    @property
    def N(self) -> int:
        return self.dW.shape[1]

    @property
    def T(self) -> float:
        return self.N * self.dt

    def normalized(self) -> np.ndarray:
        """The standardized increments chi = dW / sqrt(dt)."""
        return self.dW / np.sqrt(self.dt)


def standard_normals(
    experiment_seed: int,
    paths: range,
    m: int,
    steps: range,
    tag: int = TAG_INCREMENT,
    scale: float = 1.0,
    out: np.ndarray | None = None,
) -> np.ndarray:
    """Batch of addressed normals, shape (len(paths), len(steps), m), times ``scale``."""
    if paths.step != 1 or steps.step != 1:
        raise ValueError("paths and steps must be contiguous ranges")
    if paths.start < 0 or paths.stop > _MAX_PATH:
        raise ValueError("path indices must be in [0, 2**32)")
    if steps.start < 0:
        raise ValueError("step indices must be nonnegative")
    shape = (len(paths), len(steps), m)
    if out is None:
        out = np.empty(shape)
    elif out.shape != shape:
        raise ValueError(f"out has shape {out.shape}, expected {shape}")
    k0, k1 = SeedSpec(experiment_seed).key
    fill_normals(out, k0, k1, tag, paths.start, 0, steps.start, float(scale))
    return out


def sample_path(seed: SeedSpec, m: int, N: int, dt: float) -> NoisePath:
    if m < 1 or N < 1:
        raise ValueError("m and N must be at least 1")
    if dt <= 0:
        raise ValueError("dt must be positive")
    p = seed.path_index
    z = standard_normals(seed.experiment_seed, range(p, p + 1), m, range(N), scale=np.sqrt(dt))
    return NoisePath(np.ascontiguousarray(z[0].T), float(dt))


def _prime_factors(n: int) -> list[int]:
    out, d = [], 2
    while d * d <= n:
        while n % d == 0:
            out.append(d)
            n //= d
        d += 1
    if n > 1:
        out.append(n)
    return out


def coarsen_increments(dW: np.ndarray, factor: int, axis: int = -1) -> np.ndarray:
    """Sum groups of ``factor`` consecutive increments along ``axis``.

    The reduction is staged by prime factors in ascending order, each stage
    summing left to right.  Hence coarsening by 2 twice is bit-identical to
    coarsening by 4, and likewise for any chain of powers of one prime.
    """
    if factor < 1:
        raise ValueError("factor must be a positive integer")
    axis = axis % dW.ndim
    n = dW.shape[axis]
    if n % factor:
        raise ValueError(f"factor {factor} does not divide the step count {n}")
    out = dW
    for q in _prime_factors(factor):
        shp = out.shape
        g = out.reshape(shp[:axis] + (shp[axis] // q, q) + shp[axis + 1:])
        idx = [slice(None)] * g.ndim
        idx[axis + 1] = 0
        acc = g[tuple(idx)].copy()
        for i in range(1, q):
            idx[axis + 1] = i
            acc += g[tuple(idx)]
        out = acc
    return out if factor > 1 else dW.copy()


def can_chain(inner: int, outer: int) -> bool:
    """True when coarsening by ``inner`` then ``outer // inner`` reproduces
    coarsening by ``outer`` bit for bit."""
    if outer % inner:
        return False
    return _prime_factors(inner) + _prime_factors(outer // inner) == _prime_factors(outer)


def coarsen(path: NoisePath, factor: int) -> NoisePath:
    if factor < 1 or path.N % factor:
        raise ValueError(f"factor {factor} does not divide N = {path.N}")
    return NoisePath(coarsen_increments(path.dW, factor), path.dt * factor)


def bridge_normals(seed: SeedSpec, k: int, m: int) -> np.ndarray:
    p = seed.path_index
    z = standard_normals(seed.experiment_seed, range(p, p + 1), m, range(k, k + 1), tag=TAG_BRIDGE)
    return z[0, 0, :]


def bridge_sample(path: NoisePath, k: int, theta: float, seed: SeedSpec) -> np.ndarray:
    """W(t_k + theta*dt) - W(t_k) for every mode, conditioned on the step increment.

    Draws for different ``theta`` with the same seed share one standard normal,
    so they are marginally correct but not a joint bridge path.
    """
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie strictly between 0 and 1")
    if not 0 <= k < path.N:
        raise ValueError(f"step index {k} outside [0, {path.N})")
    z = bridge_normals(seed, k, path.m)
    return theta * path.dW[:, k] + np.sqrt(theta * (1.0 - theta) * path.dt) * z


_HEADER = struct.Struct("<qqd")


def dump_path(path: NoisePath, filename) -> None:
    """Write header (m, N as int64, dt as float64, little endian) then dW row-major."""
    with open(filename, "wb") as fh:
        fh.write(_HEADER.pack(path.m, path.N, path.dt))
        fh.write(np.ascontiguousarray(path.dW, dtype="<f8").tobytes())


def load_path(filename) -> NoisePath:
    raw = Path(filename).read_bytes()
    m, N, dt = _HEADER.unpack_from(raw)
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != m * N:
        raise ValueError(f"expected {m * N} doubles, found {body.size}")
    return NoisePath(body.reshape(m, N).astype(np.float64), dt)
