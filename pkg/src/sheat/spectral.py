"""Dirichlet Laplacian eigenbasis on an interval and its diagonal operators.

Eigenvalues are stored positive (``lam[j-1] = (j*pi/(b-a))**2`` are the
eigenvalues of -A) and every operator is a multiplier on coefficient vectors.
A ``SpectralField`` may carry leading batch axes; the last axis is the mode.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True, eq=False)
class EigenBasis:
    a: float
    b: float
    m: int

    def __post_init__(self):
        if not np.isfinite(self.a) or not np.isfinite(self.b) or self.b <= self.a:
            raise ValueError(f"need a < b, got a={self.a}, b={self.b}")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"truncation m must be a positive integer, got {self.m}")

    @property
    def length(self) -> float:
        return self.b - self.a

    @cached_property
    def lam(self) -> np.ndarray:
        j = np.arange(1, self.m + 1, dtype=np.float64)
        lam = (j * np.pi / self.length) ** 2
        lam.flags.writeable = False
        return lam

    def eigenfunctions(self, xi) -> np.ndarray:
        """e_j(xi) for j = 1..m; shape xi.shape + (m,)."""
        xi = np.asarray(xi, dtype=np.float64)
        j = np.arange(1, self.m + 1)
        arg = np.multiply.outer((xi - self.a) / self.length, j * np.pi)
        return np.sqrt(2.0 / self.length) * np.sin(arg)

    def __eq__(self, other):
        if not isinstance(other, EigenBasis):
            return NotImplemented
        return (self.a, self.b, self.m) == (other.a, other.b, other.m)

    def __hash__(self):
        return hash((self.a, self.b, self.m))


@dataclass(frozen=True, eq=False)
class SpectralField:
    coeffs: np.ndarray
    basis: EigenBasis

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        if c.ndim == 0 or c.shape[-1] != self.basis.m:
            raise ValueError(f"coefficient axis has length {c.shape[-1:]}, basis has m={self.basis.m}")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, basis: EigenBasis, batch: tuple = ()) -> "SpectralField":
        return cls(np.zeros(batch + (basis.m,)), basis)

    @classmethod
    def mode(cls, basis: EigenBasis, j: int, amplitude: float = 1.0) -> "SpectralField":
        """amplitude * e_j (j counts from 1)."""
        c = np.zeros(basis.m)
        c[j - 1] = amplitude
        return cls(c, basis)

    def with_coeffs(self, coeffs) -> "SpectralField":
        return SpectralField(coeffs, self.basis)

    def norm(self):
        return np.sqrt(np.sum(self.coeffs**2, axis=-1))

    def __add__(self, other):
        return self.with_coeffs(self.coeffs + other.coeffs)

    def __sub__(self, other):
        return self.with_coeffs(self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return self.with_coeffs(self.coeffs * scalar)

    __rmul__ = __mul__


def build_basis(a: float, b: float, m: int) -> EigenBasis:
    if int(m) != m:
        raise ValueError(f"truncation m must be a positive integer, got {m}")
    return EigenBasis(float(a), float(b), int(m))


def resolvent_multiplier(lam: np.ndarray, dt: float, k: int = 1) -> np.ndarray:
    """(1 + dt*lam)^(-k), the spectrum of S_dt^k."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if k < 0:
        raise ValueError("k must be nonnegative")
    if k == 0:
        return np.ones_like(lam)
    return (1.0 + dt * lam) ** (-float(k))


def apply_resolvent_power(x: SpectralField, dt: float, k: int = 1) -> SpectralField:
    if k == 0:
        return x.with_coeffs(x.coeffs.copy())
    return x.with_coeffs(x.coeffs * resolvent_multiplier(x.basis.lam, dt, k))


def apply_semigroup(x: SpectralField, t: float) -> SpectralField:
    if t < 0:
        raise ValueError("t must be nonnegative")
    return x.with_coeffs(x.coeffs * np.exp(-x.basis.lam * t))


def a_dt_multiplier(lam: np.ndarray, dt: float) -> np.ndarray:
    """Spectrum of A_dt = S_dt A; bounded by 1/dt in magnitude."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return -lam / (1.0 + dt * lam)


def apply_A_dt(x: SpectralField, dt: float) -> SpectralField:
    return x.with_coeffs(x.coeffs * a_dt_multiplier(x.basis.lam, dt))


def lam_power(lam: np.ndarray, beta: float) -> np.ndarray:
    # lam > 0 always, so exp(beta*log(lam)) has no branch issues
    return np.exp(beta * np.log(lam))


def fractional_norm(x: SpectralField, beta: float):
    """|(-A)^beta x|; vectorized over batch axes."""
    w = lam_power(x.basis.lam, beta)
    return np.sqrt(np.sum((w * x.coeffs) ** 2, axis=-1))


def trace_fractional(basis: EigenBasis, alpha: float) -> float:
    """Truncated trace of (-A)^(-alpha), summed smallest terms first."""
    return float(np.sum(lam_power(basis.lam, -alpha)[::-1]))
