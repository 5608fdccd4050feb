"""Pointwise nonlinearities f and sigma, evaluated through a sine collocation grid.

Grid nodes are the interior points ``xi_i = a + i*(b-a)/(P+1)``, i = 1..P, and
both directions of the transform are a type-I DST of length P, so
``to_spectral(to_grid(x, P), m) == x`` for every P >= m.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.fft

from .spectral import EigenBasis, SpectralField

SIGMA_KINDS = ("additive", "linear_affine", "general")


class ModelAssumptionError(ValueError):
    """A sampled Lipschitz quotient exceeded the declared constant."""


# --------------------------------------------------------------------------
# scalar maps


class ScalarMap:
    """Scalar function with its first three derivatives, elementwise on arrays.

    Subclasses are small frozen dataclasses so models pickle cleanly to worker
    processes.
    """

    def __call__(self, u):
        raise NotImplementedError

    def d1(self, u):
        raise NotImplementedError

    def d2(self, u):
        raise NotImplementedError

    def d3(self, u):
        raise NotImplementedError


@dataclass(frozen=True)
class Zero(ScalarMap):
    def __call__(self, u):
        return np.zeros_like(u, dtype=float)

    d1 = d2 = d3 = __call__


@dataclass(frozen=True)
class Constant(ScalarMap):
    value: float = 1.0

    def __call__(self, u):
        return np.full_like(u, self.value, dtype=float)

    def d1(self, u):
        return np.zeros_like(u, dtype=float)

    d2 = d3 = d1


@dataclass(frozen=True)
class Affine(ScalarMap):
    slope: float = 1.0
    offset: float = 0.0

    def __call__(self, u):
        return self.slope * np.asarray(u, dtype=float) + self.offset

    def d1(self, u):
        return np.full_like(u, self.slope, dtype=float)

    def d2(self, u):
        return np.zeros_like(u, dtype=float)

    d3 = d2


@dataclass(frozen=True)
class Sine(ScalarMap):
    amplitude: float = 1.0

    def __call__(self, u):
        return self.amplitude * np.sin(u)

    def d1(self, u):
        return self.amplitude * np.cos(u)

    def d2(self, u):
        return -self.amplitude * np.sin(u)

    def d3(self, u):
        return -self.amplitude * np.cos(u)


@dataclass(frozen=True)
class Cosine(ScalarMap):
    amplitude: float = 1.0

    def __call__(self, u):
        return self.amplitude * np.cos(u)

    def d1(self, u):
        return -self.amplitude * np.sin(u)

    def d2(self, u):
        return -self.amplitude * np.cos(u)

    def d3(self, u):
        return self.amplitude * np.sin(u)


@dataclass(frozen=True)
class Rational(ScalarMap):
    """amplitude * u / (1 + u^2)."""

    amplitude: float = 1.0

    def __call__(self, u):
        return self.amplitude * u / (1.0 + u * u)

    def d1(self, u):
        return self.amplitude * (1.0 - u * u) / (1.0 + u * u) ** 2

    def d2(self, u):
        return self.amplitude * 2.0 * u * (u * u - 3.0) / (1.0 + u * u) ** 3

    def d3(self, u):
        u2 = u * u
        return -self.amplitude * 6.0 * (u2 * u2 - 6.0 * u2 + 1.0) / (1.0 + u2) ** 4


@dataclass(frozen=True)
class CallableMap(ScalarMap):
    """Wrap plain callables; missing derivatives fall back to central differences."""

    func: Callable
    deriv1: Callable | None = None
    deriv2: Callable | None = None
    deriv3: Callable | None = None
    h: float = 1e-3

    def __call__(self, u):
        return np.asarray(self.func(u), dtype=float)

    def _fd(self, g, u):
        h = self.h
        return (g(u + h) - g(u - h)) / (2 * h)

    def d1(self, u):
        return self.deriv1(u) if self.deriv1 else self._fd(self, u)

    def d2(self, u):
        return self.deriv2(u) if self.deriv2 else self._fd(self.d1, u)

    def d3(self, u):
        return self.deriv3(u) if self.deriv3 else self._fd(self.d2, u)


# --------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class ModelSpec:
    """Drift f and diffusion sigma with their declared Lipschitz constants.

    ``curvature_condition`` records whether sigma'' is compatible with the
    weak-rate theory (it holds for additive and affine noise); models that
    violate it still run and are flagged in reports.
    """

    f: ScalarMap
    L_f: float
    sigma: ScalarMap
    L_sigma: float
    sigma_kind: str
    curvature_condition: bool
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.sigma_kind not in SIGMA_KINDS:
            raise ValueError(f"sigma_kind must be one of {SIGMA_KINDS}, got {self.sigma_kind!r}")
        if self.L_f < 0 or self.L_sigma < 0:
            raise ValueError("Lipschitz constants must be nonnegative")
        if self.sigma_kind == "additive" and not isinstance(self.sigma, Constant):
            raise ValueError("additive noise needs a Constant sigma")
        if self.sigma_kind == "linear_affine" and not isinstance(self.sigma, (Affine, Constant)):
            raise ValueError("linear_affine noise needs an Affine sigma")

    @property
    def drift_is_zero(self) -> bool:
        return isinstance(self.f, Zero)

    @property
    def additive_level(self) -> float | None:
        return self.sigma.value if self.sigma_kind == "additive" else None


def _drift(name: str, params: dict) -> tuple[ScalarMap, float]:
    if name == "zero":
        return Zero(), 0.0
    if name == "sin":
        amp = float(params.get("amplitude", 1.0))
        return Sine(amp), abs(amp)
    if name == "rational":
        amp = float(params.get("amplitude", 1.0))
        return Rational(amp), abs(amp)
    if name == "affine":
        slope = float(params.get("slope", 1.0))
        return Affine(slope, float(params.get("offset", 0.0))), abs(slope)
    raise KeyError(name)


def _diffusion(name: str, params: dict) -> tuple[ScalarMap, float, str, bool]:
    if name == "additive":
        level = float(params.get("level", 1.0))
        return Constant(level), 0.0, "additive", True
    if name == "affine":
        slope = float(params.get("slope", 1.0))
        return Affine(slope, float(params.get("offset", 0.0))), abs(slope), "linear_affine", True
    if name == "cos":
        amp = float(params.get("amplitude", 1.0))
        return Cosine(amp), abs(amp), "general", False
    raise KeyError(name)


DRIFTS = ("zero", "sin", "rational", "affine")
DIFFUSIONS = ("additive", "affine", "cos")


def make_model(drift: str = "zero", diffusion: str = "additive",
               drift_params: dict | None = None, diffusion_params: dict | None = None) -> ModelSpec:
    """Build a library model, e.g. ``make_model("sin", "additive")``."""
    drift_params = dict(drift_params or {})
    diffusion_params = dict(diffusion_params or {})
    try:
        f, L_f = _drift(drift, drift_params)
    except KeyError:
        raise KeyError(f"unknown drift {drift!r}; available: {', '.join(DRIFTS)}") from None
    try:
        sigma, L_s, kind, curv = _diffusion(diffusion, diffusion_params)
    except KeyError:
        raise KeyError(f"unknown diffusion {diffusion!r}; available: {', '.join(DIFFUSIONS)}") from None
    return ModelSpec(f, L_f, sigma, L_s, kind, curv, name=f"{drift}/{diffusion}",
                     params={"drift": drift_params, "diffusion": diffusion_params})


# --------------------------------------------------------------------------
# collocation transforms


@dataclass(frozen=True, eq=False)
class GridField:
    values: np.ndarray
    a: float
    b: float

    @property
    def P(self) -> int:
        return self.values.shape[-1]

    @property
    def nodes(self) -> np.ndarray:
        return collocation_nodes(self.a, self.b, self.P)


def collocation_nodes(a: float, b: float, P: int) -> np.ndarray:
    return a + np.arange(1, P + 1) * (b - a) / (P + 1)


def synthesize(coeffs: np.ndarray, P: int, length: float) -> np.ndarray:
    """Grid values of sum_j c_j e_j at the P interior nodes (last axis)."""
    m = coeffs.shape[-1]
    if P < m:
        raise ValueError(f"collocation size P={P} is smaller than m={m}")
    if P > m:
        pad = np.zeros(coeffs.shape[:-1] + (P,))
        pad[..., :m] = coeffs
    else:
        pad = coeffs
    # scipy's DST-I carries a factor 2
    return (0.5 * np.sqrt(2.0 / length)) * scipy.fft.dst(pad, type=1, axis=-1)


def analyze(values: np.ndarray, m: int, length: float) -> np.ndarray:
    """First m sine-quadrature coefficients of grid values (last axis)."""
    P = values.shape[-1]
    if m > P:
        raise ValueError(f"cannot extract m={m} modes from P={P} nodes")
    scale = length / (P + 1) * 0.5 * np.sqrt(2.0 / length)
    return scale * scipy.fft.dst(values, type=1, axis=-1)[..., :m]


def _sine_matrix(m: int, P: int, length: float) -> np.ndarray:
    i = np.arange(1, P + 1)
    j = np.arange(1, m + 1)
    return np.sqrt(2.0 / length) * np.sin(np.pi * np.outer(j, i) / (P + 1))


def to_grid(x: SpectralField, P: int, method: str = "fft") -> GridField:
    basis = x.basis
    if P < basis.m:
        raise ValueError(f"collocation size P={P} is smaller than m={basis.m}")
    if method == "fft":
        values = synthesize(x.coeffs, P, basis.length)
    elif method == "direct":
        values = x.coeffs @ _sine_matrix(basis.m, P, basis.length)
    else:
        raise ValueError(f"unknown method {method!r}")
    return GridField(values, basis.a, basis.b)


def to_spectral(g: GridField, m: int, method: str = "fft") -> SpectralField:
    basis = EigenBasis(g.a, g.b, m)
    if m > g.P:
        raise ValueError(f"cannot extract m={m} modes from P={g.P} nodes")
    if method == "fft":
        coeffs = analyze(g.values, m, basis.length)
    elif method == "direct":
        coeffs = (basis.length / (g.P + 1)) * (g.values @ _sine_matrix(m, g.P, basis.length).T)
    else:
        raise ValueError(f"unknown method {method!r}")
    return SpectralField(coeffs, basis)


def apply_f(x: SpectralField, model: ModelSpec, P: int) -> SpectralField:
    if model.drift_is_zero:
        if P < x.basis.m:
            raise ValueError(f"collocation size P={P} is smaller than m={x.basis.m}")
        return x.with_coeffs(np.zeros_like(x.coeffs))
    L = x.basis.length
    return x.with_coeffs(analyze(model.f(synthesize(x.coeffs, P, L)), x.basis.m, L))


def apply_sigma_increment(x: SpectralField, dw, model: ModelSpec, P: int) -> SpectralField:
    """Project sigma(X(xi)) * (sum_j dw_j e_j(xi)) back onto m modes."""
    m = x.basis.m
    if P < 2 * m:
        raise ValueError(f"noise products need P >= 2m, got P={P}, m={m}")
    dw = np.asarray(dw, dtype=np.float64)
    if dw.shape[-1] != m:
        raise ValueError(f"increment has {dw.shape[-1]} modes, basis has {m}")
    if model.sigma_kind == "additive":
        # multiplication by a constant commutes with the projection
        return x.with_coeffs(model.sigma.value * np.broadcast_to(dw, np.broadcast_shapes(dw.shape, x.coeffs.shape)))
    L = x.basis.length
    prod = model.sigma(synthesize(x.coeffs, P, L)) * synthesize(dw, P, L)
    return x.with_coeffs(analyze(prod, m, L))


# --------------------------------------------------------------------------
# assumption checks


@dataclass
class Violation:
    which: str
    point: float
    quotient: float
    bound: float

    def __str__(self):
        return (f"{self.which}: difference quotient {self.quotient:.6g} exceeds "
                f"L={self.bound:.6g} (+1%) near u={self.point:.6g}")


@dataclass
class ValidationReport:
    R: float
    n_samples: int
    f_lipschitz: float
    sigma_lipschitz: float
    f_d2: float
    f_d3: float
    sigma_d2: float
    sigma_d3: float
    sigma_kind: str
    curvature_condition: bool
    violations: list[Violation]

    @property
    def passed(self) -> bool:
        return not self.violations

    def raise_for_failure(self):
        if self.violations:
            raise ModelAssumptionError("; ".join(str(v) for v in self.violations))

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["violations"] = [str(v) for v in self.violations]
        d["passed"] = self.passed
        return d


def _worst_quotient(g: ScalarMap, u: np.ndarray) -> tuple[float, float]:
    q = np.abs(np.diff(g(u))) / np.diff(u)
    i = int(np.argmax(q))
    return float(q[i]), float(0.5 * (u[i] + u[i + 1]))


def _fd_max(g: ScalarMap, u: np.ndarray, h: float) -> tuple[float, float]:
    d2 = (g(u + h) - 2 * g(u) + g(u - h)) / h**2
    d3 = (g(u + 2 * h) - 2 * g(u + h) + 2 * g(u - h) - g(u - 2 * h)) / (2 * h**3)
    return float(np.max(np.abs(d2))), float(np.max(np.abs(d3)))


def validate_model(model: ModelSpec, R: float = 10.0, n_samples: int = 4001,
                   slack: float = 0.01) -> ValidationReport:
    """Sample f and sigma on [-R, R] and compare against the declared constants."""
    if R <= 0:
        raise ValueError("R must be positive")
    if n_samples < 2:
        raise ValueError("need at least two samples")
    u = np.linspace(-R, R, n_samples)
    h = max(1e-3, 2 * R / (n_samples - 1))
    violations = []
    qf, uf = _worst_quotient(model.f, u)
    qs, us = _worst_quotient(model.sigma, u)
    if qf > model.L_f * (1 + slack) + 1e-12:
        violations.append(Violation("f", uf, qf, model.L_f))
    if qs > model.L_sigma * (1 + slack) + 1e-12:
        violations.append(Violation("sigma", us, qs, model.L_sigma))
    f2, f3 = _fd_max(model.f, u, h)
    s2, s3 = _fd_max(model.sigma, u, h)
    curvature = model.curvature_condition and s2 <= 1e-6 * max(1.0, qs)
    return ValidationReport(R, n_samples, qf, qs, f2, f3, s2, s3,
                            model.sigma_kind, curvature, violations)
