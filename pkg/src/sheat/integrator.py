"""Fully implicit Euler scheme for dX = (AX + f(X))dt + sigma(X)dW.

One step is ``X_{k+1} = S_dt (X_k + dt f(X_k) + sigma(X_k) dW_k)`` with
``S_dt = (I - dt A)^{-1}``, applied once to the summed pre-image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nemytskii import ModelSpec, analyze, synthesize
from .noise import TAG_EXACT_OU, NoisePath, SeedSpec, bridge_sample, coarsen, standard_normals
from .spectral import EigenBasis, SpectralField, a_dt_multiplier, resolvent_multiplier


@dataclass(frozen=True)
class SchemeParams:
    T: float
    N: int
    m: int
    P: int | None = None

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("horizon T must be positive")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("step count N must be a positive integer")
        if self.m < 1:
            raise ValueError("m must be positive")
        if self.P is None:
            object.__setattr__(self, "P", 2 * self.m)
        if self.P < 2 * self.m:
            raise ValueError(f"collocation size P={self.P} must be at least 2m={2 * self.m}")
        if self.dt > 1.0:
            raise ValueError(f"step size dt={self.dt} exceeds 1")

    @property
    def dt(self) -> float:
        return self.T / self.N

    @classmethod
    def from_dt(cls, T: float, dt: float, m: int, P: int | None = None) -> "SchemeParams":
        return cls(T, steps_for(T, dt), m, P)


def steps_for(T: float, dt: float, rtol: float = 1e-9) -> int:
    """N with N*dt == T, or ValueError when dt does not divide T."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = T / dt
    N = int(round(n))
    if N < 1 or abs(n - N) > rtol * max(1.0, n):
        raise ValueError(f"dt={dt!r} does not divide T={T!r} (T/dt = {n!r})")
    return N


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States X_k at the step indices ``steps``; dense trajectories keep every k."""

    states: np.ndarray
    steps: np.ndarray
    params: SchemeParams
    basis: EigenBasis

    @property
    def dense(self) -> bool:
        return len(self.steps) == self.params.N + 1

    @property
    def initial(self) -> SpectralField:
        return SpectralField(self.states[0], self.basis)

    @property
    def final(self) -> SpectralField:
        return SpectralField(self.states[-1], self.basis)

    def state(self, k: int) -> SpectralField:
        idx = np.searchsorted(self.steps, k)
        if idx >= len(self.steps) or self.steps[idx] != k:
            raise KeyError(f"step {k} was not retained; rerun with dense=True")
        return SpectralField(self.states[idx], self.basis)


class StepKernel:
    """Implicit Euler step on raw coefficient arrays of shape (..., m)."""

    def __init__(self, basis: EigenBasis, model: ModelSpec, dt: float, P: int | None = None):
        P = 2 * basis.m if P is None else P
        if P < 2 * basis.m:
            raise ValueError(f"collocation size P={P} must be at least 2m={2 * basis.m}")
        self.basis = basis
        self.model = model
        self.dt = float(dt)
        self.P = P
        self.resolvent = resolvent_multiplier(basis.lam, dt)
        self._level = model.additive_level
        self._grid_drift = not model.drift_is_zero
        self._grid_noise = self._level is None

    @property
    def noise_free(self) -> bool:
        return self._level == 0.0

    def pre_image(self, x: np.ndarray, dw: np.ndarray) -> np.ndarray:
        """x + dt f(x) + sigma(x) dw, projected on the m modes."""
        m, L = self.basis.m, self.basis.length
        pre = x
        if self._grid_drift or self._grid_noise:
            g = synthesize(x, self.P, L)
            acc = self.dt * self.model.f(g) if self._grid_drift else None
            if self._grid_noise:
                s = self.model.sigma(g) * synthesize(dw, self.P, L)
                acc = s if acc is None else acc + s
            pre = pre + analyze(acc, m, L)
        if self._level is not None and self._level != 0.0:
            pre = pre + (dw if self._level == 1.0 else self._level * dw)
        return pre

    def noise_image(self, x: np.ndarray, dw: np.ndarray) -> np.ndarray:
        """sigma(x) dw projected on the m modes (no resolvent)."""
        if self._grid_noise:
            L = self.basis.length
            prod = self.model.sigma(synthesize(x, self.P, L)) * synthesize(dw, self.P, L)
            return analyze(prod, self.basis.m, L)
        return self._level * dw

    def __call__(self, x: np.ndarray, dw: np.ndarray) -> np.ndarray:
        return self.pre_image(x, dw) * self.resolvent


def euler_step(x: SpectralField, dw_col, model: ModelSpec, params: SchemeParams) -> SpectralField:
    kernel = StepKernel(x.basis, model, params.dt, params.P)
    return x.with_coeffs(kernel(x.coeffs, np.asarray(dw_col, dtype=np.float64)))


def run_path(x0: SpectralField, noise: NoisePath, model: ModelSpec, params: SchemeParams,
             dense: bool = False) -> Trajectory:
    if noise.m != params.m or x0.basis.m != params.m:
        raise ValueError(f"mode counts differ: x0 {x0.basis.m}, noise {noise.m}, params {params.m}")
    if noise.N != params.N:
        raise ValueError(f"noise has {noise.N} steps, params ask for {params.N}")
    if not math.isclose(noise.dt, params.dt, rel_tol=1e-12):
        raise ValueError(f"noise step {noise.dt} differs from dt={params.dt}")
    kernel = StepKernel(x0.basis, model, params.dt, params.P)
    x = x0.coeffs.copy()
    dW = np.ascontiguousarray(noise.dW.T)
    if dense:
        states = np.empty((params.N + 1, params.m))
        states[0] = x
        for k in range(params.N):
            x = kernel(x, dW[k])
            states[k + 1] = x
        steps = np.arange(params.N + 1)
    else:
        for k in range(params.N):
            x = kernel(x, dW[k])
        states = np.stack([x0.coeffs, x])
        steps = np.array([0, params.N])
    return Trajectory(states, steps, params, x0.basis)


def run_coupled(x0: SpectralField, fine: NoisePath, factor: int, model: ModelSpec,
                P: int | None = None) -> tuple[SpectralField, SpectralField]:
    """Final states at dt and at dt*factor, both driven by the same Brownian path."""
    coarse = coarsen(fine, factor)
    m = x0.basis.m
    T = fine.N * fine.dt
    fine_final = run_path(x0, fine, model, SchemeParams(T, fine.N, m, P)).final
    coarse_final = run_path(x0, coarse, model, SchemeParams(T, coarse.N, m, P)).final
    return fine_final, coarse_final


def interpolate(traj: Trajectory, noise: NoisePath, t: float, seed: SeedSpec,
                model: ModelSpec) -> SpectralField:
    """Continuous interpolant between grid states.

    On [t_k, t_{k+1}) it is X_k + (t - t_k)(A_dt X_k + S_dt f(X_k))
    + S_dt sigma(X_k)(W(t) - W(t_k)), with the Brownian increment drawn from
    the bridge pinned to the stored step increment.
    """
    params = traj.params
    if not 0.0 <= t <= params.T:
        raise ValueError(f"t={t} outside [0, {params.T}]")
    if not traj.dense:
        raise ValueError("interpolation needs a dense trajectory")
    dt = params.dt
    k = min(int(math.floor(t / dt)), params.N)
    tk = k * dt
    if k == params.N or t == tk:
        return traj.state(k)
    theta = (t - tk) / dt
    if theta <= 0.0:
        return traj.state(k)
    xk = traj.states[k]
    basis = traj.basis
    dw = bridge_sample(noise, k, theta, seed)
    L = basis.length
    res = resolvent_multiplier(basis.lam, dt)
    kernel = StepKernel(basis, model, dt, params.P)
    drift = a_dt_multiplier(basis.lam, dt) * xk
    if not model.drift_is_zero:
        drift = drift + res * analyze(model.f(synthesize(xk, params.P, L)), basis.m, L)
    noise_part = res * kernel.noise_image(xk, dw)
    return SpectralField(xk + (t - tk) * drift + noise_part, basis)


def ou_moments(basis: EigenBasis, x0: np.ndarray, T: float, q: float) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance per mode of the exact solution for f = 0, sigma = sqrt(q)."""
    lam = basis.lam
    mean = np.exp(-lam * T) * x0
    var = q * (-np.expm1(-2.0 * lam * T)) / (2.0 * lam)
    return mean, var


def exact_ou_final(x0: SpectralField, params: SchemeParams, q: float, seed: SeedSpec) -> SpectralField:
    if q < 0:
        raise ValueError("q must be nonnegative")
    mean, var = ou_moments(x0.basis, x0.coeffs, params.T, q)
    p = seed.path_index
    z = standard_normals(seed.experiment_seed, range(p, p + 1), x0.basis.m, range(1), tag=TAG_EXACT_OU)
    return x0.with_coeffs(mean + np.sqrt(var) * z[0, 0, :])
