"""Closed forms for the linear additive case f = 0, sigma = sqrt(q).

Each mode of the scheme is an AR(1) recursion and each mode of the exact
solution an Ornstein-Uhlenbeck process, so means and variances of both are
available without sampling.
"""

from __future__ import annotations

import numpy as np

from .integrator import ou_moments, steps_for
from .spectral import EigenBasis


def scheme_variance(basis: EigenBasis, dt: float, N: int, q: float = 1.0) -> np.ndarray:
    """Per-mode variance after N steps: v_{k+1} = (v_k + q dt) / (1 + dt lam)^2, v_0 = 0."""
    r2 = (1.0 + dt * basis.lam) ** -2.0
    v = np.zeros(basis.m)
    for _ in range(N):
        v = (v + q * dt) * r2
    return v


def scheme_variance_path(basis: EigenBasis, dt: float, N: int, q: float = 1.0) -> np.ndarray:
    """Variance per mode at every step k = 0..N, shape (N+1, m)."""
    r2 = (1.0 + dt * basis.lam) ** -2.0
    out = np.zeros((N + 1, basis.m))
    for k in range(N):
        out[k + 1] = (out[k] + q * dt) * r2
    return out


def scheme_second_moment(basis: EigenBasis, x0: np.ndarray, dt: float, N: int, q: float = 1.0) -> float:
    """E|X_N|^2 of the implicit Euler chain."""
    mean = (1.0 + dt * basis.lam) ** (-float(N)) * x0
    return float(np.sum(mean**2) + np.sum(scheme_variance(basis, dt, N, q)))


def scheme_second_moment_path(basis: EigenBasis, x0: np.ndarray, dt: float, N: int, q: float = 1.0) -> np.ndarray:
    k = np.arange(N + 1)[:, None]
    mean = (1.0 + dt * basis.lam) ** (-k.astype(float)) * x0
    return np.sum(mean**2, axis=1) + np.sum(scheme_variance_path(basis, dt, N, q), axis=1)


def exact_second_moment(basis: EigenBasis, x0: np.ndarray, T: float, q: float = 1.0) -> float:
    mean, var = ou_moments(basis, x0, T, q)
    return float(np.sum(mean**2) + np.sum(var))


def gaussian_phi_exp(mean: np.ndarray, var: np.ndarray) -> float:
    """E exp(-|X|^2) for independent Gaussian coordinates."""
    return float(np.prod((1.0 + 2.0 * var) ** -0.5) * np.exp(-np.sum(mean**2 / (1.0 + 2.0 * var))))


def scheme_phi_exp(basis: EigenBasis, x0: np.ndarray, dt: float, N: int, q: float = 1.0) -> float:
    mean = (1.0 + dt * basis.lam) ** (-float(N)) * x0
    return gaussian_phi_exp(mean, scheme_variance(basis, dt, N, q))


def exact_phi_exp(basis: EigenBasis, x0: np.ndarray, T: float, q: float = 1.0) -> float:
    return gaussian_phi_exp(*ou_moments(basis, x0, T, q))


def oracle_table(basis: EigenBasis, x0: np.ndarray, T: float, dts, ref_dt: float, q: float = 1.0) -> list[dict]:
    """Rows of closed-form second moments and weak errors per ladder rung."""
    n_ref = steps_for(T, ref_dt)
    ref_sq = scheme_second_moment(basis, x0, ref_dt, n_ref, q)
    ref_exp = scheme_phi_exp(basis, x0, ref_dt, n_ref, q)
    ex_sq = exact_second_moment(basis, x0, T, q)
    ex_exp = exact_phi_exp(basis, x0, T, q)
    rows = []
    for dt in dts:
        N = steps_for(T, dt)
        sq = scheme_second_moment(basis, x0, dt, N, q)
        ex = scheme_phi_exp(basis, x0, dt, N, q)
        rows.append({
            "dt": dt,
            "N": N,
            "scheme_sq": sq,
            "exact_sq": ex_sq,
            "weak_sq_vs_exact": sq - ex_sq,
            "weak_sq_vs_ref": sq - ref_sq,
            "scheme_exp": ex,
            "exact_exp": ex_exp,
            "weak_exp_vs_exact": ex - ex_exp,
            "weak_exp_vs_ref": ex - ref_exp,
        })
    return rows
