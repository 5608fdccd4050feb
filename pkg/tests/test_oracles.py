"""Closed forms for the linear additive case, checked against independent evaluations."""

import numpy as np
import pytest
from scipy.integrate import quad

from sheat.integrator import ou_moments
from sheat.oracles import (
    exact_phi_exp,
    exact_second_moment,
    gaussian_phi_exp,
    oracle_table,
    scheme_phi_exp,
    scheme_second_moment,
    scheme_second_moment_path,
    scheme_variance,
    scheme_variance_path,
)
from sheat.spectral import build_basis

# 40-digit evaluations of the geometric-sum closed forms on (0, 1), m = 64, T = 1, dt = 2^-6
FROZEN_SUMVAR_X0_ZERO = 0.06318855636551274244
FROZEN_SQ_X0_E1 = 0.06318856701718261108
FROZEN_EXACT_SQ_X0_E1 = 0.08254791607259452108
FROZEN_PHI_EXP_X0_E1 = 0.94082342987750350071

BASIS = build_basis(0, 1, 64)
E1 = np.eye(64)[0]


def test_frozen_values():
    assert scheme_second_moment(BASIS, np.zeros(64), 2**-6, 64) == pytest.approx(FROZEN_SUMVAR_X0_ZERO, rel=1e-13)
    assert scheme_second_moment(BASIS, E1, 2**-6, 64) == pytest.approx(FROZEN_SQ_X0_E1, rel=1e-13)
    assert exact_second_moment(BASIS, E1, 1.0) == pytest.approx(FROZEN_EXACT_SQ_X0_E1, rel=1e-13)
    assert scheme_phi_exp(BASIS, E1, 2**-6, 64) == pytest.approx(FROZEN_PHI_EXP_X0_E1, rel=1e-13)


@pytest.mark.parametrize("dt,N,q", [(0.1, 7, 1.0), (2**-6, 64, 0.25), (1e-3, 300, 2.0)])
def test_variance_recursion_is_geometric_sum(dt, N, q):
    r2 = (1 + dt * BASIS.lam) ** -2.0
    closed = q * dt * r2 * (1 - r2**N) / (1 - r2)
    assert np.allclose(scheme_variance(BASIS, dt, N, q), closed, rtol=1e-12)
    path = scheme_variance_path(BASIS, dt, N, q)
    assert np.array_equal(path[0], np.zeros(64)) and np.allclose(path[-1], closed, rtol=1e-12)
    sq = scheme_second_moment_path(BASIS, E1, dt, N, q)
    assert sq[-1] == pytest.approx(scheme_second_moment(BASIS, E1, dt, N, q), rel=1e-13)


def test_scheme_variance_tends_to_ou():
    _, var = ou_moments(BASIS, np.zeros(64), 1.0, 1.0)
    errs = [np.abs(scheme_variance(BASIS, 2.0**-j, 2**j).sum() - var.sum()) for j in (6, 8, 10)]
    assert errs[0] > errs[1] > errs[2]


@pytest.mark.parametrize("mu,v", [(0.0, 0.3), (0.7, 0.1), (-1.2, 2.0)])
def test_gaussian_phi_exp_one_dimension(mu, v):
    dens = lambda x: np.exp(-((x - mu) ** 2) / (2 * v)) / np.sqrt(2 * np.pi * v)
    num = quad(lambda x: np.exp(-x * x) * dens(x), -np.inf, np.inf, epsabs=1e-14)[0]
    assert gaussian_phi_exp(np.array([mu]), np.array([v])) == pytest.approx(num, rel=1e-10)


def test_gaussian_phi_exp_factorizes():
    mu, v = np.array([0.5, -0.2, 0.0]), np.array([0.1, 0.4, 0.9])
    parts = np.prod([gaussian_phi_exp(mu[i:i + 1], v[i:i + 1]) for i in range(3)])
    assert gaussian_phi_exp(mu, v) == pytest.approx(parts, rel=1e-14)


def test_table_columns_consistent():
    dts = [2.0**-j for j in range(3, 7)]
    rows = oracle_table(BASIS, E1, 1.0, dts, 2.0**-9)
    ex = exact_phi_exp(BASIS, E1, 1.0)
    for r in rows:
        assert r["exact_exp"] == ex
        assert r["weak_exp_vs_exact"] == pytest.approx(r["scheme_exp"] - ex, abs=1e-15)
        assert r["N"] * r["dt"] == 1.0
    weak = np.abs([r["weak_exp_vs_ref"] for r in rows])
    assert np.all(np.diff(weak) < 0)
