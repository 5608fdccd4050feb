"""Monte Carlo weak and strong error ladders with log-log rate fits.

Every rung of a ladder and the self-refined reference are driven by the same
fine Brownian path (coarsened per rung), so weak errors are estimated from
paired differences and strong errors from pathwise distances.  Per-path
results are produced in fixed path chunks and concatenated in path order, so
estimates do not depend on the number of workers.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import reduce
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import stats

from .integrator import StepKernel, steps_for
from .nemytskii import ModelSpec
from .noise import can_chain, coarsen_increments, standard_normals
from .spectral import EigenBasis, SpectralField

log = logging.getLogger(__name__)

DEFAULT_CHUNK = 250


# --------------------------------------------------------------------------
# test functionals


@dataclass(frozen=True)
class TestFunctional:
    name: str
    phi: Callable[[np.ndarray], np.ndarray]
    regularity_note: str
    lipschitz: float | None = None

    __test__ = False  # not a pytest class

    def __call__(self, x):
        coeffs = x.coeffs if isinstance(x, SpectralField) else np.asarray(x)
        return self.phi(coeffs)


def _phi_exp(c):
    return np.exp(-np.sum(c * c, axis=-1))


def _phi_coord(c):
    return np.sin(c[..., 0])


def _phi_sq(c):
    return np.sum(c * c, axis=-1)


PHI_EXP = TestFunctional("phi_exp", _phi_exp, "C^3_b: exp(-|x|^2)", lipschitz=math.sqrt(2.0) * math.exp(-0.5))
PHI_COORD = TestFunctional("phi_coord", _phi_coord, "C^3_b: sin of the first coordinate", lipschitz=1.0)
PHI_SQ = TestFunctional("phi_sq", _phi_sq, "unbounded |x|^2, not C^3_b; oracle checks only")

FUNCTIONALS = {t.name: t for t in (PHI_EXP, PHI_COORD, PHI_SQ)}


def get_functional(name: str) -> TestFunctional:
    try:
        return FUNCTIONALS[name]
    except KeyError:
        raise KeyError(f"unknown test functional {name!r}; available: {', '.join(FUNCTIONALS)}") from None


# --------------------------------------------------------------------------
# log-log fit


class LogLogFit(NamedTuple):
    slope: float
    slope_ci: tuple[float, float]
    intercept: float
    r_squared: float


def fit_loglog(dts, errors, stderrs, level: float = 0.95) -> LogLogFit:
    """Weighted least squares of ln(error) on ln(dt).

    Weights are the inverse delta-method variances (stderr/error)^2.  The
    interval uses the stated variances, widened by the reduced chi-square and a
    Student t quantile when the points scatter more than their error bars.
    With all stderrs zero the fit is ordinary least squares with a t interval.
    """
    dts = np.asarray(dts, dtype=float)
    errors = np.asarray(errors, dtype=float)
    stderrs = np.asarray(stderrs, dtype=float)
    if not (dts.shape == errors.shape == stderrs.shape):
        raise ValueError("dts, errors and stderrs must have equal lengths")
    n = dts.size
    if n < 3:
        raise ValueError(f"need at least 3 points to fit a slope, got {n}")
    if np.any(errors <= 0) or np.any(dts <= 0):
        raise ValueError("errors and step sizes must be positive")
    x = np.log(dts)
    y = np.log(errors)
    rel_var = (stderrs / errors) ** 2
    known = bool(np.any(rel_var > 0))
    if known:
        floor = rel_var[rel_var > 0].min()
        w = 1.0 / np.where(rel_var > 0, rel_var, floor)
    else:
        w = np.ones(n)
    X = np.column_stack([x, np.ones(n)])
    XtW = X.T * w
    cov = np.linalg.inv(XtW @ X)
    slope, intercept = cov @ (XtW @ y)
    resid = y - (slope * x + intercept)
    chi2_red = float(np.sum(w * resid**2) / (n - 2))
    t_q = stats.t.ppf(0.5 + level / 2, n - 2)
    if known:
        z_q = stats.norm.ppf(0.5 + level / 2)
        half = max(z_q * math.sqrt(cov[0, 0]), t_q * math.sqrt(chi2_red * cov[0, 0]))
    else:
        half = t_q * math.sqrt(chi2_red * cov[0, 0])
    ybar = np.sum(w * y) / np.sum(w)
    ss_tot = float(np.sum(w * (y - ybar) ** 2))
    ss_res = float(np.sum(w * resid**2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    r2 = min(1.0, max(0.0, r2))
    return LogLogFit(float(slope), (float(slope - half), float(slope + half)), float(intercept), r2)


# --------------------------------------------------------------------------
# reports


@dataclass
class RateReport:
    kind: str
    dts: np.ndarray
    errors: np.ndarray
    means: np.ndarray
    stderrs: np.ndarray
    n_samples: int
    resolved: np.ndarray
    slope: float
    slope_ci: tuple[float, float]
    intercept: float
    r_squared: float
    ref_dt: float
    meta: dict = field(default_factory=dict)

    @property
    def excluded(self) -> int:
        return int(np.sum(~self.resolved))

    @property
    def fitted(self) -> bool:
        return not math.isnan(self.slope)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "dts": self.dts.tolist(),
            "errors": self.errors.tolist(),
            "means": self.means.tolist(),
            "stderrs": self.stderrs.tolist(),
            "n_samples": self.n_samples,
            "resolved": [bool(r) for r in self.resolved],
            "excluded": self.excluded,
            "slope": None if not self.fitted else self.slope,
            "slope_ci": None if not self.fitted else list(self.slope_ci),
            "intercept": None if not self.fitted else self.intercept,
            "r_squared": None if not self.fitted else self.r_squared,
            "ref_dt": self.ref_dt,
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dt", "error", "stderr", "n_samples", "resolved_flag"])
        for dt, e, s, r in zip(self.dts, self.errors, self.stderrs, self.resolved):
            w.writerow([f"{dt:.17g}", f"{e:.17g}", f"{s:.17g}", self.n_samples, int(bool(r))])
        return buf.getvalue()


def _report(kind, dts, samples, ref_dt, meta) -> RateReport:
    """Build a report from per-path samples of shape (M, rungs)."""
    M = samples.shape[0]
    means = samples.mean(axis=0)
    if M > 1:
        stderrs = samples.std(axis=0, ddof=1) / math.sqrt(M)
    else:
        stderrs = np.zeros_like(means)
    errors = np.abs(means)
    return _finish(kind, dts, errors, means, stderrs, M, ref_dt, meta)


def _finish(kind, dts, errors, means, stderrs, M, ref_dt, meta) -> RateReport:
    dts = np.asarray(dts, dtype=float)
    resolved = (errors > 0) & (errors >= 2.0 * stderrs)
    slope, ci, icept, r2 = math.nan, (math.nan, math.nan), math.nan, math.nan
    if resolved.sum() >= 3:
        slope, ci, icept, r2 = fit_loglog(dts[resolved], errors[resolved], stderrs[resolved])
    elif meta is not None:
        meta = dict(meta, fit_note=f"only {int(resolved.sum())} resolved points, no slope fitted")
    return RateReport(kind, dts, errors, means, stderrs, M, resolved, slope, ci, icept, r2, ref_dt, meta)


# --------------------------------------------------------------------------
# coupled ladder engine


def reference_dt(dts: Sequence[float], ref_refine: int) -> float:
    if ref_refine < 0:
        raise ValueError("ref_refine must be nonnegative")
    return min(dts) / 2**ref_refine


def rung_factors(T: float, dts: Sequence[float], ref_refine: int) -> tuple[float, int, list[int]]:
    """Reference step, reference step count and per-rung coarsening factors.

    Raises ValueError naming the first rung that does not divide T or is not a
    whole multiple of the reference step.
    """
    if len(dts) == 0:
        raise ValueError("empty dt ladder")
    for dt in dts:
        try:
            steps_for(T, dt)
        except ValueError as exc:
            raise ValueError(f"ladder rung dt={dt!r}: {exc}") from None
    ref = reference_dt(dts, ref_refine)
    n_ref = steps_for(T, ref)
    factors = []
    for dt in dts:
        q = dt / ref
        F = int(round(q))
        if abs(q - F) > 1e-9 * q or n_ref % F:
            raise ValueError(f"ladder rung dt={dt!r} is not a whole multiple of the reference step {ref!r}")
        factors.append(F)
    return ref, n_ref, factors


def _block_size(n_ref: int, factors: Sequence[int], target: int = 256) -> int:
    base = reduce(math.lcm, factors, 1)
    B = base
    while B * 2 <= max(target, base) and n_ref % (B * 2) == 0:
        B *= 2
    return B


@dataclass(frozen=True)
class _LadderTask:
    basis: tuple
    model: ModelSpec
    x0: np.ndarray
    T: float
    ref_dt: float
    n_ref: int
    factors: tuple
    P: int
    seed: int
    start: int
    stop: int
    phi: TestFunctional | None


def _ladder_chunk(task: _LadderTask) -> tuple[np.ndarray | None, np.ndarray]:
    """Simulate paths [start, stop) on every rung plus the reference.

    Returns phi at the final state per (path, rung-or-reference) and the
    H-norm distance of each rung's final state to the reference's.
    """
    basis = EigenBasis(*task.basis)
    m = basis.m
    C = task.stop - task.start
    factors = list(task.factors) + [1]
    kernels = [StepKernel(basis, task.model, task.ref_dt * F, task.P) for F in factors]
    states = [np.broadcast_to(task.x0, (C, m)).copy() for _ in factors]
    B = _block_size(task.n_ref, factors)
    sqdt = math.sqrt(task.ref_dt)
    noise_free = kernels[-1].noise_free
    z = np.zeros((C, B, m))
    order = sorted(range(len(factors)), key=lambda r: factors[r])
    for k0 in range(0, task.n_ref, B):
        if not noise_free:
            standard_normals(task.seed, range(task.start, task.stop), m, range(k0, k0 + B), scale=sqdt, out=z)
        prev_F, prev = 1, z
        for r in order:
            F = factors[r]
            if F == prev_F:
                inc = prev
            elif can_chain(prev_F, F):
                inc = coarsen_increments(prev, F // prev_F, axis=1)
            else:
                inc = coarsen_increments(z, F, axis=1)
            prev_F, prev = F, inc
            kernel = kernels[r]
            x = states[r]
            for s in range(inc.shape[1]):
                x = kernel(x, inc[:, s])
            states[r] = x
    ref = states[-1]
    dist = np.stack([np.sqrt(np.sum((s - ref) ** 2, axis=-1)) for s in states[:-1]], axis=1)
    phis = None if task.phi is None else np.stack([task.phi.phi(s) for s in states], axis=1)
    return phis, dist


def _map_chunks(fn, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        out = []
        for i, t in enumerate(tasks):
            out.append(fn(t))
            log.info("chunk %d/%d done", i + 1, len(tasks))
        return out
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _chunks(M: int, chunk: int) -> list[tuple[int, int]]:
    return [(s, min(M, s + chunk)) for s in range(0, M, chunk)]


@dataclass
class LadderSamples:
    """Per-path outputs of a coupled ladder run, rows ordered by path index."""

    dts: np.ndarray
    ref_dt: float
    phi: np.ndarray | None
    dist: np.ndarray


def simulate_ladder(model: ModelSpec, x0: SpectralField, T: float, dts: Sequence[float], M: int,
                    ref_refine: int = 3, seed: int = 0, phi: TestFunctional | None = None,
                    P: int | None = None, workers: int = 1, chunk: int = DEFAULT_CHUNK,
                    path_offset: int = 0) -> LadderSamples:
    if M < 1:
        raise ValueError("M must be at least 1")
    ref, n_ref, factors = rung_factors(T, dts, ref_refine)
    basis = x0.basis
    P = 2 * basis.m if P is None else P
    tasks = [
        _LadderTask((basis.a, basis.b, basis.m), model, np.array(x0.coeffs), T, ref, n_ref, tuple(factors),
                    P, seed, path_offset + s, path_offset + e, phi)
        for s, e in _chunks(M, chunk)
    ]
    log.info("ladder: %d paths, %d rungs, reference dt=%g (%d steps), %d chunks",
             M, len(dts), ref, n_ref, len(tasks))
    results = _map_chunks(_ladder_chunk, tasks, workers)
    phis = None if phi is None else np.concatenate([r[0] for r in results])
    dist = np.concatenate([r[1] for r in results])
    return LadderSamples(np.asarray(dts, dtype=float), ref, phis, dist)


def _meta(model, x0, T, dts, ref_refine, seed, P, extra=None):
    d = {
        "model": model.name,
        "model_params": model.params,
        "sigma_kind": model.sigma_kind,
        "curvature_condition": model.curvature_condition,
        "T": T,
        "m": x0.basis.m,
        "P": 2 * x0.basis.m if P is None else P,
        "domain": [x0.basis.a, x0.basis.b],
        "ref_refine": ref_refine,
        "seed": seed,
    }
    if extra:
        d.update(extra)
    return d


def weak_report(samples: LadderSamples, M: int | None = None, paired: bool = True,
                unpaired_ref: np.ndarray | None = None, meta: dict | None = None) -> RateReport:
    phi = samples.phi[:M] if M else samples.phi
    if paired:
        diffs = phi[:, :-1] - phi[:, -1:]
        return _report("weak", samples.dts, diffs, samples.ref_dt, meta)
    if unpaired_ref is None:
        raise ValueError("unpaired estimate needs an independent reference arm")
    n = phi.shape[0]
    arm = phi[:, :-1]
    means = arm.mean(axis=0) - unpaired_ref.mean()
    stderrs = np.sqrt(arm.var(axis=0, ddof=1) / n + unpaired_ref.var(ddof=1) / unpaired_ref.size)
    return _finish("weak", samples.dts, np.abs(means), means, stderrs, n, samples.ref_dt, meta)


def strong_report(samples: LadderSamples, M: int | None = None, meta: dict | None = None) -> RateReport:
    dist = samples.dist[:M] if M else samples.dist
    return _report("strong", samples.dts, dist, samples.ref_dt, meta)


def weak_error_ladder(model: ModelSpec, x0: SpectralField, T: float, phi: TestFunctional,
                      dts: Sequence[float], M: int, ref_refine: int = 3, seed: int = 0,
                      P: int | None = None, workers: int = 1, paired: bool = True,
                      chunk: int = DEFAULT_CHUNK) -> RateReport:
    """|E phi(X_N) - E phi(X_ref)| per rung from M common-random-number pairs.

    With ``paired=False`` the reference arm is taken from the next M path
    indices instead, which is the independent-arms estimator on equal budget.
    """
    samples = simulate_ladder(model, x0, T, dts, M, ref_refine, seed, phi, P, workers, chunk)
    meta = _meta(model, x0, T, dts, ref_refine, seed, P, {"phi": phi.name, "paired": paired})
    if paired:
        return weak_report(samples, meta=meta)
    other = simulate_ladder(model, x0, T, dts, M, ref_refine, seed, phi, P, workers, chunk, path_offset=M)
    return weak_report(samples, paired=False, unpaired_ref=other.phi[:, -1], meta=meta)


def strong_error_ladder(model: ModelSpec, x0: SpectralField, T: float, dts: Sequence[float], M: int,
                        ref_refine: int = 3, seed: int = 0, P: int | None = None, workers: int = 1,
                        chunk: int = DEFAULT_CHUNK) -> RateReport:
    """E|X_N - X_ref| per rung over M coupled paths."""
    samples = simulate_ladder(model, x0, T, dts, M, ref_refine, seed, None, P, workers, chunk)
    return strong_report(samples, meta=_meta(model, x0, T, dts, ref_refine, seed, P))


def error_ladders(model: ModelSpec, x0: SpectralField, T: float, phi: TestFunctional,
                  dts: Sequence[float], M_weak: int, M_strong: int, ref_refine: int = 3,
                  seed: int = 0, P: int | None = None, workers: int = 1,
                  chunk: int = DEFAULT_CHUNK) -> tuple[RateReport, RateReport]:
    """Weak and strong ladders from one simulation of max(M_weak, M_strong) paths.

    Path p is identical in both, so each report equals its stand-alone ladder.
    """
    M = max(M_weak, M_strong)
    samples = simulate_ladder(model, x0, T, dts, M, ref_refine, seed, phi, P, workers, chunk)
    weak = weak_report(samples, M_weak, meta=_meta(model, x0, T, dts, ref_refine, seed, P,
                                                    {"phi": phi.name, "paired": True}))
    strong = strong_report(samples, M_strong, meta=_meta(model, x0, T, dts, ref_refine, seed, P))
    return weak, strong


# --------------------------------------------------------------------------
# moments


@dataclass
class MomentProfile:
    times: np.ndarray
    moments: np.ndarray
    stderrs: np.ndarray
    order: int
    n_samples: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "t", f"moment_{self.order}", "stderr", "n_samples"])
        for k, (t, v, s) in enumerate(zip(self.times, self.moments, self.stderrs)):
            w.writerow([k, f"{t:.17g}", f"{v:.17g}", f"{s:.17g}", self.n_samples])
        return buf.getvalue()


@dataclass(frozen=True)
class _MomentTask:
    basis: tuple
    model: ModelSpec
    x0: np.ndarray
    dt: float
    N: int
    P: int
    seed: int
    start: int
    stop: int
    order: int


def _moment_chunk(task: _MomentTask) -> np.ndarray:
    basis = EigenBasis(*task.basis)
    m = basis.m
    C = task.stop - task.start
    kernel = StepKernel(basis, task.model, task.dt, task.P)
    x = np.broadcast_to(task.x0, (C, m)).copy()
    out = np.empty((C, task.N + 1))
    half = task.order / 2
    out[:, 0] = np.sum(x * x, axis=-1) ** half
    B = _block_size(task.N, [1], target=128)
    z = np.zeros((C, B, m))
    sq = math.sqrt(task.dt)
    k = 0
    for k0 in range(0, task.N, B):
        if not kernel.noise_free:
            standard_normals(task.seed, range(task.start, task.stop), m, range(k0, k0 + B), scale=sq, out=z)
        for s in range(B):
            x = kernel(x, z[:, s])
            k += 1
            out[:, k] = np.sum(x * x, axis=-1) ** half
    return out


def moment_probe(model: ModelSpec, x0: SpectralField, T: float, dt: float, M: int, l: int = 2,
                 seed: int = 0, P: int | None = None, workers: int = 1,
                 chunk: int = DEFAULT_CHUNK) -> MomentProfile:
    """Per-step Monte Carlo estimates of E|X_k|^l with standard errors."""
    if l not in (2, 4):
        raise ValueError("moment order l must be 2 or 4")
    N = steps_for(T, dt)
    basis = x0.basis
    P = 2 * basis.m if P is None else P
    tasks = [_MomentTask((basis.a, basis.b, basis.m), model, np.array(x0.coeffs), dt, N, P, seed, s, e, l)
             for s, e in _chunks(M, chunk)]
    vals = np.concatenate(_map_chunks(_moment_chunk, tasks, workers))
    moments = vals.mean(axis=0)
    stderrs = vals.std(axis=0, ddof=1) / math.sqrt(M) if M > 1 else np.zeros_like(moments)
    return MomentProfile(np.arange(N + 1) * dt, moments, stderrs, l, M)
