"""Memory AMP iterations: GD-MAMP, its overflow-avoiding form, and CR-GD-MAMP.

GD and OA share one recursion; they differ only in how the moment
coefficients are evaluated (``NaiveMoments`` in plain doubles versus
``ScaledMoments`` over a chi table).  CR replaces the NLE-side damping and
the analytic MLE covariance by MLE-side damping over empirically tracked
covariances, saving one matvec per iteration.

Per-iteration matvec cost: GD/OA spend 2 in the MLE plus 1 for the residual
of the previous denoiser output (absent at t = 1), CR spends 2.
"""

from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg

from .denoiser import denoise_bg
from .errors import ConfigurationError, LedgerError, NumericalFailure, OverflowContractError
from .spectral import (
    chi_table_exact,
    chi_table_stochastic,
    estimate_extremes,
    naive_b_moments,
    scaled_w_array,
    scaled_wbar_array,
    theta0_for,
)

__all__ = [
    "MampConfig",
    "IterationRecord",
    "Trajectory",
    "NaiveMoments",
    "ScaledMoments",
    "theta_step",
    "xi_step",
    "solve_damping",
    "backoff_damping",
    "polarization_covariance",
    "mse_db",
    "run",
]

VAR_FLOOR = 1e-12
MAX_COND = 1e12
MSE_FLOOR_DB = -320.0


@dataclass
class MampConfig:
    T: int
    sigma2: float
    L: int = 3
    moment_backend: str = "scaled-exact"  # naive | scaled-exact | scaled-stochastic
    xi_mode: str | Callable = "simple"
    stop_tol: float = 0.0
    tau: int = 30
    probes: int = 1
    denoiser: Callable | None = None

    def __post_init__(self):
        if self.T < 1:
            raise ConfigurationError("T must be >= 1")
        if self.L < 1:
            raise ConfigurationError("damping length L must be >= 1")
        if self.moment_backend not in ("naive", "scaled-exact", "scaled-stochastic"):
            raise ConfigurationError(f"unknown moment backend {self.moment_backend!r}")


@dataclass
class IterationRecord:
    iter: int
    mse_db: float
    predicted_variance_db: float
    matvecs_cumulative: int
    damping_length_used: int
    flags: list = field(default_factory=list)
    time_ms: float = 0.0
    v_gamma: float = math.nan


@dataclass
class Trajectory:
    algorithm: str
    records: list = field(default_factory=list)
    status: str = "max-iters"
    failure_reason: str | None = None
    failure_iter: int | None = None
    failure_matvecs: int | None = None
    setup_matvecs: int = 0

    @property
    def failed(self):
        return self.status.startswith("numerical-failure")

    @property
    def mse_db(self):
        return np.array([r.mse_db for r in self.records])

    @property
    def matvecs(self):
        return np.array([r.matvecs_cumulative for r in self.records])

    @property
    def final_mse_db(self):
        return self.records[-1].mse_db if self.records else math.nan


def mse_db(x_hat, x_true):
    err = np.mean(np.abs(np.asarray(x_hat) - np.asarray(x_true)) ** 2)
    if err <= 0.0:
        return MSE_FLOOR_DB
    return max(10.0 * math.log10(err), MSE_FLOOR_DB)


def _db(v):
    return 10.0 * math.log10(v) if v > 0 else MSE_FLOOR_DB


def theta_step(lambda_dag, rho):
    """Relaxation ``(lambda_dag + rho)^-1``."""
    if lambda_dag <= 0:
        raise ValueError("lambda_dag must be positive")
    if rho < 0:
        raise LedgerError(f"rho must be non-negative, got {rho}")
    if math.isinf(rho):
        return 0.0
    return 1.0 / (lambda_dag + rho)


def xi_step(v_phi, sigma2, t=2):
    """Simplified MLE weight ``1 / (v_phi + sigma2)``; always 1 at t = 1."""
    if t == 1:
        return 1.0
    if not v_phi > 0:
        raise LedgerError(f"v_phi must be positive, got {v_phi}")
    return 1.0 / (v_phi + sigma2)


def _rho(sigma2, v):
    if not v > 0:
        raise LedgerError(f"damped NLE variance must be positive, got {v}")
    return sigma2 / v


# -- moment backends ---------------------------------------------------------

class NaiveMoments:
    """Moments ``w_k`` and weights ``vartheta_{t,i}`` held as plain doubles."""

    name = "naive"

    def __init__(self, eigs, n, lambda_dag, theta0, horizon):
        b, self.k_star = naive_b_moments(eigs, lambda_dag, horizon, n)
        with np.errstate(over="ignore", invalid="ignore"):
            self.w = lambda_dag * b[:-1] - b[1:]
        self.lambda_dag = lambda_dag
        self.theta0 = theta0
        self.horizon = horizon
        self.rows = []

    @property
    def w0(self):
        return float(self.w[0])

    def push(self, theta, xi):
        prev = self.rows[-1] if self.rows else np.empty(0)
        self.rows.append(np.append(prev * theta, xi))

    def _need(self, kmax):
        if kmax >= self.horizon:
            raise ConfigurationError(f"moment index {kmax} beyond table horizon {self.horizon}")
        bad = np.flatnonzero(~np.isfinite(self.w[: kmax + 1]))
        if bad.size:
            raise NumericalFailure(f"moment overflow at k={int(bad[0])}")

    def p(self, t):
        k = np.arange(t - 1, -1, -1)
        self._need(t - 1)
        with np.errstate(all="ignore"):
            return self.rows[t - 1] * self.w[k]

    def v_gamma(self, t, s, eps_t, eps_s, vbar, sigma2):
        a = np.arange(t - 1, -1, -1)
        b = np.arange(s - 1, -1, -1)
        self._need(a[0] + b[0] + 1)
        K = a[:, None] + b[None, :]
        w = self.w
        with np.errstate(all="ignore"):
            alpha = np.outer(self.rows[t - 1], self.rows[s - 1]) / (eps_t * eps_s)
            wbar = self.lambda_dag * w[K] - w[K + 1] - np.outer(w[a], w[b])
            return float(np.sum(alpha * (sigma2 * w[K] + _vbar_block(vbar, t, s) * wbar)))


class ScaledMoments:
    """Moment products evaluated through a chi table in sign/log arithmetic.

    ``rows[t-1][i-1]`` holds ``log vartheta_{t,i}`` (all weights are positive).
    """

    name = "scaled"

    def __init__(self, table):
        self.table = table
        self.horizon = table.horizon
        self.rows = []

    @property
    def w0(self):
        return self.table.w0

    def push(self, theta, xi):
        prev = self.rows[-1] if self.rows else np.empty(0)
        self.rows.append(np.append(prev + math.log(theta), math.log(xi)))

    def _need(self, kmax):
        if kmax >= self.horizon:
            raise ConfigurationError(f"moment index {kmax} beyond table horizon {self.horizon}")

    def p(self, t):
        k = np.arange(t - 1, -1, -1)
        self._need(t - 1)
        return scaled_w_array(self.rows[t - 1], k, self.table)

    def v_gamma(self, t, s, eps_t, eps_s, vbar, sigma2):
        a = np.arange(t - 1, -1, -1)
        b = np.arange(s - 1, -1, -1)
        self._need(a[0] + b[0] + 1)
        denom = eps_t * eps_s
        log_alpha = (self.rows[t - 1][:, None] + self.rows[s - 1][None, :]
                     - math.log(abs(denom)))
        sign = 1.0 if denom > 0 else -1.0
        K = a[:, None] + b[None, :]
        A = a[:, None] + 0 * b[None, :]
        B = 0 * a[:, None] + b[None, :]
        term_w = scaled_w_array(log_alpha, K, self.table, sign)
        term_wbar = scaled_wbar_array(log_alpha, A, B, self.table, sign)
        return float(np.sum(sigma2 * term_w + _vbar_block(vbar, t, s) * term_wbar))


def _vbar_block(vbar, t, s):
    """``vbar_{i,j} = vbar_{max(i,j)}`` for ``i <= t, j <= s`` (1-based list)."""
    idx = np.maximum.outer(np.arange(1, t + 1), np.arange(1, s + 1))
    return np.asarray(vbar)[idx]


# -- damping -----------------------------------------------------------------

def solve_damping(V, max_cond=MAX_COND):
    """``zeta = V^-1 1 / (1^T V^-1 1)`` and ``1 / (1^T V^-1 1)``.

    Returns ``None`` unless V is positive definite with condition number at
    most ``max_cond``.
    """
    V = np.asarray(V, dtype=np.float64)
    if not np.all(np.isfinite(V)):
        return None
    try:
        fac = linalg.cho_factor(V, lower=True)
    except linalg.LinAlgError:
        return None
    if V.shape[0] > 1 and np.linalg.cond(V) > max_cond:
        return None
    ones = np.ones(V.shape[0])
    x = linalg.cho_solve(fac, ones)
    s = float(ones @ x)
    if not (np.isfinite(s) and s > 0):
        return None
    return x / s, 1.0 / s


def backoff_damping(V, max_cond=MAX_COND):
    """Damping over the trailing window, dropping the oldest candidate on failure.

    Returns ``(zeta, vbar, length)`` with ``zeta`` of full window size (zeros
    for dropped candidates).  Terminal fallback puts all weight on the newest.
    """
    V = np.asarray(V, dtype=np.float64)
    n = V.shape[0]
    for start in range(n):
        res = solve_damping(V[start:, start:], max_cond)
        if res is not None:
            zeta = np.zeros(n)
            zeta[start:] = res[0]
            return zeta, res[1], n - start
    zeta = np.zeros(n)
    zeta[-1] = 1.0
    return zeta, float(V[-1, -1]), 1


def polarization_covariance(v_tt, v_ii, h_t, h_i):
    """Real part of the error covariance of ``h_t`` and ``h_i`` from their distance."""
    d = np.vdot(h_t - h_i, h_t - h_i).real / h_t.size
    return 0.5 * (v_tt + v_ii - d)


# -- driver ------------------------------------------------------------------

def _spectral_setup(problem, config):
    op = problem.op
    T = config.T
    horizon = 2 * T
    if config.moment_backend in ("naive", "scaled-exact"):
        if problem.eigs is None:
            raise ConfigurationError(f"{config.moment_backend} moments need the eigenvalues of A A^H")
        eigs = np.asarray(problem.eigs)
        lam_max, lam_min = float(eigs.max()), float(eigs.min())
    else:
        seeds = getattr(problem, "seeds", {}) or {}
        lam_max, lam_min = estimate_extremes(op, config.tau, seeds.get("extremes"))
    lambda_dag = 0.5 * (lam_max + lam_min)
    theta0 = theta0_for(lambda_dag, problem.sigma2)
    if config.moment_backend == "naive":
        backend = NaiveMoments(eigs, op.n, lambda_dag, theta0, horizon)
    elif config.moment_backend == "scaled-exact":
        backend = ScaledMoments(chi_table_exact(eigs, lambda_dag, theta0, horizon, op.n))
    else:
        seeds = getattr(problem, "seeds", {}) or {}
        table = chi_table_stochastic(op, lambda_dag, theta0, horizon, seeds.get("probe"),
                                     probes=config.probes, extremes=(lam_max, lam_min))
        backend = ScaledMoments(table)
    return lambda_dag, backend


def _xi(config, t, v, sigma2):
    if config.xi_mode == "simple":
        return xi_step(v, sigma2, t)
    if callable(config.xi_mode):
        return 1.0 if t == 1 else float(config.xi_mode(t, v, sigma2))
    raise ConfigurationError(f"unknown xi_mode {config.xi_mode!r}")


def run(algorithm, problem, config, monitor=None):
    """Run ``gd``, ``oa`` or ``cr`` on ``problem`` and return its Trajectory.

    ``problem`` needs ``op``, ``y``, ``sigma2``, ``eigs`` (or None), ``prior``
    and optionally ``x_true`` and ``seeds``.  ``monitor(t, info)`` receives
    the iteration's internal vectors and covariances.
    """
    if algorithm not in ("gd", "oa", "cr"):
        raise ConfigurationError(f"unknown algorithm {algorithm!r}")
    if algorithm == "oa" and config.moment_backend == "naive":
        raise ConfigurationError("the overflow-avoiding form needs a scaled moment backend")
    traj = Trajectory(algorithm)
    op = problem.op
    start = op.matvecs
    try:
        lambda_dag, backend = _spectral_setup(problem, config)
    except NumericalFailure as exc:
        traj.status = f"numerical-failure({exc.reason})"
        traj.failure_reason = exc.reason
        return traj
    traj.setup_matvecs = op.matvecs - start
    denoiser = config.denoiser
    if denoiser is None:
        prior = problem.prior
        denoiser = lambda r, v: denoise_bg(r, v, prior)  # noqa: E731
    loop = _run_cr if algorithm == "cr" else _run_gd
    try:
        loop(traj, problem, config, lambda_dag, backend, denoiser, start, monitor)
    except (NumericalFailure, OverflowContractError, LedgerError) as exc:
        reason = getattr(exc, "reason", str(exc))
        traj.status = f"numerical-failure({reason})"
        traj.failure_reason = reason
        traj.failure_iter = len(traj.records) + 1
        traj.failure_matvecs = op.matvecs - start
    return traj


def _finite_eps(p):
    eps = float(np.sum(p))
    if not np.all(np.isfinite(p)) or not math.isfinite(eps) or eps == 0.0:
        raise NumericalFailure("non-finite or zero normalizer eps_gamma")
    return eps


def _check_var(name, v):
    if not math.isfinite(v):
        raise NumericalFailure(f"non-finite {name}")
    if v <= 0:
        raise NumericalFailure(f"non-positive {name}")


def _record(traj, t, res, x_true, matvecs, used, flags, t0, v_gamma):
    mse = mse_db(res.x_post, x_true) if x_true is not None else math.nan
    rec = IterationRecord(
        iter=t,
        mse_db=mse,
        predicted_variance_db=_db(res.v_post),
        matvecs_cumulative=matvecs,
        damping_length_used=used,
        flags=flags + res.flags,
        time_ms=1e3 * (time.perf_counter() - t0),
        v_gamma=v_gamma,
    )
    traj.records.append(rec)
    return rec


def _converged(traj, config):
    if config.stop_tol <= 0 or len(traj.records) < 2:
        return False
    a, b = traj.records[-2], traj.records[-1]
    key = "mse_db" if math.isfinite(b.mse_db) else "predicted_variance_db"
    prev, cur = 10 ** (getattr(a, key) / 10), 10 ** (getattr(b, key) / 10)
    return abs(cur - prev) / prev < config.stop_tol


def _bootstrap_variance(y, n, delta, sigma2, w0):
    v = (np.vdot(y, y).real / n - delta * sigma2) / w0
    return max(v, VAR_FLOOR)


def _run_gd(traj, problem, config, lambda_dag, backend, denoiser, start, monitor):
    op, y, sigma2 = problem.op, problem.y, problem.sigma2
    x_true = getattr(problem, "x_true", None)
    M, N, T, L = op.m, op.n, config.T, config.L
    delta = M / N
    w0 = backend.w0
    dtype = np.result_type(op.dtype, y.dtype)

    X = np.zeros((T, N), dtype=dtype)          # X[t-1] = x_t (damped)
    zwin = deque([(1, y.astype(dtype))], maxlen=max(L - 1, 1))
    vbar = [math.nan, _bootstrap_variance(y, N, delta, sigma2, w0)]
    u = np.zeros(M, dtype=dtype)
    rhat = np.zeros(N, dtype=dtype)
    cand = None
    used = 1

    for t in range(1, T + 1):
        t0 = time.perf_counter()
        flags = []
        info = {}
        if t >= 2:
            zc = y - op.apply(cand)
            window = list(zwin)[-(L - 1):] if L > 1 else []
            idx = [k for k, _ in window]
            q = len(idx) + 1
            V = np.empty((q, q))
            for a, ka in enumerate(idx):
                for b, kb in enumerate(idx):
                    V[a, b] = vbar[max(ka, kb)]
            row = [(np.vdot(zk, zc).real / N - delta * sigma2) / w0 for _, zk in window]
            V[-1, :-1] = row
            V[:-1, -1] = row
            V[-1, -1] = (np.vdot(zc, zc).real / N - delta * sigma2) / w0
            zeta, vb, used = backoff_damping(V)
            if used < q:
                flags.append("backoff")
            x_t = zeta[-1] * cand
            z_t = zeta[-1] * zc
            for c, (k, zk) in zip(zeta[:-1], window):
                if c != 0.0:
                    x_t = x_t + c * X[k - 1]
                    z_t = z_t + c * zk
            if not vb > VAR_FLOOR:
                vb = VAR_FLOOR
                flags.append("vbar_clamped")
            X[t - 1] = x_t
            zwin.append((t, z_t))
            vbar.append(vb)
            info.update(V_damp=V[q - used:, q - used:], zeta=zeta[q - used:], v_phi_row=row)
        theta = theta_step(lambda_dag, _rho(sigma2, vbar[t]))
        xi = _xi(config, t, vbar[t], sigma2)

        u = theta * lambda_dag * u + xi * y - op.apply(theta * rhat + xi * X[t - 1])
        rhat = op.apply_adjoint(u)
        backend.push(theta, xi)
        p = backend.p(t)
        eps = _finite_eps(p)
        r = (rhat + p @ X[:t]) / eps
        vg = backend.v_gamma(t, t, eps, eps, vbar, sigma2)
        _check_var("v_gamma", vg)

        res = denoiser(r, vg)
        cand = res.x_orth
        _record(traj, t, res, x_true, op.matvecs - start, used, flags, t0, vg)
        if monitor is not None:
            info.update(r=r, x=X[t - 1], v_gamma=vg, vbar=vbar[t], theta=theta, xi=xi,
                        eps=eps, p=p, x_next_candidate=cand, v_post=res.v_post,
                        v_phi=res.v_phi, x_post=res.x_post)
            monitor(t, info)
        if _converged(traj, config):
            traj.status = "converged"
            return
    traj.status = "max-iters"


def _run_cr(traj, problem, config, lambda_dag, backend, denoiser, start, monitor):
    op, y, sigma2 = problem.op, problem.y, problem.sigma2
    x_true = getattr(problem, "x_true", None)
    M, N, T, L = op.m, op.n, config.T, config.L
    delta = M / N
    dtype = np.result_type(op.dtype, y.dtype)

    X = np.zeros((T, N), dtype=dtype)          # X[t-1] = x_t = phi_{t-1}(r_{t-1})
    v_phi = _bootstrap_variance(y, N, delta, sigma2, backend.w0)
    hwin = deque(maxlen=L)                     # (h_i, v_gamma_ii)
    Vwin = np.empty((0, 0))
    u = np.zeros(M, dtype=dtype)
    rhat = np.zeros(N, dtype=dtype)

    for t in range(1, T + 1):
        t0 = time.perf_counter()
        flags = []
        theta = theta_step(lambda_dag, _rho(sigma2, v_phi))
        xi = _xi(config, t, v_phi, sigma2)

        u = theta * lambda_dag * u + xi * y - op.apply(theta * rhat + xi * X[t - 1])
        rhat = op.apply_adjoint(u)
        backend.push(theta, xi)
        p = backend.p(t)
        eps = _finite_eps(p)
        h = (rhat + p @ X[:t]) / eps

        d = h - X[t - 1]
        vg = np.vdot(d, d).real / N - v_phi
        if not math.isfinite(vg):
            raise NumericalFailure("non-finite v_gamma")
        if vg < VAR_FLOOR:
            vg = VAR_FLOOR
            flags.append("v_gamma_clamped")

        keep = min(len(hwin), L - 1)
        old = list(hwin)[len(hwin) - keep:]
        q = keep + 1
        V = np.empty((q, q))
        V[:keep, :keep] = Vwin[Vwin.shape[0] - keep:, Vwin.shape[0] - keep:]
        for a, (h_i, v_ii) in enumerate(old):
            V[a, -1] = V[-1, a] = polarization_covariance(vg, v_ii, h, h_i)
        V[-1, -1] = vg
        hwin.append((h, vg))
        Vwin = V

        zeta, vgbar, used = backoff_damping(V)
        if used < q:
            flags.append("backoff")
        r = zeta[-1] * h
        for c, (h_i, _) in zip(zeta[:-1], old):
            if c != 0.0:
                r = r + c * h_i
        if not vgbar > VAR_FLOOR:
            vgbar = VAR_FLOOR
            flags.append("v_gamma_bar_clamped")

        res = denoiser(r, vgbar)
        if t < T:
            X[t] = res.x_orth
        _record(traj, t, res, x_true, op.matvecs - start, used, flags, t0, vgbar)
        if monitor is not None:
            monitor(t, dict(h=h, r=r, x=X[t - 1], v_gamma=vg, v_gamma_bar=vgbar,
                            v_phi=v_phi, V_damp=V[q - used:, q - used:], zeta=zeta[q - used:],
                            theta=theta, xi=xi, eps=eps, x_next=res.x_orth,
                            v_post=res.v_post, x_post=res.x_post, v_phi_next=res.v_phi))
        v_phi = res.v_phi
        if _converged(traj, config):
            traj.status = "converged"
            return
    traj.status = "max-iters"
