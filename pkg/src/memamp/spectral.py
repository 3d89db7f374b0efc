"""Extreme eigenvalues and overflow-safe spectral moments.

All orthogonalization and state-evolution coefficients of the memory AMP
family are built from the normalized traces

    b_k = tr(B^k) / N,    w_k = tr(A^H B^k A) / N = lambda_dag b_k - b_{k+1},

with ``B = lambda_dag I - A A^H``.  Once the spectral radius of B exceeds
one these grow geometrically and overflow double precision after a few
hundred terms.  The tables here store instead ``chi_k = theta0^k w_k``,
which is bounded by ``delta (lambda_dag + 1/theta0)``, and recover any
product ``alpha * w_k`` with sign/log-magnitude arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import comb

from .errors import DegenerateSpectrumError, OverflowContractError

__all__ = [
    "ScaledScalar",
    "SpectralTable",
    "estimate_extremes",
    "chi_table_exact",
    "chi_table_stochastic",
    "scaled_w",
    "scaled_wbar",
    "scaled_w_array",
    "scaled_wbar_array",
    "naive_b_moments",
    "b_from_power_traces",
    "theta0_for",
]

# exp() of anything above this is within a factor ~e^9 of DBL_MAX
EXP_LIMIT = 700.0


@dataclass(frozen=True)
class ScaledScalar:
    """A real number stored as ``sign * exp(log_mag)``."""

    sign: int
    log_mag: float

    @classmethod
    def of(cls, x):
        x = float(x)
        if x == 0.0:
            return cls(0, -math.inf)
        return cls(1 if x > 0 else -1, math.log(abs(x)))

    @classmethod
    def from_log(cls, log_mag, sign=1):
        return cls(int(sign), float(log_mag))

    def value(self):
        if self.sign == 0:
            return 0.0
        return self.sign * math.exp(self.log_mag)

    def __mul__(self, other):
        if not isinstance(other, ScaledScalar):
            other = ScaledScalar.of(other)
        if self.sign == 0 or other.sign == 0:
            return ScaledScalar(0, -math.inf)
        return ScaledScalar(self.sign * other.sign, self.log_mag + other.log_mag)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, ScaledScalar):
            other = ScaledScalar.of(other)
        if other.sign == 0:
            raise ZeroDivisionError("division by a zero ScaledScalar")
        if self.sign == 0:
            return self
        return ScaledScalar(self.sign * other.sign, self.log_mag - other.log_mag)

    def __neg__(self):
        return ScaledScalar(-self.sign, self.log_mag)


@dataclass(frozen=True)
class SpectralTable:
    lambda_max: float
    lambda_min: float
    lambda_dag: float
    theta0: float
    chi: np.ndarray
    source: str
    delta: float

    @property
    def horizon(self):
        return self.chi.size

    @property
    def log_theta0(self):
        return math.log(self.theta0)

    @property
    def bound(self):
        """Upper bound on every ``|chi_k|``."""
        return self.delta * (self.lambda_dag + 1.0 / self.theta0)

    @property
    def w0(self):
        return float(self.chi[0])


def theta0_for(lambda_dag, sigma2):
    return 1.0 / (lambda_dag + sigma2)


def _random_vector(rng, size, field):
    if field == "complex":
        return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / math.sqrt(2)
    return rng.standard_normal(size)


def estimate_extremes(op, tau=30, seed=None):
    """Power-iteration estimates of the extreme eigenvalues of ``A A^H``.

    The largest eigenvalue's Rayleigh quotient is inflated by 5% so that the
    estimate upper-bounds the truth; the smallest comes from power iteration
    on ``lambda_max_hat I - A A^H`` and is clamped at zero.  Uses at most
    ``2 * tau + 2`` matvecs.
    """
    if tau < 10:
        raise ValueError(f"tau must be >= 10, got {tau}")
    rng = np.random.default_rng(seed)
    steps_max = tau + 1 - tau // 2
    steps_min = tau // 2

    v = _random_vector(rng, op.m, op.field)
    v /= np.linalg.norm(v)
    rq = 0.0
    for _ in range(steps_max):
        Av = op.apply(op.apply_adjoint(v))
        rq = float(np.real(np.vdot(v, Av)))
        nrm = np.linalg.norm(Av)
        if nrm == 0.0:
            raise DegenerateSpectrumError("A A^H annihilates the probe; operator looks zero")
        v = Av / nrm
    if rq <= 0.0:
        raise DegenerateSpectrumError("non-positive Rayleigh quotient for A A^H")
    lam_max = 1.05 * rq

    v = _random_vector(rng, op.m, op.field)
    v /= np.linalg.norm(v)
    top = 0.0
    for _ in range(steps_min):
        Sv = lam_max * v - op.apply(op.apply_adjoint(v))
        top = float(np.real(np.vdot(v, Sv)))
        nrm = np.linalg.norm(Sv)
        if nrm == 0.0:
            break
        v = Sv / nrm
    lam_min = min(max(lam_max - top, 0.0), lam_max)
    return lam_max, lam_min


def chi_table_exact(eigs, lambda_dag, theta0, horizon, n):
    """``chi_k`` for ``0 <= k < horizon`` from the eigenvalues of ``A A^H``.

    Each eigenvalue contributes ``lambda_j * s_j^k * exp(k (log|lambda_dag -
    lambda_j| + log theta0)) / n``; the log term is advanced once per k so the
    whole table costs O(len(eigs) * horizon).  Eigenvalues equal to
    ``lambda_dag`` contribute only to ``chi_0``.
    """
    eigs = np.asarray(eigs, dtype=np.float64)
    if np.any(eigs < 0):
        raise ValueError("eigenvalues of A A^H must be non-negative")
    if theta0 <= 0:
        raise ValueError("theta0 must be positive")
    lam_b = lambda_dag - eigs
    live = lam_b != 0.0
    weight = eigs[live]
    sgn = np.sign(lam_b[live])
    step = np.log(np.abs(lam_b[live])) + math.log(theta0)

    chi = np.empty(horizon)
    chi[0] = eigs.sum() / n
    log_term = np.zeros(weight.size)
    sign_term = np.ones(weight.size)
    for k in range(1, horizon):
        log_term += step
        sign_term *= sgn
        chi[k] = np.sum(weight * sign_term * np.exp(log_term)) / n
    return SpectralTable(
        lambda_max=float(eigs.max()),
        lambda_min=float(eigs.min()),
        lambda_dag=float(lambda_dag),
        theta0=float(theta0),
        chi=chi,
        source="exact",
        delta=eigs.size / n,
    )


def chi_table_stochastic(op, lambda_dag, theta0, horizon, seed=None, probes=1,
                         extremes=(math.nan, math.nan)):
    """Probe-vector estimate of ``chi_k`` needing no eigenvalues.

    With ``hbar_0 = A h_0``, ``h_0 ~ N(0, I/N)`` and ``hbar_i = theta0 B
    hbar_{i-1}``, the inner product ``hbar_i^H hbar_{k-i}`` with
    ``i = ceil(k/2)`` concentrates on ``chi_k``.  One probe over a horizon of
    ``2T`` costs ``2T + 1`` matvecs.
    """
    rng = np.random.default_rng(seed)
    n_steps = (horizon - 1 + 1) // 2  # ceil((horizon - 1) / 2)
    chi = np.zeros(horizon)
    for _ in range(probes):
        h0 = _random_vector(rng, op.n, op.field) / math.sqrt(op.n)
        hb = np.empty((n_steps + 1, op.m), dtype=np.result_type(h0.dtype, np.float64))
        hb[0] = op.apply(h0)
        for i in range(1, n_steps + 1):
            prev = hb[i - 1]
            hb[i] = theta0 * (lambda_dag * prev - op.apply(op.apply_adjoint(prev)))
        for k in range(horizon):
            i = (k + 1) // 2
            chi[k] += np.real(np.vdot(hb[i], hb[k - i]))
    chi /= probes
    lam_max, lam_min = extremes
    return SpectralTable(
        lambda_max=float(lam_max),
        lambda_min=float(lam_min),
        lambda_dag=float(lambda_dag),
        theta0=float(theta0),
        chi=chi,
        source="stochastic",
        delta=op.m / op.n,
    )


def _check_exponent(expo):
    worst = np.max(expo) if np.ndim(expo) else expo
    if worst > EXP_LIMIT:
        raise OverflowContractError(
            f"scaled moment exponent {float(worst):.1f} exceeds {EXP_LIMIT}; "
            "coefficient does not decay fast enough"
        )


def scaled_w_array(log_alpha, k, table, sign=1):
    """Vectorized ``alpha * w_k`` for ``alpha = sign * exp(log_alpha)``."""
    k = np.asarray(k)
    expo = np.asarray(log_alpha, dtype=np.float64) - k * table.log_theta0
    _check_exponent(expo)
    return sign * np.exp(expo) * table.chi[k]


def scaled_wbar_array(log_alpha, i, j, table, sign=1):
    """Vectorized ``alpha * wbar_{i,j}``, ``wbar_{i,j} = lambda_dag w_{i+j} - w_{i+j+1} - w_i w_j``."""
    i = np.asarray(i)
    j = np.asarray(j)
    s = i + j
    chi = table.chi
    expo = np.asarray(log_alpha, dtype=np.float64) - s * table.log_theta0
    _check_exponent(expo)
    inner = table.lambda_dag * chi[s] - chi[s + 1] / table.theta0 - chi[i] * chi[j]
    return sign * np.exp(expo) * inner


def scaled_w(alpha, k, table):
    if not isinstance(alpha, ScaledScalar):
        alpha = ScaledScalar.of(alpha)
    if alpha.sign == 0:
        return 0.0
    return float(scaled_w_array(alpha.log_mag, k, table, alpha.sign))


def scaled_wbar(alpha, i, j, table):
    if not isinstance(alpha, ScaledScalar):
        alpha = ScaledScalar.of(alpha)
    if alpha.sign == 0:
        return 0.0
    return float(scaled_wbar_array(alpha.log_mag, i, j, table, alpha.sign))


def naive_b_moments(eigs, lambda_dag, horizon, n):
    """Direct double-precision ``b_k`` for ``0 <= k <= horizon``.

    Returns ``(b, k_star)`` where ``k_star`` is the first index with a
    non-finite value, or ``None``.  Overflow is expected and not an error.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    lam_b = lambda_dag - np.asarray(eigs, dtype=np.float64)
    b = np.empty(horizon + 1)
    power = np.ones_like(lam_b)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(horizon + 1):
            b[k] = np.sum(power) / n
            power = power * lam_b
    bad = np.flatnonzero(~np.isfinite(b))
    k_star = int(bad[0]) if bad.size else None
    return b, k_star


def b_from_power_traces(power_traces, lambda_dag, k):
    """Binomial expansion ``b_k = sum_i C(k,i) (-1)^i lambda_dag^(k-i) lambda_i``.

    ``power_traces[i]`` is ``tr((A A^H)^i) / N``.  Cross-check only; it
    cancels catastrophically for large k.
    """
    i = np.arange(k + 1)
    coeff = comb(k, i) * (-1.0) ** i * lambda_dag ** (k - i)
    return float(np.sum(coeff * np.asarray(power_traces)[: k + 1]))
