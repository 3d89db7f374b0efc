"""Bernoulli-Gaussian MMSE denoiser and signal sampler."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

__all__ = ["BgPrior", "DenoiseResult", "denoise_bg", "bg_posterior", "sample_bg",
           "V_PHI_MIN", "V_PHI_MAX"]

V_PHI_MIN = 1e-12
V_PHI_MAX = 1e6


@dataclass(frozen=True)
class BgPrior:
    """Entries are 0 w.p. ``1 - mu`` and ``N(0, 1/mu)`` otherwise (unit variance).

    For the complex field the real and imaginary parts are independent
    copies scaled by ``1/sqrt(2)``.
    """

    mu: float
    field: str = "real"

    def __post_init__(self):
        if not 0.0 < self.mu <= 1.0:
            raise ValueError(f"mu must lie in (0, 1], got {self.mu}")
        if self.field not in ("real", "complex"):
            raise ValueError(f"unknown field {self.field!r}")


@dataclass
class DenoiseResult:
    x_post: np.ndarray
    v_post: float
    x_orth: np.ndarray
    v_phi: float
    flags: list = field(default_factory=list)


def bg_posterior(r, v, mu, slab_var):
    """Entrywise posterior mean and variance of a real spike-and-slab channel.

    Model: ``x = 0`` w.p. ``1 - mu``, ``x ~ N(0, slab_var)`` w.p. ``mu``,
    observed through ``r = x + N(0, v)``.
    """
    r = np.asarray(r, dtype=np.float64)
    tot = slab_var + v
    gain = slab_var / tot
    if mu >= 1.0:
        pi = np.ones_like(r)
    else:
        # log-odds of slab vs spike
        llr = (math.log(mu / (1.0 - mu)) + 0.5 * math.log(v / tot)
               + 0.5 * r**2 * (1.0 / v - 1.0 / tot))
        pi = expit(llr)
    m_slab = gain * r
    mean = pi * m_slab
    var = pi * (gain * v + m_slab**2) - mean**2
    return mean, np.maximum(var, 0.0)


def denoise_bg(r, v_in, prior):
    """MMSE denoising of ``r = x + noise(v_in)`` plus the divergence-free output.

    ``x_orth = v_phi (x_post / v_post - r / v_in)`` with
    ``1/v_phi = 1/v_post - 1/v_in``; ``v_phi`` is clamped to
    ``[V_PHI_MIN, V_PHI_MAX]`` and flagged when the formula leaves that range.
    """
    if not v_in > 0:
        raise ValueError(f"input variance must be positive, got {v_in}")
    r = np.asarray(r)
    if prior.field == "complex":
        mr, vr = bg_posterior(r.real, v_in / 2, prior.mu, 0.5 / prior.mu)
        mi, vi = bg_posterior(r.imag, v_in / 2, prior.mu, 0.5 / prior.mu)
        x_post = mr + 1j * mi
        v_post = float(np.mean(vr + vi))
    else:
        x_post, var = bg_posterior(np.real(r), v_in, prior.mu, 1.0 / prior.mu)
        v_post = float(np.mean(var))

    flags = []
    if v_post <= 0.0:
        v_post = V_PHI_MIN
        flags.append("v_post_clamped")
    inv = 1.0 / v_post - 1.0 / v_in
    if inv <= 1.0 / V_PHI_MAX:
        v_phi = V_PHI_MAX
        flags.append("v_phi_clamped")
    elif inv >= 1.0 / V_PHI_MIN:
        v_phi = V_PHI_MIN
        flags.append("v_phi_clamped")
    else:
        v_phi = 1.0 / inv
    x_orth = v_phi * (x_post / v_post - r / v_in)
    return DenoiseResult(x_post, v_post, x_orth, v_phi, flags)


def sample_bg(n, prior, seed=None):
    rng = np.random.default_rng(seed)

    def part(scale):
        active = rng.random(n) < prior.mu
        return np.where(active, rng.standard_normal(n) * math.sqrt(scale / prior.mu), 0.0)

    if prior.field == "complex":
        return part(0.5) + 1j * part(0.5)
    return part(1.0)
