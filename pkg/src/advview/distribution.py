"""Bounded viewpoint distribution: a diagonal Gaussian squashed through tanh.

A latent ``u ~ N(mu, sigma^2 I)`` maps to a viewpoint
``v = a * tanh(u) + b`` with ``a = (v_max - v_min) / 2`` and
``b = (v_max + v_min) / 2``, so ``v`` always lies strictly inside the
bounds box.  Samples are drawn by the reparameterization
``u = mu + sigma * eps`` with ``eps ~ N(0, I)``; the ``eps`` draws are kept
alongside the viewpoints so gradient estimators can reuse them.

Per dimension the change of variables gives

    log p(v) = log N(u; mu, sigma^2) - log a - log(1 - tanh(u)^2),

and the differential entropy is the expectation over ``eps`` of

    eps^2 / 2 + log(2 pi) / 2 + log sigma + log(1 - tanh(u)^2) + log a.

``log(1 - tanh(x)^2)`` is evaluated through the identity
``2 * (log 2 - |x| - log(1 + exp(-2|x|)))`` which stays finite where the
naive form underflows to ``log 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .geometry import Viewpoint, ViewpointBounds

SIGMA_FLOOR = 1e-3
DEFAULT_MU0 = 0.0
DEFAULT_SIGMA0 = 0.5

# tanh outputs are clipped to 1 - _TANH_MARGIN so transformed viewpoints
# stay strictly inside the open bounds box even once float tanh saturates
_TANH_MARGIN = 1e-12

LOG_TWO_PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class DistributionParams:
    """Trainable mean and scale of the latent diagonal Gaussian."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).reshape(-1)
        sigma = np.asarray(self.sigma, dtype=float).reshape(-1)
        if mu.shape != sigma.shape:
            raise ValueError("mu and sigma must have matching shapes")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise ValueError("distribution parameters must be finite")
        if np.any(sigma < SIGMA_FLOOR):
            raise ValueError(f"sigma must be >= {SIGMA_FLOOR} componentwise, got {sigma}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def initial(cls, dim: int = 6, mu0: float = DEFAULT_MU0, sigma0: float = DEFAULT_SIGMA0):
        return cls(np.full(dim, float(mu0)), np.full(dim, float(sigma0)))


def log1m_tanh_sq(x: np.ndarray) -> np.ndarray:
    """Numerically stable ``log(1 - tanh(x)^2)`` for any magnitude of x."""
    ax = np.abs(np.asarray(x, dtype=float))
    return 2.0 * (np.log(2.0) - ax - np.log1p(np.exp(-2.0 * ax)))


def squash(u: np.ndarray, bounds: ViewpointBounds) -> np.ndarray:
    """Array form of the bounded transform ``v = a * tanh(u) + b``."""
    t = np.clip(np.tanh(np.asarray(u, dtype=float)), -1.0 + _TANH_MARGIN, 1.0 - _TANH_MARGIN)
    return bounds.a * t + bounds.b


def transform(u, bounds: ViewpointBounds) -> Viewpoint:
    """Map an unbounded latent 6-vector to a viewpoint strictly inside the
    bounds box."""
    u = np.asarray(u, dtype=float).reshape(6)
    if not np.all(np.isfinite(u)):
        raise ValueError("latent vector must be finite")
    return Viewpoint(*squash(u, bounds).tolist())


def sample(
    params: DistributionParams,
    bounds: ViewpointBounds,
    k: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``k`` viewpoints by reparameterization.

    Returns ``(eps, v)`` where ``eps`` has shape (k, d) with standard-normal
    entries and ``v = a * tanh(mu + sigma * eps) + b`` row-wise; ``eps`` is
    retained so score/entropy gradients can reuse the same draws.
    """
    if k < 1:
        raise ValueError("need k >= 1 samples")
    eps = rng.standard_normal((k, params.mu.size))
    v = squash(params.mu + params.sigma * eps, bounds)
    return eps, v


def log_density(v, params: DistributionParams, bounds: ViewpointBounds) -> float:
    """Log density of a viewpoint under the squashed Gaussian; the viewpoint
    must lie strictly inside the bounds box."""
    arr = v.as_array() if isinstance(v, Viewpoint) else np.asarray(v, dtype=float).reshape(-1)
    if np.any(arr <= bounds.v_min) or np.any(arr >= bounds.v_max):
        raise DomainError(
            f"log density undefined on or outside the bounds box: {arr}"
        )
    t = (arr - bounds.b) / bounds.a
    u = np.arctanh(t)
    z = (u - params.mu) / params.sigma
    log_normal = -0.5 * z**2 - np.log(params.sigma) - 0.5 * LOG_TWO_PI
    return float(np.sum(log_normal - np.log(bounds.a) - log1m_tanh_sq(u)))


def entropy_terms(
    params: DistributionParams, bounds: ViewpointBounds, eps: np.ndarray
) -> np.ndarray:
    """Per-sample, per-dimension negative log densities evaluated at the
    reparameterized draws ``eps`` (k, d); averaging yields the entropy."""
    eps = np.asarray(eps, dtype=float)
    u = params.mu + params.sigma * eps
    return (
        0.5 * eps**2
        + 0.5 * LOG_TWO_PI
        + np.log(params.sigma)
        + log1m_tanh_sq(u)
        + np.log(bounds.a)
    )


def entropy(
    params: DistributionParams,
    bounds: ViewpointBounds,
    k: int,
    rng: np.random.Generator,
) -> float:
    """Monte Carlo estimate of the distribution's differential entropy,
    deterministic for a given generator state."""
    if k < 1:
        raise ValueError("need k >= 1 samples")
    eps = rng.standard_normal((k, params.mu.size))
    return float(entropy_terms(params, bounds, eps).sum(axis=1).mean())


def uniform_entropy(bounds: ViewpointBounds) -> float:
    """Entropy of the uniform distribution on the bounds box: the supremum
    no squashed Gaussian attains."""
    return float(np.sum(np.log(2.0 * bounds.a)))
