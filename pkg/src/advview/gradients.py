"""Search-gradient machinery for ascent on the attacked objective.

The loss term uses score-function (evolution-strategies) gradients of
``E[L]`` with respect to the latent Gaussian's ``(mu, sigma)``,
preconditioned by the inverse Fisher information of the diagonal Gaussian
(``F_mu = I / sigma^2``, ``F_sigma = 2 I / sigma^2``), which turns the raw
score estimators ``E[L * eps / sigma]`` and ``E[L * (eps^2 - 1) / sigma]``
into the natural forms

    grad_mu    = E[L * sigma * eps],
    grad_sigma = E[L * sigma * (eps^2 - 1) / 2].

A batch-mean baseline is subtracted from the losses by default; it leaves
the expectation unchanged while removing the variance contributed by the
loss's mean level, and can be disabled to recover the raw estimator.

The entropy term keeps its reparameterized analytic gradient,

    grad_mu    H = E[-2 * tanh(mu + sigma * eps)],
    grad_sigma H = E[(1 - 2 * tanh(mu + sigma * eps) * sigma * eps) / sigma],

and is *not* Fisher-preconditioned: the two terms are derived separately
and summed, so the combined ascent direction for weight ``lam`` is
``score + lam * entropy_grad`` evaluated on the same ``eps`` draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distribution import SIGMA_FLOOR, DistributionParams
from .geometry import ViewpointBounds


@dataclass(frozen=True)
class GradientPair:
    grad_mu: np.ndarray
    grad_sigma: np.ndarray

    def __post_init__(self):
        gm = np.asarray(self.grad_mu, dtype=float).reshape(-1)
        gs = np.asarray(self.grad_sigma, dtype=float).reshape(-1)
        if not (np.all(np.isfinite(gm)) and np.all(np.isfinite(gs))):
            raise ValueError("gradients must be finite")
        object.__setattr__(self, "grad_mu", gm)
        object.__setattr__(self, "grad_sigma", gs)

    def __add__(self, other: "GradientPair") -> "GradientPair":
        return GradientPair(self.grad_mu + other.grad_mu, self.grad_sigma + other.grad_sigma)

    def scaled(self, factor: float) -> "GradientPair":
        return GradientPair(factor * self.grad_mu, factor * self.grad_sigma)


@dataclass(frozen=True)
class EvalBatch:
    """Loss evaluations at reparameterized samples: ``eps`` (k, d) draws,
    the viewpoints they map to (k, d), and the scalar losses (k,)."""

    epsilon: np.ndarray
    viewpoints: np.ndarray
    losses: np.ndarray

    def __post_init__(self):
        eps = np.asarray(self.epsilon, dtype=float)
        vps = np.asarray(self.viewpoints, dtype=float)
        losses = np.asarray(self.losses, dtype=float).reshape(-1)
        if eps.ndim != 2 or vps.shape != eps.shape or losses.shape[0] != eps.shape[0]:
            raise ValueError(
                f"inconsistent batch shapes: eps {eps.shape}, viewpoints {vps.shape}, "
                f"losses {losses.shape}"
            )
        if not np.all(np.isfinite(losses)):
            raise ValueError("losses must be finite")
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "viewpoints", vps)
        object.__setattr__(self, "losses", losses)

    @property
    def k(self) -> int:
        return self.losses.shape[0]


def score_gradients(
    batch: EvalBatch,
    params: DistributionParams,
    baseline: bool = True,
    natural: bool = True,
) -> GradientPair:
    """Monte Carlo search gradients of the expected loss.

    With ``natural`` (default) the estimates are Fisher-preconditioned;
    with ``baseline`` the batch mean is subtracted from the losses first
    (requires k >= 2).
    """
    if batch.k < 1:
        raise ValueError("empty batch")
    shifted = batch.losses
    if baseline:
        if batch.k < 2:
            raise ValueError("baseline subtraction needs at least 2 samples")
        shifted = batch.losses - batch.losses.mean()
    eps = batch.epsilon
    if natural:
        g_mu = (shifted[:, None] * params.sigma * eps).mean(axis=0)
        g_sigma = (shifted[:, None] * params.sigma * (eps**2 - 1.0) / 2.0).mean(axis=0)
    else:
        g_mu = (shifted[:, None] * eps / params.sigma).mean(axis=0)
        g_sigma = (shifted[:, None] * (eps**2 - 1.0) / params.sigma).mean(axis=0)
    return GradientPair(g_mu, g_sigma)


def entropy_gradients(
    params: DistributionParams,
    bounds: ViewpointBounds,
    epsilon: np.ndarray,
) -> GradientPair:
    """Analytic entropy gradients averaged over the given ``eps`` draws."""
    eps = np.asarray(epsilon, dtype=float)
    if eps.ndim != 2 or eps.shape[0] < 1:
        raise ValueError("need a nonempty (k, d) array of eps draws")
    if np.any(params.sigma < SIGMA_FLOOR):
        raise ValueError(f"sigma below floor {SIGMA_FLOOR}")
    th = np.tanh(params.mu + params.sigma * eps)
    g_mu = (-2.0 * th).mean(axis=0)
    g_sigma = ((1.0 - 2.0 * th * params.sigma * eps) / params.sigma).mean(axis=0)
    return GradientPair(g_mu, g_sigma)


def combined_gradients(
    batch: EvalBatch,
    params: DistributionParams,
    bounds: ViewpointBounds,
    lam: float,
    baseline: bool = True,
) -> GradientPair:
    """Ascent direction for ``E[L] + lam * H``: natural score gradients of
    the loss plus ``lam`` times the entropy gradients, both on the batch's
    shared ``eps`` draws."""
    if lam < 0:
        raise ValueError("entropy weight must be nonnegative")
    loss_part = score_gradients(batch, params, baseline=baseline, natural=True)
    if lam == 0.0:
        return loss_part
    return loss_part + entropy_gradients(params, bounds, batch.epsilon).scaled(lam)
