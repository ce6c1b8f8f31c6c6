"""The outer attack loop: Adam ascent on the viewpoint distribution.

Each iteration draws ``k`` viewpoints from the current squashed Gaussian,
renders them, scores the classifier's cross-entropy against the scene's
true label, and takes one Adam step along the combined (loss + entropy)
search gradient.  ``sigma`` is clamped to its floor after every step.

The loop is bit-deterministic for a fixed config: the epsilon draws come
from one seeded generator and every render gets its own seed derived from
``(seed, iteration, sample)``.  Checkpoints capture the full loop state
(iteration, parameters, Adam moments, generator state) and allow bit-exact
resumption.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .classifiers import cross_entropy, predict
from .distribution import (
    DEFAULT_MU0,
    DEFAULT_SIGMA0,
    SIGMA_FLOOR,
    DistributionParams,
    entropy_terms,
    sample,
    squash,
    transform,
)
from .field import SceneSpec
from .geometry import Viewpoint, ViewpointBounds
from .gradients import EvalBatch, GradientPair, combined_gradients
from .rendering import RenderConfig, derive_seed, render

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    m_mu: np.ndarray
    v_mu: np.ndarray
    m_sigma: np.ndarray
    v_sigma: np.ndarray

    @classmethod
    def zeros(cls, dim: int) -> "AdamState":
        return cls(*(np.zeros(dim) for _ in range(4)))


@dataclass(frozen=True)
class AttackConfig:
    bounds: ViewpointBounds
    lam: float = 0.01
    k: int = 50
    iterations: int = 100
    adam: AdamHyper = AdamHyper()
    seed: int = 0
    baseline_on: bool = True
    sigma_floor: float = SIGMA_FLOOR
    mu0: float = DEFAULT_MU0
    sigma0: float = DEFAULT_SIGMA0
    # components pinned to fixed values (index -> value); their parameters
    # are not optimized, matching rotation-only / translation-only setups
    frozen: dict[int, float] = field(default_factory=dict)
    precheck: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("entropy weight must be nonnegative")
        if self.k < 2:
            raise ValueError("need k >= 2 samples per iteration")
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
        if self.sigma_floor < SIGMA_FLOOR:
            raise ValueError(f"sigma_floor below the global floor {SIGMA_FLOOR}")
        for d, val in self.frozen.items():
            if not 0 <= d < 6:
                raise ValueError(f"frozen component index {d} out of range")
            lo, hi = self.bounds.v_min[d], self.bounds.v_max[d]
            if not lo <= val <= hi:
                raise ValueError(f"frozen value {val} for component {d} outside [{lo}, {hi}]")

    @property
    def free_mask(self) -> np.ndarray:
        mask = np.ones(6)
        for d in self.frozen:
            mask[d] = 0.0
        return mask


@dataclass
class IterationRecord:
    mean_loss: float
    entropy: float
    mu: np.ndarray
    sigma: np.ndarray


@dataclass
class AttackTrace:
    records: list[IterationRecord]
    queries: int
    final_params: DistributionParams

    def mean_losses(self) -> np.ndarray:
        return np.array([r.mean_loss for r in self.records])

    def to_dict(self) -> dict:
        return {
            "queries": self.queries,
            "mu": self.final_params.mu.tolist(),
            "sigma": self.final_params.sigma.tolist(),
            "iterations": [
                {
                    "mean_loss": r.mean_loss,
                    "entropy": r.entropy,
                    "mu": r.mu.tolist(),
                    "sigma": r.sigma.tolist(),
                }
                for r in self.records
            ],
        }


def adam_step(
    params: DistributionParams,
    grads: GradientPair,
    state: AdamState,
    t: int,
    hyper: AdamHyper,
    sigma_floor: float = SIGMA_FLOOR,
) -> tuple[DistributionParams, AdamState]:
    """One bias-corrected Adam ascent step on (mu, sigma); ``sigma`` is
    clamped to ``sigma_floor`` after the step."""
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    b1, b2 = hyper.beta1, hyper.beta2

    def update(value, grad, m, v):
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad**2
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        return value + hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps), m, v

    mu, m_mu, v_mu = update(params.mu, grads.grad_mu, state.m_mu, state.v_mu)
    sigma, m_s, v_s = update(params.sigma, grads.grad_sigma, state.m_sigma, state.v_sigma)
    sigma = np.maximum(sigma, sigma_floor)
    return DistributionParams(mu, sigma), AdamState(m_mu, v_mu, m_s, v_s)


def optimal_viewpoint(
    params: DistributionParams,
    bounds: ViewpointBounds,
    frozen: dict[int, float] | None = None,
) -> Viewpoint:
    """The transformed distribution mean ``a * tanh(mu) + b`` (with any
    frozen components pinned), reported as the single best viewpoint."""
    v = squash(params.mu, bounds)
    for d, val in (frozen or {}).items():
        v[d] = val
    return Viewpoint.from_array(v, bounds)


def apply_frozen(viewpoints: np.ndarray, frozen: dict[int, float]) -> np.ndarray:
    if not frozen:
        return viewpoints
    out = np.array(viewpoints, copy=True)
    for d, val in frozen.items():
        out[..., d] = val
    return out


def natural_viewpoint(cfg: AttackConfig) -> Viewpoint:
    """Bound midpoint with frozen components applied: the pose the scene is
    expected to be recognized from."""
    return Viewpoint.from_array(apply_frozen(cfg.bounds.b.copy(), cfg.frozen), cfg.bounds)


def save_checkpoint(path, iteration, params, state, rng) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "iteration": iteration,
        "mu": params.mu.tolist(),
        "sigma": params.sigma.tolist(),
        "adam": {
            "m_mu": state.m_mu.tolist(),
            "v_mu": state.v_mu.tolist(),
            "m_sigma": state.m_sigma.tolist(),
            "v_sigma": state.v_sigma.tolist(),
        },
        "rng_state": rng.bit_generator.state,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> dict:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(
            f"unsupported checkpoint version {payload.get('version')} "
            f"(supported: {CHECKPOINT_VERSION})"
        )
    return payload


def run_attack(
    scene: SceneSpec,
    classifier,
    render_cfg: RenderConfig,
    cfg: AttackConfig,
    checkpoint_path=None,
    resume_from=None,
) -> tuple[DistributionParams, AttackTrace]:
    """Optimize the viewpoint distribution against ``classifier`` on
    ``scene``.  Returns the final parameters and the full trace.

    When ``checkpoint_path`` is set the loop state is written there after
    the final iteration; ``resume_from`` continues a previous run
    bit-exactly (the resumed trace covers only the remaining iterations).
    """
    if scene.label >= classifier.class_count:
        raise ValueError(
            f"scene label {scene.label} out of range for {classifier.class_count} classes"
        )
    bounds = cfg.bounds
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    params = DistributionParams.initial(6, cfg.mu0, cfg.sigma0)
    state = AdamState.zeros(6)
    start = 0
    if resume_from is not None:
        payload = load_checkpoint(resume_from)
        start = payload["iteration"]
        params = DistributionParams(payload["mu"], payload["sigma"])
        adam = payload["adam"]
        state = AdamState(
            np.asarray(adam["m_mu"], dtype=float),
            np.asarray(adam["v_mu"], dtype=float),
            np.asarray(adam["m_sigma"], dtype=float),
            np.asarray(adam["v_sigma"], dtype=float),
        )
        rng.bit_generator.state = payload["rng_state"]
    elif cfg.precheck:
        natural = natural_viewpoint(cfg)
        img = render(scene.field, natural, render_cfg, bounds=bounds)
        if predict(classifier, img).argmax() != scene.label:
            warnings.warn(
                f"scene {scene.name!r} is already misclassified at its natural "
                "viewpoint; the attack is vacuous",
                stacklevel=2,
            )

    free = cfg.free_mask
    records: list[IterationRecord] = []
    for t in range(start + 1, cfg.iterations + 1):
        eps, vps = sample(params, bounds, cfg.k, rng)
        vps = apply_frozen(vps, cfg.frozen)
        losses = np.empty(cfg.k)
        for i in range(cfg.k):
            seed_i = derive_seed(cfg.seed, t, i)
            img = render(
                scene.field,
                Viewpoint.from_array(vps[i]),
                replace(render_cfg, rng_seed=seed_i),
                bounds=bounds,
            )
            losses[i] = cross_entropy(predict(classifier, img), scene.label)
        batch = EvalBatch(eps, vps, losses)
        grads = combined_gradients(batch, params, bounds, cfg.lam, baseline=cfg.baseline_on)
        grads = GradientPair(grads.grad_mu * free, grads.grad_sigma * free)
        params, state = adam_step(params, grads, state, t, cfg.adam, cfg.sigma_floor)
        ent = float((entropy_terms(params, bounds, eps) * free).sum(axis=1).mean())
        records.append(
            IterationRecord(float(losses.mean()), ent, params.mu.copy(), params.sigma.copy())
        )
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, cfg.iterations, params, state, rng)
    trace = AttackTrace(records, queries=(cfg.iterations - start) * cfg.k, final_params=params)
    return params, trace
