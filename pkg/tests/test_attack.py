"""Adam updates, the attack loop, checkpointing, and determinism."""

import numpy as np
import pytest

from advview.attack import (
    AdamHyper,
    AdamState,
    AttackConfig,
    adam_step,
    load_checkpoint,
    natural_viewpoint,
    optimal_viewpoint,
    run_attack,
    save_checkpoint,
)
from advview.classifiers import LinearPixelClassifier
from advview.distribution import DistributionParams
from advview.geometry import ViewpointBounds
from advview.gradients import GradientPair


def params6(mu=0.0, sigma=0.5):
    return DistributionParams(np.full(6, mu), np.full(6, sigma))


class TestAdamStep:
    def test_zero_gradient_leaves_parameters(self):
        p = params6(0.3, 0.7)
        grads = GradientPair(np.zeros(6), np.zeros(6))
        out, state = adam_step(p, grads, AdamState.zeros(6), 1, AdamHyper())
        np.testing.assert_array_equal(out.mu, p.mu)
        np.testing.assert_array_equal(out.sigma, p.sigma)
        np.testing.assert_array_equal(state.m_mu, np.zeros(6))

    def test_first_step_closed_form(self):
        p = params6(0.0, 0.5)
        g = np.array([2.0, -3.0, 0.5, 1.0, -1.0, 4.0])
        hyper = AdamHyper(lr=0.01)
        out, _ = adam_step(p, GradientPair(g, np.zeros(6)), AdamState.zeros(6), 1, hyper)
        expected = hyper.lr * g / (np.abs(g) + hyper.eps)
        np.testing.assert_allclose(out.mu, expected, rtol=1e-12)

    def test_quadratic_convergence_vs_scalar_reference(self):
        # independent scalar implementation of bias-corrected Adam ascent
        opt = 0.7
        hyper = AdamHyper(lr=0.05)
        x, m, v = 0.0, 0.0, 0.0
        p = params6(0.0, 1.0)
        state = AdamState.zeros(6)
        for t in range(1, 101):
            g = -2.0 * (x - opt)
            m = hyper.beta1 * m + (1 - hyper.beta1) * g
            v = hyper.beta2 * v + (1 - hyper.beta2) * g * g
            m_hat = m / (1 - hyper.beta1**t)
            v_hat = v / (1 - hyper.beta2**t)
            x = x + hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)

            g6 = np.full(6, -2.0 * (p.mu[0] - opt))
            p, state = adam_step(p, GradientPair(g6, np.zeros(6)), state, t, hyper)
            assert p.mu[0] == pytest.approx(x, abs=1e-12)
        assert abs(p.mu[0] - opt) <= 1e-3

    def test_sigma_clamped_to_floor(self):
        p = params6(0.0, 0.0011)
        grads = GradientPair(np.zeros(6), np.full(6, -100.0))
        out, _ = adam_step(p, grads, AdamState.zeros(6), 1, AdamHyper(lr=0.5), sigma_floor=1e-3)
        np.testing.assert_array_equal(out.sigma, np.full(6, 1e-3))

    def test_step_index_starts_at_one(self):
        with pytest.raises(ValueError):
            adam_step(params6(), GradientPair(np.zeros(6), np.zeros(6)),
                      AdamState.zeros(6), 0, AdamHyper())


class TestOptimalViewpoint:
    def test_zero_mean_gives_midpoint(self):
        bounds = ViewpointBounds([-2] * 6, [4] * 6)
        v = optimal_viewpoint(params6(0.0), bounds)
        np.testing.assert_array_equal(v.as_array(), bounds.b)

    def test_large_mean_saturates(self):
        bounds = ViewpointBounds([-2] * 6, [4] * 6)
        v = optimal_viewpoint(params6(30.0), bounds).as_array()
        assert np.all(bounds.v_max - v <= 1e-9) and np.all(v < bounds.v_max)

    def test_frozen_components_pinned(self):
        bounds = ViewpointBounds([-2] * 6, [4] * 6)
        v = optimal_viewpoint(params6(5.0), bounds, frozen={2: 0.25})
        assert v.phi == 0.25


def constant_classifier(size, classes=2):
    return LinearPixelClassifier(
        np.zeros((classes, size * size * 3)), np.zeros(classes), (size, size)
    )


class TestRunAttack:
    def test_null_objective_leaves_parameters(self, mini):
        clf = constant_classifier(mini.render_cfg.width)
        cfg = mini.attack_config(lam=0.0, seed=1, k=4, iterations=10, precheck=False)
        params, trace = run_attack(mini.scene, clf, mini.render_cfg, cfg)
        np.testing.assert_array_equal(params.mu, np.zeros(6))
        np.testing.assert_array_equal(params.sigma, np.full(6, 0.5))
        assert trace.queries == 40

    def test_query_accounting(self, mini):
        cfg = mini.attack_config(seed=0, k=5, iterations=7, precheck=False)
        _, trace = run_attack(mini.scene, mini.classifier, mini.render_cfg, cfg)
        assert trace.queries == 35
        assert len(trace.records) == 7

    def test_deterministic_trace(self, mini):
        cfg = mini.attack_config(seed=3, k=6, iterations=8, precheck=False)
        p1, t1 = run_attack(mini.scene, mini.classifier, mini.render_cfg, cfg)
        p2, t2 = run_attack(mini.scene, mini.classifier, mini.render_cfg, cfg)
        np.testing.assert_array_equal(p1.mu, p2.mu)
        np.testing.assert_array_equal(p1.sigma, p2.sigma)
        np.testing.assert_array_equal(t1.mean_losses(), t2.mean_losses())

    def test_loss_increases_on_wedge(self, mini):
        cfg = mini.attack_config(lam=0.01, seed=0, k=16, iterations=40, precheck=False)
        _, trace = run_attack(mini.scene, mini.classifier, mini.render_cfg, cfg)
        losses = trace.mean_losses()
        assert losses[-5:].mean() > losses[:5].mean()

    def test_vacuous_attack_warns(self, mini):
        # classifier whose bias always prefers class 1 while the label is 0
        clf = LinearPixelClassifier(
            np.zeros((2, mini.render_cfg.width * mini.render_cfg.height * 3)),
            np.array([0.0, 5.0]),
            (mini.render_cfg.width, mini.render_cfg.height),
        )
        cfg = mini.attack_config(lam=0.0, seed=0, k=2, iterations=1)
        with pytest.warns(UserWarning, match="vacuous"):
            run_attack(mini.scene, clf, mini.render_cfg, cfg)

    def test_label_range_checked(self, mini):
        import dataclasses

        bad_scene = dataclasses.replace(mini.scene, label=9)
        cfg = mini.attack_config(seed=0, k=2, iterations=1)
        with pytest.raises(ValueError, match="label 9"):
            run_attack(bad_scene, mini.classifier, mini.render_cfg, cfg)

    def test_frozen_values_must_lie_in_bounds(self, mini):
        with pytest.raises(ValueError, match="frozen value"):
            AttackConfig(bounds=mini.bounds, frozen={0: 999.0})

    def test_natural_viewpoint_applies_frozen(self, mini):
        cfg = mini.attack_config()
        v = natural_viewpoint(cfg)
        assert v.theta == 0.0 and v.dx == 0.0


class TestCheckpoint:
    def test_resume_is_bit_exact(self, mini, tmp_path):
        ck = tmp_path / "ck.json"
        cfg_half = mini.attack_config(seed=5, k=4, iterations=6, precheck=False)
        run_attack(mini.scene, mini.classifier, mini.render_cfg, cfg_half, checkpoint_path=ck)
        cfg_full = mini.attack_config(seed=5, k=4, iterations=12, precheck=False)
        p_full, t_full = run_attack(mini.scene, mini.classifier, mini.render_cfg, cfg_full)
        p_res, t_res = run_attack(
            mini.scene, mini.classifier, mini.render_cfg, cfg_full, resume_from=ck
        )
        np.testing.assert_array_equal(p_res.mu, p_full.mu)
        np.testing.assert_array_equal(p_res.sigma, p_full.sigma)
        np.testing.assert_array_equal(t_res.mean_losses(), t_full.mean_losses()[6:])
        assert t_res.queries == 24

    def test_version_checked(self, mini, tmp_path):
        ck = tmp_path / "ck.json"
        rng = np.random.Generator(np.random.PCG64(0))
        save_checkpoint(ck, 3, params6(), AdamState.zeros(6), rng)
        payload = load_checkpoint(ck)
        assert payload["iteration"] == 3
        import json

        payload["version"] = 99
        ck.write_text(json.dumps(payload))
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(ck)

    def test_rng_state_round_trips(self, tmp_path):
        ck = tmp_path / "ck.json"
        rng = np.random.Generator(np.random.PCG64(123))
        rng.standard_normal(17)
        expected = rng.bit_generator.state
        rng2 = np.random.Generator(np.random.PCG64(123))
        rng2.standard_normal(17)
        save_checkpoint(ck, 1, params6(), AdamState.zeros(6), rng2)
        payload = load_checkpoint(ck)
        assert payload["rng_state"] == expected
