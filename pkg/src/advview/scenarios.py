"""Ready-made bounds presets, scenes, and classifiers for experiments.

The viewpoint box presets mirror the standard evaluation setup: a camera
initialized at ``[0, 4, 0]`` with yaw in [-180, 180], pitch in [-30, 30],
roll in [20, 160] degrees and translations in [-0.5, 0.5] x [-1, 1] x
[-0.5, 0.5] scene units.  Variants freeze subsets of the components
(rotation-only, translation-only, 2D-transformations) or shrink the
rotation ranges.

``wedge_scenario`` builds the self-contained toy attack problem used by
the benchmark suite: an opaque marker cube with two viewpoint-dependent
features (a tinted +x face visible over a wide yaw wedge, and a recessed
bright wall at the end of a channel bored into the -x face, visible only
when the view axis lines up with the bore), classified by a template bank
whose class-0 template is the natural view.  Misclassifications therefore
happen exactly on the wedges where a feature takes over the image.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .attack import AttackConfig
from .classifiers import TemplateBankClassifier
from .field import SceneSpec, build_primitive_scene
from .geometry import Viewpoint, ViewpointBounds
from .rendering import RenderConfig, render


def paper_full_bounds() -> ViewpointBounds:
    """Full rotation + translation box."""
    return ViewpointBounds(
        v_min=[-180.0, -30.0, 20.0, -0.5, -1.0, -0.5],
        v_max=[180.0, 30.0, 160.0, 0.5, 1.0, 0.5],
    )


@dataclass(frozen=True)
class BoundsPreset:
    name: str
    bounds: ViewpointBounds
    frozen: dict[int, float] = dc_field(default_factory=dict)


def bounds_preset(name: str) -> BoundsPreset:
    """Named viewpoint-box presets; see :func:`preset_names`."""
    full = paper_full_bounds()
    presets = {
        "paper-full": BoundsPreset("paper-full", full),
        # translations optimized, rotations pinned at [0, 0, 65] degrees
        "translation-only": BoundsPreset(
            "translation-only", full, frozen={0: 0.0, 1: 0.0, 2: 65.0}
        ),
        # rotations optimized, translation pinned at the origin
        "rotation-only": BoundsPreset(
            "rotation-only", full, frozen={3: 0.0, 4: 0.0, 5: 0.0}
        ),
        # 2D-transformation subset: yaw and roll pinned, pitch + translations free
        "2d-transforms": BoundsPreset("2d-transforms", full, frozen={0: 0.0, 2: 90.0}),
        "rotation-half": BoundsPreset(
            "rotation-half",
            ViewpointBounds(
                v_min=[-90.0, -15.0, 55.0, -0.5, -1.0, -0.5],
                v_max=[90.0, 15.0, 125.0, 0.5, 1.0, 0.5],
            ),
            frozen={3: 0.0, 4: 0.0, 5: 0.0},
        ),
        "rotation-quarter": BoundsPreset(
            "rotation-quarter",
            ViewpointBounds(
                v_min=[-45.0, -7.5, 72.5, -0.5, -1.0, -0.5],
                v_max=[45.0, 7.5, 107.5, 0.5, 1.0, 0.5],
            ),
            frozen={3: 0.0, 4: 0.0, 5: 0.0},
        ),
    }
    if name not in presets:
        raise ValueError(f"unknown bounds preset {name!r}; expected one of {sorted(presets)}")
    return presets[name]


def preset_names() -> list[str]:
    return ["paper-full", "translation-only", "rotation-only", "2d-transforms",
            "rotation-half", "rotation-quarter"]


@dataclass(frozen=True)
class WedgeScenario:
    """A toy attack problem with a known, low-dimensional failure region."""

    scene: SceneSpec
    classifier: TemplateBankClassifier
    bounds: ViewpointBounds
    frozen: dict[int, float]
    render_cfg: RenderConfig

    def attack_config(self, lam: float = 0.01, seed: int = 0, k: int = 50,
                      iterations: int = 100, **overrides) -> AttackConfig:
        return AttackConfig(
            bounds=self.bounds,
            lam=lam,
            k=k,
            iterations=iterations,
            seed=seed,
            frozen=dict(self.frozen),
            **overrides,
        )


def wedge_scenario(
    resolution: int = 40,
    image_size: int = 28,
    samples_per_ray: int = 12,
    logit_scale: float = 600.0,
    decoy_yaw: float = -70.0,
    spike_yaw: float = 90.0,
) -> WedgeScenario:
    """Marker-cube scenario with two free parameters (yaw and camera depth).

    Class 0 is the natural view; class 1 is the tinted +x face seen from
    ``decoy_yaw`` (a wide wedge of yaws misclassify to it); class 2 is the
    view straight down the channel bore at ``spike_yaw`` (a narrow wedge).
    Only yaw and the depth translation dy are optimized (pitch, roll, dx
    and dz are pinned at zero), so the misclassification region lives in
    the (yaw, dy) rectangle and can be integrated on a dense grid.
    """
    field = build_primitive_scene(
        "asymmetric_marker",
        resolution=(resolution, resolution, resolution),
        params={
            "half_extent": 0.55,
            "face_depth": 0.1,
            "channel_radius": 0.22,
            "channel_depth": 0.85,
            "body_color": (0.62, 0.62, 0.62),
            "face_color": (0.78, 0.45, 0.45),
            "channel_color": (0.05, 0.9, 0.15),
        },
    )
    scene = SceneSpec(field=field, label=0, name="marker-cube")
    bounds = ViewpointBounds(
        v_min=[-180.0, -30.0, -15.0, -0.4, -0.6, -0.4],
        v_max=[180.0, 30.0, 15.0, 0.4, 0.6, 0.4],
    )
    frozen = {1: 0.0, 2: 0.0, 3: 0.0, 5: 0.0}
    render_cfg = RenderConfig(
        samples_per_ray=samples_per_ray,
        stratified=False,
        width=image_size,
        height=image_size,
        fov_deg=40.0,
        t_near=2.0,
        t_far=6.0,
    )
    poses = [0.0, decoy_yaw, spike_yaw]
    templates = [
        render(field, Viewpoint(yaw, 0.0, 0.0, 0.0, 0.0, 0.0), render_cfg)
        for yaw in poses
    ]
    classifier = TemplateBankClassifier.from_images(templates, logit_scale=logit_scale)
    return WedgeScenario(scene, classifier, bounds, frozen, render_cfg)


def demo_scenes(resolution: int = 40) -> list[SceneSpec]:
    """Small procedurally built object set for dataset emission and
    transferability experiments."""
    res = (resolution, resolution, resolution)
    return [
        SceneSpec(build_primitive_scene("box", res), label=0, name="box"),
        SceneSpec(build_primitive_scene("sphere", res), label=1, name="sphere"),
        SceneSpec(build_primitive_scene("two_tone_cube", res), label=2, name="two-tone-cube"),
        SceneSpec(build_primitive_scene("asymmetric_marker", res), label=3, name="marker"),
    ]
