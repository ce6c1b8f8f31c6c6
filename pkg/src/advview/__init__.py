"""advview: adversarial camera viewpoint search against image classifiers.

The package optimizes a bounded distribution over camera viewpoints so that
images volume-rendered from it mislead a black-box classifier: a
tanh-squashed diagonal Gaussian is trained by natural-evolution-strategies
search gradients with an entropic regularizer, querying only the model's
logits.
"""

from .attack import (
    AdamHyper,
    AdamState,
    AttackConfig,
    AttackTrace,
    adam_step,
    optimal_viewpoint,
    run_attack,
)
from .classifiers import (
    ExternalProcessClassifier,
    LinearPixelClassifier,
    Logits,
    TemplateBankClassifier,
    cross_entropy,
    is_misclassified,
    predict,
)
from .distribution import (
    DistributionParams,
    SIGMA_FLOOR,
    entropy,
    log_density,
    sample,
    transform,
    uniform_entropy,
)
from .errors import (
    BoundsError,
    ConfigError,
    DomainError,
    FieldValidationError,
    OracleProtocolError,
    SceneParseError,
    SceneVersionError,
)
from .field import SceneSpec, VoxelField, build_primitive_scene, load_scene, save_scene
from .geometry import (
    CameraPose,
    Ray,
    Viewpoint,
    ViewpointBounds,
    generate_rays,
    rotation_matrix,
    viewpoint_to_pose,
)
from .gradients import (
    EvalBatch,
    GradientPair,
    combined_gradients,
    entropy_gradients,
    score_gradients,
)
from .harness import (
    AttackReport,
    emit_dataset,
    evaluate_distribution,
    fluctuation_curve,
    fluctuation_test,
    lambda_sweep,
    random_search_baseline,
    transferability_matrix,
)
from .rendering import (
    ImageBuffer,
    RenderConfig,
    composite_ray,
    render,
    sample_quadrature,
)
from .scenarios import bounds_preset, demo_scenes, paper_full_bounds, wedge_scenario

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
