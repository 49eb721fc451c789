"""Adversarial camera-pose regression and discriminator-gradient refinement.

A desk-scale laboratory: a pose regressor and a pose discriminator train
adversarially on synthetic landmark scenes; the frozen discriminator's
input-gradients then drive a constrained geodesic update of predicted poses.
"""

from .config import (
    AblateConfig,
    ExperimentConfig,
    InvalidConfig,
    ModeMismatch,
    RefineConfig,
    SceneConfig,
    TrainConfig,
    load_config,
    save_config,
)
from .evaluation import Metrics, discriminator_accuracy, evaluate, relative_improvement
from .models import PoseDiscriminator, PoseRegressor
from .quatgeom import MODE_LOGQ, MODE_QUAT, NearZeroQuaternion, Pose
from .refinement import RefinementTrace, refine_batch, refine_pose
from .scenes import (
    Dataset,
    ExtractorParams,
    FrameSample,
    SceneModel,
    build_dataset,
    extract_features,
    generate_scene,
    load_dataset,
    observe,
    replicate_pose,
    sample_trajectory,
    save_dataset,
)
from .training import (
    EmptyDataset,
    NonFiniteLoss,
    TrainState,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
