"""viewlift: one-stage restoration + novel-view synthesis for degraded
face-like images, via a 3D latent feature volume and a toy conditional
latent diffusion decoder."""

from .config import ModelConfig, RunConfig, config_from_dict, config_from_file
from .diffusion import (
    CondUNet,
    NoiseSchedule,
    ToyVAE,
    ddim_sample,
    forward_diffuse,
    make_schedule,
    sd_loss,
)
from .encoder import EncoderConfig, ReferenceFeature, TimeAwareEncoder
from .geometry import (
    CameraParams,
    FrustumGrid,
    VolumeGrid,
    camera_to_vector,
    generate_rays,
    look_at,
    sample_frustum_points,
    trilinear_sample,
    vector_to_camera,
    warp_volume,
)
from .losses import LossWeights, camera_loss, feature_loss, make_target_features, total_loss
from .train import (
    Pipeline,
    build_pipeline,
    evaluate,
    load_pipeline,
    restore_image,
    synthesize_views,
    train_step1,
    train_step2,
)
from .viewsynth import (
    CameraPredictor,
    DepthAggregator,
    ViewSynthConfig,
    ViewSynthesizer,
    VolumeConstructor,
    pool_depth,
)

__version__ = "0.1.0"
