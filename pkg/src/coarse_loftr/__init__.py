"""Coarse-only LoFTR feature matching with a reduced backbone, linear attention,
dual-softmax matching and knowledge-distillation training, on numpy."""

from .attention import AttentionConfig, linear_attention_fast, linear_attention_reference, phi, positional_encoding
from .backbone import BackboneConfig, build_backbone, extract_features
from .config import RunConfig, load_config
from .distillation import DistillConfig, kl_distill_loss, soften, target_loss, total_loss
from .geometry import Camera, CameraExtrinsics, CameraIntrinsics, DepthMap, generate_ground_truth, project, unproject
from .layers import param_count
from .matching import dual_softmax, extract_matches, mae, score_matrix
from .model import ORIGINAL_DIMS, REDUCED, CoarseMatcher, ModelConfig
from .numerics import Tensor, backward, no_grad
from .trainer import TrainConfig, accumulate_and_step, adamw_step, lr_schedule, train

__version__ = "0.1.0"
