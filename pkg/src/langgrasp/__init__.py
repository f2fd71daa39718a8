"""Language-driven grasp detection with mask-guided three-stream attention.

A small, fully self-contained research stack: a reverse-mode autodiff tensor
engine, the three-stream attention model, triplet correspondence and grasp
losses, exact rotated-rectangle IoU (compiled core with a pure-Python
fallback), a deterministic synthetic benchmark, and an Adam training loop.
"""

from .autodiff import ShapeError, Tape, TapeError, Tensor, backward, grad_check
from .attention import (
    AttentionOutput,
    AttentionParams,
    QueryMode,
    StreamFeatures,
    StreamWeights,
    language_vision_cross_attention,
    mask_guided_forward,
    multi_head,
    text_self_attention,
    vision_segmentation_cross_attention,
)
from .data import (
    DatasetError,
    GeneratorConfig,
    Scene,
    generate_dataset,
    generate_scene,
    read_dataset,
    write_dataset,
)
from .geometry import (
    GEOM_BACKEND,
    EvalReport,
    GraspRect,
    angle_diff,
    evaluate_split,
    harmonic_mean,
    is_success,
    mc_rotated_iou,
    rect_to_polygon,
    rotated_iou,
)
from .grasp_head import GraspHeadParams, GraspPrediction, fuse_and_score, select_best
from .losses import (
    LossConfig,
    correspondence_loss,
    grasp_loss,
    mine_hard_negatives,
    similarity,
    total_loss,
)
from .train import (
    Adam,
    Checkpoint,
    ModelParams,
    NonFiniteLossError,
    TrainConfig,
    evaluate_model,
    init_params,
    load_checkpoint,
    predict_scene,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
