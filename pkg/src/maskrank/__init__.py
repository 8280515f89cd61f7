"""Background-aware classification and ranking losses for zero-shot mask segmentation."""

from .assignment import Assignment, class_match_cost, hungarian, mask_match_cost
from .config import LossWeights, MaskLossConfig, RunConfig, TrainConfig
from .errors import (DegenerateInputError, FormatError, MaskRankError, ParameterError, ShapeError,
                     TrainingDivergedError)
from .inference import class_probabilities, semantic_inference, similarity_matrix
from .losses import (ImageLabelSets, LossReport, bg_aware_class_loss, ce_class_loss, dice_loss,
                     focal_loss, kl_uniform_loss, mask_loss, ranking_loss_image, total_loss)
from .metrics import IoUReport, hiou, iou_per_class, partitioned_miou
from .pseudolabel import mask_to_bbox, pseudo_labels, pseudo_scores, threshold_labels
from .tensor import cosine_sim, sigmoid_map, softmax_temp
from .tensorio import load_tensor, save_tensor

__version__ = "0.1.0"
