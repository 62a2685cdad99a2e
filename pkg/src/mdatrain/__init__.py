"""mdatrain: desk-scale multi-augmentation branched-network training."""

from .augment import (AugmentConfig, LabeledImage, apply_primitive,
                      baseline1_augment, baseline2_augment, cutmix, mixup,
                      randaugment, sample_beta)
from .data import Dataset, gen_glyphs, load_idx
from .errors import ContractError, FormatError, SizeError
from .losses import (BetaState, cross_entropy_soft, fit_measure, mutual_loss,
                     self_loss, total_loss, update_beta)
from .model import (BlockSpec, BranchedModel, build_branched, export_branch,
                    forward_all, param_partition, tiny_cnn, tiny_mlp)
from .optim import SgdState, cosine_lr, sgd_step
from .rng import RngStream
from .selection import (SelectionReport, select_branch, selection_protocol,
                        split_train_val)
from .tensor import (AdjointTape, Tensor, backward, finite_diff_grad,
                     tensor_new)
from .trainer import (RunMetrics, TrainConfig, budget_steps, evaluate,
                      evaluate_branches, train, train_baseline1,
                      train_baseline2, train_ours, train_single)

__version__ = "0.1.0"
