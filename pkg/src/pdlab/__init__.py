"""Dual-encoder text-to-image person retrieval with two-stage prompt adaptation, on a numpy autodiff engine."""

from .tensor import Tensor, ShapeError, no_grad
from .optim import ParamStore, AdamState, LrSchedule, adam_step, lr_at
from .encoder import EncoderConfig, Vocabulary, encode_image, encode_text, init_encoder_params
from .prompts import PromptSet, init_prompts, inject_image, inject_text, set_stage_trainability
from .losses import LossConfig, id_loss, infonce, l_i2t, l_itc, l_t2i, total_loss_stage2
from .metrics import MetricsReport, compute_report
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .synthetic import DataConfig, make_domain_pair

__version__ = "0.1.0"
