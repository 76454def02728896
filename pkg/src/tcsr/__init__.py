"""Neighborhood-attention transformer for single-image super-resolution, in numpy."""

from .autograd import GradTape, Var
from .data import bicubic_resize, load_image, rgb_to_y, save_image
from .io import load_checkpoint, load_model, parse_config, dump_config, save_checkpoint
from .metrics import psnr, ssim
from .model import (Model, ModelConfig, count_params, estimate_flops, init_model,
                    reference_config, tcsr_forward)
from .na import NAParams, na_backward, na_forward
from .tensor import default_dtype, precision, set_default_dtype
from .train import AdamState, EvalResult, TrainConfig, adam_step, evaluate, l1_loss, train

__version__ = "0.1.0"
