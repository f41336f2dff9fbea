"""Micro/macro temporal segment frame prediction on a small numpy autodiff core."""

from .data import Dataset, GenConfig, generate, read_dataset, write_dataset
from .errors import ConfigError, ContractError, DimensionError, FormatError, UstepError
from .metrics import MetricsReport, frame_report, mae, mse, psnr, ssim
from .model import BaselineConfig, CopyLastFrame, RecurrentFreeLite, RecurrentLite, Ustep, UstepConfig
from .segmentation import choose_delta_t, default_delta_T, partition
from .tensor import ParamStore, Tensor, backward, gradcheck, no_grad
from .trainer import TrainConfig, evaluate, train

__version__ = "0.1.0"
