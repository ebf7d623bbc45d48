"""TimeCNN: timepoint-independent cross-variable convolution for multivariate forecasting."""
from .crosscnn import CrossCnn, CrossLinear, NoMixer, OneCnn, TwoDCnn, mixer_backward, mixer_forward
from .data import SeriesDataset, SplitSpec, load_csv, synth_dynamic_corr
from .evaluation import count_macs, count_params, evaluate
from .model import ModelConfig, TimeCnnParams, backward, forward, init_params, load_checkpoint, save_checkpoint
from .train import TrainConfig, train

__all__ = [
    "CrossCnn",
    "CrossLinear",
    "ModelConfig",
    "NoMixer",
    "OneCnn",
    "SeriesDataset",
    "SplitSpec",
    "TimeCnnParams",
    "TrainConfig",
    "TwoDCnn",
    "backward",
    "count_macs",
    "count_params",
    "evaluate",
    "forward",
    "init_params",
    "load_checkpoint",
    "load_csv",
    "mixer_backward",
    "mixer_forward",
    "save_checkpoint",
    "synth_dynamic_corr",
    "train",
]
