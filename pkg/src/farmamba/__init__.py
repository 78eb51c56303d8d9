"""Frequency-aware Mamba segmentation with a region-aware reconstruction branch, on numpy."""
from .config import ABLATION_ROWS, RunConfig, from_dict, load_config
from .model import FaRMamba
from .tensor import Tensor, no_grad

__all__ = ["ABLATION_ROWS", "FaRMamba", "RunConfig", "Tensor", "from_dict", "load_config", "no_grad"]
__version__ = "0.1.0"
