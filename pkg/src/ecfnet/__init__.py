"""
ECFNet desk kit: reference-guided MRI super-resolution on a small NumPy
autodiff core, with phantom data, metrics, training and a CLI.
"""
from .config import ModelConfig, PhantomSpec, RunConfig, TrainConfig, load_run_config
from .errors import EcfError

__version__ = "0.1.0"

__all__ = ["ModelConfig", "PhantomSpec", "RunConfig", "TrainConfig", "load_run_config", "EcfError", "__version__"]
