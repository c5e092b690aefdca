from .mlp import (
    MlpSpec,
    ParamStore,
    backward,
    init_params,
    nerf_forward,
    proposal_forward,
)
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint

__all__ = [
    "MlpSpec",
    "ParamStore",
    "backward",
    "init_params",
    "nerf_forward",
    "proposal_forward",
    "Checkpoint",
    "load_checkpoint",
    "save_checkpoint",
]
