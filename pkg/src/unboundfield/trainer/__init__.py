from .config import DESK, FULL, PRESETS, TrainConfig
from .optim import Adam, clip_gradients, lr_schedule
from .pipeline import LossBreakdown, loss_and_grads, render_ray, render_rays, total_loss
from .train import (
    NonFiniteLossError,
    TrainState,
    evaluate,
    fit,
    init_state,
    load_state,
    save_state,
    train_step,
)

__all__ = [
    "DESK",
    "FULL",
    "PRESETS",
    "TrainConfig",
    "Adam",
    "clip_gradients",
    "lr_schedule",
    "LossBreakdown",
    "loss_and_grads",
    "render_ray",
    "render_rays",
    "total_loss",
    "NonFiniteLossError",
    "TrainState",
    "evaluate",
    "fit",
    "init_state",
    "load_state",
    "save_state",
    "train_step",
]
