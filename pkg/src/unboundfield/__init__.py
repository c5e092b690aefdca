from .core.geometry import Ray, GaussianSegment, contract, warp_gaussian, s_to_t
from .core.encoding import ipe_features, off_axis_basis
from .core.histograms import (
    WeightHistogram,
    weights_from_density,
    composite,
    proposal_loss,
    distortion_loss,
    resample,
)
from .network.mlp import MlpSpec, ParamStore
from .trainer.config import TrainConfig
from .trainer.pipeline import render_ray, render_rays, total_loss
from .trainer.train import TrainState, train_step, evaluate
from .scene.oracle import SceneOracle, oracle_render, toy_scene
from .scene.dataset import make_dataset

# manim is only pulled in through unboundfield.ui

__all__ = [
    "Ray",
    "GaussianSegment",
    "contract",
    "warp_gaussian",
    "s_to_t",
    "ipe_features",
    "off_axis_basis",
    "WeightHistogram",
    "weights_from_density",
    "composite",
    "proposal_loss",
    "distortion_loss",
    "resample",
    "MlpSpec",
    "ParamStore",
    "TrainConfig",
    "render_ray",
    "render_rays",
    "total_loss",
    "TrainState",
    "train_step",
    "evaluate",
    "SceneOracle",
    "oracle_render",
    "toy_scene",
    "make_dataset",
]
