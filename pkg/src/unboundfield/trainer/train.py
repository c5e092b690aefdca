import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from tqdm import tqdm

from unboundfield.core.camera import PoseSet, image_rays
from unboundfield.core.geometry import Ray
from unboundfield.core.histograms import EVAL_BACKGROUND, distortion_loss
from unboundfield.network.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from unboundfield.network.mlp import ParamStore, init_params
from unboundfield.trainer.config import TrainConfig
from unboundfield.trainer.optim import Adam, clip_gradients, lr_schedule
from unboundfield.trainer.pipeline import (
    LossBreakdown,
    RenderResult,
    build_specs,
    loss_and_grads,
    render_rays,
)

logger = logging.getLogger(__name__)


class NonFiniteLossError(RuntimeError):
    """Raised when a training step produces a non-finite loss or gradient.

    Args:
        message: Human readable summary.
        diagnostic: JSON-serializable dump of the failing step.
    """

    def __init__(self, message: str, diagnostic: dict):
        super().__init__(message)
        self.diagnostic = diagnostic


@dataclass
class TrainState:
    """Mutable training state: step counter, parameters, Adam moments, rng."""

    config: TrainConfig
    prop: ParamStore
    nerf: ParamStore
    optimizer: Adam
    rng: np.random.Generator
    step: int = 0

    @property
    def stores(self) -> list[ParamStore]:
        return [self.prop, self.nerf]


@dataclass
class StepResult:
    losses: LossBreakdown
    lr: float
    grad_norm: float

    def record(self, step: int) -> dict:
        return {"step": step, **self.losses.as_dict(), "lr": self.lr, "grad_norm": self.grad_norm}


def init_state(config: TrainConfig) -> TrainState:
    """Fresh parameters and optimizer, all seeded from `config.seed`."""
    rng = np.random.default_rng(config.seed)
    prop_spec, nerf_spec = build_specs(config)
    prop = init_params(prop_spec, rng)
    nerf = init_params(nerf_spec, rng)
    optimizer = Adam.from_config([prop, nerf], config)
    return TrainState(config=config, prop=prop, nerf=nerf, optimizer=optimizer, rng=rng)


def _diagnostic(state: TrainState, losses: LossBreakdown | None, indices, reason: str) -> dict:
    return {
        "reason": reason,
        "step": state.step,
        "config_hash": state.config.config_hash,
        "losses": losses.as_dict() if losses else None,
        "grad_norms": {
            "prop": float(np.linalg.norm(state.prop.grads)),
            "nerf": float(np.linalg.norm(state.nerf.grads)),
        },
        "ray_indices": [int(i) for i in np.asarray(indices).ravel()] if indices is not None else None,
    }


def train_step(
    state: TrainState,
    rays: Ray,
    gt: np.ndarray,
    background: np.ndarray | None = None,
    indices: np.ndarray | None = None,
) -> StepResult:
    """Forward, loss, backward, clip and one Adam update; advances `state.step`.

    Args:
        state: Training state, updated in place.
        rays: Ray batch, batch shape (R,).
        gt: Ground-truth colors (R, 3), composited over `background`.
        background: Per-ray background (R, 3); gray when omitted.
        indices: Pixel indices of the batch, only used in diagnostics.

    Raises:
        ValueError: If the run is already at total_steps.
        NonFiniteLossError: If the loss or a gradient is not finite.
    """
    config = state.config
    if state.step >= config.total_steps:
        raise ValueError("training already reached total_steps")

    for store in state.stores:
        store.zero_grad()
    result = render_rays(
        rays,
        state.prop,
        state.nerf,
        config,
        mode="train",
        rng=state.rng,
        step=state.step,
        background=background,
    )
    losses = loss_and_grads(result, gt, state.prop, state.nerf, config)

    if not math.isfinite(losses.total):
        diag = _diagnostic(state, losses, indices, "non-finite loss")
        raise NonFiniteLossError(f"non-finite loss at step {state.step}", diag)
    if not all(np.all(np.isfinite(s.grads)) for s in state.stores):
        diag = _diagnostic(state, losses, indices, "non-finite gradient")
        raise NonFiniteLossError(f"non-finite gradient at step {state.step}", diag)

    norm = clip_gradients(state.stores, config.grad_clip_norm)
    lr = lr_schedule(state.step, config)
    state.optimizer.step(state.stores, lr)
    state.step += 1
    return StepResult(losses=losses, lr=lr, grad_norm=norm)


# ---------------------------------------------------------------------------
# data feeding
# ---------------------------------------------------------------------------


@dataclass
class RayPool:
    """Every training pixel as one flat ray batch.

    Colors are kept premultiplied (foreground only) next to their alpha, so
    a batch can be composited over any background.
    """

    rays: Ray
    premultiplied: np.ndarray
    alpha: np.ndarray

    def __len__(self) -> int:
        return self.alpha.shape[0]

    def sample(
        self, n: int, rng: np.random.Generator
    ) -> tuple[Ray, np.ndarray, np.ndarray, np.ndarray]:
        """n pixels drawn uniformly with replacement: (rays, colors, alpha, indices)."""
        idx = rng.integers(0, len(self), size=n)
        return self.rays[idx], self.premultiplied[idx], self.alpha[idx], idx

    @staticmethod
    def targets(
        premultiplied: np.ndarray, alpha: np.ndarray, background: np.ndarray
    ) -> np.ndarray:
        return premultiplied + (1 - alpha[..., None]) * background


def pool_from_images(
    premultiplied: np.ndarray,
    alpha: np.ndarray,
    poses: PoseSet,
    indices: list[int],
    config: TrainConfig,
) -> RayPool:
    """Flatten the listed cameras' pixels into a `RayPool`.

    Args:
        premultiplied: Foreground colors, shape (n_cameras, H, W, 3).
        alpha: Accumulated opacity, shape (n_cameras, H, W).
    """
    rays = [
        image_rays(poses, i, near=config.near, far_ratio=config.far_ratio).flatten()
        for i in indices
    ]
    return RayPool(
        rays=Ray.concatenate(rays),
        premultiplied=np.concatenate([premultiplied[i].reshape(-1, 3) for i in indices]),
        alpha=np.concatenate([alpha[i].reshape(-1) for i in indices]),
    )


class MetricsLog:
    """Append-only JSON lines file of training records."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def write(self, record: dict) -> None:
        with self.path.open("a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def batch_background(config: TrainConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random per-ray colors when `random_background`, else gray."""
    if config.random_background:
        return rng.random((n, 3))
    return np.broadcast_to(EVAL_BACKGROUND, (n, 3))


def fit(
    state: TrainState,
    pool: RayPool,
    steps: int | None = None,
    metrics: MetricsLog | None = None,
    evaluator: Callable[[TrainState], dict] | None = None,
    progress: bool = True,
) -> TrainState:
    """Run training steps until `steps` more are done or total_steps is hit."""
    config = state.config
    end = config.total_steps if steps is None else min(config.total_steps, state.step + steps)
    logger.info("training steps %d..%d (config %s)", state.step, end, config.config_hash[:12])

    bar = tqdm(total=end - state.step, disable=not progress, desc="fit")
    while state.step < end:
        rays, fg, alpha, idx = pool.sample(config.batch_rays, state.rng)
        background = batch_background(config, len(idx), state.rng)
        gt = pool.targets(fg, alpha, background)
        result = train_step(state, rays, gt, background=background, indices=idx)
        bar.update(1)
        if state.step % config.log_every == 0 or state.step == end:
            record = result.record(state.step)
            if evaluator and config.eval_every and state.step % config.eval_every == 0:
                record.update(evaluator(state))
            bar.set_postfix(loss=f"{result.losses.total:.4g}")
            logger.debug("step %d: %s", state.step, record)
            if metrics:
                metrics.write(record)
    bar.close()
    logger.info("stopped at step %d", state.step)
    return state


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def render_image(
    prop: ParamStore,
    nerf: ParamStore,
    config: TrainConfig,
    poses: PoseSet,
    camera_index: int,
    step: int | None = None,
    chunk: int = 4096,
) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode render of one camera: (rgb (H, W, 3), median depth (H, W))."""
    rays = image_rays(poses, camera_index, near=config.near, far_ratio=config.far_ratio)
    h, w = rays.batch_shape
    flat = rays.flatten()
    rgb = np.empty((h * w, 3))
    depth = np.empty(h * w)
    for start in range(0, h * w, chunk):
        part = flat[start : start + chunk]
        out = render_rays(part, prop, nerf, config, mode="eval", step=step)
        rgb[start : start + chunk] = out.rgb
        depth[start : start + chunk] = out.depth
    return rgb.reshape(h, w, 3), depth.reshape(h, w)


def psnr(mse: float) -> float:
    """-10 log10(mse); +inf for a perfect match."""
    return math.inf if mse == 0 else -10.0 * math.log10(mse)


def image_metrics(rendered: np.ndarray, gt: np.ndarray) -> dict[str, float]:
    rendered = np.asarray(rendered, float)
    gt = np.asarray(gt, float)
    if rendered.shape != gt.shape:
        raise ValueError("rendered and gt images differ in shape")
    mse = float(np.mean((rendered - gt) ** 2))
    return {"mse": mse, "psnr": psnr(mse)}


def evaluate(
    prop: ParamStore,
    nerf: ParamStore,
    config: TrainConfig,
    poses: PoseSet,
    camera_indices: list[int],
    images: np.ndarray,
    step: int | None = None,
) -> dict[str, float]:
    """MSE over all held-out pixels and channels, and its PSNR."""
    rendered = np.stack(
        [render_image(prop, nerf, config, poses, i, step)[0] for i in camera_indices]
    )
    return image_metrics(rendered, images[camera_indices])


def constant_color_baseline(
    train_images: np.ndarray, test_images: np.ndarray
) -> dict[str, float]:
    """Metrics of predicting the mean training color for every test pixel."""
    mean = np.mean(np.asarray(train_images, float).reshape(-1, 3), axis=0)
    return image_metrics(np.broadcast_to(mean, test_images.shape), test_images)


def mean_distortion(result: RenderResult) -> float:
    """Mean final-stage distortion of a rendered batch."""
    return float(np.mean(distortion_loss(result.stages[-1].histogram)))


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_state(path: str | Path, state: TrainState) -> Path:
    """Checkpoint parameters, Adam moments, step, config and rng state."""
    meta = {
        "step": state.step,
        "config": state.config.to_text(),
        "config_hash": state.config.config_hash,
        "rng": state.rng.bit_generator.state,
    }
    ckpt = Checkpoint(
        stores={"prop": state.prop, "nerf": state.nerf},
        arrays=state.optimizer.state_arrays(),
        meta=meta,
    )
    return save_checkpoint(path, ckpt)


def load_state(path: str | Path) -> TrainState:
    """Inverse of `save_state`; training resumes bit-exactly.

    Raises:
        ValueError: If the stored config does not reproduce its hash or the
            stores do not match the config's networks.
    """
    ckpt = load_checkpoint(path)
    config = TrainConfig.from_text(ckpt.meta["config"])
    if config.config_hash != ckpt.meta["config_hash"]:
        raise ValueError("checkpoint config does not match its recorded hash")
    prop_spec, nerf_spec = build_specs(config)
    prop, nerf = ckpt.stores["prop"], ckpt.stores["nerf"]
    if prop.spec != prop_spec or nerf.spec != nerf_spec:
        raise ValueError("checkpoint networks do not match its config")

    rng = np.random.default_rng()
    rng.bit_generator.state = ckpt.meta["rng"]
    optimizer = Adam.from_config([prop, nerf], config)
    optimizer.load_state_arrays(ckpt.arrays)
    return TrainState(
        config=config, prop=prop, nerf=nerf, optimizer=optimizer, rng=rng, step=ckpt.meta["step"]
    )
