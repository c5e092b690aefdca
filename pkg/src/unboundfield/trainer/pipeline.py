"""
Pipeline notes:

  - Rays go through `len(samples_per_stage)` stages: every stage but the
    last evaluates the proposal MLP and resamples, the last evaluates the
    NeRF MLP once and composites.
  - Sampled interval edges are never differentiated. Passing
    `stage_edges` to `render_rays` replays a previous sampling exactly,
    which is what finite-difference checks rely on.
  - The proposal loss sees the NeRF histogram through `stop_gradient`, so
    its gradient only ever reaches the network that proposed the intervals.
  - `coarse_mode` picks that network: the proposal MLP, or the NeRF MLP
    itself ("shared" and "recon"). In "recon" mode every coarse stage is
    also composited and supervised like the final one.
"""

from dataclasses import dataclass, field
from typing import Collection, Literal

import numpy as np

from unboundfield.core.encoding import (
    EncodingBasis,
    axis_aligned_basis,
    dir_features,
    feature_width,
    ipe_features,
    off_axis_basis,
)
from unboundfield.core.geometry import (
    CONTRACT,
    IDENTITY,
    GaussianSegment,
    Ray,
    conical_frustum_to_gaussian,
    s_to_t,
    warp_gaussian,
)
from unboundfield.core.histograms import (
    EVAL_BACKGROUND,
    WeightHistogram,
    anneal_weights,
    composite,
    composite_backward,
    dilate,
    dilation_epsilon,
    distortion_loss,
    distortion_loss_backward,
    median_depth,
    proposal_loss,
    proposal_loss_backward,
    resample,
    uniform_edges,
    weights_from_density,
    weights_from_density_backward,
)
from unboundfield.network.mlp import (
    MlpOutput,
    MlpSpec,
    ParamStore,
    backward,
    nerf_forward,
    proposal_forward,
)
from unboundfield.trainer.config import TrainConfig

Mode = Literal["train", "eval"]
LOSS_TERMS = ("recon", "dist", "prop")


def encoding_basis(config: TrainConfig) -> EncodingBasis:
    return off_axis_basis() if config.off_axis else axis_aligned_basis()


def build_specs(config: TrainConfig) -> tuple[MlpSpec, MlpSpec]:
    """(proposal spec, NeRF spec) for a config."""
    basis = encoding_basis(config)
    prop = MlpSpec(
        input_width=feature_width(basis, config.prop_pos_levels),
        depth=config.prop_depth,
        width=config.prop_width,
        density_bias=config.density_bias_init,
    )
    nerf = MlpSpec(
        input_width=feature_width(basis, config.pos_levels),
        depth=config.nerf_depth,
        width=config.nerf_width,
        skip_layers=frozenset(config.nerf_skip),
        has_color_head=True,
        dir_width=6 * config.dir_levels,
        bottleneck_width=config.bottleneck_width,
        color_width=config.color_width,
        density_bias=config.density_bias_init,
    )
    return prop, nerf


def position_features(
    rays: Ray, s_edges: np.ndarray, config: TrainConfig, levels: int
) -> tuple[np.ndarray, np.ndarray]:
    """Scaled IPE features of every interval, contracted when `config.contract`.

    Returns:
        (features of shape (R, n, 2 m L), metric edges of shape (R, n + 1)).
    """
    t_edges = s_to_t(s_edges, rays.near[..., None], rays.far[..., None], config.curve)
    seg = conical_frustum_to_gaussian(rays, t_edges[..., :-1], t_edges[..., 1:])
    seg = warp_gaussian(seg, CONTRACT if config.contract else IDENTITY, method=config.warp_method)
    scale = config.position_scale
    seg = GaussianSegment(seg.mean * scale, seg.cov * scale**2)
    features = ipe_features(seg, encoding_basis(config), levels, config.integrated)
    return features, t_edges


def stop_gradient(hist: WeightHistogram) -> WeightHistogram:
    """Frozen copy of a histogram, treated as a constant by every adjoint."""
    edges, weights = hist.edges.copy(), hist.weights.copy()
    edges.setflags(write=False)
    weights.setflags(write=False)
    return WeightHistogram(edges, weights, hist.space)


def next_stage_edges(
    hist: WeightHistogram,
    level: int,
    config: TrainConfig,
    mode: Mode,
    step: int,
    rng: np.random.Generator | None,
) -> np.ndarray:
    """Anneal, dilate and resample one proposal histogram into `level`'s edges.

    `level` is 1-based: the initial uniform intervals are level 1.
    """
    counts = config.samples_per_stage

    def anneal(h: WeightHistogram) -> WeightHistogram:
        if not config.use_anneal:
            return h
        n = min(step, config.total_steps)
        w = anneal_weights(h.weights, n, config.total_steps, config.anneal_b)
        return WeightHistogram(h.edges, w, h.space)

    def dilated(h: WeightHistogram) -> WeightHistogram:
        if not config.use_dilation or level < config.dilation_start_level:
            return h
        eps = dilation_epsilon(level, counts, config.dilation_a, config.dilation_b)
        return dilate(h, eps)

    hist = dilated(anneal(hist)) if config.anneal_before_dilate else anneal(dilated(hist))
    return resample(
        hist,
        counts[level - 1],
        mode="stratified" if mode == "train" else "deterministic",
        rng=rng,
        floor=config.weight_floor,
        midpoints=config.midpoint_resampling,
    )


@dataclass
class StageRecord:
    """One stage's intervals, network output and histogram (s-space)."""

    s_edges: np.ndarray
    t_edges: np.ndarray
    output: MlpOutput
    histogram: WeightHistogram

    @property
    def t_histogram(self) -> WeightHistogram:
        return WeightHistogram(self.t_edges, self.histogram.weights, "t")


@dataclass
class RenderResult:
    rgb: np.ndarray
    depth: np.ndarray
    background: np.ndarray
    stages: list[StageRecord] = field(default_factory=list)
    # composited colors of the coarse stages, "recon" mode only
    stage_rgb: list[np.ndarray] = field(default_factory=list)

    @property
    def histograms(self) -> list[WeightHistogram]:
        return [s.histogram for s in self.stages]

    @property
    def stage_edges(self) -> list[np.ndarray]:
        return [s.s_edges for s in self.stages]


def render_rays(
    rays: Ray,
    prop: ParamStore,
    nerf: ParamStore,
    config: TrainConfig,
    mode: Mode = "eval",
    rng: np.random.Generator | None = None,
    step: int | None = None,
    background: np.ndarray | None = None,
    stage_edges: list[np.ndarray] | None = None,
) -> RenderResult:
    """Hierarchically sample and render a batch of rays.

    Args:
        rays: Ray batch with batch shape (R,).
        prop: Proposal MLP parameters, shared by every proposal stage
            (unused unless `config.coarse_mode` is "proposal").
        nerf: NeRF MLP parameters.
        config: Training configuration.
        mode: "train" jitters samples, "eval" spaces them evenly.
        rng: Random stream, required in train mode.
        step: Training step used for annealing; defaults to total_steps.
        background: Per-ray background (R, 3); defaults to gray.
        stage_edges: Replay these s-space edges instead of sampling.

    Raises:
        ValueError: If train mode lacks an rng or replayed edges do not
            match the stage count.
    """
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    if mode == "train" and rng is None and stage_edges is None:
        raise ValueError("train mode needs an rng")
    n_stages = len(config.samples_per_stage)
    if stage_edges is not None and len(stage_edges) != n_stages:
        raise ValueError(f"expected {n_stages} sets of stage edges")
    step = config.total_steps if step is None else step
    shape = rays.batch_shape
    if background is None:
        background = np.broadcast_to(EVAL_BACKGROUND, shape + (3,))

    if stage_edges is not None:
        s_edges = stage_edges[0]
    else:
        sampling = "stratified" if mode == "train" else "deterministic"
        s_edges = uniform_edges(shape, config.samples_per_stage[0], sampling, rng)

    views = dir_features(rays.direction, config.dir_levels)[..., None, :]
    stages: list[StageRecord] = []
    stage_rgb: list[np.ndarray] = []
    for k in range(n_stages - 1):
        if config.coarse_mode == "proposal":
            features, t_edges = position_features(rays, s_edges, config, config.prop_pos_levels)
            out = proposal_forward(prop, features)
        else:
            features, t_edges = position_features(rays, s_edges, config, config.pos_levels)
            if config.coarse_mode == "recon":
                out = nerf_forward(nerf, features, views)
            else:
                out = proposal_forward(nerf, features)
        hist_t = weights_from_density(out.density, t_edges)
        hist = WeightHistogram(s_edges, hist_t.weights, "s")
        stages.append(StageRecord(s_edges, t_edges, out, hist))
        if out.colors is not None:
            stage_rgb.append(composite(hist_t, out.colors, background))
        if stage_edges is not None:
            s_edges = stage_edges[k + 1]
        else:
            s_edges = next_stage_edges(hist, k + 2, config, mode, step, rng)

    features, t_edges = position_features(rays, s_edges, config, config.pos_levels)
    out = nerf_forward(nerf, features, views)
    hist_t = weights_from_density(out.density, t_edges)
    stages.append(StageRecord(s_edges, t_edges, out, WeightHistogram(s_edges, hist_t.weights, "s")))

    rgb = composite(hist_t, out.colors, background)
    return RenderResult(
        rgb=rgb,
        depth=median_depth(hist_t),
        background=background,
        stages=stages,
        stage_rgb=stage_rgb,
    )


def render_ray(
    ray: Ray,
    prop: ParamStore,
    nerf: ParamStore,
    config: TrainConfig,
    mode: Mode = "eval",
    rng: np.random.Generator | None = None,
    step: int | None = None,
) -> tuple[np.ndarray, float, list[WeightHistogram]]:
    """Single-ray form of `render_rays`: (rgb, median depth, stage histograms)."""
    result = render_rays(ray.flatten(), prop, nerf, config, mode, rng, step)
    return result.rgb[0], float(result.depth[0]), [h[0] for h in result.histograms]


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


@dataclass
class LossBreakdown:
    total: float
    recon: float
    dist: float
    prop: float
    prop_stages: list[float]
    coarse_stages: list[float] = field(default_factory=list)

    def as_dict(self) -> dict[str, float]:
        out = {"loss": self.total, "recon": self.recon, "dist": self.dist, "prop": self.prop}
        for k, value in enumerate(self.prop_stages):
            out[f"prop_{k}"] = value
        for k, value in enumerate(self.coarse_stages):
            out[f"coarse_{k}"] = value
        return out


def charbonnier(residual: np.ndarray, eps: float) -> np.ndarray:
    return np.sqrt(residual**2 + eps**2)


def _recon(rgb: np.ndarray, gt: np.ndarray, eps: float) -> float:
    return float(np.mean(np.sum(charbonnier(rgb - gt, eps), axis=-1)))


def total_loss(result: RenderResult, gt: np.ndarray, config: TrainConfig) -> LossBreakdown:
    """Mean over rays of recon + lambda * distortion + sum of proposal losses.

    In "recon" coarse mode the proposal losses are only reported; each
    coarse stage adds its own reconstruction term, scaled by
    `coarse_recon_weight`, instead.

    Raises:
        ValueError: If gt does not have one color per rendered ray.
    """
    gt = np.asarray(gt, float)
    if gt.shape != result.rgb.shape:
        raise ValueError(f"gt shape {gt.shape} does not match renders {result.rgb.shape}")

    eps = config.charbonnier_eps
    recon = _recon(result.rgb, gt, eps)
    final = result.stages[-1].histogram
    dist = float(np.mean(distortion_loss(final)))
    target = stop_gradient(final)
    prop_stages = [float(np.mean(proposal_loss(target, s.histogram))) for s in result.stages[:-1]]
    coarse_stages = [_recon(rgb, gt, eps) for rgb in result.stage_rgb]
    prop = sum(prop_stages) if config.use_prop_loss and config.coarse_mode != "recon" else 0.0
    total = (
        config.recon_weight * (recon + config.coarse_recon_weight * sum(coarse_stages))
        + config.lambda_dist * dist
        + prop
    )
    return LossBreakdown(total, recon, dist, prop, prop_stages, coarse_stages)


def loss_and_grads(
    result: RenderResult,
    gt: np.ndarray,
    prop: ParamStore,
    nerf: ParamStore,
    config: TrainConfig,
    terms: Collection[str] = LOSS_TERMS,
) -> LossBreakdown:
    """Evaluate the loss and accumulate gradients of the selected terms.

    `terms` picks which of "recon", "dist" and "prop" are backpropagated
    (the returned breakdown always reports all of them). Coarse-stage
    reconstruction counts as "recon". Gradients add to whatever the stores
    already hold.

    Raises:
        ValueError: For an unknown term or mismatched gt.
    """
    unknown = set(terms) - set(LOSS_TERMS)
    if unknown:
        raise ValueError(f"unknown loss terms {sorted(unknown)}")
    breakdown = total_loss(result, gt, config)
    n_rays = result.rgb.shape[0]
    do_recon = "recon" in terms and config.recon_weight > 0

    def recon_backward(stage: StageRecord, rgb: np.ndarray, scale: float):
        r = rgb - gt
        grad_rgb = scale * r / charbonnier(r, config.charbonnier_eps) / n_rays
        return composite_backward(
            stage.histogram.weights, stage.output.colors, result.background, grad_rgb
        )

    final = result.stages[-1]
    out = final.output
    grad_w = np.zeros_like(final.histogram.weights)
    grad_colors = np.zeros_like(out.colors)

    if do_recon:
        gw, gc = recon_backward(final, result.rgb, config.recon_weight)
        grad_w += gw
        grad_colors += gc
    if "dist" in terms and config.lambda_dist > 0:
        grad_w += distortion_loss_backward(final.histogram, config.lambda_dist / n_rays)
    if np.any(grad_w) or np.any(grad_colors):
        grad_density = weights_from_density_backward(out.density, final.t_edges, grad_w)
        backward(nerf, out.tape, grad_density, grad_colors)

    if config.coarse_mode == "recon":
        if do_recon and config.coarse_recon_weight > 0:
            scale = config.recon_weight * config.coarse_recon_weight
            for stage, rgb in zip(result.stages[:-1], result.stage_rgb):
                gw, gc = recon_backward(stage, rgb, scale)
                grad_density = weights_from_density_backward(
                    stage.output.density, stage.t_edges, gw
                )
                backward(nerf, stage.output.tape, grad_density, gc)
    elif "prop" in terms and config.use_prop_loss:
        proposer = prop if config.coarse_mode == "proposal" else nerf
        target = stop_gradient(final.histogram)
        for stage in result.stages[:-1]:
            grad_hat = proposal_loss_backward(target, stage.histogram, 1.0 / n_rays)
            grad_density = weights_from_density_backward(
                stage.output.density, stage.t_edges, grad_hat
            )
            backward(proposer, stage.output.tape, grad_density)
    return breakdown
