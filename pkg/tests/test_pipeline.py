import numpy as np
import pytest

from unboundfield.checks import gradient_config, proposal_loss_naive, relative_error
from unboundfield.core.encoding import ipe_features
from unboundfield.core.geometry import GaussianSegment, Ray, conical_frustum_to_gaussian
from unboundfield.core.histograms import EVAL_BACKGROUND, WeightHistogram, proposal_loss
from unboundfield.network.mlp import ParamStore, init_params
from unboundfield.trainer.pipeline import (
    LOSS_TERMS,
    RenderResult,
    StageRecord,
    build_specs,
    charbonnier,
    encoding_basis,
    loss_and_grads,
    next_stage_edges,
    position_features,
    render_ray,
    render_rays,
    stop_gradient,
    total_loss,
)

CONFIG = gradient_config()


def _rays(rng, n: int = 4) -> Ray:
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return Ray(
        origin=rng.normal(scale=0.3, size=(n, 3)),
        direction=d,
        base_radius=np.full(n, 0.01),
        near=np.full(n, CONFIG.near),
        far=np.full(n, CONFIG.far),
    )


def _networks(rng, jitter: float = 0.05) -> tuple[ParamStore, ParamStore]:
    prop_spec, nerf_spec = build_specs(CONFIG)
    prop, nerf = init_params(prop_spec, rng), init_params(nerf_spec, rng)
    for store in (prop, nerf):
        store.values += rng.normal(scale=jitter, size=store.size)
    return prop, nerf


def _hand_built(rgb: np.ndarray, hists: list[WeightHistogram]) -> RenderResult:
    stages = [StageRecord(h.edges, h.edges, None, h) for h in hists]  # type: ignore[arg-type]
    return RenderResult(rgb=rgb, depth=np.zeros(len(rgb)), background=np.zeros_like(rgb), stages=stages)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def test_stage_shapes():
    rng = np.random.default_rng(0)
    prop, nerf = _networks(rng)
    result = render_rays(_rays(rng), prop, nerf, CONFIG, "train", rng, step=10)
    assert result.rgb.shape == (4, 3)
    assert result.depth.shape == (4,)
    assert [e.shape for e in result.stage_edges] == [(4, 9)] * 3
    for edges in result.stage_edges:
        assert np.all(np.diff(edges, axis=-1) >= 0)
        assert np.all((edges >= 0) & (edges <= 1))
    for hist in result.histograms:
        assert hist.space == "s"
        assert np.all(hist.weights.sum(axis=-1) <= 1 + 1e-12)


def test_empty_field_renders_background():
    rng = np.random.default_rng(1)
    prop_spec, nerf_spec = build_specs(CONFIG)
    prop, nerf = ParamStore(prop_spec), ParamStore(nerf_spec)
    prop["density/b"][...] = -1e4
    nerf["density/b"][...] = -1e4
    result = render_rays(_rays(rng), prop, nerf, CONFIG)
    np.testing.assert_array_equal(result.rgb, np.broadcast_to(EVAL_BACKGROUND, (4, 3)))
    # rays that hit nothing report the far end of their last interval
    np.testing.assert_array_equal(result.depth, result.stages[-1].t_edges[:, -1])


def test_eval_is_deterministic():
    rng = np.random.default_rng(2)
    prop, nerf = _networks(rng)
    rays = _rays(rng)
    a = render_rays(rays, prop, nerf, CONFIG)
    b = render_rays(rays, prop, nerf, CONFIG)
    np.testing.assert_array_equal(a.rgb, b.rgb)
    np.testing.assert_array_equal(a.depth, b.depth)
    for ea, eb in zip(a.stage_edges, b.stage_edges):
        np.testing.assert_array_equal(ea, eb)


def test_replayed_edges_reproduce_a_render():
    rng = np.random.default_rng(3)
    prop, nerf = _networks(rng)
    rays = _rays(rng)
    bg = rng.random((4, 3))
    first = render_rays(rays, prop, nerf, CONFIG, "train", rng, 20, bg)
    again = render_rays(rays, prop, nerf, CONFIG, "train", None, 20, bg, first.stage_edges)
    np.testing.assert_array_equal(first.rgb, again.rgb)


def test_train_mode_needs_rng_and_matching_edges():
    rng = np.random.default_rng(4)
    prop, nerf = _networks(rng)
    rays = _rays(rng)
    with pytest.raises(ValueError):
        render_rays(rays, prop, nerf, CONFIG, "train")
    with pytest.raises(ValueError):
        render_rays(rays, prop, nerf, CONFIG, stage_edges=[np.zeros((4, 9))])
    with pytest.raises(ValueError):
        render_rays(rays, prop, nerf, CONFIG, "test")  # type: ignore[arg-type]


def test_render_single_ray():
    rng = np.random.default_rng(5)
    prop, nerf = _networks(rng)
    rgb, depth, hists = render_ray(_rays(rng, 1)[0], prop, nerf, CONFIG)
    assert rgb.shape == (3,)
    assert CONFIG.near <= depth <= CONFIG.far
    assert len(hists) == 3
    assert all(h.edges.ndim == 1 for h in hists)


def test_next_stage_edges_skips_dilation_before_start_level():
    hist = WeightHistogram(np.array([[0.0, 0.4, 0.5, 1.0]]), np.array([[0.0, 1.0, 0.0]]))
    config = CONFIG.updated(use_anneal=False, weight_floor=0.0, dilation_start_level=3)
    edges = next_stage_edges(hist, 2, config, "eval", 0, None)
    assert np.all((edges >= 0.4 - 1e-12) & (edges <= 0.5 + 1e-12))
    widened = next_stage_edges(hist, 2, config.updated(dilation_start_level=2), "eval", 0, None)
    assert widened.min() < 0.4 and widened.max() > 0.5


def test_stop_gradient_is_frozen():
    hist = stop_gradient(WeightHistogram(np.linspace(0, 1, 3), np.array([0.5, 0.5])))
    with pytest.raises(ValueError):
        hist.weights[0] = 1.0


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def test_loss_at_zero_residual_is_charbonnier_floor():
    rng = np.random.default_rng(6)
    prop_spec, nerf_spec = build_specs(CONFIG)
    prop, nerf = ParamStore(prop_spec), ParamStore(nerf_spec)
    prop["density/b"][...] = -1e4
    nerf["density/b"][...] = -1e4
    result = render_rays(_rays(rng), prop, nerf, CONFIG)
    losses = total_loss(result, result.rgb.copy(), CONFIG)
    assert losses.recon == pytest.approx(0.003, rel=1e-12)
    assert losses.dist == 0.0
    assert losses.prop == 0.0
    assert losses.total == pytest.approx(0.003, rel=1e-12)


def test_identical_histograms_leave_pure_charbonnier():
    hist = WeightHistogram(np.array([[0.0, 0.3, 1.0]]), np.array([[0.4, 0.5]]))
    rgb = np.array([[0.2, 0.5, 0.9]])
    gt = np.array([[0.1, 0.5, 1.0]])
    config = CONFIG.updated(lambda_dist=0.0)
    losses = total_loss(_hand_built(rgb, [hist, hist]), gt, config)
    expected = float(np.sum(charbonnier(rgb - gt, 0.001)))
    assert losses.prop == pytest.approx(0.0, abs=1e-24)
    assert losses.total == pytest.approx(expected, rel=1e-14)


def test_loss_is_sum_of_terms():
    proposal = WeightHistogram(np.array([[0.0, 0.5, 1.0]]), np.array([[0.2, 0.1]]))
    final = WeightHistogram(np.array([[0.0, 0.25, 0.5, 1.0]]), np.array([[0.3, 0.3, 0.2]]))
    rgb = np.array([[0.6, 0.2, 0.4]])
    gt = np.array([[0.5, 0.25, 0.0]])
    losses = total_loss(_hand_built(rgb, [proposal, final]), gt, CONFIG)

    recon = sum(np.sqrt(r**2 + 1e-6) for r in (0.1, -0.05, 0.4))
    w, m = final.weights[0], final.midpoints[0]
    dist = np.sum(w[:, None] * w[None, :] * np.abs(m[:, None] - m[None, :]))
    dist += np.sum(w**2 * final.widths[0]) / 3
    prop = proposal_loss_naive(final[0], proposal[0])
    assert prop > 0
    assert losses.recon == pytest.approx(recon, rel=1e-12)
    assert losses.dist == pytest.approx(dist, rel=1e-12)
    assert losses.prop == pytest.approx(prop, rel=1e-12)
    assert losses.total == pytest.approx(recon + 0.01 * dist + prop, rel=1e-12)
    assert losses.as_dict()["prop_0"] == losses.prop


def test_disabled_proposal_loss():
    proposal = WeightHistogram(np.array([[0.0, 1.0]]), np.array([[0.0]]))
    final = WeightHistogram(np.array([[0.0, 1.0]]), np.array([[1.0]]))
    config = CONFIG.updated(use_prop_loss=False)
    losses = total_loss(_hand_built(np.zeros((1, 3)), [proposal, final]), np.zeros((1, 3)), config)
    assert losses.prop_stages == [1.0]
    assert losses.prop == 0.0


def test_loss_rejects_bad_input():
    rng = np.random.default_rng(7)
    prop, nerf = _networks(rng)
    result = render_rays(_rays(rng), prop, nerf, CONFIG)
    with pytest.raises(ValueError):
        total_loss(result, np.zeros((3, 3)), CONFIG)
    with pytest.raises(ValueError):
        loss_and_grads(result, result.rgb, prop, nerf, CONFIG, terms=("recon", "tv"))


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(8)
    prop, nerf = _networks(rng)
    rays = _rays(rng)
    gt = rng.random((4, 3))
    bg = rng.random((4, 3))
    edges = render_rays(rays, prop, nerf, CONFIG, "train", rng, 50, bg).stage_edges

    def forward() -> RenderResult:
        return render_rays(rays, prop, nerf, CONFIG, "eval", None, 50, bg, edges)

    loss_and_grads(forward(), gt, prop, nerf, CONFIG)

    def full() -> float:
        return total_loss(forward(), gt, CONFIG).total

    def without_prop() -> float:
        losses = total_loss(forward(), gt, CONFIG)
        return losses.total - losses.prop

    for store, objective in ((prop, full), (nerf, without_prop)):
        picks = rng.choice(store.size, 25, replace=False)
        numeric = np.empty(len(picks))
        for i, k in enumerate(picks):
            keep = store.values[k]
            store.values[k] = keep + 1e-6
            up = objective()
            store.values[k] = keep - 1e-6
            down = objective()
            store.values[k] = keep
            numeric[i] = (up - down) / 2e-6
        floor = 1e-3 * max(np.max(np.abs(store.grads)), 1e-12)
        assert np.max(relative_error(store.grads[picks], numeric, floor)) <= 1e-4


def test_proposal_term_never_reaches_nerf():
    rng = np.random.default_rng(9)
    prop, nerf = _networks(rng)
    result = render_rays(_rays(rng), prop, nerf, CONFIG, "train", rng, 10)
    loss_and_grads(result, rng.random((4, 3)), prop, nerf, CONFIG, terms=("prop",))
    np.testing.assert_array_equal(nerf.grads, 0.0)
    assert np.any(prop.grads != 0)


def test_reconstruction_term_never_reaches_proposal():
    rng = np.random.default_rng(10)
    prop, nerf = _networks(rng)
    result = render_rays(_rays(rng), prop, nerf, CONFIG, "train", rng, 10)
    loss_and_grads(result, rng.random((4, 3)), prop, nerf, CONFIG, terms=("recon", "dist"))
    np.testing.assert_array_equal(prop.grads, 0.0)
    assert np.any(nerf.grads != 0)
    assert set(LOSS_TERMS) == {"recon", "dist", "prop"}


# ---------------------------------------------------------------------------
# ablation switches
# ---------------------------------------------------------------------------


def test_position_features_without_contraction():
    rng = np.random.default_rng(11)
    rays = _rays(rng, 3)
    s_edges = np.tile(np.linspace(0.0, 1.0, 9), (3, 1))
    config = CONFIG.updated(contract=False)
    features, t_edges = position_features(rays, s_edges, config, config.pos_levels)

    seg = conical_frustum_to_gaussian(rays, t_edges[..., :-1], t_edges[..., 1:])
    scale = config.position_scale
    scaled = GaussianSegment(seg.mean * scale, seg.cov * scale**2)
    expected = ipe_features(scaled, encoding_basis(config), config.pos_levels)
    np.testing.assert_allclose(features, expected, rtol=1e-12, atol=1e-12)

    contracted, _ = position_features(rays, s_edges, CONFIG, CONFIG.pos_levels)
    # far intervals lie outside the unit ball, where the two differ
    assert np.all(np.linalg.norm(seg.mean[:, -1], axis=-1) > 1)
    assert not np.allclose(features, contracted)


def test_coarse_recon_loss():
    proposal = WeightHistogram(np.array([[0.0, 0.5, 1.0]]), np.array([[0.2, 0.1]]))
    final = WeightHistogram(np.array([[0.0, 0.25, 0.5, 1.0]]), np.array([[0.3, 0.3, 0.2]]))
    rgb = np.array([[0.6, 0.2, 0.4]])
    coarse_rgb = np.array([[0.5, 0.5, 0.5]])
    gt = np.array([[0.5, 0.25, 0.0]])
    result = _hand_built(rgb, [proposal, final])
    result.stage_rgb = [coarse_rgb]
    config = CONFIG.updated(coarse_mode="recon", lambda_dist=0.0)
    losses = total_loss(result, gt, config)

    recon = float(np.sum(charbonnier(rgb - gt, 0.001)))
    coarse = float(np.sum(charbonnier(coarse_rgb - gt, 0.001)))
    assert losses.prop == 0.0
    assert losses.prop_stages[0] == pytest.approx(proposal_loss_naive(final[0], proposal[0]))
    assert losses.coarse_stages == [pytest.approx(coarse, rel=1e-12)]
    assert losses.total == pytest.approx(recon + 0.1 * coarse, rel=1e-12)
    assert losses.as_dict()["coarse_0"] == losses.coarse_stages[0]


@pytest.mark.parametrize("coarse_mode", ["shared", "recon"])
def test_single_network_modes_render_every_stage_with_nerf(coarse_mode):
    rng = np.random.default_rng(12)
    config = CONFIG.updated(coarse_mode=coarse_mode)
    prop, nerf = _networks(rng)
    prop.values[:] = np.nan
    result = render_rays(_rays(rng), prop, nerf, config, "train", rng, step=10)
    assert np.all(np.isfinite(result.rgb))
    assert len(result.stage_rgb) == (2 if coarse_mode == "recon" else 0)
    for rgb in result.stage_rgb:
        assert rgb.shape == (4, 3)


@pytest.mark.parametrize("coarse_mode", ["shared", "recon"])
def test_single_network_gradients_match_finite_differences(coarse_mode):
    rng = np.random.default_rng(13)
    config = CONFIG.updated(coarse_mode=coarse_mode)
    prop, nerf = _networks(rng)
    rays = _rays(rng)
    gt = rng.random((4, 3))
    bg = rng.random((4, 3))
    edges = render_rays(rays, prop, nerf, config, "train", rng, 50, bg).stage_edges

    def forward() -> RenderResult:
        return render_rays(rays, prop, nerf, config, "eval", None, 50, bg, edges)

    loss_and_grads(forward(), gt, prop, nerf, config)
    np.testing.assert_array_equal(prop.grads, 0.0)
    target = stop_gradient(forward().histograms[-1])

    def objective() -> float:
        # the proposal term is differentiated against a frozen NeRF histogram
        result = forward()
        losses = total_loss(result, gt, config)
        frozen = sum(float(np.mean(proposal_loss(target, h))) for h in result.histograms[:-1])
        return losses.total - losses.prop + (frozen if coarse_mode == "shared" else 0.0)

    picks = rng.choice(nerf.size, 25, replace=False)
    numeric = np.empty(len(picks))
    for i, k in enumerate(picks):
        keep = nerf.values[k]
        nerf.values[k] = keep + 1e-6
        up = objective()
        nerf.values[k] = keep - 1e-6
        down = objective()
        nerf.values[k] = keep
        numeric[i] = (up - down) / 2e-6
    floor = 1e-3 * max(np.max(np.abs(nerf.grads)), 1e-12)
    assert np.max(relative_error(nerf.grads[picks], numeric, floor)) <= 1e-4
