"""
Oracle suites behind `unboundfield check`.

Each suite takes an rng and returns a list of failure messages; an empty
list is a pass. The reference implementations here (naive double loops,
Monte-Carlo integrals, finite differences) are deliberately independent of
the fast code they check.
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats

from unboundfield.core.geometry import (
    CONTRACT,
    GaussianSegment,
    Ray,
    contract,
    contract_jacobian,
    warp_gaussian,
)
from unboundfield.core.histograms import (
    WeightHistogram,
    composite,
    dilation_epsilon,
    distortion_loss,
    floor_weights,
    proposal_loss,
    resample,
    sample_quantiles,
    schlick_bias,
    weights_from_density,
)
from unboundfield.network.mlp import ParamStore, init_params
from unboundfield.trainer.config import TrainConfig
from unboundfield.trainer.optim import lr_schedule
from unboundfield.trainer.pipeline import build_specs, loss_and_grads, render_rays, total_loss

logger = logging.getLogger(__name__)

Suite = Callable[[np.random.Generator], list[str]]


# ---------------------------------------------------------------------------
# reference implementations
# ---------------------------------------------------------------------------


def random_points(rng: np.random.Generator, n: int, low: float = 1e-3, high: float = 1e3) -> np.ndarray:
    """Points in random directions with log-uniform radii in [low, high]."""
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    r = np.exp(rng.uniform(np.log(low), np.log(high), n))
    return d * r[:, None]


def finite_difference_jacobian(
    f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central differences of f: (..., 3) -> (..., 3), shape (..., 3, 3)."""
    cols = []
    for k in range(3):
        step = np.zeros(3)
        step[k] = h
        cols.append((f(x + step) - f(x - step)) / (2 * h))
    return np.stack(cols, axis=-1)


def monte_carlo_warp(
    seg: GaussianSegment, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and covariance of contract(x) for x ~ N(mean, cov)."""
    x = rng.multivariate_normal(seg.mean, seg.cov, size=n)
    y = contract(x)
    return y.mean(axis=0), np.cov(y, rowvar=False)


def distortion_monte_carlo(hist: WeightHistogram, n_pairs: int, rng: np.random.Generator) -> float:
    """Estimate of the double integral of w(u) w(v) |u - v| from sampled pairs."""
    total = float(np.sum(hist.weights))
    if total == 0:
        return 0.0
    p = hist.weights / total

    def draw() -> np.ndarray:
        bins = rng.choice(len(p), size=n_pairs, p=p)
        return hist.edges[bins] + rng.random(n_pairs) * hist.widths[bins]

    return total**2 * float(np.mean(np.abs(draw() - draw())))


def proposal_loss_naive(hist: WeightHistogram, hist_hat: WeightHistogram) -> float:
    """Single-ray proposal loss by testing every interval pair for overlap."""
    loss = 0.0
    for i, w in enumerate(hist.weights):
        t0, t1 = hist.edges[i], hist.edges[i + 1]
        b = 0.0
        for j, w_hat in enumerate(hist_hat.weights):
            if hist_hat.edges[j] < t1 and hist_hat.edges[j + 1] > t0:
                b += w_hat
        if w > 0:
            loss += max(0.0, w - b) ** 2 / w
    return loss


def shared_point_histograms(
    rng: np.random.Generator, n_points: int = 1024
) -> tuple[WeightHistogram, WeightHistogram]:
    """Two histograms with independent random edges binning one point set.

    Weights are counts over a power-of-two total, so every sum is exact.
    """
    points = rng.random(n_points)

    def binned(n_bins: int) -> WeightHistogram:
        inner = np.sort(rng.random(n_bins - 1))
        edges = np.concatenate([[0.0], inner, [1.0]])
        counts, _ = np.histogram(points, bins=edges)
        return WeightHistogram(edges, counts / n_points)

    return binned(int(rng.integers(2, 64))), binned(int(rng.integers(2, 64)))


def random_histogram(rng: np.random.Generator, max_bins: int = 16) -> WeightHistogram:
    n = int(rng.integers(1, max_bins + 1))
    inner = np.sort(rng.random(n - 1))
    edges = np.concatenate([[0.0], inner, [1.0]])
    weights = rng.dirichlet(np.ones(n)) * rng.uniform(0.1, 1.0)
    return WeightHistogram(edges, weights)


def numerical_gradient(
    loss: Callable[[], float], store: ParamStore, h: float = 1e-6
) -> np.ndarray:
    """Central differences of `loss` with respect to every entry of `store`."""
    grad = np.empty(store.size)
    for k in range(store.size):
        keep = store.values[k]
        store.values[k] = keep + h
        up = loss()
        store.values[k] = keep - h
        down = loss()
        store.values[k] = keep
        grad[k] = (up - down) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor), elementwise."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------


def contraction_suite(rng: np.random.Generator) -> list[str]:
    failures = []
    x = random_points(rng, 10**5)
    y = contract(x)
    inside = np.linalg.norm(x, axis=-1) <= 1
    if not np.array_equal(y[inside], x[inside]):
        failures.append("contraction moved points inside the unit ball")
    if not np.all(np.linalg.norm(y, axis=-1) < 2):
        failures.append("contraction left the radius-2 ball")
    if np.max(np.abs(contract(np.array([3.0, 0.0, 0.0])) - [5 / 3, 0, 0])) > 1e-12:
        failures.append("contract((3, 0, 0)) != (5/3, 0, 0)")
    return failures


def warp_suite(rng: np.random.Generator, n_gaussians: int = 20, n_samples: int = 10**6) -> list[str]:
    failures = []
    x = random_points(rng, 4000, 0.05, 50.0)
    x = x[np.abs(np.linalg.norm(x, axis=-1) - 1) >= 1e-3][:1000]
    analytic = contract_jacobian(x)
    numeric = finite_difference_jacobian(contract, x)
    err = np.linalg.norm(analytic - numeric, axis=(-2, -1)) / np.linalg.norm(analytic, axis=(-2, -1))
    if np.max(err) > 1e-5:
        failures.append(f"jacobian relative error {np.max(err):.2e} > 1e-5")

    for k in range(n_gaussians):
        direction = rng.normal(size=3)
        mean = direction / np.linalg.norm(direction) * rng.uniform(1.5, 5.0)
        a = rng.normal(scale=0.01, size=(3, 3))
        seg = GaussianSegment(mean, a @ a.T + 1e-6 * np.eye(3))
        warped = warp_gaussian(seg, CONTRACT)
        mc_mean, mc_cov = monte_carlo_warp(seg, n_samples, rng)
        mean_err = np.max(np.abs(warped.mean - mc_mean))
        cov_err = np.linalg.norm(warped.cov - mc_cov) / np.linalg.norm(mc_cov)
        if mean_err > 1e-4:
            failures.append(f"gaussian {k}: warped mean off by {mean_err:.2e}")
        if cov_err > 0.05:
            failures.append(f"gaussian {k}: warped covariance off by {cov_err:.1%}")
    return failures


def distortion_suite(rng: np.random.Generator, n_hists: int = 100, n_pairs: int = 10**6) -> list[str]:
    failures = []
    for k in range(n_hists):
        hist = random_histogram(rng)
        closed = float(distortion_loss(hist))
        mc = distortion_monte_carlo(hist, n_pairs, rng)
        if abs(closed - mc) > 0.01 * abs(closed):
            failures.append(f"histogram {k}: closed form {closed:.6g} vs sampled {mc:.6g}")
    hist = WeightHistogram(np.array([0.2, 0.7]), np.array([0.6]))
    if not np.isclose(float(distortion_loss(hist)), 0.6**2 * 0.5 / 3, rtol=1e-14, atol=0):
        failures.append("single-interval distortion differs from w^2 ds / 3")
    return failures


def proposal_suite(rng: np.random.Generator, n_cases: int = 200) -> list[str]:
    failures = []
    for k in range(n_cases):
        hist, hist_hat = shared_point_histograms(rng)
        loss = float(proposal_loss(hist, hist_hat))
        if loss != 0.0:
            failures.append(f"case {k}: shared point set gave loss {loss:.3e}")
        other = random_histogram(rng, 24)
        fast = float(proposal_loss(hist, other))
        slow = proposal_loss_naive(hist, other)
        if abs(fast - slow) > 1e-12:
            failures.append(f"case {k}: prefix-sum loss {fast!r} vs naive {slow!r}")
        warp = lambda s: np.expm1(3 * s) / np.expm1(3.0)  # noqa: E731
        warped = float(
            proposal_loss(
                WeightHistogram(warp(hist.edges), hist.weights),
                WeightHistogram(warp(other.edges), other.weights),
            )
        )
        if abs(warped - fast) > 1e-12:
            failures.append(f"case {k}: loss changed under a monotone remap")
    return failures


def quadrature_suite(rng: np.random.Generator, n_rays: int = 10**4) -> list[str]:
    failures = []
    density = rng.exponential(5.0, size=(n_rays, 32)) * (rng.random((n_rays, 32)) < 0.5)
    edges = np.cumsum(rng.random((n_rays, 33)), axis=-1)
    hist = weights_from_density(density, edges)
    if np.any(np.sum(hist.weights, axis=-1) > 1 + 1e-12):
        failures.append("weights summed above 1")

    empty = weights_from_density(np.zeros((4, 8)), np.tile(np.linspace(1, 2, 9), (4, 1)))
    background = rng.random((4, 3))
    rgb = composite(empty, rng.random((4, 8, 3)), background)
    if not np.array_equal(rgb, background):
        failures.append("empty rays did not composite to their background")

    w = weights_from_density(np.array([1.0, 1.0]), np.array([0.0, 1.0, 2.0])).weights
    e = np.exp(-1.0)
    if np.max(np.abs(w - [1 - e, e * (1 - e)])) > 1e-12:
        failures.append("unit-density weights differ from (1 - 1/e, (1 - 1/e)/e)")
    return failures


def resampler_suite(rng: np.random.Generator, n_samples: int = 10**5) -> list[str]:
    failures = []
    edges = np.concatenate([[0.0], np.sort(rng.random(7)), [1.0]])
    hist = WeightHistogram(edges, rng.dirichlet(np.ones(8)))
    samples = sample_quantiles(hist, n_samples, mode="stratified", rng=rng)
    counts, _ = np.histogram(samples, bins=edges)
    expected = floor_weights(hist.weights, 1e-5, hist.widths) * n_samples
    p_value = stats.chisquare(counts, expected).pvalue
    if p_value < 1e-3:
        failures.append(f"stratified samples fail chi-square (p = {p_value:.2e})")

    uniform = WeightHistogram(np.linspace(0, 1, 17), np.full(16, 1 / 16))
    new = resample(uniform, 16, mode="deterministic")
    if np.max(np.abs(new - np.linspace(0, 1, 17))) > 1e-12:
        failures.append("deterministic resampling of a uniform histogram is not even")
    return failures


def gradient_config() -> TrainConfig:
    """The 4-ray, 8-sample, width-16 configuration the gradient suite uses."""
    return TrainConfig(
        batch_rays=4,
        samples_per_stage=(8, 8, 8),
        prop_depth=2,
        prop_width=16,
        nerf_depth=2,
        nerf_width=16,
        nerf_skip=(1,),
        bottleneck_width=16,
        color_width=16,
        pos_levels=2,
        prop_pos_levels=2,
        dir_levels=1,
        total_steps=100,
    )


def gradient_suite(rng: np.random.Generator, tol: float = 1e-4) -> list[str]:
    failures = []
    config = gradient_config()
    prop_spec, nerf_spec = build_specs(config)
    prop = init_params(prop_spec, rng)
    nerf = init_params(nerf_spec, rng)
    for store in (prop, nerf):
        store.values += rng.normal(scale=0.05, size=store.size)

    n = config.batch_rays
    direction = rng.normal(size=(n, 3))
    direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
    rays = Ray(
        origin=rng.normal(scale=0.5, size=(n, 3)),
        direction=direction,
        base_radius=np.full(n, 0.01),
        near=np.full(n, config.near),
        far=np.full(n, config.far),
    )
    gt = rng.random((n, 3))
    background = rng.random((n, 3))
    edges = render_rays(rays, prop, nerf, config, "train", rng, 50, background).stage_edges

    def forward():
        return render_rays(rays, prop, nerf, config, "eval", None, 50, background, edges)

    def prop_objective() -> float:
        return total_loss(forward(), gt, config).total

    # the proposal term reaches the NeRF only through a stop-gradient
    def nerf_objective() -> float:
        losses = total_loss(forward(), gt, config)
        return losses.total - losses.prop

    for store in (prop, nerf):
        store.zero_grad()
    loss_and_grads(forward(), gt, prop, nerf, config)
    checks = (("proposal", prop, prop_objective), ("nerf", nerf, nerf_objective))
    for name, store, objective in checks:
        numeric = numerical_gradient(objective, store)
        floor = 1e-3 * max(float(np.max(np.abs(numeric))), 1e-12)
        err = relative_error(store.grads, numeric, floor)
        if np.max(err) > tol:
            k = int(np.argmax(err))
            failures.append(
                f"{name} gradient mismatch at {k}: {store.grads[k]:.6e} vs {numeric[k]:.6e}"
            )

    for store in (prop, nerf):
        store.zero_grad()
    loss_and_grads(forward(), gt, prop, nerf, config, terms=("prop",))
    if np.any(nerf.grads != 0):
        failures.append("proposal loss leaked gradient into the NeRF parameters")
    return failures


def schedule_suite(rng: np.random.Generator) -> list[str]:
    failures = []
    config = TrainConfig(total_steps=250_000)
    if abs(lr_schedule(125_000, config) - 2e-4) > 1e-12:
        failures.append("learning rate at the halfway step is not 2e-4")
    if abs(float(schlick_bias(0.5, 10.0)) - 10 / 11) > 1e-12:
        failures.append("schlick bias at 0.5 with b = 10 is not 10/11")
    if abs(dilation_epsilon(2, (64,)) - 0.0103125) > 1e-12:
        failures.append("second-level dilation width is not 0.0103125")
    return failures


SUITES: dict[str, Suite] = {
    "contraction": contraction_suite,
    "warp": warp_suite,
    "distortion": distortion_suite,
    "proposal": proposal_suite,
    "quadrature": quadrature_suite,
    "resampler": resampler_suite,
    "gradient": gradient_suite,
    "schedule": schedule_suite,
}


@dataclass
class CheckResult:
    name: str
    failures: list[str]
    seconds: float

    @property
    def passed(self) -> bool:
        return not self.failures


def run_checks(names: list[str] | None = None, seed: int = 0) -> list[CheckResult]:
    """Run the named suites (all by default), each with its own seeded rng.

    Raises:
        ValueError: For an unknown suite name.
    """
    names = list(SUITES) if names is None else names
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ValueError(f"unknown check suites {unknown}; choose from {list(SUITES)}")
    results = []
    for i, name in enumerate(names):
        start = time.perf_counter()
        failures = SUITES[name](np.random.default_rng([seed, i]))
        results.append(CheckResult(name, failures, time.perf_counter() - start))
        logger.info("%s: %s in %.1fs", name, "ok" if not failures else "FAILED", results[-1].seconds)
    return results
