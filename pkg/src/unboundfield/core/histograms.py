"""
Step-function notes:

  - A histogram is (edges, weights) with edges of shape (..., n + 1) and
    weights of shape (..., n). Leading axes are ray batches.
  - Intervals are half-open, [e_i, e_{i+1}). Intervals that only touch at an
    endpoint do not overlap.
  - Every `*_backward` function returns the adjoint of its forward
    counterpart with respect to weights (or densities). Edges are never
    differentiated: sampled distances sit behind a stop-gradient.
"""

from dataclasses import dataclass
from typing import Literal

import numpy as np

Space = Literal["s", "t"]
SampleMode = Literal["stratified", "deterministic"]

EVAL_BACKGROUND = np.array([0.5, 0.5, 0.5])


@dataclass(frozen=True)
class WeightHistogram:
    """Interval edges and per-interval weights along a ray.

    Args:
        edges: Shape (..., n + 1), non-decreasing.
        weights: Shape (..., n), non-negative.
        space: "s" for normalized distances, "t" for metric ones.

    Raises:
        ValueError: If shapes disagree or the space tag is unknown.
    """

    edges: np.ndarray
    weights: np.ndarray
    space: Space = "s"

    def __post_init__(self):
        edges = np.asarray(self.edges, float)
        weights = np.asarray(self.weights, float)
        if edges.shape[:-1] != weights.shape[:-1] or edges.shape[-1] != weights.shape[-1] + 1:
            raise ValueError("edges must have exactly one more entry than weights")
        if self.space not in ("s", "t"):
            raise ValueError("space must be 's' or 't'")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "weights", weights)

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges, axis=-1)

    @property
    def midpoints(self) -> np.ndarray:
        return (self.edges[..., 1:] + self.edges[..., :-1]) / 2

    def check(self, strict: bool = True) -> None:
        """Validate ordering and sign.

        Raises:
            ValueError: If edges are unsorted (or repeated when strict), or a
                weight is negative or NaN.
        """
        widths = self.widths
        if np.any(widths < 0) or (strict and np.any(widths == 0)):
            raise ValueError("edges must be sorted" + (" strictly" if strict else ""))
        if np.any(np.isnan(self.weights)):
            raise ValueError("weights must not be NaN")
        if np.any(self.weights < 0):
            raise ValueError("weights must be non-negative")

    def __getitem__(self, index) -> "WeightHistogram":
        return WeightHistogram(self.edges[index], self.weights[index], self.space)


def searchsorted(a: np.ndarray, v: np.ndarray, side: str = "left") -> np.ndarray:
    """Row-wise searchsorted for batched sorted arrays.

    Both `a` (..., n) and `v` (..., k) must be sorted along the last axis.
    Ranks come from one stable argsort of the concatenated rows, so ties
    resolve exactly as `np.searchsorted` would; the cost is
    O((n + k) log(n + k)) per row rather than a linear merge.
    """
    a = np.asarray(a, float)
    v = np.asarray(v, float)
    if a.ndim == 1 and v.ndim == 1:
        return np.searchsorted(a, v, side=side)
    batch = np.broadcast_shapes(a.shape[:-1], v.shape[:-1])
    a = np.broadcast_to(a, batch + a.shape[-1:])
    v = np.broadcast_to(v, batch + v.shape[-1:])
    n, k = a.shape[-1], v.shape[-1]

    if side == "right":
        merged, v_slice = np.concatenate([a, v], axis=-1), slice(n, n + k)
    elif side == "left":
        merged, v_slice = np.concatenate([v, a], axis=-1), slice(0, k)
    else:
        raise ValueError("side must be 'left' or 'right'")

    order = np.argsort(merged, axis=-1, kind="stable")
    rank = np.empty_like(order)
    positions = np.broadcast_to(np.arange(n + k), order.shape)
    np.put_along_axis(rank, order, positions, axis=-1)
    return rank[..., v_slice] - np.arange(k)


def _exclusive_cumsum(x: np.ndarray) -> np.ndarray:
    return np.cumsum(x, axis=-1) - x


# ---------------------------------------------------------------------------
# quadrature and compositing
# ---------------------------------------------------------------------------


def weights_from_density(density: np.ndarray, edges_t: np.ndarray) -> WeightHistogram:
    """Alpha-compositing weights of piecewise-constant density.

    w_i = (1 - exp(-tau_i delta_i)) exp(-sum_{k<i} tau_k delta_k).

    Raises:
        ValueError: If a density is negative or not finite.
    """
    density = np.asarray(density, float)
    if np.any(density < 0) or not np.all(np.isfinite(density)):
        raise ValueError("density must be finite and non-negative")
    hist = WeightHistogram(edges_t, np.zeros_like(density), space="t")
    optical = density * hist.widths
    trans = np.exp(-_exclusive_cumsum(optical))
    alpha = -np.expm1(-optical)
    return WeightHistogram(hist.edges, alpha * trans, space="t")


def weights_from_density_backward(
    density: np.ndarray, edges_t: np.ndarray, grad_weights: np.ndarray
) -> np.ndarray:
    """Adjoint of `weights_from_density` with respect to density.

    dL/dx_k = g_k T_{k+1} - sum_{i>k} g_i w_i, with x_k = tau_k delta_k.
    """
    delta = np.diff(np.asarray(edges_t, float), axis=-1)
    optical = np.asarray(density, float) * delta
    acc = np.cumsum(optical, axis=-1)
    trans_next = np.exp(-acc)
    weights = -np.expm1(-optical) * np.exp(-(acc - optical))
    gw = grad_weights * weights
    later = np.sum(gw, axis=-1, keepdims=True) - np.cumsum(gw, axis=-1)
    return (grad_weights * trans_next - later) * delta


def composite(
    weights: WeightHistogram | np.ndarray,
    colors: np.ndarray,
    background: np.ndarray,
) -> np.ndarray:
    """sum_i w_i c_i + (1 - sum_i w_i) background, shape (..., 3).

    Raises:
        ValueError: If colors do not have one row per interval.
    """
    w = weights.weights if isinstance(weights, WeightHistogram) else np.asarray(weights, float)
    colors = np.asarray(colors, float)
    if colors.shape[:-1] != w.shape:
        raise ValueError("colors must have one row per interval")
    acc = np.sum(w, axis=-1, keepdims=True)
    return np.einsum("...i,...ic->...c", w, colors) + (1 - acc) * background


def composite_backward(
    weights: np.ndarray,
    colors: np.ndarray,
    background: np.ndarray,
    grad_rgb: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Adjoints of `composite` with respect to weights and colors."""
    background = np.broadcast_to(background, grad_rgb.shape)
    grad_w = np.einsum("...c,...ic->...i", grad_rgb, colors - background[..., None, :])
    grad_colors = weights[..., :, None] * grad_rgb[..., None, :]
    return grad_w, grad_colors


def median_depth(hist: WeightHistogram) -> np.ndarray:
    """Distance where normalized accumulated weight first reaches 0.5.

    Linear interpolation inside the crossing interval. Rays with zero total
    weight return their last edge (the far plane).
    """
    w = hist.weights
    total = np.sum(w, axis=-1, keepdims=True)
    safe = np.where(total > 0, total, 1.0)
    cdf = np.concatenate([np.zeros_like(total), np.cumsum(w, axis=-1)], axis=-1) / safe
    idx = np.sum(cdf[..., 1:] < 0.5, axis=-1, keepdims=True)
    idx = np.minimum(idx, w.shape[-1] - 1)

    lo = np.take_along_axis(cdf, idx, axis=-1)
    mass = np.take_along_axis(w, idx, axis=-1) / safe
    start = np.take_along_axis(hist.edges, idx, axis=-1)
    width = np.take_along_axis(hist.widths, idx, axis=-1)
    frac = np.clip((0.5 - lo) / np.where(mass > 0, mass, 1.0), 0.0, 1.0)
    depth = (start + frac * width)[..., 0]
    return np.where(total[..., 0] > 0, depth, hist.edges[..., -1])


# ---------------------------------------------------------------------------
# annealing and dilation
# ---------------------------------------------------------------------------


def schlick_bias(x: np.ndarray | float, bias: float) -> np.ndarray:
    """(b x) / ((b - 1) x + 1)."""
    x = np.asarray(x, float)
    return bias * x / ((bias - 1) * x + 1)


def anneal_weights(
    weights: np.ndarray, step: int, total_steps: int, bias: float = 10.0
) -> np.ndarray:
    """Raise weights to the Schlick-biased training fraction, keep their sum.

    Raises:
        ValueError: If a weight is negative, bias <= 0 or step is outside
            [0, total_steps].
    """
    weights = np.asarray(weights, float)
    if np.any(weights < 0):
        raise ValueError("weights must be non-negative")
    if bias <= 0:
        raise ValueError("bias must be positive")
    if not 0 <= step <= total_steps or total_steps <= 0:
        raise ValueError("step must lie in [0, total_steps]")
    exponent = schlick_bias(step / total_steps, bias)
    powered = weights**exponent
    total = np.sum(weights, axis=-1, keepdims=True)
    norm = np.sum(powered, axis=-1, keepdims=True)
    return np.where(norm > 0, powered * total / np.where(norm > 0, norm, 1.0), 0.0)


def dilation_epsilon(
    level: int, sample_counts: tuple[int, ...] | np.ndarray, a: float = 0.5, b: float = 0.0025
) -> float:
    """a / prod(sample counts of levels before `level`) + b, levels 1-based.

    Raises:
        ValueError: If level < 1 or there are too few counts.
    """
    if level < 1:
        raise ValueError("level must be at least 1")
    counts = np.asarray(sample_counts, float)
    if len(counts) < level - 1:
        raise ValueError("need a sample count for every earlier level")
    return float(a / np.prod(counts[: level - 1]) + b)


def dilate(
    hist: WeightHistogram,
    eps: float,
    domain: tuple[float, float] = (0.0, 1.0),
) -> WeightHistogram:
    """Max-filter a histogram's density over [s - eps, s + eps).

    The dilated step function is exact on the refined edge set
    sort(s, s - eps, s + eps) clipped to `domain`; the result is converted
    back to weights that sum to 1. Clipping may leave zero-width intervals,
    which always carry zero weight.

    Raises:
        ValueError: If the histogram is not in s-space, its edges are
            unsorted, or eps < 0.
    """
    if hist.space != "s":
        raise ValueError("dilation works on s-space histograms")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    hist.check(strict=False)
    if eps == 0:
        total = np.sum(hist.weights, axis=-1, keepdims=True)
        return WeightHistogram(
            hist.edges, hist.weights / np.where(total > 0, total, 1.0), space="s"
        )

    widths = hist.widths
    density = np.where(widths > 0, hist.weights / np.where(widths > 0, widths, 1.0), 0.0)
    edges = np.sort(
        np.concatenate([hist.edges, hist.edges - eps, hist.edges + eps], axis=-1), axis=-1
    )
    edges = np.clip(edges, *domain)
    mids = (edges[..., 1:] + edges[..., :-1]) / 2

    # source bins overlapping the window [m - eps, m + eps)
    lo = searchsorted(hist.edges[..., 1:], mids - eps, side="right")
    hi = searchsorted(hist.edges[..., :-1], mids + eps, side="left")
    bins = np.arange(density.shape[-1])
    mask = (bins >= lo[..., None]) & (bins < hi[..., None])
    dilated = np.max(np.where(mask, density[..., None, :], 0.0), axis=-1, initial=0.0)

    weights = dilated * np.diff(edges, axis=-1)
    total = np.sum(weights, axis=-1, keepdims=True)
    weights = weights / np.where(total > 0, total, 1.0)
    return WeightHistogram(edges, weights, space="s")


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------


def floor_weights(
    weights: np.ndarray, floor: float, widths: np.ndarray | None = None
) -> np.ndarray:
    """Add `floor` to every bin of positive width and renormalize to sum 1.

    Raises:
        ValueError: If a row has zero total weight after flooring.
    """
    weights = np.asarray(weights, float)
    if widths is None:
        weights = weights + floor
    else:
        weights = weights + np.where(np.asarray(widths) > 0, floor, 0.0)
    total = np.sum(weights, axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise ValueError("cannot sample a histogram with zero total weight")
    return weights / total


def _quantile_levels(
    shape: tuple[int, ...], n: int, mode: SampleMode, rng: np.random.Generator | None
) -> np.ndarray:
    if mode == "deterministic":
        return np.broadcast_to((np.arange(n) + 0.5) / n, shape + (n,))
    if mode == "stratified":
        if rng is None:
            raise ValueError("stratified sampling needs an rng")
        return (np.arange(n) + rng.random(shape + (n,))) / n
    raise ValueError("mode must be 'stratified' or 'deterministic'")


def invert_cdf(edges: np.ndarray, weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse of the piecewise-linear CDF of a normalized histogram.

    `u` must be sorted along the last axis and lie in [0, 1].
    """
    cdf = np.concatenate(
        [np.zeros(weights.shape[:-1] + (1,)), np.cumsum(weights, axis=-1)], axis=-1
    )
    cdf[..., -1] = 1.0
    idx = searchsorted(cdf, u, side="right") - 1
    idx = np.clip(idx, 0, weights.shape[-1] - 1)
    c0 = np.take_along_axis(cdf, idx, axis=-1)
    w = np.take_along_axis(weights, idx, axis=-1)
    e0 = np.take_along_axis(edges, idx, axis=-1)
    e1 = np.take_along_axis(edges, idx + 1, axis=-1)
    frac = np.clip((u - c0) / np.where(w > 0, w, 1.0), 0.0, 1.0)
    return e0 + frac * (e1 - e0)


def sample_quantiles(
    hist: WeightHistogram,
    n: int,
    mode: SampleMode = "deterministic",
    rng: np.random.Generator | None = None,
    floor: float = 1e-5,
) -> np.ndarray:
    """Draw n sorted positions from the histogram by inverse transform sampling.

    Stratified mode jitters one uniform draw inside each of n equal strata;
    deterministic mode uses the stratum centers.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    weights = floor_weights(hist.weights, floor, hist.widths)
    u = _quantile_levels(weights.shape[:-1], n, mode, rng)
    return invert_cdf(hist.edges, weights, u)


def resample(
    hist: WeightHistogram,
    n_out: int,
    mode: SampleMode = "deterministic",
    rng: np.random.Generator | None = None,
    floor: float = 1e-5,
    midpoints: bool = True,
) -> np.ndarray:
    """New interval edges, shape (..., n_out + 1), drawn from a histogram.

    With `midpoints` (the default), n_out sorted samples are drawn and the
    midpoints of adjacent samples become interior edges; the first and last
    samples are reflected about their neighbouring midpoint to close the
    outer intervals, clipped to the histogram's extent. Without it, n_out + 1
    samples are used directly as edges.

    Raises:
        ValueError: If n_out < 1, or a row has zero total weight with
            flooring disabled.
    """
    if n_out < 1:
        raise ValueError("n_out must be at least 1")
    lo, hi = hist.edges[..., :1], hist.edges[..., -1:]
    if not midpoints:
        return sample_quantiles(hist, n_out + 1, mode, rng, floor)

    centers = sample_quantiles(hist, n_out, mode, rng, floor)
    if n_out == 1:
        return np.concatenate([lo, hi], axis=-1)
    mid = (centers[..., 1:] + centers[..., :-1]) / 2
    first = np.maximum(lo, 2 * centers[..., :1] - mid[..., :1])
    last = np.minimum(hi, 2 * centers[..., -1:] - mid[..., -1:])
    return np.concatenate([first, mid, last], axis=-1)


def uniform_edges(shape: tuple[int, ...], n: int, mode: SampleMode, rng=None) -> np.ndarray:
    """n intervals uniform in s over [0, 1]; stratified jitter moves interior edges."""
    edges = np.broadcast_to(np.linspace(0.0, 1.0, n + 1), shape + (n + 1,)).copy()
    if mode == "stratified":
        if rng is None:
            raise ValueError("stratified sampling needs an rng")
        jitter = (rng.random(shape + (n - 1,)) - 0.5) / n
        edges[..., 1:-1] += jitter
    elif mode != "deterministic":
        raise ValueError("mode must be 'stratified' or 'deterministic'")
    return edges


# ---------------------------------------------------------------------------
# proposal supervision
# ---------------------------------------------------------------------------


def _overlap_range(edges: np.ndarray, edges_hat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """For each interval of `edges`, the proposal bins [lo, hi) it overlaps."""
    lo = searchsorted(edges_hat[..., 1:], edges[..., :-1], side="right")
    hi = searchsorted(edges_hat[..., :-1], edges[..., 1:], side="left")
    return lo, np.maximum(hi, lo)


def bound(hist_hat: WeightHistogram, t0: np.ndarray | float, t1: np.ndarray | float) -> np.ndarray:
    """Sum of proposal weights whose interval overlaps [t0, t1).

    Raises:
        ValueError: If t1 <= t0.
    """
    t0 = np.asarray(t0, float)
    t1 = np.asarray(t1, float)
    if np.any(t1 <= t0):
        raise ValueError("interval must satisfy t0 < t1")
    edges = np.stack([t0, t1], axis=-1)
    return _bounds(WeightHistogram(edges, np.zeros(edges.shape[:-1] + (1,)), hist_hat.space), hist_hat)[..., 0]


def _bounds_with_range(
    hist: WeightHistogram, hist_hat: WeightHistogram
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lo, hi = _overlap_range(hist.edges, hist_hat.edges)
    csum = np.concatenate(
        [np.zeros(hist_hat.weights.shape[:-1] + (1,)), np.cumsum(hist_hat.weights, axis=-1)],
        axis=-1,
    )
    csum = np.broadcast_to(csum, lo.shape[:-1] + csum.shape[-1:])
    bounds = np.take_along_axis(csum, hi, axis=-1) - np.take_along_axis(csum, lo, axis=-1)
    return bounds, lo, hi


def _bounds(hist: WeightHistogram, hist_hat: WeightHistogram) -> np.ndarray:
    return _bounds_with_range(hist, hist_hat)[0]


def _check_pair(hist: WeightHistogram, hist_hat: WeightHistogram) -> None:
    if np.any(np.isnan(hist.weights)) or np.any(np.isnan(hist_hat.weights)):
        raise ValueError("weights must not be NaN")
    if hist.space != hist_hat.space:
        raise ValueError("histograms must share one distance space")


def proposal_loss(hist: WeightHistogram, hist_hat: WeightHistogram) -> np.ndarray:
    """Squared surplus of NeRF weights over the proposal bound, per ray.

    sum_i max(0, w_i - bound_i)^2 / w_i, with empty intervals contributing 0.
    Bounds come from a prefix sum of proposal weights indexed by a batched
    `searchsorted` of the two edge sets.

    Raises:
        ValueError: If either histogram holds NaN weights.
    """
    _check_pair(hist, hist_hat)
    w = hist.weights
    surplus = np.maximum(0.0, w - _bounds(hist, hist_hat))
    return np.sum(np.where(w > 0, surplus**2 / np.where(w > 0, w, 1.0), 0.0), axis=-1)


def proposal_loss_backward(
    hist: WeightHistogram, hist_hat: WeightHistogram, grad_loss: np.ndarray | float = 1.0
) -> np.ndarray:
    """Adjoint of `proposal_loss` with respect to the proposal weights only.

    The NeRF histogram is a constant here.
    """
    _check_pair(hist, hist_hat)
    w = hist.weights
    bounds, lo, hi = _bounds_with_range(hist, hist_hat)
    surplus = np.maximum(0.0, w - bounds)
    g = np.where(w > 0, -2 * surplus / np.where(w > 0, w, 1.0), 0.0)
    g = g * np.asarray(grad_loss, float)[..., None]

    # every proposal bin in [lo_i, hi_i) receives g_i: scatter into a
    # difference array, then prefix-sum
    m = hist_hat.weights.shape[-1]
    flat_g = g.reshape(-1, g.shape[-1])
    flat_lo = lo.reshape(-1, lo.shape[-1])
    flat_hi = hi.reshape(-1, hi.shape[-1])
    diff = np.zeros((flat_g.shape[0], m + 1))
    rows = np.broadcast_to(np.arange(flat_g.shape[0])[:, None], flat_g.shape)
    np.add.at(diff, (rows, flat_lo), flat_g)
    np.add.at(diff, (rows, flat_hi), -flat_g)
    return np.cumsum(diff, axis=-1)[:, :m].reshape(g.shape[:-1] + (m,))


# ---------------------------------------------------------------------------
# distortion
# ---------------------------------------------------------------------------


def _check_s_space(hist: WeightHistogram) -> None:
    if hist.space != "s":
        raise ValueError("distortion is defined on normalized s-space histograms")


def distortion_loss(hist: WeightHistogram) -> np.ndarray:
    """Closed form of the weighted all-pairs distance integral, per ray.

    sum_{i,j} w_i w_j |m_i - m_j| + 1/3 sum_i w_i^2 (s_{i+1} - s_i), with the
    pairwise term evaluated in linear time from prefix sums over sorted
    midpoints.

    Raises:
        ValueError: If the histogram is tagged as t-space.
    """
    _check_s_space(hist)
    w, mid = hist.weights, hist.midpoints
    pairs = 2 * np.sum(w * (mid * _exclusive_cumsum(w) - _exclusive_cumsum(w * mid)), axis=-1)
    intra = np.sum(w**2 * hist.widths, axis=-1) / 3
    return pairs + intra


def distortion_loss_backward(
    hist: WeightHistogram, grad_loss: np.ndarray | float = 1.0
) -> np.ndarray:
    """Adjoint of `distortion_loss` with respect to weights."""
    _check_s_space(hist)
    w, mid = hist.weights, hist.midpoints
    w_before, wm_before = _exclusive_cumsum(w), _exclusive_cumsum(w * mid)
    w_after = np.sum(w, axis=-1, keepdims=True) - w_before - w
    wm_after = np.sum(w * mid, axis=-1, keepdims=True) - wm_before - w * mid
    spread = mid * w_before - wm_before + wm_after - mid * w_after
    grad = 2 * spread + (2 / 3) * w * hist.widths
    return grad * np.asarray(grad_loss, float)[..., None]


# ---------------------------------------------------------------------------
# debug text format
# ---------------------------------------------------------------------------


def format_histogram(hist: WeightHistogram, label: str) -> str:
    """Three lines: '# <label> <space>', edges, weights (1-D histograms only)."""
    if hist.edges.ndim != 1:
        raise ValueError("format_histogram takes a single ray's histogram")
    edges = " ".join(repr(float(v)) for v in hist.edges)
    weights = " ".join(repr(float(v)) for v in hist.weights)
    return f"# {label} {hist.space}\n{edges}\n{weights}\n"


def parse_histograms(text: str) -> dict[str, WeightHistogram]:
    """Inverse of concatenated `format_histogram` blocks.

    Raises:
        ValueError: On a truncated or malformed block.
    """
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) % 3:
        raise ValueError("histogram text must come in blocks of three lines")
    out = {}
    for i in range(0, len(lines), 3):
        header = lines[i].split()
        if len(header) != 3 or header[0] != "#":
            raise ValueError(f"bad histogram header: {lines[i]!r}")
        edges = np.array([float(v) for v in lines[i + 1].split()])
        weights = np.array([float(v) for v in lines[i + 2].split()])
        out[header[1]] = WeightHistogram(edges, weights, header[2])  # type: ignore[arg-type]
    return out
