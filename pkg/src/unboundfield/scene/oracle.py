"""
Analytic scene notes:

  - A scene is a handful of primitives with constant density. Along any
    ray the density is piecewise constant between the ray's intersections
    with primitive boundaries, so compositing is exact once those
    breakpoints are edges of the quadrature grid.
  - A checker texture is looked up where the ray enters each
    constant-density segment, which keeps every segment one color.
  - Rendering goes through `weights_from_density` and `composite`, the same
    code the trainer uses.
"""

from dataclasses import dataclass
from typing import Literal

import numpy as np

from unboundfield.core.geometry import Ray
from unboundfield.core.histograms import composite, weights_from_density

PrimitiveKind = Literal["sphere", "box", "shell"]

SIZE_COUNTS = {"sphere": 1, "shell": 2, "box": 3}


@dataclass(frozen=True)
class Primitive:
    """A constant-density solid.

    Args:
        kind: "sphere" (size = radius), "shell" (size = inner, outer radius)
            or "box" (size = three half extents).
        center: Shape center.
        size: Kind-dependent extents, see above.
        density: Constant density tau_0 >= 0.
        albedo: Base color in [0, 1]^3.
        checker: Checker frequency in cells per unit length, 0 for plain.

    Raises:
        ValueError: For a malformed or non-finite primitive.
    """

    kind: PrimitiveKind
    center: tuple[float, float, float]
    size: tuple[float, ...]
    density: float
    albedo: tuple[float, float, float]
    checker: float = 0.0

    def __post_init__(self):
        if self.kind not in SIZE_COUNTS:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "size", tuple(float(v) for v in self.size))
        object.__setattr__(self, "albedo", tuple(float(v) for v in self.albedo))
        values = (*self.center, *self.size, *self.albedo, self.density, self.checker)
        if not all(np.isfinite(values)):
            raise ValueError("primitive values must be finite")
        if len(self.center) != 3 or len(self.albedo) != 3:
            raise ValueError("center and albedo need three components")
        if len(self.size) != SIZE_COUNTS[self.kind]:
            raise ValueError(f"{self.kind} needs {SIZE_COUNTS[self.kind]} size values")
        if min(self.size) <= 0:
            raise ValueError("sizes must be positive")
        if self.kind == "shell" and self.size[0] >= self.size[1]:
            raise ValueError("shell inner radius must be below its outer radius")
        if self.density < 0:
            raise ValueError("density must be non-negative")
        if min(self.albedo) < 0 or max(self.albedo) > 1:
            raise ValueError("albedo must lie in [0, 1]")
        if self.checker < 0:
            raise ValueError("checker frequency must be non-negative")

    @property
    def n_breakpoints(self) -> int:
        return 2 if self.kind == "box" else 2 * len(self.size)

    def breakpoints(self, rays: Ray) -> np.ndarray:
        """Distances where rays cross this primitive's boundary, NaN for misses."""
        oc = rays.origin - np.asarray(self.center)
        if self.kind == "box":
            half = np.asarray(self.size)
            with np.errstate(divide="ignore", invalid="ignore"):
                inv = 1.0 / rays.direction
                t1 = (-half - oc) * inv
                t2 = (half - oc) * inv
            t_in = np.max(np.nan_to_num(np.minimum(t1, t2), nan=-np.inf), axis=-1)
            t_out = np.min(np.nan_to_num(np.maximum(t1, t2), nan=np.inf), axis=-1)
            hit = t_in <= t_out
            return np.stack([np.where(hit, t_in, np.nan), np.where(hit, t_out, np.nan)], axis=-1)
        return np.concatenate([_sphere_roots(oc, rays.direction, r) for r in self.size], axis=-1)

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = points - np.asarray(self.center)
        if self.kind == "box":
            return np.all(np.abs(p) <= np.asarray(self.size), axis=-1)
        r = np.linalg.norm(p, axis=-1)
        if self.kind == "sphere":
            return r <= self.size[0]
        return (r >= self.size[0]) & (r <= self.size[1])

    def albedo_at(self, points: np.ndarray) -> np.ndarray:
        base = np.broadcast_to(np.asarray(self.albedo), points.shape)
        if self.checker == 0:
            return base
        cells = np.floor((points - np.asarray(self.center)) * self.checker)
        dark = np.sum(cells, axis=-1) % 2 == 1
        return np.where(dark[..., None], 0.4 * base, base)


def _sphere_roots(oc: np.ndarray, d: np.ndarray, radius: float) -> np.ndarray:
    b = np.sum(oc * d, axis=-1)
    c = np.sum(oc * oc, axis=-1) - radius**2
    disc = b**2 - c
    root = np.sqrt(np.maximum(disc, 0.0))
    roots = np.stack([-b - root, -b + root], axis=-1)
    return np.where((disc >= 0)[..., None], roots, np.nan)


@dataclass(frozen=True)
class SceneOracle:
    """Primitives plus the color seen by rays that escape them."""

    primitives: tuple[Primitive, ...] = ()
    background: tuple[float, float, float] = (0.5, 0.5, 0.5)

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        object.__setattr__(self, "background", tuple(float(v) for v in self.background))
        if len(self.background) != 3 or min(self.background) < 0 or max(self.background) > 1:
            raise ValueError("background must be a color in [0, 1]^3")

    def field(
        self, inside_points: np.ndarray, color_points: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Density at `inside_points` and the density-weighted albedo mix.

        Albedo textures are looked up at `color_points`.
        """
        density = np.zeros(inside_points.shape[:-1])
        color = np.zeros(inside_points.shape)
        for prim in self.primitives:
            tau = np.where(prim.contains(inside_points), prim.density, 0.0)
            density += tau
            color += tau[..., None] * prim.albedo_at(color_points)
        safe = np.where(density > 0, density, 1.0)[..., None]
        color = np.where(density[..., None] > 0, color / safe, 0.0)
        return density, color


@dataclass
class OracleRender:
    rgb: np.ndarray
    depth: np.ndarray
    alpha: np.ndarray
    premultiplied: np.ndarray


def segment_edges(scene: SceneOracle, rays: Ray) -> np.ndarray:
    """Sorted [near, breakpoints..., far] per ray, shape (R, k + 2)."""
    near, far = rays.near[..., None], rays.far[..., None]
    parts = [near]
    for prim in scene.primitives:
        bps = prim.breakpoints(rays)
        parts.append(np.clip(np.where(np.isnan(bps), near, bps), near, far))
    parts.append(far)
    return np.sort(np.concatenate(parts, axis=-1), axis=-1)


def _exact_median(edges: np.ndarray, density: np.ndarray, far: np.ndarray) -> np.ndarray:
    """Distance where accumulated weight reaches half the total, solved exactly."""
    width = np.diff(edges, axis=-1)
    optical = density * width
    before = np.cumsum(optical, axis=-1) - optical
    trans = np.exp(-before)
    w = -np.expm1(-optical) * trans
    cum = np.cumsum(w, axis=-1)
    total = cum[..., -1:]
    target = 0.5 * total

    idx = np.minimum(np.sum(cum < target, axis=-1, keepdims=True), w.shape[-1] - 1)
    need = target - (np.take_along_axis(cum, idx, axis=-1) - np.take_along_axis(w, idx, axis=-1))
    t_start = np.take_along_axis(trans, idx, axis=-1)
    tau = np.take_along_axis(density, idx, axis=-1)
    span = np.take_along_axis(width, idx, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.clip(np.nan_to_num(need / t_start), 0.0, 1.0)
        u = np.where(ratio < 1, -np.log1p(-ratio) / tau, span)
    u = np.clip(np.where(np.isfinite(u), u, 0.0), 0.0, span)
    depth = (np.take_along_axis(edges, idx, axis=-1) + u)[..., 0]
    return np.where(total[..., 0] > 0, depth, far)


def oracle_render(
    scene: SceneOracle, rays: Ray, quadrature_n: int = 1000, max_elements: int = 2**21
) -> OracleRender:
    """Reference color, median depth and opacity of a flat ray batch.

    Every constant-density segment is split into `quadrature_n` equal
    pieces. Depth is the exact half-weight distance (rays with no weight
    report their far bound).

    Raises:
        ValueError: If quadrature_n < 1 or the rays are not a flat batch.
    """
    if quadrature_n < 1:
        raise ValueError("quadrature_n must be at least 1")
    if len(rays.batch_shape) != 1:
        raise ValueError("oracle_render takes a flat ray batch; use Ray.flatten")
    n_rays = rays.batch_shape[0]
    n_segments = sum(p.n_breakpoints for p in scene.primitives) + 1
    chunk = max(1, max_elements // (n_segments * quadrature_n))

    rgb = np.empty((n_rays, 3))
    fg = np.empty((n_rays, 3))
    depth = np.empty(n_rays)
    alpha = np.empty(n_rays)
    background = np.asarray(scene.background)
    for start in range(0, n_rays, chunk):
        part = rays[start : start + chunk]
        edges = segment_edges(scene, part)
        mids = part.at((edges[..., 1:] + edges[..., :-1]) / 2)
        density, color = scene.field(mids, part.at(edges[..., :-1]))

        frac = np.arange(quadrature_n) / quadrature_n
        starts = edges[..., :-1, None] + np.diff(edges, axis=-1)[..., None] * frac
        fine = np.concatenate([starts.reshape(len(part), -1), edges[..., -1:]], axis=-1)
        hist = weights_from_density(np.repeat(density, quadrature_n, axis=-1), fine)
        fine_color = np.repeat(color, quadrature_n, axis=-2)

        sl = slice(start, start + chunk)
        rgb[sl] = composite(hist, fine_color, background)
        fg[sl] = composite(hist, fine_color, np.zeros(3))
        alpha[sl] = np.sum(hist.weights, axis=-1)
        depth[sl] = _exact_median(edges, density, part.far)
    return OracleRender(rgb=rgb, depth=depth, alpha=alpha, premultiplied=fg)


def toy_scene() -> SceneOracle:
    """Textured opaque sphere, a small off-axis sphere, and a far enclosing shell."""
    return SceneOracle(
        primitives=(
            Primitive("sphere", (0.0, 0.0, 0.0), (0.35,), 1000.0, (0.85, 0.45, 0.2), checker=6.0),
            Primitive("sphere", (0.45, 0.35, 0.25), (0.06,), 50.0, (0.2, 0.6, 0.9)),
            Primitive("shell", (0.0, 0.0, 0.0), (50.0, 52.0), 1000.0, (0.35, 0.55, 0.3), checker=0.1),
        ),
        background=(0.5, 0.5, 0.5),
    )
