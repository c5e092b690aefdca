"""
Ray geometry notes:

  - Every function accepts leading batch dimensions: a single ray is a
    (3,) origin, a batch of rays is (..., 3).
  - Distances along a ray come in two flavours: metric `t` and normalized
    `s` in [0, 1]. Sampling happens in `s`, geometry happens in `t`.
  - The contraction is the identity on the closed unit ball, so Gaussians
    that never leave it are passed through untouched.
"""

from dataclasses import dataclass
from typing import Callable, Literal, Protocol

import numpy as np

Curve = Literal["reciprocal", "logarithmic", "linear"]

CURVES: tuple[Curve, ...] = ("reciprocal", "logarithmic", "linear")


@dataclass(frozen=True)
class Ray:
    """A cone-traced camera ray (or a batch of them).

    Args:
        origin: Ray origin, shape (..., 3).
        direction: Unit direction, shape (..., 3).
        base_radius: Cone radius at unit distance along `direction`, shape (...).
        near: Near bound t_n, shape (...).
        far: Far bound t_f, shape (...).

    Raises:
        ValueError: If a direction is not unit length, a radius is not
            positive, or the bounds are not 0 < near < far < inf.
    """

    origin: np.ndarray
    direction: np.ndarray
    base_radius: np.ndarray
    near: np.ndarray
    far: np.ndarray

    def __post_init__(self):
        for name in ("origin", "direction", "base_radius", "near", "far"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), float))

        if self.origin.shape[-1:] != (3,) or self.direction.shape != self.origin.shape:
            raise ValueError("origin and direction must share a (..., 3) shape")
        norms = np.linalg.norm(self.direction, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ValueError("direction must be unit length")
        if np.any(self.base_radius <= 0):
            raise ValueError("base_radius must be positive")
        if not np.all(np.isfinite(self.far)):
            raise ValueError("far must be finite")
        if np.any(self.near <= 0) or np.any(self.far <= self.near):
            raise ValueError("bounds must satisfy 0 < near < far")

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.origin.shape[:-1]

    def __len__(self) -> int:
        return int(np.prod(self.batch_shape)) if self.batch_shape else 1

    def __getitem__(self, index) -> "Ray":
        return Ray(
            origin=self.origin[index],
            direction=self.direction[index],
            base_radius=self.base_radius[index],
            near=self.near[index],
            far=self.far[index],
        )

    def flatten(self) -> "Ray":
        """The same rays with batch shape (len(self),)."""
        n = len(self)
        return Ray(
            origin=self.origin.reshape(n, 3),
            direction=self.direction.reshape(n, 3),
            base_radius=self.base_radius.reshape(n),
            near=self.near.reshape(n),
            far=self.far.reshape(n),
        )

    @staticmethod
    def concatenate(rays: "list[Ray]") -> "Ray":
        """Join flat ray batches end to end."""
        return Ray(
            origin=np.concatenate([r.origin for r in rays]),
            direction=np.concatenate([r.direction for r in rays]),
            base_radius=np.concatenate([r.base_radius for r in rays]),
            near=np.concatenate([r.near for r in rays]),
            far=np.concatenate([r.far for r in rays]),
        )

    def at(self, t: np.ndarray) -> np.ndarray:
        """Points r(t) = o + t d, t broadcast against the batch shape."""
        t = np.asarray(t, float)
        return self.origin[..., None, :] + t[..., None] * self.direction[..., None, :]


@dataclass(frozen=True)
class GaussianSegment:
    """Mean and full covariance of one (or a batch of) ray intervals.

    Args:
        mean: Shape (..., 3).
        cov: Symmetric positive semi-definite, shape (..., 3, 3).
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, float))
        object.__setattr__(self, "cov", np.asarray(self.cov, float))
        if self.mean.shape[-1:] != (3,) or self.cov.shape != self.mean.shape + (3,):
            raise ValueError("mean must be (..., 3) and cov (..., 3, 3)")

    def check(self, tol: float = 1e-10) -> None:
        """Validate symmetry and positive semi-definiteness.

        Raises:
            ValueError: If the covariance is not symmetric or has an
                eigenvalue below -tol.
        """
        if not np.all(np.isfinite(self.cov)):
            raise ValueError("cov must be finite")
        if np.max(np.abs(self.cov - np.swapaxes(self.cov, -1, -2)), initial=0.0) > tol:
            raise ValueError("cov must be symmetric")
        if np.min(np.linalg.eigvalsh(self.cov), initial=0.0) < -tol:
            raise ValueError("cov must be positive semi-definite")


# ---------------------------------------------------------------------------
# normalized ray distance
# ---------------------------------------------------------------------------

_CURVE_FNS: dict[str, tuple[Callable, Callable]] = {
    "reciprocal": (np.reciprocal, np.reciprocal),
    "logarithmic": (np.log, np.exp),
    "linear": (lambda x: x, lambda y: y),
}


def _curve(g: str) -> tuple[Callable, Callable]:
    if g not in _CURVE_FNS:
        raise ValueError(f"curve must be one of {CURVES}, got {g!r}")
    return _CURVE_FNS[g]


def _check_bounds(t_near, t_far, g: str) -> None:
    if g != "linear" and np.any(np.asarray(t_near) <= 0):
        raise ValueError(f"t_near must be positive for the {g} curve")
    if np.any(np.asarray(t_far) <= np.asarray(t_near)):
        raise ValueError("t_far must exceed t_near")


def s_to_t(
    s: np.ndarray | float,
    t_near: np.ndarray | float,
    t_far: np.ndarray | float,
    g: Curve = "reciprocal",
) -> np.ndarray:
    """Map normalized distance s in [0, 1] to metric distance t.

    Computes g^-1(s g(t_far) + (1 - s) g(t_near)). `t_near`/`t_far` broadcast
    against `s` (pass them with a trailing axis for per-ray bounds).

    Raises:
        ValueError: If s leaves [0, 1], or t_near <= 0 for a curve that
            needs positive distances.
    """
    fn, fn_inv = _curve(g)
    s = np.asarray(s, float)
    if np.any(s < 0) or np.any(s > 1):
        raise ValueError("s must lie in [0, 1]")
    _check_bounds(t_near, t_far, g)
    gn, gf = fn(np.asarray(t_near, float)), fn(np.asarray(t_far, float))
    t = fn_inv(s * gf + (1 - s) * gn)
    # pin the endpoints, the curve inverse can drift by an ulp
    t = np.where(s == 0, t_near, t)
    return np.where(s == 1, t_far, t)


def t_to_s(
    t: np.ndarray | float,
    t_near: np.ndarray | float,
    t_far: np.ndarray | float,
    g: Curve = "reciprocal",
) -> np.ndarray:
    """Inverse of `s_to_t`: (g(t) - g(t_near)) / (g(t_far) - g(t_near)).

    Raises:
        ValueError: If t_near <= 0 for a curve that needs positive distances.
    """
    fn, _ = _curve(g)
    _check_bounds(t_near, t_far, g)
    gn, gf = fn(np.asarray(t_near, float)), fn(np.asarray(t_far, float))
    return (fn(np.asarray(t, float)) - gn) / (gf - gn)


# ---------------------------------------------------------------------------
# conical frustum moments
# ---------------------------------------------------------------------------


def conical_frustum_to_gaussian(
    ray: Ray, t0: np.ndarray, t1: np.ndarray
) -> GaussianSegment:
    """Gaussian moments of the cone frustum between t0 and t1.

    Uses the midpoint/half-width parameterization of the closed-form
    moments, which stays stable for thin intervals far from the origin.
    `t0`/`t1` carry one extra trailing axis over the ray batch (the
    interval axis).

    Args:
        ray: Ray or batch of rays, batch shape B.
        t0: Interval starts, shape B + (n,).
        t1: Interval ends, shape B + (n,).

    Returns:
        GaussianSegment with mean B + (n, 3) and cov B + (n, 3, 3).

    Raises:
        ValueError: If any t1 <= t0.
    """
    t0 = np.asarray(t0, float)
    t1 = np.asarray(t1, float)
    if np.any(t1 <= t0):
        raise ValueError("t1 must exceed t0")

    mu = (t0 + t1) / 2
    hw = (t1 - t0) / 2
    mu2, hw2 = mu**2, hw**2
    denom = 3 * mu2 + hw2

    t_mean = mu + (2 * mu * hw2) / denom
    t_var = hw2 / 3 - (4 / 15) * (hw2**2 * (12 * mu2 - hw2)) / denom**2
    r2 = ray.base_radius[..., None] ** 2
    r_var = r2 * (mu2 / 4 + (5 / 12) * hw2 - (4 / 15) * hw2**2 / denom)

    d = ray.direction[..., None, :]
    mean = ray.origin[..., None, :] + t_mean[..., None] * d
    dd = d[..., :, None] * d[..., None, :]
    eye = np.eye(3)
    cov = t_var[..., None, None] * dd + r_var[..., None, None] * (eye - dd)
    return GaussianSegment(mean=mean, cov=cov)


# ---------------------------------------------------------------------------
# contraction and warping
# ---------------------------------------------------------------------------


def contract(x: np.ndarray) -> np.ndarray:
    """Squash space into a radius-2 ball.

    Identity for |x| <= 1, (2 - 1/|x|) x/|x| outside.
    """
    x = np.asarray(x, float)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    safe = np.maximum(norm, 1.0)
    return np.where(norm <= 1, x, (2 - 1 / safe) * (x / safe))


def contract_jacobian(x: np.ndarray) -> np.ndarray:
    """Analytic Jacobian of `contract`, shape (..., 3, 3).

    On the unit sphere the outside branch's one-sided limit is used.
    """
    x = np.asarray(x, float)
    norm = np.linalg.norm(x, axis=-1)
    safe = np.maximum(norm, 1.0)[..., None, None]
    xh = x[..., :, None] / safe
    outer = xh * np.swapaxes(xh, -1, -2)
    eye = np.broadcast_to(np.eye(3), outer.shape)
    # radial derivative 1/r^2, tangential scale (2 - 1/r)/r
    outside = outer / safe**2 + ((2 - 1 / safe) / safe) * (eye - outer)
    return np.where((norm < 1)[..., None, None], eye, outside)


def contract_jvp(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Apply the contraction's Jacobian at x to the columns of v.

    Never forms the Jacobian. `v` has shape (..., 3, k).
    """
    x = np.asarray(x, float)
    v = np.asarray(v, float)
    norm = np.linalg.norm(x, axis=-1)
    safe = np.maximum(norm, 1.0)[..., None, None]
    xh = x[..., :, None] / safe
    radial = np.sum(xh * v, axis=-2, keepdims=True)
    out = radial * xh / safe**2 + ((2 - 1 / safe) / safe) * (v - xh * radial)
    return np.where((norm < 1)[..., None, None], v, out)


class SmoothMap(Protocol):
    """A differentiable map R^3 -> R^3 usable by `warp_gaussian`."""

    def __call__(self, x: np.ndarray) -> np.ndarray: ...

    def jacobian(self, x: np.ndarray) -> np.ndarray: ...

    def jvp(self, x: np.ndarray, v: np.ndarray) -> np.ndarray: ...


class Contraction:
    """`contract` packaged as a SmoothMap."""

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return contract(x)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        return contract_jacobian(x)

    def jvp(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        return contract_jvp(x, v)


class IdentityMap:
    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, float)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, float)
        return np.broadcast_to(np.eye(3), x.shape + (3,)).copy()

    def jvp(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        return np.asarray(v, float)


CONTRACT = Contraction()
IDENTITY = IdentityMap()


def warp_gaussian(
    seg: GaussianSegment,
    f: SmoothMap = CONTRACT,
    method: Literal["jacobian", "linearize"] = "jacobian",
) -> GaussianSegment:
    """Push a Gaussian through f using its linearization at the mean.

    Returns (f(mu), J Sigma J^T). With `method="linearize"` the Jacobian is
    never built: the Jacobian-vector product is applied to Sigma, the result
    transposed, and the product applied again.

    Raises:
        ValueError: If method is unknown.
    """
    mean = f(seg.mean)
    if method == "jacobian":
        jac = f.jacobian(seg.mean)
        cov = jac @ seg.cov @ np.swapaxes(jac, -1, -2)
    elif method == "linearize":
        half = f.jvp(seg.mean, seg.cov)
        cov = f.jvp(seg.mean, np.swapaxes(half, -1, -2))
    else:
        raise ValueError("method must be 'jacobian' or 'linearize'")
    # symmetrize away round-off
    cov = (cov + np.swapaxes(cov, -1, -2)) / 2
    return GaussianSegment(mean=mean, cov=cov)
