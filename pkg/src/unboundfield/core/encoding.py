"""Integrated positional encoding of Gaussians and view-direction encoding.

Feature layout is fixed: basis-major, level-minor, with the whole sine block
first and the cosine block second. Parameter checkpoints depend on it.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from unboundfield.assets import OFF_AXIS_BASIS_PATH
from unboundfield.core.geometry import GaussianSegment


@dataclass(frozen=True)
class EncodingBasis:
    """Projection directions for positional encoding.

    Args:
        rows: Shape (m, 3), every row unit norm within 1e-6.

    Raises:
        ValueError: If the shape is wrong or a row is not unit norm.
    """

    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, float)
        if rows.ndim != 2 or rows.shape[1] != 3:
            raise ValueError("basis must have shape (m, 3)")
        if np.any(np.abs(np.linalg.norm(rows, axis=1) - 1) > 1e-6):
            raise ValueError("basis rows must be unit norm")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    def __len__(self) -> int:
        return len(self.rows)


@lru_cache(maxsize=None)
def off_axis_basis() -> EncodingBasis:
    """The 21-direction icosahedral basis shipped as a text asset."""
    return EncodingBasis(np.loadtxt(OFF_AXIS_BASIS_PATH, comments="#"))


@lru_cache(maxsize=None)
def axis_aligned_basis() -> EncodingBasis:
    return EncodingBasis(np.eye(3))


def feature_width(basis: EncodingBasis, levels: int) -> int:
    return 2 * len(basis) * levels


def projected_variance(cov: np.ndarray, basis: EncodingBasis) -> np.ndarray:
    """diag(P Sigma P^T) for every row of P at once, shape (..., m).

    Evaluated as the column sums of P^T o (Sigma P^T), which never builds
    the m x m product.
    """
    pt = basis.rows.T
    return np.sum(pt * (cov @ pt), axis=-2)


def _encode(
    projected: np.ndarray, variance: np.ndarray | None, levels: int
) -> np.ndarray:
    scales = 2.0 ** np.arange(levels)
    y = (projected[..., :, None] * scales).reshape(projected.shape[:-1] + (-1,))
    features = np.concatenate([np.sin(y), np.cos(y)], axis=-1)
    if variance is None:
        return features
    # exp(-2^(2l-1) var)
    y_var = (variance[..., :, None] * scales**2).reshape(y.shape)
    att = np.exp(-0.5 * y_var)
    return features * np.concatenate([att, att], axis=-1)


def ipe_features(
    seg: GaussianSegment,
    basis: EncodingBasis,
    levels: int,
    integrated: bool = True,
) -> np.ndarray:
    """Expected sinusoidal features of a Gaussian, shape (..., 2 m L).

    Args:
        seg: Gaussians to encode.
        basis: Projection basis P.
        levels: Frequency count L.
        integrated: If False the covariance is ignored and plain positional
            encoding of the mean is returned.

    Raises:
        ValueError: If levels < 1 or the covariance is not finite.
    """
    if levels < 1:
        raise ValueError("levels must be at least 1")
    if not np.all(np.isfinite(seg.cov)):
        raise ValueError("cov must be finite")
    projected = seg.mean @ basis.rows.T
    variance = projected_variance(seg.cov, basis) if integrated else None
    return _encode(projected, variance, levels)


def dir_features(d: np.ndarray, levels: int) -> np.ndarray:
    """Plain positional encoding of unit view directions, shape (..., 6 L).

    Raises:
        ValueError: If a direction is not unit length within 1e-6.
    """
    d = np.asarray(d, float)
    if np.any(np.abs(np.linalg.norm(d, axis=-1) - 1) > 1e-6):
        raise ValueError("direction must be unit length")
    if levels < 1:
        raise ValueError("levels must be at least 1")
    return _encode(d, None, levels)
