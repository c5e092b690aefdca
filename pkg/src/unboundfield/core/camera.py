"""Pinhole cameras, ray casting and pose normalization.

Convention: right-handed camera frame, x right, y up, looking down -z.
Camera-to-world transforms are stored as a rotation (columns are the
camera axes in world space) plus a position.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from unboundfield.core.geometry import Ray

PIXEL_RADIUS_SCALE = 2 / np.sqrt(12)
POSE_FILE_HEADER = "# unboundfield poses v1"


@dataclass(frozen=True)
class Intrinsics:
    """Shared pinhole intrinsics.

    Args:
        focal: Focal length in pixels.
        width: Image width in pixels.
        height: Image height in pixels.
    """

    focal: float
    width: int
    height: int

    def __post_init__(self):
        if self.focal <= 0:
            raise ValueError("focal must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("width and height must be at least 1")


@dataclass(frozen=True)
class PoseSet:
    """Camera-to-world rigid transforms sharing one set of intrinsics.

    Args:
        rotations: Shape (n, 3, 3), orthonormal with determinant +1.
        positions: Shape (n, 3).
        intrinsics: Shared intrinsics.

    Raises:
        ValueError: If shapes disagree or a rotation is not proper orthonormal
            within 1e-8.
    """

    rotations: np.ndarray
    positions: np.ndarray
    intrinsics: Intrinsics = field(default_factory=lambda: Intrinsics(1.0, 1, 1))

    def __post_init__(self):
        rot = np.asarray(self.rotations, float).reshape(-1, 3, 3)
        pos = np.asarray(self.positions, float).reshape(-1, 3)
        if len(rot) != len(pos):
            raise ValueError("rotations and positions must have equal length")
        err = np.abs(rot @ np.swapaxes(rot, -1, -2) - np.eye(3)).max(initial=0.0)
        if err > 1e-8 or np.any(np.abs(np.linalg.det(rot) - 1) > 1e-8):
            raise ValueError("rotations must be orthonormal with determinant +1")
        object.__setattr__(self, "rotations", rot)
        object.__setattr__(self, "positions", pos)

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, index) -> "PoseSet":
        idx = np.atleast_1d(np.arange(len(self))[index])
        return PoseSet(self.rotations[idx], self.positions[idx], self.intrinsics)

    def matrices(self) -> np.ndarray:
        """Camera-to-world matrices, shape (n, 3, 4)."""
        return np.concatenate([self.rotations, self.positions[..., None]], axis=-1)


def look_at(position: np.ndarray, target: np.ndarray, up: np.ndarray) -> np.ndarray:
    """Rotation whose -z axis points from position to target."""
    back = np.asarray(position, float) - np.asarray(target, float)
    back /= np.linalg.norm(back)
    right = np.cross(up, back)
    norm = np.linalg.norm(right)
    if norm < 1e-12:
        raise ValueError("up must not be parallel to the viewing direction")
    right /= norm
    true_up = np.cross(back, right)
    return np.stack([right, true_up, back], axis=-1)


# ---------------------------------------------------------------------------
# ray generation
# ---------------------------------------------------------------------------


def generate_rays(
    poses: PoseSet,
    pixels: np.ndarray,
    camera_index: np.ndarray | int = 0,
    near: float = 0.1,
    far: float | None = None,
    far_ratio: float = 1e3,
    radius_scale: float = PIXEL_RADIUS_SCALE,
) -> Ray:
    """Cast one ray per (camera, pixel) pair.

    Args:
        poses: Camera poses.
        pixels: Integer pixel coordinates (x, y), shape (..., 2). Rays pass
            through pixel centers.
        camera_index: Camera for each pixel, broadcast against pixels[..., 0].
        near: Near bound t_n.
        far: Far bound t_f. Defaults to far_ratio * near.
        far_ratio: Used when far is None.
        radius_scale: Base radius in units of the pixel footprint at unit
            distance (1/focal).

    Raises:
        ValueError: If a pixel is outside the image.
    """
    k = poses.intrinsics
    pixels = np.asarray(pixels)
    x, y = pixels[..., 0], pixels[..., 1]
    if np.any(x < 0) or np.any(x >= k.width) or np.any(y < 0) or np.any(y >= k.height):
        raise ValueError("pixel outside image bounds")

    cam = np.stack(
        [
            (x + 0.5 - k.width / 2) / k.focal,
            -(y + 0.5 - k.height / 2) / k.focal,
            -np.ones(x.shape),
        ],
        axis=-1,
    )
    idx = np.broadcast_to(np.asarray(camera_index), x.shape)
    world = np.einsum("...ij,...j->...i", poses.rotations[idx], cam)
    direction = world / np.linalg.norm(world, axis=-1, keepdims=True)
    shape = x.shape
    far = far_ratio * near if far is None else far
    return Ray(
        origin=poses.positions[idx],
        direction=direction,
        base_radius=np.full(shape, radius_scale / k.focal),
        near=np.full(shape, near, dtype=float),
        far=np.full(shape, far, dtype=float),
    )


def generate_ray(
    poses: PoseSet,
    pixel_xy: tuple[int, int],
    camera_index: int = 0,
    **kwargs,
) -> Ray:
    """Single-ray form of `generate_rays`."""
    return generate_rays(poses, np.asarray(pixel_xy), camera_index, **kwargs)


def image_rays(poses: PoseSet, camera_index: int, **kwargs) -> Ray:
    """All rays of one camera, batch shape (height, width)."""
    k = poses.intrinsics
    ys, xs = np.meshgrid(np.arange(k.height), np.arange(k.width), indexing="ij")
    return generate_rays(poses, np.stack([xs, ys], axis=-1), camera_index, **kwargs)


# ---------------------------------------------------------------------------
# pose normalization
# ---------------------------------------------------------------------------


def pose_normalization(positions: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Similarity transform that recenters and rescales camera positions.

    Returns (rotation, center, scale) such that
    `scale * (rotation @ (p - center))` is the normalized position. The
    rotation's rows are the principal components, largest first, so the
    smallest component becomes world up (+z).

    Raises:
        ValueError: If fewer than 3 positions are given or they are collinear.
    """
    positions = np.asarray(positions, float)
    if len(positions) < 3:
        raise ValueError("need at least 3 camera positions")
    center = positions.mean(axis=0)
    centered = positions - center
    _, sing, vt = np.linalg.svd(centered, full_matrices=True)
    if sing[0] == 0 or sing[1] <= 1e-9 * sing[0]:
        raise ValueError("camera positions are collinear")
    rotation = vt
    if np.linalg.det(rotation) < 0:
        rotation[2] *= -1
    extent = np.abs(centered @ rotation.T).max()
    return rotation, center, 1.0 / extent


def normalize_poses(poses: PoseSet) -> PoseSet:
    """Recenter, align up with the smallest principal axis, fit in [-1, 1]^3.

    Raises:
        ValueError: For degenerate (collinear) pose sets.
    """
    rotation, center, _ = pose_normalization(poses.positions)
    aligned = (poses.positions - center) @ rotation.T
    positions = aligned / np.abs(aligned).max()
    rotations = rotation @ poses.rotations
    return PoseSet(rotations, positions, poses.intrinsics)


# ---------------------------------------------------------------------------
# pose file IO
# ---------------------------------------------------------------------------


def write_poses(path: str | Path, poses: PoseSet) -> None:
    """Write poses as text: one line per camera, 3x4 row-major then focal width height."""
    k = poses.intrinsics
    lines = [POSE_FILE_HEADER]
    for m in poses.matrices():
        values = " ".join(repr(float(v)) for v in m.ravel())
        lines.append(f"{values} {k.focal!r} {k.width} {k.height}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_poses(path: str | Path) -> PoseSet:
    """Parse a pose file written by `write_poses`.

    Raises:
        ValueError: On a bad header, a malformed record, or records that
            disagree on intrinsics.
    """
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    if not lines or lines[0] != POSE_FILE_HEADER:
        raise ValueError(f"{path}: missing header {POSE_FILE_HEADER!r}")

    mats, intrinsics = [], set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 15:
            raise ValueError(f"{path}:{lineno}: expected 15 fields, got {len(parts)}")
        mats.append(np.array([float(v) for v in parts[:12]]).reshape(3, 4))
        intrinsics.add((float(parts[12]), int(parts[13]), int(parts[14])))
    if len(intrinsics) != 1:
        raise ValueError(f"{path}: cameras must share one set of intrinsics")

    mats = np.stack(mats)
    return PoseSet(mats[:, :, :3], mats[:, :, 3], Intrinsics(*intrinsics.pop()))
