import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from unboundfield.core.camera import Intrinsics, PoseSet, image_rays, look_at
from unboundfield.scene.oracle import SceneOracle, oracle_render

logger = logging.getLogger(__name__)

HOLDOUT_EVERY = 8


@dataclass
class Dataset:
    """Rendered views of a scene with their poses and train/test split.

    Args:
        premultiplied: Foreground color per pixel, (n, H, W, 3).
        alpha: Accumulated opacity per pixel, (n, H, W).
        depths: Median depth per pixel, (n, H, W).
        poses: One pose per view.
        train_indices: Views used for fitting.
        test_indices: Held-out views.
        near: Near bound the views were rendered with.
        far: Far bound the views were rendered with.
    """

    premultiplied: np.ndarray
    alpha: np.ndarray
    depths: np.ndarray
    poses: PoseSet
    train_indices: list[int]
    test_indices: list[int]
    near: float
    far: float

    def images(self, background: np.ndarray) -> np.ndarray:
        """All views composited over `background`, (n, H, W, 3)."""
        return self.premultiplied + (1 - self.alpha[..., None]) * np.asarray(background, float)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        k = self.poses.intrinsics
        with path.open("wb") as fh:
            np.savez(
                fh,
                premultiplied=self.premultiplied,
                alpha=self.alpha,
                depths=self.depths,
                rotations=self.poses.rotations,
                positions=self.poses.positions,
                intrinsics=np.array([k.focal, k.width, k.height], float),
                train_indices=np.array(self.train_indices, int),
                test_indices=np.array(self.test_indices, int),
                bounds=np.array([self.near, self.far]),
            )
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Dataset":
        with np.load(Path(path), allow_pickle=False) as data:
            focal, width, height = data["intrinsics"]
            poses = PoseSet(
                data["rotations"], data["positions"], Intrinsics(float(focal), int(width), int(height))
            )
            near, far = (float(v) for v in data["bounds"])
            return cls(
                premultiplied=data["premultiplied"].copy(),
                alpha=data["alpha"].copy(),
                depths=data["depths"].copy(),
                poses=poses,
                train_indices=[int(i) for i in data["train_indices"]],
                test_indices=[int(i) for i in data["test_indices"]],
                near=near,
                far=far,
            )


def split_indices(n: int, holdout_every: int = HOLDOUT_EVERY) -> tuple[list[int], list[int]]:
    """Every `holdout_every`-th view (starting with the first) is held out."""
    test = [i for i in range(n) if i % holdout_every == 0]
    train = [i for i in range(n) if i % holdout_every != 0]
    return train, test


def ring_poses(
    n_cameras: int,
    image_size: int,
    rng: np.random.Generator,
    radius: float = 1.0,
    height_jitter: float = 0.05,
) -> PoseSet:
    """Cameras evenly spaced on a horizontal ring, all looking at the origin.

    The ring's starting angle and each camera's height are jittered from
    `rng`. The focal length equals the image width.

    Raises:
        ValueError: If n_cameras < 3 or image_size < 1.
    """
    if n_cameras < 3:
        raise ValueError("n_cameras must be at least 3")
    if image_size < 1:
        raise ValueError("image_size must be at least 1")
    phase = rng.uniform(0.0, 2 * np.pi / n_cameras)
    angles = phase + 2 * np.pi * np.arange(n_cameras) / n_cameras
    heights = rng.normal(0.0, height_jitter, n_cameras)
    positions = radius * np.stack([np.cos(angles), np.sin(angles), heights], axis=-1)
    up = np.array([0.0, 0.0, 1.0])
    rotations = np.stack([look_at(p, np.zeros(3), up) for p in positions])
    return PoseSet(rotations, positions, Intrinsics(float(image_size), image_size, image_size))


def make_dataset(
    scene: SceneOracle,
    n_cameras: int,
    image_size: int,
    rng: np.random.Generator,
    near: float = 0.1,
    far: float = 100.0,
    quadrature_n: int = 64,
) -> Dataset:
    """Render a camera ring around `scene` with the analytic oracle.

    Raises:
        ValueError: If n_cameras < 3.
    """
    poses = ring_poses(n_cameras, image_size, rng)
    shape = (n_cameras, image_size, image_size)
    premultiplied = np.empty(shape + (3,))
    alpha = np.empty(shape)
    depths = np.empty(shape)
    for i in range(n_cameras):
        rays = image_rays(poses, i, near=near, far=far).flatten()
        out = oracle_render(scene, rays, quadrature_n)
        premultiplied[i] = out.premultiplied.reshape(image_size, image_size, 3)
        alpha[i] = out.alpha.reshape(image_size, image_size)
        depths[i] = out.depth.reshape(image_size, image_size)
        logger.debug("rendered view %d/%d", i + 1, n_cameras)

    train, test = split_indices(n_cameras)
    logger.info("dataset: %d train views, %d test views, %dpx", len(train), len(test), image_size)
    return Dataset(premultiplied, alpha, depths, poses, train, test, near, far)
