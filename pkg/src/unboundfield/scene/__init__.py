from .oracle import Primitive, SceneOracle, oracle_render, toy_scene
from .dataset import Dataset, make_dataset
from .io import ImageBuffer, read_ppm, read_scene, write_ppm, write_scene

__all__ = [
    "Primitive",
    "SceneOracle",
    "oracle_render",
    "toy_scene",
    "Dataset",
    "make_dataset",
    "ImageBuffer",
    "read_ppm",
    "read_scene",
    "write_ppm",
    "write_scene",
]
