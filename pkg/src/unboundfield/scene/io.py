from dataclasses import dataclass
from pathlib import Path

import numpy as np

from unboundfield.scene.oracle import SIZE_COUNTS, Primitive, SceneOracle

SCENE_FILE_HEADER = "# unboundfield scene v1"
DEPTH_FILE_HEADER = "# unboundfield depth v1"


@dataclass(frozen=True)
class ImageBuffer:
    """An RGB image with float channels in [0, 1].

    Args:
        pixels: Shape (height, width, 3).

    Raises:
        ValueError: If the shape is wrong or a value is not finite.
    """

    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels, float)
        if pixels.ndim != 3 or pixels.shape[-1] != 3:
            raise ValueError("pixels must have shape (height, width, 3)")
        if not np.all(np.isfinite(pixels)):
            raise ValueError("pixels must be finite")
        object.__setattr__(self, "pixels", pixels)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def to_bytes(self) -> np.ndarray:
        """8-bit quantization, values clipped to [0, 1] and rounded."""
        return np.rint(np.clip(self.pixels, 0.0, 1.0) * 255).astype(np.uint8)


def write_ppm(path: str | Path, image: ImageBuffer) -> Path:
    """Binary PPM (P6, maxval 255)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    path.write_bytes(header + image.to_bytes().tobytes())
    return path


def read_ppm(path: str | Path) -> ImageBuffer:
    """Read a P6 file with maxval 255 written by `write_ppm`.

    Raises:
        ValueError: If the file is not such a PPM.
    """
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PPM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P6" or tokens[3] != b"255":
        raise ValueError("only 8-bit binary PPM (P6) is supported")
    width, height = int(tokens[1]), int(tokens[2])
    body = data[pos + 1 :]
    if len(body) != width * height * 3:
        raise ValueError("PPM pixel data has the wrong length")
    pixels = np.frombuffer(body, np.uint8).reshape(height, width, 3)
    return ImageBuffer(pixels / 255.0)


def write_depth(path: str | Path, depth: np.ndarray) -> Path:
    """Plain-text float grid: header line, then one row of values per line."""
    depth = np.asarray(depth, float)
    if depth.ndim != 2:
        raise ValueError("depth must be a 2-D grid")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{DEPTH_FILE_HEADER} {depth.shape[1]} {depth.shape[0]}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in depth]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_depth(path: str | Path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith(DEPTH_FILE_HEADER):
        raise ValueError("missing depth file header")
    width, height = (int(v) for v in lines[0][len(DEPTH_FILE_HEADER) :].split())
    grid = np.array([[float(v) for v in ln.split()] for ln in lines[1 : height + 1]])
    if grid.shape != (height, width):
        raise ValueError("depth grid does not match its header")
    return grid


def format_scene(scene: SceneOracle) -> str:
    """Scene file text: header, background line, one primitive per line.

    Primitive lines read `kind cx cy cz density r g b checker size...`.
    """
    lines = [SCENE_FILE_HEADER, "background " + " ".join(repr(v) for v in scene.background)]
    for p in scene.primitives:
        values = (*p.center, p.density, *p.albedo, p.checker, *p.size)
        lines.append(p.kind + " " + " ".join(repr(v) for v in values))
    return "\n".join(lines) + "\n"


def parse_scene(text: str) -> SceneOracle:
    """Inverse of `format_scene`; blank lines and other `#` lines are skipped.

    Raises:
        ValueError: On a missing header or malformed line.
    """
    lines = text.splitlines()
    if not lines or lines[0].strip() != SCENE_FILE_HEADER:
        raise ValueError(f"scene file must start with {SCENE_FILE_HEADER!r}")
    background = (0.5, 0.5, 0.5)
    primitives = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split("#", 1)[0].split()
        if not parts:
            continue
        kind, values = parts[0], parts[1:]
        try:
            numbers = [float(v) for v in values]
        except ValueError:
            raise ValueError(f"line {lineno}: non-numeric value") from None
        if kind == "background":
            if len(numbers) != 3:
                raise ValueError(f"line {lineno}: background needs three values")
            background = tuple(numbers)
            continue
        if kind not in SIZE_COUNTS:
            raise ValueError(f"line {lineno}: unknown primitive {kind!r}")
        if len(numbers) != 8 + SIZE_COUNTS[kind]:
            raise ValueError(f"line {lineno}: {kind} needs {8 + SIZE_COUNTS[kind]} values")
        primitives.append(
            Primitive(
                kind=kind,  # type: ignore[arg-type]
                center=tuple(numbers[0:3]),
                density=numbers[3],
                albedo=tuple(numbers[4:7]),
                checker=numbers[7],
                size=tuple(numbers[8:]),
            )
        )
    return SceneOracle(primitives=tuple(primitives), background=background)


def write_scene(path: str | Path, scene: SceneOracle) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_scene(scene))
    return path


def read_scene(path: str | Path) -> SceneOracle:
    return parse_scene(Path(path).read_text())
