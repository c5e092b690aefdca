from pathlib import Path

ASSETS_DIR = Path(__file__).parent
OFF_AXIS_BASIS_PATH = ASSETS_DIR / "off_axis_basis.txt"
