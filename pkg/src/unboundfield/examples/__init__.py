from pathlib import Path

EXAMPLES_DIR = Path(__file__).parent
TOY_CONFIG_PATH = EXAMPLES_DIR / "toy.cfg"
