"""Training and model configuration.

Config files are plain text, one `key = value` per line, `#` starts a
comment, tuples are comma separated and booleans are `true`/`false`.
Unknown keys are rejected.
"""

import hashlib
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping

from unboundfield.core.geometry import CURVES

# "proposal": a separate density-only MLP, distilled with the proposal loss.
# "shared": the NeRF MLP proposes its own intervals, still distilled.
# "recon": the NeRF MLP renders every stage, each supervised by reconstruction.
COARSE_MODES = ("proposal", "shared", "recon")


@dataclass(frozen=True)
class TrainConfig:
    """Every knob of a training run. Defaults are the desk-scale preset.

    Raises:
        ValueError: If a value is out of range (see `validate`).
    """

    # ---- losses ----
    lambda_dist: float = 0.01
    charbonnier_eps: float = 0.001
    recon_weight: float = 1.0
    use_prop_loss: bool = True
    coarse_recon_weight: float = 0.1
    # ---- optimization ----
    batch_rays: int = 1024
    total_steps: int = 5000
    lr_init: float = 2e-3
    lr_final: float = 2e-5
    warmup_steps: int = 512
    warmup_start: float = 0.1
    grad_clip_norm: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-6
    seed: int = 0
    # ---- sampling ----
    samples_per_stage: tuple[int, ...] = (32, 32, 16)
    near: float = 0.1
    far_ratio: float = 1000.0
    curve: str = "reciprocal"
    weight_floor: float = 1e-5
    midpoint_resampling: bool = True
    use_anneal: bool = True
    anneal_b: float = 10.0
    use_dilation: bool = True
    dilation_a: float = 0.5
    dilation_b: float = 0.0025
    dilation_start_level: int = 2
    anneal_before_dilate: bool = True
    random_background: bool = True
    # ---- encoding ----
    pos_levels: int = 12
    prop_pos_levels: int = 12
    dir_levels: int = 4
    position_scale: float = math.pi / 2
    off_axis: bool = True
    integrated: bool = True
    warp_method: str = "jacobian"
    contract: bool = True
    # ---- networks ----
    prop_depth: int = 2
    prop_width: int = 64
    nerf_depth: int = 4
    nerf_width: int = 128
    nerf_skip: tuple[int, ...] = (2,)
    bottleneck_width: int = 128
    color_width: int = 64
    density_bias_init: float = math.log(math.expm1(0.1))
    coarse_mode: str = "proposal"
    # ---- bookkeeping ----
    eval_every: int = 0
    log_every: int = 50

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = (
            "charbonnier_eps", "batch_rays", "total_steps", "lr_init", "lr_final",
            "grad_clip_norm", "adam_eps", "near", "far_ratio", "anneal_b",
            "pos_levels", "prop_pos_levels", "dir_levels", "position_scale",
            "prop_depth", "prop_width", "nerf_depth", "nerf_width",
            "bottleneck_width", "color_width", "log_every",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        non_negative = (
            "lambda_dist", "recon_weight", "coarse_recon_weight", "warmup_steps",
            "weight_floor", "dilation_a", "dilation_b", "eval_every", "seed",
        )
        for name in non_negative:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0 < self.warmup_start <= 1:
            raise ValueError("warmup_start must lie in (0, 1]")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("adam betas must lie in [0, 1)")
        if self.far_ratio <= 1:
            raise ValueError("far_ratio must exceed 1")
        if len(self.samples_per_stage) < 1 or min(self.samples_per_stage) < 1:
            raise ValueError("samples_per_stage needs at least one positive count")
        if self.curve not in CURVES:
            raise ValueError(f"curve must be one of {CURVES}")
        if self.warp_method not in ("jacobian", "linearize"):
            raise ValueError("warp_method must be 'jacobian' or 'linearize'")
        if self.coarse_mode not in COARSE_MODES:
            raise ValueError(f"coarse_mode must be one of {COARSE_MODES}")
        if self.dilation_start_level < 1:
            raise ValueError("dilation_start_level must be at least 1")
        if any(i < 1 or i >= self.nerf_depth for i in self.nerf_skip):
            raise ValueError("nerf_skip entries must lie in 1..nerf_depth-1")

    @property
    def far(self) -> float:
        return self.near * self.far_ratio

    @property
    def num_proposal_stages(self) -> int:
        return len(self.samples_per_stage) - 1

    def updated(self, **changes: Any) -> "TrainConfig":
        return replace(self, **changes)

    # ---- text form ----

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def with_overrides(self, overrides: Mapping[str, str]) -> "TrainConfig":
        """Apply string-valued overrides, coercing to each field's type.

        Raises:
            ValueError: For unknown keys or values that do not parse.
        """
        known = {f.name: getattr(self, f.name) for f in fields(self)}
        changes = {}
        for key, raw in overrides.items():
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            changes[key] = _parse_value(key, raw, known[key])
        return replace(self, **changes)

    @classmethod
    def from_text(cls, text: str, base: "TrainConfig | None" = None) -> "TrainConfig":
        return (base or cls()).with_overrides(parse_key_values(text))

    @classmethod
    def from_file(cls, path: str | Path, base: "TrainConfig | None" = None) -> "TrainConfig":
        return cls.from_text(Path(path).read_text(), base)


def parse_key_values(text: str) -> dict[str, str]:
    """Split `key = value` lines, ignoring blanks and `#` comments.

    Raises:
        ValueError: On a line without '=' or a repeated key.
    """
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key = key.strip()
        if key in out:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(key: str, raw: str, default: Any) -> Any:
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered not in ("true", "false"):
                raise ValueError(raw)
            return lowered == "true"
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ValueError(f"cannot parse {key} = {raw!r}") from None


DESK = TrainConfig()

FULL = TrainConfig(
    batch_rays=2**14,
    total_steps=250_000,
    samples_per_stage=(64, 64, 32),
    prop_depth=4,
    prop_width=256,
    nerf_depth=8,
    nerf_width=1024,
    nerf_skip=(4,),
    bottleneck_width=256,
    color_width=128,
)

PRESETS = {"desk": DESK, "full": FULL}
