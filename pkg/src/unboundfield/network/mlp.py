"""
MLP notes:

  - Dense layers compute y = x @ W + b, with W stored (fan_in, fan_out).
  - ReLU subgradient at exactly 0 is 0.
  - Forward passes return a tape of activations; `backward` consumes it and
    accumulates parameter gradients into the store. Gradients are never
    zeroed implicitly, call `ParamStore.zero_grad` between steps.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

# softplus^-1(0.1): initial density of roughly 0.1 per unit length
DENSITY_BIAS = float(np.log(np.expm1(0.1)))


@dataclass(frozen=True)
class MlpSpec:
    """Shape of a proposal (density only) or NeRF (density + color) MLP.

    Args:
        input_width: Width of the position feature vector.
        depth: Number of hidden trunk layers.
        width: Hidden units per trunk layer.
        skip_layers: Trunk layer indices whose input is concatenated with
            the position features.
        has_color_head: Adds bottleneck, view-direction branch and RGB output.
        dir_width: Width of the direction feature vector (color head only).
        bottleneck_width: Width of the trunk bottleneck (color head only).
        color_width: Hidden units of the color branch (color head only).
        density_bias: Initial bias of the density output.

    Raises:
        ValueError: If a size is not positive or a skip index is out of range.
    """

    input_width: int
    depth: int = 4
    width: int = 256
    skip_layers: frozenset[int] = field(default_factory=frozenset)
    has_color_head: bool = False
    dir_width: int = 0
    bottleneck_width: int = 256
    color_width: int = 128
    density_bias: float = DENSITY_BIAS

    def __post_init__(self):
        object.__setattr__(self, "skip_layers", frozenset(int(i) for i in self.skip_layers))
        if self.input_width < 1 or self.depth < 1 or self.width < 1:
            raise ValueError("input_width, depth and width must be at least 1")
        if any(i < 1 or i >= self.depth for i in self.skip_layers):
            raise ValueError("skip layers must index trunk layers 1..depth-1")
        if self.has_color_head and (self.bottleneck_width < 1 or self.color_width < 1):
            raise ValueError("color head widths must be at least 1")

    def to_json(self) -> str:
        data = asdict(self)
        data["skip_layers"] = sorted(self.skip_layers)
        return json.dumps(data, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MlpSpec":
        data = json.loads(text)
        data["skip_layers"] = frozenset(data["skip_layers"])
        return cls(**data)


def param_layout(spec: MlpSpec) -> dict[str, tuple[int, tuple[int, ...]]]:
    """Name -> (offset, shape) of every parameter tensor, in storage order."""
    shapes: list[tuple[str, tuple[int, ...]]] = []

    def dense(name: str, fan_in: int, fan_out: int):
        shapes.append((f"{name}/w", (fan_in, fan_out)))
        shapes.append((f"{name}/b", (fan_out,)))

    for i in range(spec.depth):
        fan_in = spec.input_width if i == 0 else spec.width
        if i in spec.skip_layers:
            fan_in += spec.input_width
        dense(f"trunk_{i}", fan_in, spec.width)
    dense("density", spec.width, 1)
    if spec.has_color_head:
        dense("bottleneck", spec.width, spec.bottleneck_width)
        dense("color_hidden", spec.bottleneck_width + spec.dir_width, spec.color_width)
        dense("color", spec.color_width, 3)

    layout, offset = {}, 0
    for name, shape in shapes:
        layout[name] = (offset, shape)
        offset += int(np.prod(shape))
    return layout


class ParamStore:
    """Flat parameter vector with named views and a parallel gradient vector.

    Args:
        spec: Network shape.
        values: Optional flat parameter vector; zeros when omitted.

    Raises:
        ValueError: If values has the wrong length.
    """

    def __init__(self, spec: MlpSpec, values: np.ndarray | None = None):
        self.spec = spec
        self.layout = param_layout(spec)
        last_offset, last_shape = list(self.layout.values())[-1]
        self.size = last_offset + int(np.prod(last_shape))

        if values is None:
            values = np.zeros(self.size)
        values = np.asarray(values, float)
        if values.shape != (self.size,):
            raise ValueError(f"expected {self.size} parameters, got {values.shape}")
        self.values = values.copy()
        self.grads = np.zeros(self.size)

    def _view(self, flat: np.ndarray, name: str) -> np.ndarray:
        offset, shape = self.layout[name]
        return flat[offset : offset + int(np.prod(shape))].reshape(shape)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._view(self.values, name)

    def grad(self, name: str) -> np.ndarray:
        return self._view(self.grads, name)

    def zero_grad(self) -> None:
        self.grads[:] = 0.0

    def copy(self) -> "ParamStore":
        out = ParamStore(self.spec, self.values)
        out.grads[:] = self.grads
        return out


def init_params(spec: MlpSpec, rng: np.random.Generator) -> ParamStore:
    """Fan-in scaled uniform weights, zero biases, density bias offset.

    Trunk layers use the ReLU gain (limit sqrt(6 / fan_in)), output heads
    the unit gain (limit sqrt(3 / fan_in)).
    """
    store = ParamStore(spec)
    for name, (_, shape) in store.layout.items():
        if not name.endswith("/w"):
            continue
        gain = 6.0 if name.startswith("trunk_") or name.startswith("color_hidden") else 3.0
        limit = np.sqrt(gain / shape[0])
        store[name][...] = rng.uniform(-limit, limit, size=shape)
    store["density/b"][...] = spec.density_bias
    return store


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


@dataclass
class MlpTape:
    """Activations recorded by a forward pass, consumed by `backward`."""

    spec: MlpSpec
    batch_shape: tuple[int, ...]
    inputs: np.ndarray
    layer_inputs: list[np.ndarray]
    pre_activations: list[np.ndarray]
    trunk_out: np.ndarray
    raw_density: np.ndarray
    color_input: np.ndarray | None = None
    color_pre: np.ndarray | None = None
    colors: np.ndarray | None = None


@dataclass
class MlpOutput:
    density: np.ndarray
    tape: MlpTape
    colors: np.ndarray | None = None


def _check_width(x: np.ndarray, width: int, what: str) -> np.ndarray:
    x = np.asarray(x, float)
    if x.shape[-1] != width:
        raise ValueError(f"{what} width {x.shape[-1]} does not match spec width {width}")
    return x


def _trunk(params: ParamStore, x: np.ndarray) -> tuple[np.ndarray, list, list]:
    spec = params.spec
    h = x
    layer_inputs, pre_activations = [], []
    for i in range(spec.depth):
        inp = h
        if i in spec.skip_layers:
            inp = np.concatenate([h, x], axis=-1)
        pre = inp @ params[f"trunk_{i}/w"] + params[f"trunk_{i}/b"]
        layer_inputs.append(inp)
        pre_activations.append(pre)
        h = np.maximum(pre, 0.0)
    return h, layer_inputs, pre_activations


def proposal_forward(params: ParamStore, features: np.ndarray) -> MlpOutput:
    """Density-only forward pass, tau = softplus(raw).

    Args:
        params: Proposal network parameters.
        features: Position features, shape (..., input_width).

    Raises:
        ValueError: If the feature width does not match the network.
    """
    spec = params.spec
    features = _check_width(features, spec.input_width, "feature")
    batch_shape = features.shape[:-1]
    x = features.reshape(-1, spec.input_width)

    h, layer_inputs, pre = _trunk(params, x)
    raw = (h @ params["density/w"] + params["density/b"])[:, 0]
    tape = MlpTape(spec, batch_shape, x, layer_inputs, pre, h, raw)
    return MlpOutput(density=softplus(raw).reshape(batch_shape), tape=tape)


def nerf_forward(
    params: ParamStore, features: np.ndarray, dir_features: np.ndarray
) -> MlpOutput:
    """Density and view-dependent color.

    Density depends on position features only. Color is a sigmoid over a
    one-hidden-layer branch fed by the trunk bottleneck and the direction
    features. `dir_features` broadcasts against the batch shape of
    `features`.

    Raises:
        ValueError: If the network has no color head or a width mismatches.
    """
    spec = params.spec
    if not spec.has_color_head:
        raise ValueError("nerf_forward needs a spec with a color head")
    out = proposal_forward(params, features)
    tape = out.tape
    batch_shape = tape.batch_shape

    dir_features = _check_width(dir_features, spec.dir_width, "direction feature")
    d = np.broadcast_to(dir_features, batch_shape + (spec.dir_width,)).reshape(-1, spec.dir_width)

    bottleneck = tape.trunk_out @ params["bottleneck/w"] + params["bottleneck/b"]
    color_input = np.concatenate([bottleneck, d], axis=-1)
    color_pre = color_input @ params["color_hidden/w"] + params["color_hidden/b"]
    hidden = np.maximum(color_pre, 0.0)
    colors = expit(hidden @ params["color/w"] + params["color/b"])

    tape.color_input = color_input
    tape.color_pre = color_pre
    tape.colors = colors
    return MlpOutput(
        density=out.density, tape=tape, colors=colors.reshape(batch_shape + (3,))
    )


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def _dense_backward(params: ParamStore, name: str, inp: np.ndarray, g: np.ndarray) -> np.ndarray:
    params.grad(f"{name}/w")[...] += inp.T @ g
    params.grad(f"{name}/b")[...] += g.sum(axis=0)
    return g @ params[f"{name}/w"].T


def backward(
    params: ParamStore,
    tape: MlpTape | None,
    grad_density: np.ndarray,
    grad_colors: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Accumulate parameter gradients for one recorded forward pass.

    Args:
        params: The parameters used in the forward pass.
        tape: Tape returned by `proposal_forward` / `nerf_forward`.
        grad_density: dL/dtau, shape of the forward batch.
        grad_colors: dL/dcolor, batch + (3,); NeRF tapes only.

    Returns:
        (dL/dfeatures, dL/ddir_features or None), shaped like the inputs.

    Raises:
        ValueError: If called without a recorded forward pass or with a
            tape from a different network.
    """
    if not isinstance(tape, MlpTape):
        raise ValueError("backward needs the tape of a recorded forward pass")
    spec = params.spec
    if tape.spec != spec:
        raise ValueError("tape was recorded with a different network spec")
    n = tape.inputs.shape[0]

    g_raw = np.asarray(grad_density, float).reshape(n) * expit(tape.raw_density)
    g_h = _dense_backward(params, "density", tape.trunk_out, g_raw[:, None])

    g_dir = None
    if spec.has_color_head and tape.colors is not None:
        if grad_colors is None:
            grad_colors = np.zeros((n, 3))
        c = tape.colors
        g_logit = np.asarray(grad_colors, float).reshape(n, 3) * c * (1 - c)
        hidden = np.maximum(tape.color_pre, 0.0)
        g_hidden = _dense_backward(params, "color", hidden, g_logit)
        g_pre = g_hidden * (tape.color_pre > 0)
        g_in = _dense_backward(params, "color_hidden", tape.color_input, g_pre)
        b = spec.bottleneck_width
        g_dir = g_in[:, b:]
        g_h = g_h + _dense_backward(params, "bottleneck", tape.trunk_out, g_in[:, :b])

    g_x = np.zeros_like(tape.inputs)
    for i in reversed(range(spec.depth)):
        g_pre = g_h * (tape.pre_activations[i] > 0)
        g_in = _dense_backward(params, f"trunk_{i}", tape.layer_inputs[i], g_pre)
        if i in spec.skip_layers:
            g_x += g_in[:, spec.width :]
            g_in = g_in[:, : spec.width]
        if i == 0:
            g_x += g_in
        else:
            g_h = g_in

    grad_features = g_x.reshape(tape.batch_shape + (spec.input_width,))
    if g_dir is not None:
        g_dir = g_dir.reshape(tape.batch_shape + (spec.dir_width,))
    return grad_features, g_dir
