import math

import numpy as np

from unboundfield.network.mlp import ParamStore
from unboundfield.trainer.config import TrainConfig


def lr_schedule(step: int, config: TrainConfig) -> float:
    """Log-linear decay from lr_init to lr_final with a linear warmup ramp.

    The ramp rises from `warmup_start` to 1 over `warmup_steps` steps.

    Raises:
        ValueError: If step is outside [0, total_steps].
    """
    if not 0 <= step <= config.total_steps:
        raise ValueError("step must lie in [0, total_steps]")
    x = step / config.total_steps
    lr = math.exp((1 - x) * math.log(config.lr_init) + x * math.log(config.lr_final))
    if config.warmup_steps > 0:
        ramp = min(1.0, step / config.warmup_steps)
        lr *= config.warmup_start + (1 - config.warmup_start) * ramp
    return lr


def global_norm(stores: list[ParamStore]) -> float:
    """Euclidean norm of all gradients taken together, fixed summation order."""
    return math.sqrt(sum(float(np.dot(s.grads, s.grads)) for s in stores))


def clip_gradients(stores: list[ParamStore], max_norm: float) -> float:
    """Rescale all gradients jointly so their global norm is at most max_norm.

    Returns:
        The norm before clipping.
    """
    norm = global_norm(stores)
    if norm > max_norm:
        scale = max_norm / norm
        for store in stores:
            store.grads *= scale
    return norm


class Adam:
    """Adam with bias correction over a fixed set of parameter stores.

    Args:
        sizes: Parameter count of each store, in update order.
        beta1: First moment decay.
        beta2: Second moment decay.
        eps: Denominator offset.
    """

    def __init__(
        self,
        sizes: list[int],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-6,
    ):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(n) for n in sizes]
        self.v = [np.zeros(n) for n in sizes]

    @classmethod
    def from_config(cls, stores: list[ParamStore], config: TrainConfig) -> "Adam":
        return cls(
            [s.size for s in stores],
            beta1=config.adam_beta1,
            beta2=config.adam_beta2,
            eps=config.adam_eps,
        )

    def step(self, stores: list[ParamStore], lr: float) -> None:
        """Apply one update in place using each store's current gradients.

        Raises:
            ValueError: If the stores do not match the moment shapes.
        """
        if [s.size for s in stores] != [len(m) for m in self.m]:
            raise ValueError("stores do not match optimizer state")
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for store, m, v in zip(stores, self.m, self.v):
            g = store.grads
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            store.values -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"adam_t": np.array([self.t])}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"adam_m{i}"] = m
            out[f"adam_v{i}"] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays["adam_t"][0])
        for i in range(len(self.m)):
            self.m[i] = arrays[f"adam_m{i}"].astype(float).copy()
            self.v[i] = arrays[f"adam_v{i}"].astype(float).copy()
