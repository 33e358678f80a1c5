"""Dense network kernel: float64 layers with hand-written backward passes.

Training-mode forward passes record their activations on an explicit
GradientTape; backward walks the tape in reverse and accumulates parameter
gradients. Eval-mode forward (tape=None) is pure and touches no state, so
concurrent scoring is safe.
"""

from __future__ import annotations

import numpy as np

from .core import NumericError

LEAKY_SLOPE = 0.01
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


class GradientTape:
    """Stack of (layer, cache) entries recorded by training-mode forwards.

    backward(upstream) consumes the stack in reverse order, returns the
    gradient with respect to the network input, and accumulates parameter
    gradients into .grads keyed by '<layer name>.<param name>'.
    """

    def __init__(self):
        self._stack: list[tuple] = []
        self.grads: dict[str, np.ndarray] = {}

    def push(self, layer, cache) -> None:
        self._stack.append((layer, cache))

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        if not self._stack:
            raise RuntimeError("backward() called with no recorded forward pass")
        grad = upstream
        for layer, cache in reversed(self._stack):
            grad, param_grads = layer.backward(cache, grad)
            for pname, pgrad in param_grads.items():
                key = f"{layer.name}.{pname}"
                if key in self.grads:
                    self.grads[key] = self.grads[key] + pgrad
                else:
                    self.grads[key] = pgrad
        self._stack.clear()
        return grad


class LinearLayer:
    """y = x @ W^T + b with W of shape [out, in]."""

    def __init__(self, weight, bias, name: str = "linear"):
        self.weight = np.array(weight, dtype=np.float64)
        self.bias = np.array(bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError("weight must be [out, in] and bias [out]")
        self.name = name

    @classmethod
    def init(cls, rng: np.random.Generator, fan_in: int, fan_out: int,
             name: str = "linear") -> "LinearLayer":
        # Xavier-uniform weights, zero biases
        return cls(xavier_uniform(rng, fan_in, fan_out), np.zeros(fan_out), name)

    def parameters(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x: np.ndarray, tape: GradientTape | None = None) -> np.ndarray:
        y = x @ self.weight.T + self.bias
        if tape is not None:
            tape.push(self, x)
        return y

    def backward(self, x, gy):
        gx = gy @ self.weight
        return gx, {"weight": gy.T @ x, "bias": gy.sum(axis=0)}


class LeakyReluLayer:
    def __init__(self, slope: float = LEAKY_SLOPE, name: str = "lrelu"):
        self.slope = slope
        self.name = name

    def parameters(self) -> dict[str, np.ndarray]:
        return {}

    def forward(self, x: np.ndarray, tape: GradientTape | None = None) -> np.ndarray:
        y = np.where(x >= 0.0, x, self.slope * x)
        if tape is not None:
            tape.push(self, x)
        return y

    def backward(self, x, gy):
        return gy * np.where(x >= 0.0, 1.0, self.slope), {}


class BatchNormLayer:
    """Batch normalization over the batch axis.

    Training mode normalizes with biased batch statistics (divisor N) and
    updates running stats as running <- (1-momentum)*running + momentum*batch.
    Eval mode normalizes with the running stats and mutates nothing.
    """

    def __init__(self, dim: int, eps: float = BN_EPS, momentum: float = BN_MOMENTUM,
                 name: str = "bn"):
        self.gamma = np.ones(dim, dtype=np.float64)
        self.beta = np.zeros(dim, dtype=np.float64)
        self.running_mean = np.zeros(dim, dtype=np.float64)
        self.running_var = np.ones(dim, dtype=np.float64)
        self.eps = eps
        self.momentum = momentum
        self.name = name

    def parameters(self) -> dict[str, np.ndarray]:
        return {"gamma": self.gamma, "beta": self.beta}

    def forward(self, x: np.ndarray, tape: GradientTape | None = None) -> np.ndarray:
        if tape is None:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            return self.gamma * (x - self.running_mean) * inv_std + self.beta
        n = x.shape[0]
        if n < 2:
            raise NumericError("batch norm needs at least 2 rows in training mode")
        mean = x.mean(axis=0)
        var = x.var(axis=0)  # biased, divisor n
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_centered = x - mean
        x_hat = x_centered * inv_std
        y = self.gamma * x_hat + self.beta
        m = self.momentum
        self.running_mean *= 1.0 - m
        self.running_mean += m * mean
        self.running_var *= 1.0 - m
        self.running_var += m * var
        tape.push(self, (x_hat, x_centered, inv_std))
        return y

    def backward(self, cache, gy):
        x_hat, x_centered, inv_std = cache
        n = x_hat.shape[0]
        dgamma = (gy * x_hat).sum(axis=0)
        dbeta = gy.sum(axis=0)
        dx_hat = gy * self.gamma
        # chain rule through the batch statistics, not just the affine part
        dvar = (dx_hat * x_centered).sum(axis=0) * -0.5 * inv_std**3
        dmean = -(dx_hat.sum(axis=0)) * inv_std + dvar * (-2.0 / n) * x_centered.sum(axis=0)
        gx = dx_hat * inv_std + dvar * (2.0 / n) * x_centered + dmean / n
        return gx, {"gamma": dgamma, "beta": dbeta}


class CosineHead:
    """Cosine of each row against a trained direction vector."""

    def __init__(self, direction, name: str = "head"):
        self.direction = np.array(direction, dtype=np.float64)
        if self.direction.ndim != 1:
            raise ValueError("direction must be 1-D")
        self.name = name

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int, name: str = "head") -> "CosineHead":
        limit = np.sqrt(6.0 / (dim + 1))
        return cls(rng.uniform(-limit, limit, size=dim), name)

    def parameters(self) -> dict[str, np.ndarray]:
        return {"direction": self.direction}

    def forward(self, e: np.ndarray, tape: GradientTape | None = None) -> np.ndarray:
        w = self.direction
        norm_w = np.linalg.norm(w)
        norms_e = np.linalg.norm(e, axis=1)
        if norm_w == 0.0 or np.any(norms_e == 0.0):
            raise NumericError("cosine head hit a zero-norm vector")
        scores = (e @ w) / (norms_e * norm_w)
        if tape is not None:
            tape.push(self, (e, scores, norms_e, norm_w))
        return scores

    def backward(self, cache, gs):
        e, scores, norms_e, norm_w = cache
        w = self.direction
        ge = gs[:, None] * (w[None, :] / (norms_e[:, None] * norm_w)
                            - scores[:, None] * e / norms_e[:, None] ** 2)
        gw = (gs / norms_e) @ e / norm_w - float(gs @ scores) * w / norm_w**2
        return ge, {"direction": gw}
