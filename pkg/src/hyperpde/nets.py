"""Main network: activations, architecture bookkeeping, plain forward pass.

The network is a fully connected MLP whose weights are *inputs*, not owned
state: they are generated per task by the hypernetworks. The final layer
has no bias and no activation. Activations expose derivatives up to third
order in closed form because the physics losses differentiate second
input derivatives with respect to the weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf, expit

from .exceptions import ConfigError, ShapeError

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Activation:
    """Elementwise nonlinearity with derivatives through order 3."""

    name: str = ""

    def deriv(self, z: np.ndarray, order: int) -> np.ndarray:
        if order == 0:
            return self.value(z)
        if order == 1:
            return self.d1(z)
        if order == 2:
            return self.d2(z)
        if order == 3:
            return self.d3(z)
        raise ConfigError(f"activation derivative order {order} not supported")

    def value(self, z):
        raise NotImplementedError

    def d1(self, z):
        raise NotImplementedError

    def d2(self, z):
        raise NotImplementedError

    def d3(self, z):
        raise NotImplementedError


class Gelu(Activation):
    # exact form z * Phi(z), not the tanh approximation
    name = "gelu"

    @staticmethod
    def _phi(z):
        return _INV_SQRT_2PI * np.exp(-0.5 * z * z)

    @staticmethod
    def _Phi(z):
        return 0.5 * (1.0 + erf(z * _INV_SQRT2))

    def value(self, z):
        return z * self._Phi(z)

    def d1(self, z):
        return self._Phi(z) + z * self._phi(z)

    def d2(self, z):
        return (2.0 - z * z) * self._phi(z)

    def d3(self, z):
        return -z * (4.0 - z * z) * self._phi(z)


class Tanh(Activation):
    name = "tanh"

    def value(self, z):
        return np.tanh(z)

    def d1(self, z):
        t = np.tanh(z)
        return 1.0 - t * t

    def d2(self, z):
        t = np.tanh(z)
        return -2.0 * t * (1.0 - t * t)

    def d3(self, z):
        t = np.tanh(z)
        s = 1.0 - t * t
        return s * (6.0 * t * t - 2.0)


class Sine(Activation):
    name = "sine"

    def value(self, z):
        return np.sin(z)

    def d1(self, z):
        return np.cos(z)

    def d2(self, z):
        return -np.sin(z)

    def d3(self, z):
        return -np.cos(z)


class Sigmoid(Activation):
    name = "sigmoid"

    def value(self, z):
        return expit(z)

    def d1(self, z):
        s = expit(z)
        return s * (1.0 - s)

    def d2(self, z):
        s = expit(z)
        return s * (1.0 - s) * (1.0 - 2.0 * s)

    def d3(self, z):
        s = expit(z)
        return s * (1.0 - s) * (1.0 - 6.0 * s + 6.0 * s * s)


ACTIVATIONS = {a.name: a for a in (Gelu(), Tanh(), Sine(), Sigmoid())}


def get_activation(name: str) -> Activation:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ConfigError(
            f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}"
        ) from None


@dataclass(frozen=True)
class Architecture:
    """Shape of the main network: n_hidden layers of `width`, linear head."""

    in_dim: int
    width: int
    n_hidden: int
    out_dim: int = 1

    def __post_init__(self):
        if self.in_dim < 1 or self.width < 1 or self.out_dim < 1:
            raise ConfigError("architecture dimensions must be positive")
        if self.n_hidden < 1:
            raise ConfigError("need at least one hidden layer")

    @property
    def n_layers(self) -> int:
        return self.n_hidden + 1

    def layer_shapes(self) -> list[tuple[int, int, bool]]:
        """Per layer (fan_out, fan_in, has_bias); final layer is bias-free."""
        shapes = [(self.width, self.in_dim, True)]
        shapes += [(self.width, self.width, True)] * (self.n_hidden - 1)
        shapes.append((self.out_dim, self.width, False))
        return shapes

    def layer_sizes(self) -> list[int]:
        """Flattened parameter count N_i of each layer (weights + bias)."""
        return [
            out * fin + (out if bias else 0)
            for out, fin, bias in self.layer_shapes()
        ]

    def n_params(self) -> int:
        return sum(self.layer_sizes())


def split_layer_flat(flat: np.ndarray, shape: tuple[int, int, bool]):
    """Unpack one layer's flat vector into (W, b_or_None). Row-major W first."""
    out, fin, bias = shape
    need = out * fin + (out if bias else 0)
    if flat.shape != (need,):
        raise ShapeError(f"layer vector has shape {flat.shape}, expected ({need},)")
    w = flat[: out * fin].reshape(out, fin)
    b = flat[out * fin :] if bias else None
    return w, b


class MainNetWeights:
    """Concrete weights for one Architecture; a list of (W, b) arrays."""

    def __init__(self, arch: Architecture, layers):
        if len(layers) != arch.n_layers:
            raise ShapeError(
                f"got {len(layers)} layers, architecture has {arch.n_layers}"
            )
        for (w, b), (out, fin, bias) in zip(layers, arch.layer_shapes()):
            if w.shape != (out, fin):
                raise ShapeError(f"weight shape {w.shape} != ({out}, {fin})")
            if bias and (b is None or b.shape != (out,)):
                raise ShapeError(f"bias shape mismatch for fan_out {out}")
            if not bias and b is not None:
                raise ShapeError("final layer carries no bias")
        self.arch = arch
        self.layers = [(np.asarray(w, float), None if b is None else np.asarray(b, float))
                       for w, b in layers]

    @classmethod
    def from_flat(cls, arch: Architecture, flat: np.ndarray) -> "MainNetWeights":
        flat = np.asarray(flat, float)
        if flat.shape != (arch.n_params(),):
            raise ShapeError(
                f"flat vector has {flat.shape}, expected ({arch.n_params()},)"
            )
        layers, k = [], 0
        for shape, n in zip(arch.layer_shapes(), arch.layer_sizes()):
            layers.append(split_layer_flat(flat[k : k + n], shape))
            k += n
        return cls(arch, layers)

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in self.layers:
            parts.append(w.ravel())
            if b is not None:
                parts.append(b)
        return np.concatenate(parts)


def forward(weights: MainNetWeights, act: Activation, x: np.ndarray) -> np.ndarray:
    """Evaluate the network at a batch of points x of shape (B, in_dim)."""
    x = np.asarray(x, float)
    if x.ndim != 2 or x.shape[1] != weights.arch.in_dim:
        raise ShapeError(
            f"input shape {x.shape} incompatible with in_dim {weights.arch.in_dim}"
        )
    g = x
    for w, b in weights.layers[:-1]:
        g = act.value(g @ w.T + b)
    w_last, _ = weights.layers[-1]
    return g @ w_last.T
