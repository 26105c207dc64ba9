"""
Multilayer perceptrons with explicit forward/backward passes.

This module provides the differentiable substrate for encoders, decoders
and latent discriminators:
- LayerSpec / Mlp: affine layers with identity, leaky_relu or tanh
- Mlp.forward caches pre-activations, Mlp.backward accumulates gradients
- Optimizer: plain SGD and Adam, one moment buffer per parameter
- lipschitz_upper_bound: product of per-layer spectral norms

Weights are stored (out_dim x in_dim) and applied to row-major batches as
x @ W.T + b.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from ucae.errors import DimensionError, NumericError, PreconditionError
from ucae.linalg import Matrix, Rng, check_finite, spectral_norm

logger = logging.getLogger(__name__)

ACTIVATIONS = ("identity", "leaky_relu", "tanh")


@dataclass(frozen=True)
class LayerSpec:
    """One affine layer followed by an elementwise activation."""
    in_dim: int
    out_dim: int
    activation: str = "identity"
    slope: float = 0.2

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise DimensionError(f"LayerSpec: dims must be positive, got {self.in_dim}->{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"LayerSpec: unknown activation '{self.activation}'")
        if self.activation == "leaky_relu" and not 0.0 < self.slope <= 1.0:
            raise ValueError(f"LayerSpec: leaky_relu slope must lie in (0, 1], got {self.slope}")

    def activate(self, pre: Matrix) -> Matrix:
        if self.activation == "identity":
            return pre
        if self.activation == "tanh":
            return np.tanh(pre)
        return np.where(pre > 0.0, pre, self.slope * pre)

    def activation_grad(self, pre: Matrix) -> Matrix:
        if self.activation == "identity":
            return np.ones_like(pre)
        if self.activation == "tanh":
            t = np.tanh(pre)
            return 1.0 - t * t
        return np.where(pre > 0.0, 1.0, self.slope)

    @property
    def activation_lipschitz(self) -> float:
        if self.activation == "leaky_relu":
            return max(1.0, self.slope)
        return 1.0

    def describe(self) -> str:
        """Compact text form used in checkpoint metadata."""
        return f"{self.in_dim}:{self.out_dim}:{self.activation}:{self.slope!r}"

    @classmethod
    def parse(cls, text: str) -> "LayerSpec":
        in_dim, out_dim, activation, slope = text.split(":")
        return cls(int(in_dim), int(out_dim), activation, float(slope))


def build_layers(in_dim: int, hidden: Sequence[int], out_dim: int,
                 activation: str = "leaky_relu", slope: float = 0.2) -> List[LayerSpec]:
    """Hidden layers use `activation`; the output layer is identity."""
    dims = [in_dim, *hidden, out_dim]
    layers = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        last = i == len(dims) - 2
        layers.append(LayerSpec(a, b, "identity" if last else activation, slope))
    return layers


class Mlp:
    """
    Layered affine+activation network with parameter and gradient storage.

    An Mlp is single-owner while training. Distinct Mlps share nothing and
    can be trained concurrently.
    """

    def __init__(self, layers: Sequence[LayerSpec], rng: Optional[Rng] = None):
        """
        Args:
            layers: Layer specs; consecutive dims must chain.
            rng: Initializes weights uniform(-s, s), s = sqrt(6/(in+out)).
                 Without one, weights start at zero (loaded checkpoints
                 overwrite them anyway).
        """
        if not layers:
            raise DimensionError("Mlp: at least one layer is required")
        for prev, nxt in zip(layers[:-1], layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise DimensionError(f"Mlp: layer dims do not chain ({prev.out_dim} != {nxt.in_dim})")
        self.layers: List[LayerSpec] = list(layers)
        self.weights: List[Matrix] = []
        self.biases: List[np.ndarray] = []
        for spec in self.layers:
            if rng is None:
                w = np.zeros((spec.out_dim, spec.in_dim))
            else:
                s = np.sqrt(6.0 / (spec.in_dim + spec.out_dim))
                w = rng.uniform(-s, s, (spec.out_dim, spec.in_dim))
            self.weights.append(w)
            self.biases.append(np.zeros(spec.out_dim))
        self.grad_weights: List[Matrix] = [np.zeros_like(w) for w in self.weights]
        self.grad_biases: List[np.ndarray] = [np.zeros_like(b) for b in self.biases]
        self._cache: Optional[List[Matrix]] = None
        self._pre: Optional[List[Matrix]] = None

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> List[np.ndarray]:
        """Weights and biases interleaved per layer; order is stable."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    def gradients(self) -> List[np.ndarray]:
        grads = []
        for gw, gb in zip(self.grad_weights, self.grad_biases):
            grads.extend([gw, gb])
        return grads

    def forward(self, x: Matrix, cache: bool = True) -> Matrix:
        """
        Evaluate the network on a batch and cache what backward needs.

        Args:
            x: Matrix (batch x in_dim)
            cache: Keep layer inputs for backward. Inference passes False
                   so it never overwrites a training batch.

        Returns:
            Matrix (batch x out_dim)
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionError(f"Mlp.forward: expected (batch, {self.in_dim}) input, got {x.shape}")
        inputs, pres = [], []
        h = x
        for spec, w, b in zip(self.layers, self.weights, self.biases):
            inputs.append(h)
            pre = h @ w.T + b
            pres.append(pre)
            h = spec.activate(pre)
        check_finite(h, "Mlp.forward")
        if cache:
            self._cache, self._pre = inputs, pres
        return h

    def predict(self, x: Matrix) -> Matrix:
        return self.forward(x, cache=False)

    def backward(self, upstream: Matrix) -> Matrix:
        """
        Accumulate parameter gradients of <upstream, output> for the cached batch.

        Returns:
            Gradient with respect to the input batch.
        """
        if self._cache is None:
            raise PreconditionError("Mlp.backward: no cached forward pass")
        g = np.asarray(upstream, dtype=np.float64)
        batch = self._cache[0].shape[0]
        if g.shape != (batch, self.out_dim):
            raise DimensionError(f"Mlp.backward: expected upstream {(batch, self.out_dim)}, got {g.shape}")
        for idx in reversed(range(len(self.layers))):
            g = g * self.layers[idx].activation_grad(self._pre[idx])
            self.grad_weights[idx] += g.T @ self._cache[idx]
            self.grad_biases[idx] += g.sum(axis=0)
            g = g @ self.weights[idx]
        return check_finite(g, "Mlp.backward")

    def zero_grad(self):
        for gw, gb in zip(self.grad_weights, self.grad_biases):
            gw.fill(0.0)
            gb.fill(0.0)

    def copy(self) -> "Mlp":
        clone = Mlp(self.layers)
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone

    def lipschitz_upper_bound(self) -> float:
        return lipschitz_upper_bound(self)

    def __repr__(self):
        dims = [self.layers[0].in_dim] + [spec.out_dim for spec in self.layers]
        return f"Mlp({'->'.join(str(d) for d in dims)})"


def forward(net: Mlp, x: Matrix) -> Matrix:
    return net.forward(x)


def backward(net: Mlp, upstream: Matrix) -> Matrix:
    return net.backward(upstream)


class Optimizer:
    """
    First-order optimizer over one or more Mlps.

    Moment buffers are created lazily per network, zero-initialized and
    shaped like the parameters they track.
    """

    def __init__(self, kind: str = "adam", learning_rate: float = 1e-3,
                 adam_beta1: float = 0.9, adam_beta2: float = 0.999, adam_eps: float = 1e-8):
        if kind not in ("sgd", "adam"):
            raise ValueError(f"Optimizer: unknown kind '{kind}'")
        self.kind = kind
        self.learning_rate = learning_rate
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.adam_eps = adam_eps
        self._state: Dict[int, dict] = {}

    def _state_for(self, net: Mlp) -> dict:
        key = id(net)
        if key not in self._state:
            params = net.parameters()
            self._state[key] = {
                "net": net,
                "t": 0,
                "m": [np.zeros_like(p) for p in params],
                "v": [np.zeros_like(p) for p in params],
            }
        return self._state[key]

    def step(self, net: Mlp):
        """Update `net` in place from its gradients, then zero them."""
        params, grads = net.parameters(), net.gradients()
        if self.kind == "sgd":
            for p, g in zip(params, grads):
                p -= self.learning_rate * g
        else:
            state = self._state_for(net)
            state["t"] += 1
            t = state["t"]
            b1, b2 = self.adam_beta1, self.adam_beta2
            for p, g, m, v in zip(params, grads, state["m"], state["v"]):
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * g * g
                m_hat = m / (1.0 - b1 ** t)
                v_hat = v / (1.0 - b2 ** t)
                p -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.adam_eps)
        for p in params:
            if not np.all(np.isfinite(p)):
                raise NumericError("Optimizer.step", "parameter became non-finite")
        net.zero_grad()


def step(opt: Optimizer, net: Mlp):
    opt.step(net)


def lipschitz_upper_bound(net: Mlp) -> float:
    """
    Global Lipschitz bound: product of per-layer spectral norms.

    Only valid when every activation is 1-Lipschitz.
    """
    bound = 1.0
    for spec, w in zip(net.layers, net.weights):
        if spec.activation_lipschitz > 1.0:
            raise PreconditionError(
                f"lipschitz_upper_bound: activation {spec.activation} has Lipschitz constant > 1"
            )
        bound *= spectral_norm(w)
    return bound
