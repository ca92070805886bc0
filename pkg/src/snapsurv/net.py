"""Small feed-forward network with hand-written reverse mode and Adam.

The network maps an input row to one scalar (the energy).  Parameters live
in a single flat vector; per-layer weights and biases are views into it, so
flattening is free and optimizers work on one array.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NonFiniteError",
    "MlpConfig",
    "MlpParams",
    "init_params",
    "forward",
    "backward",
    "dropout_masks",
    "AdamState",
    "adam_step",
]


class NonFiniteError(FloatingPointError):
    """A NaN or infinity showed up where finite numbers are required."""


# Activations work in place on the pre-activation buffer; derivatives are
# expressed through the activation output so the pre-activation need not be kept.
def _relu(a):
    return np.maximum(a, 0.0, out=a)


def _relu_backward(g, z):
    g *= z > 0
    return g


def _tanh(a):
    return np.tanh(a, out=a)


def _tanh_backward(g, z):
    g *= 1.0 - z * z
    return g


ACTIVATIONS = {
    "relu": (_relu, _relu_backward),
    "tanh": (_tanh, _tanh_backward),
}


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden_layers: tuple[int, ...] = (32, 32)
    activation: str = "relu"
    dropout_rate: float = 0.0
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if int(self.input_dim) < 1:
            raise ValueError("input_dim must be positive")
        if any(h < 1 for h in self.hidden_layers):
            raise ValueError("hidden layer widths must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(ACTIVATIONS)}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (int(self.input_dim), *self.hidden_layers, 1)

    @property
    def num_params(self) -> int:
        sizes = self.layer_sizes
        return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


@dataclass(eq=False)
class MlpParams:
    """Network parameters backed by one flat vector ``theta``."""

    config: MlpConfig
    theta: np.ndarray
    weights: list[np.ndarray] = field(init=False, repr=False)
    biases: list[np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        theta = np.ascontiguousarray(self.theta, dtype=np.float64).reshape(-1)
        if theta.shape[0] != self.config.num_params:
            raise ValueError(
                f"expected {self.config.num_params} parameters, got {theta.shape[0]}"
            )
        self.theta = theta
        self.weights, self.biases = [], []
        pos = 0
        sizes = self.config.layer_sizes
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            self.weights.append(theta[pos:pos + n_in * n_out].reshape(n_in, n_out))
            pos += n_in * n_out
            self.biases.append(theta[pos:pos + n_out])
            pos += n_out

    def flatten(self) -> np.ndarray:
        return self.theta.copy()

    @classmethod
    def unflatten(cls, config: MlpConfig, theta) -> "MlpParams":
        return cls(config, np.array(theta, dtype=np.float64))

    @classmethod
    def from_layers(cls, config: MlpConfig, weights, biases) -> "MlpParams":
        parts = []
        for w, b in zip(weights, biases):
            parts.append(np.asarray(w, dtype=np.float64).reshape(-1))
            parts.append(np.asarray(b, dtype=np.float64).reshape(-1))
        return cls(config, np.concatenate(parts))


def init_params(config: MlpConfig) -> MlpParams:
    """Kaiming-uniform weights (bound ``sqrt(6 / fan_in)``), zero biases."""
    rng = np.random.default_rng(config.init_seed)
    weights, biases = [], []
    sizes = config.layer_sizes
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / n_in)
        weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return MlpParams.from_layers(config, weights, biases)


def dropout_masks(config: MlpConfig, n_rows: int, rng: np.random.Generator):
    """Inverted-dropout masks for the hidden layers, or ``None`` when the
    rate is zero."""
    p = config.dropout_rate
    if p == 0.0:
        return None
    return [(rng.random((n_rows, h)) >= p) / (1.0 - p) for h in config.hidden_layers]


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]
    post: list[np.ndarray]
    masks: list[np.ndarray] | None
    n_rows: int


def forward(params: MlpParams, inputs, dropout_mask=None):
    """Energies for a batch of input rows.

    Returns ``(energies, cache)`` where ``energies`` has shape ``(B,)``.
    ``dropout_mask`` is a list with one ``(B, width)`` array per hidden
    layer, multiplied into the activations.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.shape[1] != params.config.input_dim:
        raise ValueError(f"inputs have {x.shape[1]} columns, expected {params.config.input_dim}")
    finite = np.isfinite(x).all(axis=1)
    if not finite.all():
        row = int(np.flatnonzero(~finite)[0])
        raise NonFiniteError(f"non-finite network input in row {row}")
    act, _ = ACTIVATIONS[params.config.activation]
    n_hidden = len(params.config.hidden_layers)
    if dropout_mask is not None and len(dropout_mask) != n_hidden:
        raise ValueError("need one dropout mask per hidden layer")

    h = x
    cache = ForwardCache([], [], dropout_mask, x.shape[0])
    for layer in range(n_hidden):
        a = h @ params.weights[layer]
        a += params.biases[layer]
        z = act(a)
        cache.inputs.append(h)
        cache.post.append(z)
        h = z * dropout_mask[layer] if dropout_mask is not None else z
    cache.inputs.append(h)
    out = h @ params.weights[-1][:, 0] + params.biases[-1][0]
    return out, cache


def backward(params: MlpParams, cache: ForwardCache, output_cotangents) -> np.ndarray:
    """Flat gradient of ``sum_b cotangent_b * E(input_b)`` with respect to
    ``params.theta``."""
    g = np.asarray(output_cotangents, dtype=np.float64).reshape(-1)
    if g.shape[0] != cache.n_rows:
        raise ValueError(f"got {g.shape[0]} cotangents for a batch of {cache.n_rows}")
    _, act_backward = ACTIVATIONS[params.config.activation]
    n_hidden = len(params.config.hidden_layers)
    grads_w = [None] * (n_hidden + 1)
    grads_b = [None] * (n_hidden + 1)

    h = cache.inputs[-1]
    grads_w[-1] = (h.T @ g).reshape(-1, 1)
    grads_b[-1] = np.array([g.sum()])
    gh = np.outer(g, params.weights[-1][:, 0])
    for layer in range(n_hidden - 1, -1, -1):
        if cache.masks is not None:
            gh *= cache.masks[layer]
        ga = act_backward(gh, cache.post[layer])
        grads_w[layer] = cache.inputs[layer].T @ ga
        grads_b[layer] = ga.sum(axis=0)
        if layer > 0:
            gh = ga @ params.weights[layer].T

    parts = []
    for gw, gb in zip(grads_w, grads_b):
        parts.append(gw.reshape(-1))
        parts.append(gb.reshape(-1))
    return np.concatenate(parts)


@dataclass
class AdamState:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


def adam_step(state: AdamState, params: MlpParams, gradient) -> tuple[MlpParams, AdamState]:
    """One bias-corrected Adam update; ``state`` is updated in place."""
    grad = np.asarray(gradient, dtype=np.float64).reshape(-1)
    if grad.shape != params.theta.shape:
        raise ValueError("gradient shape does not match parameters")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("non-finite gradient")
    if state.m is None:
        state.m = np.zeros_like(grad)
        state.v = np.zeros_like(grad)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m = b1 * state.m + (1.0 - b1) * grad
    state.v = b2 * state.v + (1.0 - b2) * grad * grad
    m_hat = state.m / (1.0 - b1 ** state.step)
    v_hat = state.v / (1.0 - b2 ** state.step)
    theta = params.theta - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return MlpParams(params.config, theta), state
