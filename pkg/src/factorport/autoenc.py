"""Symmetric tanh autoencoders trained from scratch with Adam.

Depth d in 1..4 selects the architecture family: the code is always the
middle hidden layer and the encoder carries d - 1 intermediate layers whose
sizes follow the geometric pyramid between the input width and the code
width. Training minimizes squared reconstruction error plus an elastic-net
activity penalty on the code and a soft l2 penalty on the weights, with
early stopping on validation reconstruction error.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, ShapeError

ACTIVATIONS = ("tanh", "identity")


def pyramid_sizes(p: int, k: int, m: int) -> list[int]:
    """Encoder sizes by the geometric pyramid rule, ending at the code.

    Returns [s_1, ..., s_m, k] with s_j = round(p * (k/p)^(j/(m+1))),
    clamped at k; the decoder mirrors the intermediates. m = 0 means the
    code is the only hidden layer.
    """
    if k > p:
        raise ValueError("code width must not exceed input width")
    if m < 0:
        raise ValueError("m must be nonnegative")
    if p == k:
        return [k] * (m + 1)
    ratio = k / p
    inner = [max(k, round(p * ratio ** (j / (m + 1)))) for j in range(1, m + 1)]
    return inner + [k]


@dataclass
class AutoencoderSpec:
    """Architecture and training configuration for one autoencoder."""

    input_dim: int
    code_dim: int
    depth: int = 1
    activation: str = "tanh"
    output_activation: str | None = None
    activity_l1: float = 0.0
    activity_l2: float = 0.0
    weight_decay: float = 1e-5
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 500
    patience: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.depth not in (1, 2, 3, 4):
            raise ValueError("depth must be in 1..4")
        if self.code_dim < 1 or self.input_dim < 1:
            raise ValueError("dimensions must be positive")
        if self.code_dim > self.input_dim:
            raise ValueError("code_dim must not exceed input_dim")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.output_activation is None:
            self.output_activation = self.activation
        if self.output_activation not in ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {ACTIVATIONS}")
        for name in ("batch_size", "max_epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.patience < 0:
            raise ValueError("patience must be nonnegative")

    def layer_sizes(self) -> list[int]:
        """Full size chain input -> hidden stack -> output."""
        encoder = pyramid_sizes(self.input_dim, self.code_dim, self.depth - 1)
        hidden = encoder + encoder[:-1][::-1]
        return [self.input_dim] + hidden + [self.input_dim]

    @property
    def code_layer(self) -> int:
        """Index of the bottleneck within the hidden stack (0-based)."""
        return self.depth - 1


@dataclass
class AutoencoderParams:
    """Per-layer weights and biases plus enough metadata to run forward."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    code_layer: int
    activation: str = "tanh"
    output_activation: str = "tanh"
    format_version: int = 1

    def __post_init__(self):
        for i in range(len(self.weights) - 1):
            if self.weights[i].shape[1] != self.weights[i + 1].shape[0]:
                raise ShapeError(f"layer {i} output width does not feed layer {i + 1}")
        for w, b in zip(self.weights, self.biases):
            if b.shape != (w.shape[1],):
                raise ShapeError("bias shape does not match its layer width")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def code_dim(self) -> int:
        return self.weights[self.code_layer].shape[1]


def _act(name: str, z: np.ndarray) -> np.ndarray:
    return np.tanh(z) if name == "tanh" else z


def _act_grad(name: str, out: np.ndarray) -> np.ndarray:
    return 1.0 - out**2 if name == "tanh" else np.ones_like(out)


def init_params(spec: AutoencoderSpec, rng: np.random.Generator | None = None) -> AutoencoderParams:
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases."""
    rng = rng or np.random.default_rng(spec.seed)
    sizes = spec.layer_sizes()
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return AutoencoderParams(
        weights=weights,
        biases=biases,
        code_layer=spec.code_layer,
        activation=spec.activation,
        output_activation=spec.output_activation,
    )


def forward(params: AutoencoderParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Run the network; returns (code, reconstruction)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ShapeError(f"expected T x {params.input_dim} input")
    z = x
    code = None
    last = len(params.weights) - 1
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        name = params.output_activation if layer == last else params.activation
        z = _act(name, z @ w + b)
        if layer == params.code_layer:
            code = z
    return code, z


def encode(params: AutoencoderParams, x: np.ndarray) -> np.ndarray:
    """Bottleneck activations for x."""
    code, _ = forward(params, x)
    return code


def reconstruction_loss(params: AutoencoderParams, x: np.ndarray) -> float:
    """Mean per-row squared reconstruction error."""
    _, recon = forward(params, x)
    return float(np.sum((x - recon) ** 2) / x.shape[0])


def loss_and_gradients(
    params: AutoencoderParams,
    x: np.ndarray,
    activity_l1: float = 0.0,
    activity_l2: float = 0.0,
    weight_decay: float = 0.0,
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Training loss on a batch and its analytic gradients.

    Loss = mean ||x - recon||^2 + (l1 |code| + l2 code^2 terms, batch-mean)
    + weight_decay * sum ||W||^2. Returns (loss, dW list, db list).
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    last = len(params.weights) - 1

    outs = []
    z = x
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        name = params.output_activation if layer == last else params.activation
        z = _act(name, z @ w + b)
        outs.append(z)
    recon = outs[-1]
    code = outs[params.code_layer]

    loss = float(np.sum((x - recon) ** 2) / n)
    loss += activity_l1 * float(np.abs(code).sum() / n)
    loss += activity_l2 * float(np.sum(code**2) / n)
    loss += weight_decay * sum(float(np.sum(w**2)) for w in params.weights)

    grad_w = [np.zeros_like(w) for w in params.weights]
    grad_b = [np.zeros_like(b) for b in params.biases]

    delta = 2.0 * (recon - x) / n
    for layer in range(last, -1, -1):
        name = params.output_activation if layer == last else params.activation
        out = outs[layer]
        if layer == params.code_layer:
            delta = delta + (activity_l1 * np.sign(out) + 2.0 * activity_l2 * out) / n
        dpre = delta * _act_grad(name, out)
        below = x if layer == 0 else outs[layer - 1]
        grad_w[layer] = below.T @ dpre + 2.0 * weight_decay * params.weights[layer]
        grad_b[layer] = dpre.sum(axis=0)
        if layer > 0:
            delta = dpre @ params.weights[layer].T
    return loss, grad_w, grad_b


def train(
    spec: AutoencoderSpec,
    x_train: np.ndarray,
    x_val: np.ndarray,
    on_epoch=None,
) -> AutoencoderParams:
    """Adam training with early stopping on validation reconstruction error.

    Halts at max_epochs or once the validation loss has failed to improve
    for more than `patience` consecutive epochs, and returns the parameters
    of the best validation epoch (the initialization counts as epoch zero).
    Deterministic for a fixed seed: shuffling and accumulation order depend
    only on the generator state. `on_epoch(epoch, val_loss)` is invoked
    after each epoch's validation pass.
    """
    x_train = np.asarray(x_train, dtype=float)
    x_val = np.asarray(x_val, dtype=float)
    for name, mat in (("x_train", x_train), ("x_val", x_val)):
        if mat.ndim != 2 or mat.shape[1] != spec.input_dim:
            raise ShapeError(f"{name} must be T x {spec.input_dim}")

    rng = np.random.default_rng(spec.seed)
    params = init_params(spec, rng)

    m_w = [np.zeros_like(w) for w in params.weights]
    v_w = [np.zeros_like(w) for w in params.weights]
    m_b = [np.zeros_like(b) for b in params.biases]
    v_b = [np.zeros_like(b) for b in params.biases]

    best_val = reconstruction_loss(params, x_val)
    best_params = copy.deepcopy(params)
    stale = 0
    step = 0
    n = x_train.shape[0]
    batch = min(spec.batch_size, n)

    for epoch in range(1, spec.max_epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            rows = order[start : start + batch]
            loss, grad_w, grad_b = loss_and_gradients(
                params,
                x_train[rows],
                activity_l1=spec.activity_l1,
                activity_l2=spec.activity_l2,
                weight_decay=spec.weight_decay,
            )
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite training loss at epoch {epoch} (step size {spec.learning_rate})"
                )
            step += 1
            c1 = 1.0 - spec.beta1**step
            c2 = 1.0 - spec.beta2**step
            for i in range(len(params.weights)):
                m_w[i] = spec.beta1 * m_w[i] + (1 - spec.beta1) * grad_w[i]
                v_w[i] = spec.beta2 * v_w[i] + (1 - spec.beta2) * grad_w[i] ** 2
                params.weights[i] -= spec.learning_rate * (m_w[i] / c1) / (np.sqrt(v_w[i] / c2) + spec.adam_eps)
                m_b[i] = spec.beta1 * m_b[i] + (1 - spec.beta1) * grad_b[i]
                v_b[i] = spec.beta2 * v_b[i] + (1 - spec.beta2) * grad_b[i] ** 2
                params.biases[i] -= spec.learning_rate * (m_b[i] / c1) / (np.sqrt(v_b[i] / c2) + spec.adam_eps)

        val = reconstruction_loss(params, x_val)
        if not np.isfinite(val):
            raise DivergenceError(
                f"non-finite validation loss at epoch {epoch} (step size {spec.learning_rate})"
            )
        if on_epoch is not None:
            on_epoch(epoch, val)
        if val < best_val:
            best_val = val
            best_params = copy.deepcopy(params)
            stale = 0
        else:
            stale += 1
            if stale > spec.patience:
                break
    return best_params


def save_params(params: AutoencoderParams, path) -> None:
    """Versioned flat checkpoint (numpy archive)."""
    payload = {
        "format_version": np.array([params.format_version]),
        "code_layer": np.array([params.code_layer]),
        "activation": np.array([params.activation]),
        "output_activation": np.array([params.output_activation]),
        "n_layers": np.array([len(params.weights)]),
    }
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        payload[f"w{i}"] = w
        payload[f"b{i}"] = b
    np.savez(path, **payload)


def load_params(path) -> AutoencoderParams:
    data = np.load(path, allow_pickle=False)
    n = int(data["n_layers"][0])
    return AutoencoderParams(
        weights=[data[f"w{i}"] for i in range(n)],
        biases=[data[f"b{i}"] for i in range(n)],
        code_layer=int(data["code_layer"][0]),
        activation=str(data["activation"][0]),
        output_activation=str(data["output_activation"][0]),
        format_version=int(data["format_version"][0]),
    )
