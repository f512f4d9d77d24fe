"""Dense MLP numerics on flat parameter vectors.

Everything here is pure and 64-bit: forward passes, softmax cross-entropy,
analytic backpropagation, per-sample squared-score accumulation, and the two
optimizers (plain SGD and bias-corrected Adam). Model parameters live in a
single flat vector with a layout map so penalty and optimizer code can treat
them uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

ACTIVATIONS = ("relu", "identity")
OPTIMIZER_KINDS = ("sgd", "adam")


class NumericsError(ValueError):
    """Shape mismatch or a non-finite value where a finite one is required."""


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a small multilayer perceptron classifier.

    ``hidden_layers`` is a sequence of ``(width, activation)`` pairs; the
    output layer is always linear, with softmax applied inside the loss.
    The default mirrors the tabular configuration used throughout the
    benchmarks: one hidden layer of 4 relu units.
    """

    input_dim: int
    hidden_layers: tuple[tuple[int, str], ...] = ((4, "relu"),)
    output_classes: int = 2
    bias: bool = True

    def __post_init__(self):
        if self.input_dim < 1:
            raise NumericsError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.output_classes < 2:
            raise NumericsError(
                f"output_classes must be >= 2, got {self.output_classes}"
            )
        hidden = tuple((int(w), str(a)) for w, a in self.hidden_layers)
        for width, activation in hidden:
            if width < 1:
                raise NumericsError(f"hidden width must be >= 1, got {width}")
            if activation not in ACTIVATIONS:
                raise NumericsError(f"unknown activation {activation!r}")
        object.__setattr__(self, "hidden_layers", hidden)

    @property
    def layer_dims(self) -> tuple[int, ...]:
        """Unit counts from input to logits, e.g. (2, 4, 2)."""
        return (self.input_dim, *(w for w, _ in self.hidden_layers), self.output_classes)


@dataclass(frozen=True)
class LayerSlice:
    """One named block of the flat parameter vector."""

    name: str
    shape: tuple[int, ...]
    start: int
    stop: int


def parameter_layout(spec: MlpSpec) -> tuple[LayerSlice, ...]:
    """Ordered (weight, bias) slices for every layer of ``spec``."""
    dims = spec.layer_dims
    slices = []
    offset = 0
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        size = fan_in * fan_out
        slices.append(LayerSlice(f"layer{i}.weight", (fan_in, fan_out), offset, offset + size))
        offset += size
        if spec.bias:
            slices.append(LayerSlice(f"layer{i}.bias", (fan_out,), offset, offset + fan_out))
            offset += fan_out
    return tuple(slices)


@dataclass(frozen=True)
class ParameterVector:
    """Flat float64 parameter vector plus the layout that interprets it.

    Treated as immutable: operations return fresh vectors and never write
    through ``values``.
    """

    values: np.ndarray
    layout: tuple[LayerSlice, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise NumericsError("parameter values must be a flat 1-D vector")
        expected = self.layout[-1].stop if self.layout else 0
        if values.size != expected:
            raise NumericsError(
                f"parameter vector has {values.size} entries, layout expects {expected}"
            )
        object.__setattr__(self, "values", values)

    @property
    def size(self) -> int:
        return self.values.size

    def view(self, name: str) -> np.ndarray:
        """Reshaped view of one named block."""
        for s in self.layout:
            if s.name == name:
                return self.values[s.start:s.stop].reshape(s.shape)
        raise KeyError(name)

    def with_values(self, values: np.ndarray) -> "ParameterVector":
        return ParameterVector(values, self.layout)

    def same_layout(self, other: "ParameterVector") -> bool:
        return self.layout == other.layout


def zero_params(spec: MlpSpec) -> ParameterVector:
    layout = parameter_layout(spec)
    n = layout[-1].stop if layout else 0
    return ParameterVector(np.zeros(n), layout)


def init_params(spec: MlpSpec, seed: int) -> ParameterVector:
    """Seeded Glorot-uniform weights (bounds sqrt(6/(fan_in+fan_out))), zero biases."""
    rng = np.random.default_rng(seed)
    layout = parameter_layout(spec)
    values = np.zeros(layout[-1].stop if layout else 0)
    for s in layout:
        if s.name.endswith(".weight"):
            fan_in, fan_out = s.shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            values[s.start:s.stop] = rng.uniform(-bound, bound, size=s.stop - s.start)
    return ParameterVector(values, layout)


def _check_input(spec: MlpSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise NumericsError(f"input must be 2-D (rows, features), got ndim={x.ndim}")
    if x.shape[1] != spec.input_dim:
        raise NumericsError(
            f"input has {x.shape[1]} features, spec expects {spec.input_dim}"
        )
    return x


def _affine_blocks(spec: MlpSpec, params: ParameterVector):
    dims = spec.layer_dims
    blocks = []
    for i in range(len(dims) - 1):
        w = params.view(f"layer{i}.weight")
        b = params.view(f"layer{i}.bias") if spec.bias else None
        blocks.append((w, b))
    return blocks


def _forward_trace(spec: MlpSpec, params: ParameterVector, x: np.ndarray):
    """All layer inputs and pre-activations, needed by backprop."""
    activations = [x]  # input to each affine layer
    pre_acts = []
    h = x
    n_layers = len(spec.layer_dims) - 1
    for i, (w, b) in enumerate(_affine_blocks(spec, params)):
        z = h @ w
        if b is not None:
            z = z + b
        pre_acts.append(z)
        if i < n_layers - 1:
            act = spec.hidden_layers[i][1]
            h = np.maximum(z, 0.0) if act == "relu" else z
            activations.append(h)
    return activations, pre_acts


def forward(spec: MlpSpec, params: ParameterVector, x) -> np.ndarray:
    """Logits of shape (rows, output_classes)."""
    x = _check_input(spec, x)
    _, pre_acts = _forward_trace(spec, params, x)
    logits = pre_acts[-1]
    if not np.all(np.isfinite(logits)):
        raise NumericsError("non-finite logits in forward pass")
    return logits


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy_loss(logits, labels) -> tuple[float, np.ndarray]:
    """Mean negative log softmax probability of the labels.

    Returns ``(loss, prob)`` where ``prob`` holds the softmax rows.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise NumericsError("logits must be 2-D")
    n, c = logits.shape
    if labels.shape != (n,):
        raise NumericsError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise NumericsError(f"label out of range [0, {c})")
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(n), labels].mean())
    if not np.isfinite(loss):
        raise NumericsError("non-finite cross-entropy loss")
    return loss, np.exp(logp)


def loss_and_gradient(spec: MlpSpec, params: ParameterVector, x, labels):
    """Mean cross-entropy loss and its analytic gradient in one pass."""
    x = _check_input(spec, x)
    labels = np.asarray(labels)
    activations, pre_acts = _forward_trace(spec, params, x)
    logits = pre_acts[-1]
    loss, prob = cross_entropy_loss(logits, labels)
    n = x.shape[0]

    # Output delta of the mean loss; propagate backwards through each affine.
    delta = prob.copy()
    delta[np.arange(n), labels] -= 1.0
    delta /= n

    grad = np.zeros_like(params.values)
    blocks = _affine_blocks(spec, params)
    for i in range(len(blocks) - 1, -1, -1):
        w, b = blocks[i]
        h = activations[i]
        gw = h.T @ delta
        for s in params.layout:
            if s.name == f"layer{i}.weight":
                grad[s.start:s.stop] = gw.ravel()
            elif b is not None and s.name == f"layer{i}.bias":
                grad[s.start:s.stop] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ w.T
            if spec.hidden_layers[i - 1][1] == "relu":
                delta = delta * (pre_acts[i - 1] > 0.0)
    if not np.all(np.isfinite(grad)):
        raise NumericsError("non-finite gradient")
    return loss, params.with_values(grad)


def backward(spec: MlpSpec, params: ParameterVector, x, labels) -> ParameterVector:
    """Analytic gradient of the mean cross-entropy loss."""
    return loss_and_gradient(spec, params, x, labels)[1]


def score_square_mean(spec: MlpSpec, params: ParameterVector, x, labels) -> np.ndarray:
    """Per-parameter mean of squared per-sample log-likelihood gradients.

    The per-sample gradient of a weight block is an outer product
    h_i * delta_j, so the sum of its squares over the batch contracts to
    (h**2).T @ (delta**2) without materialising per-sample gradients.
    """
    x = _check_input(spec, x)
    labels = np.asarray(labels)
    activations, pre_acts = _forward_trace(spec, params, x)
    logits = pre_acts[-1]
    _, prob = cross_entropy_loss(logits, labels)
    n = x.shape[0]

    # Per-sample score at the logits: one-hot minus softmax.
    delta = -prob
    delta[np.arange(n), labels] += 1.0

    acc = np.zeros_like(params.values)
    blocks = _affine_blocks(spec, params)
    for i in range(len(blocks) - 1, -1, -1):
        w, b = blocks[i]
        h = activations[i]
        d2 = delta**2
        for s in params.layout:
            if s.name == f"layer{i}.weight":
                acc[s.start:s.stop] = ((h**2).T @ d2).ravel()
            elif b is not None and s.name == f"layer{i}.bias":
                acc[s.start:s.stop] = d2.sum(axis=0)
        if i > 0:
            delta = delta @ w.T
            delta = delta * (pre_acts[i - 1] > 0.0) if spec.hidden_layers[i - 1][1] == "relu" else delta
    acc /= n
    if not np.all(np.isfinite(acc)):
        raise NumericsError("non-finite score accumulation")
    return acc


def mean_log_likelihood(spec: MlpSpec, params: ParameterVector, x, labels) -> float:
    """Mean log P(label | input); the negation of the cross-entropy loss."""
    logits = forward(spec, params, x)
    loss, _ = cross_entropy_loss(logits, labels)
    return -loss


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise NumericsError(f"unknown optimizer kind {self.kind!r}")
        if not self.learning_rate > 0:
            raise NumericsError("learning_rate must be > 0")


@dataclass(frozen=True)
class OptimizerState:
    """Optimizer hyperparameters plus Adam moment vectors sized to the model."""

    config: OptimizerConfig
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0

    def __post_init__(self):
        if self.m.shape != self.v.shape:
            raise NumericsError("moment vectors must have equal shapes")
        if np.any(self.v < 0):
            raise NumericsError("second-moment entries must be nonnegative")


def init_optimizer_state(config: OptimizerConfig, n_params: int) -> OptimizerState:
    return OptimizerState(config, np.zeros(n_params), np.zeros(n_params), 0)


def optimizer_step(
    state: OptimizerState, params: ParameterVector, grad: ParameterVector
) -> tuple[ParameterVector, OptimizerState]:
    """One SGD or bias-corrected Adam update; returns fresh values."""
    if not params.same_layout(grad):
        raise NumericsError("parameter and gradient layouts differ")
    g = grad.values
    if not np.all(np.isfinite(g)):
        raise NumericsError("non-finite gradient passed to optimizer")
    cfg = state.config
    if g.size != state.m.size:
        raise NumericsError("optimizer state sized for a different model")
    if cfg.kind == "sgd":
        new_values = params.values - cfg.learning_rate * g
        new_state = replace(state, step_count=state.step_count + 1)
    else:
        t = state.step_count + 1
        m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * g**2
        m_hat = m / (1.0 - cfg.beta1**t)
        v_hat = v / (1.0 - cfg.beta2**t)
        new_values = params.values - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
        new_state = OptimizerState(cfg, m, v, t)
    return params.with_values(new_values), new_state
