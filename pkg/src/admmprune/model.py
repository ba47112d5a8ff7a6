"""Layer graph, the two reference architectures, and loss evaluation.

Weight-bearing layers (dense, conv) carry a weight tensor and a bias; the
ordered list of weight tensors defines the prunable parameters. Biases are
trainable but never pruned or counted in sparsity budgets.
"""

from __future__ import annotations

import numpy as np

from . import tensor_core as tc
from .exceptions import ConfigError, DimensionError, InputError

ARCHITECTURES = ("lenet300", "lenet5")

PRUNABLE_LAYERS = {
    "lenet300": ("fc1", "fc2", "fc3"),
    "lenet5": ("conv1", "conv2", "fc1", "fc2"),
}


class DenseLayer:
    kind = "dense"

    def __init__(self, name: str, weights: np.ndarray, bias: np.ndarray):
        if weights.ndim != 2:
            raise DimensionError(f"{name}: dense weights must be in x out, got {weights.shape}")
        if bias.shape != (weights.shape[1],):
            raise DimensionError(f"{name}: bias shape {bias.shape} != ({weights.shape[1]},)")
        self.name = name
        self.weights = weights
        self.bias = bias

    def forward(self, x):
        return tc.matmul(x, self.weights) + self.bias, x

    def backward(self, grad_out, cache):
        x = cache
        grads = {
            "W": tc.matmul(x.T, grad_out),
            "b": grad_out.sum(axis=0, dtype=np.float64).astype(np.float32),
        }
        return tc.matmul(grad_out, self.weights.T), grads


class ConvLayer:
    kind = "conv"

    def __init__(self, name: str, weights: np.ndarray, bias: np.ndarray):
        if weights.ndim != 4:
            raise DimensionError(f"{name}: conv weights must be KxCxRxS, got {weights.shape}")
        if bias.shape != (weights.shape[0],):
            raise DimensionError(f"{name}: bias shape {bias.shape} != ({weights.shape[0]},)")
        self.name = name
        self.weights = weights
        self.bias = bias

    def forward(self, x):
        out = tc.conv2d(x, self.weights) + self.bias[None, :, None, None]
        return out, x

    def backward(self, grad_out, cache):
        x = cache
        grads = {
            "W": tc.conv2d_grad_kernels(grad_out, x),
            "b": grad_out.sum(axis=(0, 2, 3), dtype=np.float64).astype(np.float32),
        }
        return tc.conv2d_grad_input(grad_out, self.weights, x.shape[2:]), grads


class ReluLayer:
    kind = "relu"
    weights = None
    bias = None

    def __init__(self, name: str):
        self.name = name

    def forward(self, x):
        return tc.relu(x), x

    def backward(self, grad_out, cache):
        return tc.relu_grad(cache, grad_out), None


class MaxPoolLayer:
    kind = "maxpool"
    weights = None
    bias = None

    def __init__(self, name: str):
        self.name = name

    def forward(self, x):
        return tc.maxpool2d(x), x

    def backward(self, grad_out, cache):
        return tc.maxpool2d_grad(cache, grad_out), None


class FlattenLayer:
    kind = "flatten"
    weights = None
    bias = None

    def __init__(self, name: str):
        self.name = name

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad_out, cache):
        return grad_out.reshape(cache), None


class Model:
    """Ordered layers plus the registry of prunable weight tensors."""

    def __init__(self, arch: str, layers: list, input_shape: tuple):
        self.arch = arch
        self.layers = layers
        self.input_shape = input_shape

    def parameters(self):
        """All trainable tensors as (name, array) pairs, e.g. ('fc1.W', ...)."""
        out = []
        for layer in self.layers:
            if layer.weights is not None:
                out.append((f"{layer.name}.W", layer.weights))
                out.append((f"{layer.name}.b", layer.bias))
        return out

    def prunable_layers(self):
        return [layer for layer in self.layers if layer.weights is not None]


def params(model: Model):
    """Ordered (layer_name, weight tensor) pairs W_1..W_N; biases excluded."""
    return [(layer.name, layer.weights) for layer in model.prunable_layers()]


def _uniform_init(rng, shape, fan_in, fan_out):
    half_width = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-half_width, half_width, size=shape).astype(np.float32)


def build_model(arch: str, seed: int) -> Model:
    """Construct a seeded lenet300 or lenet5 with zero biases."""
    rng = np.random.default_rng(seed)

    def dense(name, n_in, n_out):
        return DenseLayer(name, _uniform_init(rng, (n_in, n_out), n_in, n_out),
                          np.zeros(n_out, dtype=np.float32))

    def conv(name, k, c, r, s):
        return ConvLayer(name, _uniform_init(rng, (k, c, r, s), c * r * s, k * r * s),
                         np.zeros(k, dtype=np.float32))

    if arch == "lenet300":
        layers = [
            dense("fc1", 784, 300), ReluLayer("relu1"),
            dense("fc2", 300, 100), ReluLayer("relu2"),
            dense("fc3", 100, 10),
        ]
        return Model(arch, layers, (784,))
    if arch == "lenet5":
        layers = [
            conv("conv1", 20, 1, 5, 5), ReluLayer("relu1"), MaxPoolLayer("pool1"),
            conv("conv2", 50, 20, 5, 5), ReluLayer("relu2"), MaxPoolLayer("pool2"),
            FlattenLayer("flatten"),
            dense("fc1", 800, 500), ReluLayer("relu3"),
            dense("fc2", 500, 10),
        ]
        return Model(arch, layers, (1, 28, 28))
    raise ConfigError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")


def prepare_batch(model: Model, images: np.ndarray) -> np.ndarray:
    """Reshape (B,1,28,28) dataset images to the model's input layout."""
    if model.input_shape == (784,):
        return images.reshape(images.shape[0], -1)
    return images


def _check_input(model: Model, batch: np.ndarray):
    if batch.shape[1:] != model.input_shape:
        raise DimensionError(
            f"{model.arch} expects input B x {model.input_shape}, got {batch.shape}"
        )


def _forward_cached(model: Model, batch: np.ndarray):
    _check_input(model, batch)
    caches = []
    out = batch
    for layer in model.layers:
        out, cache = layer.forward(out)
        caches.append(cache)
    return out, caches


def forward(model: Model, batch: np.ndarray) -> np.ndarray:
    """Logits (B,10) for a batch in the architecture's input layout."""
    logits, _ = _forward_cached(model, batch)
    return logits


def loss_and_grads(model: Model, batch: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy on the batch and gradients for every parameter."""
    logits, caches = _forward_cached(model, batch)
    loss, grad = tc.softmax_cross_entropy(logits, labels)
    grads = {}
    for layer, cache in zip(reversed(model.layers), reversed(caches)):
        grad, layer_grads = layer.backward(grad, cache)
        if layer_grads is not None:
            grads[f"{layer.name}.W"] = layer_grads["W"]
            grads[f"{layer.name}.b"] = layer_grads["b"]
    return loss, grads


def evaluate(model: Model, dataset, batch_size: int = 512) -> float:
    """Fraction of samples whose argmax logit (lowest index on ties) is correct."""
    from .mnist import batches  # local import to avoid a cycle at module load

    if len(dataset) == 0:
        raise InputError("evaluate: dataset is empty")
    correct = 0
    for images, labels in batches(dataset, batch_size, shuffle=False):
        logits = forward(model, prepare_batch(model, images))
        correct += int((np.argmax(logits, axis=1) == labels).sum())
    return correct / len(dataset)
