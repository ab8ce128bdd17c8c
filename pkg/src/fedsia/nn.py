"""Dense feed-forward network numerics on float64 numpy arrays.

A model is a stack of fully connected layers with rectifier activations on
every hidden layer and raw logits at the output; softmax is folded into the
loss functions (with max-logit subtraction) so saturated logits stay finite.
Two losses are supported: softmax cross-entropy against integer labels, and
mean squared error between softmax outputs and target probability rows, which
is the distillation loss used for knowledge transfer.

Conventions:
  * weights have shape (fan_out, fan_in), biases shape (fan_out,)
  * batches are (n, dim) feature arrays with aligned (n,) label arrays
  * everything is computed in double precision
  * public functions never mutate their arguments; all randomness comes from
    an explicit numpy.random.Generator
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ShapeError


@dataclass
class Layer:
    weights: np.ndarray
    bias: np.ndarray


@dataclass
class MlpModel:
    layers: list[Layer]

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[0]

    def copy(self) -> "MlpModel":
        return MlpModel(
            [Layer(layer.weights.copy(), layer.bias.copy()) for layer in self.layers]
        )


@dataclass
class Gradients:
    """Per-layer loss gradients, aligned with MlpModel.layers."""

    d_weights: list[np.ndarray]
    d_bias: list[np.ndarray]


@dataclass(frozen=True)
class TrainSpec:
    """Mini-batch SGD hyperparameters."""

    epochs: int
    batch_size: int
    learning_rate: float

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0.0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")


def init_mlp(dims: Sequence[int], rng: np.random.Generator) -> MlpModel:
    """Create a model with the given layer widths.

    ``dims`` lists the input width, each hidden width, and the output width.
    Weights are drawn uniformly from +-sqrt(6 / (fan_in + fan_out)), one layer
    at a time in ascending order; biases start at zero. The draw order is part
    of the reproducibility contract.
    """
    if len(dims) < 2:
        raise ValueError("need at least input and output widths")
    if any(d < 1 for d in dims):
        raise ValueError(f"layer widths must be positive, got {list(dims)}")
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(Layer(weights, np.zeros(fan_out)))
    return MlpModel(layers)


def _check_model(model: MlpModel):
    prev = None
    for i, layer in enumerate(model.layers):
        if layer.weights.ndim != 2 or layer.bias.ndim != 1:
            raise ShapeError(f"layer {i}: weights must be 2-D and bias 1-D")
        if layer.weights.shape[0] != layer.bias.shape[0]:
            raise ShapeError(
                f"layer {i}: weights rows {layer.weights.shape[0]} "
                f"!= bias length {layer.bias.shape[0]}"
            )
        if prev is not None and layer.weights.shape[1] != prev:
            raise ShapeError(
                f"layer {i}: fan-in {layer.weights.shape[1]} != previous fan-out {prev}"
            )
        prev = layer.weights.shape[0]
        if not (np.isfinite(layer.weights).all() and np.isfinite(layer.bias).all()):
            raise NumericError(f"layer {i}: non-finite parameters")


def _check_batch(model: MlpModel, features: np.ndarray, labels: np.ndarray | None):
    _check_model(model)
    if features.ndim != 2:
        raise ShapeError(f"features must be 2-D, got ndim={features.ndim}")
    if features.shape[0] == 0:
        raise ValueError("empty batch")
    if features.shape[1] != model.input_dim:
        raise ShapeError(
            f"feature width {features.shape[1]} != model input {model.input_dim}"
        )
    if not np.isfinite(features).all():
        raise NumericError("non-finite feature values")
    if labels is not None:
        if labels.shape != (features.shape[0],):
            raise ShapeError(
                f"labels shape {labels.shape} != ({features.shape[0]},)"
            )
        if labels.min() < 0 or labels.max() >= model.output_dim:
            raise ValueError(
                f"labels must lie in [0, {model.output_dim}), "
                f"got range [{labels.min()}, {labels.max()}]"
            )


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilised by subtracting each row's max logit."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-row softmax cross-entropy. Always finite and >= 0."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1))
    return log_norm - shifted[np.arange(logits.shape[0]), labels]


def forward_logits(model: MlpModel, features: np.ndarray) -> np.ndarray:
    """Batched forward pass returning raw output logits."""
    _check_batch(model, features, None)
    a = features
    last = len(model.layers) - 1
    for i, layer in enumerate(model.layers):
        z = a @ layer.weights.T + layer.bias
        a = np.maximum(z, 0.0) if i < last else z
    return a


def forward_probs(model: MlpModel, features: np.ndarray) -> np.ndarray:
    """Batched forward pass returning softmax probabilities."""
    return softmax(forward_logits(model, features))


def forward_and_loss(model: MlpModel, x: np.ndarray, label: int):
    """Evaluate one record: returns (logits, cross-entropy loss)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ShapeError(f"single record must be 1-D, got ndim={x.ndim}")
    labels = np.asarray([label])
    _check_batch(model, x[None, :], labels)
    logits = forward_logits(model, x[None, :])
    loss = float(cross_entropy(logits, labels)[0])
    return logits[0], loss


def per_record_losses(
    model: MlpModel, features: np.ndarray, labels: np.ndarray
) -> np.ndarray:
    """Cross-entropy of each record under the model, as an (n,) array."""
    _check_batch(model, features, labels)
    return cross_entropy(forward_logits(model, features), labels)


def mean_loss(model: MlpModel, features: np.ndarray, labels: np.ndarray) -> float:
    return float(per_record_losses(model, features, labels).mean())


def eval_accuracy(model: MlpModel, features: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of records whose argmax logit matches the label.

    Ties resolve to the lowest class index (numpy argmax order).
    """
    _check_batch(model, features, labels)
    predicted = np.argmax(forward_logits(model, features), axis=1)
    return float(np.mean(predicted == labels))


def distill_mse(
    model: MlpModel, features: np.ndarray, target_probs: np.ndarray
) -> float:
    """Mean over records of the per-class mean squared deviation between the
    model's softmax outputs and the target probability rows."""
    _check_batch(model, features, None)
    if target_probs.shape != (features.shape[0], model.output_dim):
        raise ShapeError(
            f"target rows {target_probs.shape} != "
            f"({features.shape[0]}, {model.output_dim})"
        )
    probs = forward_probs(model, features)
    return float(np.mean((probs - target_probs) ** 2))


# --- gradient machinery ---
#
# The backward pass keeps per-example error signals (deltas) unscaled and
# applies a per-example weight only at the final reduction. Plain training
# uses the uniform weight 1/n; the differential-privacy path reuses the same
# reduction with per-example clip factors, which keeps the two paths
# bit-identical when clipping and noise are disabled.


def _forward_cached(model: MlpModel, features: np.ndarray):
    inputs = []
    pre_acts = []
    a = features
    last = len(model.layers) - 1
    for i, layer in enumerate(model.layers):
        inputs.append(a)
        z = a @ layer.weights.T + layer.bias
        pre_acts.append(z)
        if i < last:
            a = np.maximum(z, 0.0)
    return inputs, pre_acts


def _ce_output_grad(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    # d(cross-entropy)/d(logits) for one record is softmax(logits) - onehot.
    grad = softmax(logits)
    grad[np.arange(logits.shape[0]), labels] -= 1.0
    return grad


def _mse_output_grad(logits: np.ndarray, target_probs: np.ndarray) -> np.ndarray:
    # Loss per record is mean_c (p_c - y_c)^2 with p = softmax(logits).
    # Chain rule through softmax: dL/dz_j = p_j * (r_j - sum_c p_c r_c)
    # where r = 2 (p - y) / C.
    probs = softmax(logits)
    resid = (2.0 / probs.shape[1]) * (probs - target_probs)
    inner = np.sum(probs * resid, axis=1, keepdims=True)
    return probs * (resid - inner)


def _raw_deltas(model: MlpModel, pre_acts, out_grad: np.ndarray):
    """Propagate unscaled per-example error signals back through the stack."""
    deltas = [np.empty(0)] * len(model.layers)
    delta = out_grad
    for i in range(len(model.layers) - 1, -1, -1):
        deltas[i] = delta
        if i > 0:
            delta = (delta @ model.layers[i].weights) * (pre_acts[i - 1] > 0.0)
    return deltas


def _reduce_grads(inputs, deltas, example_scale: np.ndarray) -> Gradients:
    """Sum per-example gradients, weighting example i by example_scale[i]."""
    d_weights = []
    d_bias = []
    for a, delta in zip(inputs, deltas):
        scaled = delta * example_scale[:, None]
        d_weights.append(scaled.T @ a)
        d_bias.append(scaled.sum(axis=0))
    return Gradients(d_weights, d_bias)


def backprop_grads(
    model: MlpModel, features: np.ndarray, labels: np.ndarray
) -> Gradients:
    """Gradient of the mean cross-entropy over the batch.

    The batch mean is taken by weighting every example by 1/n inside the
    reduction, so duplicating a record and halving its weight is exact.
    """
    _check_batch(model, features, labels)
    inputs, pre_acts = _forward_cached(model, features)
    out_grad = _ce_output_grad(pre_acts[-1], labels)
    deltas = _raw_deltas(model, pre_acts, out_grad)
    n = features.shape[0]
    return _reduce_grads(inputs, deltas, np.full(n, 1.0 / n))


def _distill_grads(
    model: MlpModel, features: np.ndarray, target_probs: np.ndarray
) -> Gradients:
    inputs, pre_acts = _forward_cached(model, features)
    out_grad = _mse_output_grad(pre_acts[-1], target_probs)
    deltas = _raw_deltas(model, pre_acts, out_grad)
    n = features.shape[0]
    return _reduce_grads(inputs, deltas, np.full(n, 1.0 / n))


def _apply_step_inplace(model: MlpModel, grads: Gradients, learning_rate: float):
    for layer, dw, db in zip(model.layers, grads.d_weights, grads.d_bias):
        layer.weights -= learning_rate * dw
        layer.bias -= learning_rate * db


def model_step(model: MlpModel, grads: Gradients, learning_rate: float) -> MlpModel:
    """Pure single SGD step: returns model - learning_rate * grads."""
    if len(grads.d_weights) != len(model.layers):
        raise ShapeError(
            f"gradient has {len(grads.d_weights)} layers, model has {len(model.layers)}"
        )
    for i, (layer, dw, db) in enumerate(zip(model.layers, grads.d_weights, grads.d_bias)):
        if dw.shape != layer.weights.shape or db.shape != layer.bias.shape:
            raise ShapeError(f"gradient shape mismatch at layer {i}")
    stepped = model.copy()
    _apply_step_inplace(stepped, grads, learning_rate)
    return stepped


def _epoch_order(n: int, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    # One permutation per epoch. When a single batch covers the whole set,
    # shuffling cannot change batch membership, so the stored record order is
    # used and the generator is left untouched; a full-batch epoch is then
    # exactly one step with backprop_grads on the data as given.
    if batch_size >= n:
        return np.arange(n)
    return rng.permutation(n)


def _minibatch_train(
    model: MlpModel,
    features: np.ndarray,
    targets: np.ndarray,
    spec: TrainSpec,
    rng: np.random.Generator,
    grad_fn: Callable[[MlpModel, np.ndarray, np.ndarray], Gradients],
) -> MlpModel:
    work = model.copy()
    n = features.shape[0]
    for _ in range(spec.epochs):
        order = _epoch_order(n, spec.batch_size, rng)
        for start in range(0, n, spec.batch_size):
            idx = order[start : start + spec.batch_size]
            grads = grad_fn(work, features[idx], targets[idx])
            _apply_step_inplace(work, grads, spec.learning_rate)
    return work


def sgd_train_local(
    model: MlpModel,
    features: np.ndarray,
    labels: np.ndarray,
    spec: TrainSpec,
    rng: np.random.Generator,
) -> MlpModel:
    """Mini-batch SGD on cross-entropy; returns a new model.

    Each epoch draws one permutation from ``rng`` and walks it in consecutive
    batches of ``spec.batch_size``; a final short batch is kept, not dropped.
    ``spec.epochs == 0`` returns an unchanged copy.
    """
    _check_batch(model, features, labels)
    return _minibatch_train(model, features, labels, spec, rng, backprop_grads)


def distill_train(
    model: MlpModel,
    features: np.ndarray,
    target_probs: np.ndarray,
    spec: TrainSpec,
    rng: np.random.Generator,
) -> MlpModel:
    """Mini-batch SGD on the distillation loss (MSE between softmax outputs
    and target probability rows); batching rules match sgd_train_local."""
    _check_batch(model, features, None)
    if target_probs.shape != (features.shape[0], model.output_dim):
        raise ShapeError(
            f"target rows {target_probs.shape} != "
            f"({features.shape[0]}, {model.output_dim})"
        )
    if not np.isfinite(target_probs).all():
        raise NumericError("non-finite distillation targets")
    return _minibatch_train(model, features, target_probs, spec, rng, _distill_grads)
