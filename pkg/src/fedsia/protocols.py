"""Round logic for the three federated training protocols.

All three run synchronous rounds with full client participation and aggregate
in ascending client order, which pins the floating-point summation order:

  * gradient sharing: every client sends the full-batch gradient of its local
    set at the current global model; the server applies one step with the
    sample-count weighted mean gradient
  * model averaging: every client runs E epochs of local mini-batch SGD; the
    server replaces the global model with the sample-count weighted mean of
    the returned models
  * distillation: clients with private (possibly differently sized) models
    exchange softmax predictions on a shared public set; each round every
    client first fits the public consensus (digest), then revisits its private
    data, then publishes fresh public predictions, whose unweighted mean
    becomes the next consensus

Client work is dispatched through a ``mapper`` argument (any ``map``-shaped
callable); results are consumed in submission order, so a thread-pool mapper
changes nothing about the outcome.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import nn
from .data import Dataset
from .errors import ConfigError, ProtocolError

FRAMEWORKS = ("fedsgd", "fedavg", "fedmd")

Mapper = Callable[..., Iterable]


@dataclass(frozen=True)
class FlConfig:
    """Protocol-level knobs shared by the round drivers."""

    framework: str
    client_count: int
    rounds: int
    train: nn.TrainSpec
    digest_epochs: int = 1
    revisit_epochs: int = 5
    master_seed: int = 0

    def __post_init__(self):
        if self.framework not in FRAMEWORKS:
            raise ConfigError(
                f"unknown framework '{self.framework}', expected one of {FRAMEWORKS}"
            )
        if self.client_count < 1:
            raise ConfigError(f"client_count must be >= 1, got {self.client_count}")
        if self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}")
        if self.digest_epochs < 0 or self.revisit_epochs < 0:
            raise ConfigError("distillation epoch counts must be >= 0")


@dataclass
class ClientGradient:
    gradients: nn.Gradients
    sample_count: int


@dataclass
class ClientModel:
    model: nn.MlpModel
    sample_count: int


@dataclass
class FedSgdState:
    round: int
    model: nn.MlpModel


@dataclass
class FedAvgState:
    round: int
    model: nn.MlpModel


@dataclass
class FedMdState:
    round: int
    consensus: np.ndarray
    local_models: list[nn.MlpModel]
    public_features: np.ndarray


def _check_same_shape(model: nn.MlpModel, grads: nn.Gradients):
    if len(grads.d_weights) != len(model.layers):
        raise ProtocolError("client gradient layer count differs from global model")
    for layer, dw, db in zip(model.layers, grads.d_weights, grads.d_bias):
        if dw.shape != layer.weights.shape or db.shape != layer.bias.shape:
            raise ProtocolError("client gradient shape differs from global model")


def _aggregation_weights(counts: Sequence[int]) -> np.ndarray:
    weights = np.asarray(counts, dtype=float)
    if weights.min() <= 0:
        raise ProtocolError("client sample counts must be positive")
    weights = weights / weights.sum()
    if abs(weights.sum() - 1.0) > 1e-12:
        raise ProtocolError("aggregation weights do not sum to 1")
    return weights


def run_fedsgd_round(
    state: FedSgdState,
    client_data: Sequence[Dataset],
    learning_rate: float,
    mapper: Mapper = map,
    gradient_fn=None,
    rngs: Sequence[np.random.Generator] | None = None,
):
    """One gradient-sharing round.

    Every client evaluates the full-batch cross-entropy gradient of its local
    set at the incoming global model. The server steps with the weighted mean
    gradient (weights n_k / n) and advances the round counter. Returns the new
    state plus the per-client updates in client order.

    ``gradient_fn`` may replace the plain full-batch gradient (the privacy
    defense hooks in here); it must map (model, features, labels, rng) to a
    Gradients value and requires one generator per client in ``rngs``.
    """
    if not client_data:
        raise ValueError("need at least one client dataset")
    if gradient_fn is not None and (rngs is None or len(rngs) != len(client_data)):
        raise ValueError("gradient_fn needs exactly one rng stream per client")
    model = state.model

    def one_client(args) -> ClientGradient:
        ds, rng = args
        if gradient_fn is None:
            grads = nn.backprop_grads(model, ds.features, ds.labels)
        else:
            grads = gradient_fn(model, ds.features, ds.labels, rng)
        return ClientGradient(grads, ds.n)

    streams = rngs if rngs is not None else [None] * len(client_data)
    updates = list(mapper(one_client, list(zip(client_data, streams))))
    for upd in updates:
        _check_same_shape(model, upd.gradients)

    weights = _aggregation_weights([u.sample_count for u in updates])
    mean_grad = nn.Gradients(
        [np.zeros_like(layer.weights) for layer in model.layers],
        [np.zeros_like(layer.bias) for layer in model.layers],
    )
    for w, upd in zip(weights, updates):
        for i in range(len(model.layers)):
            mean_grad.d_weights[i] += w * upd.gradients.d_weights[i]
            mean_grad.d_bias[i] += w * upd.gradients.d_bias[i]
    new_model = nn.model_step(model, mean_grad, learning_rate)
    return FedSgdState(state.round + 1, new_model), updates


def average_models(models: Sequence[nn.MlpModel], counts: Sequence[int]) -> nn.MlpModel:
    """Sample-count weighted mean of parameter stacks, in client order."""
    if len(models) != len(counts) or not models:
        raise ValueError("need one sample count per model")
    layer_count = len(models[0].layers)
    for m in models:
        if len(m.layers) != layer_count:
            raise ProtocolError("client models have differing layer counts")
        for ours, ref in zip(m.layers, models[0].layers):
            if ours.weights.shape != ref.weights.shape:
                raise ProtocolError("client models have differing layer shapes")
    weights = _aggregation_weights(counts)
    layers = []
    for i in range(layer_count):
        acc_w = weights[0] * models[0].layers[i].weights
        acc_b = weights[0] * models[0].layers[i].bias
        for w, m in zip(weights[1:], models[1:]):
            acc_w = acc_w + w * m.layers[i].weights
            acc_b = acc_b + w * m.layers[i].bias
        layers.append(nn.Layer(acc_w, acc_b))
    return nn.MlpModel(layers)


def run_fedavg_round(
    state: FedAvgState,
    client_data: Sequence[Dataset],
    spec: nn.TrainSpec,
    rngs: Sequence[np.random.Generator],
    mapper: Mapper = map,
    local_update=None,
):
    """One model-averaging round.

    Every client trains the incoming global model on its local set for
    ``spec.epochs`` epochs using its own generator; the server installs the
    weighted mean of the returned models. ``local_update`` may replace the
    plain SGD client step (the privacy defense hooks in here); it must map
    (model, features, labels, spec, rng) to a trained model.
    """
    if len(client_data) != len(rngs):
        raise ValueError("need exactly one rng stream per client")
    update = local_update or (
        lambda model, X, y, sp, rng: nn.sgd_train_local(model, X, y, sp, rng)
    )
    model = state.model

    def one_client(args) -> ClientModel:
        ds, rng = args
        trained = update(model, ds.features, ds.labels, spec, rng)
        return ClientModel(trained, ds.n)

    updates = list(mapper(one_client, list(zip(client_data, rngs))))
    new_model = average_models(
        [u.model for u in updates], [u.sample_count for u in updates]
    )
    return FedAvgState(state.round + 1, new_model), updates


def _check_fedmd_inputs(
    models: Sequence[nn.MlpModel],
    client_data: Sequence[Dataset],
    public_features: np.ndarray,
):
    if not models or len(models) != len(client_data):
        raise ConfigError("need one model per client dataset")
    width = public_features.shape[1]
    out = models[0].output_dim
    for k, m in enumerate(models):
        if m.input_dim != width:
            raise ConfigError(
                f"client {k} expects {m.input_dim} features, public set has {width}"
            )
        if m.output_dim != out:
            raise ConfigError("client models disagree on the class count")


def fedmd_init(
    models: Sequence[nn.MlpModel],
    client_data: Sequence[Dataset],
    public_features: np.ndarray,
    pretrain: nn.TrainSpec,
    rngs: Sequence[np.random.Generator],
    mapper: Mapper = map,
) -> FedMdState:
    """Round-zero setup for the distillation protocol: pretrain every client
    on its private data, collect public predictions, and average them into the
    first consensus. With pretrain.epochs == 0 the consensus reflects the raw
    initial models."""
    _check_fedmd_inputs(models, client_data, public_features)
    if len(rngs) != len(models):
        raise ValueError("need exactly one rng stream per client")

    def one_client(args) -> nn.MlpModel:
        model, ds, rng = args
        return nn.sgd_train_local(model, ds.features, ds.labels, pretrain, rng)

    trained = list(mapper(one_client, list(zip(models, client_data, rngs))))
    predictions = [nn.forward_probs(m, public_features) for m in trained]
    consensus = np.mean(np.stack(predictions), axis=0)
    return FedMdState(0, consensus, trained, public_features)


def run_fedmd_round(
    state: FedMdState,
    client_data: Sequence[Dataset],
    digest: nn.TrainSpec,
    revisit: nn.TrainSpec,
    rngs: Sequence[np.random.Generator],
    mapper: Mapper = map,
    revisit_update=None,
):
    """One distillation round.

    Per client, in order, using that client's single generator for both
    phases: fit the previous consensus on the public set (digest), then train
    on the private set (revisit), then publish softmax predictions on the
    public set. The unweighted mean of the published matrices becomes the next
    consensus. Returns the new state plus the per-client prediction matrices.
    """
    if len(client_data) != len(state.local_models):
        raise ProtocolError("client dataset count differs from protocol state")
    if len(rngs) != len(client_data):
        raise ValueError("need exactly one rng stream per client")
    revisit_fn = revisit_update or (
        lambda model, X, y, sp, rng: nn.sgd_train_local(model, X, y, sp, rng)
    )
    public = state.public_features
    consensus = state.consensus

    def one_client(args):
        model, ds, rng = args
        digested = nn.distill_train(model, public, consensus, digest, rng)
        revisited = revisit_fn(digested, ds.features, ds.labels, revisit, rng)
        return revisited, nn.forward_probs(revisited, public)

    out = list(mapper(one_client, list(zip(state.local_models, client_data, rngs))))
    new_models = [m for m, _ in out]
    predictions = [p for _, p in out]
    shape = (public.shape[0], new_models[0].output_dim)
    for p in predictions:
        if p.shape != shape:
            raise ProtocolError("client prediction matrix has the wrong shape")
    new_consensus = np.mean(np.stack(predictions), axis=0)
    return FedMdState(state.round + 1, new_consensus, new_models, public), predictions
