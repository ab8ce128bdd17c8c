"""Record-level differentially private local training and its accounting.

Each SGD step clips every example's full-parameter gradient to an L2 bound,
averages the clipped gradients, and perturbs the average with independent
Gaussian noise of standard deviation noise_multiplier * clip_norm / batch
per coordinate. The budget spent by a run of such steps is accounted through
zero-concentrated divergence: one Gaussian step costs rho = 1 / (2 z^2),
composition adds the rhos, and the conversion

    epsilon = rho + 2 * sqrt(rho * ln(1 / delta))

gives a valid (if slightly loose) (epsilon, delta) guarantee.

With noise_multiplier == 0 and an infinite clip_norm the update is
bit-identical to plain sgd_train_local on the same stream; that sentinel pair
means "defense off".
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn


@dataclass(frozen=True)
class DpParams:
    clip_norm: float
    noise_multiplier: float
    delta: float

    def __post_init__(self):
        if not self.clip_norm > 0.0:
            raise ValueError(f"clip_norm must be > 0, got {self.clip_norm}")
        if self.noise_multiplier < 0.0:
            raise ValueError(
                f"noise_multiplier must be >= 0, got {self.noise_multiplier}"
            )
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")

    @property
    def disabled(self) -> bool:
        return self.noise_multiplier == 0.0 and math.isinf(self.clip_norm)


@dataclass(frozen=True)
class PrivacySpend:
    steps: int
    epsilon: float
    delta: float


def clip_factors(norms: np.ndarray, clip_norm: float) -> np.ndarray:
    """Per-example scale min(1, clip_norm / norm); a zero norm passes through
    unscaled (nothing to clip)."""
    safe = np.where(norms > 0.0, norms, 1.0)
    return np.minimum(1.0, clip_norm / safe)


def noisy_batch_gradient(
    model: nn.MlpModel,
    features: np.ndarray,
    labels: np.ndarray,
    params: DpParams,
    rng: np.random.Generator,
) -> nn.Gradients:
    """Clipped, noised mean cross-entropy gradient of one batch.

    Per-example gradient norms are taken over the flattened full-parameter
    gradient. Noise is drawn from ``rng`` after the batch reduction, one array
    per layer in stack order (weights then bias), and skipped entirely when
    the multiplier is zero so the disabled sentinel leaves the stream aligned
    with plain training.
    """
    nn._check_batch(model, features, labels)
    inputs, pre_acts = nn._forward_cached(model, features)
    out_grad = nn._ce_output_grad(pre_acts[-1], labels)
    deltas = nn._raw_deltas(model, pre_acts, out_grad)

    # ||outer(delta, a)||_F^2 factorises, so per-example norms never need the
    # per-example gradients materialised.
    norms_sq = np.zeros(features.shape[0])
    for a, delta in zip(inputs, deltas):
        norms_sq += (delta**2).sum(axis=1) * (1.0 + (a**2).sum(axis=1))
    batch = features.shape[0]
    scale = clip_factors(np.sqrt(norms_sq), params.clip_norm) / batch
    grads = nn._reduce_grads(inputs, deltas, scale)

    if params.noise_multiplier > 0.0:
        sigma = params.noise_multiplier * params.clip_norm / batch
        for i in range(len(grads.d_weights)):
            grads.d_weights[i] += rng.normal(0.0, sigma, grads.d_weights[i].shape)
            grads.d_bias[i] += rng.normal(0.0, sigma, grads.d_bias[i].shape)
    return grads


def dp_sgd_local_update(
    model: nn.MlpModel,
    features: np.ndarray,
    labels: np.ndarray,
    spec: nn.TrainSpec,
    params: DpParams,
    rng: np.random.Generator,
):
    """Local training with per-example clipping and Gaussian noise.

    Batching matches sgd_train_local exactly (one permutation per epoch from
    ``rng``, short final batch kept, a batch size beyond the dataset acting as
    one full batch). Returns (new model, number of noisy steps taken).
    """
    nn._check_batch(model, features, labels)
    work = model.copy()
    n = features.shape[0]
    steps = 0
    for _ in range(spec.epochs):
        order = nn._epoch_order(n, spec.batch_size, rng)
        for start in range(0, n, spec.batch_size):
            idx = order[start : start + spec.batch_size]
            grads = noisy_batch_gradient(work, features[idx], labels[idx], params, rng)
            nn._apply_step_inplace(work, grads, spec.learning_rate)
            steps += 1
    return work, steps


def steps_per_round(sample_count: int, spec: nn.TrainSpec) -> int:
    """Noisy steps one client takes in one round of local training."""
    return spec.epochs * math.ceil(sample_count / min(spec.batch_size, sample_count))


def account_privacy(steps: int, params: DpParams) -> PrivacySpend:
    """Budget spent by ``steps`` Gaussian steps at the given multiplier.

    Zero steps cost nothing. Positive steps with a zero multiplier carry no
    guarantee at all, reported as an infinite epsilon.
    """
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    if steps == 0:
        return PrivacySpend(0, 0.0, params.delta)
    if params.noise_multiplier == 0.0:
        return PrivacySpend(steps, math.inf, params.delta)
    rho = steps / (2.0 * params.noise_multiplier**2)
    epsilon = rho + 2.0 * math.sqrt(rho * math.log(1.0 / params.delta))
    return PrivacySpend(steps, epsilon, params.delta)
