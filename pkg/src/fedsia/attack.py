"""Source inference: decide which client holds a given training record.

The attacker is the honest-but-curious server. From each round's legitimate
updates it obtains (or rebuilds) one model per client, evaluates every
client model's loss on every target record, and attributes each record to a
client. Two readouts of the same loss table are provided:

  * argmin: pick the client whose model has the smallest loss on the record
  * posterior: score client k on record m as
        sigmoid((mean of the other clients' losses - loss(k, m)) / temperature
                + log(prior / (1 - prior)))
    which rescales the loss gap into a calibrated ownership probability; the
    mean over the other clients stands in for the expected loss of a model
    trained without the record

Both readouts always name the same client: the score is strictly decreasing
in the client's own loss, with the across-client loss sum shared, so the
highest score sits exactly at the smallest loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import nn
from .data import TargetSet
from .errors import NumericError, ShapeError

_SCORE_FLOOR = np.nextafter(0.0, 1.0)
_SCORE_CEIL = np.nextafter(1.0, 0.0)


@dataclass
class LossProbe:
    """Loss table: entry (k, m) is client k's model loss on target m."""

    losses: np.ndarray
    round_index: int = 0

    def __post_init__(self):
        self.losses = np.asarray(self.losses, dtype=float)
        if self.losses.ndim != 2:
            raise ShapeError(f"loss table must be 2-D, got ndim={self.losses.ndim}")
        if self.losses.size == 0:
            raise ValueError("loss table must not be empty")
        if not np.isfinite(self.losses).all():
            raise NumericError("loss table contains non-finite values")
        if self.losses.min() < 0:
            raise ValueError("losses must be non-negative")

    @property
    def client_count(self) -> int:
        return self.losses.shape[0]

    @property
    def target_count(self) -> int:
        return self.losses.shape[1]


@dataclass
class SiaPrediction:
    predicted_source: np.ndarray
    method: str


@dataclass
class PosteriorScores:
    scores: np.ndarray
    prior: float
    temperature: float


def recover_fedsgd_local_models(
    global_model: nn.MlpModel,
    gradients: Sequence[nn.Gradients],
    learning_rate: float,
) -> list[nn.MlpModel]:
    """Rebuild the model each gradient-sharing client effectively trained:
    one local step from the shared global model with its own gradient."""
    if not gradients:
        raise ValueError("need at least one client gradient")
    return [nn.model_step(global_model, g, learning_rate) for g in gradients]


def probe_losses(
    models: Sequence[nn.MlpModel], targets: TargetSet, round_index: int = 0
) -> LossProbe:
    """Evaluate every client model's per-record loss on the target set."""
    if not models:
        raise ValueError("need at least one client model")
    rows = [
        nn.per_record_losses(m, targets.features, targets.labels) for m in models
    ]
    return LossProbe(np.stack(rows), round_index)


def infer_source_argmin(probe: LossProbe) -> SiaPrediction:
    """Attribute each target to the client with the smallest loss on it.

    Ties resolve to the lowest client index (numpy argmin order).
    """
    return SiaPrediction(np.argmin(probe.losses, axis=0), "argmin")


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def infer_source_posterior(
    probe: LossProbe, prior: float, temperature: float = 1.0
):
    """Posterior readout of a loss table.

    Returns (PosteriorScores, SiaPrediction). ``prior`` is the attacker's
    prior probability that any fixed client owns a record (1/K when ownership
    is uniform); ``temperature`` scales the loss gap. Scores are clamped to
    the largest representable open interval inside (0, 1), so saturated gaps
    never round to exactly 0 or 1.
    """
    if probe.client_count < 2:
        raise ValueError("posterior readout needs at least two clients")
    if not 0.0 < prior < 1.0:
        raise ValueError(f"prior must lie strictly inside (0, 1), got {prior}")
    if not temperature > 0.0:
        raise ValueError(f"temperature must be > 0, got {temperature}")

    losses = probe.losses
    k = probe.client_count
    others_mean = (losses.sum(axis=0, keepdims=True) - losses) / (k - 1)
    prior_logit = np.log(prior / (1.0 - prior))
    gap = (others_mean - losses) / temperature + prior_logit
    scores = np.clip(_stable_sigmoid(gap), _SCORE_FLOOR, _SCORE_CEIL)
    # The score is a strictly decreasing function of the client's own loss
    # (the loss sum is shared across the column), so its argmax is the loss
    # argmin; taking it from the losses directly keeps the identity exact
    # even where the sigmoid saturates.
    predicted = np.argmin(losses, axis=0)
    return (
        PosteriorScores(scores, prior, temperature),
        SiaPrediction(predicted, "posterior"),
    )


def train_student_model(
    public_features: np.ndarray,
    teacher_predictions: np.ndarray,
    hidden_widths: Sequence[int],
    spec: nn.TrainSpec,
    rng: np.random.Generator,
) -> nn.MlpModel:
    """Fit a fresh model to one client's public predictions.

    Used against the distillation protocol, where no client parameters are
    visible: the server mimics each client with a student trained to match
    the client's published probability rows, then probes the student in place
    of the client model. The student is initialised from ``rng`` and trained
    with the distillation loss; ``spec.epochs == 0`` returns it untrained.
    """
    public_features = np.asarray(public_features, dtype=float)
    teacher_predictions = np.asarray(teacher_predictions, dtype=float)
    if public_features.ndim != 2 or teacher_predictions.ndim != 2:
        raise ShapeError("public features and teacher rows must be 2-D")
    if teacher_predictions.shape[0] != public_features.shape[0]:
        raise ShapeError(
            f"{teacher_predictions.shape[0]} teacher rows for "
            f"{public_features.shape[0]} public records"
        )
    if not np.isfinite(teacher_predictions).all():
        raise NumericError("teacher rows contain non-finite values")
    if teacher_predictions.min() < -1e-12 or (
        np.abs(teacher_predictions.sum(axis=1) - 1.0) > 1e-6
    ).any():
        raise ValueError("teacher rows must be probability vectors")
    classes = teacher_predictions.shape[1]
    student = nn.init_mlp(
        [public_features.shape[1], *hidden_widths, classes], rng
    )
    return nn.distill_train(student, public_features, teacher_predictions, spec, rng)


def compute_asr(prediction: SiaPrediction, targets: TargetSet) -> float:
    """Attack success rate: fraction of targets attributed to their owner."""
    if len(prediction.predicted_source) != targets.count:
        raise ValueError(
            f"{len(prediction.predicted_source)} predictions for "
            f"{targets.count} targets"
        )
    return float(np.mean(prediction.predicted_source == targets.true_source))
