"""Federated learning simulator with source inference attacks and a DP-SGD
defense: who contributed a given training record, judged from per-client
losses on legitimate protocol updates."""

__version__ = "0.1.0"

from .attack import (
    LossProbe,
    PosteriorScores,
    SiaPrediction,
    compute_asr,
    infer_source_argmin,
    infer_source_posterior,
    probe_losses,
    recover_fedsgd_local_models,
    train_student_model,
)
from .config import DatasetSpec, RunConfig, config_from_dict, config_to_dict, load_config
from .data import (
    ClientPartition,
    Dataset,
    TargetSet,
    dirichlet_partition,
    gen_synthetic,
    load_csv_dataset,
    sample_targets,
    train_test_split,
    write_csv_dataset,
)
from .dp import DpParams, PrivacySpend, account_privacy, dp_sgd_local_update
from .errors import (
    ConfigError,
    FedsiaError,
    FormatError,
    NumericError,
    ProtocolError,
    ShapeError,
)
from .experiment import run_experiment, run_single, run_sweep
from .nn import (
    Gradients,
    Layer,
    MlpModel,
    TrainSpec,
    backprop_grads,
    distill_train,
    eval_accuracy,
    forward_and_loss,
    forward_logits,
    forward_probs,
    init_mlp,
    per_record_losses,
    sgd_train_local,
)
from .protocols import (
    FedAvgState,
    FedMdState,
    FedSgdState,
    FlConfig,
    fedmd_init,
    run_fedavg_round,
    run_fedmd_round,
    run_fedsgd_round,
)
from .report import (
    ExperimentResult,
    SeedAggregate,
    aggregate_over_seeds,
    compute_generalization_error,
    emit_results,
    render_results,
)
from .seeding import derive_rng, derive_seed
