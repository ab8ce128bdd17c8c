"""End-to-end seeded runs: data, federated training, per-round attack, report.

One run is a pure function of (configuration, seed). Every random choice
pulls from a stream derived from the seed and a purpose label (see seeding),
client work is dispatched in client order, and BLAS pools are pinned to one
thread for the duration, so reruns and thread-count changes reproduce results
bit for bit.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext

import numpy as np
from threadpoolctl import threadpool_limits

from . import attack, data, dp, nn, protocols, report
from .config import RunConfig
from .errors import ConfigError
from .seeding import derive_rng, derive_seed


def _load_base_dataset(config: RunConfig, seed: int) -> data.Dataset:
    ds = config.dataset
    if ds.kind == "synthetic":
        return data.gen_synthetic(
            ds.records, ds.dim, ds.classes, derive_seed(seed, "data")
        )
    return data.load_csv_dataset(ds.path, ds.label_column)


def _client_views(train: data.Dataset, partition: data.ClientPartition):
    return [train.subset(idx) for idx in partition.client_indices]


def _local_model_dims(config: RunConfig, input_dim: int, classes: int, client: int):
    if config.framework == "fedmd":
        widths = config.fedmd_client_widths
        return [input_dim, widths[client % len(widths)], classes]
    return [input_dim, config.hidden_width, classes]


def run_single(config: RunConfig, seed: int) -> report.ExperimentResult:
    """One federated run under attack, reported per round.

    The attack is mounted on every round's legitimate updates; the headline
    number is the best round. Accuracies and the generalization gap are
    measured on the final round's local models and global model.
    """
    with threadpool_limits(limits=1):
        pool_ctx = (
            ThreadPoolExecutor(max_workers=config.threads)
            if config.threads > 1
            else nullcontext()
        )
        with pool_ctx as pool:
            mapper = pool.map if pool is not None else map
            return _run_single_inner(config, seed, mapper)


def _run_single_inner(config: RunConfig, seed: int, mapper) -> report.ExperimentResult:
    base = _load_base_dataset(config, seed)
    train, test = data.train_test_split(
        base, config.split_ratio, derive_seed(seed, "split")
    )

    public_features = None
    eval_set = test
    if config.framework == "fedmd":
        if config.public_records >= test.n:
            raise ConfigError(
                f"public_records={config.public_records} does not leave an "
                f"evaluation slice (test side holds {test.n} records)"
            )
        # The public set is an unlabeled slice held out from all clients; the
        # remainder of the test side stays label-only evaluation data.
        public_features = test.features[: config.public_records].copy()
        eval_set = test.subset(np.arange(config.public_records, test.n))

    partition = data.dirichlet_partition(
        train.labels, config.clients, config.alpha, derive_seed(seed, "partition")
    )
    views = _client_views(train, partition)

    # Highly skewed partitions can leave a client with fewer records than the
    # requested target count; shrink the per-client draw so each client still
    # contributes the same number and the random-guess baseline stays 1/K.
    per_client = int(min(config.targets_per_client, partition.sizes.min()))
    targets = data.sample_targets(partition, train, per_client, derive_seed(seed, "targets"))

    spec = nn.TrainSpec(config.local_epochs, config.batch_size, config.learning_rate)
    prior = config.effective_prior()

    dp_local_update = None
    if config.dp is not None:
        dp_params = config.dp

        def dp_local_update(model, features, labels, sp, rng):
            trained, _ = dp.dp_sgd_local_update(model, features, labels, sp, dp_params, rng)
            return trained

    round_asr: list[float] = []
    final_locals: list[nn.MlpModel] = []

    if config.framework == "fedsgd":
        model = nn.init_mlp(
            _local_model_dims(config, train.dim, train.class_count, 0),
            derive_rng(seed, "init"),
        )
        state = protocols.FedSgdState(0, model)
        gradient_fn = None
        if config.dp is not None:
            gradient_fn = lambda m, X, y, rng: dp.noisy_batch_gradient(
                m, X, y, config.dp, rng
            )
        for t in range(1, config.rounds + 1):
            rngs = [derive_rng(seed, "client", t, k) for k in range(config.clients)]
            prev_model = state.model
            state, updates = protocols.run_fedsgd_round(
                state,
                views,
                config.learning_rate,
                mapper=mapper,
                gradient_fn=gradient_fn,
                rngs=rngs,
            )
            final_locals = attack.recover_fedsgd_local_models(
                prev_model, [u.gradients for u in updates], config.learning_rate
            )
            probe = attack.probe_losses(final_locals, targets, t)
            prediction = attack.infer_source_argmin(probe)
            round_asr.append(attack.compute_asr(prediction, targets))
        global_model = state.model
        steps_round = 1

    elif config.framework == "fedavg":
        model = nn.init_mlp(
            _local_model_dims(config, train.dim, train.class_count, 0),
            derive_rng(seed, "init"),
        )
        state = protocols.FedAvgState(0, model)
        for t in range(1, config.rounds + 1):
            rngs = [derive_rng(seed, "client", t, k) for k in range(config.clients)]
            state, updates = protocols.run_fedavg_round(
                state, views, spec, rngs, mapper=mapper, local_update=dp_local_update
            )
            final_locals = [u.model for u in updates]
            probe = attack.probe_losses(final_locals, targets, t)
            prediction = attack.infer_source_argmin(probe)
            round_asr.append(attack.compute_asr(prediction, targets))
        global_model = state.model
        steps_round = max(
            dp.steps_per_round(v.n, spec) for v in views
        )

    else:  # fedmd
        models = [
            nn.init_mlp(
                _local_model_dims(config, train.dim, train.class_count, k),
                derive_rng(seed, "init", client=k),
            )
            for k in range(config.clients)
        ]
        pretrain = nn.TrainSpec(
            config.pretrain_epochs, config.batch_size, config.learning_rate
        )
        digest = nn.TrainSpec(
            config.digest_epochs, config.batch_size, config.learning_rate
        )
        revisit = spec
        student_spec = nn.TrainSpec(
            config.student_epochs, config.batch_size, config.learning_rate
        )
        init_rngs = [derive_rng(seed, "pretrain", 0, k) for k in range(config.clients)]
        state = protocols.fedmd_init(
            models, views, public_features, pretrain, init_rngs, mapper=mapper
        )
        for t in range(1, config.rounds + 1):
            rngs = [derive_rng(seed, "client", t, k) for k in range(config.clients)]
            state, predictions = protocols.run_fedmd_round(
                state, views, digest, revisit, rngs,
                mapper=mapper, revisit_update=dp_local_update,
            )

            def one_student(args):
                k, published = args
                return attack.train_student_model(
                    public_features,
                    published,
                    config.student_hidden,
                    student_spec,
                    derive_rng(seed, "student", t, k),
                )

            students = list(mapper(one_student, list(enumerate(predictions))))
            probe = attack.probe_losses(students, targets, t)
            prediction = attack.infer_source_argmin(probe)
            round_asr.append(attack.compute_asr(prediction, targets))
        final_locals = state.local_models
        global_model = None
        steps_round = max(dp.steps_per_round(v.n, spec) for v in views)

    client_train_acc = [
        nn.eval_accuracy(m, v.features, v.labels)
        for m, v in zip(final_locals, views)
    ]
    client_test_acc = [
        nn.eval_accuracy(m, eval_set.features, eval_set.labels) for m in final_locals
    ]
    gen_error = float(
        np.mean([abs(a - b) for a, b in zip(client_train_acc, client_test_acc)])
    )
    if global_model is not None:
        train_acc = nn.eval_accuracy(global_model, train.features, train.labels)
        test_acc = nn.eval_accuracy(global_model, eval_set.features, eval_set.labels)
    else:
        # No shared parameters under distillation; report the local means.
        train_acc = float(np.mean(client_train_acc))
        test_acc = float(np.mean(client_test_acc))

    dp_epsilon = None
    if config.dp is not None:
        dp_epsilon = dp.account_privacy(steps_round, config.dp).epsilon

    return report.ExperimentResult(
        framework=config.framework,
        dataset=config.dataset.name,
        alpha=config.alpha,
        local_epochs=1 if config.framework == "fedsgd" else config.local_epochs,
        clients=config.clients,
        rounds=config.rounds,
        seed=seed,
        round_asr=round_asr,
        client_train_acc=client_train_acc,
        client_test_acc=client_test_acc,
        gen_error=gen_error,
        train_acc=train_acc,
        test_acc=test_acc,
        dp_enabled=config.dp is not None,
        dp_epsilon=dp_epsilon,
    )


def run_experiment(config: RunConfig) -> list[report.ExperimentResult]:
    """Run every configured seed; results come back in seed order."""
    return [run_single(config, seed) for seed in config.seeds]


def run_sweep(
    config: RunConfig,
    alphas: list[float],
    epoch_grid: list[int] | None = None,
) -> list[report.SeedAggregate]:
    """Cross product of concentration values and local epoch counts, each
    cell aggregated over the configured seeds. Gradient sharing has no local
    epoch knob, so its sweep collapses to one cell per alpha."""
    if not alphas:
        raise ConfigError("sweep needs at least one alpha")
    epochs = epoch_grid or [config.local_epochs]
    if config.framework == "fedsgd":
        epochs = [1]
    aggregates = []
    for alpha in alphas:
        for local_epochs in epochs:
            cell = config.replace(alpha=alpha, local_epochs=local_epochs)
            aggregates.append(report.aggregate_over_seeds(run_experiment(cell)))
    return aggregates
