"""Federated training rounds with failure injection and recovery.

A round selects clients, broadcasts the global parameters, trains the
selected clients locally (in parallel threads), injects the failures of the
fault plan, recovers struck clients within the round, aggregates the
contributed models and evaluates the new global model on the held-out test
set. A round has a fixed simulated time budget; a recovering client trains
only for the epochs that still fit in it.

Every source of randomness is seeded from (master seed, round, client id), so
results do not depend on thread scheduling.
"""

import json
import math
import os
import time
from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
from tqdm import tqdm

from .aggregation import (FederationException, aggregate, compute_beta,
                          compute_delta, compute_gamma, fedavg_aggregate,
                          select_nodes, weight_factors)
from .checkpoint import (CheckpointRecord, CheckpointStore,
                         NoCheckpointFoundException, optimal_interval)
from .client import ClientState, as_dataset, degrade_shard, partition_shards
from .fault_plan import build_fault_plan
from .metrics import ScoredLabels, SingleClassInputException, accuracy, auc_roc
from .misc import derive_seed, rng
from .mlp import (DECISION_THRESHOLD, DEFAULT_HIDDEN_LAYERS, AdamState,
                  MlpModel, flatten_params, forward, layer_sizes, train_local,
                  unflatten_params)
from .my_logger import my_logger
from .weibull import FaultException, fit_weibull


AGGREGATIONS = ('adaptive', 'fedavg')
RECOVERY_MODES = ('checkpoint', 'restart')


LocalOutcome = namedtuple(
    'LocalOutcome',
    'client_id model failed recovered epochs_lost epochs_run busy_time')


class ClientFailureException(FederationException):
    """Raised inside local training when the planned failure strikes."""
    def __init__(self, client_id, epoch):
        self.client_id = client_id
        self.epoch = epoch
        FederationException.__init__(
            self, 'client %d failed after %d epochs' % (client_id, epoch))


@dataclass(frozen=True)
class DegradationSettings:
    """Clients whose data get label noise and inflated sensor variance."""
    client_ids: Tuple[int, ...] = ()
    label_noise: float = 0.3
    variance_multiplier: float = 4.0

    def __post_init__(self):
        object.__setattr__(self, 'client_ids',
                           tuple(sorted(set(int(c) for c in self.client_ids))))
        if not 0.0 <= self.label_noise <= 1.0:
            raise FederationException('label_noise must be in [0, 1]')
        if self.variance_multiplier < 1.0:
            raise FederationException('variance_multiplier must be >= 1')


@dataclass(frozen=True)
class FederationSettings:
    """Round protocol settings."""
    n_clients: int = 10
    n_rounds: int = 15
    local_epochs: int = 5
    aggregation: str = 'adaptive'
    node_selection_k: Optional[int] = None
    dropout_rate: float = 0.0
    prediction_window: int = 5
    partition: str = 'strided'
    test_fraction: float = 0.2
    hidden_layers: Tuple[int, ...] = DEFAULT_HIDDEN_LAYERS
    recovery: str = 'checkpoint'
    refit_from_observed: bool = False
    min_refit_failures: int = 5
    threads: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'hidden_layers',
                           tuple(int(h) for h in self.hidden_layers))
        if self.n_clients < 1:
            raise FederationException('n_clients must be >= 1')
        if self.n_rounds < 0:
            raise FederationException('n_rounds must be >= 0')
        if self.local_epochs < 1:
            raise FederationException('local_epochs must be >= 1')
        if self.aggregation not in AGGREGATIONS:
            raise FederationException('aggregation must be one of %s' %
                                      ', '.join(AGGREGATIONS))
        if self.recovery not in RECOVERY_MODES:
            raise FederationException('recovery must be one of %s' %
                                      ', '.join(RECOVERY_MODES))
        if self.node_selection_k is not None and self.node_selection_k < 1:
            raise FederationException('node_selection_k must be >= 1')
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise FederationException('dropout_rate must be in [0, 1]')
        if self.prediction_window < 1 or self.threads < 1:
            raise FederationException('prediction_window and threads must be '
                                      '>= 1')

    @property
    def selection_k(self):
        return self.node_selection_k or self.n_clients


class RoundReport:
    """Definition for RoundReport class.

    The outcome of one round. `failed` lists the clients a planned failure
    struck; those that came back in time to contribute are `recovered`, the
    rest are `dropped`. `factors` maps each contributing client id to its
    WeightFactors. The wall time is kept out of the serialized record so
    reports of identical runs are byte-identical.
    """
    def __init__(self, round_index, selected, participants, dropped,
                 recovered, factors, global_accuracy, global_auc,
                 epochs_lost=0, simulated_time=0.0, checkpoint_interval=None,
                 wall_time=0.0, failed=None):
        if set(participants) & set(dropped):
            raise FederationException('a client cannot both participate and '
                                      'drop out')
        if not set(recovered) <= set(participants):
            raise FederationException('recovered clients must participate')
        if failed is None:
            failed = set(dropped) | set(recovered)
        self.round_index = round_index
        self.selected = list(selected)
        self.participants = sorted(participants)
        self.dropped = sorted(dropped)
        self.failed = sorted(failed)
        self.recovered = sorted(recovered)
        self.factors = dict(factors)
        self.global_accuracy = global_accuracy
        self.global_auc = global_auc
        self.epochs_lost = epochs_lost
        self.simulated_time = simulated_time
        self.checkpoint_interval = checkpoint_interval
        self.wall_time = wall_time

    @property
    def is_empty(self):
        """True when no client contributed to the round."""
        return not self.participants

    def to_dict(self):
        return {
            'round': self.round_index,
            'selected': [int(c) for c in self.selected],
            'participants': [int(c) for c in self.participants],
            'dropped': [int(c) for c in self.dropped],
            'failed': [int(c) for c in self.failed],
            'recovered': [int(c) for c in self.recovered],
            'empty': self.is_empty,
            'weights': {str(c): f._asdict() for c, f in
                        sorted(self.factors.items())},
            'global_accuracy': self.global_accuracy,
            'global_auc': self.global_auc,
            'epochs_lost': self.epochs_lost,
            'simulated_time': self.simulated_time,
            'checkpoint_interval': self.checkpoint_interval,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def __repr__(self):
        return 'RoundReport(%d, %d participants, %d dropped, acc=%.4f)' % (
            self.round_index, len(self.participants), len(self.dropped),
            self.global_accuracy)


class ExperimentSummary:
    """Definition for ExperimentSummary class.

    Final metrics of an experiment and totals over its rounds.
    """
    def __init__(self, reports, final_accuracy, final_auc, weibull_model,
                 checkpoint_interval, wall_time=0.0):
        self._reports = list(reports)
        self.final_accuracy = final_accuracy
        self.final_auc = final_auc
        self.weibull_model = weibull_model
        self.checkpoint_interval = checkpoint_interval
        self.wall_time = wall_time

    @property
    def n_rounds(self):
        return len(self._reports)

    @property
    def recovery_count(self):
        return sum(len(r.recovered) for r in self._reports)

    @property
    def failure_count(self):
        return sum(len(r.failed) for r in self._reports)

    @property
    def epochs_lost(self):
        return sum(r.epochs_lost for r in self._reports)

    @property
    def simulated_time(self):
        return sum(r.simulated_time for r in self._reports)

    def per_round_alphas(self):
        """Returns one {client id: alpha} dict per round."""
        return [{str(c): f.alpha for c, f in sorted(r.factors.items())}
                for r in self._reports]

    def to_dict(self):
        return {
            'rounds': self.n_rounds,
            'final_accuracy': self.final_accuracy,
            'final_auc': self.final_auc,
            'recovery_count': self.recovery_count,
            'failure_count': self.failure_count,
            'epochs_lost': self.epochs_lost,
            'simulated_time': self.simulated_time,
            'checkpoint_interval': self.checkpoint_interval,
            'weibull': {'lambda': self.weibull_model.lam,
                        'k': self.weibull_model.k},
            'per_round_alphas': self.per_round_alphas(),
        }

    def to_text(self):
        """Returns the plain-text summary, wall time included."""
        lines = ['rounds: %d' % self.n_rounds,
                 'final accuracy: %.4f' % self.final_accuracy,
                 'final AUC-ROC: %s' % ('n/a' if self.final_auc is None
                                        else '%.4f' % self.final_auc),
                 'failures: %d' % self.failure_count,
                 'recoveries: %d' % self.recovery_count,
                 'epochs lost: %d' % self.epochs_lost,
                 'simulated time: %.2f' % self.simulated_time,
                 'checkpoint interval: %s' % self.checkpoint_interval,
                 'wall time (s): %.2f' % self.wall_time]
        return '\n'.join(lines) + '\n'


def evaluate(model, test_set):
    """Returns (accuracy, AUC-ROC) of the model on the test set.

    The AUC is None when the test set holds a single class.
    """
    probabilities = forward(model, test_set.features)
    acc = accuracy((probabilities >= DECISION_THRESHOLD).astype(int),
                   test_set.labels)
    try:
        auc = auc_roc(ScoredLabels(probabilities, test_set.labels))
    except SingleClassInputException:
        my_logger.warning('Test set has a single class; AUC-ROC undefined')
        auc = None
    return acc, auc


def prepare_clients(pool, test, settings, degradation=None):
    """Partitions the client pool and degrades clients.

    Every client's reference variance is calibrated on its clean shard,
    before any degradation is applied.

    Args:
        pool (TimeSeriesFrame): labeled rows shared out to the clients
        test (TimeSeriesFrame): the held-out global test rows
        settings (FederationSettings): the round protocol
        degradation (DegradationSettings): clients to degrade, if any
    Returns:
        ([ClientState], Dataset): the clients and the global test set
    """
    degradation = degradation or DegradationSettings()
    shards = partition_shards(pool, settings.n_clients, settings.partition,
                              derive_seed(settings.seed, 'partition'))
    clients = [ClientState.calibrate(s, settings.prediction_window)
               for s in shards]
    for client_id in degradation.client_ids:
        if client_id >= settings.n_clients:
            raise FederationException('degraded client %d does not exist' %
                                      client_id)
        degraded = degrade_shard(shards[client_id], degradation.label_noise,
                                 degradation.variance_multiplier,
                                 derive_seed(settings.seed, 'degrade',
                                             client_id))
        clients[client_id] = clients[client_id].with_shard(degraded)
        my_logger.info('Degraded client %d (label noise %.2f, variance x%.1f)'
                       % (client_id, degradation.label_noise,
                          degradation.variance_multiplier))
    return clients, as_dataset(test)


class Federation:
    """Definition for Federation class.

    Holds everything a round needs: the clients, the held-out test set, the
    training configuration, the checkpoint policy and store, and the current
    failure model and checkpoint interval.
    """
    def __init__(self, clients, test_set, settings, train_config, policy,
                 weibull_model, store):
        self._clients = {c.client_id: c for c in clients}
        self._test_set = test_set
        self._settings = settings
        self._train_config = replace(train_config,
                                     max_epochs=settings.local_epochs)
        self._policy = policy
        self._store = store
        self._observed_failures = []
        self.set_weibull_model(weibull_model)

    @property
    def clients(self):
        return [self._clients[c] for c in sorted(self._clients)]

    @property
    def settings(self):
        return self._settings

    @property
    def weibull_model(self):
        return self._weibull_model

    @property
    def checkpoint_interval(self):
        return self._checkpoint_interval

    @property
    def epoch_duration(self):
        """Simulated time of one local epoch."""
        return self._policy.total_time / self._settings.local_epochs

    @property
    def checkpoint_every(self):
        """Number of epochs between checkpoints."""
        return max(1, int(math.floor(self._checkpoint_interval /
                                     self.epoch_duration)))

    def set_weibull_model(self, model):
        """Sets the failure model and recomputes the checkpoint interval."""
        self._weibull_model = model
        self._checkpoint_interval, cost = optimal_interval(self._policy, model)
        my_logger.info('Checkpoint interval %.3f (cost %.5f, every %d epochs)'
                       % (self._checkpoint_interval, cost,
                          self.checkpoint_every))

    def evaluate(self, model):
        return evaluate(model, self._test_set)

    def _resume_state(self, client, global_model):
        """Returns (model, adam state, start epoch) a failed client resumes
        from: this round's newest checkpoint, or the global model."""
        if self._settings.recovery == 'checkpoint':
            try:
                record = self._store.restore(client.client_id)
                model = unflatten_params(record.params, record.layer_dims)
                state = AdamState(record.adam_m, record.adam_v,
                                  record.adam_step)
                my_logger.info('Client %d resumes from %s' %
                               (client.client_id, record.name))
                return model, state, record.epoch
            except NoCheckpointFoundException:
                my_logger.info('Client %d has no checkpoint this round; '
                               'restarting from the global model' %
                               client.client_id)
        return global_model, None, 0

    def _checkpointer(self, client, round_index):
        """Returns the on_epoch_end callback saving the client's
        checkpoints, or None when recovery restarts from scratch."""
        if self._settings.recovery != 'checkpoint':
            return None
        every = self.checkpoint_every

        def save(epoch, current, adam_state):
            if epoch % every == 0:
                client.last_checkpoint = self._store.save(CheckpointRecord(
                    client.client_id, round_index, epoch,
                    list(current.layer_dims), flatten_params(current),
                    adam_state.m, adam_state.v, adam_state.step))
        return save

    def _local_run(self, client, global_params, round_index, entry):
        """Trains one selected client; runs on a worker thread.

        A planned failure interrupts training after the epochs completed
        before its failure time. The client then recovers within the round
        and trains on for what is left of the round's time budget.

        Returns:
            LocalOutcome: what the client contributes and what it cost
        """
        settings = self._settings
        config = self._train_config.with_seed(
            derive_seed(settings.seed, round_index, client.client_id))
        dims = layer_sizes(client.train.features.shape[1],
                           settings.hidden_layers)
        global_model = unflatten_params(global_params, dims)
        if settings.recovery == 'checkpoint':
            self._store.clear(client.client_id)
            client.last_checkpoint = None
        save = self._checkpointer(client, round_index)
        fail_at = None
        if entry.dropped:
            fail_at = int(math.floor(entry.failure_time /
                                     self.epoch_duration))

        def on_epoch_end(epoch, current, adam_state):
            if save is not None:
                save(epoch, current, adam_state)
            if fail_at is not None and epoch >= fail_at:
                raise ClientFailureException(client.client_id, epoch)

        try:
            if fail_at == 0:
                raise ClientFailureException(client.client_id, 0)
            result = train_local(global_model, client.train,
                                 client.validation, config,
                                 on_epoch_end=on_epoch_end)
        except ClientFailureException as e:
            my_logger.info(str(e))
            return self._recover(client, global_model, round_index,
                                 entry.failure_time, e.epoch)
        client.model = result.model
        return LocalOutcome(client.client_id, result.model, False, False, 0,
                            result.epochs_run,
                            result.epochs_run * self.epoch_duration)

    def _recover(self, client, global_model, round_index, failure_time,
                 failed_epoch):
        """Brings a failed client back within the round.

        The client is down for the recovery time. If it cannot come back
        before the round's time budget runs out it contributes nothing and
        sits out the rounds its recovery still spans. Otherwise it resumes
        from this round's newest checkpoint (or the global model) and trains
        for the epochs that still fit in the budget, capped at local_epochs.
        """
        policy = self._policy
        back_at = failure_time + policy.recovery_time
        if back_at >= policy.total_time:
            client.unavailable_until = round_index + int(
                math.ceil(back_at / policy.total_time))
            my_logger.info('Client %d is down until round %d' %
                           (client.client_id, client.unavailable_until))
            return LocalOutcome(client.client_id, None, True, False,
                                failed_epoch, failed_epoch,
                                policy.total_time)
        model, state, start = self._resume_state(client, global_model)
        budget = int(math.floor((policy.total_time - back_at) /
                                self.epoch_duration))
        stop = min(self._settings.local_epochs, start + budget)
        epochs_run = failed_epoch
        if stop > start:
            config = replace(self._train_config, max_epochs=stop).with_seed(
                derive_seed(self._settings.seed, round_index,
                            client.client_id, 'recovery'))
            result = train_local(model, client.train, client.validation,
                                 config, state, start,
                                 self._checkpointer(client, round_index))
            model = result.model
            epochs_run += result.epochs_run
        elif start == 0:
            my_logger.info('Client %d has no time left to train' %
                           client.client_id)
            return LocalOutcome(client.client_id, None, True, False,
                                failed_epoch, failed_epoch, back_at)
        client.model = model
        busy = back_at + (epochs_run - failed_epoch) * self.epoch_duration
        return LocalOutcome(client.client_id, model, True, True,
                            failed_epoch - start, epochs_run, busy)

    def _factors(self, trained):
        """Computes beta, gamma, delta and the aggregation weights."""
        betas, gammas, deltas = [], [], []
        for client_id, model in trained:
            client = self._clients[client_id]
            betas.append(compute_beta(model, client.validation))
            gammas.append(compute_gamma(client.sigma, client.sigma_ref))
            client.prediction_window.append(
                float(np.mean(forward(model, client.validation.features))))
            deltas.append(compute_delta(client.prediction_window))
        factors = weight_factors(betas, gammas, deltas)
        if self._settings.aggregation == 'fedavg':
            sizes = np.array([self._clients[c].n_train for c, _ in trained],
                             dtype=float)
            factors = [f._replace(alpha=float(a)) for f, a in
                       zip(factors, sizes / sizes.sum())]
        for (client_id, _), f in zip(trained, factors):
            self._clients[client_id].last_score = f.beta * f.gamma * f.delta
        return factors

    def run_round(self, global_model, round_index, plan):
        """Runs one federated round.

        Args:
            global_model (MlpModel): the current global model
            round_index (int): 1-based round number
            plan (FaultPlan): failure injection plan of the experiment
        Returns:
            (MlpModel, RoundReport): the new global model and the report
        """
        start = time.time()
        settings = self._settings
        alive = {c.client_id: c.last_score for c in self.clients
                 if c.is_alive(round_index)}
        selected = select_nodes(alive, settings.selection_k,
                                rng(derive_seed(settings.seed, 'select',
                                                round_index))) \
            if alive else []
        global_params = flatten_params(global_model)

        def run(client_id):
            return self._local_run(self._clients[client_id], global_params,
                                   round_index,
                                   plan.entry(round_index, client_id))

        with ThreadPoolExecutor(max_workers=settings.threads) as executor:
            outcomes = sorted(executor.map(run, selected),
                              key=lambda o: o.client_id)

        trained, dropped, failed, recovered = [], [], [], []
        epochs_lost, busy_time = 0, 0.0
        for outcome in outcomes:
            client_id = outcome.client_id
            busy_time = max(busy_time, outcome.busy_time)
            if outcome.failed:
                failed.append(client_id)
                epochs_lost += outcome.epochs_lost
                self._observed_failures.append(
                    plan.entry(round_index, client_id).failure_time)
            if outcome.recovered:
                recovered.append(client_id)
            if outcome.model is None:
                dropped.append(client_id)
            else:
                trained.append((client_id, outcome.model))

        factors = {}
        if trained:
            weights = self._factors(trained)
            factors = dict(zip([c for c, _ in trained], weights))
            params = [flatten_params(m) for _, m in trained]
            if settings.aggregation == 'fedavg':
                new_params = fedavg_aggregate(
                    params, [self._clients[c].n_train for c, _ in trained])
            else:
                new_params = aggregate(params, [f.alpha for f in weights])
            global_model = unflatten_params(new_params,
                                            global_model.layer_dims)
        else:
            my_logger.warning('Round %d: every selected client dropped; global '
                              'model unchanged' % round_index)

        acc, auc = self.evaluate(global_model)
        report = RoundReport(round_index, selected, [c for c, _ in trained],
                             dropped, recovered, factors, acc, auc,
                             epochs_lost, busy_time,
                             self._checkpoint_interval, time.time() - start,
                             failed)
        my_logger.info('Round %d: %d/%d clients contributed, accuracy %.4f' %
                       (round_index, len(trained), len(selected), acc))
        self._maybe_refit()
        return global_model, report

    def _maybe_refit(self):
        """Refits the failure model from failures observed so far."""
        settings = self._settings
        times = [t for t in self._observed_failures if t > 0]
        if not settings.refit_from_observed or \
                len(set(times)) < settings.min_refit_failures:
            return
        try:
            self.set_weibull_model(fit_weibull(times))
        except FaultException as e:
            my_logger.warning('Keeping the failure model: %s' % e)


def run_experiment(scenario, data=None):
    """Runs a full federated experiment.

    Args:
        scenario (ScenarioConfig): the validated scenario
        data (tuple): the preprocessed (client pool, test) frames; prepared
            from the scenario when omitted
    Returns:
        ([RoundReport], ExperimentSummary, FaultPlan): per-round reports,
            the summary and the fault plan that drove the run
    """
    start = time.time()
    settings = scenario.federation
    pool, test = data if data is not None else scenario.federated_data()
    clients, test_set = prepare_clients(pool, test, settings,
                                        scenario.degradation)
    dims = layer_sizes(pool.n_sensors, settings.hidden_layers)
    global_model = MlpModel.initialize(dims, derive_seed(settings.seed,
                                                         'init'))
    store = CheckpointStore(os.path.join(scenario.output_dir, 'checkpoints'))
    federation = Federation(clients, test_set, settings, scenario.training,
                            scenario.checkpoint_policy, scenario.weibull_model,
                            store)
    plan = build_fault_plan(settings.n_clients, settings.n_rounds,
                            settings.dropout_rate, scenario.weibull_model,
                            derive_seed(settings.seed, 'faults'),
                            window=scenario.checkpoint_policy.total_time)
    my_logger.info('%d of %d client-rounds planned to fail' %
                   (plan.dropout_count(), plan.dropped.size))

    reports = []
    for round_index in tqdm(range(1, settings.n_rounds + 1),
                            disable=None, desc='rounds'):
        global_model, report = federation.run_round(global_model, round_index,
                                                    plan)
        reports.append(report)
    acc, auc = federation.evaluate(global_model)
    summary = ExperimentSummary(reports, acc, auc, federation.weibull_model,
                                federation.checkpoint_interval,
                                time.time() - start)
    return reports, summary, plan
