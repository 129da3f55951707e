import numpy as np
import pytest

from fcm.aggregation import FederationException
from fcm.checkpoint import CheckpointStore
from fcm.client import hold_out_test
from fcm.fault_plan import FaultPlan
from fcm.federation import (DegradationSettings, Federation,
                            FederationSettings, RoundReport, prepare_clients,
                            run_experiment)
from fcm.mlp import MlpModel, flatten_params, layer_sizes


def _federation(scenario, tmp_path):
    pool, test = scenario.federated_data()
    clients, test_set = prepare_clients(pool, test, scenario.federation,
                                        scenario.degradation)
    federation = Federation(clients, test_set, scenario.federation,
                            scenario.training, scenario.checkpoint_policy,
                            scenario.weibull_model,
                            CheckpointStore(str(tmp_path / 'store')))
    dims = layer_sizes(pool.n_sensors, scenario.federation.hidden_layers)
    return federation, MlpModel.initialize(dims, seed=0)


def _quiet_plan(n_rounds, n_clients):
    shape = (n_rounds, n_clients)
    return FaultPlan(np.zeros(shape, dtype=bool), np.zeros(shape), seed=0)


def test_single_client_global_model_is_local_model(scenario_factory,
                                                   tmp_path):
    scenario = scenario_factory({'federation': {'n_clients': 1}})
    federation, model = _federation(scenario, tmp_path)
    new_model, report = federation.run_round(model, 1, _quiet_plan(1, 1))
    assert report.participants == [0]
    assert report.factors[0].alpha == 1.0
    np.testing.assert_array_equal(flatten_params(new_model),
                                  flatten_params(federation.clients[0].model))


def test_all_dropped_keeps_global_model(scenario_factory, tmp_path):
    scenario = scenario_factory()
    federation, model = _federation(scenario, tmp_path)
    # struck 95 units into a 100-unit round, back only after it ends
    plan = FaultPlan(np.ones((1, 3), dtype=bool), np.full((1, 3), 95.0),
                     seed=0)
    new_model, report = federation.run_round(model, 1, plan)
    assert report.is_empty
    assert report.dropped == [0, 1, 2]
    assert report.failed == [0, 1, 2]
    assert report.recovered == []
    assert report.factors == {}
    np.testing.assert_array_equal(flatten_params(new_model),
                                  flatten_params(model))
    assert report.to_dict()['empty'] is True
    assert all(c.unavailable_until == 3 for c in federation.clients)


def test_report_rejects_overlap():
    with pytest.raises(FederationException):
        RoundReport(1, [0, 1], [0, 1], [1], [], {}, 0.5, 0.5)
    with pytest.raises(FederationException):
        RoundReport(1, [0, 1], [1], [0], [0], {}, 0.5, 0.5)


def _recovery_scenario(scenario_factory, enabled):
    return scenario_factory({
        'federation': {'n_clients': 2, 'local_epochs': 10},
        'training': {'early_stop_patience': 20},
        'checkpoint': {'enabled': enabled, 'candidate_intervals': [20.0],
                       'total_time': 100.0, 'recovery_time': 10.0},
    })


@pytest.mark.parametrize('enabled, lost', [(True, 1), (False, 7)])
def test_failure_recovers_within_round(scenario_factory, tmp_path, enabled,
                                       lost):
    scenario = _recovery_scenario(scenario_factory, enabled)
    federation, model = _federation(scenario, tmp_path)
    assert federation.checkpoint_every == 2
    # client 0 is struck 75 units into the round, after 7 of 10 epochs; it
    # is back at 85 with time for one more epoch
    plan = FaultPlan([[True, False]], [[75.0, 0.0]], seed=0)
    _, report = federation.run_round(model, 1, plan)
    assert report.failed == [0]
    assert report.recovered == [0]
    assert report.dropped == []
    assert report.participants == [0, 1]
    assert report.epochs_lost == lost
    assert set(report.factors) == {0, 1}
    assert report.simulated_time == pytest.approx(100.0)


@pytest.mark.parametrize('failure_time', [5.0, 25.0, 55.0, 75.0])
def test_checkpoints_bound_lost_epochs(scenario_factory, tmp_path,
                                       failure_time):
    plan = FaultPlan([[True, False]], [[failure_time, 0.0]], seed=0)
    lost = {}
    for enabled in (True, False):
        scenario = _recovery_scenario(scenario_factory, enabled)
        federation, model = _federation(scenario, tmp_path / str(enabled))
        _, report = federation.run_round(model, 1, plan)
        assert report.recovered == [0]
        lost[enabled] = report.epochs_lost
    failed_epoch = int(failure_time // 10)
    assert lost[False] == failed_epoch
    assert lost[True] <= min(failed_epoch, federation.checkpoint_every - 1)


def test_failed_client_sits_out_recovery_rounds(scenario_factory, tmp_path):
    scenario = scenario_factory({
        'federation': {'n_clients': 2, 'local_epochs': 2},
        'checkpoint': {'total_time': 10.0, 'recovery_time': 25.0,
                       'candidate_intervals': [5.0, 10.0]},
    })
    federation, model = _federation(scenario, tmp_path)
    plan = FaultPlan([[True, False]] + [[False, False]] * 3,
                     [[1.0, 0.0]] + [[0.0, 0.0]] * 3, seed=0)
    reports = []
    for round_index in range(1, 5):
        model, report = federation.run_round(model, round_index, plan)
        reports.append(report)
    assert reports[0].dropped == [0]
    assert reports[0].failed == [0]
    # back 26 units after round 1 started: out for rounds 2 and 3
    assert [r.selected for r in reports[1:3]] == [[1], [1]]
    assert sorted(reports[3].selected) == [0, 1]
    assert reports[3].participants == [0, 1]


def test_alphas_sum_to_one(scenario_factory):
    scenario = scenario_factory({'federation': {'n_rounds': 3,
                                                'dropout_rate': 0.3}})
    reports, summary, _ = run_experiment(scenario)
    assert len(reports) == 3
    for report in reports:
        if report.factors:
            alphas = [f.alpha for f in report.factors.values()]
            assert abs(sum(alphas) - 1.0) <= 1e-9
            assert min(alphas) >= 0
        assert set(report.factors) == set(report.participants)
        assert not set(report.participants) & set(report.dropped)
        assert set(report.recovered) <= set(report.participants)
        assert set(report.dropped) <= set(report.failed)
        assert 0.0 <= report.global_accuracy <= 1.0
    assert summary.failure_count == sum(len(r.failed) for r in reports)
    assert summary.recovery_count == sum(len(r.recovered) for r in reports)


def test_degraded_client_is_downweighted(scenario_factory):
    scenario = scenario_factory({
        'federation': {'n_clients': 4},
        'degradation': {'client_ids': [0]},
    })
    reports, _, _ = run_experiment(scenario)
    for report in reports:
        alphas = {c: f.alpha for c, f in report.factors.items()}
        assert alphas[0] < min(alphas[c] for c in (1, 2, 3))
        assert report.factors[0].gamma < 0.2
        assert report.factors[1].gamma == 1.0


def test_fedavg_weights_follow_shard_sizes(scenario_factory):
    scenario = scenario_factory({
        'federation': {'aggregation': 'fedavg', 'n_clients': 4},
        'degradation': {'client_ids': [0]},
    })
    reports, _, _ = run_experiment(scenario)
    for report in reports:
        alphas = [f.alpha for _, f in sorted(report.factors.items())]
        np.testing.assert_allclose(alphas, [0.25] * 4, atol=1e-12)


def test_zero_rounds(scenario_factory):
    scenario = scenario_factory({'federation': {'n_rounds': 0}})
    reports, summary, plan = run_experiment(scenario)
    assert reports == []
    assert summary.n_rounds == 0
    assert 0.0 <= summary.final_accuracy <= 1.0
    assert plan.n_rounds == 0


def test_runs_are_deterministic_across_threads(scenario_factory):
    changes = {'federation': {'dropout_rate': 0.4, 'n_rounds': 3}}
    serial = scenario_factory(dict(changes, threads=1), name='serial')
    parallel = scenario_factory(dict(changes, threads=3), name='parallel')
    again = scenario_factory(dict(changes, threads=1), name='again')
    runs = [run_experiment(s) for s in (serial, parallel, again)]
    jsons = [[r.to_json() for r in reports] for reports, _, _ in runs]
    assert jsons[0] == jsons[1] == jsons[2]
    summaries = [summary.to_dict() for _, summary, _ in runs]
    assert summaries[0] == summaries[1] == summaries[2]


def test_settings_validation():
    with pytest.raises(FederationException):
        FederationSettings(aggregation='median')
    with pytest.raises(FederationException):
        FederationSettings(dropout_rate=1.5)
    with pytest.raises(FederationException):
        DegradationSettings(label_noise=2.0)


def test_degraded_client_must_exist(synthetic_frame):
    settings = FederationSettings(n_clients=2)
    pool, test = hold_out_test(synthetic_frame)
    with pytest.raises(FederationException):
        prepare_clients(pool, test, settings,
                        DegradationSettings(client_ids=(5,)))
