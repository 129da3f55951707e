import json
import os

import pytest

import fcm.scenario as scenario_module
from fcm.scenario import (ConfigParseException, InvariantViolationException,
                          ScenarioConfig, UnknownKeyException,
                          merge_with_defaults, parse_config)


def test_defaults():
    scenario = ScenarioConfig()
    assert scenario.federation.n_clients == 10
    assert scenario.federation.n_rounds == 15
    assert scenario.federation.hidden_layers == (128, 64, 32)
    assert scenario.training.learning_rate == 0.001
    assert scenario.training.dropout_rate == 0.4
    assert scenario.training.batch_size == 512
    assert scenario.training.max_epochs == scenario.federation.local_epochs
    assert scenario.detector == 'both'
    assert scenario.checkpoint_policy.cost_mode == 'literal'
    assert scenario.sweep.repeats == 10


def test_unknown_key_names_the_path():
    with pytest.raises(UnknownKeyException) as e:
        ScenarioConfig({'federation': {'n_cleints': 5}})
    assert e.value.key == 'federation.n_cleints'
    assert 'federation.n_cleints' in str(e.value)


@pytest.mark.parametrize('raw', [
    {'federation': {'dropout_rate': 1.5}},
    {'federation': {'n_clients': 0}},
    {'federation': {'aggregation': 'median'}},
    {'federation': {'n_clients': 'ten'}},
    {'detector': {'mode': 'lstm'}},
    {'data': {'baseline_fraction': 1.0}},
    {'som': {'grid_rows': 0}},
    {'checkpoint': {'candidate_intervals': [50.0, 200.0]}},
    {'checkpoint': {'weibull_k': -1.0}},
    {'training': {'dropout_rate': 1.0}},
    {'degradation': {'client_ids': [10]}},
    {'sweep': {'methods': ['adaptive', 'krum']}},
    {'seed': -1},
    {'threads': 0},
    {'data': {'source': 'csv'}},
])
def test_invalid_values(raw):
    with pytest.raises(InvariantViolationException):
        ScenarioConfig(raw)


def test_parse_error_reports_position(tmp_path):
    path = tmp_path / 'broken.json'
    path.write_text('{\n  "seed": 1,\n  "threads": \n}\n')
    with pytest.raises(ConfigParseException) as e:
        parse_config(str(path))
    assert e.value.line == 4


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        parse_config(str(tmp_path / 'absent.json'))


def test_relative_paths_follow_the_scenario_file(tmp_path):
    folder = tmp_path / 'configs'
    folder.mkdir()
    (folder / 'data.csv').write_text('t,a\n0,1\n1,2\n')
    path = folder / 'scenario.json'
    path.write_text(json.dumps({'data': {'source': 'csv',
                                         'csv_path': 'data.csv'},
                                'output_dir': 'out'}))
    scenario = parse_config(str(path))
    assert scenario.csv_path == os.path.join(str(folder), 'data.csv')
    assert scenario.output_dir == os.path.join(str(folder), 'out')
    assert scenario.load_frame().n_rows == 2


def test_overrides():
    scenario = ScenarioConfig({'federation': {'n_rounds': 3}})
    changed = scenario.with_overrides({'federation.n_clients': 25,
                                       'seed': 7})
    assert changed.federation.n_clients == 25
    assert changed.federation.n_rounds == 3
    assert changed.seed == 7
    assert scenario.federation.n_clients == 10


def test_derived_seeds_follow_master_seed():
    a, b = ScenarioConfig({'seed': 1}), ScenarioConfig({'seed': 2})
    assert a.synthetic_spec.seed != b.synthetic_spec.seed
    assert a.som_config.seed != b.som_config.seed
    assert a.synthetic_spec.seed == ScenarioConfig({'seed': 1}) \
        .synthetic_spec.seed


def test_failure_history_is_fitted(tmp_path):
    history = tmp_path / 'failures.csv'
    history.write_text('# hours\n' + '\n'.join(
        str(v) for v in [12.0, 30.5, 41.0, 55.2, 60.0, 77.7, 90.1]) + '\n')
    scenario = ScenarioConfig({'checkpoint': {
        'failure_history': str(history)}}, str(tmp_path))
    assert scenario.weibull_model.lam > 0
    assert scenario.weibull_model.k > 1


def test_merge_keeps_nested_defaults():
    merged = merge_with_defaults({'data': {'synthetic': {'n_rows': 50}}})
    assert merged['data']['synthetic']['n_rows'] == 50
    assert merged['data']['synthetic']['n_sensors'] == 6
    assert merged['data']['baseline_fraction'] == 0.6


def test_feature_selection_keeps_informative_sensor(scenario_factory):
    scenario = scenario_factory({
        'preprocessing': {'keep_features': 1},
        'training': {'learning_rate': 0.02, 'early_stop_patience': 20},
        'federation': {'local_epochs': 15},
    })
    pool, test = scenario.federated_data()
    assert pool.sensor_names == ('sensor_1',)
    assert test.sensor_names == ('sensor_1',)


def test_feature_importance_never_sees_test_rows(scenario_factory,
                                                 monkeypatch):
    seen = []
    rank = scenario_module.reference_importance

    def recording(frame, *args):
        seen.append(frame)
        return rank(frame, *args)

    monkeypatch.setattr(scenario_module, 'reference_importance', recording)
    scenario = scenario_factory({'preprocessing': {'keep_features': 2}})
    pool, test = scenario.federated_data()
    assert len(seen) == 1
    assert seen[0].n_rows == 480
    assert test.n_rows == 120
    held_out = set(test.timestamps)
    assert not held_out.intersection(seen[0].timestamps)
    assert test.sensor_names == pool.sensor_names
