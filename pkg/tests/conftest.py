import json

import numpy as np
import pytest

from fcm.frame import TimeSeriesFrame
from fcm.scenario import ScenarioConfig
from fcm.synthetic import SyntheticSpec, generate_synthetic


# Small, fast settings shared by the federated tests.
FAST_SCENARIO = {
    'data': {
        'synthetic': {'n_rows': 600, 'n_sensors': 4, 'faulty_sensors': [1]},
    },
    'som': {'grid_rows': 5, 'grid_cols': 5, 'iterations': 5},
    'federation': {'n_clients': 3, 'n_rounds': 2, 'local_epochs': 2,
                   'hidden_layers': [8, 4]},
    'training': {'learning_rate': 0.01, 'batch_size': 32,
                 'dropout_rate': 0.0},
}


def _merge(base, changes):
    merged = json.loads(json.dumps(base))
    for key, value in changes.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


@pytest.fixture
def scenario_factory(tmp_path):
    """Builds fast scenarios writing under tmp_path."""
    def factory(changes=None, name='run'):
        raw = _merge(FAST_SCENARIO, changes or {})
        raw.setdefault('output_dir', str(tmp_path / name))
        return ScenarioConfig(raw, str(tmp_path))
    return factory


@pytest.fixture
def write_scenario(tmp_path):
    """Writes a scenario dict to a JSON file and returns its path."""
    def writer(changes=None, name='scenario.json'):
        raw = _merge(FAST_SCENARIO, changes or {})
        path = tmp_path / name
        path.write_text(json.dumps(raw, indent=2))
        return str(path)
    return writer


@pytest.fixture
def synthetic_frame():
    return generate_synthetic(SyntheticSpec(n_rows=400, n_sensors=4, seed=3,
                                            faulty_sensors=frozenset([1])))


@pytest.fixture
def separable_frame():
    """Labeled frame whose label is the sign of sensor 0."""
    gen = np.random.default_rng(11)
    values = gen.normal(0.0, 1.0, (400, 3))
    labels = (values[:, 0] > 0).astype(int)
    return TimeSeriesFrame(np.arange(400), values, ['a', 'b', 'c'], labels)
