"""Scenario configuration.

A scenario is a JSON file. Every setting has a default; keys that are not
known at their level are rejected so typos never silently fall back to
defaults. Values are validated when the scenario is built.
"""

import copy
import json
import os
from collections import namedtuple

import numpy as np
from cached_property import cached_property

from .checkpoint import CheckpointPolicy
from .client import as_dataset, split_train_validation
from .federation import DegradationSettings, FederationException, \
    FederationSettings
from .frame import FrameException, ingest_csv
from .misc import derive_seed
from .mlp import (DEFAULT_HIDDEN_LAYERS, MlpException, MlpModel, TrainConfig,
                  accuracy_on, layer_sizes, train_local)
from .my_logger import my_logger
from .preprocessing import (PreprocessConfig, permutation_importance,
                            preprocess_labeled, select_features)
from .som import SomConfig, SomException
from .synthetic import SyntheticSpec, generate_synthetic
from .weibull import FaultException, WeibullModel, fit_weibull


DETECTORS = ('som', 'mlp-federated', 'both')
DATA_SOURCES = ('synthetic', 'csv')
SWEEP_PARAMETERS = ('clients', 'dropout')
SWEEP_METHODS = ('adaptive', 'fedavg', 'adaptive-restart', 'fedavg-restart')

SweepSettings = namedtuple('SweepSettings', 'parameter values methods repeats')

DEFAULTS = {
    'seed': 0,
    'output_dir': 'output',
    'threads': 1,
    'data': {
        'source': 'synthetic',
        'csv_path': None,
        'has_header': True,
        'label_column': None,
        'baseline_fraction': 0.6,
        'synthetic': {
            'n_rows': 1000,
            'n_sensors': 6,
            'seed': None,
            'fault_onset_fraction': 0.6,
            'faulty_sensors': [2],
            'drift_magnitude': 8.0,
            'noise_sigma': 1.0,
        },
    },
    'preprocessing': {
        'normalize': True,
        'epsilon': 1e-10,
        'lowpass_window': None,
        'bandpass_windows': None,
        'drop_invalid_rows': False,
        'keep_features': None,
        'min_importance': None,
        'importance_repeats': 1,
    },
    'detector': {
        'mode': 'both',
    },
    'som': {
        'grid_rows': 50,
        'grid_cols': 50,
        'iterations': 50,
        'initial_learning_rate': 0.5,
        'initial_radius': None,
    },
    'federation': {
        'n_clients': 10,
        'n_rounds': 15,
        'local_epochs': 5,
        'aggregation': 'adaptive',
        'node_selection_k': None,
        'dropout_rate': 0.0,
        'prediction_window': 5,
        'partition': 'strided',
        'test_fraction': 0.2,
        'hidden_layers': list(DEFAULT_HIDDEN_LAYERS),
    },
    'training': {
        'learning_rate': 0.001,
        'adam_beta1': 0.9,
        'adam_beta2': 0.999,
        'adam_epsilon': 1e-8,
        'dropout_rate': 0.4,
        'batch_size': 512,
        'early_stop_patience': 5,
    },
    'checkpoint': {
        'enabled': True,
        'cost_mode': 'literal',
        'candidate_intervals': [5.0, 10.0, 20.0, 40.0, 100.0],
        'total_time': 100.0,
        'recovery_time': 10.0,
        'checkpoint_cost': 1.0,
        'weibull_lambda': 50.0,
        'weibull_k': 1.5,
        'failure_history': None,
        'refit_from_observed': False,
        'min_refit_failures': 5,
    },
    'degradation': {
        'client_ids': [],
        'label_noise': 0.3,
        'variance_multiplier': 4.0,
    },
    'sweep': {
        'parameter': 'dropout',
        'values': [0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
        'methods': ['adaptive', 'fedavg'],
        'repeats': 10,
    },
}


class ConfigException(Exception):
    pass


class ConfigParseException(ConfigException):
    def __init__(self, path, line, column, reason):
        self.line = line
        self.column = column
        ConfigException.__init__(self, '%s:%d:%d: %s' % (path, line, column,
                                                         reason))


class UnknownKeyException(ConfigException):
    def __init__(self, key):
        self.key = key
        ConfigException.__init__(self, 'unknown configuration key %r' % key)


class InvariantViolationException(ConfigException):
    pass


def _type_matches(default, value):
    """Checks a user value against the type of its default."""
    if default is None or value is None:
        return True
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, list):
        return isinstance(value, list)
    return isinstance(value, type(default))


def merge_with_defaults(user, defaults=DEFAULTS, prefix=''):
    """Returns the defaults overlaid with the user's values.

    Raises:
        UnknownKeyException: for keys absent from the defaults
        InvariantViolationException: for values of the wrong type
    """
    if not isinstance(user, dict):
        raise InvariantViolationException('%s must be an object' %
                                          (prefix.rstrip('.') or 'scenario'))
    merged = copy.deepcopy(defaults)
    for key, value in user.items():
        path = prefix + key
        if key not in defaults:
            raise UnknownKeyException(path)
        default = defaults[key]
        if isinstance(default, dict):
            merged[key] = merge_with_defaults(value, default, path + '.')
        elif not _type_matches(default, value):
            raise InvariantViolationException('%s has the wrong type: %r' %
                                              (path, value))
        else:
            merged[key] = value
    return merged


def parse_config(path):
    """Reads and validates a scenario file.

    Returns:
        ScenarioConfig: the validated scenario with defaults applied
    """
    if not os.path.isfile(path):
        raise FileNotFoundError('scenario file not found: %s' % path)
    with open(path) as f:
        text = f.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigParseException(path, e.lineno, e.colno, e.msg)
    my_logger.info('Read scenario %s' % path)
    return ScenarioConfig(raw, os.path.dirname(os.path.abspath(path)))


class ScenarioConfig:
    """Class definition for ScenarioConfig.

    Gives access to the settings of a scenario file as the configuration
    objects of the package. Relative file paths are resolved against the
    directory of the scenario file.
    """
    def __init__(self, raw=None, base_dir='.'):
        self._raw = copy.deepcopy(raw or {})
        self._base_dir = base_dir
        self._input = merge_with_defaults(self._raw)
        self._validate()

    def _validate(self):
        """Builds every setting once so invalid values fail early."""
        try:
            for name in ('seed', 'threads', 'detector', 'preprocess_config',
                         'baseline_fraction', 'synthetic_spec', 'csv_path',
                         'som_config', 'federation', 'training',
                         'checkpoint_policy', 'weibull_model', 'degradation',
                         'sweep'):
                getattr(self, name)
        except (FrameException, SomException, MlpException,
                FederationException, FaultException, TypeError,
                ValueError) as e:
            raise InvariantViolationException(str(e))
        for client_id in self.degradation.client_ids:
            if client_id >= self.federation.n_clients:
                raise InvariantViolationException(
                    'degradation.client_ids: client %d does not exist' %
                    client_id)

    def with_overrides(self, changes):
        """Returns a new scenario with dotted keys replaced.

        Args:
            changes (dict): e.g. {'seed': 3, 'federation.n_clients': 25}
        """
        raw = copy.deepcopy(self._raw)
        for dotted, value in changes.items():
            node = raw
            keys = dotted.split('.')
            for key in keys[:-1]:
                node = node.setdefault(key, {})
            node[keys[-1]] = value
        return ScenarioConfig(raw, self._base_dir)

    def _path(self, value):
        if value is None:
            return None
        return os.path.normpath(os.path.join(self._base_dir, value))

    @property
    def raw(self):
        """Returns the user-provided settings (without defaults)."""
        return copy.deepcopy(self._raw)

    @cached_property
    def seed(self):
        """Returns the master seed, an unsigned 64-bit integer."""
        value = self._input['seed']
        if not 0 <= value < 2 ** 64:
            raise InvariantViolationException('seed must be an unsigned '
                                              '64-bit integer')
        return value

    @cached_property
    def output_dir(self):
        return self._path(self._input['output_dir'])

    @cached_property
    def threads(self):
        value = self._input['threads']
        if value < 1:
            raise InvariantViolationException('threads must be >= 1')
        return value

    @cached_property
    def detector(self):
        """Returns the enabled detector: som, mlp-federated or both."""
        value = self._input['detector']['mode']
        if value not in DETECTORS:
            raise InvariantViolationException('detector.mode must be one of '
                                              '%s' % ', '.join(DETECTORS))
        return value

    @cached_property
    def data_source(self):
        value = self._input['data']['source']
        if value not in DATA_SOURCES:
            raise InvariantViolationException('data.source must be one of %s'
                                              % ', '.join(DATA_SOURCES))
        return value

    @cached_property
    def csv_path(self):
        """Returns the input CSV path; it must exist for csv sources."""
        path = self._path(self._input['data']['csv_path'])
        if self.data_source == 'csv':
            if path is None:
                raise InvariantViolationException('data.csv_path is required '
                                                  'for csv sources')
            if not os.path.isfile(path):
                raise InvariantViolationException('data.csv_path: file not '
                                                  'found: %s' % path)
        return path

    @cached_property
    def baseline_fraction(self):
        value = self._input['data']['baseline_fraction']
        if not 0.0 < value < 1.0:
            raise InvariantViolationException('data.baseline_fraction must be '
                                              'in (0, 1)')
        return value

    @cached_property
    def synthetic_spec(self):
        """Returns the SyntheticSpec; its seed defaults to one derived from
        the master seed."""
        spec = dict(self._input['data']['synthetic'])
        if spec['seed'] is None:
            spec['seed'] = derive_seed(self.seed, 'synthetic')
        spec['faulty_sensors'] = frozenset(spec['faulty_sensors'])
        return SyntheticSpec(**spec)

    @cached_property
    def preprocess_config(self):
        options = dict(self._input['preprocessing'])
        if options['bandpass_windows'] is not None:
            options['bandpass_windows'] = tuple(options['bandpass_windows'])
        return PreprocessConfig(**options)

    @cached_property
    def som_config(self):
        return SomConfig(seed=derive_seed(self.seed, 'som'),
                         **self._input['som'])

    @cached_property
    def federation(self):
        """Returns the FederationSettings of the scenario."""
        options = dict(self._input['federation'])
        checkpoint = self._input['checkpoint']
        return FederationSettings(
            recovery='checkpoint' if checkpoint['enabled'] else 'restart',
            refit_from_observed=checkpoint['refit_from_observed'],
            min_refit_failures=checkpoint['min_refit_failures'],
            threads=self.threads, seed=self.seed, **options)

    @cached_property
    def training(self):
        """Returns the local TrainConfig; epochs come from the federation
        settings."""
        return TrainConfig(max_epochs=self._input['federation']
                           ['local_epochs'], **self._input['training'])

    @cached_property
    def checkpoint_policy(self):
        options = self._input['checkpoint']
        return CheckpointPolicy(
            total_time=options['total_time'],
            recovery_time=options['recovery_time'],
            candidate_intervals=tuple(options['candidate_intervals']),
            cost_mode=options['cost_mode'],
            checkpoint_cost=options['checkpoint_cost'])

    @cached_property
    def failure_history(self):
        """Returns the path of the historical failure-time file, if any."""
        path = self._path(self._input['checkpoint']['failure_history'])
        if path is not None and not os.path.isfile(path):
            raise InvariantViolationException('checkpoint.failure_history: '
                                              'file not found: %s' % path)
        return path

    @cached_property
    def weibull_model(self):
        """Returns the failure model.

        Fitted by maximum likelihood to the failure history when one is
        given, otherwise built from the configured lambda and k.
        """
        if self.failure_history is not None:
            times = np.loadtxt(self.failure_history, delimiter=',', ndmin=1,
                               comments='#')
            return fit_weibull(times)
        options = self._input['checkpoint']
        return WeibullModel(options['weibull_lambda'], options['weibull_k'])

    @cached_property
    def degradation(self):
        return DegradationSettings(**self._input['degradation'])

    @cached_property
    def sweep(self):
        """Returns the SweepSettings of the scenario."""
        options = self._input['sweep']
        if options['parameter'] not in SWEEP_PARAMETERS:
            raise InvariantViolationException('sweep.parameter must be one of '
                                              '%s' % ', '.join(
                                                  SWEEP_PARAMETERS))
        unknown = [m for m in options['methods'] if m not in SWEEP_METHODS]
        if unknown or not options['methods']:
            raise InvariantViolationException('sweep.methods must be taken '
                                              'from %s' % ', '.join(
                                                  SWEEP_METHODS))
        if not options['values'] or options['repeats'] < 1:
            raise InvariantViolationException('sweep needs values and '
                                              'repeats >= 1')
        return SweepSettings(options['parameter'], list(options['values']),
                             list(options['methods']), options['repeats'])

    def load_frame(self):
        """Reads the CSV or generates the synthetic recording."""
        if self.data_source == 'csv':
            data = self._input['data']
            return ingest_csv(self.csv_path, data['has_header'],
                              data['label_column'],
                              self.preprocess_config.drop_invalid_rows)
        return generate_synthetic(self.synthetic_spec)

    def federated_data(self):
        """Returns the (client pool, test) frames of the federated classifier.

        The test rows are held out before normalization ranges are fitted.
        When feature selection is configured, sensors are ranked by
        permutation importance under a reference model trained centrally on
        the client pool, and the same sensors are kept in the test set.
        """
        options = self.preprocess_config
        pool, test, _ = preprocess_labeled(self.load_frame(), options,
                                           self.federation.test_fraction)
        if options.keep_features is None and options.min_importance is None:
            return pool, test
        importances = reference_importance(pool, self.training,
                                           self.federation.hidden_layers,
                                           derive_seed(self.seed,
                                                       'importance'),
                                           options.importance_repeats)
        pool = select_features(pool, importances, options.keep_features,
                               options.min_importance)
        kept = [test.sensor_names.index(n) for n in pool.sensor_names]
        return pool, test.select_sensors(kept)


def reference_importance(frame, train_config, hidden_layers, seed, repeats=1):
    """Permutation importance of each sensor under a centrally trained model.

    The model trains on four fifths of the rows and importances are scored
    on the remaining fifth.
    """
    train, validation = split_train_validation(frame)
    model = MlpModel.initialize(layer_sizes(frame.n_sensors, hidden_layers),
                                seed)
    result = train_local(model, as_dataset(train), as_dataset(validation),
                         train_config.with_seed(seed))

    def model_eval(f):
        return accuracy_on(result.model, as_dataset(f))

    importances = permutation_importance(validation, model_eval, seed,
                                         repeats)
    my_logger.info('Permutation importance: %s' % ', '.join(
        '%s=%.4f' % (n, v) for n, v in zip(frame.sensor_names, importances)))
    return importances
