import csv
import json
import os
from collections import namedtuple

from tqdm import tqdm

from .federation import run_experiment
from .localization import localize
from .metrics import mann_whitney_u
from .misc import derive_seed, directory
from .my_logger import my_logger
from .preprocessing import preprocess
from .scenario import ConfigException, parse_config
from .som import compute_threshold, detect, trace_to_csv, train_som


DetectionResult = namedtuple('DetectionResult',
                             'grid threshold detection report evaluation')
FederationResult = namedtuple('FederationResult', 'reports summary plan')
SweepCell = namedtuple('SweepCell', 'method sweep_value repeat seed '
                       'final_accuracy final_auc status')

TRACE_FILE = 'detection_trace.csv'
RANKING_FILE = 'sensor_ranking.csv'
ROUNDS_FILE = 'rounds.jsonl'
SUMMARY_FILE = 'summary.json'
SUMMARY_TEXT_FILE = 'summary.txt'
FAULT_PLAN_FILE = 'fault_plan.csv'
SWEEP_FILE = 'sweep.csv'
COMPARE_FILE = 'comparison.json'
SWEEP_COLUMNS = list(SweepCell._fields)


class SchemaMismatchException(ConfigException):
    pass


def load_scenario(input_file, seed=None, output_dir=None, threads=None):
    """Reads the scenario file and applies command-line overrides.

    Args:
        input_file (string): path of the JSON scenario
        seed (int): master seed replacing the configured one
        output_dir (string): output directory replacing the configured one
        threads (int): worker threads replacing the configured number
    Returns:
        ScenarioConfig: the validated scenario
    """
    scenario = parse_config(input_file)
    changes = {}
    if seed is not None:
        changes['seed'] = seed
    if output_dir is not None:
        changes['output_dir'] = os.path.abspath(output_dir)
    if threads is not None:
        changes['threads'] = threads
    return scenario.with_overrides(changes) if changes else scenario


def detect_anomalies(scenario):
    """Runs preprocessing, SOM detection and sensor localization.

    Writes the quantization-error trace and the sensor ranking to the output
    directory. Nothing is written unless every stage succeeds.

    Args:
        scenario (ScenarioConfig): the scenario
    Returns:
        DetectionResult: the trained map, threshold, detection and ranking
    """
    if scenario.detector == 'mlp-federated':
        raise ConfigException('detector.mode is mlp-federated; SOM detection '
                              'is disabled')
    my_logger.info("Started: anomaly detection")
    frame = scenario.load_frame()
    baseline, evaluation, _ = preprocess(frame, scenario.preprocess_config,
                                         scenario.baseline_fraction)
    grid = train_som(baseline.values, scenario.som_config)
    threshold = compute_threshold(grid, baseline.values)
    detection = detect(grid, threshold, evaluation.values)
    report = localize(grid, baseline.values, evaluation.values,
                      evaluation.sensor_names)
    my_logger.info("%d of %d evaluation rows flagged" %
                   (int(detection.is_anomaly.sum()), evaluation.n_rows))

    output_dir = directory(scenario.output_dir)
    trace_to_csv(os.path.join(output_dir, TRACE_FILE), evaluation.timestamps,
                 detection)
    report.to_csv(os.path.join(output_dir, RANKING_FILE))
    my_logger.info("Finished: anomaly detection (top sensor: %s)" %
                   report.top_sensor)
    return DetectionResult(grid, threshold, detection, report, evaluation)


def federate(scenario):
    """Runs a federated experiment and writes its reports.

    Outputs: one JSON record per round, the JSON and plain-text summaries and
    the fault plan.
    """
    if scenario.detector == 'som':
        raise ConfigException('detector.mode is som; federated training is '
                              'disabled')
    my_logger.info("Started: federated experiment")
    reports, summary, plan = run_experiment(scenario)
    output_dir = directory(scenario.output_dir)
    with open(os.path.join(output_dir, ROUNDS_FILE), 'w') as f:
        for report in reports:
            f.write(report.to_json() + '\n')
    with open(os.path.join(output_dir, SUMMARY_FILE), 'w') as f:
        json.dump(summary.to_dict(), f, sort_keys=True, indent=2)
        f.write('\n')
    with open(os.path.join(output_dir, SUMMARY_TEXT_FILE), 'w') as f:
        f.write(summary.to_text())
    plan.to_csv(os.path.join(output_dir, FAULT_PLAN_FILE))
    my_logger.info("Finished: federated experiment (accuracy %.4f)" %
                   summary.final_accuracy)
    return FederationResult(reports, summary, plan)


def sweep_cell_changes(scenario, method, value, repeat, output_dir):
    """Returns the scenario overrides of one sweep cell.

    The cell seed never depends on the method, so every method of a repeat
    sees the same data and fault plan. In dropout sweeps it does not depend
    on the rate either: a repeat keeps its data, model initialization and
    failure times across rates, and a higher rate strikes a superset of the
    client-rounds a lower one strikes.
    """
    aggregation, _, restart = method.partition('-')
    if scenario.sweep.parameter == 'clients':
        seed = derive_seed(scenario.seed, value, repeat)
    else:
        seed = derive_seed(scenario.seed, 'dropout', repeat)
    changes = {
        'seed': seed,
        'output_dir': os.path.join(output_dir, 'cells', '%s_%s_%d' %
                                   (method, value, repeat)),
        'federation.aggregation': aggregation,
        'checkpoint.enabled': not restart,
    }
    if scenario.sweep.parameter == 'clients':
        changes['federation.n_clients'] = int(value)
    else:
        changes['federation.dropout_rate'] = float(value)
    return changes


def sweep(scenario):
    """Runs every (method, sweep value, repeat) cell of the scenario's sweep.

    Failed cells are logged and flagged in the table; the other cells are
    kept.

    Returns:
        [SweepCell]: one row per cell
    """
    settings = scenario.sweep
    output_dir = directory(os.path.abspath(scenario.output_dir))
    my_logger.info("Started: %s sweep over %s" % (settings.parameter,
                                                  settings.values))
    cells = [(method, value, repeat) for method in settings.methods
             for value in settings.values for repeat in range(settings.repeats)]
    rows = []
    for method, value, repeat in tqdm(cells, desc='sweep', disable=None):
        changes = sweep_cell_changes(scenario, method, value, repeat,
                                     output_dir)
        try:
            _, summary, _ = run_experiment(scenario.with_overrides(changes))
            rows.append(SweepCell(method, value, repeat, changes['seed'],
                                  summary.final_accuracy, summary.final_auc,
                                  'ok'))
        except Exception as e:
            my_logger.error("Sweep cell (%s, %s, %d) failed: %s" %
                            (method, value, repeat, e))
            rows.append(SweepCell(method, value, repeat, changes['seed'],
                                  None, None, 'failed'))

    with open(os.path.join(output_dir, SWEEP_FILE), 'w', newline='') as csvfile:
        csv_writer = csv.writer(csvfile)
        csv_writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            csv_writer.writerow(['' if v is None else v for v in row])
    my_logger.info("Finished: sweep (%d cells, %d failed)" %
                   (len(rows), sum(r.status != 'ok' for r in rows)))
    return rows


def read_metric_column(filename, column='final_auc'):
    """Reads the per-seed values of a metric from a sweep table.

    Rows of failed cells (empty values) are skipped.
    """
    if not os.path.isfile(filename):
        raise FileNotFoundError('report not found: %s' % filename)
    with open(filename, newline='') as csvfile:
        reader = csv.DictReader(csvfile)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise SchemaMismatchException('%s has no %r column' %
                                          (filename, column))
        values = []
        for line_number, row in enumerate(reader, start=2):
            if row[column] in ('', None):
                continue
            try:
                values.append(float(row[column]))
            except ValueError:
                raise SchemaMismatchException('%s:%d: %r is not a number' %
                                              (filename, line_number,
                                               row[column]))
    if not values:
        raise SchemaMismatchException('%s has no %s values' % (filename,
                                                               column))
    return values


def compare(report_a, report_b, output_dir=None, column='final_auc'):
    """Tests whether the per-seed metric of report_a exceeds report_b's.

    Returns:
        UTestResult: the one-sided Mann-Whitney U result
    """
    sample_a = read_metric_column(report_a, column)
    sample_b = read_metric_column(report_b, column)
    if min(len(sample_a), len(sample_b)) < 2:
        my_logger.warning("Comparing %d against %d values; the test has "
                          "almost no power" % (len(sample_a), len(sample_b)))
    result = mann_whitney_u(sample_a, sample_b, 'greater')
    my_logger.info("Mann-Whitney U = %.1f, p = %.3g (n = %d, %d)" %
                   (result.u_statistic, result.p_value, len(sample_a),
                    len(sample_b)))
    if output_dir is not None:
        with open(os.path.join(directory(output_dir), COMPARE_FILE), 'w') as f:
            json.dump({'u_statistic': result.u_statistic,
                       'p_value': result.p_value,
                       'alternative': result.alternative,
                       'n_a': len(sample_a), 'n_b': len(sample_b),
                       'column': column}, f, sort_keys=True, indent=2)
            f.write('\n')
    return result
