"""Command-line front end.

    python run.py --config scenario.json detect
    python run.py --config scenario.json --seed 7 federate
    python run.py --config scenario.json --threads 4 sweep
    python run.py --out results compare sweep_a.csv sweep_b.csv

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error,
3 comparison not significant.
"""

import argparse
import sys

from . import compare, detect_anomalies, federate, load_scenario, sweep
from .my_logger import LOG_LEVELS, my_logger, set_level
from .scenario import ConfigException


EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_NOT_SIGNIFICANT = 3


class UsageException(ConfigException):
    pass


class _ArgumentParser(argparse.ArgumentParser):
    """Raises instead of exiting, so usage errors map to EXIT_CONFIG."""
    def error(self, message):
        raise UsageException(message)


def _seed(text):
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError('seed must be an unsigned 64-bit '
                                         'integer')
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError('must be >= 1')
    return value


def build_parser():
    parser = _ArgumentParser(prog='fcm', description='Federated condition '
                             'monitoring simulator.')
    parser.add_argument('--config', help='JSON scenario file')
    parser.add_argument('--out', help='output directory (overrides config)')
    parser.add_argument('--seed', type=_seed,
                        help='master seed (overrides config)')
    parser.add_argument('--threads', type=_positive,
                        help='worker threads (overrides config)')
    parser.add_argument('--log-level', choices=LOG_LEVELS, type=str.upper,
                        help='logging level for this run')
    commands = parser.add_subparsers(dest='command')
    commands.add_parser('detect', help='SOM detection and sensor ranking')
    commands.add_parser('federate', help='run one federated experiment')
    commands.add_parser('sweep', help='run the configured sweep')
    compare_parser = commands.add_parser(
        'compare', help='Mann-Whitney U test of two sweep tables')
    compare_parser.add_argument('report_a')
    compare_parser.add_argument('report_b')
    compare_parser.add_argument('--column', default='final_auc')
    return parser


def _scenario(args):
    if args.config is None:
        raise UsageException('--config is required for %s' % args.command)
    return load_scenario(args.config, args.seed, args.out, args.threads)


def cmd_detect(args):
    detect_anomalies(_scenario(args))
    return EXIT_OK


def cmd_federate(args):
    federate(_scenario(args))
    return EXIT_OK


def cmd_sweep(args):
    rows = sweep(_scenario(args))
    return EXIT_OK if all(r.status == 'ok' for r in rows) else EXIT_RUNTIME


def cmd_compare(args):
    result = compare(args.report_a, args.report_b, args.out, args.column)
    print('U = %s, p = %.6g' % (repr(result.u_statistic), result.p_value))
    return EXIT_OK if result.significant else EXIT_NOT_SIGNIFICANT


COMMANDS = {
    'detect': cmd_detect,
    'federate': cmd_federate,
    'sweep': cmd_sweep,
    'compare': cmd_compare,
}


def main(argv=None):
    """Parses the command line, runs the command and returns its exit code."""
    try:
        args = build_parser().parse_args(argv)
        if args.log_level is not None:
            set_level(args.log_level)
        if args.command is None:
            raise UsageException('a command is required: %s' %
                                 ', '.join(COMMANDS))
        return COMMANDS[args.command](args)
    except (ConfigException, FileNotFoundError) as e:
        my_logger.error(str(e))
        return EXIT_CONFIG
    except Exception as e:
        my_logger.error('%s: %s' % (type(e).__name__, e))
        return EXIT_RUNTIME


if __name__ == '__main__':
    sys.exit(main())
